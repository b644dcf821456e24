//! Synthetic, fully ground-truthed drives.
//!
//! A [`StreetLayout`] tiles a street with parking, non-parking and
//! cross-slot segments and places raw spaces over it. [`generate`] drives a
//! vehicle past the layout at a given speed profile, captures one frame and
//! one odometry sample per frame period, reports every raw space at a
//! random distance after its end, and labels it with [`oracle_label`], which
//! works on the layout geometry alone.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{synthetic_image_ref, SyntheticNoiseModel};
use crate::decision::DecisionConfig;
use crate::error::{Error, ScenarioError};
use crate::model::{
    Class, DecisionOutcome, Detection, DetectionImageRecord, DriveBundle, Frame, Label, OdometrySample, RuleId, Timestamp,
    TruthLabel,
};
use crate::par::{self, Execution};
use crate::pipeline::{analyze_with_provider, synthetic_frame_truth, PipelineConfig};

/// Distance driven past the end of the street.
const RUN_OUT_M: f64 = 5.0;
/// Range of the distance between a raw space's end and the vehicle when it
/// is reported.
const PS_XPOS_RANGE: (f64, f64) = (0.5, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentClass {
    Parking,
    NonParking,
    /// A perpendicular parking bay. The camera sees parked cars there.
    #[serde(alias = "cross-slot")]
    CrossSlot,
}

impl SegmentClass {
    /// What the camera shows over a segment of this class.
    pub fn frame_class(self) -> Class {
        match self {
            SegmentClass::Parking => Class::Parking,
            SegmentClass::NonParking => Class::NonParking,
            SegmentClass::CrossSlot => Class::Car,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length_m: f64,
    pub class: SegmentClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSpace {
    pub start_m: f64,
    pub length_m: f64,
}

impl RawSpace {
    pub fn end_m(&self) -> f64 {
        self.start_m + self.length_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetLayout {
    pub segments: Vec<Segment>,
    pub detections: Vec<RawSpace>,
}

impl StreetLayout {
    pub fn street_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length_m).sum()
    }

    /// `(start, end, class)` of every segment, in street order.
    pub fn extents(&self) -> Vec<(f64, f64, SegmentClass)> {
        let mut at = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let e = (at, at + s.length_m, s.class);
                at += s.length_m;
                e
            })
            .collect()
    }

    /// Segment class at street position `s`; past either end the street is
    /// non-parking.
    pub fn class_at(&self, s: f64) -> SegmentClass {
        let mut at = 0.0;
        for seg in &self.segments {
            if s >= at && s < at + seg.length_m {
                return seg.class;
            }
            at += seg.length_m;
        }
        SegmentClass::NonParking
    }

    /// Maximal contiguous parking spans clipped to `[start, end]`.
    pub fn parking_spans(&self, start: f64, end: f64) -> Vec<(f64, f64)> {
        let mut spans: Vec<(f64, f64)> = Vec::new();
        for (a, b, class) in self.extents() {
            if class != SegmentClass::Parking {
                continue;
            }
            let (lo, hi) = (a.max(start), b.min(end));
            if hi <= lo {
                continue;
            }
            match spans.last_mut() {
                Some(last) if last.1 >= lo => last.1 = hi,
                _ => spans.push((lo, hi)),
            }
        }
        spans
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidLayout(m));
        if self.segments.is_empty() {
            return bad("no segments".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.length_m.is_finite() && s.length_m > 0.0) {
                return bad(format!("segment {i}: length must be > 0"));
            }
        }
        let street = self.street_length();
        for (i, d) in self.detections.iter().enumerate() {
            if !(d.length_m.is_finite() && d.length_m > 0.0) {
                return bad(format!("detection {i}: length must be > 0"));
            }
            if !(d.start_m >= 0.0 && d.end_m() <= street + 1e-9) {
                return bad(format!("detection {i}: [{}, {}] m outside street [0, {street}] m", d.start_m, d.end_m()));
            }
        }
        Ok(())
    }
}

/// The geometric truth of a raw space.
///
/// Cross when its length lies in the cross range; parking when a contiguous
/// parking span inside it is longer than the minimal parking length;
/// non-parking otherwise.
pub fn oracle_label(layout: &StreetLayout, raw: &RawSpace, cfg: &DecisionConfig) -> TruthLabel {
    if cfg.cross_min <= raw.length_m && raw.length_m < cfg.cross_max {
        return TruthLabel::Cross;
    }
    let longest = layout
        .parking_spans(raw.start_m, raw.end_m())
        .iter()
        .map(|(a, b)| b - a)
        .fold(0.0, f64::max);
    if longest > cfg.min_parking_length {
        TruthLabel::Parking
    } else {
        TruthLabel::NonParking
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stall {
    /// Street position where the vehicle stops.
    pub at_m: f64,
    pub duration_s: f64,
}

/// Cruise speed with optional standstills.
///
/// The vehicle stops exactly at each stall position: it decelerates
/// linearly over the last frame period before the stop and accelerates
/// back to cruise over the first one after.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedProfile {
    pub cruise_mps: f64,
    #[serde(default)]
    pub stalls: Vec<Stall>,
}

impl SpeedProfile {
    pub fn constant(cruise_mps: f64) -> Self {
        SpeedProfile { cruise_mps, stalls: Vec::new() }
    }
}

impl<'de> Deserialize<'de> for SpeedProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Cruise(f64),
            Full {
                cruise_mps: f64,
                #[serde(default)]
                stalls: Vec<Stall>,
            },
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Cruise(v) => SpeedProfile::constant(v),
            Raw::Full { cruise_mps, stalls } => SpeedProfile { cruise_mps, stalls },
        })
    }
}

/// A layout together with how it is driven: the layout spec file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive_id: Option<String>,
    pub segments: Vec<Segment>,
    pub detections: Vec<RawSpace>,
    pub speed: SpeedProfile,
    pub frame_period_ms: f64,
    #[serde(default)]
    pub seed: u64,
}

impl LayoutSpec {
    pub fn layout(&self) -> StreetLayout {
        StreetLayout { segments: self.segments.clone(), detections: self.detections.clone() }
    }

    pub fn drive_id(&self) -> String {
        self.drive_id.clone().unwrap_or_else(|| format!("synth-{}", self.seed))
    }
}

/// A generated drive and the geometry behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDrive {
    pub bundle: DriveBundle,
    pub layout: StreetLayout,
    /// Vehicle position of every frame, indexed by frame id.
    pub frame_positions: Vec<f64>,
}

impl GeneratedDrive {
    /// Raw space behind a detection id (ids count from 1 in layout order).
    pub fn raw_space(&self, id: u64) -> Option<&RawSpace> {
        self.layout.detections.get((id as usize).checked_sub(1)?)
    }
}

pub fn generate_spec(spec: &LayoutSpec, cfg: &DecisionConfig) -> Result<GeneratedDrive, ScenarioError> {
    let mut drive = generate(&spec.layout(), &spec.speed, spec.frame_period_ms / 1000.0, spec.seed, cfg)?;
    drive.bundle.drive_id = spec.drive_id();
    Ok(drive)
}

/// Drives past `layout` and records the result as a bundle with truth.
///
/// Odometry and frames share the frame-period grid, and positions are
/// accumulated with the same trapezoidal rule the kinematics module uses,
/// so re-integrating the odometry reproduces the frame positions exactly.
pub fn generate(
    layout: &StreetLayout,
    speed: &SpeedProfile,
    frame_period_s: f64,
    seed: u64,
    cfg: &DecisionConfig,
) -> Result<GeneratedDrive, ScenarioError> {
    layout.validate()?;
    if !(frame_period_s.is_finite() && frame_period_s > 0.0) {
        return Err(ScenarioError::InvalidFramePeriod);
    }
    let period_us = (frame_period_s * 1e6).round() as u64;
    if period_us == 0 {
        return Err(ScenarioError::InvalidFramePeriod);
    }
    let cruise = speed.cruise_mps;
    if !(cruise.is_finite() && cruise > 0.0) {
        return Err(ScenarioError::InvalidSpeed(format!("cruise speed {cruise} must be > 0")));
    }
    let dt = period_us as f64 / 1e6;
    let step = cruise * dt;
    let s_final = layout.street_length() + RUN_OUT_M;

    let mut stalls = speed.stalls.clone();
    stalls.sort_by(|a, b| a.at_m.total_cmp(&b.at_m));
    let mut last_at = 0.0;
    for st in &stalls {
        if !(st.duration_s.is_finite() && st.duration_s >= 0.0) {
            return Err(ScenarioError::InvalidSpeed(format!("stall duration {} must be >= 0", st.duration_s)));
        }
        if !(st.at_m - last_at >= 2.0 * step) || st.at_m >= s_final {
            return Err(ScenarioError::InvalidSpeed(format!(
                "stall at {} m needs {} m of run-up and must lie before {s_final} m",
                st.at_m,
                2.0 * step
            )));
        }
        last_at = st.at_m;
    }

    let mut v = vec![cruise];
    let mut s = vec![0.0];
    let mut next_stall = 0;
    let mut hold = 0u64;
    while *s.last().unwrap() < s_final {
        let v_prev = *v.last().unwrap();
        let s_prev = *s.last().unwrap();
        let v_k = if hold > 0 {
            hold -= 1;
            0.0
        } else if let Some(st) = stalls.get(next_stall) {
            let d = st.at_m - s_prev;
            if d <= v_prev * dt / 2.0 + step {
                next_stall += 1;
                hold = (st.duration_s / dt - 1e-9).ceil().max(0.0) as u64 + 1;
                ((d - v_prev * dt / 2.0) / dt).clamp(0.0, cruise)
            } else {
                cruise
            }
        } else {
            cruise
        };
        v.push(v_k);
        s.push(s_prev + 0.5 * (v_prev + v_k) * dt);
    }

    let n = s.len() as u64;
    let t = |k: u64| Timestamp(k * period_us);
    let odometry: Vec<OdometrySample> = v.iter().enumerate().map(|(k, &v)| OdometrySample { t: t(k as u64), v }).collect();
    let frames: Vec<Frame> = (0..n)
        .map(|k| Frame { frame_id: k, t: t(k), image_ref: synthetic_image_ref(layout.class_at(s[k as usize]).frame_class(), k) })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    let mut detections = Vec::with_capacity(layout.detections.len());
    let mut truth = BTreeMap::new();
    for (i, raw) in layout.detections.iter().enumerate() {
        let id = i as u64 + 1;
        let target = raw.end_m() + rng.gen_range(PS_XPOS_RANGE.0..PS_XPOS_RANGE.1);
        let mut k = s.partition_point(|&x| x < target).min(s.len() - 1);
        while used.contains(&k) && k + 1 < s.len() {
            k += 1;
        }
        used.insert(k);
        detections.push(Detection { id, t_det: t(k as u64), ps_xpos: s[k] - raw.end_m(), length: raw.length_m });
        truth.insert(id, oracle_label(layout, raw, cfg));
    }
    detections.sort_by_key(|d| d.t_det);

    let bundle = DriveBundle {
        drive_id: format!("synth-{seed}"),
        duration: t(n - 1),
        odometry,
        detections,
        frames,
        recorded_scores: None,
        ground_truth: Some(truth),
    };
    Ok(GeneratedDrive { bundle, layout: layout.clone(), frame_positions: s })
}

/// Distribution of [`random_layout`].
///
/// Streets alternate parking segments with gaps. A gap is a non-parking
/// segment or a cross-slot bay framed by two short non-parking segments;
/// either way it is at least `min_gap_m` long, which at the fastest cruise
/// speed still spans more frames than the rescue bridge tolerates. Raw
/// spaces are either anchored on a segment, extending up to
/// `anchor_slack_m` into its neighbours, or placed freely with a length up
/// to `free_length_m.1`. No raw space is shorter than `free_length_m.0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomLayoutParams {
    pub parking_gaps: (usize, usize),
    pub parking_length_m: (f64, f64),
    pub min_gap_m: f64,
    pub max_gap_m: f64,
    pub cross_slot_prob: f64,
    pub detections: (usize, usize),
    pub anchored_prob: f64,
    pub anchor_slack_m: f64,
    pub free_length_m: (f64, f64),
    pub cruise_mps: (f64, f64),
    pub frame_period_ms: f64,
}

impl Default for RandomLayoutParams {
    fn default() -> Self {
        RandomLayoutParams {
            parking_gaps: (3, 7),
            parking_length_m: (5.0, 25.0),
            min_gap_m: 4.5,
            max_gap_m: 15.0,
            cross_slot_prob: 0.2,
            detections: (3, 6),
            anchored_prob: 0.8,
            anchor_slack_m: 1.5,
            free_length_m: (2.1, 8.0),
            cruise_mps: (5.0, 15.0),
            frame_period_ms: 100.0,
        }
    }
}

pub fn random_layout(seed: u64, p: &RandomLayoutParams) -> LayoutSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1A70_u64);
    let mut segments = Vec::new();
    let gap = |rng: &mut ChaCha8Rng, segments: &mut Vec<Segment>| {
        if rng.gen::<f64>() < p.cross_slot_prob {
            let cross = rng.gen_range(2.1..3.5);
            let side = ((p.min_gap_m - cross) / 2.0).max(0.5);
            for class in [SegmentClass::NonParking, SegmentClass::CrossSlot, SegmentClass::NonParking] {
                let length_m = if class == SegmentClass::CrossSlot { cross } else { rng.gen_range(side..side + 2.0) };
                segments.push(Segment { length_m, class });
            }
        } else {
            segments.push(Segment { length_m: rng.gen_range(p.min_gap_m..p.max_gap_m), class: SegmentClass::NonParking });
        }
    };
    let pairs = rng.gen_range(p.parking_gaps.0..=p.parking_gaps.1);
    gap(&mut rng, &mut segments);
    for _ in 0..pairs {
        let length_m = rng.gen_range(p.parking_length_m.0..p.parking_length_m.1);
        segments.push(Segment { length_m, class: SegmentClass::Parking });
        gap(&mut rng, &mut segments);
    }
    let street = segments.iter().map(|s| s.length_m).sum::<f64>();

    let layout = StreetLayout { segments: segments.clone(), detections: Vec::new() };
    let extents = layout.extents();
    let n_det = rng.gen_range(p.detections.0..=p.detections.1);
    let mut detections = Vec::with_capacity(n_det);
    for _ in 0..n_det {
        let (start, end) = if rng.gen::<f64>() < p.anchored_prob {
            let (a, b, _) = extents[rng.gen_range(0..extents.len())];
            (a - rng.gen_range(0.0..p.anchor_slack_m), b + rng.gen_range(0.0..p.anchor_slack_m))
        } else {
            let len = rng.gen_range(p.free_length_m.0..p.free_length_m.1);
            let start = rng.gen_range(0.0..(street - len).max(0.0));
            (start, start + len)
        };
        let (start, end) = (start.max(0.0), end.min(street));
        let short = (p.free_length_m.0 - (end - start)).max(0.0);
        let (start, end) = if end + short <= street { (start, end + short) } else { (start - short, end) };
        detections.push(RawSpace { start_m: start, length_m: end - start });
    }
    LayoutSpec {
        drive_id: Some(format!("layout-{seed}")),
        segments,
        detections,
        speed: SpeedProfile::constant(rng.gen_range(p.cruise_mps.0..p.cruise_mps.1)),
        frame_period_ms: p.frame_period_ms,
        seed,
    }
}

/// Traffic-light scenario: a long non-parking raw space with a small
/// parking patch where the vehicle waits at a red light.
///
/// Returns the layout spec; the stall sits at the patch so that every
/// stalled frame shows parking.
pub fn traffic_light_spec(stall_s: f64, frame_period_ms: f64) -> LayoutSpec {
    let patch = 0.3;
    LayoutSpec {
        drive_id: Some("traffic-light".into()),
        segments: vec![
            Segment { length_m: 20.0, class: SegmentClass::NonParking },
            Segment { length_m: 6.0, class: SegmentClass::NonParking },
            Segment { length_m: patch, class: SegmentClass::Parking },
            Segment { length_m: 6.0 - patch, class: SegmentClass::NonParking },
            Segment { length_m: 20.0, class: SegmentClass::NonParking },
        ],
        detections: vec![RawSpace { start_m: 20.0, length_m: 12.0 }],
        speed: SpeedProfile { cruise_mps: 8.0, stalls: vec![Stall { at_m: 26.0 + patch / 2.0, duration_s: stall_s }] },
        frame_period_ms,
        seed: 4,
    }
}

/// Documented reason for a decision to differ from the geometric truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// The rescue run measured within one frame length (the longest length
    /// weight in the window) of the minimal parking length.
    RunLength,
    /// The length gate judged a short space: its parking-length estimate
    /// `merged_parking * length` is below two minimal parking spots. The
    /// estimate comes from the edge-weighted average, not from contiguity.
    ShortSpaceGate,
}

/// Attributes a disagreement to a boundary from the outcome's trace.
pub fn attribute_disagreement(
    outcome: &DecisionOutcome,
    records: &[DetectionImageRecord],
    cfg: &DecisionConfig,
) -> Option<Boundary> {
    let frame_len = records.iter().map(|r| r.length_weight).fold(0.0, f64::max);
    if let Some(e) = outcome.trace_entry(RuleId::RescueEc1) {
        if (e.value - cfg.min_parking_length).abs() <= frame_len {
            return Some(Boundary::RunLength);
        }
    }
    if let Some(e) = outcome.trace_entry(RuleId::GateEc3) {
        if e.value <= 2.0 * cfg.min_parking_length {
            return Some(Boundary::ShortSpaceGate);
        }
    }
    None
}

/// Whether a decided label matches a truth label.
pub fn label_matches(label: Label, truth: TruthLabel) -> bool {
    match (label.is_parking(), truth) {
        (None, TruthLabel::Cross) => true,
        (Some(p), TruthLabel::Parking) => p,
        (Some(p), TruthLabel::NonParking) => !p,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub seed: u64,
    pub detection_id: u64,
    pub truth: TruthLabel,
    pub outcome: DecisionOutcome,
    pub boundary: Option<Boundary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub layouts: usize,
    pub detections: usize,
    pub agreed: usize,
    /// Detections whose window held no frame.
    pub skipped: usize,
    pub disagreements: Vec<Disagreement>,
}

impl AgreementReport {
    pub fn rate(&self) -> f64 {
        if self.detections == 0 {
            return 1.0;
        }
        self.agreed as f64 / self.detections as f64
    }

    pub fn unattributed(&self) -> usize {
        self.disagreements.iter().filter(|d| d.boundary.is_none()).count()
    }
}

/// Runs random layouts through the full pipeline with noiseless synthetic
/// scores and compares every decision with the oracle.
pub fn oracle_agreement(
    exec: Execution,
    seeds: std::ops::Range<u64>,
    params: &RandomLayoutParams,
    cfg: &PipelineConfig,
) -> Result<AgreementReport, Error> {
    let per_layout = par::map_range(exec, (seeds.end - seeds.start) as usize, |i| {
        let seed = seeds.start + i as u64;
        let drive = generate_spec(&random_layout(seed, params), &cfg.decision)?;
        let provider = SyntheticNoiseModel::noiseless(seed);
        let analysis = analyze_with_provider(
            Execution::Sequential,
            &drive.bundle,
            &provider,
            Some(&synthetic_frame_truth(&drive.bundle)),
            cfg,
        )?;
        Ok::<_, Error>((seed, drive, analysis))
    });
    let mut report = AgreementReport::default();
    for item in per_layout {
        let (seed, drive, analysis) = item?;
        let truth = drive.bundle.ground_truth.as_ref().expect("generated drives carry truth");
        report.layouts += 1;
        report.detections += analysis.results.len();
        report.skipped += analysis.skipped.len();
        for r in analysis.results {
            let t = truth[&r.detection.id];
            if label_matches(r.outcome.label, t) {
                report.agreed += 1;
                continue;
            }
            let boundary = attribute_disagreement(&r.outcome, &r.records, &cfg.decision);
            report.disagreements.push(Disagreement {
                seed,
                detection_id: r.detection.id,
                truth: t,
                outcome: r.outcome,
                boundary,
            });
        }
    }
    Ok(report)
}
