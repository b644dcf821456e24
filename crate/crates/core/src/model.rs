//! Core domain types shared by every pipeline stage.
//!
//! All values are immutable after construction. Timestamps are integer
//! microseconds relative to drive start; distances and velocities are `f64`
//! in SI units.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Tolerance on the sum of a softmax score vector.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

/// Microseconds since drive start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    /// Rounds to the nearest microsecond. Negative inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round().max(0.0) as u64)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} s", self.as_secs_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometrySample {
    pub t: Timestamp,
    /// Forward velocity in m/s.
    pub v: f64,
}

/// One ultrasonic raw-space report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: u64,
    pub t_det: Timestamp,
    /// Distance in meters from the vehicle position at `t_det` back to the
    /// end of the raw space.
    pub ps_xpos: f64,
    /// Raw-space length in meters.
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    pub t: Timestamp,
    /// Opaque locator: a file path or a synthetic tag.
    pub image_ref: String,
}

/// The four classifier output classes, in score-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Car,
    Construction,
    NonParking,
    Parking,
}

impl Class {
    pub const ALL: [Class; 4] = [Class::Car, Class::Construction, Class::NonParking, Class::Parking];

    pub fn index(self) -> usize {
        match self {
            Class::Car => 0,
            Class::Construction => 1,
            Class::NonParking => 2,
            Class::Parking => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Car => "car",
            Class::Construction => "construction",
            Class::NonParking => "non_parking",
            Class::Parking => "parking",
        }
    }

    pub fn parse(s: &str) -> Option<Class> {
        Class::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A normalized 4-class probability vector.
///
/// Fields are private so that every value in circulation satisfies the
/// softmax invariant: components in `[0, 1]` summing to one within
/// [`SCORE_SUM_TOLERANCE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScores", into = "RawScores")]
pub struct ClassScores {
    values: [f64; 4],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawScores {
    car: f64,
    construction: f64,
    non_parking: f64,
    parking: f64,
}

impl TryFrom<RawScores> for ClassScores {
    type Error = ModelError;

    fn try_from(r: RawScores) -> Result<Self, Self::Error> {
        ClassScores::new(r.car, r.construction, r.non_parking, r.parking)
    }
}

impl From<ClassScores> for RawScores {
    fn from(s: ClassScores) -> Self {
        RawScores {
            car: s.car(),
            construction: s.construction(),
            non_parking: s.non_parking(),
            parking: s.parking(),
        }
    }
}

impl ClassScores {
    pub fn new(car: f64, construction: f64, non_parking: f64, parking: f64) -> Result<Self, ModelError> {
        Self::from_array([car, construction, non_parking, parking])
    }

    pub fn from_array(values: [f64; 4]) -> Result<Self, ModelError> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(ModelError::ScoreOutOfRange(values));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
            return Err(ModelError::ScoreSum { sum });
        }
        Ok(ClassScores { values })
    }

    /// Normalizes non-negative weights into a probability vector.
    pub fn from_unnormalized(weights: [f64; 4]) -> Result<Self, ModelError> {
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelError::ScoreOutOfRange(weights));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ModelError::ScoreSum { sum: total });
        }
        Self::from_array(weights.map(|w| w / total))
    }

    /// All mass on one class.
    pub fn one_hot(class: Class) -> Self {
        let mut values = [0.0; 4];
        values[class.index()] = 1.0;
        ClassScores { values }
    }

    pub fn get(&self, class: Class) -> f64 {
        self.values[class.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.values
    }

    pub fn car(&self) -> f64 {
        self.values[0]
    }

    pub fn construction(&self) -> f64 {
        self.values[1]
    }

    pub fn non_parking(&self) -> f64 {
        self.values[2]
    }

    pub fn parking(&self) -> f64 {
        self.values[3]
    }

    /// Parking wins only with a strict majority over every other class;
    /// ties resolve to the non-parking side.
    pub fn is_parking_argmax(&self) -> bool {
        let p = self.parking();
        self.values[..3].iter().all(|&other| p > other)
    }

    /// Highest-scoring class. Ties prefer the earlier class in
    /// [`Class::ALL`] order, which is never `Parking`.
    pub fn argmax(&self) -> Class {
        let mut best = Class::Car;
        for c in Class::ALL {
            if self.get(c) > self.get(best) {
                best = c;
            }
        }
        best
    }
}

/// Reference label for a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLabel {
    Parking,
    NonParking,
    Cross,
}

impl TruthLabel {
    pub fn name(self) -> &'static str {
        match self {
            TruthLabel::Parking => "parking",
            TruthLabel::NonParking => "non_parking",
            TruthLabel::Cross => "cross",
        }
    }

    pub fn parse(s: &str) -> Option<TruthLabel> {
        match s {
            "parking" => Some(TruthLabel::Parking),
            "non_parking" => Some(TruthLabel::NonParking),
            "cross" => Some(TruthLabel::Cross),
            _ => None,
        }
    }
}

impl fmt::Display for TruthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Final decision-maker label: 0, 0.4, 0.6, 1 or 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    NonParking,
    NonParkingLowConfidence,
    ParkingLowConfidence,
    Parking,
    Cross,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::NonParking => 0.0,
            Label::NonParkingLowConfidence => 0.4,
            Label::ParkingLowConfidence => 0.6,
            Label::Parking => 1.0,
            Label::Cross => 5.0,
        }
    }

    pub fn from_value(v: f64) -> Option<Label> {
        [
            Label::NonParking,
            Label::NonParkingLowConfidence,
            Label::ParkingLowConfidence,
            Label::Parking,
            Label::Cross,
        ]
        .into_iter()
        .find(|l| l.value() == v)
    }

    pub fn is_low_confidence(self) -> bool {
        matches!(self, Label::NonParkingLowConfidence | Label::ParkingLowConfidence)
    }

    /// `None` for cross parking.
    pub fn is_parking(self) -> Option<bool> {
        match self {
            Label::Parking | Label::ParkingLowConfidence => Some(true),
            Label::NonParking | Label::NonParkingLowConfidence => Some(false),
            Label::Cross => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Label::from_value(v).ok_or_else(|| serde::de::Error::custom(format!("invalid label value {v}")))
    }
}

/// One frame's classification inside a detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionImageRecord {
    /// Position within the detection, contiguous from 0.
    pub image_count: usize,
    pub scores: ClassScores,
    /// Global frame number.
    pub frame_id: u64,
    /// Meters of street this frame is valid for.
    pub length_weight: f64,
}

/// Rules of the decision maker, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    CrossCheck,
    WeightedAverage,
    RescueEc1,
    GateEc3,
    LcFlag,
}

/// One evaluated rule. `value` carries the quantity the rule compared:
/// raw-space length for the cross check, merged winning score for the
/// average, run length for the rescue, parking-score × length for the gate,
/// and confidence for the low-confidence flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub rule: RuleId,
    pub fired: bool,
    pub value: f64,
}

/// A maximal bridged run of parking-argmax frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunEvidence {
    /// First frame of the run (image_count).
    pub start: usize,
    /// Last frame of the run, inclusive.
    pub end: usize,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub label: Label,
    pub confidence: f64,
    /// Normalized weighted average per class. Absent for cross parking,
    /// which stops before fusion.
    pub merged_scores: Option<ClassScores>,
    pub rule_trace: Vec<TraceEntry>,
    /// Longest bridged parking run, when the rescue rule was evaluated.
    pub rescue: Option<RunEvidence>,
}

impl DecisionOutcome {
    pub fn has_fired(&self, rule: RuleId) -> bool {
        self.rule_trace.iter().any(|e| e.rule == rule && e.fired)
    }

    pub fn trace_entry(&self, rule: RuleId) -> Option<&TraceEntry> {
        self.rule_trace.iter().find(|e| e.rule == rule)
    }

    pub fn flagged(&self) -> bool {
        self.label.is_low_confidence()
    }
}

/// Normalized measurement set for one drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveBundle {
    pub drive_id: String,
    pub duration: Timestamp,
    pub odometry: Vec<OdometrySample>,
    pub detections: Vec<Detection>,
    pub frames: Vec<Frame>,
    pub recorded_scores: Option<BTreeMap<u64, ClassScores>>,
    pub ground_truth: Option<BTreeMap<u64, TruthLabel>>,
}

impl DriveBundle {
    pub fn duration_secs(&self) -> f64 {
        self.duration.as_secs_f64()
    }

    pub fn detection(&self, id: u64) -> Option<&Detection> {
        self.detections.iter().find(|d| d.id == id)
    }
}

/// Lists every invariant violation in `bundle`. Empty means valid.
pub fn validate_bundle(bundle: &DriveBundle) -> Vec<String> {
    let mut out = Vec::new();
    let duration = bundle.duration;

    if bundle.drive_id.is_empty() {
        out.push("drive_id must not be empty".to_string());
    }

    match (bundle.odometry.first(), bundle.odometry.last()) {
        (Some(first), Some(last)) => {
            if first.t != Timestamp::ZERO {
                out.push(format!("odometry must start at t=0 (first sample at {})", first.t));
            }
            if last.t != duration {
                out.push(format!(
                    "odometry must end at drive duration {} (last sample at {})",
                    duration, last.t
                ));
            }
        }
        _ => out.push("odometry must cover the drive (no samples)".to_string()),
    }
    for (i, pair) in bundle.odometry.windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            out.push(format!("odometry sample {}: timestamp not strictly increasing", i + 1));
        }
    }
    for (i, s) in bundle.odometry.iter().enumerate() {
        if !s.v.is_finite() || s.v < 0.0 {
            out.push(format!("odometry sample {i}: velocity must be finite and >= 0 (got {})", s.v));
        }
    }

    let mut ids = BTreeSet::new();
    for d in &bundle.detections {
        if !ids.insert(d.id) {
            out.push(format!("detection {}: duplicate id", d.id));
        }
        if !(d.length > 0.0) || !d.length.is_finite() {
            out.push(format!("detection {}: length must be > 0", d.id));
        }
        if !(d.ps_xpos >= 0.0) || !d.ps_xpos.is_finite() {
            out.push(format!("detection {}: ps_xpos must be >= 0", d.id));
        }
        if d.t_det > duration {
            out.push(format!("detection {}: t_det {} outside drive duration {}", d.id, d.t_det, duration));
        }
    }

    let mut frame_ids = BTreeSet::new();
    for f in &bundle.frames {
        if !frame_ids.insert(f.frame_id) {
            out.push(format!("frame {}: duplicate frame_id", f.frame_id));
        }
        if f.image_ref.is_empty() {
            out.push(format!("frame {}: image_ref must not be empty", f.frame_id));
        }
    }
    for pair in bundle.frames.windows(2) {
        if pair[1].frame_id <= pair[0].frame_id || pair[1].t <= pair[0].t {
            out.push(format!(
                "frame {}: frame_id and timestamp must increase strictly in capture order",
                pair[1].frame_id
            ));
        }
    }

    if let Some(scores) = &bundle.recorded_scores {
        for id in scores.keys() {
            if !frame_ids.contains(id) {
                out.push(format!("scores: frame {id} not present in frames"));
            }
        }
    }
    if let Some(truth) = &bundle.ground_truth {
        for id in truth.keys() {
            if !ids.contains(id) {
                out.push(format!("truth: detection {id} not present in detections"));
            }
        }
    }
    out
}
