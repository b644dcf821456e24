#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write;

use gta_core::metrics::{ConfusionTable, SweepSample};
use gta_core::model::{
    Class, ClassScores, Detection, DetectionImageRecord, DriveBundle, Frame, OdometrySample, Timestamp, TruthLabel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inverse of `parse_trace`: one line per sample, ordered by time, with
/// timestamps offset by `base_us`.
pub fn render_trace(b: &DriveBundle, base_us: u64) -> String {
    let mut lines: Vec<(u64, u8, String)> = Vec::new();
    for o in &b.odometry {
        lines.push((o.t.0, 0, format!("{} ODO {}", o.t.0 + base_us, o.v)));
    }
    for d in &b.detections {
        lines.push((d.t_det.0, 1, format!("{} USS {} {} {}", d.t_det.0 + base_us, d.id, d.ps_xpos, d.length)));
    }
    for f in &b.frames {
        lines.push((f.t.0, 2, format!("{} NRC {} {}", f.t.0 + base_us, f.frame_id, f.image_ref)));
    }
    lines.sort_by_key(|l| (l.0, l.1));
    let mut out = format!("# drive {}\n", b.drive_id);
    for (_, _, l) in lines {
        let _ = writeln!(out, "{l}");
    }
    out
}

/// A valid bundle with arbitrary float values, scores and truth.
pub fn random_bundle(seed: u64) -> DriveBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_odo = rng.gen_range(2..60);
    let mut t = 0u64;
    let mut odometry = Vec::with_capacity(n_odo);
    for i in 0..n_odo {
        if i > 0 {
            t += rng.gen_range(1..200_000);
        }
        let v = if rng.gen_bool(0.1) { 0.0 } else { rng.gen::<f64>() * 20.0 };
        odometry.push(OdometrySample { t: Timestamp(t), v });
    }
    let duration = Timestamp(t);

    let mut frames = Vec::new();
    let mut ft = rng.gen_range(0..50_000u64);
    let mut fid = rng.gen_range(0..10u64);
    while ft <= duration.0 {
        let image_ref = if rng.gen_bool(0.5) {
            format!("synth:{}:{fid}", Class::ALL[rng.gen_range(0..4)].name())
        } else {
            format!("video/{seed}/frame_{fid:05}.jpg")
        };
        frames.push(Frame { frame_id: fid, t: Timestamp(ft), image_ref });
        fid += rng.gen_range(1..3);
        ft += rng.gen_range(20_000..150_000);
    }

    let n_det = rng.gen_range(0..8);
    let mut det_times: Vec<u64> = (0..n_det).map(|_| rng.gen_range(0..=duration.0)).collect();
    det_times.sort_unstable();
    det_times.dedup();
    let detections: Vec<Detection> = det_times
        .into_iter()
        .enumerate()
        .map(|(i, t)| Detection {
            id: i as u64 * 3 + 1,
            t_det: Timestamp(t),
            ps_xpos: rng.gen::<f64>() * 4.0,
            length: 0.5 + rng.gen::<f64>() * 15.0,
        })
        .collect();

    let recorded_scores = rng.gen_bool(0.7).then(|| {
        let mut scores = BTreeMap::new();
        for f in &frames {
            if rng.gen_bool(0.9) {
                let w = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>() + 1e-3];
                scores.insert(f.frame_id, ClassScores::from_unnormalized(w).unwrap());
            }
        }
        scores
    });
    let ground_truth = rng.gen_bool(0.7).then(|| {
        detections
            .iter()
            .map(|d| {
                let l = [TruthLabel::Parking, TruthLabel::NonParking, TruthLabel::Cross][rng.gen_range(0..3)];
                (d.id, l)
            })
            .collect::<BTreeMap<_, _>>()
    });

    DriveBundle {
        drive_id: format!("drive-{seed}"),
        duration,
        odometry,
        detections,
        frames,
        recorded_scores,
        ground_truth,
    }
}

/// Trace parsing cannot carry scores or truth.
pub fn without_annotations(b: &DriveBundle) -> DriveBundle {
    DriveBundle { recorded_scores: None, ground_truth: None, ..b.clone() }
}

/// Per-drive confusion counts of the six reference test drives.
pub const CAMPAIGN_TABLES: [(u64, u64, u64, u64, u64, u64); 6] = [
    (8, 5, 43, 2, 3, 16),
    (7, 4, 33, 2, 0, 7),
    (16, 5, 15, 0, 0, 10),
    (0, 5, 7, 0, 0, 7),
    (7, 2, 35, 0, 0, 8),
    (2, 3, 38, 1, 1, 12),
];

pub fn campaign_table(i: usize) -> ConfusionTable {
    let (tp, fp, tn, fn_, tp_lc, tn_lc) = CAMPAIGN_TABLES[i];
    ConfusionTable::new(tp, fp, tn, fn_, tp_lc, tn_lc)
}

/// Reference cells as `[accuracy, precision+, recall+, f1+, precision-,
/// recall-, f1-]` in percent; `None` for `/`. Columns are the six drives and
/// the sum column.
pub type Cells = [[Option<f64>; 7]; 7];

pub const CAMPAIGN_WITHOUT_LC: Cells = [
    [Some(87.9), Some(61.5), Some(80.0), Some(69.6), Some(95.6), Some(89.6), Some(92.5)],
    [Some(87.0), Some(63.6), Some(77.8), Some(70.0), Some(94.3), Some(89.2), Some(91.7)],
    [Some(86.1), Some(76.2), Some(100.0), Some(86.5), Some(100.0), Some(75.0), Some(85.7)],
    [Some(58.3), Some(0.0), None, None, Some(100.0), Some(58.3), Some(73.7)],
    [Some(95.5), Some(77.8), Some(100.0), Some(87.5), Some(100.0), Some(94.6), Some(97.2)],
    [Some(90.9), Some(40.0), Some(66.7), Some(50.0), Some(97.4), Some(92.7), Some(95.0)],
    [Some(87.9), Some(62.5), Some(88.9), Some(73.4), Some(97.2), Some(87.7), Some(92.2)],
];

pub const CAMPAIGN_WITH_LC: Cells = [
    [Some(90.9), Some(68.8), Some(84.6), Some(75.9), Some(96.7), Some(92.2), Some(94.4)],
    [Some(88.7), Some(63.6), Some(77.8), Some(70.0), Some(95.2), Some(90.9), Some(93.0)],
    [Some(89.1), Some(76.2), Some(100.0), Some(86.5), Some(100.0), Some(83.3), Some(90.9)],
    [Some(73.7), Some(0.0), None, None, Some(100.0), Some(73.7), Some(84.8)],
    [Some(96.2), Some(77.8), Some(100.0), Some(87.5), Some(100.0), Some(95.6), Some(97.7)],
    [Some(93.0), Some(50.0), Some(75.0), Some(60.0), Some(98.0), Some(94.3), Some(96.2)],
    [Some(90.5), Some(64.7), Some(89.8), Some(75.2), Some(97.9), Some(90.6), Some(94.1)],
];

pub const CAMPAIGN_F1_AVERAGE: (f64, f64) = (82.8, 84.7);

/// Sweep samples matching the aggregate table: every low-confidence
/// detection has confidence in (0.5, 0.7], every other one in (0.7, 1).
/// Of the flagged positives 3 were machine-correct; of the flagged
/// negatives 48 were.
pub fn sweep_fixture() -> Vec<SweepSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    let mut push = |n: u64, predicted_parking: bool, truth: TruthLabel, lc: bool, rng: &mut ChaCha8Rng| {
        for _ in 0..n {
            let confidence = if lc { rng.gen_range(0.501..0.7) } else { rng.gen_range(0.701..0.999) };
            out.push(SweepSample { confidence, predicted_parking, truth });
        }
    };
    push(40, true, TruthLabel::Parking, false, &mut rng);
    push(24, true, TruthLabel::NonParking, false, &mut rng);
    push(171, false, TruthLabel::NonParking, false, &mut rng);
    push(5, false, TruthLabel::Parking, false, &mut rng);
    push(3, true, TruthLabel::Parking, true, &mut rng);
    push(1, false, TruthLabel::Parking, true, &mut rng);
    push(48, false, TruthLabel::NonParking, true, &mut rng);
    push(12, true, TruthLabel::NonParking, true, &mut rng);
    out
}

/// Confusion table of the sweep fixture with nothing flagged.
pub const FIXTURE_PURE_AUTOMATION: (u64, u64, u64, u64) = (43, 36, 219, 6);

/// F1 average from raw counts, written out independently of the library.
pub fn f1_average_of(tp: u64, fp: u64, tn: u64, fn_: u64) -> f64 {
    let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let pp = tp / (tp + fp);
    let rp = tp / (tp + fn_);
    let pn = tn / (tn + fn_);
    let rn = tn / (tn + fp);
    let f1p = 2.0 * pp * rp / (pp + rp);
    let f1n = 2.0 * pn * rn / (pn + rn);
    (f1p + f1n) / 2.0
}

pub fn records_from(weights: &[[f64; 4]], lengths: &[f64]) -> Vec<DetectionImageRecord> {
    weights
        .iter()
        .zip(lengths)
        .enumerate()
        .map(|(i, (w, &l))| DetectionImageRecord {
            image_count: i,
            scores: ClassScores::from_unnormalized(*w).unwrap(),
            frame_id: i as u64,
            length_weight: l,
        })
        .collect()
}

/// Edge weights for the default 20 % / 0.2 configuration, from integer
/// arithmetic.
pub fn naive_weight(i: usize, n: usize) -> f64 {
    let edge = n / 5;
    if i < edge || i + edge >= n {
        0.2
    } else {
        1.0
    }
}

/// Double loop over classes and frames.
pub fn naive_average(records: &[DetectionImageRecord], length_weighted: bool) -> [f64; 4] {
    let n = records.len();
    let mut total = 0.0;
    for (i, r) in records.iter().enumerate() {
        for c in 0..4 {
            let w = naive_weight(i, n) * if length_weighted { r.length_weight } else { 1.0 };
            total += w * r.scores.as_array()[c];
        }
    }
    let mut out = [0.0; 4];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut num = 0.0;
        for (i, r) in records.iter().enumerate() {
            let w = naive_weight(i, n) * if length_weighted { r.length_weight } else { 1.0 };
            num += w * r.scores.as_array()[c];
        }
        *slot = num / total;
    }
    out
}
