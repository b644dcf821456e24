//! The decision maker: fuses a detection's per-frame scores into a final
//! label.
//!
//! Rules run in a fixed order, each recorded in the outcome's trace:
//!
//! 1. cross check on raw-space length (label 5, stop);
//! 2. edge-weighted normalized average of the frame scores, with car and
//!    construction counted on the non-parking side;
//! 3. rescue: a provisional non-parking becomes parking when a bridged run
//!    of parking frames is longer than the minimal parking length;
//! 4. gate: a provisional parking from the average becomes non-parking when
//!    `merged_parking * length` does not exceed the length-confidence
//!    threshold. Rescued labels skip the gate;
//! 5. low-confidence flag: when the winning merged score does not exceed
//!    the threshold, 0 becomes 0.4 and 1 becomes 0.6.

use serde::{Deserialize, Serialize};

use crate::error::DecisionError;
use crate::model::{
    ClassScores, Detection, DecisionOutcome, DetectionImageRecord, Label, RuleId, RunEvidence, TraceEntry,
};

/// Slack on threshold comparisons so that a confidence equal to the
/// threshold flags regardless of floating-point rounding in the average.
pub const THRESHOLD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    /// Fraction of frames at each end of the window that is down-weighted.
    pub edge_fraction: f64,
    pub edge_weight: f64,
    /// Minimal length of a parking spot, meters.
    pub min_parking_length: f64,
    /// Consecutive non-parking frames tolerated inside a parking run.
    pub bridge_threshold: usize,
    /// Meters; `merged_parking * length` must exceed this for parking.
    pub length_confidence_threshold: f64,
    pub cross_min: f64,
    pub cross_max: f64,
    pub lc_threshold: f64,
    /// Multiply the edge weights by each frame's length weight.
    pub length_weighted_average: bool,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            edge_fraction: 0.20,
            edge_weight: 0.20,
            min_parking_length: 3.5,
            bridge_threshold: 2,
            length_confidence_threshold: 3.0,
            cross_min: 2.1,
            cross_max: 3.5,
            lc_threshold: 0.70,
            length_weighted_average: false,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<(), DecisionError> {
        let bad = |m: String| Err(DecisionError::InvalidConfig(m));
        if !(0.0..0.5).contains(&self.edge_fraction) {
            return bad(format!("edge_fraction {} outside [0, 0.5)", self.edge_fraction));
        }
        if !(self.edge_weight > 0.0) {
            return bad(format!("edge_weight {} must be > 0", self.edge_weight));
        }
        if !(self.min_parking_length > 0.0) || !(self.length_confidence_threshold > 0.0) {
            return bad("length thresholds must be > 0".into());
        }
        if !(self.cross_min > 0.0 && self.cross_min < self.cross_max) {
            return bad(format!("cross range [{}, {}) is empty", self.cross_min, self.cross_max));
        }
        if !(0.0..=1.0).contains(&self.lc_threshold) {
            return bad(format!("lc_threshold {} outside [0, 1]", self.lc_threshold));
        }
        Ok(())
    }

    pub fn is_cross_length(&self, length: f64) -> bool {
        self.cross_min <= length && length < self.cross_max
    }
}

/// Whether a winning score is low enough to need human review. The
/// threshold has to be exceeded for full automation.
pub fn is_low_confidence(confidence: f64, lc_threshold: f64) -> bool {
    confidence <= lc_threshold + THRESHOLD_EPS
}

/// Per-frame fusion weights: the first and last `floor(edge_fraction * n)`
/// frames get `edge_weight`, the rest 1.
pub fn image_weights(n: usize, cfg: &DecisionConfig) -> Result<Vec<f64>, DecisionError> {
    if n == 0 {
        return Err(DecisionError::NoFrames);
    }
    let edge = (cfg.edge_fraction * n as f64 + THRESHOLD_EPS).floor() as usize;
    Ok((0..n).map(|i| if i < edge || i >= n - edge { cfg.edge_weight } else { 1.0 }).collect())
}

/// Normalized weighted average of the frame scores, per class.
pub fn weighted_average(records: &[DetectionImageRecord], cfg: &DecisionConfig) -> Result<ClassScores, DecisionError> {
    let weights = image_weights(records.len(), cfg)?;
    let mut sums = [0.0f64; 4];
    for (rec, w) in records.iter().zip(&weights) {
        let w = if cfg.length_weighted_average { w * rec.length_weight } else { *w };
        for (acc, s) in sums.iter_mut().zip(rec.scores.as_array()) {
            *acc += w * s;
        }
    }
    let total: f64 = sums.iter().sum();
    if !(total > 0.0) {
        return Err(DecisionError::ZeroWeight);
    }
    ClassScores::from_array(sums.map(|s| s / total)).map_err(|_| DecisionError::ZeroWeight)
}

/// Longest maximal run of parking-argmax frames, bridging gaps of at most
/// `bridge_threshold` frames. Bridged frames count toward the run length.
/// `None` when no frame has parking as its argmax.
pub fn longest_parking_run(records: &[DetectionImageRecord], cfg: &DecisionConfig) -> Option<RunEvidence> {
    let parking: Vec<bool> = records.iter().map(|r| r.scores.is_parking_argmax()).collect();
    let mut best: Option<RunEvidence> = None;
    let mut i = 0;
    while i < parking.len() {
        if !parking[i] {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i;
        let mut gap = 0;
        for (j, &p) in parking.iter().enumerate().skip(i + 1) {
            if p {
                end = j;
                gap = 0;
            } else {
                gap += 1;
                if gap > cfg.bridge_threshold {
                    break;
                }
            }
        }
        let length_m = records[start..=end].iter().map(|r| r.length_weight).sum();
        if best.is_none_or(|b| length_m > b.length_m) {
            best = Some(RunEvidence { start, end, length_m });
        }
        i = end + 1;
    }
    best
}

/// Evidence for rescuing a non-parking average: a bridged parking run
/// longer than the minimal parking length.
pub fn rescue_parking_run(records: &[DetectionImageRecord], cfg: &DecisionConfig) -> Option<RunEvidence> {
    longest_parking_run(records, cfg).filter(|run| run.length_m > cfg.min_parking_length)
}

/// Decides the final label of one detection.
pub fn decide(
    det: &Detection,
    records: &[DetectionImageRecord],
    cfg: &DecisionConfig,
) -> Result<DecisionOutcome, DecisionError> {
    if records.is_empty() {
        return Err(DecisionError::NoFrames);
    }
    let mut trace = Vec::with_capacity(5);

    let cross = cfg.is_cross_length(det.length);
    trace.push(TraceEntry { rule: RuleId::CrossCheck, fired: cross, value: det.length });
    if cross {
        return Ok(DecisionOutcome {
            label: Label::Cross,
            confidence: 1.0,
            merged_scores: None,
            rule_trace: trace,
            rescue: None,
        });
    }

    let merged = weighted_average(records, cfg)?;
    let parking = merged.parking();
    let mut is_parking = parking > merged.car() + merged.non_parking() && parking > merged.construction();
    trace.push(TraceEntry { rule: RuleId::WeightedAverage, fired: is_parking, value: parking });

    let mut rescue = None;
    if !is_parking {
        let run = longest_parking_run(records, cfg);
        let length = run.map_or(0.0, |r| r.length_m);
        let fired = length > cfg.min_parking_length;
        trace.push(TraceEntry { rule: RuleId::RescueEc1, fired, value: length });
        is_parking = fired;
        rescue = run;
    } else {
        let product = parking * det.length;
        let fired = product <= cfg.length_confidence_threshold;
        trace.push(TraceEntry { rule: RuleId::GateEc3, fired, value: product });
        is_parking = !fired;
    }

    let confidence = if is_parking { parking } else { 1.0 - parking };
    let flagged = is_low_confidence(confidence, cfg.lc_threshold);
    if flagged {
        trace.push(TraceEntry { rule: RuleId::LcFlag, fired: true, value: confidence });
    }
    let label = match (is_parking, flagged) {
        (true, false) => Label::Parking,
        (true, true) => Label::ParkingLowConfidence,
        (false, false) => Label::NonParking,
        (false, true) => Label::NonParkingLowConfidence,
    };
    Ok(DecisionOutcome { label, confidence, merged_scores: Some(merged), rule_trace: trace, rescue })
}

/// Re-applies the low-confidence switch at a different threshold to an
/// outcome decided earlier.
pub fn rethreshold(outcome: &DecisionOutcome, lc_threshold: f64) -> DecisionOutcome {
    let Some(is_parking) = outcome.label.is_parking() else {
        return outcome.clone();
    };
    let mut out = outcome.clone();
    out.rule_trace.retain(|e| e.rule != RuleId::LcFlag);
    let flagged = is_low_confidence(outcome.confidence, lc_threshold);
    if flagged {
        out.rule_trace.push(TraceEntry { rule: RuleId::LcFlag, fired: true, value: outcome.confidence });
    }
    out.label = match (is_parking, flagged) {
        (true, false) => Label::Parking,
        (true, true) => Label::ParkingLowConfidence,
        (false, false) => Label::NonParking,
        (false, true) => Label::NonParkingLowConfidence,
    };
    out
}
