//! Accuracy accounting, effort model, threshold sweep and test reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::decision::is_low_confidence;
use crate::error::MetricsError;
use crate::model::{DecisionOutcome, Label, TruthLabel};
use crate::par::{self, Execution};

/// Detection counts, with low-confidence (human-reviewed) detections kept
/// in their own rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp_lc: u64,
    pub tn_lc: u64,
}

impl ConfusionTable {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64, tp_lc: u64, tn_lc: u64) -> Self {
        ConfusionTable { tp, fp, tn, fn_, tp_lc, tn_lc }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_ + self.tp_lc + self.tn_lc
    }

    pub fn low_confidence(&self) -> u64 {
        self.tp_lc + self.tn_lc
    }
}

impl Add for ConfusionTable {
    type Output = ConfusionTable;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionTable {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.tn += rhs.tn;
        self.fn_ += rhs.fn_;
        self.tp_lc += rhs.tp_lc;
        self.tn_lc += rhs.tn_lc;
    }
}

impl std::iter::Sum for ConfusionTable {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionTable::default(), Add::add)
    }
}

/// Ratios derived from a confusion table. `None` marks an undefined ratio
/// (zero denominator).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub accuracy: Option<f64>,
    pub precision_pos: Option<f64>,
    pub recall_pos: Option<f64>,
    pub f1_pos: Option<f64>,
    pub precision_neg: Option<f64>,
    pub recall_neg: Option<f64>,
    pub f1_neg: Option<f64>,
    pub f1_average: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    let (p, r) = (precision?, recall?);
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

impl MetricsView {
    fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision_pos = ratio(tp, tp + fp);
        let recall_pos = ratio(tp, tp + fn_);
        let precision_neg = ratio(tn, tn + fn_);
        let recall_neg = ratio(tn, tn + fp);
        let f1_pos = f1(precision_pos, recall_pos);
        let f1_neg = f1(precision_neg, recall_neg);
        MetricsView {
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
            precision_pos,
            recall_pos,
            f1_pos,
            precision_neg,
            recall_neg,
            f1_neg,
            f1_average: f1_pos.zip(f1_neg).map(|(a, b)| 0.5 * (a + b)),
        }
    }
}

/// Counts decided detections against their reference labels.
///
/// Cross-parking decisions are excluded. Low-confidence decisions are
/// counted as `tp_lc`/`tn_lc` by their reference label, since review makes
/// them correct. A `cross` reference on a non-cross decision counts as
/// negative.
pub fn tabulate(
    decisions: &BTreeMap<u64, Label>,
    truth: &BTreeMap<u64, TruthLabel>,
) -> Result<ConfusionTable, MetricsError> {
    let mut t = ConfusionTable::default();
    for (&id, &label) in decisions {
        let Some(predicted) = label.is_parking() else {
            continue;
        };
        let actual = *truth.get(&id).ok_or(MetricsError::MissingTruth(id))? == TruthLabel::Parking;
        let slot = match (label.is_low_confidence(), predicted, actual) {
            (true, _, true) => &mut t.tp_lc,
            (true, _, false) => &mut t.tn_lc,
            (false, true, true) => &mut t.tp,
            (false, true, false) => &mut t.fp,
            (false, false, false) => &mut t.tn,
            (false, false, true) => &mut t.fn_,
        };
        *slot += 1;
    }
    Ok(t)
}

/// Metrics excluding low-confidence detections, and metrics counting them
/// as correct.
pub fn derive_views(table: &ConfusionTable) -> (MetricsView, MetricsView) {
    let t = table;
    let without = MetricsView::from_counts(t.tp, t.fp, t.tn, t.fn_);
    let with = MetricsView::from_counts(t.tp + t.tp_lc, t.fp, t.tn + t.tn_lc, t.fn_);
    (without, with)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffortModel {
    pub seconds_per_detection: f64,
    pub setup_minutes: f64,
    /// Legacy analysis time as a multiple of drive duration.
    pub legacy_factor: f64,
}

impl Default for EffortModel {
    fn default() -> Self {
        EffortModel { seconds_per_detection: 4.67, setup_minutes: 5.0, legacy_factor: 40.0 }
    }
}

impl EffortModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.seconds_per_detection > 0.0 && self.setup_minutes > 0.0 && self.legacy_factor > 0.0 {
            Ok(())
        } else {
            Err(MetricsError::InvalidModel("all effort parameters must be > 0".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffortReport {
    pub n_lc: usize,
    pub n_total: usize,
    pub drive_seconds: f64,
    pub review_seconds: f64,
    /// Review time over drive time.
    pub relative_effort: f64,
    /// Human time charged against the legacy process.
    pub human_seconds: f64,
    pub legacy_seconds: f64,
    pub reduction_vs_legacy: f64,
}

/// Human review effort for `n_lc` flagged detections.
///
/// Human time is the review time, but never less than the fixed setup
/// time: a fully automated run still costs the setup.
pub fn effort(n_lc: usize, n_total: usize, drive_seconds: f64, model: &EffortModel) -> Result<EffortReport, MetricsError> {
    model.validate()?;
    if !(drive_seconds > 0.0) {
        return Err(MetricsError::ZeroDuration);
    }
    if n_lc > n_total {
        return Err(MetricsError::CountMismatch { n_lc, n_total });
    }
    let review_seconds = n_lc as f64 * model.seconds_per_detection;
    let human_seconds = review_seconds.max(model.setup_minutes * 60.0);
    let legacy_seconds = model.legacy_factor * drive_seconds;
    Ok(EffortReport {
        n_lc,
        n_total,
        drive_seconds,
        review_seconds,
        relative_effort: review_seconds / drive_seconds,
        human_seconds,
        legacy_seconds,
        reduction_vs_legacy: 1.0 - human_seconds / legacy_seconds,
    })
}

/// One decided, non-cross detection as input to the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub confidence: f64,
    pub predicted_parking: bool,
    pub truth: TruthLabel,
}

impl SweepSample {
    /// `None` for cross-parking outcomes.
    pub fn from_outcome(outcome: &DecisionOutcome, truth: TruthLabel) -> Option<SweepSample> {
        Some(SweepSample { confidence: outcome.confidence, predicted_parking: outcome.label.is_parking()?, truth })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub flagged: usize,
    pub f1_average: Option<f64>,
    pub relative_effort: f64,
}

fn table_at(samples: &[SweepSample], threshold: f64) -> ConfusionTable {
    let mut t = ConfusionTable::default();
    for s in samples {
        let actual = s.truth == TruthLabel::Parking;
        let slot = match (is_low_confidence(s.confidence, threshold), s.predicted_parking, actual) {
            (true, _, true) => &mut t.tp_lc,
            (true, _, false) => &mut t.tn_lc,
            (false, true, true) => &mut t.tp,
            (false, true, false) => &mut t.fp,
            (false, false, false) => &mut t.tn,
            (false, false, true) => &mut t.fn_,
        };
        *slot += 1;
    }
    t
}

/// F1 average (with-LC view) and review effort as the low-confidence
/// threshold varies. Flagged detections count as correct.
pub fn lc_sweep(
    samples: &[SweepSample],
    thresholds: &[f64],
    drive_seconds: f64,
    model: &EffortModel,
) -> Result<Vec<SweepPoint>, MetricsError> {
    lc_sweep_with(Execution::default(), samples, thresholds, drive_seconds, model)
}

pub fn lc_sweep_with(
    exec: Execution,
    samples: &[SweepSample],
    thresholds: &[f64],
    drive_seconds: f64,
    model: &EffortModel,
) -> Result<Vec<SweepPoint>, MetricsError> {
    model.validate()?;
    if !(drive_seconds > 0.0) {
        return Err(MetricsError::ZeroDuration);
    }
    Ok(par::map(exec, thresholds, |&threshold| {
        let table = table_at(samples, threshold);
        let (_, with) = derive_views(&table);
        let flagged = table.low_confidence() as usize;
        SweepPoint {
            threshold,
            flagged,
            f1_average: with.f1_average,
            relative_effort: flagged as f64 * model.seconds_per_detection / drive_seconds,
        }
    }))
}

/// Thresholds from `start` to `end` inclusive in `step` increments, rounded
/// to avoid accumulated drift.
pub fn threshold_range(start: f64, end: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || end < start {
        return vec![start];
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("threshold,f1_average,relative_effort\n");
    for p in points {
        let f1 = p.f1_average.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(out, "{},{},{}", p.threshold, f1, p.relative_effort);
    }
    out
}

/// Metrics block for one drive or the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveMetrics {
    pub drive_id: String,
    pub confusion: ConfusionTable,
    pub without_lc: MetricsView,
    pub with_lc: MetricsView,
}

impl DriveMetrics {
    pub fn new(drive_id: impl Into<String>, confusion: ConfusionTable) -> Self {
        let (without_lc, with_lc) = derive_views(&confusion);
        DriveMetrics { drive_id: drive_id.into(), confusion, without_lc, with_lc }
    }
}

/// Machine-readable test report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub generated_at: u64,
    pub drive_ids: Vec<String>,
    pub confusion: ConfusionTable,
    pub without_lc: MetricsView,
    pub with_lc: MetricsView,
    pub effort: Option<EffortReport>,
    pub sweep: Option<Vec<SweepPoint>>,
    pub per_drive: Vec<DriveMetrics>,
}

impl Report {
    /// Aggregates per-drive tables by column sum.
    pub fn from_drives(per_drive: Vec<DriveMetrics>, effort: Option<EffortReport>, generated_at: u64) -> Report {
        let confusion: ConfusionTable = per_drive.iter().map(|d| d.confusion).sum();
        let (without_lc, with_lc) = derive_views(&confusion);
        Report {
            generated_at,
            drive_ids: per_drive.iter().map(|d| d.drive_id.clone()).collect(),
            confusion,
            without_lc,
            with_lc,
            effort,
            sweep: None,
            per_drive,
        }
    }
}

/// Percentage at one decimal, half-up; `/` when undefined.
pub fn format_percent(v: Option<f64>) -> String {
    match v {
        None => "/".to_string(),
        Some(v) => {
            let tenths = (v * 1000.0 + 0.5 + 1e-9).floor();
            format!("{:.1}%", tenths / 10.0)
        }
    }
}

pub struct RenderedReport {
    pub json: String,
    pub text: String,
}

pub fn render_report(report: &Report) -> RenderedReport {
    RenderedReport {
        json: serde_json::to_string_pretty(report).expect("report serializes"),
        text: render_text(report),
    }
}

/// Plain-text table with one column per drive plus the aggregate column.
type CountRow = (&'static str, fn(&ConfusionTable) -> u64);
type MetricRow = (&'static str, Option<&'static str>, fn(&MetricsView) -> Option<f64>);

pub fn render_text(report: &Report) -> String {
    let mut columns: Vec<(&str, &ConfusionTable, &MetricsView, &MetricsView)> = report
        .per_drive
        .iter()
        .map(|d| (d.drive_id.as_str(), &d.confusion, &d.without_lc, &d.with_lc))
        .collect();
    columns.push(("sum / average", &report.confusion, &report.without_lc, &report.with_lc));

    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    rows.push(("measurement file name".into(), columns.iter().map(|c| c.0.to_string()).collect()));
    let counts: [CountRow; 7] = [
        ("true positive (tp)", |t| t.tp),
        ("false positive (fp)", |t| t.fp),
        ("true negative (tn)", |t| t.tn),
        ("false negative (fn)", |t| t.fn_),
        ("true positive low confidence (tp_lc)", |t| t.tp_lc),
        ("true negative low confidence (tn_lc)", |t| t.tn_lc),
        ("total", |t| t.total()),
    ];
    for (name, get) in counts {
        rows.push((name.into(), columns.iter().map(|c| get(c.1).to_string()).collect()));
    }
    for (heading, pick) in [
        ("without consideration of low confidence", 2usize),
        ("with consideration of low confidence", 3usize),
    ] {
        let view = |c: &(&str, &ConfusionTable, &MetricsView, &MetricsView)| if pick == 2 { *c.2 } else { *c.3 };
        let section: [MetricRow; 7] = [
            ("accuracy", None, |v| v.accuracy),
            ("precision", Some("focus on positive detection"), |v| v.precision_pos),
            ("recall", None, |v| v.recall_pos),
            ("f1 score", None, |v| v.f1_pos),
            ("precision", Some("focus on negative detection"), |v| v.precision_neg),
            ("recall", None, |v| v.recall_neg),
            ("f1 score", None, |v| v.f1_neg),
        ];
        rows.push((heading.into(), Vec::new()));
        for (name, sub, get) in section {
            if let Some(sub) = sub {
                rows.push((sub.into(), Vec::new()));
            }
            rows.push((format!("  {name}"), columns.iter().map(|c| format_percent(get(&view(c)))).collect()));
        }
        rows.push((
            "  f1 score average".into(),
            columns.iter().map(|c| format_percent(view(c).f1_average)).collect(),
        ));
    }

    let label_width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let mut widths = vec![0usize; columns.len()];
    for (_, cells) in &rows {
        for (w, c) in widths.iter_mut().zip(cells) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for (label, cells) in &rows {
        let _ = write!(out, "{label:<label_width$}");
        for (w, c) in widths.iter().zip(cells) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "f1 score average without consideration of low confidence detections: {}",
        format_percent(report.without_lc.f1_average)
    );
    let _ = writeln!(
        out,
        "f1 score average with consideration of low confidence detections: {}",
        format_percent(report.with_lc.f1_average)
    );
    if let Some(e) = &report.effort {
        let _ = writeln!(
            out,
            "human review: {} of {} detections, {:.1} s ({} of drive time); reduction vs legacy {}",
            e.n_lc,
            e.n_total,
            e.review_seconds,
            format_percent(Some(e.relative_effort)),
            format_percent(Some(e.reduction_vs_legacy)),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pct(v: Option<f64>) -> f64 {
        v.unwrap() * 100.0
    }

    #[test]
    fn all_correct_table_has_no_errors() {
        let decisions: BTreeMap<u64, Label> =
            (0..10).map(|i| (i, if i % 2 == 0 { Label::Parking } else { Label::NonParking })).collect();
        let truth: BTreeMap<u64, TruthLabel> = (0..10)
            .map(|i| (i, if i % 2 == 0 { TruthLabel::Parking } else { TruthLabel::NonParking }))
            .collect();
        let t = tabulate(&decisions, &truth).unwrap();
        assert_eq!(t, ConfusionTable::new(5, 0, 5, 0, 0, 0));
    }

    #[test]
    fn cross_decisions_are_excluded() {
        let t = tabulate(&BTreeMap::from([(1, Label::Cross)]), &BTreeMap::new()).unwrap();
        assert_eq!(t.total(), 0);
    }

    #[test]
    fn low_confidence_counts_by_truth() {
        let decisions = BTreeMap::from([(1, Label::ParkingLowConfidence), (2, Label::ParkingLowConfidence)]);
        let truth = BTreeMap::from([(1, TruthLabel::Parking), (2, TruthLabel::NonParking)]);
        assert_eq!(tabulate(&decisions, &truth).unwrap(), ConfusionTable::new(0, 0, 0, 0, 1, 1));
    }

    #[test]
    fn missing_truth_names_detection() {
        let err = tabulate(&BTreeMap::from([(9, Label::Parking)]), &BTreeMap::new()).unwrap_err();
        assert_eq!(err, MetricsError::MissingTruth(9));
    }

    #[test]
    fn drive_four_has_undefined_cells() {
        let (without, with) = derive_views(&ConfusionTable::new(0, 5, 7, 0, 0, 7));
        assert!((pct(without.accuracy) - 58.333).abs() < 0.01);
        assert_eq!(without.precision_pos, Some(0.0));
        assert_eq!(without.recall_pos, None);
        assert_eq!(without.f1_pos, None);
        assert_eq!(without.f1_average, None);
        assert!((pct(with.accuracy) - 73.684).abs() < 0.01);
    }

    #[test]
    fn empty_table_is_all_undefined() {
        let (without, with) = derive_views(&ConfusionTable::default());
        assert_eq!(without, MetricsView::default());
        assert_eq!(with, MetricsView::default());
    }

    #[test]
    fn percent_rounds_half_up() {
        assert_eq!(format_percent(Some(11.0 / 16.0)), "68.8%");
        assert_eq!(format_percent(Some(0.0)), "0.0%");
        assert_eq!(format_percent(Some(1.0)), "100.0%");
        assert_eq!(format_percent(None), "/");
    }

    #[test]
    fn effort_rejects_bad_input() {
        let m = EffortModel::default();
        assert_eq!(effort(1, 2, 0.0, &m), Err(MetricsError::ZeroDuration));
        assert_eq!(effort(3, 2, 10.0, &m), Err(MetricsError::CountMismatch { n_lc: 3, n_total: 2 }));
    }

    #[test]
    fn threshold_range_is_inclusive() {
        let r = threshold_range(0.5, 1.0, 0.05);
        assert_eq!(r.len(), 11);
        assert_eq!(r[0], 0.5);
        assert_eq!(r[10], 1.0);
        assert_eq!(r[6], 0.8);
    }

    #[test]
    fn sweep_csv_has_header() {
        let pts = [SweepPoint { threshold: 1.0, flagged: 3, f1_average: Some(1.0), relative_effort: 0.5 }];
        assert_eq!(sweep_csv(&pts), "threshold,f1_average,relative_effort\n1,1,0.5\n");
    }
}
