use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Component, Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gta_core::classifier::synthetic_frame_class;
use gta_core::kinematics::DetectionWindow;
use gta_core::metrics::{effort, tabulate, DriveMetrics, EffortModel, Report};
use gta_core::model::{ClassScores, DecisionOutcome, Detection, DriveBundle, Label, Timestamp, TruthLabel};
use gta_core::pipeline::{DetectionAnalysis, DriveAnalysis};
use serde::{Deserialize, Serialize};

use crate::error::ReviewError;

/// One analyzed drive handed to the service.
#[derive(Debug, Clone)]
pub struct DriveInput {
    pub bundle: DriveBundle,
    pub analysis: DriveAnalysis,
    /// Directory that relative `image_ref`s resolve against.
    pub image_root: Option<PathBuf>,
}

/// One label submission, as stored in the label log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Milliseconds since the Unix epoch.
    pub at_ms: u64,
    pub drive_id: String,
    pub detection_id: u64,
    pub old: Option<TruthLabel>,
    pub new: TruthLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct HumanReview {
    label: TruthLabel,
    note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagFilter {
    Lc,
    #[default]
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriveSummary {
    pub drive_id: String,
    pub duration_s: f64,
    pub detections: usize,
    pub decided: usize,
    pub skipped: usize,
    pub flagged: usize,
    pub remaining_flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSummary {
    /// `drive_id:detection_id`.
    pub key: String,
    pub drive_id: String,
    pub id: u64,
    pub length: f64,
    /// Machine label: 0, 0.4, 0.6, 1 or 5.
    pub label: Label,
    pub confidence: f64,
    pub flagged: bool,
    pub human_label: Option<TruthLabel>,
    pub note: Option<String>,
    /// Human label when present, otherwise the machine decision.
    pub effective_label: TruthLabel,
    /// Label the machine decision is scored against, if any.
    pub reference: Option<TruthLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameView {
    pub frame_id: u64,
    pub t: Timestamp,
    pub image_ref: String,
    pub url: String,
    pub length_weight: f64,
    pub scores: ClassScores,
    pub dominant: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionDetail {
    #[serde(flatten)]
    pub summary: DetectionSummary,
    pub detection: Detection,
    pub t_0: Timestamp,
    pub t_end: Timestamp,
    pub outcome: DecisionOutcome,
    pub frames: Vec<FrameView>,
    pub audit: Vec<AuditEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReviewCounts {
    pub flagged: usize,
    pub remaining_flagged: usize,
    pub human_labels: usize,
    /// Human labels on detections the machine was confident about.
    pub overrides: usize,
    /// Decided detections with neither a human label nor bundle truth;
    /// left out of the confusion counts.
    pub unreferenced: usize,
    pub audit_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewReport {
    #[serde(flatten)]
    pub report: Report,
    pub review: ReviewCounts,
}

pub struct FrameContent {
    pub content_type: &'static str,
    pub bytes: Vec<u8>,
}

/// Analysis results plus the human labels applied on top of them.
pub struct ReviewState {
    drives: Vec<DriveInput>,
    by_id: HashMap<String, usize>,
    reviews: BTreeMap<(usize, u64), HumanReview>,
    audit: Vec<AuditEntry>,
    store: Option<PathBuf>,
    effort: EffortModel,
    pinned_time: Option<u64>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn machine_label(label: Label) -> TruthLabel {
    match label.is_parking() {
        Some(true) => TruthLabel::Parking,
        Some(false) => TruthLabel::NonParking,
        None => TruthLabel::Cross,
    }
}

impl ReviewState {
    /// Builds the state and replays `store` if it exists.
    pub fn new(drives: Vec<DriveInput>, effort: EffortModel, store: Option<PathBuf>) -> Result<Self, ReviewError> {
        if drives.is_empty() {
            return Err(ReviewError::NoDrives);
        }
        let mut by_id = HashMap::new();
        for (i, d) in drives.iter().enumerate() {
            if by_id.insert(d.analysis.drive_id.clone(), i).is_some() {
                return Err(ReviewError::DuplicateDrive(d.analysis.drive_id.clone()));
            }
        }
        let mut state =
            ReviewState { drives, by_id, reviews: BTreeMap::new(), audit: Vec::new(), store, effort, pinned_time: None };
        state.replay()?;
        Ok(state)
    }

    /// Fixes both audit timestamps and the report's `generated_at`.
    pub fn pin_time(mut self, ms: u64) -> Self {
        self.pinned_time = Some(ms);
        self
    }

    fn now(&self) -> u64 {
        self.pinned_time.unwrap_or_else(now_ms)
    }

    fn replay(&mut self) -> Result<(), ReviewError> {
        let Some(path) = self.store.clone() else {
            return Ok(());
        };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(source) => return Err(ReviewError::Io { path, source }),
        };
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: AuditEntry = serde_json::from_str(line)
                .map_err(|e| ReviewError::Replay { path: path.clone(), line: n + 1, message: e.to_string() })?;
            let key = self.locate(&entry.drive_id, entry.detection_id).ok_or_else(|| ReviewError::Replay {
                path: path.clone(),
                line: n + 1,
                message: format!("unknown detection {}:{}", entry.drive_id, entry.detection_id),
            })?;
            self.reviews.insert(key, HumanReview { label: entry.new, note: entry.note.clone() });
            self.audit.push(entry);
        }
        Ok(())
    }

    fn locate(&self, drive_id: &str, id: u64) -> Option<(usize, u64)> {
        let &d = self.by_id.get(drive_id)?;
        self.drives[d].analysis.result(id).map(|_| (d, id))
    }

    /// Resolves `drive:id`, or a bare id that is unique across drives.
    fn resolve(&self, key: &str) -> Result<(usize, u64), ReviewError> {
        let not_found = || ReviewError::NotFound(format!("detection {key}"));
        if let Some((drive, id)) = key.rsplit_once(':') {
            let id = id.parse().map_err(|_| not_found())?;
            return self.locate(drive, id).ok_or_else(not_found);
        }
        let id: u64 = key.parse().map_err(|_| not_found())?;
        let hits: Vec<_> = (0..self.drives.len()).filter(|&d| self.drives[d].analysis.result(id).is_some()).collect();
        match hits.as_slice() {
            [d] => Ok((*d, id)),
            [] => Err(not_found()),
            _ => Err(ReviewError::Ambiguous(key.to_string())),
        }
    }

    pub fn drive_index(&self, drive_id: &str) -> Result<usize, ReviewError> {
        self.by_id.get(drive_id).copied().ok_or_else(|| ReviewError::NotFound(format!("drive {drive_id}")))
    }

    fn result(&self, key: (usize, u64)) -> &DetectionAnalysis {
        self.drives[key.0].analysis.result(key.1).expect("resolved keys exist")
    }

    fn reference(&self, key: (usize, u64)) -> Option<TruthLabel> {
        self.reviews.get(&key).map(|r| r.label).or_else(|| {
            self.drives[key.0].bundle.ground_truth.as_ref().and_then(|t| t.get(&key.1).copied())
        })
    }

    fn summary(&self, key: (usize, u64)) -> DetectionSummary {
        let r = self.result(key);
        let review = self.reviews.get(&key);
        let drive_id = self.drives[key.0].analysis.drive_id.clone();
        DetectionSummary {
            key: format!("{drive_id}:{}", key.1),
            drive_id,
            id: key.1,
            length: r.detection.length,
            label: r.outcome.label,
            confidence: r.outcome.confidence,
            flagged: r.outcome.flagged(),
            human_label: review.map(|h| h.label),
            note: review.and_then(|h| h.note.clone()),
            effective_label: review.map_or_else(|| machine_label(r.outcome.label), |h| h.label),
            reference: self.reference(key),
        }
    }

    pub fn drives(&self) -> Vec<DriveSummary> {
        self.drives
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let a = &d.analysis;
                let remaining = a
                    .results
                    .iter()
                    .filter(|r| r.outcome.flagged() && !self.reviews.contains_key(&(i, r.detection.id)))
                    .count();
                DriveSummary {
                    drive_id: a.drive_id.clone(),
                    duration_s: a.duration_s,
                    detections: a.results.len() + a.skipped.len(),
                    decided: a.results.len(),
                    skipped: a.skipped.len(),
                    flagged: a.flagged(),
                    remaining_flagged: remaining,
                }
            })
            .collect()
    }

    /// Detections of one drive, or of all drives. The low-confidence view is
    /// ordered by ascending confidence.
    pub fn detections(&self, drive: Option<usize>, filter: FlagFilter) -> Vec<DetectionSummary> {
        let drives: Vec<usize> = drive.map_or_else(|| (0..self.drives.len()).collect(), |d| vec![d]);
        let mut out: Vec<DetectionSummary> = drives
            .into_iter()
            .flat_map(|d| self.drives[d].analysis.results.iter().map(move |r| (d, r.detection.id)))
            .map(|k| self.summary(k))
            .filter(|s| filter == FlagFilter::All || s.flagged)
            .collect();
        if filter == FlagFilter::Lc {
            out.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
        }
        out
    }

    pub fn detection(&self, key: &str) -> Result<DetectionDetail, ReviewError> {
        let k = self.resolve(key)?;
        let drive = &self.drives[k.0];
        let r = self.result(k);
        let frames = window_frames(&drive.bundle, &r.window, r);
        let audit = self
            .audit
            .iter()
            .filter(|e| e.drive_id == drive.analysis.drive_id && e.detection_id == k.1)
            .cloned()
            .collect();
        Ok(DetectionDetail {
            summary: self.summary(k),
            detection: r.detection.clone(),
            t_0: r.window.t_0,
            t_end: r.window.t_end,
            outcome: r.outcome.clone(),
            frames,
            audit,
        })
    }

    /// Records a human label. The log line is written before memory is
    /// updated, so a failed write leaves the state unchanged.
    pub fn apply_label(&mut self, key: &str, label: TruthLabel, note: Option<String>) -> Result<DetectionSummary, ReviewError> {
        let k = self.resolve(key)?;
        let entry = AuditEntry {
            at_ms: self.now(),
            drive_id: self.drives[k.0].analysis.drive_id.clone(),
            detection_id: k.1,
            old: self.reviews.get(&k).map(|r| r.label),
            new: label,
            note: note.clone(),
        };
        if let Some(path) = &self.store {
            let line = serde_json::to_string(&entry).expect("audit entry serializes") + "\n";
            let io = |source| ReviewError::Io { path: path.clone(), source };
            if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
            f.write_all(line.as_bytes()).map_err(io)?;
        }
        self.reviews.insert(k, HumanReview { label, note });
        self.audit.push(entry);
        Ok(self.summary(k))
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Metrics of the machine decisions against the current reference
    /// labels, recomputed on every call.
    pub fn report(&self) -> ReviewReport {
        let mut per_drive = Vec::new();
        let mut counts = ReviewCounts {
            flagged: 0,
            remaining_flagged: 0,
            human_labels: self.reviews.len(),
            overrides: 0,
            unreferenced: 0,
            audit_entries: self.audit.len(),
        };
        let mut scored = 0;
        let mut seconds = 0.0;
        for (d, drive) in self.drives.iter().enumerate() {
            let mut labels = BTreeMap::new();
            let mut reference = BTreeMap::new();
            for r in &drive.analysis.results {
                let k = (d, r.detection.id);
                let reviewed = self.reviews.contains_key(&k);
                if r.outcome.flagged() {
                    counts.flagged += 1;
                    counts.remaining_flagged += usize::from(!reviewed);
                } else if reviewed {
                    counts.overrides += 1;
                }
                if r.outcome.label.is_parking().is_none() {
                    continue;
                }
                scored += 1;
                match self.reference(k) {
                    Some(t) => {
                        labels.insert(k.1, r.outcome.label);
                        reference.insert(k.1, t);
                    }
                    None => counts.unreferenced += 1,
                }
            }
            seconds += drive.analysis.duration_s;
            let table = tabulate(&labels, &reference).expect("every tabulated label has a reference");
            per_drive.push(DriveMetrics::new(drive.analysis.drive_id.clone(), table));
        }
        let effort = effort(counts.flagged, scored, seconds, &self.effort).ok();
        ReviewReport { report: Report::from_drives(per_drive, effort, self.now() / 1000), review: counts }
    }

    /// Image bytes for `drive:frame_id`: the referenced file when it exists,
    /// an SVG placeholder for synthetic frames.
    pub fn frame(&self, key: &str) -> Result<FrameContent, ReviewError> {
        let not_found = || ReviewError::NotFound(format!("frame {key}"));
        let (drive_id, fid) = key.rsplit_once(':').ok_or_else(not_found)?;
        let fid: u64 = fid.parse().map_err(|_| not_found())?;
        let drive = &self.drives[self.drive_index(drive_id)?];
        let frame = drive.bundle.frames.iter().find(|f| f.frame_id == fid).ok_or_else(not_found)?;

        if let Some(path) = drive.image_root.as_deref().and_then(|root| safe_join(root, &frame.image_ref)) {
            if let Ok(bytes) = fs::read(&path) {
                return Ok(FrameContent { content_type: content_type(&path), bytes });
            }
        }
        let class = synthetic_frame_class(&frame.image_ref).ok_or_else(not_found)?;
        let scores = frame_scores(drive, fid);
        Ok(FrameContent { content_type: "image/svg+xml", bytes: placeholder_svg(drive_id, fid, class.name(), scores).into_bytes() })
    }
}

fn frame_scores(drive: &DriveInput, fid: u64) -> Option<ClassScores> {
    drive.bundle.recorded_scores.as_ref().and_then(|s| s.get(&fid).copied()).or_else(|| {
        drive.analysis.results.iter().flat_map(|r| &r.records).find(|rec| rec.frame_id == fid).map(|rec| rec.scores)
    })
}

fn window_frames(bundle: &DriveBundle, window: &DetectionWindow, r: &DetectionAnalysis) -> Vec<FrameView> {
    window
        .frames
        .iter()
        .zip(&r.records)
        .map(|(w, rec)| FrameView {
            frame_id: w.frame_id,
            t: w.t,
            image_ref: bundle.frames.iter().find(|f| f.frame_id == w.frame_id).map(|f| f.image_ref.clone()).unwrap_or_default(),
            url: format!("/api/frames/{}:{}", bundle.drive_id, w.frame_id),
            length_weight: rec.length_weight,
            scores: rec.scores,
            dominant: rec.scores.argmax().name(),
        })
        .collect()
}

/// `root/rel` when `rel` stays inside `root`.
fn safe_join(root: &Path, rel: &str) -> Option<PathBuf> {
    let rel = Path::new(rel);
    rel.components().all(|c| matches!(c, Component::Normal(_))).then(|| root.join(rel))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("svg") => "image/svg+xml",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

fn placeholder_svg(drive_id: &str, fid: u64, class: &str, scores: Option<ClassScores>) -> String {
    let fill = match class {
        "parking" => "#2e7d32",
        "non_parking" => "#c62828",
        "car" => "#1565c0",
        _ => "#ef6c00",
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"320\" height=\"180\" viewBox=\"0 0 320 180\">\
         <rect width=\"320\" height=\"180\" fill=\"{fill}\"/>\
         <text x=\"12\" y=\"30\" font-family=\"monospace\" font-size=\"18\" fill=\"#fff\">{class}</text>\
         <text x=\"12\" y=\"54\" font-family=\"monospace\" font-size=\"12\" fill=\"#fff\">{} frame {fid}</text>",
        escape(drive_id)
    );
    if let Some(s) = scores {
        for (i, (name, v)) in ["car", "construction", "non_parking", "parking"].iter().zip(s.as_array()).enumerate() {
            let y = 84 + 22 * i;
            let _ = write!(
                svg,
                "<text x=\"12\" y=\"{y}\" font-family=\"monospace\" font-size=\"12\" fill=\"#fff\">{name:<13}{v:.3}</text>\
                 <rect x=\"150\" y=\"{}\" width=\"{:.1}\" height=\"10\" fill=\"#fff\"/>",
                y - 10,
                v * 150.0
            );
        }
    }
    svg.push_str("</svg>");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
