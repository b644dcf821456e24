//! End-to-end analysis of one drive: windows, scores, decisions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::{score_detection, synthetic_frame_class, RecordedProvider, ScoreProvider, SyntheticNoiseModel};
use crate::decision::{decide, DecisionConfig};
use crate::error::{ClassifierError, Error, MetricsError};
use crate::kinematics::{build_profile, compute_window, DetectionWindow, WindowConfig};
use crate::metrics::{tabulate, ConfusionTable, SweepSample};
use crate::model::{Class, DecisionOutcome, Detection, DetectionImageRecord, DriveBundle, Label, TruthLabel};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub decision: DecisionConfig,
    pub window: WindowConfig,
}

/// Which score source to use for a bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProviderChoice {
    /// The bundle's `scores.csv`.
    Recorded,
    /// Seeded synthetic scores around the true class carried by synthetic
    /// frame locators.
    Synthetic(SyntheticNoiseModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionAnalysis {
    pub detection: Detection,
    pub window: DetectionWindow,
    pub records: Vec<DetectionImageRecord>,
    pub outcome: DecisionOutcome,
}

/// A detection the pipeline could not place in the video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDetection {
    pub id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveAnalysis {
    pub drive_id: String,
    pub duration_s: f64,
    pub results: Vec<DetectionAnalysis>,
    pub skipped: Vec<SkippedDetection>,
}

impl DriveAnalysis {
    pub fn labels(&self) -> BTreeMap<u64, Label> {
        self.results.iter().map(|r| (r.detection.id, r.outcome.label)).collect()
    }

    pub fn flagged(&self) -> usize {
        self.results.iter().filter(|r| r.outcome.flagged()).count()
    }

    /// Detections counted in the KPIs (everything but cross parking).
    pub fn scored(&self) -> usize {
        self.results.iter().filter(|r| r.outcome.label.is_parking().is_some()).count()
    }

    pub fn confusion(&self, truth: &BTreeMap<u64, TruthLabel>) -> Result<ConfusionTable, MetricsError> {
        tabulate(&self.labels(), truth)
    }

    pub fn sweep_samples(&self, truth: &BTreeMap<u64, TruthLabel>) -> Result<Vec<SweepSample>, MetricsError> {
        let mut out = Vec::new();
        for r in &self.results {
            let Some(predicted_parking) = r.outcome.label.is_parking() else {
                continue;
            };
            let truth = *truth.get(&r.detection.id).ok_or(MetricsError::MissingTruth(r.detection.id))?;
            out.push(SweepSample { confidence: r.outcome.confidence, predicted_parking, truth });
        }
        Ok(out)
    }

    pub fn result(&self, id: u64) -> Option<&DetectionAnalysis> {
        self.results.iter().find(|r| r.detection.id == id)
    }
}

/// True classes of synthetic frames, keyed by frame id.
pub fn synthetic_frame_truth(bundle: &DriveBundle) -> BTreeMap<u64, Class> {
    bundle
        .frames
        .iter()
        .filter_map(|f| synthetic_frame_class(&f.image_ref).map(|c| (f.frame_id, c)))
        .collect()
}

/// Analyzes every detection of `bundle` with the default execution mode.
pub fn analyze_bundle(bundle: &DriveBundle, choice: ProviderChoice, cfg: &PipelineConfig) -> Result<DriveAnalysis, Error> {
    analyze_bundle_with(Execution::default(), bundle, choice, cfg)
}

pub fn analyze_bundle_with(
    exec: Execution,
    bundle: &DriveBundle,
    choice: ProviderChoice,
    cfg: &PipelineConfig,
) -> Result<DriveAnalysis, Error> {
    cfg.decision.validate()?;
    let recorded;
    let provider: &dyn ScoreProvider = match &choice {
        ProviderChoice::Recorded => {
            let scores = bundle.recorded_scores.clone().ok_or(ClassifierError::NoRecordedScores)?;
            recorded = RecordedProvider::new(scores);
            &recorded
        }
        ProviderChoice::Synthetic(model) => model,
    };
    let truth = match choice {
        ProviderChoice::Synthetic(_) => Some(synthetic_frame_truth(bundle)),
        ProviderChoice::Recorded => None,
    };
    analyze_with_provider(exec, bundle, provider, truth.as_ref(), cfg)
}

/// Analyzes a bundle against an arbitrary provider.
pub fn analyze_with_provider(
    exec: Execution,
    bundle: &DriveBundle,
    provider: &dyn ScoreProvider,
    frame_truth: Option<&BTreeMap<u64, Class>>,
    cfg: &PipelineConfig,
) -> Result<DriveAnalysis, Error> {
    let profile = build_profile(&bundle.odometry)?;

    let per_detection = par::map(exec, &bundle.detections, |det| -> Result<Result<DetectionAnalysis, SkippedDetection>, Error> {
        let window = match compute_window(&profile, det, &bundle.frames, &cfg.window) {
            Ok(w) => w,
            Err(e) => return Ok(Err(SkippedDetection { id: det.id, reason: e.to_string() })),
        };
        let records = score_detection(provider, &window, frame_truth)?;
        let outcome = decide(det, &records, &cfg.decision)?;
        Ok(Ok(DetectionAnalysis { detection: det.clone(), window, records, outcome }))
    });

    let mut results = Vec::with_capacity(bundle.detections.len());
    let mut skipped = Vec::new();
    for item in per_detection {
        match item? {
            Ok(r) => results.push(r),
            Err(s) => skipped.push(s),
        }
    }
    Ok(DriveAnalysis { drive_id: bundle.drive_id.clone(), duration_s: bundle.duration_secs(), results, skipped })
}
