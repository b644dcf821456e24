use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("score components must be finite and within [0, 1], got {0:?}")]
    ScoreOutOfRange([f64; 4]),
    #[error("score components must sum to 1, got {sum}")]
    ScoreSum { sum: f64 },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("line {line}: {message}")]
    Structure { line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing mandatory file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: expected header `{expected}`, found `{found}`", file.display())]
    Schema { file: PathBuf, expected: String, found: String },
    #[error("{}, line {line}: {message}", file.display())]
    Record { file: PathBuf, line: usize, message: String },
    #[error("invalid bundle: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("a distance profile needs at least 2 odometry samples, got {0}")]
    TooFewSamples(usize),
    #[error("odometry timestamps must increase strictly (sample {index})")]
    NonMonotone { index: usize },
    #[error("velocity must be finite and >= 0 (sample {index}: {v})")]
    InvalidVelocity { index: usize, v: f64 },
    #[error("target distance {target} m outside profile range [0, {max}] m")]
    OutOfRange { target: f64, max: f64 },
    #[error("detection {id}: raw space starts {overshoot:.3} m before drive start")]
    BeforeDriveStart { id: u64, overshoot: f64 },
    #[error("detection {id}: t_det {t_det_us} us is beyond the odometry range")]
    DetectionOutsideDrive { id: u64, t_det_us: u64 },
    #[error("detection {id}: no frames between {t0_us} us and {t_end_us} us (camera/sensor desynchronization)")]
    EmptyWindow { id: u64, t0_us: u64, t_end_us: u64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("no recorded scores for frame {0}")]
    MissingFrame(u64),
    #[error("bundle has no recorded scores")]
    NoRecordedScores,
    #[error("synthetic provider needs the true class of frame {0}")]
    MissingTruth(u64),
    #[error("detection {0}: cannot score an empty window")]
    EmptyWindow(u64),
    #[error("invalid noise model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum DecisionError {
    #[error("cannot weight an empty frame sequence")]
    NoFrames,
    #[error("total fusion weight is zero")]
    ZeroWeight,
    #[error("invalid decision config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("detection {0} has no truth label")]
    MissingTruth(u64),
    #[error("drive duration must be > 0")]
    ZeroDuration,
    #[error("low-confidence count {n_lc} exceeds total {n_total}")]
    CountMismatch { n_lc: usize, n_total: usize },
    #[error("invalid effort model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid speed profile: {0}")]
    InvalidSpeed(String),
    #[error("frame period must be > 0")]
    InvalidFramePeriod,
}

/// Errors from the end-to-end pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}
