//! Per-frame class scores behind a provider contract.
//!
//! Two providers exist: one replaying recorded scores and one drawing
//! seeded synthetic scores around a known true class. Both return
//! normalized 4-class vectors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ClassifierError;
use crate::kinematics::DetectionWindow;
use crate::model::{Class, ClassScores, DetectionImageRecord};

/// Prefix of synthetic frame locators, `synth:<class>:<frame_id>`.
pub const SYNTHETIC_TAG: &str = "synth";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Recorded,
    Synthetic,
}

pub trait ScoreProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    /// Scores one frame. Providers that need the true class fail with
    /// [`ClassifierError::MissingTruth`] when it is absent.
    fn score_frame(&self, frame_id: u64, true_class: Option<Class>) -> Result<ClassScores, ClassifierError>;
}

/// Replays scores loaded from `scores.csv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordedProvider {
    scores: BTreeMap<u64, ClassScores>,
}

impl RecordedProvider {
    pub fn new(scores: BTreeMap<u64, ClassScores>) -> Self {
        RecordedProvider { scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl ScoreProvider for RecordedProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Recorded
    }

    fn score_frame(&self, frame_id: u64, _true_class: Option<Class>) -> Result<ClassScores, ClassifierError> {
        self.scores.get(&frame_id).copied().ok_or(ClassifierError::MissingFrame(frame_id))
    }
}

/// Seeded synthetic scores peaked at the (possibly flipped) true class.
///
/// Each frame draws from its own generator keyed by `(seed, frame_id)`, so
/// results do not depend on call order or threading. With probability
/// `flip_prob` the peak moves to a uniformly chosen other class. The peak
/// carries weight `concentration * (1 + u)` against `u_j` for the other
/// classes (`u, u_j` uniform in `[0, 1)`), so for `concentration >= 1` the
/// peak class is always the argmax. An infinite concentration yields
/// one-hot vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticNoiseModel {
    pub seed: u64,
    pub flip_prob: f64,
    pub concentration: f64,
}

impl Default for SyntheticNoiseModel {
    fn default() -> Self {
        SyntheticNoiseModel { seed: 0, flip_prob: 0.0, concentration: 8.0 }
    }
}

fn mix(seed: u64, frame_id: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SyntheticNoiseModel {
    pub fn new(seed: u64, flip_prob: f64, concentration: f64) -> Result<Self, ClassifierError> {
        if !(0.0..=1.0).contains(&flip_prob) {
            return Err(ClassifierError::InvalidModel(format!("flip_prob {flip_prob} outside [0, 1]")));
        }
        if !(concentration > 0.0) {
            return Err(ClassifierError::InvalidModel(format!("concentration {concentration} must be > 0")));
        }
        Ok(SyntheticNoiseModel { seed, flip_prob, concentration })
    }

    /// Noise-free model: no flips, one-hot scores.
    pub fn noiseless(seed: u64) -> Self {
        SyntheticNoiseModel { seed, flip_prob: 0.0, concentration: f64::INFINITY }
    }

    fn rng(&self, frame_id: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed, frame_id))
    }

    fn draw_peak(&self, rng: &mut ChaCha8Rng, true_class: Class) -> Class {
        let flip = rng.gen::<f64>() < self.flip_prob;
        let pick = rng.gen_range(0..3usize);
        if !flip {
            return true_class;
        }
        let others: Vec<Class> = Class::ALL.into_iter().filter(|&c| c != true_class).collect();
        others[pick]
    }

    /// The class the scores for this frame are peaked at.
    pub fn dominant_class(&self, frame_id: u64, true_class: Class) -> Class {
        self.draw_peak(&mut self.rng(frame_id), true_class)
    }

    pub fn scores(&self, frame_id: u64, true_class: Class) -> ClassScores {
        let mut rng = self.rng(frame_id);
        let peak = self.draw_peak(&mut rng, true_class);
        if self.concentration.is_infinite() {
            return ClassScores::one_hot(peak);
        }
        let mut raw = [0.0; 4];
        for slot in raw.iter_mut() {
            *slot = rng.gen::<f64>();
        }
        raw[peak.index()] = self.concentration * (1.0 + raw[peak.index()]);
        ClassScores::from_unnormalized(raw).expect("positive synthetic weights normalize")
    }
}

impl ScoreProvider for SyntheticNoiseModel {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Synthetic
    }

    fn score_frame(&self, frame_id: u64, true_class: Option<Class>) -> Result<ClassScores, ClassifierError> {
        let class = true_class.ok_or(ClassifierError::MissingTruth(frame_id))?;
        Ok(self.scores(frame_id, class))
    }
}

/// Builds the locator of a synthetic frame.
pub fn synthetic_image_ref(class: Class, frame_id: u64) -> String {
    format!("{SYNTHETIC_TAG}:{}:{frame_id}", class.name())
}

/// True class carried by a synthetic frame locator.
pub fn synthetic_frame_class(image_ref: &str) -> Option<Class> {
    let mut parts = image_ref.split(':');
    match (parts.next(), parts.next()) {
        (Some(SYNTHETIC_TAG), Some(class)) => Class::parse(class),
        _ => None,
    }
}

/// Scores every frame of a window, in window order.
///
/// `truth` supplies per-frame true classes for providers that need them.
pub fn score_detection(
    provider: &dyn ScoreProvider,
    window: &DetectionWindow,
    truth: Option<&BTreeMap<u64, Class>>,
) -> Result<Vec<DetectionImageRecord>, ClassifierError> {
    if window.frames.is_empty() {
        return Err(ClassifierError::EmptyWindow(window.detection_id));
    }
    window
        .frames
        .iter()
        .enumerate()
        .map(|(image_count, f)| {
            let true_class = truth.and_then(|t| t.get(&f.frame_id).copied());
            Ok(DetectionImageRecord {
                image_count,
                scores: provider.score_frame(f.frame_id, true_class)?,
                frame_id: f.frame_id,
                length_weight: f.length_weight,
            })
        })
        .collect()
}
