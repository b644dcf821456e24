//! Settings from defaults, an optional TOML file and flags, in that order
//! of increasing precedence.

use std::fs;
use std::time::{SystemTime, UNIX_EPOCH};

use gta_core::classifier::SyntheticNoiseModel;
use gta_core::decision::DecisionConfig;
use gta_core::kinematics::WindowConfig;
use gta_core::metrics::EffortModel;
use gta_core::pipeline::PipelineConfig;
use serde::Deserialize;

use crate::args::{Options, Provider};
use crate::CliError;

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub flip_prob: f64,
    pub concentration: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = SyntheticNoiseModel::default();
        SyntheticSection { flip_prob: d.flip_prob, concentration: d.concentration }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub decision: DecisionConfig,
    pub window: WindowConfig,
    pub effort: EffortModel,
    pub synthetic: SyntheticSection,
    pub provider: Option<Provider>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub effort: EffortModel,
    pub synthetic: SyntheticNoiseModel,
    pub provider: Provider,
    pub jobs: usize,
    pub generated_at: u64,
}

impl Settings {
    pub fn resolve(opts: &Options) -> Result<Settings, CliError> {
        let file = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let mut decision = file.decision;
        if let Some(t) = opts.lc_threshold {
            decision.lc_threshold = t;
        }
        if opts.length_weighted {
            decision.length_weighted_average = true;
        }
        decision.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        file.effort.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let seed = opts.seed.or(file.seed).unwrap_or(0);
        let synthetic = SyntheticNoiseModel::new(seed, file.synthetic.flip_prob, file.synthetic.concentration)
            .map_err(|e| CliError::Usage(e.to_string()))?;

        let jobs = opts.jobs.or(file.jobs).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        let generated_at = opts
            .pin_timestamp
            .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));

        Ok(Settings {
            pipeline: PipelineConfig { decision, window: file.window },
            effort: file.effort,
            synthetic,
            provider: opts.provider.or(file.provider).unwrap_or(Provider::Auto),
            jobs,
            generated_at,
        })
    }
}
