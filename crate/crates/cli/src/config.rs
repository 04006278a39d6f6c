//! Run configuration. Every section has defaults; unknown keys are rejected.
//! Command-line flags override the file.

use std::path::{Path, PathBuf};

use loadinv_core::clm::FaultSpec;
use loadinv_core::diffusion::{Schedule, Start, TrainConfig};
use loadinv_core::evaluate::OodConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Full,
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub profile: Profile,
    /// Events simulated for every record; the first is the single-event
    /// conditioning used by CDI and the baseline.
    pub events: Vec<FaultSpec>,
    pub data: DataConfig,
    pub sobol: SobolConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub baseline: TrainConfig,
    pub infer: InferConfig,
    pub ood: OodConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            out: PathBuf::from("runs/default"),
            profile: Profile::Full,
            events: FaultSpec::standard_events(),
            data: DataConfig::default(),
            sobol: SobolConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            baseline: TrainConfig::default(),
            infer: InferConfig::default(),
            ood: OodConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_records: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_records: 30_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SobolConfig {
    pub n: usize,
}

impl Default for SobolConfig {
    fn default() -> Self {
        Self { n: 1024 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: Schedule::STEPS, beta_start: Schedule::BETA_START, beta_end: Schedule::BETA_END }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> loadinv_core::Result<Schedule> {
        Schedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    /// Held-out truth records, taken from the front of the test split.
    pub truths: usize,
    /// Posterior samples per truth.
    pub samples: usize,
    /// Reverse-chain start distribution; `"marginal"` matches the forward
    /// process at step `T` instead of `N(0, I)`.
    #[serde(skip_serializing_if = "Start::is_standard")]
    pub start: Start,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { truths: 200, samples: 1000, start: Start::Standard }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.events.is_empty() {
            return usage("at least one event is required".into());
        }
        for e in &self.events {
            e.validate().map_err(|err| CliError::Usage(err.to_string()))?;
        }
        if self.data.n_records < 6 {
            return usage("data.n_records must be at least 6".into());
        }
        if self.sobol.n == 0 || self.infer.samples == 0 || self.infer.truths == 0 {
            return usage("sobol.n, infer.truths and infer.samples must be positive".into());
        }
        for t in [&self.train, &self.baseline] {
            if t.batch_size == 0 || t.max_epochs == 0 || !(t.lr > 0.0) {
                return usage("training budget and learning rate must be positive".into());
            }
        }
        self.schedule.build().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn event_labels(&self) -> Vec<String> {
        self.events.iter().map(|e| e.label.as_str().to_string()).collect()
    }
}
