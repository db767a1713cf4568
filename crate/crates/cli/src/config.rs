//! JSON configuration files, one schema per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use conslaw_core::closure::ClosureForm;
use conslaw_core::data::{Benchmark, GenerationPlan};
use conslaw_core::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::CliError;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// A simulation setup: a named preset or a full plan.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSource {
    #[serde(default)]
    pub preset: Option<Benchmark>,
    #[serde(default)]
    pub plan: Option<GenerationPlan>,
}

impl PlanSource {
    pub fn resolve(&self) -> Result<GenerationPlan, CliError> {
        let plan = match (&self.preset, &self.plan) {
            (Some(b), None) => GenerationPlan::preset(*b),
            (None, Some(p)) => p.clone(),
            _ => return Err(CliError::Config("give exactly one of \"preset\" and \"plan\"".into())),
        };
        plan.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    #[serde(flatten)]
    pub source: PlanSource,
    /// Which of the plan's initial conditions to run.
    #[serde(default)]
    pub initial_condition: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    #[serde(flatten)]
    pub source: PlanSource,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub dataset: PathBuf,
    pub form: ClosureForm,
    #[serde(default)]
    pub training: TrainConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub dataset: PathBuf,
    pub params: PathBuf,
    #[serde(default)]
    pub initial_condition: usize,
}

fn default_grid() -> usize {
    101
}

fn default_fraction() -> f64 {
    conslaw_core::sampling::INTERIOR_FRACTION
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub dataset: PathBuf,
    pub params: PathBuf,
    /// Points per axis.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Fraction of the data hull sampled, about its center.
    #[serde(default = "default_fraction")]
    pub hull_fraction: f64,
}

/// Paths in a config are taken relative to the config file.
pub fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config.parent().map_or_else(|| p.to_path_buf(), |dir| dir.join(p))
}
