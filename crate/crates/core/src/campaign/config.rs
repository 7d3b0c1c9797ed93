use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::benchmarks::by_name;
use crate::bo::{BoSettings, Method};

/// One campaign: a benchmark, a method and a list of seeds sharing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub method: Method,
    pub n_init: usize,
    pub iterations: usize,
    /// Scenario count `S`.
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    #[serde(default = "default_starts")]
    pub n_starts: usize,
    #[serde(default = "default_starts")]
    pub gp_starts: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

fn default_scenarios() -> usize {
    25
}
fn default_starts() -> usize {
    100
}
fn default_beta() -> f64 {
    2.0
}
fn default_epsilon() -> f64 {
    1e-6
}

impl ExperimentConfig {
    pub fn new(benchmark: &str, method: Method, n_init: usize, iterations: usize, seeds: Vec<u64>, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            benchmark: benchmark.to_string(),
            method,
            n_init,
            iterations,
            scenarios: default_scenarios(),
            n_starts: default_starts(),
            gp_starts: default_starts(),
            beta: default_beta(),
            epsilon: default_epsilon(),
            seeds,
            output_dir: output_dir.into(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CampaignError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CampaignError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CampaignError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Collects every problem rather than stopping at the first.
    pub fn validate(&self) -> Result<(), CampaignError> {
        let mut problems = Vec::new();
        if let Err(e) = by_name(&self.benchmark) {
            problems.push(e.to_string());
        }
        for (name, v) in [("n_init", self.n_init), ("scenarios", self.scenarios), ("n_starts", self.n_starts), ("gp_starts", self.gp_starts)] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            problems.push(format!("beta must be finite and non-negative, got {}", self.beta));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            problems.push(format!("epsilon must be finite and positive, got {}", self.epsilon));
        }
        if self.seeds.is_empty() {
            problems.push("at least one seed is required".into());
        }
        let mut seen = HashSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                problems.push(format!("seed {s} appears more than once"));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            problems.push("output_dir is empty".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CampaignError::Config(problems.join("; ")))
        }
    }

    pub fn settings(&self) -> BoSettings {
        BoSettings {
            n_init: self.n_init,
            iterations: self.iterations,
            scenarios: self.scenarios,
            n_starts: self.n_starts,
            gp_starts: self.gp_starts,
            beta: self.beta,
            epsilon: self.epsilon,
            ..Default::default()
        }
    }

    pub fn csv_path(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed-{seed}.csv"))
    }

    pub fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed-{seed}.checkpoint.json"))
    }
}
