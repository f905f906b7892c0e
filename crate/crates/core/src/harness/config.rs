//! Flat TOML experiment configuration.

use serde::{Deserialize, Serialize};

use crate::contribution::ShapleyMode;
use crate::error::{Error, Result};
use crate::fedsim::data::{DEFAULT_SEPARATION, DEFAULT_TEST_PER_CLASS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Fairfedcs,
    Random,
    Greedy,
    Rbcsf,
    RbffProxy,
    Ablation,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Fairfedcs,
        Policy::Random,
        Policy::Greedy,
        Policy::Rbcsf,
        Policy::RbffProxy,
        Policy::Ablation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Fairfedcs => "fairfedcs",
            Policy::Random => "random",
            Policy::Greedy => "greedy",
            Policy::Rbcsf => "rbcsf",
            Policy::RbffProxy => "rbff_proxy",
            Policy::Ablation => "ablation",
        }
    }

    /// Human-facing label used in report tables.
    pub fn label(&self) -> &'static str {
        match self {
            Policy::Fairfedcs => "FairFedCS",
            Policy::Random => "Random",
            Policy::Greedy => "Greedy",
            Policy::Rbcsf => "RBCS-F (queue only)",
            Policy::RbffProxy => "RBFF (proxy)",
            Policy::Ablation => "Ablation",
        }
    }

    pub fn uses_queues(&self) -> bool {
        matches!(self, Policy::Fairfedcs | Policy::Rbcsf | Policy::Ablation)
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown policy `{s}`, expected one of {}",
                    Policy::ALL.map(|p| p.name()).join(", ")
                ))
            })
    }
}

fn d_n_clients() -> usize {
    40
}
fn d_m() -> usize {
    4
}
fn d_sigma() -> f64 {
    0.6
}
fn d_p_minority() -> f64 {
    0.10
}
fn d_n_classes() -> usize {
    10
}
fn d_feature_dim() -> usize {
    16
}
fn d_samples() -> usize {
    1100
}
fn d_lr() -> f64 {
    0.05
}
fn d_epochs() -> usize {
    1
}
fn d_batch() -> usize {
    32
}
fn d_shapley_mode() -> ShapleyMode {
    ShapleyMode::Exact
}
fn d_permutations() -> usize {
    200
}
fn d_max_rounds() -> usize {
    500
}
fn d_patience() -> usize {
    20
}
fn d_separation() -> f64 {
    DEFAULT_SEPARATION
}
fn d_test_per_class() -> usize {
    DEFAULT_TEST_PER_CLASS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: u8,
    pub policy: Policy,
    pub seed: u64,
    #[serde(default = "d_n_clients")]
    pub n_clients: usize,
    #[serde(default = "d_m")]
    pub m: usize,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_override: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default = "d_p_minority")]
    pub p_minority: f64,
    #[serde(default = "d_n_classes")]
    pub n_classes: usize,
    #[serde(default = "d_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "d_samples")]
    pub samples_per_client: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_shapley_mode")]
    pub shapley_mode: ShapleyMode,
    #[serde(default = "d_permutations")]
    pub shapley_permutations: usize,
    #[serde(default)]
    pub truncation_tol: f64,
    #[serde(default = "d_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    /// Class-mean distance of the synthetic mixture.
    #[serde(default = "d_separation")]
    pub class_separation: f64,
    #[serde(default = "d_test_per_class")]
    pub test_samples_per_class: usize,
    /// Weight aggregation by client sample counts instead of a plain mean.
    #[serde(default)]
    pub weighted_aggregation: bool,
}

impl ExperimentConfig {
    /// Defaults everywhere except the three required keys.
    pub fn new(scenario: u8, policy: Policy, seed: u64) -> Self {
        Self {
            scenario,
            policy,
            seed,
            n_clients: d_n_clients(),
            m: d_m(),
            sigma: d_sigma(),
            epsilon_override: None,
            eta: None,
            p_minority: d_p_minority(),
            n_classes: d_n_classes(),
            feature_dim: d_feature_dim(),
            samples_per_client: d_samples(),
            lr: d_lr(),
            epochs: d_epochs(),
            batch_size: d_batch(),
            shapley_mode: d_shapley_mode(),
            shapley_permutations: d_permutations(),
            truncation_tol: 0.0,
            max_rounds: d_max_rounds(),
            patience: d_patience(),
            class_separation: d_separation(),
            test_samples_per_class: d_test_per_class(),
            weighted_aggregation: false,
        }
    }

    /// `epsilon_override`, else `m / N`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon_override
            .unwrap_or(self.m as f64 / self.n_clients as f64)
    }

    /// `eta`, else `m / N`.
    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(self.m as f64 / self.n_clients as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !matches!(self.scenario, 1 | 2) {
            return bad(format!("scenario must be 1 or 2, got {}", self.scenario));
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed = {} exceeds the largest TOML integer", self.seed));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.m > self.n_clients {
            return bad(format!(
                "m = {} exceeds n_clients = {}",
                self.m, self.n_clients
            ));
        }
        if self.scenario == 1 && !self.n_clients.is_multiple_of(10) {
            return bad(format!(
                "n_clients = {} must be a multiple of 10 for scenario 1",
                self.n_clients
            ));
        }
        if self.scenario == 2 && self.n_clients < 4 {
            return bad(format!("n_clients = {} must be at least 4 for scenario 2", self.n_clients));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma = {} must be positive", self.sigma));
        }
        for (key, v) in [("epsilon_override", self.epsilon_override), ("eta", self.eta)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("{key} = {v} must lie in [0, 1]"));
                }
            }
        }
        if !(0.0..1.0).contains(&self.p_minority) {
            return bad(format!("p_minority = {} must lie in [0, 1)", self.p_minority));
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes = {} must be at least 2", self.n_classes));
        }
        if self.feature_dim < self.n_classes {
            return bad(format!(
                "feature_dim = {} must be at least n_classes = {}",
                self.feature_dim, self.n_classes
            ));
        }
        if self.samples_per_client == 0 {
            return bad("samples_per_client must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.shapley_permutations == 0 {
            return bad("shapley_permutations must be at least 1".into());
        }
        if !(self.truncation_tol.is_finite() && self.truncation_tol >= 0.0) {
            return bad(format!("truncation_tol = {} must be non-negative", self.truncation_tol));
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return bad(format!("class_separation = {} must be positive", self.class_separation));
        }
        if self.test_samples_per_class == 0 {
            return bad("test_samples_per_class must be at least 1".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Parses a configuration document, applies defaults and checks every
/// invariant. Unknown keys are rejected by name.
pub fn parse_and_validate(config_text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(config_text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a configuration after forcing some keys, as sweeps do for `policy`
/// and `seed`.
pub fn parse_with_overrides(config_text: &str, overrides: &[(&str, toml::Value)]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = config_text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    for (k, v) in overrides {
        table.insert((*k).to_string(), v.clone());
    }
    let cfg: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
