//! Experiment configuration: a strict JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::closure::ClosureParams;
use crate::cluster_scan::TrackerConfig;
use crate::infometrics::{BiasCorrection, Combiner, DEFAULT_EXACT_LIMIT};
use crate::population::{MAX_AGENTS, MAX_ALPHABET, MIN_WINDOW};

/// Deepest stratum a run may promote to.
pub const MAX_STRATA: usize = 3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    Disparate {
        n: usize,
    },
    Redundant {
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strength: Option<f64>,
    },
    Modular {
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        blocks: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block_sizes: Option<Vec<usize>>,
        w_in: f64,
        #[serde(default)]
        w_out: f64,
    },
    Ring {
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strength: Option<f64>,
    },
    Custom {
        path: PathBuf,
    },
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::Modular { n: 10, blocks: Some(2), block_sizes: None, w_in: 0.9, w_out: 0.0 }
    }
}

impl ScenarioSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ScenarioSpec::Disparate { .. } => "disparate",
            ScenarioSpec::Redundant { .. } => "redundant",
            ScenarioSpec::Modular { .. } => "modular",
            ScenarioSpec::Ring { .. } => "ring",
            ScenarioSpec::Custom { .. } => "custom",
        }
    }

    /// Population size, when it is known without reading a matrix file.
    pub fn n(&self) -> Option<usize> {
        match self {
            ScenarioSpec::Disparate { n }
            | ScenarioSpec::Redundant { n, .. }
            | ScenarioSpec::Modular { n, .. }
            | ScenarioSpec::Ring { n, .. } => Some(*n),
            ScenarioSpec::Custom { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub bias_correction: BiasCorrection,
    /// Divide CI by its mean over time-shuffled surrogates.
    pub surrogate_ci: bool,
    pub surrogate_shuffles: usize,
    pub exact_limit: usize,
    pub oc_budget: usize,
    pub greedy_budget: usize,
    pub combiner: Combiner,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            bias_correction: BiasCorrection::None,
            surrogate_ci: false,
            surrogate_shuffles: 20,
            exact_limit: DEFAULT_EXACT_LIMIT,
            oc_budget: 500,
            greedy_budget: 5000,
            combiner: Combiner::GeometricMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub alphabet: usize,
    pub noise: f64,
    /// Apply topology reinforcement in each structure phase.
    pub reinforce: bool,
    pub eta: f64,
    pub decay: f64,
    pub w_max: f64,
    pub window: usize,
    /// Ticks between structure phases; `None` means a quarter window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cadence: Option<usize>,
    pub theta: f64,
    pub theta_promote: f64,
    pub tau_promote: usize,
    pub strata_cap: usize,
    pub ticks: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub estimator: EstimatorConfig,
    pub closure: ClosureParams,
    pub identity: TrackerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioSpec::default(),
            alphabet: 2,
            noise: 0.05,
            reinforce: true,
            eta: 0.1,
            decay: 0.02,
            w_max: 1.0,
            window: 4096,
            cadence: None,
            theta: 2.0,
            theta_promote: 2.0,
            tau_promote: 3,
            strata_cap: 1,
            ticks: 20000,
            seed: 0,
            out: None,
            estimator: EstimatorConfig::default(),
            closure: ClosureParams::default(),
            identity: TrackerConfig::default(),
        }
    }
}

fn unit_open(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        invalid(format!("{name} must lie in (0, 1), got {v}"))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        // matrix paths are relative to the config file
        if let ScenarioSpec::Custom { path: m } = &mut cfg.scenario {
            if m.is_relative() {
                if let Some(dir) = path.parent() {
                    *m = dir.join(&*m);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cadence(&self) -> usize {
        self.cadence.unwrap_or((self.window / 4).max(1))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(2..=MAX_ALPHABET).contains(&self.alphabet) {
            return invalid(format!("alphabet must be 2..={MAX_ALPHABET}, got {}", self.alphabet));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return invalid(format!("noise must lie in [0, 1], got {}", self.noise));
        }
        unit_open("eta", self.eta)?;
        unit_open("decay", self.decay)?;
        if !(self.w_max > 0.0 && self.w_max.is_finite()) {
            return invalid(format!("w_max must be positive, got {}", self.w_max));
        }
        if self.window < MIN_WINDOW {
            return invalid(format!("window must be at least {MIN_WINDOW}, got {}", self.window));
        }
        if self.cadence == Some(0) {
            return invalid("cadence must be positive");
        }
        for (name, v) in [("theta", self.theta), ("theta_promote", self.theta_promote)] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if self.tau_promote == 0 {
            return invalid("tau_promote must be at least 1");
        }
        if self.strata_cap > MAX_STRATA {
            return invalid(format!("strata_cap is capped at {MAX_STRATA}, got {}", self.strata_cap));
        }
        let e = &self.estimator;
        if e.exact_limit > 20 {
            return invalid(format!("exact_limit above 20 is not supported, got {}", e.exact_limit));
        }
        if e.oc_budget == 0 {
            return invalid("oc_budget must be positive");
        }
        if e.surrogate_ci && e.surrogate_shuffles == 0 {
            return invalid("surrogate_shuffles must be positive when surrogate_ci is on");
        }
        let c = &self.closure;
        if c.lag == 0 {
            return invalid("closure lag must be at least 1");
        }
        if !(c.eps_edge >= 0.0 && c.eps_edge.is_finite()) {
            return invalid(format!("eps_edge must be nonnegative, got {}", c.eps_edge));
        }
        let id = &self.identity;
        if !(id.jaccard > 0.0 && id.jaccard <= 1.0) {
            return invalid(format!("identity jaccard must lie in (0, 1], got {}", id.jaccard));
        }
        if id.stable == 0 {
            return invalid("identity stable must be at least 1");
        }
        self.validate_scenario()
    }

    fn validate_scenario(&self) -> Result<(), ConfigError> {
        if let Some(n) = self.scenario.n() {
            if !(2..=MAX_AGENTS).contains(&n) {
                return invalid(format!("n must be 2..={MAX_AGENTS}, got {n}"));
            }
            if n > self.estimator.exact_limit && self.estimator.greedy_budget < n * n {
                return invalid(format!(
                    "greedy_budget {} is below n^2 = {}",
                    self.estimator.greedy_budget,
                    n * n
                ));
            }
        }
        let weight_ok = |name: &str, w: f64| {
            if (0.0..=self.w_max).contains(&w) {
                Ok(())
            } else {
                invalid(format!("{name} must lie in [0, w_max], got {w}"))
            }
        };
        match &self.scenario {
            ScenarioSpec::Redundant { strength, .. } | ScenarioSpec::Ring { strength, .. } => {
                if let Some(s) = strength {
                    weight_ok("strength", *s)?;
                }
            }
            ScenarioSpec::Modular { n, blocks, block_sizes, w_in, w_out } => {
                weight_ok("w_in", *w_in)?;
                weight_ok("w_out", *w_out)?;
                if w_out >= w_in {
                    return invalid(format!("w_out ({w_out}) must be below w_in ({w_in})"));
                }
                block_partition(*n, *blocks, block_sizes.as_deref())
                    .map_err(ConfigError::Invalid)?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of this config without its output
    /// directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Block sizes from either an equal block count or explicit sizes.
pub fn block_partition(
    n: usize,
    blocks: Option<usize>,
    sizes: Option<&[usize]>,
) -> Result<Vec<usize>, String> {
    match (blocks, sizes) {
        (Some(_), Some(_)) => Err("give either blocks or block_sizes, not both".into()),
        (None, None) => Err("modular scenario needs blocks or block_sizes".into()),
        (Some(b), None) => {
            if b == 0 || !n.is_multiple_of(b) {
                Err(format!("{n} agents cannot be split into {b} equal blocks"))
            } else {
                Ok(vec![n / b; b])
            }
        }
        (None, Some(s)) => {
            if s.is_empty() || s.contains(&0) {
                Err("block sizes must be positive".into())
            } else if s.iter().sum::<usize>() != n {
                Err(format!("block sizes sum to {}, expected {n}", s.iter().sum::<usize>()))
            } else {
                Ok(s.to_vec())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.cadence(), 1024);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"nosie": 0.1}"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"scenario": {"kind": "ring", "n": 5, "blocks": 2}}"#
        )
        .is_err());
        assert!(ExperimentConfig::from_json(r#"{"closure": {"lags": 2}}"#).is_err());
    }

    #[test]
    fn ranges_checked() {
        for bad in [
            r#"{"noise": 1.5}"#,
            r#"{"eta": 0}"#,
            r#"{"window": 10}"#,
            r#"{"strata_cap": 4}"#,
            r#"{"alphabet": 1}"#,
            r#"{"closure": {"lag": 0}}"#,
            r#"{"scenario": {"kind": "modular", "n": 10, "blocks": 3, "w_in": 0.9}}"#,
            r#"{"scenario": {"kind": "modular", "n": 10, "blocks": 2, "w_in": 0.5, "w_out": 0.5}}"#,
            r#"{"scenario": {"kind": "disparate", "n": 1}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(ConfigError::Invalid(_))), "{bad}");
        }
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { out: Some("elsewhere".into()), ..a.clone() };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn partitions() {
        assert_eq!(block_partition(10, Some(2), None).unwrap(), vec![5, 5]);
        assert_eq!(block_partition(10, None, Some(&[3, 7])).unwrap(), vec![3, 7]);
        assert!(block_partition(10, None, Some(&[3, 6])).is_err());
        assert!(block_partition(10, Some(2), Some(&[5, 5])).is_err());
    }
}
