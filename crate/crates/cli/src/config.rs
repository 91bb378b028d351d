//! Experiment configuration: one JSON document covering generation, data
//! collection, the solver and the emitted curves.
//!
//! All randomness flows from the single root `seed` through named
//! sub-streams so components replay independently:
//!
//! * MDP/policy generation:  `seed`
//! * feature generation:     `seed + 1`
//! * topology generation:    `seed + 2`
//! * prior-noise draw:       `seed + 5`
//! * agent `k` trajectory:   `seed + 10 + k`
//! * solver shuffling:       `seed` (per-agent ChaCha streams)
//! * curve trial `t`:        `seed + 40_000 + t`

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const MDP_SEED_OFFSET: u64 = 0;
pub const FEATURES_SEED_OFFSET: u64 = 1;
pub const TOPOLOGY_SEED_OFFSET: u64 = 2;
pub const PRIOR_NOISE_SEED_OFFSET: u64 = 5;
pub const DATA_SEED_OFFSET: u64 = 10;
pub const TRIAL_SEED_OFFSET: u64 = 40_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GridPartition,
    RandomMarl,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpConfig {
    /// `grid` or `random`.
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub states: usize,
    pub actions: usize,
    pub p_zero_trans: f64,
    pub p_zero_reward: f64,
    pub reward_sd: f64,
    pub gamma: f64,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            kind: "grid".into(),
            width: 6,
            height: 6,
            states: 20,
            actions: 4,
            p_zero_trans: 0.9,
            p_zero_reward: 0.95,
            reward_sd: 5.0,
            gamma: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// `rbf` (grid MDPs only) or `random`.
    pub kind: String,
    /// Feature dimension for `random` features.
    pub dim: usize,
    /// RBF center lattice.
    pub rbf_nx: usize,
    pub rbf_ny: usize,
    /// The conventional decaying RBF exponent. Switching this off evaluates
    /// the growing-exponent variant instead.
    pub rbf_negative_exponent: bool,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            kind: "random".into(),
            dim: 10,
            rbf_nx: 3,
            rbf_ny: 3,
            rbf_negative_exponent: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub nx: usize,
    pub ny: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { nx: 2, ny: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// `ring`, `complete`, `geometric` or `random`.
    pub kind: String,
    pub agents: usize,
    /// Neighbor radius of the geometric graph on the unit square.
    pub radius: f64,
    /// Edge probability of the uniform random graph.
    pub edge_prob: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            kind: "ring".into(),
            agents: 4,
            radius: 0.27,
            edge_prob: 0.4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub samples_per_agent: usize,
    pub burn_in: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples_per_agent: 1 << 11,
            burn_in: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub mu_theta: f64,
    pub mu_omega: f64,
    pub eta: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub batches: usize,
    /// `identity` or `c_hat`.
    pub u_mode: String,
    pub max_epochs: usize,
    pub tol: f64,
    /// `zeros` or `exact-plus-noise` (the exact regularization-free
    /// minimizer plus uniform noise).
    pub theta_p: String,
    pub theta_p_noise_variance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            mu_theta: 0.15,
            mu_omega: 1.5,
            eta: 0.0,
            lambda: 0.6,
            horizon: 10,
            batches: 8,
            u_mode: "identity".into(),
            max_epochs: 40_000,
            tol: 1e-13,
            theta_p: "zeros".into(),
            theta_p_noise_variance: 2.5e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesConfig {
    pub enabled: bool,
    pub lambda_grid: Vec<f64>,
    pub trials: usize,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lambda_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            trials: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `batches` or `lambda`.
    pub parameter: String,
    pub values: Vec<f64>,
    /// Convergence target used when sweeping mini-batch counts.
    pub target_error: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: "batches".into(),
            values: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            target_error: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub mdp: MdpConfig,
    pub features: FeaturesConfig,
    pub partition: PartitionConfig,
    pub topology: TopologyConfig,
    pub data: DataConfig,
    pub solver: SolverSection,
    pub curves: CurvesConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::GridPartition,
            seed: 2024,
            mdp: MdpConfig::default(),
            features: FeaturesConfig::default(),
            partition: PartitionConfig::default(),
            topology: TopologyConfig::default(),
            data: DataConfig::default(),
            solver: SolverSection::default(),
            curves: CurvesConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale grid-partition experiment (the default).
    pub fn desk_grid() -> Self {
        Self::default()
    }

    /// Desk-scale global-state/local-reward experiment.
    pub fn desk_marl() -> Self {
        let mut cfg = Self::default();
        cfg.experiment = ExperimentKind::RandomMarl;
        cfg.seed = 77;
        cfg.mdp.kind = "random".into();
        cfg.mdp.states = 20;
        cfg.mdp.actions = 4;
        cfg.mdp.gamma = 0.93;
        cfg.features.dim = 5;
        cfg.topology.kind = "geometric".into();
        cfg.topology.agents = 5;
        cfg.topology.radius = 0.6;
        cfg.data.samples_per_agent = 1 << 12;
        cfg.solver.mu_theta = 0.2;
        cfg.solver.mu_omega = 2.0;
        cfg.solver.lambda = 0.5;
        cfg.solver.batches = 4;
        cfg.solver.eta = 1e-3;
        cfg.solver.theta_p = "exact-plus-noise".into();
        cfg
    }

    /// Full-size variants: the 15x15 grid with 9 region agents and RBF
    /// features, or the 50-state random MDP with 15 geometric agents.
    pub fn full_scale(mut self) -> Self {
        match self.experiment {
            ExperimentKind::GridPartition | ExperimentKind::Custom => {
                self.mdp.width = 15;
                self.mdp.height = 15;
                self.partition = PartitionConfig { nx: 3, ny: 3 };
                self.topology.kind = "ring".into();
                self.topology.agents = 9;
                self.features.kind = "rbf".into();
                self.features.rbf_nx = 5;
                self.features.rbf_ny = 5;
                self.solver.horizon = 20;
                self.solver.eta = 0.0;
                self.data.samples_per_agent = (1 << 15) + self.solver.horizon - 1;
                self.solver.batches = 1 << 10;
            }
            ExperimentKind::RandomMarl => {
                self.mdp.states = 50;
                self.mdp.actions = 10;
                self.mdp.p_zero_trans = 0.98;
                self.mdp.p_zero_reward = 0.99;
                self.mdp.reward_sd = 10.0;
                self.mdp.gamma = 0.93;
                self.features.dim = 5;
                self.topology.agents = 15;
                self.topology.radius = 0.27;
                self.solver.horizon = 20;
                self.solver.eta = 1e-3;
                self.data.samples_per_agent = (1 << 18) + self.solver.horizon - 1;
                self.solver.batches = 1 << 12;
            }
        }
        self
    }

    pub fn num_agents(&self) -> usize {
        match self.experiment {
            ExperimentKind::GridPartition => self.partition.nx * self.partition.ny,
            _ => self.topology.agents,
        }
    }

    pub fn u_mode(&self) -> Result<fdpe::estimators::UMode> {
        match self.solver.u_mode.as_str() {
            "identity" => Ok(fdpe::estimators::UMode::Identity),
            "c_hat" => Ok(fdpe::estimators::UMode::CHat),
            other => bail!("unknown u_mode {other:?} (expected identity or c_hat)"),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("parsing experiment config")
    }

    /// Applies `key.path=value` overrides. Values parse as JSON first and
    /// fall back to strings, so `--set solver.lambda=0.8` and
    /// `--set mdp.kind=random` both work.
    pub fn apply_overrides(self, sets: &[String]) -> Result<Self> {
        if sets.is_empty() {
            return Ok(self);
        }
        let mut value = serde_json::to_value(&self).context("config to value")?;
        for entry in sets {
            let (path, raw) = entry
                .split_once('=')
                .with_context(|| format!("override {entry:?} must look like key.path=value"))?;
            let parsed: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let segments: Vec<&str> = path.split('.').collect();
            let (last, parents) = segments.split_last().expect("split_once yields a path");
            let parent_pointer = if parents.is_empty() {
                String::new()
            } else {
                format!("/{}", parents.join("/"))
            };
            let parent = value
                .pointer_mut(&parent_pointer)
                .and_then(|v| v.as_object_mut())
                .with_context(|| format!("override path {path:?}: no such section"))?;
            if !parent.contains_key(*last) {
                bail!("override path {path:?}: unknown key {last:?}");
            }
            parent.insert(last.to_string(), parsed);
        }
        serde_json::from_value(value).context("config after overrides")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_reject_unknown_keys() {
        let cfg = ExperimentConfig::default()
            .apply_overrides(&["solver.lambda=0.8".into(), "mdp.kind=random".into()])
            .unwrap();
        assert_eq!(cfg.solver.lambda, 0.8);
        assert_eq!(cfg.mdp.kind, "random");
        assert!(ExperimentConfig::default()
            .apply_overrides(&["solver.bogus=1".into()])
            .is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = ExperimentConfig::desk_marl();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }
}
