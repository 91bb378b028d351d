//! Shared experiment construction: everything the subcommands need is built
//! deterministically from one `ExperimentConfig`.

use std::collections::HashSet;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fdpe::estimators::{aggregate, batch_estimates, EstimateSet};
use fdpe::features::{lattice_centers, random_features, rbf_grid_features, FeatureMap};
use fdpe::mdp::{grid_mdp, induce_chain, invariant_distribution, random_mdp, MarkovChain, Mdp, Policy};
use fdpe::network::{metropolis, random_geometric, Graph, Topology};
use fdpe::oracle::{exact_abc, theta_o};
use fdpe::sampler::{
    collect_with, grid_partition, marl_reward_streams, restricted_policy, CollectOptions,
    Dataset, StartState,
};
use fdpe::solver::SolverConfig;

use crate::config::{
    ExperimentConfig, ExperimentKind, DATA_SEED_OFFSET, FEATURES_SEED_OFFSET, MDP_SEED_OFFSET,
    PRIOR_NOISE_SEED_OFFSET, TOPOLOGY_SEED_OFFSET,
};

pub struct BuiltExperiment {
    pub mdp: Mdp<f64>,
    pub target: Policy<f64>,
    pub features: FeatureMap<f64>,
    pub topology: Topology<f64>,
    pub regions: Option<Vec<HashSet<usize>>>,
    pub behaviors: Vec<Policy<f64>>,
    pub datasets: Vec<Dataset<f64>>,
    /// Per-agent local reward models in the global-state/local-reward
    /// setting (same transitions as the global MDP).
    pub local_rewards: Option<Vec<Mdp<f64>>>,
    pub solver_config: SolverConfig<f64>,
    pub chain: MarkovChain<f64>,
    /// Aggregate state weighting used by the exact oracles.
    pub weighting: DVector<f64>,
    pub theta_star: DVector<f64>,
    pub support_violations: usize,
}

pub fn build_mdp(cfg: &ExperimentConfig) -> Result<(Mdp<f64>, Policy<f64>)> {
    let seed = cfg.seed + MDP_SEED_OFFSET;
    match cfg.mdp.kind.as_str() {
        "grid" => Ok(grid_mdp(cfg.mdp.width, cfg.mdp.height, cfg.mdp.gamma, seed)?),
        "random" => Ok(random_mdp(
            cfg.mdp.states,
            cfg.mdp.actions,
            cfg.mdp.p_zero_trans,
            cfg.mdp.p_zero_reward,
            cfg.mdp.reward_sd,
            cfg.mdp.gamma,
            seed,
        )?),
        other => bail!("unknown mdp.kind {other:?} (expected grid or random)"),
    }
}

pub fn build_features(cfg: &ExperimentConfig, num_states: usize) -> Result<FeatureMap<f64>> {
    match cfg.features.kind.as_str() {
        "rbf" => {
            if cfg.mdp.kind != "grid" {
                bail!("rbf features require a grid MDP");
            }
            let centers =
                lattice_centers(cfg.mdp.width, cfg.mdp.height, cfg.features.rbf_nx, cfg.features.rbf_ny);
            Ok(rbf_grid_features(
                cfg.mdp.width,
                cfg.mdp.height,
                &centers,
                cfg.features.rbf_negative_exponent,
            )?)
        }
        "random" => Ok(random_features(
            num_states,
            cfg.features.dim,
            cfg.seed + FEATURES_SEED_OFFSET,
        )?),
        other => bail!("unknown features.kind {other:?} (expected rbf or random)"),
    }
}

pub fn build_topology(cfg: &ExperimentConfig) -> Result<Topology<f64>> {
    let k = cfg.num_agents();
    let seed = cfg.seed + TOPOLOGY_SEED_OFFSET;
    match cfg.topology.kind.as_str() {
        "ring" => Ok(metropolis(&Graph::ring(k))?),
        "complete" => Ok(metropolis(&Graph::complete(k))?),
        "geometric" => Ok(random_geometric(k, cfg.topology.radius, seed)?),
        "random" => {
            let graph = Graph::random_connected(k, cfg.topology.edge_prob, seed)?;
            Ok(metropolis(&graph)?)
        }
        other => bail!("unknown topology.kind {other:?}"),
    }
}

/// Per-agent local reward models for the global-state/local-reward setting.
/// The global MDP reward is the average of the local ones.
pub fn build_marl_rewards(
    cfg: &ExperimentConfig,
    base: &Mdp<f64>,
) -> Result<(Mdp<f64>, Vec<Mdp<f64>>)> {
    let k = cfg.num_agents();
    let a = base.num_actions();
    let s = base.num_states();
    let transitions: Vec<DMatrix<f64>> = (0..a).map(|act| base.transition(act).clone()).collect();
    let mut locals = Vec::with_capacity(k);
    for agent in 0..k {
        let (reward_model, _) = random_mdp::<f64>(
            s,
            a,
            cfg.mdp.p_zero_trans,
            cfg.mdp.p_zero_reward,
            cfg.mdp.reward_sd,
            base.gamma(),
            cfg.seed + 100 + agent as u64,
        )?;
        let rewards: Vec<DMatrix<f64>> = (0..a).map(|act| reward_model.reward(act).clone()).collect();
        locals.push(Mdp::new(transitions.clone(), rewards, base.gamma())?);
    }
    let mean_rewards: Vec<DMatrix<f64>> = (0..a)
        .map(|act| {
            let mut m = DMatrix::<f64>::zeros(s, s);
            for local in &locals {
                m += local.reward(act);
            }
            m / k as f64
        })
        .collect();
    let global = Mdp::new(transitions, mean_rewards, base.gamma())?;
    Ok((global, locals))
}

/// Builds the full experiment state for one configuration.
pub fn build(cfg: &ExperimentConfig) -> Result<BuiltExperiment> {
    let (base_mdp, target) = build_mdp(cfg)?;
    let topology = build_topology(cfg)?;
    let k = cfg.num_agents();
    if topology.num_agents() != k {
        bail!("topology has {} agents, experiment needs {k}", topology.num_agents());
    }
    let n = cfg.data.samples_per_agent;

    let (mdp, regions, behaviors, datasets, local_rewards) = match cfg.experiment {
        ExperimentKind::GridPartition => {
            if cfg.mdp.kind != "grid" {
                bail!("the grid-partition experiment requires mdp.kind = grid");
            }
            let regions = grid_partition(cfg.mdp.width, cfg.mdp.height, cfg.partition.nx, cfg.partition.ny);
            let mut behaviors = Vec::with_capacity(k);
            let mut datasets = Vec::with_capacity(k);
            for (i, region) in regions.iter().enumerate() {
                let behavior =
                    restricted_policy(&target, region, cfg.mdp.width, cfg.mdp.height)?;
                let opts = CollectOptions {
                    burn_in: cfg.data.burn_in,
                    start: StartState::UniformIn(region.iter().copied().collect()),
                    strict_support: false,
                };
                datasets.push(collect_with(
                    &base_mdp,
                    &behavior,
                    &target,
                    n,
                    cfg.seed + DATA_SEED_OFFSET + i as u64,
                    &opts,
                )?);
                behaviors.push(behavior);
            }
            (base_mdp, Some(regions), behaviors, datasets, None)
        }
        ExperimentKind::RandomMarl => {
            let (global, locals) = build_marl_rewards(cfg, &base_mdp)?;
            let opts = CollectOptions {
                burn_in: cfg.data.burn_in,
                start: StartState::UniformAll,
                strict_support: true,
            };
            let shared = collect_with(
                &global,
                &target,
                &target,
                n,
                cfg.seed + DATA_SEED_OFFSET,
                &opts,
            )?;
            let streams = marl_reward_streams(&shared, &locals)?;
            let datasets = fdpe::estimators::marl_preprocess(&shared, &streams)?;
            let behaviors = vec![target.clone(); k];
            (global, None, behaviors, datasets, Some(locals))
        }
        ExperimentKind::Custom => {
            // Independent on-policy trajectories over the same MDP.
            let opts = CollectOptions {
                burn_in: cfg.data.burn_in,
                start: StartState::UniformAll,
                strict_support: true,
            };
            let datasets = (0..k)
                .map(|i| {
                    collect_with(
                        &base_mdp,
                        &target,
                        &target,
                        n,
                        cfg.seed + DATA_SEED_OFFSET + i as u64,
                        &opts,
                    )
                })
                .collect::<fdpe::Result<Vec<_>>>()?;
            let behaviors = vec![target.clone(); k];
            (base_mdp, None, behaviors, datasets, None)
        }
    };

    let features = build_features(cfg, mdp.num_states())?;
    let support_violations = datasets.iter().map(|d| d.support_violations().len()).sum();

    // Aggregate state weighting: the tau-weighted stationary mass of each
    // behavior chain (regions may make individual chains periodic or leave
    // transient states, which the invariant solver tolerates).
    let chain = induce_chain(&mdp, &target)?;
    let tau = 1.0 / k as f64;
    let mut weighting = DVector::<f64>::zeros(mdp.num_states());
    for behavior in &behaviors {
        let b_chain = induce_chain(&mdp, behavior)?;
        weighting += invariant_distribution(&b_chain)? * tau;
    }
    let v = fdpe::mdp::value_function(&chain, mdp.gamma())?;
    let theta_star = fdpe::oracle::theta_star(&v, &features, &weighting)?;

    let mut solver_config = SolverConfig::<f64>::new(features.dim(), k);
    solver_config.mu_theta = cfg.solver.mu_theta;
    solver_config.mu_omega = cfg.solver.mu_omega;
    solver_config.eta = cfg.solver.eta;
    solver_config.lambda = cfg.solver.lambda;
    solver_config.horizon = cfg.solver.horizon;
    solver_config.gamma = mdp.gamma();
    solver_config.num_batches = cfg.solver.batches;
    solver_config.u_mode = cfg.u_mode()?;
    solver_config.max_epochs = cfg.solver.max_epochs;
    solver_config.tol = cfg.solver.tol;
    solver_config.seed = cfg.seed;
    solver_config.theta_star = Some(theta_star.clone());
    solver_config.theta_p = match cfg.solver.theta_p.as_str() {
        "zeros" => DVector::zeros(features.dim()),
        "exact-plus-noise" => {
            let problem = exact_abc(
                &chain,
                &features,
                &weighting,
                mdp.gamma(),
                cfg.solver.lambda,
                cfg.solver.horizon,
            )?;
            let eye = DMatrix::<f64>::identity(features.dim(), features.dim());
            let base = theta_o(&problem, 0.0, &eye, &DVector::zeros(features.dim()))?;
            let half_width = (3.0 * cfg.solver.theta_p_noise_variance).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + PRIOR_NOISE_SEED_OFFSET);
            DVector::from_fn(features.dim(), |i, _| {
                base[i] + half_width * (2.0 * rng.gen::<f64>() - 1.0)
            })
        }
        other => bail!("unknown solver.theta_p {other:?}"),
    };

    Ok(BuiltExperiment {
        mdp,
        target,
        features,
        topology,
        regions,
        behaviors,
        datasets,
        local_rewards,
        solver_config,
        chain,
        weighting,
        theta_star,
        support_violations,
    })
}

impl BuiltExperiment {
    /// Per-agent full-batch estimate sets under the configured trace
    /// parameters.
    pub fn estimate_sets(&self) -> Result<Vec<EstimateSet<f64>>> {
        let cfg = &self.solver_config;
        self.datasets
            .iter()
            .enumerate()
            .map(|(i, ds)| {
                batch_estimates(
                    ds,
                    &self.features,
                    cfg.lambda,
                    cfg.horizon,
                    cfg.gamma,
                    cfg.taus[i],
                    cfg.u_mode,
                )
                .context("batch estimates")
            })
            .collect()
    }

    pub fn aggregate_set(&self) -> Result<(EstimateSet<f64>, fdpe::estimators::AssumptionDiagnostics)> {
        Ok(aggregate(&self.estimate_sets()?)?)
    }
}
