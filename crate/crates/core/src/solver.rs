//! Decentralized primal-dual solvers.
//!
//! All three solvers share one bulk-synchronous diffusion engine. Each inner
//! step every agent `k` performs
//!
//! ```text
//! psi_{k,i+1} = [theta_k; omega_k] - tau_k [mu_theta I; mu_omega I] beta_k
//! phi_{k,i+1} = psi_{k,i+1} + [theta_k; omega_k] - psi_{k,i}
//! [theta; omega]_{k,i+1} = (phi_{k,i+1} + sum_n l_nk phi_{n,i+1}) / 2
//! ```
//!
//! where `beta_k` is the local gradient estimate
//! `[eta U_k (theta - theta_p) - A_k^T omega; A_k theta - b_k + C_k omega]`.
//! The variance-reduced solver draws `beta_k` from reshuffled mini-batches
//! with an amortized full-gradient accumulator `g_k` that is rebuilt once per
//! epoch; the exact-gradient algorithm is its single-mini-batch special case,
//! and the decaying baseline keeps the diffusion structure but uses plain
//! mini-batch gradients with a decaying step size.
//!
//! The two primal/dual halves are stacked as `[theta; omega]` everywhere;
//! the updates are symmetric in the stacking order.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimators::{aggregate, EstimateSet, SampleEstimator, UMode};
use crate::features::FeatureMap;
use crate::network::Topology;
use crate::oracle::saddle_point;
use crate::sampler::{ratios, Dataset};
use crate::scalar::{cvt, Scalar};

/// Error blow-up factor that triggers the divergence sentinel.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Initial iterates for every agent.
#[derive(Debug, Clone)]
pub enum Init<T: Scalar> {
    /// `theta = omega = 0` with the listing conventions: `psi_0` equals the
    /// stacked start point, zero accumulator, zero epoch-0 snapshot
    /// gradients.
    Zeros,
    /// Arbitrary common start point, same conventions as `Zeros`.
    Point { theta: DVector<T>, omega: DVector<T> },
    /// Start at a presumed fixed point with consistent auxiliary state: the
    /// accumulator holds the exact local gradient at the point, snapshot
    /// gradients are real, and `psi` is the post-step value. A true saddle
    /// point then stays exactly stationary.
    FixedPoint { theta: DVector<T>, omega: DVector<T> },
}

/// Solver configuration shared by all run entry points.
#[derive(Debug, Clone)]
pub struct SolverConfig<T: Scalar> {
    pub mu_theta: T,
    pub mu_omega: T,
    pub eta: T,
    pub lambda: T,
    pub horizon: usize,
    pub gamma: T,
    /// Mini-batch count `J`; the final mini-batch may be short when `J` does
    /// not divide the usable sample count.
    pub num_batches: usize,
    pub taus: Vec<T>,
    pub theta_p: DVector<T>,
    pub u_mode: UMode,
    pub max_epochs: usize,
    /// Convergence tolerance, applied to both the mean empirical error and
    /// the consensus gap once per epoch.
    pub tol: T,
    pub seed: u64,
    pub init: Init<T>,
    /// Optional exact projection target; enables the mean-square-deviation
    /// column of the trace.
    pub theta_star: Option<DVector<T>>,
    /// Record per-step iterates, per-epoch accumulators and evaluation
    /// points (desk-scale diagnostics).
    pub record_iterates: bool,
}

impl<T: Scalar> SolverConfig<T> {
    /// Reasonable defaults around a feature dimension; callers override the
    /// fields they care about.
    pub fn new(dim: usize, num_agents: usize) -> Self {
        let tau = cvt::<T>(1.0 / num_agents as f64);
        Self {
            mu_theta: cvt(0.1),
            mu_omega: cvt(1.0),
            eta: T::zero(),
            lambda: cvt(0.6),
            horizon: 10,
            gamma: cvt(0.9),
            num_batches: 1,
            taus: vec![tau; num_agents],
            theta_p: DVector::zeros(dim),
            u_mode: UMode::Identity,
            max_epochs: 1000,
            tol: cvt(1e-12),
            seed: 0,
            init: Init::Zeros,
            theta_star: None,
            record_iterates: false,
        }
    }
}

/// Sufficient step-size condition for linear convergence:
/// `mu_omega/mu_theta > eta lmax(U)/lmax(C) + 2 sqrt(mu_omega/mu_theta *
/// lmax(A C^{-1} A^T)/lmax(C))`. The condition is sufficient, not necessary,
/// so a failing gate is reported rather than enforced.
#[derive(Debug, Clone, Copy)]
pub struct GateReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub lambda_max_c: f64,
    pub lambda_max_u: f64,
    pub lambda_max_acat: f64,
}

/// Evaluates the step-size gate on aggregate estimates.
pub fn check_step_sizes<T: Scalar>(
    config: &SolverConfig<T>,
    agg: &EstimateSet<T>,
) -> Result<GateReport> {
    let lmax = |m: &DMatrix<T>| -> f64 {
        let sym = (m + m.transpose()) * cvt::<T>(0.5);
        sym.symmetric_eigen()
            .eigenvalues
            .max()
            .to_f64()
            .unwrap_or(f64::NAN)
    };
    let lambda_max_c = lmax(&agg.c_hat);
    let lambda_max_u = lmax(&agg.u_hat);
    // A C^{-1} A^T via a solve against A^T.
    let at = agg.a_hat.transpose();
    let lu = agg.c_hat.clone().lu();
    let mut ca = DMatrix::<T>::zeros(at.nrows(), at.ncols());
    for c in 0..at.ncols() {
        let col = at.column(c).into_owned();
        let sol = lu
            .solve(&col)
            .ok_or_else(|| Error::Singular("C in step-size gate".into()))?;
        ca.set_column(c, &sol);
    }
    let acat = &agg.a_hat * ca;
    let lambda_max_acat = lmax(&acat);
    let lhs = (config.mu_omega / config.mu_theta).to_f64().unwrap_or(f64::NAN);
    let eta = config.eta.to_f64().unwrap_or(0.0);
    let rhs = eta * lambda_max_u / lambda_max_c
        + 2.0 * (lhs * lambda_max_acat / lambda_max_c).max(0.0).sqrt();
    Ok(GateReport {
        lhs,
        rhs,
        satisfied: lhs > rhs,
        lambda_max_c,
        lambda_max_u,
        lambda_max_acat,
    })
}

/// Local primal-dual gradient of one agent's cost at `(theta, omega)`,
/// stacked as `[d/dtheta; -d/domega]`:
/// `[eta U (theta - theta_p) - A^T omega; A theta - b + C omega]`.
pub fn local_gradient<T: Scalar>(
    theta: &DVector<T>,
    omega: &DVector<T>,
    est: &EstimateSet<T>,
    eta: T,
    theta_p: &DVector<T>,
) -> DVector<T> {
    let (top, bottom) = gradient_parts(est, theta, omega, eta, theta_p);
    let m = top.len();
    let mut out = DVector::<T>::zeros(2 * m);
    out.rows_mut(0, m).copy_from(&top);
    out.rows_mut(m, m).copy_from(&bottom);
    out
}

fn gradient_parts<T: Scalar>(
    est: &EstimateSet<T>,
    theta: &DVector<T>,
    omega: &DVector<T>,
    eta: T,
    theta_p: &DVector<T>,
) -> (DVector<T>, DVector<T>) {
    let top = (&est.u_hat * (theta - theta_p)) * eta - est.a_hat.tr_mul(omega);
    let bottom = &est.a_hat * theta - &est.b_hat + &est.c_hat * omega;
    (top, bottom)
}

/// Maximum deviation of any agent's primal iterate from the network average.
pub fn consensus_gap<T: Scalar>(thetas: &[DVector<T>]) -> T {
    let k = thetas.len();
    if k == 0 {
        return T::zero();
    }
    let mut mean = DVector::<T>::zeros(thetas[0].len());
    for t in thetas {
        mean += t;
    }
    mean /= cvt::<T>(k as f64);
    thetas
        .iter()
        .map(|t| (t - &mean).norm())
        .fold(T::zero(), |acc, v| if v > acc { v } else { acc })
}

/// One per-agent, per-epoch record of the run.
#[derive(Debug, Clone)]
pub struct TraceRow<T: Scalar> {
    pub epoch: usize,
    pub agent: usize,
    /// `|theta_k - theta_o|^2 + |omega_k - omega_o|^2` against the empirical
    /// saddle point.
    pub emp_error: T,
    pub consensus_gap: T,
    /// `|theta_k - theta_star|^2` when a projection target was supplied.
    pub msd: Option<T>,
    /// Cumulative per-sample gradient evaluations, network-wide.
    pub grad_evals: u64,
    /// Cumulative combine steps, network-wide.
    pub comm_rounds: u64,
}

/// Full run record: per-epoch rows plus final iterates and references.
#[derive(Debug, Clone)]
pub struct Trace<T: Scalar> {
    pub rows: Vec<TraceRow<T>>,
    pub converged_epoch: Option<usize>,
    pub final_thetas: Vec<DVector<T>>,
    pub final_omegas: Vec<DVector<T>>,
    pub saddle_theta: DVector<T>,
    pub saddle_omega: DVector<T>,
    pub gate: GateReport,
    pub grad_evals: u64,
    pub comm_rounds: u64,
    /// Post-combine iterates per inner step (outer: step, inner: agent),
    /// present when `record_iterates` was set.
    pub iterates: Option<Vec<Vec<(DVector<T>, DVector<T>)>>>,
    /// Accumulator `g_k^{e+1}` recorded at each epoch end (outer: epoch,
    /// inner: agent, stacked `[g_theta; g_omega]`).
    pub accumulators: Option<Vec<Vec<DVector<T>>>>,
    /// Pre-update evaluation points of every inner step (outer: step, inner:
    /// agent), present when `record_iterates` was set.
    pub eval_points: Option<Vec<Vec<(DVector<T>, DVector<T>)>>>,
}

impl<T: Scalar> Trace<T> {
    /// Mean empirical error across agents for each recorded epoch.
    pub fn mean_emp_error_per_epoch(&self) -> Vec<T> {
        let agents = self.final_thetas.len().max(1);
        let mut out = Vec::new();
        let mut acc = T::zero();
        let mut count = 0;
        for row in &self.rows {
            acc += row.emp_error;
            count += 1;
            if count == agents {
                out.push(acc / cvt::<T>(agents as f64));
                acc = T::zero();
                count = 0;
            }
        }
        out
    }

    pub fn final_mean_emp_error(&self) -> T {
        self.mean_emp_error_per_epoch().last().copied().unwrap_or_else(T::zero)
    }

    pub fn final_consensus_gap(&self) -> T {
        self.rows.last().map(|r| r.consensus_gap).unwrap_or_else(T::zero)
    }
}

/// Ordinary least squares of `ln(values)` against the index. Returns
/// `(slope, r_squared)`; `None` when fewer than two positive values remain.
pub fn log_linear_fit(values: &[f64]) -> Option<(f64, f64)> {
    let points: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(i, &v)| (i as f64, v.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y) in &points {
        let fit = slope * x + intercept;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some((slope, r2))
}

enum GradientMode<T: Scalar> {
    /// Reshuffled mini-batches with the amortized variance-reduction
    /// accumulator.
    Avrg,
    /// Plain mini-batch gradients, optional per-epoch step decay
    /// `mu / (1 + rate * epoch)`.
    Plain { decay: Option<T> },
}

struct AgentState<T: Scalar> {
    theta: DVector<T>,
    omega: DVector<T>,
    psi_theta: DVector<T>,
    psi_omega: DVector<T>,
    g_theta: DVector<T>,
    g_omega: DVector<T>,
    /// Per-mini-batch contributions to the next accumulator; reduced in
    /// fixed order at the epoch end so sums are permutation independent.
    slot_theta: Vec<DVector<T>>,
    slot_omega: Vec<DVector<T>>,
    snap_theta: DVector<T>,
    snap_omega: DVector<T>,
    /// Gradients of each mini-batch at the epoch snapshot; `None` means the
    /// zero convention of the first epoch.
    snap_grads: Option<Vec<(DVector<T>, DVector<T>)>>,
    perm: Vec<usize>,
    rng: ChaCha8Rng,
    /// Mini-batch estimate means, contiguous over the usable range.
    mats: Vec<EstimateSet<T>>,
    usable: usize,
    tau: T,
}

/// Exact-gradient diffusion solver: every agent uses its full-batch
/// estimates each round. This is the single-mini-batch case of the
/// variance-reduced solver, so the two trajectories coincide per iteration.
pub fn algorithm1_run<T: Scalar>(
    sets: &[EstimateSet<T>],
    topology: &Topology<T>,
    config: &SolverConfig<T>,
) -> Result<Trace<T>> {
    let mut forced = config.clone();
    forced.num_batches = 1;
    let per_agent_mats: Vec<Vec<EstimateSet<T>>> =
        sets.iter().map(|s| vec![s.clone()]).collect();
    run_engine(per_agent_mats, topology, &forced, GradientMode::Avrg)
}

/// Variance-reduced decentralized solver over raw datasets.
pub fn fdpe_run<T: Scalar>(
    datasets: &[Dataset<T>],
    features: &FeatureMap<T>,
    topology: &Topology<T>,
    config: &SolverConfig<T>,
) -> Result<Trace<T>> {
    let per_agent_mats = build_minibatch_mats(datasets, features, config)?;
    run_engine(per_agent_mats, topology, config, GradientMode::Avrg)
}

/// Diffusion baseline without variance reduction: plain reshuffled
/// mini-batch gradients and (optionally) step sizes decaying as
/// `mu / (1 + rate * epoch)`.
pub fn decaying_baseline_run<T: Scalar>(
    datasets: &[Dataset<T>],
    features: &FeatureMap<T>,
    topology: &Topology<T>,
    config: &SolverConfig<T>,
    decay: Option<T>,
) -> Result<Trace<T>> {
    let per_agent_mats = build_minibatch_mats(datasets, features, config)?;
    run_engine(per_agent_mats, topology, config, GradientMode::Plain { decay })
}

/// Splits each agent's usable samples into `J` contiguous mini-batches and
/// precomputes the per-mini-batch estimate means.
fn build_minibatch_mats<T: Scalar>(
    datasets: &[Dataset<T>],
    features: &FeatureMap<T>,
    config: &SolverConfig<T>,
) -> Result<Vec<Vec<EstimateSet<T>>>> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("need at least one dataset".into()));
    }
    let j = config.num_batches;
    if j == 0 {
        return Err(Error::InvalidArgument("mini-batch count must be positive".into()));
    }
    let mut out = Vec::with_capacity(datasets.len());
    for (k, dataset) in datasets.iter().enumerate() {
        let table = ratios(dataset, config.horizon)?;
        let est = SampleEstimator::new(dataset, features, &table, config.lambda, config.gamma)?;
        let usable = est.usable();
        if j > usable {
            return Err(Error::InvalidArgument(format!(
                "agent {k}: {j} mini-batches exceed {usable} usable samples"
            )));
        }
        let batch_size = usable.div_ceil(j);
        let tau = config.taus.get(k).copied().unwrap_or_else(T::one);
        let mut mats = Vec::with_capacity(j);
        for b in 0..j {
            let lo = b * batch_size;
            let hi = ((b + 1) * batch_size).min(usable);
            mats.push(est.batch(lo..hi, tau, config.u_mode)?);
        }
        out.push(mats);
    }
    Ok(out)
}

fn run_engine<T: Scalar>(
    per_agent_mats: Vec<Vec<EstimateSet<T>>>,
    topology: &Topology<T>,
    config: &SolverConfig<T>,
    mode: GradientMode<T>,
) -> Result<Trace<T>> {
    let k_agents = per_agent_mats.len();
    if topology.num_agents() != k_agents {
        return Err(Error::DimensionMismatch(format!(
            "topology has {} agents, data has {k_agents}",
            topology.num_agents()
        )));
    }
    if config.taus.len() != k_agents {
        return Err(Error::DimensionMismatch(format!(
            "config carries {} tau weights for {k_agents} agents",
            config.taus.len()
        )));
    }
    if config.mu_theta < T::zero() || config.mu_omega < T::zero() {
        return Err(Error::InvalidArgument("step sizes must be nonnegative".into()));
    }
    let m = per_agent_mats[0][0].dim();
    if config.theta_p.len() != m {
        return Err(Error::DimensionMismatch(
            "theta_p dimension differs from the feature dimension".into(),
        ));
    }
    let num_batches = per_agent_mats[0].len();

    // Reference saddle point from the tau-weighted aggregate of full-batch
    // means (the |J_j|-weighted recombination of the mini-batches).
    let mut full_sets = Vec::with_capacity(k_agents);
    for (k, mats) in per_agent_mats.iter().enumerate() {
        let usable: usize = mats.iter().map(|m| m.n_samples).sum();
        let mut a = DMatrix::<T>::zeros(m, m);
        let mut b = DVector::<T>::zeros(m);
        let mut c = DMatrix::<T>::zeros(m, m);
        let mut u = DMatrix::<T>::zeros(m, m);
        for set in mats {
            let w = cvt::<T>(set.n_samples as f64 / usable as f64);
            a += &set.a_hat * w;
            b.axpy(w, &set.b_hat, T::one());
            c += &set.c_hat * w;
            u += &set.u_hat * w;
        }
        full_sets.push(EstimateSet {
            a_hat: a,
            b_hat: b,
            c_hat: c,
            u_hat: u,
            n_samples: usable,
            tau: config.taus[k],
        });
    }
    let (agg, _diag) = aggregate(&full_sets)?;
    let (saddle_theta, saddle_omega) = saddle_point(&agg, config.eta, &config.theta_p)?;
    let gate = check_step_sizes(config, &agg)?;

    // Per-agent state.
    let mut agents: Vec<AgentState<T>> = Vec::with_capacity(k_agents);
    for (k, mats) in per_agent_mats.into_iter().enumerate() {
        let usable: usize = mats.iter().map(|m| m.n_samples).sum();
        let (theta, omega) = match &config.init {
            Init::Zeros => (DVector::zeros(m), DVector::zeros(m)),
            Init::Point { theta, omega } | Init::FixedPoint { theta, omega } => {
                (theta.clone(), omega.clone())
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64 + 1);
        let mut state = AgentState {
            psi_theta: theta.clone(),
            psi_omega: omega.clone(),
            g_theta: DVector::zeros(m),
            g_omega: DVector::zeros(m),
            slot_theta: vec![DVector::zeros(m); num_batches],
            slot_omega: vec![DVector::zeros(m); num_batches],
            snap_theta: theta.clone(),
            snap_omega: omega.clone(),
            snap_grads: None,
            perm: (0..num_batches).collect(),
            rng,
            mats,
            usable,
            tau: config.taus[k],
            theta,
            omega,
        };
        if let Init::FixedPoint { .. } = config.init {
            // Consistent auxiliary state at a presumed fixed point: real
            // snapshot gradients, the accumulator equal to the full local
            // gradient, and psi holding the post-step value.
            let mut snaps = Vec::with_capacity(num_batches);
            let mut g_t = DVector::<T>::zeros(m);
            let mut g_w = DVector::<T>::zeros(m);
            for set in &state.mats {
                let (top, bottom) =
                    gradient_parts(set, &state.theta, &state.omega, config.eta, &config.theta_p);
                let w = cvt::<T>(set.n_samples as f64 / state.usable as f64);
                g_t.axpy(w, &top, T::one());
                g_w.axpy(w, &bottom, T::one());
                snaps.push((top, bottom));
            }
            state.psi_theta = &state.theta - &g_t * (state.tau * config.mu_theta);
            state.psi_omega = &state.omega - &g_w * (state.tau * config.mu_omega);
            state.g_theta = g_t;
            state.g_omega = g_w;
            state.snap_grads = Some(snaps);
        }
        agents.push(state);
    }

    // Neighbor lists with combination weights, fixed iteration order.
    let neighbor_weights: Vec<Vec<(usize, T)>> = (0..k_agents)
        .map(|k| {
            (0..k_agents)
                .filter_map(|n| {
                    let w = topology.weight(n, k);
                    if w > T::zero() {
                        Some((n, w))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();

    let half = cvt::<T>(0.5);
    let mut rows = Vec::new();
    let mut iterates = config.record_iterates.then(Vec::new);
    let mut eval_points = config.record_iterates.then(Vec::new);
    let mut accumulators = config.record_iterates.then(Vec::new);
    let mut grad_evals: u64 = 0;
    let mut comm_rounds: u64 = 0;
    let mut initial_error: Option<f64> = None;
    let mut converged_epoch = None;

    for epoch in 0..config.max_epochs {
        let (mu_t, mu_w) = match &mode {
            GradientMode::Avrg => (config.mu_theta, config.mu_omega),
            GradientMode::Plain { decay } => match decay {
                Some(rate) => {
                    let factor = T::one() / (T::one() + *rate * cvt::<T>(epoch as f64));
                    (config.mu_theta * factor, config.mu_omega * factor)
                }
                None => (config.mu_theta, config.mu_omega),
            },
        };

        // Epoch start: fresh permutations, snapshots and accumulator slots.
        for state in agents.iter_mut() {
            state.perm = (0..num_batches).collect();
            state.perm.shuffle(&mut state.rng);
            if matches!(mode, GradientMode::Avrg) {
                state.snap_theta = state.theta.clone();
                state.snap_omega = state.omega.clone();
                let refresh = epoch > 0 || state.snap_grads.is_some();
                if refresh {
                    let snaps: Vec<_> = state
                        .mats
                        .iter()
                        .map(|set| {
                            gradient_parts(
                                set,
                                &state.snap_theta,
                                &state.snap_omega,
                                config.eta,
                                &config.theta_p,
                            )
                        })
                        .collect();
                    state.snap_grads = Some(snaps);
                    grad_evals += state.usable as u64;
                }
                for s in state.slot_theta.iter_mut() {
                    s.fill(T::zero());
                }
                for s in state.slot_omega.iter_mut() {
                    s.fill(T::zero());
                }
            }
        }

        for i in 0..num_batches {
            // Local phase: every agent computes its correction vector.
            let mut phis: Vec<(DVector<T>, DVector<T>)> = Vec::with_capacity(k_agents);
            if let Some(points) = eval_points.as_mut() {
                points.push(
                    agents
                        .iter()
                        .map(|s| (s.theta.clone(), s.omega.clone()))
                        .collect::<Vec<_>>(),
                );
            }
            for state in agents.iter_mut() {
                let j = state.perm[i];
                let set = &state.mats[j];
                let (cur_top, cur_bottom) =
                    gradient_parts(set, &state.theta, &state.omega, config.eta, &config.theta_p);
                let (hat_top, hat_bottom) = match &mode {
                    GradientMode::Avrg => {
                        let (corr_top, corr_bottom) = match &state.snap_grads {
                            Some(snaps) => {
                                (&cur_top - &snaps[j].0, &cur_bottom - &snaps[j].1)
                            }
                            None => (cur_top.clone(), cur_bottom.clone()),
                        };
                        let w = cvt::<T>(set.n_samples as f64 / state.usable as f64);
                        state.slot_theta[j] = &cur_top * w;
                        state.slot_omega[j] = &cur_bottom * w;
                        (&state.g_theta + corr_top, &state.g_omega + corr_bottom)
                    }
                    GradientMode::Plain { .. } => (cur_top, cur_bottom),
                };
                let psi_new_theta = &state.theta - hat_top * (state.tau * mu_t);
                let psi_new_omega = &state.omega - hat_bottom * (state.tau * mu_w);
                let phi_theta = &psi_new_theta + &state.theta - &state.psi_theta;
                let phi_omega = &psi_new_omega + &state.omega - &state.psi_omega;
                state.psi_theta = psi_new_theta;
                state.psi_omega = psi_new_omega;
                phis.push((phi_theta, phi_omega));
                grad_evals += set.n_samples as u64;
            }
            // Combine phase: barrier over all phi vectors.
            for (k, state) in agents.iter_mut().enumerate() {
                let mut new_theta = phis[k].0.clone();
                let mut new_omega = phis[k].1.clone();
                for &(n, w) in &neighbor_weights[k] {
                    new_theta.axpy(w, &phis[n].0, T::one());
                    new_omega.axpy(w, &phis[n].1, T::one());
                }
                state.theta = new_theta * half;
                state.omega = new_omega * half;
            }
            comm_rounds += 1;
            if let Some(iters) = iterates.as_mut() {
                iters.push(
                    agents
                        .iter()
                        .map(|s| (s.theta.clone(), s.omega.clone()))
                        .collect::<Vec<_>>(),
                );
            }
        }

        // Epoch end: rebuild the accumulator in fixed mini-batch order.
        if matches!(mode, GradientMode::Avrg) {
            for state in agents.iter_mut() {
                let mut g_t = DVector::<T>::zeros(m);
                let mut g_w = DVector::<T>::zeros(m);
                for j in 0..num_batches {
                    g_t += &state.slot_theta[j];
                    g_w += &state.slot_omega[j];
                }
                state.g_theta = g_t;
                state.g_omega = g_w;
            }
            if let Some(accs) = accumulators.as_mut() {
                accs.push(
                    agents
                        .iter()
                        .map(|s| {
                            let mut g = DVector::<T>::zeros(2 * m);
                            g.rows_mut(0, m).copy_from(&s.g_theta);
                            g.rows_mut(m, m).copy_from(&s.g_omega);
                            g
                        })
                        .collect::<Vec<_>>(),
                );
            }
        }

        // Metrics and stopping rules.
        let thetas: Vec<DVector<T>> = agents.iter().map(|s| s.theta.clone()).collect();
        let gap = consensus_gap(&thetas);
        let mut mean_err = T::zero();
        for (k, state) in agents.iter().enumerate() {
            let err = (&state.theta - &saddle_theta).norm_squared()
                + (&state.omega - &saddle_omega).norm_squared();
            mean_err += err;
            let msd = config
                .theta_star
                .as_ref()
                .map(|ts| (&state.theta - ts).norm_squared());
            rows.push(TraceRow {
                epoch,
                agent: k,
                emp_error: err,
                consensus_gap: gap,
                msd,
                grad_evals,
                comm_rounds,
            });
        }
        mean_err /= cvt::<T>(k_agents as f64);
        let mean_err_f = mean_err.to_f64().unwrap_or(f64::NAN);
        let initial = *initial_error.get_or_insert(mean_err_f.max(f64::MIN_POSITIVE));
        if !mean_err_f.is_finite() || mean_err_f > DIVERGENCE_FACTOR * initial {
            return Err(Error::Divergence {
                epoch,
                error: mean_err_f,
                initial,
            });
        }
        if mean_err < config.tol && gap < config.tol {
            converged_epoch = Some(epoch);
            break;
        }
    }

    Ok(Trace {
        rows,
        converged_epoch,
        final_thetas: agents.iter().map(|s| s.theta.clone()).collect(),
        final_omegas: agents.iter().map(|s| s.omega.clone()).collect(),
        saddle_theta,
        saddle_omega,
        gate,
        grad_evals,
        comm_rounds,
        iterates,
        accumulators,
        eval_points,
    })
}

/// Finite sum of quadratic losses `Q_n(x) = 0.5 x^T P_n x - q_n^T x`, the
/// single-agent reference problem for the amortized variance-reduced
/// gradient scheme.
#[derive(Debug, Clone)]
pub struct QuadraticSum<T: Scalar> {
    terms: Vec<(DMatrix<T>, DVector<T>)>,
}

impl<T: Scalar> QuadraticSum<T> {
    pub fn new(terms: Vec<(DMatrix<T>, DVector<T>)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("need at least one quadratic term".into()));
        }
        let dim = terms[0].1.len();
        for (p, q) in &terms {
            if p.nrows() != dim || p.ncols() != dim || q.len() != dim {
                return Err(Error::DimensionMismatch("quadratic term shapes differ".into()));
            }
        }
        Ok(Self { terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.terms[0].1.len()
    }

    pub fn gradient(&self, n: usize, x: &DVector<T>) -> DVector<T> {
        &self.terms[n].0 * x - &self.terms[n].1
    }

    pub fn full_gradient(&self, x: &DVector<T>) -> DVector<T> {
        let mut g = DVector::<T>::zeros(self.dim());
        let scale = cvt::<T>(1.0 / self.len() as f64);
        for n in 0..self.len() {
            g.axpy(scale, &self.gradient(n, x), T::one());
        }
        g
    }

    /// Minimizer of the mean cost: solves `mean(P) x = mean(q)`.
    pub fn minimizer(&self) -> Result<DVector<T>> {
        let dim = self.dim();
        let mut p = DMatrix::<T>::zeros(dim, dim);
        let mut q = DVector::<T>::zeros(dim);
        let scale = cvt::<T>(1.0 / self.len() as f64);
        for (pn, qn) in &self.terms {
            p += pn * scale;
            q.axpy(scale, qn, T::one());
        }
        p.lu()
            .solve(&q)
            .ok_or_else(|| Error::Singular("mean quadratic is singular".into()))
    }
}

/// Per-epoch record of the single-agent reference run.
#[derive(Debug, Clone)]
pub struct AvrgTrace<T: Scalar> {
    /// Epoch-start iterates, beginning with the initial point.
    pub epoch_starts: Vec<DVector<T>>,
    /// Accumulator `g^{e+1}` after each epoch.
    pub accumulators: Vec<DVector<T>>,
    /// Distance to the exact minimizer at each epoch start.
    pub errors: Vec<T>,
}

/// Single-agent amortized variance-reduced gradient descent with random
/// reshuffling: one epoch visits every term once, corrects each stochastic
/// gradient with the epoch-start gradient of the same term, and replays the
/// previous epoch's average gradient. The first epoch uses the zero
/// conventions (`g^0 = 0`, zero snapshot gradients), so it reduces to plain
/// stochastic gradient steps.
pub fn avrg_run<T: Scalar>(
    problem: &QuadraticSum<T>,
    mu: T,
    epochs: usize,
    seed: u64,
    x0: DVector<T>,
) -> Result<AvrgTrace<T>> {
    if x0.len() != problem.dim() {
        return Err(Error::DimensionMismatch("initial point dimension differs".into()));
    }
    let n = problem.len();
    let minimizer = problem.minimizer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0;
    let mut g = DVector::<T>::zeros(problem.dim());
    let mut snap: Option<DVector<T>> = None;
    let mut trace = AvrgTrace {
        epoch_starts: vec![x.clone()],
        accumulators: Vec::new(),
        errors: vec![(&x - &minimizer).norm()],
    };
    let inv_n = cvt::<T>(1.0 / n as f64);
    for _epoch in 0..epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut g_next = DVector::<T>::zeros(problem.dim());
        for &term in &perm {
            let grad_cur = problem.gradient(term, &x);
            let grad_snap = match &snap {
                Some(point) => problem.gradient(term, point),
                None => DVector::zeros(problem.dim()),
            };
            g_next.axpy(inv_n, &grad_cur, T::one());
            let direction = grad_cur - grad_snap + &g;
            x.axpy(-mu, &direction, T::one());
        }
        g = g_next;
        snap = Some(x.clone());
        trace.epoch_starts.push(x.clone());
        trace.accumulators.push(g.clone());
        trace.errors.push((&x - &minimizer).norm());
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::random_features;
    use crate::mdp::{random_mdp, Policy};
    use crate::network::{metropolis, Graph};
    use crate::sampler::collect;

    fn desk_problem(
        agents: usize,
        n: usize,
        seed: u64,
    ) -> (Vec<Dataset<f64>>, FeatureMap<f64>, Topology<f64>) {
        let (mdp, target) = random_mdp::<f64>(8, 3, 0.3, 0.6, 1.0, 0.9, seed).unwrap();
        let behavior = Policy::new(
            target.probs() * 0.7 + Policy::<f64>::uniform(8, 3).probs() * 0.3,
        )
        .unwrap();
        let datasets: Vec<_> = (0..agents)
            .map(|k| collect(&mdp, &behavior, &target, n, seed + 10 + k as u64).unwrap())
            .collect();
        let features = random_features(8, 4, seed + 99).unwrap();
        let topology = metropolis(&Graph::ring(agents)).unwrap();
        (datasets, features, topology)
    }

    fn desk_config(agents: usize) -> SolverConfig<f64> {
        let mut config = SolverConfig::<f64>::new(4, agents);
        config.horizon = 4;
        config.lambda = 0.5;
        config.gamma = 0.9;
        config.mu_theta = 0.3;
        config.mu_omega = 3.0;
        config.max_epochs = 4000;
        config.tol = 1e-22;
        config
    }

    #[test]
    fn gate_report_substitution_case() {
        // mu_omega = mu_theta, eta = 0 and lmax(AC^-1A^T) = lmax(C) gives
        // lhs 1 against rhs 2: the gate fails.
        let set = EstimateSet {
            a_hat: DMatrix::<f64>::identity(2, 2),
            b_hat: DVector::zeros(2),
            c_hat: DMatrix::<f64>::identity(2, 2),
            u_hat: DMatrix::<f64>::identity(2, 2),
            n_samples: 1,
            tau: 1.0,
        };
        let mut config = SolverConfig::<f64>::new(2, 1);
        config.mu_theta = 1.0;
        config.mu_omega = 1.0;
        config.eta = 0.0;
        let report = check_step_sizes(&config, &set).unwrap();
        assert!((report.lhs - 1.0).abs() < 1e-14);
        assert!((report.rhs - 2.0).abs() < 1e-14);
        assert!(!report.satisfied);

        // Large ratios always satisfy the condition when eta = 0.
        config.mu_omega = 100.0;
        let report = check_step_sizes(&config, &set).unwrap();
        assert!(report.satisfied);
    }

    #[test]
    fn local_gradient_matches_finite_differences() {
        let (datasets, features, _) = desk_problem(1, 200, 5);
        let set = crate::estimators::batch_estimates(
            &datasets[0],
            &features,
            0.5,
            4,
            0.9,
            1.0,
            UMode::Identity,
        )
        .unwrap();
        let theta = DVector::from_row_slice(&[0.3, -0.2, 0.8, 0.1]);
        let omega = DVector::from_row_slice(&[-0.5, 0.4, 0.2, -0.7]);
        let theta_p = DVector::from_element(4, 0.25);
        let eta = 0.05;
        let grad = local_gradient(&theta, &omega, &set, eta, &theta_p);

        // F(theta, omega) = eta/2 |theta - theta_p|^2_U - omega^T(A theta - b)
        //                   - 1/2 |omega|^2_C
        let f = |th: &DVector<f64>, om: &DVector<f64>| -> f64 {
            let dt = th - &theta_p;
            eta * 0.5 * (dt.transpose() * &set.u_hat * &dt)[(0, 0)]
                - (om.transpose() * (&set.a_hat * th - &set.b_hat))[(0, 0)]
                - 0.5 * (om.transpose() * &set.c_hat * om)[(0, 0)]
        };
        let h = 1e-6;
        for i in 0..4 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (f(&tp, &omega) - f(&tm, &omega)) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-6 * fd.abs().max(1.0), "theta {i}");
            let mut op = omega.clone();
            let mut om_ = omega.clone();
            op[i] += h;
            om_[i] -= h;
            // The stacked bottom block is minus the omega-gradient.
            let fd = -(f(&theta, &op) - f(&theta, &om_)) / (2.0 * h);
            assert!((grad[4 + i] - fd).abs() < 1e-6 * fd.abs().max(1.0), "omega {i}");
        }
    }

    #[test]
    fn local_gradient_zero_at_saddle() {
        let (datasets, features, _) = desk_problem(1, 300, 7);
        let set = crate::estimators::batch_estimates(
            &datasets[0],
            &features,
            0.5,
            4,
            0.9,
            1.0,
            UMode::Identity,
        )
        .unwrap();
        let theta_p = DVector::zeros(4);
        let (theta, omega) = saddle_point(&set, 1e-2, &theta_p).unwrap();
        let grad = local_gradient(&theta, &omega, &set, 1e-2, &theta_p);
        assert!(grad.amax() < 1e-10);
    }

    #[test]
    fn consensus_gap_cases() {
        let v = DVector::from_row_slice(&[1.0, 2.0]);
        assert_eq!(consensus_gap::<f64>(&[v.clone(), v.clone()]), 0.0);
        let w = DVector::from_row_slice(&[-1.0, -2.0]);
        let gap = consensus_gap::<f64>(&[v.clone(), w]);
        assert!((gap - v.norm()).abs() < 1e-14);
    }

    #[test]
    fn single_mini_batch_reduction_is_exact() {
        let (datasets, features, topology) = desk_problem(3, 120, 11);
        let mut config = desk_config(3);
        config.mu_theta = 0.02;
        config.mu_omega = 0.2;
        config.max_epochs = 60;
        config.record_iterates = true;
        config.num_batches = 1;
        let fdpe = fdpe_run(&datasets, &features, &topology, &config).unwrap();

        let sets: Vec<_> = datasets
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                crate::estimators::batch_estimates(
                    ds,
                    &features,
                    config.lambda,
                    config.horizon,
                    config.gamma,
                    config.taus[k],
                    config.u_mode,
                )
                .unwrap()
            })
            .collect();
        let alg1 = algorithm1_run(&sets, &topology, &config).unwrap();

        let fdpe_iters = fdpe.iterates.as_ref().unwrap();
        let alg1_iters = alg1.iterates.as_ref().unwrap();
        assert_eq!(fdpe_iters.len(), alg1_iters.len());
        for (step, (fi, ai)) in fdpe_iters.iter().zip(alg1_iters).enumerate() {
            for k in 0..3 {
                let dt = (&fi[k].0 - &ai[k].0).amax();
                let dw = (&fi[k].1 - &ai[k].1).amax();
                assert!(dt <= 1e-12 && dw <= 1e-12, "step {step} agent {k}");
            }
        }
    }

    #[test]
    fn fixed_point_is_stationary() {
        let (datasets, features, topology) = desk_problem(3, 120, 13);
        let mut config = desk_config(3);
        config.max_epochs = 5;
        config.num_batches = 4;
        config.tol = 0.0;
        // Compute the saddle of the aggregate problem.
        let sets: Vec<_> = datasets
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                crate::estimators::batch_estimates(
                    ds,
                    &features,
                    config.lambda,
                    config.horizon,
                    config.gamma,
                    config.taus[k],
                    config.u_mode,
                )
                .unwrap()
            })
            .collect();
        let (agg, _) = aggregate(&sets).unwrap();
        let (theta_o, omega_o) = saddle_point(&agg, config.eta, &config.theta_p).unwrap();
        config.init = Init::FixedPoint {
            theta: theta_o.clone(),
            omega: omega_o.clone(),
        };
        let trace = fdpe_run(&datasets, &features, &topology, &config).unwrap();
        for state_theta in &trace.final_thetas {
            assert!((state_theta - &theta_o).amax() < 1e-12);
        }
        for state_omega in &trace.final_omegas {
            assert!((state_omega - &omega_o).amax() < 1e-12);
        }
    }

    #[test]
    fn fdpe_converges_to_saddle_on_desk_problem() {
        let (datasets, features, topology) = desk_problem(3, 400, 17);
        let mut config = desk_config(3);
        config.num_batches = 4;
        config.tol = 1e-24;
        config.max_epochs = 6000;
        let trace = fdpe_run(&datasets, &features, &topology, &config).unwrap();
        assert!(trace.gate.satisfied, "gate: {:?}", trace.gate);
        let final_err = trace.final_mean_emp_error();
        assert!(final_err < 1e-16, "final error {final_err}");
        assert!(trace.final_consensus_gap() < 1e-8);
        // Mini-batched run solves the same problem as the full-batch run.
        for k in 0..3 {
            assert!((&trace.final_thetas[k] - &trace.saddle_theta).norm() < 1e-7);
        }
    }

    #[test]
    fn divergence_sentinel_fires_on_huge_steps() {
        let (datasets, features, topology) = desk_problem(2, 120, 19);
        let mut config = desk_config(2);
        config.mu_theta = 1e4;
        config.mu_omega = 1e5;
        config.max_epochs = 400;
        let result = fdpe_run(&datasets, &features, &topology, &config);
        assert!(matches!(result, Err(Error::Divergence { .. })));
    }

    #[test]
    fn baseline_first_step_matches_exact_gradient_run() {
        let (datasets, features, topology) = desk_problem(3, 120, 23);
        let mut config = desk_config(3);
        config.num_batches = 1;
        config.max_epochs = 1;
        config.record_iterates = true;
        let baseline = decaying_baseline_run(&datasets, &features, &topology, &config, None).unwrap();
        let sets: Vec<_> = datasets
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                crate::estimators::batch_estimates(
                    ds,
                    &features,
                    config.lambda,
                    config.horizon,
                    config.gamma,
                    config.taus[k],
                    config.u_mode,
                )
                .unwrap()
            })
            .collect();
        let alg1 = algorithm1_run(&sets, &topology, &config).unwrap();
        // The first update of the plain baseline coincides with the exact
        // gradient scheme (both see the full-batch gradient at the start).
        let b0 = &baseline.iterates.as_ref().unwrap()[0];
        let a0 = &alg1.iterates.as_ref().unwrap()[0];
        for k in 0..3 {
            assert!((&b0[k].0 - &a0[k].0).amax() < 1e-15);
            assert!((&b0[k].1 - &a0[k].1).amax() < 1e-15);
        }
    }

    #[test]
    fn baseline_step_decay_schedule() {
        // At epoch 100 the decayed step is mu / (1 + 0.01 * 100) = mu / 2.
        let rate = 0.01f64;
        let factor = 1.0 / (1.0 + rate * 100.0);
        assert!((factor - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_step_accumulator_equals_frozen_full_gradient() {
        let (datasets, features, topology) = desk_problem(2, 150, 29);
        let mut config = desk_config(2);
        config.num_batches = 5;
        config.mu_theta = 0.0;
        config.mu_omega = 0.0;
        config.max_epochs = 3;
        config.tol = 0.0;
        config.record_iterates = true;
        config.init = Init::Point {
            theta: DVector::from_element(4, 0.3),
            omega: DVector::from_element(4, -0.2),
        };
        let trace = fdpe_run(&datasets, &features, &topology, &config).unwrap();
        let accs = trace.accumulators.as_ref().unwrap();

        // Independent per-sample reference for each agent.
        for (k, dataset) in datasets.iter().enumerate() {
            let table = ratios(dataset, config.horizon).unwrap();
            let est =
                SampleEstimator::new(dataset, &features, &table, config.lambda, config.gamma)
                    .unwrap();
            let usable = est.usable();
            let theta = DVector::from_element(4, 0.3);
            let omega = DVector::from_element(4, -0.2);
            let mut top = DVector::<f64>::zeros(4);
            let mut bottom = DVector::<f64>::zeros(4);
            for n in 0..usable {
                let a_n = est.a_n(n).unwrap();
                let b_n = est.b_n(n).unwrap();
                let c_n = est.c_n(n).unwrap();
                top += config.eta * DMatrix::<f64>::identity(4, 4) * (&theta - &config.theta_p)
                    - a_n.transpose() * &omega;
                bottom += a_n * &theta - b_n + c_n * &omega;
            }
            top /= usable as f64;
            bottom /= usable as f64;
            for epoch in 1..3 {
                let g = &accs[epoch][k];
                for i in 0..4 {
                    assert!(
                        (g[i] - top[i]).abs() < 1e-14,
                        "agent {k} epoch {epoch} row {i}"
                    );
                    assert!((g[4 + i] - bottom[i]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn accumulator_is_mean_of_epoch_evaluations() {
        // With nonzero steps, g^{e+1} must equal the mean of the per-sample
        // gradients evaluated at the points the epoch actually visited.
        let (datasets, features, topology) = desk_problem(2, 64, 31);
        let mut config = desk_config(2);
        config.num_batches = 3;
        config.max_epochs = 2;
        config.tol = 0.0;
        config.record_iterates = true;
        let trace = fdpe_run(&datasets, &features, &topology, &config).unwrap();
        let accs = trace.accumulators.as_ref().unwrap();
        let evals = trace.eval_points.as_ref().unwrap();

        // Recover each agent's permutation by replaying its seeded stream.
        for (k, dataset) in datasets.iter().enumerate() {
            let table = ratios(dataset, config.horizon).unwrap();
            let est =
                SampleEstimator::new(dataset, &features, &table, config.lambda, config.gamma)
                    .unwrap();
            let usable = est.usable();
            let batch = usable.div_ceil(3);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64 + 1);
            for epoch in 0..2 {
                let mut perm: Vec<usize> = (0..3).collect();
                perm.shuffle(&mut rng);
                let mut top = DVector::<f64>::zeros(4);
                let mut bottom = DVector::<f64>::zeros(4);
                for (i, &j) in perm.iter().enumerate() {
                    let (theta, omega) = evals[epoch * 3 + i][k].clone();
                    let lo = j * batch;
                    let hi = ((j + 1) * batch).min(usable);
                    for n in lo..hi {
                        let a_n = est.a_n(n).unwrap();
                        let b_n = est.b_n(n).unwrap();
                        let c_n = est.c_n(n).unwrap();
                        top += -a_n.transpose() * &omega;
                        bottom += a_n * &theta - b_n + c_n * &omega;
                    }
                }
                top /= usable as f64;
                bottom /= usable as f64;
                let g = &accs[epoch][k];
                for i in 0..4 {
                    assert!(
                        (g[i] - top[i]).abs() < 1e-12,
                        "agent {k} epoch {epoch} theta row {i}: {} vs {}",
                        g[i],
                        top[i]
                    );
                    assert!((g[4 + i] - bottom[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_agent_network_runs_centralized() {
        let (datasets, features, _) = desk_problem(1, 250, 37);
        let topology = metropolis::<f64>(&Graph::new(1)).unwrap();
        let mut config = desk_config(1);
        config.mu_theta = 0.05;
        config.mu_omega = 0.5;
        config.num_batches = 2;
        config.max_epochs = 20000;
        config.tol = 1e-24;
        let trace = fdpe_run(&datasets, &features, &topology, &config).unwrap();
        assert!(trace.final_mean_emp_error() < 1e-18);
        assert_eq!(trace.final_consensus_gap(), 0.0);
    }

    #[test]
    fn avrg_zero_step_freezes_and_fills_accumulator() {
        let terms = vec![
            (
                DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
                DVector::from_row_slice(&[1.0, 0.0]),
            ),
            (
                DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]),
                DVector::from_row_slice(&[0.0, 2.0]),
            ),
            (
                DMatrix::from_row_slice(2, 2, &[4.0, -0.5, -0.5, 2.0]),
                DVector::from_row_slice(&[-1.0, 1.0]),
            ),
        ];
        let problem = QuadraticSum::new(terms).unwrap();
        let x0 = DVector::from_row_slice(&[0.7, -0.4]);
        let trace = avrg_run(&problem, 0.0, 3, 3, x0.clone()).unwrap();
        let full = problem.full_gradient(&x0);
        for e in 0..3 {
            assert!((trace.epoch_starts[e + 1].clone() - &x0).amax() == 0.0);
            assert!((trace.accumulators[e].clone() - &full).amax() < 1e-15);
        }
    }

    #[test]
    fn avrg_first_epoch_is_plain_sgd() {
        let terms = vec![
            (
                DMatrix::from_row_slice(1, 1, &[2.0]),
                DVector::from_row_slice(&[1.0]),
            ),
            (
                DMatrix::from_row_slice(1, 1, &[1.0]),
                DVector::from_row_slice(&[3.0]),
            ),
        ];
        let problem = QuadraticSum::new(terms).unwrap();
        let mu = 0.05;
        let trace = avrg_run(&problem, mu, 1, 9, DVector::zeros(1)).unwrap();
        // Replay the permutation and apply plain SGD.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut perm: Vec<usize> = vec![0, 1];
        perm.shuffle(&mut rng);
        let mut x = DVector::<f64>::zeros(1);
        for &n in &perm {
            let g = problem.gradient(n, &x);
            x.axpy(-mu, &g, 1.0);
        }
        assert!((trace.epoch_starts[1].clone() - x).amax() < 1e-15);
    }

    #[test]
    fn avrg_linear_convergence_on_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dim = 3;
        let mut terms = Vec::new();
        for _ in 0..20 {
            let m = DMatrix::<f64>::from_fn(dim, dim, |_, _| rand::Rng::gen::<f64>(&mut rng) - 0.5);
            let p = &m * m.transpose() + DMatrix::identity(dim, dim);
            let q = DVector::from_fn(dim, |_, _| rand::Rng::gen::<f64>(&mut rng) - 0.5);
            terms.push((p, q));
        }
        let problem = QuadraticSum::new(terms).unwrap();
        let trace = avrg_run(&problem, 0.05, 60, 5, DVector::zeros(dim)).unwrap();
        let final_err = *trace.errors.last().unwrap();
        assert!(final_err < 1e-10, "final error {final_err}");
        let errs: Vec<f64> = trace.errors.iter().map(|e| e * e).collect();
        let (slope, r2) = log_linear_fit(&errs[5..45]).unwrap();
        assert!(slope < 0.0);
        assert!(r2 > 0.95, "r2 = {r2}");
    }

    #[test]
    fn identical_inputs_reproduce_traces_bitwise() {
        let (datasets, features, topology) = desk_problem(3, 150, 41);
        let mut config = desk_config(3);
        config.mu_theta = 0.05;
        config.mu_omega = 0.5;
        config.num_batches = 5;
        config.max_epochs = 25;
        config.tol = 0.0;
        let a = fdpe_run(&datasets, &features, &topology, &config).unwrap();
        let b = fdpe_run(&datasets, &features, &topology, &config).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert!(ra.emp_error == rb.emp_error && ra.consensus_gap == rb.consensus_gap);
        }
        for k in 0..3 {
            assert_eq!(a.final_thetas[k], b.final_thetas[k]);
            assert_eq!(a.final_omegas[k], b.final_omegas[k]);
        }
    }

    #[test]
    fn trace_helpers_and_rate_fit() {
        let values: Vec<f64> = (0..50).map(|i| 10.0 * (0.8f64).powi(i)).collect();
        let (slope, r2) = log_linear_fit(&values).unwrap();
        assert!((slope - (0.8f64).ln()).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }
}
