//! Behavior-policy trajectory collection and importance-sampling products.
//!
//! A dataset is one contiguous trajectory `(s_t, a_t, r_t)` collected under a
//! behavior policy. Off-policy corrections use the cumulative ratios
//! `xi_{t,t+h} = prod_{j=t}^{t+h-1} pi(a_j|s_j) / phi(a_j|s_j)`, which are
//! precomputed in a table with one multiply per cell.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{grid_move, Mdp, Policy, GRID_ACTIONS};
use crate::scalar::Scalar;

/// Horizon above which ratio products switch to log-space accumulation.
const LOG_SPACE_H: usize = 30;
/// Steps discarded before logging begins, so samples approximate the
/// steady-state weighting of the behavior chain.
pub const DEFAULT_BURN_IN: usize = 100;

/// Initial-state rule for [`collect_with`].
#[derive(Debug, Clone)]
pub enum StartState {
    /// Uniform over all states.
    UniformAll,
    /// Uniform over a subset (used when a behavior policy confines the agent
    /// to an exploration region).
    UniformIn(Vec<usize>),
    Fixed(usize),
}

/// Collection options beyond the common defaults.
#[derive(Debug, Clone)]
pub struct CollectOptions {
    pub burn_in: usize,
    pub start: StartState,
    /// When true, a visited state where the target policy puts mass on an
    /// action the behavior policy never takes aborts collection. When false
    /// the pair is counted and reported in [`Dataset::support_violations`].
    pub strict_support: bool,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            burn_in: DEFAULT_BURN_IN,
            start: StartState::UniformAll,
            strict_support: true,
        }
    }
}

/// One agent's ordered trajectory plus the policies that produced it.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    states: Vec<usize>,
    actions: Vec<usize>,
    rewards: Vec<T>,
    behavior: Policy<T>,
    target: Policy<T>,
    /// `(state, action)` pairs with target mass but zero behavior mass,
    /// observed at visited states. Empty in the supported off-policy regime.
    support_violations: Vec<(usize, usize)>,
    seed: Option<u64>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from raw logged columns, validating lengths and that
    /// every logged action had positive behavior probability.
    pub fn from_parts(
        states: Vec<usize>,
        actions: Vec<usize>,
        rewards: Vec<T>,
        behavior: Policy<T>,
        target: Policy<T>,
    ) -> Result<Self> {
        if states.len() != actions.len() || states.len() != rewards.len() {
            return Err(Error::DimensionMismatch(
                "states, actions and rewards must have equal length".into(),
            ));
        }
        if states.is_empty() {
            return Err(Error::InvalidArgument("dataset must not be empty".into()));
        }
        if behavior.num_states() != target.num_states()
            || behavior.num_actions() != target.num_actions()
        {
            return Err(Error::DimensionMismatch(
                "behavior and target policies must share dimensions".into(),
            ));
        }
        for (&s, &a) in states.iter().zip(&actions) {
            if s >= behavior.num_states() || a >= behavior.num_actions() {
                return Err(Error::InvalidArgument(format!(
                    "logged pair (s={s}, a={a}) outside policy dimensions"
                )));
            }
            if behavior.prob(s, a) <= T::zero() {
                return Err(Error::InvalidArgument(format!(
                    "logged action {a} at state {s} has zero behavior probability"
                )));
            }
        }
        Ok(Self {
            states,
            actions,
            rewards,
            behavior,
            target,
            support_violations: Vec::new(),
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn behavior(&self) -> &Policy<T> {
        &self.behavior
    }

    pub fn target(&self) -> &Policy<T> {
        &self.target
    }

    pub fn support_violations(&self) -> &[(usize, usize)] {
        &self.support_violations
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Replaces the reward column (global-state/local-reward preprocessing).
    pub fn with_rewards(&self, rewards: Vec<T>) -> Result<Self> {
        if rewards.len() != self.states.len() {
            return Err(Error::DimensionMismatch(
                "replacement rewards length differs from trajectory length".into(),
            ));
        }
        let mut out = self.clone();
        out.rewards = rewards;
        Ok(out)
    }

    /// Contiguous sub-trajectory `[lo, hi)`, keeping policies and provenance.
    pub fn slice(&self, lo: usize, hi: usize) -> Result<Self> {
        if lo >= hi || hi > self.len() {
            return Err(Error::InvalidArgument(format!(
                "invalid slice bounds [{lo}, {hi}) for dataset of length {}",
                self.len()
            )));
        }
        Ok(Self {
            states: self.states[lo..hi].to_vec(),
            actions: self.actions[lo..hi].to_vec(),
            rewards: self.rewards[lo..hi].to_vec(),
            behavior: self.behavior.clone(),
            target: self.target.clone(),
            support_violations: self.support_violations.clone(),
            seed: self.seed,
        })
    }
}

/// Collects a single contiguous trajectory of length `n` under the behavior
/// policy, starting from a uniformly random state after a burn-in. Strict
/// off-policy support checking is on; see [`collect_with`] for options.
pub fn collect<T: Scalar>(
    mdp: &Mdp<T>,
    behavior: &Policy<T>,
    target: &Policy<T>,
    n: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    collect_with(mdp, behavior, target, n, seed, &CollectOptions::default())
}

pub fn collect_with<T: Scalar>(
    mdp: &Mdp<T>,
    behavior: &Policy<T>,
    target: &Policy<T>,
    n: usize,
    seed: u64,
    options: &CollectOptions,
) -> Result<Dataset<T>> {
    if behavior.num_states() != mdp.num_states()
        || behavior.num_actions() != mdp.num_actions()
        || target.num_states() != mdp.num_states()
        || target.num_actions() != mdp.num_actions()
    {
        return Err(Error::DimensionMismatch(
            "policy dimensions differ from the MDP".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("trajectory length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = match &options.start {
        StartState::UniformAll => rng.gen_range(0..mdp.num_states()),
        StartState::UniformIn(set) => {
            if set.is_empty() {
                return Err(Error::InvalidArgument("start-state set is empty".into()));
            }
            set[rng.gen_range(0..set.len())]
        }
        StartState::Fixed(s) => {
            if *s >= mdp.num_states() {
                return Err(Error::InvalidArgument(format!("start state {s} out of range")));
            }
            *s
        }
    };

    let mut checked = vec![false; mdp.num_states()];
    let mut violations = Vec::new();
    let mut states = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);

    let total = options.burn_in + n;
    for step in 0..total {
        if !checked[state] {
            checked[state] = true;
            for a in 0..mdp.num_actions() {
                if target.prob(state, a) > T::zero() && behavior.prob(state, a) == T::zero() {
                    if options.strict_support {
                        return Err(Error::UnsupportedOffPolicy {
                            state,
                            action: a,
                            target_prob: target.prob(state, a).to_f64().unwrap_or(f64::NAN),
                        });
                    }
                    violations.push((state, a));
                }
            }
        }
        let action = sample_index(&mut rng, |a| behavior.prob(state, a), mdp.num_actions());
        let next = sample_index(&mut rng, |sp| mdp.transition(action)[(state, sp)], mdp.num_states());
        if step >= options.burn_in {
            states.push(state);
            actions.push(action);
            rewards.push(mdp.reward(action)[(state, next)]);
        }
        state = next;
    }

    let mut data = Dataset::from_parts(
        states,
        actions,
        rewards,
        behavior.clone(),
        target.clone(),
    )?;
    data.support_violations = violations;
    data.seed = Some(seed);
    Ok(data)
}

/// Inverse-CDF sampling over `len` outcomes with probabilities `prob(i)`.
fn sample_index<T: Scalar>(rng: &mut ChaCha8Rng, prob: impl Fn(usize) -> T, len: usize) -> usize {
    let mut u: f64 = rng.gen();
    let mut chosen = len - 1;
    for i in 0..len {
        let p = prob(i).to_f64().unwrap_or(0.0);
        if u < p {
            chosen = i;
            break;
        }
        u -= p;
    }
    chosen
}

/// Zeroes the probability of every action that would leave `region` under the
/// deterministic grid dynamics and renormalizes; rows outside the region are
/// untouched.
pub fn restricted_policy<T: Scalar>(
    base: &Policy<T>,
    region: &HashSet<usize>,
    width: usize,
    height: usize,
) -> Result<Policy<T>> {
    if region.is_empty() {
        return Err(Error::InvalidArgument("exploration region is empty".into()));
    }
    if base.num_actions() != GRID_ACTIONS || base.num_states() != width * height {
        return Err(Error::DimensionMismatch(
            "restricted_policy expects a grid-shaped policy".into(),
        ));
    }
    let mut probs = base.probs().clone();
    for &s in region {
        let mut row_sum = T::zero();
        let mut zeroed = false;
        for a in 0..GRID_ACTIONS {
            let dest = grid_move(width, height, s, a);
            if !region.contains(&dest) && probs[(s, a)] > T::zero() {
                probs[(s, a)] = T::zero();
                zeroed = true;
            }
            row_sum += probs[(s, a)];
        }
        if row_sum == T::zero() {
            return Err(Error::InvalidRegion { state: s });
        }
        // Rows that lost no mass stay bit-identical to the base policy.
        if zeroed {
            for a in 0..GRID_ACTIONS {
                probs[(s, a)] /= row_sum;
            }
        }
    }
    Policy::new(probs)
}

/// Partitions a `width x height` grid into `nx x ny` rectangular regions.
/// Remainder rows/columns go to the last block in each direction.
pub fn grid_partition(width: usize, height: usize, nx: usize, ny: usize) -> Vec<HashSet<usize>> {
    let bw = width / nx;
    let bh = height / ny;
    let mut regions = Vec::with_capacity(nx * ny);
    for by in 0..ny {
        for bx in 0..nx {
            let x_lo = bx * bw;
            let x_hi = if bx + 1 == nx { width } else { (bx + 1) * bw };
            let y_lo = by * bh;
            let y_hi = if by + 1 == ny { height } else { (by + 1) * bh };
            let mut region = HashSet::new();
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    region.insert(y * width + x);
                }
            }
            regions.push(region);
        }
    }
    regions
}

/// Evaluates per-agent reward models along a shared trajectory, producing
/// one local reward stream per agent for the global-state/local-reward
/// setting. The final step has no logged successor state and is never
/// consumed by the window estimators, so its entry is zero.
pub fn marl_reward_streams<T: Scalar>(
    global: &Dataset<T>,
    locals: &[Mdp<T>],
) -> Result<Vec<Vec<T>>> {
    let n = global.len();
    locals
        .iter()
        .map(|model| {
            if model.num_states() <= *global.states().iter().max().unwrap_or(&0)
                || model.num_actions() <= *global.actions().iter().max().unwrap_or(&0)
            {
                return Err(Error::DimensionMismatch(
                    "local reward model smaller than the logged trajectory".into(),
                ));
            }
            Ok((0..n)
                .map(|t| {
                    if t + 1 < n {
                        model.reward(global.actions()[t])
                            [(global.states()[t], global.states()[t + 1])]
                    } else {
                        T::zero()
                    }
                })
                .collect())
        })
        .collect()
}

/// Precomputed cumulative importance ratios `xi_{t,t+h}` for
/// `t in [0, N-H)`, `h in [0, H]`, with `xi_{t,t} = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable<T: Scalar> {
    /// Row-major `usable x (h + 1)` storage.
    xi: DMatrix<T>,
    usable: usize,
    horizon: usize,
}

impl<T: Scalar> RatioTable<T> {
    pub fn usable(&self) -> usize {
        self.usable
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `xi_{t, t+h}`.
    pub fn xi(&self, t: usize, h: usize) -> T {
        self.xi[(t, h)]
    }
}

/// Builds the ratio table by forward recursion
/// `xi_{t,t+h} = xi_{t,t+h-1} * pi(a|s)/phi(a|s)` evaluated at step `t+h-1`.
/// For horizons above `30` the products are accumulated in log space to
/// avoid under/overflow of long ratio chains.
pub fn ratios<T: Scalar>(dataset: &Dataset<T>, horizon: usize) -> Result<RatioTable<T>> {
    let n = dataset.len();
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if n <= horizon {
        return Err(Error::InsufficientData { n, h: horizon });
    }
    let usable = n - horizon;
    let mut xi = DMatrix::<T>::zeros(usable, horizon + 1);
    let log_space = horizon > LOG_SPACE_H;
    for t in 0..usable {
        xi[(t, 0)] = T::one();
        if log_space {
            let mut log_acc = T::zero();
            for h in 1..=horizon {
                let j = t + h - 1;
                let s = dataset.states()[j];
                let a = dataset.actions()[j];
                let ratio = dataset.target().prob(s, a) / dataset.behavior().prob(s, a);
                if ratio == T::zero() {
                    // A zero ratio stays zero for the rest of the row.
                    for hh in h..=horizon {
                        xi[(t, hh)] = T::zero();
                    }
                    break;
                }
                log_acc += ratio.ln();
                xi[(t, h)] = log_acc.exp();
            }
        } else {
            for h in 1..=horizon {
                let j = t + h - 1;
                let s = dataset.states()[j];
                let a = dataset.actions()[j];
                let ratio = dataset.target().prob(s, a) / dataset.behavior().prob(s, a);
                xi[(t, h)] = xi[(t, h - 1)] * ratio;
            }
        }
    }
    Ok(RatioTable {
        xi,
        usable,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{grid_mdp, induce_chain, random_mdp, stationary_distribution};
    use nalgebra::DMatrix;

    fn mix_policies(a: &Policy<f64>, b: &Policy<f64>, w: f64) -> Policy<f64> {
        let probs = a.probs() * w + b.probs() * (1.0 - w);
        Policy::new(probs).unwrap()
    }

    #[test]
    fn on_policy_ratios_are_exactly_one() {
        let (mdp, policy) = random_mdp::<f64>(6, 3, 0.2, 0.5, 1.0, 0.9, 4).unwrap();
        let data = collect(&mdp, &policy, &policy, 40, 9).unwrap();
        let table = ratios(&data, 5).unwrap();
        for t in 0..table.usable() {
            for h in 0..=5 {
                assert_eq!(table.xi(t, h), 1.0);
            }
        }
    }

    #[test]
    fn single_step_ratio_is_one_factor() {
        let (mdp, target) = random_mdp::<f64>(5, 2, 0.2, 0.5, 1.0, 0.9, 6).unwrap();
        let behavior = mix_policies(&target, &Policy::uniform(5, 2), 0.5);
        let data = collect(&mdp, &behavior, &target, 30, 10).unwrap();
        let table = ratios(&data, 1).unwrap();
        for t in 0..table.usable() {
            let s = data.states()[t];
            let a = data.actions()[t];
            let expect = target.prob(s, a) / behavior.prob(s, a);
            assert_eq!(table.xi(t, 1), expect);
        }
    }

    #[test]
    fn recursion_matches_direct_product() {
        let (mdp, target) = random_mdp::<f64>(5, 3, 0.2, 0.5, 1.0, 0.9, 13).unwrap();
        let behavior = mix_policies(&target, &Policy::uniform(5, 3), 0.6);
        let data = collect(&mdp, &behavior, &target, 20, 3).unwrap();
        let table = ratios(&data, 5).unwrap();
        for t in 0..table.usable() {
            for h in 0..=5 {
                let mut direct = 1.0;
                for j in t..t + h {
                    let s = data.states()[j];
                    let a = data.actions()[j];
                    direct *= target.prob(s, a) / behavior.prob(s, a);
                }
                assert!(
                    (table.xi(t, h) - direct).abs() <= 1e-14 * direct.abs().max(1.0),
                    "cell ({t}, {h})"
                );
            }
        }
    }

    #[test]
    fn log_space_path_agrees_with_products() {
        let (mdp, target) = random_mdp::<f64>(5, 3, 0.2, 0.5, 1.0, 0.9, 13).unwrap();
        let behavior = mix_policies(&target, &Policy::uniform(5, 3), 0.7);
        let data = collect(&mdp, &behavior, &target, 80, 3).unwrap();
        let table = ratios(&data, 40).unwrap();
        for t in 0..table.usable() {
            let mut direct = 1.0f64;
            for j in t..t + 40 {
                let s = data.states()[j];
                let a = data.actions()[j];
                direct *= target.prob(s, a) / behavior.prob(s, a);
            }
            let got = table.xi(t, 40);
            assert!(
                (got - direct).abs() <= 1e-10 * direct.abs().max(1e-30),
                "row {t}: {got} vs {direct}"
            );
        }
    }

    #[test]
    fn ratio_table_rejects_short_datasets() {
        let (mdp, policy) = random_mdp::<f64>(4, 2, 0.2, 0.5, 1.0, 0.9, 2).unwrap();
        let data = collect(&mdp, &policy, &policy, 5, 1).unwrap();
        assert!(matches!(
            ratios(&data, 5),
            Err(Error::InsufficientData { n: 5, h: 5 })
        ));
    }

    #[test]
    fn strict_support_check_fires() {
        let (mdp, target) = grid_mdp::<f64>(3, 3, 0.9, 5).unwrap();
        // Behavior that never moves RIGHT anywhere.
        let mut probs = target.probs().clone();
        for s in 0..9 {
            probs[(s, 3)] = 0.0;
            let sum: f64 = (0..4).map(|a| probs[(s, a)]).sum();
            for a in 0..4 {
                probs[(s, a)] /= sum;
            }
        }
        let behavior = Policy::new(probs).unwrap();
        let strict = collect(&mdp, &behavior, &target, 50, 7);
        assert!(matches!(strict, Err(Error::UnsupportedOffPolicy { .. })));

        let lenient = collect_with(
            &mdp,
            &behavior,
            &target,
            50,
            7,
            &CollectOptions {
                strict_support: false,
                ..CollectOptions::default()
            },
        )
        .unwrap();
        assert!(!lenient.support_violations().is_empty());
    }

    #[test]
    fn visit_frequencies_match_stationary_distribution() {
        let (mdp, policy) = random_mdp::<f64>(8, 3, 0.3, 0.5, 1.0, 0.9, 77).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        let d = stationary_distribution(&chain).unwrap();
        let n = 1_000_000;
        let data = collect(&mdp, &policy, &policy, n, 123).unwrap();
        let mut counts = vec![0usize; 8];
        for &s in data.states() {
            counts[s] += 1;
        }
        let tv: f64 = (0..8)
            .map(|s| (counts[s] as f64 / n as f64 - d[s]).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn restricted_policy_whole_grid_is_identity() {
        let (_, policy) = grid_mdp::<f64>(4, 4, 0.9, 19).unwrap();
        let region: HashSet<usize> = (0..16).collect();
        let out = restricted_policy(&policy, &region, 4, 4).unwrap();
        assert_eq!(out.probs(), policy.probs());
    }

    #[test]
    fn restricted_policy_renormalizes_region_corner() {
        let (_, policy) = grid_mdp::<f64>(4, 4, 0.9, 19).unwrap();
        // Top-left 2x2 region; its inner corner state 5 = (1,1) can still
        // move UP and LEFT but not DOWN or RIGHT.
        let region: HashSet<usize> = [0usize, 1, 4, 5].into_iter().collect();
        let out = restricted_policy(&policy, &region, 4, 4).unwrap();
        assert_eq!(out.prob(5, crate::mdp::ACTION_DOWN), 0.0);
        assert_eq!(out.prob(5, crate::mdp::ACTION_RIGHT), 0.0);
        let sum: f64 = (0..4).map(|a| out.prob(5, a)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Rows outside the region are untouched.
        assert_eq!(out.prob(10, 0), policy.prob(10, 0));
    }

    #[test]
    fn nine_region_partition_yields_nine_policies() {
        let (_, policy) = grid_mdp::<f64>(15, 15, 0.9, 40).unwrap();
        let regions = grid_partition(15, 15, 3, 3);
        assert_eq!(regions.len(), 9);
        let mut total = 0;
        for region in &regions {
            total += region.len();
            let p = restricted_policy(&policy, region, 15, 15).unwrap();
            for s in 0..225 {
                let sum: f64 = (0..4).map(|a| p.prob(s, a)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(total, 225);
    }

    #[test]
    fn invalid_region_error_on_isolated_state() {
        let (_, policy) = grid_mdp::<f64>(4, 4, 0.9, 19).unwrap();
        // State 5 = (1,1) is interior: every move leaves a singleton region.
        let region: HashSet<usize> = [5usize].into_iter().collect();
        assert!(matches!(
            restricted_policy(&policy, &region, 4, 4),
            Err(Error::InvalidRegion { state: 5 })
        ));
    }

    #[test]
    fn dataset_from_parts_validates_behavior_support() {
        let probs = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let behavior = Policy::new(probs).unwrap();
        let target = Policy::uniform(2, 2);
        let err = Dataset::from_parts(
            vec![0, 0],
            vec![1, 0],
            vec![0.0, 0.0],
            behavior,
            target,
        );
        assert!(err.is_err());
    }
}
