//! Finite MDPs, policy-induced Markov chains, exact value functions and
//! stationary distributions.
//!
//! A finite MDP is the tuple (S, A, P, r, gamma) with dense transition and
//! reward tensors. Fixing a policy reduces it to a Markov reward process
//! with transition matrix `P^pi` and expected one-step reward `r^pi`, for
//! which the value function solves `(I - gamma P^pi) v = r^pi`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{cvt, scaled_tol, Scalar};

/// Name of the pseudo-random generator used by every seeded constructor.
/// Recorded in serialized artifacts so experiments replay bit-exactly.
pub const GENERATOR_NAME: &str = "chacha8/v1";

/// Row-sum tolerance for stochastic matrices.
const STOCHASTIC_TOL: f64 = 1e-12;
/// Residual target of the stationary-distribution power iteration.
const POWER_TOL: f64 = 1e-12;
/// Iteration cap of the power iteration.
const MAX_POWER_ITERS: usize = 1_000_000;
/// Attempts before giving up on generating an ergodic random MDP.
const RESAMPLE_BUDGET: usize = 200;

/// Finite MDP with dense tensors `P(s'|s,a)` and `r(s,a,s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp<T: Scalar> {
    num_states: usize,
    num_actions: usize,
    /// One `S x S` matrix per action; row `s`, column `s'`.
    transitions: Vec<DMatrix<T>>,
    /// One `S x S` matrix per action holding `r(s, a, s')`.
    rewards: Vec<DMatrix<T>>,
    gamma: T,
}

impl<T: Scalar> Mdp<T> {
    pub fn new(
        transitions: Vec<DMatrix<T>>,
        rewards: Vec<DMatrix<T>>,
        gamma: T,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::InvalidArgument("MDP needs at least one action".into()));
        }
        if gamma < T::zero() || gamma >= T::one() {
            return Err(Error::InvalidArgument(format!(
                "discount factor must lie in [0, 1), got {gamma}"
            )));
        }
        let num_states = transitions[0].nrows();
        let num_actions = transitions.len();
        if rewards.len() != num_actions {
            return Err(Error::DimensionMismatch(
                "reward tensor action count differs from transition tensor".into(),
            ));
        }
        let tol = scaled_tol::<T>(STOCHASTIC_TOL, 256.0);
        for (a, p) in transitions.iter().enumerate() {
            if p.nrows() != num_states || p.ncols() != num_states {
                return Err(Error::DimensionMismatch(format!(
                    "transition matrix for action {a} is {}x{}, expected {num_states}x{num_states}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            if rewards[a].nrows() != num_states || rewards[a].ncols() != num_states {
                return Err(Error::DimensionMismatch(format!(
                    "reward matrix for action {a} has wrong shape"
                )));
            }
            for s in 0..num_states {
                let mut sum = T::zero();
                for sp in 0..num_states {
                    let v = p[(s, sp)];
                    if v < T::zero() {
                        return Err(Error::InvalidArgument(format!(
                            "negative transition probability at (s={s}, a={a}, s'={sp})"
                        )));
                    }
                    sum += v;
                }
                if (sum - T::one()).abs() > tol {
                    return Err(Error::NotStochastic {
                        row: s,
                        sum: sum.to_f64().unwrap_or(f64::NAN),
                    });
                }
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            transitions,
            rewards,
            gamma,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn transition(&self, action: usize) -> &DMatrix<T> {
        &self.transitions[action]
    }

    pub fn reward(&self, action: usize) -> &DMatrix<T> {
        &self.rewards[action]
    }
}

/// State-conditional action distribution, shape `S x A`. Serves as both the
/// target policy being evaluated and the behavior policy generating data.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T: Scalar> {
    probs: DMatrix<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(probs: DMatrix<T>) -> Result<Self> {
        let tol = scaled_tol::<T>(STOCHASTIC_TOL, 256.0);
        for s in 0..probs.nrows() {
            let mut sum = T::zero();
            for a in 0..probs.ncols() {
                if probs[(s, a)] < T::zero() {
                    return Err(Error::InvalidArgument(format!(
                        "negative action probability at (s={s}, a={a})"
                    )));
                }
                sum += probs[(s, a)];
            }
            if (sum - T::one()).abs() > tol {
                return Err(Error::NotStochastic {
                    row: s,
                    sum: sum.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self { probs })
    }

    /// Uniform policy over `num_actions` actions in each of `num_states` states.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = cvt::<T>(1.0 / num_actions as f64);
        Self {
            probs: DMatrix::from_element(num_states, num_actions, p),
        }
    }

    pub fn prob(&self, state: usize, action: usize) -> T {
        self.probs[(state, action)]
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &DMatrix<T> {
        &self.probs
    }
}

/// Markov reward process induced by a policy on an MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain<T: Scalar> {
    transition: DMatrix<T>,
    expected_reward: DVector<T>,
}

impl<T: Scalar> MarkovChain<T> {
    pub fn new(transition: DMatrix<T>, expected_reward: DVector<T>) -> Result<Self> {
        if transition.nrows() != transition.ncols() {
            return Err(Error::DimensionMismatch("transition matrix must be square".into()));
        }
        if expected_reward.len() != transition.nrows() {
            return Err(Error::DimensionMismatch(
                "expected reward length differs from state count".into(),
            ));
        }
        let tol = scaled_tol::<T>(STOCHASTIC_TOL, 256.0);
        for s in 0..transition.nrows() {
            let mut sum = T::zero();
            for sp in 0..transition.ncols() {
                if transition[(s, sp)] < T::zero() {
                    return Err(Error::InvalidArgument(format!(
                        "negative transition probability in row {s}"
                    )));
                }
                sum += transition[(s, sp)];
            }
            if (sum - T::one()).abs() > tol {
                return Err(Error::NotStochastic {
                    row: s,
                    sum: sum.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self {
            transition,
            expected_reward,
        })
    }

    pub fn num_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<T> {
        &self.transition
    }

    pub fn expected_reward(&self) -> &DVector<T> {
        &self.expected_reward
    }
}

/// Reduces `(mdp, policy)` to the Markov reward process with
/// `P^pi[i, j] = sum_a pi(a|i) P(j|i,a)` and
/// `r^pi(i) = sum_a sum_j pi(a|i) P(j|i,a) r(i,a,j)`.
pub fn induce_chain<T: Scalar>(mdp: &Mdp<T>, policy: &Policy<T>) -> Result<MarkovChain<T>> {
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{}, MDP has S={} A={}",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    let s_count = mdp.num_states();
    let mut transition = DMatrix::<T>::zeros(s_count, s_count);
    let mut expected_reward = DVector::<T>::zeros(s_count);
    for a in 0..mdp.num_actions() {
        let p = mdp.transition(a);
        let r = mdp.reward(a);
        for s in 0..s_count {
            let w = policy.prob(s, a);
            if w == T::zero() {
                continue;
            }
            for sp in 0..s_count {
                let pr = p[(s, sp)];
                transition[(s, sp)] += w * pr;
                expected_reward[s] += w * pr * r[(s, sp)];
            }
        }
    }
    MarkovChain::new(transition, expected_reward)
}

/// Exact discounted value function: solves `(I - gamma P) v = r`.
pub fn value_function<T: Scalar>(chain: &MarkovChain<T>, gamma: T) -> Result<DVector<T>> {
    if gamma < T::zero() || gamma >= T::one() {
        return Err(Error::InvalidArgument(format!(
            "discount factor must lie in [0, 1), got {gamma}"
        )));
    }
    let n = chain.num_states();
    let mut system = DMatrix::<T>::identity(n, n);
    system -= chain.transition() * gamma;
    let lu = system.lu();
    lu.solve(chain.expected_reward())
        .ok_or_else(|| Error::Singular("(I - gamma P) solve failed".into()))
}

/// Directed graph reachability on the positive entries of `p`.
fn reachable_from<T: Scalar>(p: &DMatrix<T>, start: usize) -> Vec<bool> {
    let n = p.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if !seen[v] && p[(u, v)] > T::zero() {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

fn is_irreducible<T: Scalar>(p: &DMatrix<T>) -> bool {
    let n = p.nrows();
    if !reachable_from(p, 0).iter().all(|&x| x) {
        return false;
    }
    // Reverse reachability: every node reaches node 0.
    let pt = p.transpose();
    reachable_from(&pt, 0).iter().all(|&x| x) && n > 0
}

/// Period test for an irreducible chain: gcd over edges of
/// `dist(u) + 1 - dist(v)` with BFS distances from node 0.
fn is_aperiodic<T: Scalar>(p: &DMatrix<T>) -> bool {
    let n = p.nrows();
    if n == 1 {
        return p[(0, 0)] > T::zero();
    }
    let mut dist = vec![i64::MIN; n];
    let mut queue = std::collections::VecDeque::new();
    dist[0] = 0;
    queue.push_back(0usize);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p[(u, v)] > T::zero() && dist[v] == i64::MIN {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g: i64 = 0;
    for u in 0..n {
        for v in 0..n {
            if p[(u, v)] > T::zero() {
                g = gcd(g, (dist[u] + 1 - dist[v]).abs());
            }
        }
    }
    g == 1
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// True when the chain is irreducible and aperiodic.
pub fn is_ergodic<T: Scalar>(chain: &MarkovChain<T>) -> bool {
    is_irreducible(chain.transition()) && is_aperiodic(chain.transition())
}

/// Stationary distribution of an ergodic chain via power iteration.
///
/// The chain must be irreducible and aperiodic; periodic or reducible chains
/// are rejected up front. The iteration runs with tolerance `1e-12` and a cap
/// of `10^6` sweeps.
pub fn stationary_distribution<T: Scalar>(chain: &MarkovChain<T>) -> Result<DVector<T>> {
    if !is_ergodic(chain) {
        return Err(Error::ChainNotErgodic);
    }
    power_iterate(chain.transition(), None)
}

/// Unique stationary distribution of a chain with a single closed
/// communicating class. Unlike [`stationary_distribution`] this tolerates
/// periodic recurrent classes and transient states: it iterates the lazy
/// kernel `(P + I)/2`, which has the same stationary vector and always mixes.
pub fn invariant_distribution<T: Scalar>(chain: &MarkovChain<T>) -> Result<DVector<T>> {
    let p = chain.transition();
    let n = p.nrows();
    let classes = strongly_connected_components(p);
    let mut closed = Vec::new();
    for class in &classes {
        let inside = vec_to_mask(class, n);
        let leaves = class
            .iter()
            .any(|&u| (0..n).any(|v| !inside[v] && p[(u, v)] > T::zero()));
        if !leaves {
            closed.push(class.clone());
        }
    }
    if closed.len() != 1 {
        return Err(Error::ChainNotErgodic);
    }
    let class = &closed[0];
    // Lazy power iteration restricted to the closed class.
    let m = class.len();
    let mut sub = DMatrix::<T>::zeros(m, m);
    for (i, &u) in class.iter().enumerate() {
        for (j, &v) in class.iter().enumerate() {
            sub[(i, j)] = p[(u, v)];
        }
    }
    let half = cvt::<T>(0.5);
    let lazy = &sub * half + DMatrix::<T>::identity(m, m) * half;
    let d = power_iterate(&lazy, Some(&sub))?;
    let mut full = DVector::<T>::zeros(n);
    for (i, &u) in class.iter().enumerate() {
        full[u] = d[i];
    }
    Ok(full)
}

fn vec_to_mask(class: &[usize], n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &u in class {
        mask[u] = true;
    }
    mask
}

/// Left power iteration `d <- d P` from the uniform distribution. The
/// residual is checked against `check` when given (used by the lazy variant
/// to certify the fixed point of the original kernel).
fn power_iterate<T: Scalar>(p: &DMatrix<T>, check: Option<&DMatrix<T>>) -> Result<DVector<T>> {
    let n = p.nrows();
    let tol = scaled_tol::<T>(POWER_TOL, 16.0);
    let mut d = DVector::<T>::from_element(n, cvt::<T>(1.0 / n as f64));
    for _ in 0..MAX_POWER_ITERS {
        let next = p.tr_mul(&d);
        let diff = (&next - &d).amax();
        d = next;
        if diff < tol {
            // Renormalize drift away from sum one.
            let total: T = d.iter().copied().sum();
            d /= total;
            let target = check.unwrap_or(p);
            let residual = (target.tr_mul(&d) - &d).amax();
            if residual < scaled_tol::<T>(1e-10, 1024.0) {
                return Ok(d);
            }
        }
    }
    Err(Error::ChainNotErgodic)
}

/// Kosaraju strongly connected components on the positive entries of `p`.
fn strongly_connected_components<T: Scalar>(p: &DMatrix<T>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        // Iterative DFS with explicit post-order.
        let mut stack = vec![(start, 0usize)];
        seen[start] = true;
        while let Some(top) = stack.last_mut() {
            let u = top.0;
            let mut pushed = None;
            while top.1 < n {
                let v = top.1;
                top.1 += 1;
                if p[(u, v)] > T::zero() && !seen[v] {
                    pushed = Some(v);
                    break;
                }
            }
            match pushed {
                Some(v) => {
                    seen[v] = true;
                    stack.push((v, 0));
                }
                None => {
                    order.push(u);
                    stack.pop();
                }
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut components = Vec::new();
    for &start in order.iter().rev() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut class = Vec::new();
        let mut stack = vec![start];
        comp[start] = id;
        while let Some(u) = stack.pop() {
            class.push(u);
            for v in 0..n {
                if p[(v, u)] > T::zero() && comp[v] == usize::MAX {
                    comp[v] = id;
                    stack.push(v);
                }
            }
        }
        components.push(class);
    }
    components
}

/// Grid actions in the order used by [`grid_mdp`].
pub const GRID_ACTIONS: usize = 4;
pub const ACTION_UP: usize = 0;
pub const ACTION_DOWN: usize = 1;
pub const ACTION_LEFT: usize = 2;
pub const ACTION_RIGHT: usize = 3;

/// Destination of a deterministic, boundary-clamped grid move.
pub fn grid_move(width: usize, height: usize, state: usize, action: usize) -> usize {
    let x = state % width;
    let y = state / width;
    let (nx, ny) = match action {
        ACTION_UP => (x, y.saturating_sub(1)),
        ACTION_DOWN => (x, (y + 1).min(height - 1)),
        ACTION_LEFT => (x.saturating_sub(1), y),
        ACTION_RIGHT => ((x + 1).min(width - 1), y),
        _ => panic!("grid action out of range: {action}"),
    };
    ny * width + nx
}

/// Deterministic-movement grid MDP with seeded random rewards and a seeded
/// random target policy. Moves off the edge clamp in place. Rewards are
/// uniform on `[0, 1)` for each reachable `(s, a, s')` triple.
pub fn grid_mdp<T: Scalar>(
    width: usize,
    height: usize,
    gamma: T,
    seed: u64,
) -> Result<(Mdp<T>, Policy<T>)> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidArgument(
            "grid dimensions must be at least 2x2".into(),
        ));
    }
    let s_count = width * height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(GRID_ACTIONS);
    let mut rewards = Vec::with_capacity(GRID_ACTIONS);
    for a in 0..GRID_ACTIONS {
        let mut p = DMatrix::<T>::zeros(s_count, s_count);
        let mut r = DMatrix::<T>::zeros(s_count, s_count);
        for s in 0..s_count {
            let dest = grid_move(width, height, s, a);
            p[(s, dest)] = T::one();
            r[(s, dest)] = cvt(rng.gen::<f64>());
        }
        transitions.push(p);
        rewards.push(r);
    }
    let mut probs = DMatrix::<T>::zeros(s_count, GRID_ACTIONS);
    for s in 0..s_count {
        let raw: Vec<f64> = (0..GRID_ACTIONS).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        for (a, v) in raw.iter().enumerate() {
            probs[(s, a)] = cvt(v / total);
        }
    }
    Ok((Mdp::new(transitions, rewards, gamma)?, Policy::new(probs)?))
}

/// Sparse random MDP in the style of the random-MDP experiment: transition
/// entries are zeroed with probability `p_zero_trans` and otherwise uniform,
/// rewards are zeroed with probability `p_zero_reward` and otherwise Gaussian
/// with standard deviation `reward_sd`. Resamples until the target-policy
/// chain is ergodic; every `(s, a)` row is guaranteed at least one positive
/// entry before normalization.
pub fn random_mdp<T: Scalar>(
    num_states: usize,
    num_actions: usize,
    p_zero_trans: f64,
    p_zero_reward: f64,
    reward_sd: f64,
    gamma: T,
    seed: u64,
) -> Result<(Mdp<T>, Policy<T>)> {
    if !(0.0..1.0).contains(&p_zero_trans) || !(0.0..1.0).contains(&p_zero_reward) {
        return Err(Error::InvalidArgument(
            "sparsity probabilities must lie in [0, 1)".into(),
        ));
    }
    if num_states < 2 || num_actions < 1 {
        return Err(Error::InvalidArgument("need at least 2 states and 1 action".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RESAMPLE_BUDGET {
        let mut transitions = Vec::with_capacity(num_actions);
        let mut rewards = Vec::with_capacity(num_actions);
        for _ in 0..num_actions {
            let mut p = DMatrix::<f64>::zeros(num_states, num_states);
            let mut r = DMatrix::<f64>::zeros(num_states, num_states);
            for s in 0..num_states {
                let mut row_sum = 0.0;
                for sp in 0..num_states {
                    if rng.gen::<f64>() >= p_zero_trans {
                        let v = rng.gen::<f64>();
                        p[(s, sp)] = v;
                        row_sum += v;
                    }
                    if rng.gen::<f64>() >= p_zero_reward {
                        // Box-Muller style sampling is not needed; rand_distr
                        // keeps the stream deterministic for a fixed seed.
                        let n: f64 = rng.sample(rand_distr::StandardNormal);
                        r[(s, sp)] = reward_sd * n;
                    }
                }
                if row_sum == 0.0 {
                    let sp = rng.gen_range(0..num_states);
                    let v = rng.gen::<f64>();
                    p[(s, sp)] = v;
                    row_sum = v;
                }
                for sp in 0..num_states {
                    p[(s, sp)] /= row_sum;
                }
            }
            transitions.push(p.map(|x| cvt::<T>(x)));
            rewards.push(r.map(|x| cvt::<T>(x)));
        }
        let mut probs = DMatrix::<T>::zeros(num_states, num_actions);
        for s in 0..num_states {
            let raw: Vec<f64> = (0..num_actions).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            for (a, v) in raw.iter().enumerate() {
                probs[(s, a)] = cvt(v / total);
            }
        }
        let mdp = Mdp::new(transitions, rewards, gamma)?;
        let policy = Policy::new(probs)?;
        let chain = induce_chain(&mdp, &policy)?;
        if is_ergodic(&chain) {
            return Ok((mdp, policy));
        }
    }
    Err(Error::GenerationFailed(format!(
        "no ergodic MDP found within {RESAMPLE_BUDGET} resampling attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_chain(p: [[f64; 2]; 2], r: [f64; 2]) -> MarkovChain<f64> {
        MarkovChain::new(
            DMatrix::from_row_slice(2, 2, &[p[0][0], p[0][1], p[1][0], p[1][1]]),
            DVector::from_row_slice(&r),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_policy_selects_action_slice() {
        let (mdp, _) = grid_mdp::<f64>(3, 3, 0.9, 7).unwrap();
        // One-hot policy that always picks RIGHT.
        let mut probs = DMatrix::zeros(9, 4);
        for s in 0..9 {
            probs[(s, ACTION_RIGHT)] = 1.0;
        }
        let policy = Policy::new(probs).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        assert_eq!(chain.transition(), mdp.transition(ACTION_RIGHT));
    }

    #[test]
    fn uniform_policy_with_equal_actions_recovers_shared_matrix() {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let r = DMatrix::zeros(2, 2);
        let mdp = Mdp::new(vec![p.clone(), p.clone()], vec![r.clone(), r], 0.5).unwrap();
        let policy = Policy::uniform(2, 2);
        let chain = induce_chain(&mdp, &policy).unwrap();
        assert!((chain.transition() - &p).amax() < 1e-15);
    }

    #[test]
    fn induced_chain_matches_hand_computed_sum() {
        // 3 states, 2 actions, with a hand-checkable mixture.
        let p0 = DMatrix::<f64>::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.1, 0.2, 0.7, 0.0, 0.0, 1.0]);
        let p1 = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.3, 0.3, 0.4, 0.25, 0.25, 0.5]);
        let r0 = DMatrix::from_element(3, 3, 1.0);
        let r1 = DMatrix::from_element(3, 3, 2.0);
        let mdp = Mdp::new(vec![p0.clone(), p1.clone()], vec![r0, r1], 0.9).unwrap();
        let probs = DMatrix::from_row_slice(3, 2, &[0.25, 0.75, 0.5, 0.5, 0.9, 0.1]);
        let policy = Policy::new(probs.clone()).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        for s in 0..3 {
            for sp in 0..3 {
                let expect = probs[(s, 0)] * p0[(s, sp)] + probs[(s, 1)] * p1[(s, sp)];
                assert!((chain.transition()[(s, sp)] - expect).abs() < 1e-15);
            }
            let expect_r = probs[(s, 0)] * 1.0 + probs[(s, 1)] * 2.0;
            assert!((chain.expected_reward()[s] - expect_r).abs() < 1e-14);
        }
    }

    #[test]
    fn value_function_gamma_zero_is_reward() {
        let chain = two_state_chain([[0.5, 0.5], [0.2, 0.8]], [3.0, -1.0]);
        let v = value_function(&chain, 0.0).unwrap();
        assert_eq!(v[0], 3.0);
        assert_eq!(v[1], -1.0);
    }

    #[test]
    fn absorbing_state_geometric_series() {
        let chain = MarkovChain::<f64>::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[1.0]),
        )
        .unwrap();
        let v = value_function(&chain, 0.5).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn value_function_matches_monte_carlo() {
        let (mdp, policy) = random_mdp::<f64>(10, 3, 0.3, 0.5, 1.0, 0.8, 42).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        let v = value_function(&chain, 0.8).unwrap();

        // Monte Carlo rollouts of the discounted return from state 0,
        // truncated where 0.8^t < 1e-15.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let horizon = 160;
        let episodes = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..episodes {
            let mut s = 0usize;
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                // Sample an action from the policy, then the next state.
                let mut u: f64 = rng.gen();
                let mut a = 0;
                for cand in 0..mdp.num_actions() {
                    let pa = policy.prob(s, cand);
                    if u < pa {
                        a = cand;
                        break;
                    }
                    u -= pa;
                    a = cand;
                }
                let mut w: f64 = rng.gen();
                let mut sp = 0;
                for cand in 0..mdp.num_states() {
                    let ps = mdp.transition(a)[(s, cand)];
                    if w < ps {
                        sp = cand;
                        break;
                    }
                    w -= ps;
                    sp = cand;
                }
                ret += disc * mdp.reward(a)[(s, sp)];
                disc *= 0.8;
                s = sp;
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let mean = sum / episodes as f64;
        let var = (sum_sq / episodes as f64 - mean * mean).max(0.0);
        let stderr = (var / episodes as f64).sqrt();
        assert!(
            (mean - v[0]).abs() < 3.0 * stderr + 1e-9,
            "MC mean {mean} vs exact {} (3 SE = {})",
            v[0],
            3.0 * stderr
        );
    }

    #[test]
    fn stationary_symmetric_two_state() {
        let chain = two_state_chain([[0.5, 0.5], [0.5, 0.5]], [0.0, 0.0]);
        let d = stationary_distribution(&chain).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12);
        assert!((d[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stationary_balance_equations() {
        // d solves d0 * 0.1 = d1 * 0.5, so d = [5/6, 1/6].
        let chain = two_state_chain([[0.9, 0.1], [0.5, 0.5]], [0.0, 0.0]);
        let d = stationary_distribution(&chain).unwrap();
        assert!((d[0] - 5.0 / 6.0).abs() < 1e-10);
        assert!((d[1] - 1.0 / 6.0).abs() < 1e-10);
    }

    #[test]
    fn periodic_chain_rejected() {
        let chain = two_state_chain([[0.0, 1.0], [1.0, 0.0]], [0.0, 0.0]);
        assert!(matches!(
            stationary_distribution(&chain),
            Err(Error::ChainNotErgodic)
        ));
    }

    #[test]
    fn invariant_distribution_handles_periodic_class() {
        // Period-2 chain still has the unique stationary vector [0.5, 0.5].
        let chain = two_state_chain([[0.0, 1.0], [1.0, 0.0]], [0.0, 0.0]);
        let d = invariant_distribution(&chain).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-10);
        assert!((d[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn invariant_distribution_zeroes_transient_states() {
        // State 0 is transient and feeds the closed class {1, 2}.
        let p = DMatrix::<f64>::from_row_slice(
            3,
            3,
            &[0.2, 0.8, 0.0, 0.0, 0.4, 0.6, 0.0, 0.7, 0.3],
        );
        let chain = MarkovChain::new(p, DVector::zeros(3)).unwrap();
        let d = invariant_distribution(&chain).unwrap();
        assert_eq!(d[0], 0.0);
        assert!((d.sum() - 1.0).abs() < 1e-12);
        let res = (chain.transition().tr_mul(&d) - &d).amax();
        assert!(res < 1e-10);
    }

    #[test]
    fn grid_dimensions_and_boundary_clamp() {
        let (mdp, _) = grid_mdp::<f64>(15, 15, 0.9, 3).unwrap();
        assert_eq!(mdp.num_states(), 225);
        assert_eq!(mdp.num_actions(), 4);

        let (small, _) = grid_mdp::<f64>(2, 2, 0.9, 3).unwrap();
        assert_eq!(small.num_states(), 4);
        // LEFT from column 0 stays in place.
        assert_eq!(grid_move(2, 2, 0, ACTION_LEFT), 0);
        assert_eq!(small.transition(ACTION_LEFT)[(0, 0)], 1.0);
    }

    #[test]
    fn grid_is_deterministic_per_seed() {
        let (a, pa) = grid_mdp::<f64>(4, 3, 0.9, 11).unwrap();
        let (b, pb) = grid_mdp::<f64>(4, 3, 0.9, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let (c, _) = grid_mdp::<f64>(4, 3, 0.9, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_mdp_experiment_shape_and_ergodicity() {
        let (mdp, policy) = random_mdp::<f64>(50, 10, 0.98, 0.99, 10.0, 0.93, 5).unwrap();
        assert_eq!(mdp.num_states(), 50);
        assert_eq!(mdp.num_actions(), 10);
        let chain = induce_chain(&mdp, &policy).unwrap();
        let d = stationary_distribution(&chain).unwrap();
        assert!((d.sum() - 1.0).abs() < 1e-10);
        assert!(d.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn random_mdp_dense_when_no_zeroing() {
        let (mdp, _) = random_mdp::<f64>(6, 2, 0.0, 0.5, 1.0, 0.9, 8).unwrap();
        for a in 0..2 {
            assert!(mdp.transition(a).iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn h_stage_bellman_identity() {
        let (mdp, policy) = random_mdp::<f64>(8, 3, 0.4, 0.5, 2.0, 0.9, 21).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        let v = value_function(&chain, 0.9).unwrap();
        let p = chain.transition();
        for h in [1usize, 2, 5] {
            let mut acc = DVector::<f64>::zeros(8);
            let mut pow = DMatrix::<f64>::identity(8, 8);
            for _ in 0..h {
                acc += &pow * chain.expected_reward();
                pow = &pow * (p * 0.9);
            }
            let rhs = &pow * &v + acc;
            assert!((rhs - &v).amax() < 1e-10, "h = {h}");
        }
    }

    #[test]
    fn works_at_f32() {
        let (mdp, policy) = grid_mdp::<f32>(3, 3, 0.9f32, 2).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        let v = value_function(&chain, 0.9f32).unwrap();
        assert_eq!(v.len(), 9);
    }
}
