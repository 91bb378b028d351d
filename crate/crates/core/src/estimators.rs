//! Per-sample and batch estimators of the quadratic problem data with
//! eligibility traces and importance sampling, plus multi-agent aggregation.
//!
//! For a trajectory sample at index `n` the estimators are
//!
//! ```text
//! A_n = x_n (rho_{n,0} x_n
//!            - gamma (1-lambda) sum_{h=0}^{H-1} (gamma lambda)^h xi_{n,n+h+1} x_{n+h+1}
//!            - (gamma lambda)^H xi_{n,n+H} x_{n+H})^T
//! b_n = x_n sum_{h=0}^{H-1} (gamma lambda)^h rho_{n,h} r_{n+h}
//! C_n = x_n x_n^T
//! ```
//!
//! with the trace weights
//! `rho_{t,n} = (1-lambda) sum_{h=n}^{H-1} lambda^{h-n} xi_{t,t+h+1} + lambda^{H-n} xi_{t,t+H}`.
//! Batch estimates are plain means over the `N - H` usable samples; agents
//! are combined by tau-weighted sums.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::sampler::{ratios, Dataset, RatioTable};
use crate::scalar::{cvt, Scalar};

/// Relative threshold for the aggregate positive-definite/invertibility
/// checks.
const ASSUMPTION_TOL: f64 = 1e-10;

/// Choice of the regularization weighting matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UMode {
    /// `U = I`.
    Identity,
    /// `U = C`, estimated per sample as `x_n x_n^T`.
    CHat,
}

/// Empirical `(A, b, C, U)` for one agent (or an aggregate), together with
/// the sample count and the agent weight `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet<T: Scalar> {
    pub a_hat: DMatrix<T>,
    pub b_hat: DVector<T>,
    pub c_hat: DMatrix<T>,
    pub u_hat: DMatrix<T>,
    pub n_samples: usize,
    pub tau: T,
}

impl<T: Scalar> EstimateSet<T> {
    pub fn dim(&self) -> usize {
        self.b_hat.len()
    }
}

/// Eligibility-trace weights `rho_{t,n}` for one start index `t`.
#[derive(Debug, Clone)]
pub struct TraceWeights<T: Scalar> {
    /// `rho[n]` for `n = 0..=H`; `rho[H] = xi_{t,t+H}`.
    pub rho: Vec<T>,
    pub lambda: T,
    pub horizon: usize,
    pub gamma: T,
}

impl<T: Scalar> TraceWeights<T> {
    /// Evaluates the weights at start index `t` by the backward recursion
    /// `rho_n = (1 - lambda) xi_{t,t+n+1} + lambda rho_{n+1}`.
    pub fn at(table: &RatioTable<T>, t: usize, lambda: T, gamma: T) -> Self {
        let h = table.horizon();
        let mut rho = vec![T::zero(); h + 1];
        rho[h] = table.xi(t, h);
        let one_minus = T::one() - lambda;
        for n in (0..h).rev() {
            rho[n] = one_minus * table.xi(t, n + 1) + lambda * rho[n + 1];
        }
        Self {
            rho,
            lambda,
            horizon: h,
            gamma,
        }
    }
}

/// Lazy per-sample estimator over a dataset, its features and a precomputed
/// ratio table. Nothing per-sample is materialized; each evaluation walks the
/// `H`-step window once.
pub struct SampleEstimator<'a, T: Scalar> {
    dataset: &'a Dataset<T>,
    ratio_table: &'a RatioTable<T>,
    /// Transposed feature matrix (`M x S`) so feature vectors are contiguous
    /// columns.
    features_t: DMatrix<T>,
    lambda: T,
    gamma: T,
}

impl<'a, T: Scalar> SampleEstimator<'a, T> {
    pub fn new(
        dataset: &'a Dataset<T>,
        features: &FeatureMap<T>,
        ratio_table: &'a RatioTable<T>,
        lambda: T,
        gamma: T,
    ) -> Result<Self> {
        if features.num_states() != dataset.behavior().num_states() {
            return Err(Error::DimensionMismatch(
                "feature matrix state count differs from policy state count".into(),
            ));
        }
        if lambda < T::zero() || lambda > T::one() {
            return Err(Error::InvalidArgument("lambda must lie in [0, 1]".into()));
        }
        if gamma < T::zero() || gamma >= T::one() {
            return Err(Error::InvalidArgument("gamma must lie in [0, 1)".into()));
        }
        Ok(Self {
            dataset,
            ratio_table,
            features_t: features.matrix().transpose(),
            lambda,
            gamma,
        })
    }

    pub fn usable(&self) -> usize {
        self.ratio_table.usable()
    }

    pub fn dim(&self) -> usize {
        self.features_t.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.ratio_table.horizon()
    }

    fn check_index(&self, n: usize) -> Result<()> {
        if n >= self.usable() {
            return Err(Error::IndexOutOfRange {
                index: n,
                usable: self.usable(),
            });
        }
        Ok(())
    }

    fn feature(&self, t: usize) -> nalgebra::DVectorView<'_, T> {
        self.features_t.column(self.dataset.states()[t])
    }

    /// Backward-recursed trace weights for start index `t`.
    fn rho_row(&self, t: usize) -> Vec<T> {
        let h = self.horizon();
        let mut rho = vec![T::zero(); h + 1];
        rho[h] = self.ratio_table.xi(t, h);
        let one_minus = T::one() - self.lambda;
        for n in (0..h).rev() {
            rho[n] = one_minus * self.ratio_table.xi(t, n + 1) + self.lambda * rho[n + 1];
        }
        rho
    }

    /// Right factor `w_n` of the rank-one estimate `A_n = x_n w_n^T`.
    fn a_core(&self, n: usize) -> DVector<T> {
        let h = self.horizon();
        let rho = self.rho_row(n);
        let mut w = DVector::<T>::zeros(self.dim());
        w.axpy(rho[0], &self.feature(n), T::zero());
        let gl = self.gamma * self.lambda;
        let lead = self.gamma * (T::one() - self.lambda);
        let mut glh = T::one(); // (gamma lambda)^h
        for step in 0..h {
            let coeff = lead * glh * self.ratio_table.xi(n, step + 1);
            w.axpy(-coeff, &self.feature(n + step + 1), T::one());
            glh *= gl;
        }
        // glh is now (gamma lambda)^H.
        w.axpy(-glh * self.ratio_table.xi(n, h), &self.feature(n + h), T::one());
        w
    }

    /// Scalar coefficient of `b_n = coeff * x_n`.
    fn b_coeff(&self, n: usize) -> T {
        let h = self.horizon();
        let rho = self.rho_row(n);
        let gl = self.gamma * self.lambda;
        let mut glh = T::one();
        let mut coeff = T::zero();
        for step in 0..h {
            coeff += glh * rho[step] * self.dataset.rewards()[n + step];
            glh *= gl;
        }
        coeff
    }

    pub fn a_n(&self, n: usize) -> Result<DMatrix<T>> {
        self.check_index(n)?;
        let w = self.a_core(n);
        let mut a = DMatrix::<T>::zeros(self.dim(), self.dim());
        a.ger(T::one(), &self.feature(n).clone_owned(), &w, T::zero());
        Ok(a)
    }

    pub fn b_n(&self, n: usize) -> Result<DVector<T>> {
        self.check_index(n)?;
        let mut b = DVector::<T>::zeros(self.dim());
        b.axpy(self.b_coeff(n), &self.feature(n), T::zero());
        Ok(b)
    }

    pub fn c_n(&self, n: usize) -> Result<DMatrix<T>> {
        self.check_index(n)?;
        let x = self.feature(n).clone_owned();
        let mut c = DMatrix::<T>::zeros(self.dim(), self.dim());
        c.ger(T::one(), &x, &x, T::zero());
        Ok(c)
    }

    /// Sums of `(A_n, b_n, C_n)` over `range`, accumulated in ascending
    /// index order so reductions are reproducible.
    pub fn accumulate(
        &self,
        range: std::ops::Range<usize>,
    ) -> Result<(DMatrix<T>, DVector<T>, DMatrix<T>)> {
        if range.end > self.usable() || range.start >= range.end {
            return Err(Error::IndexOutOfRange {
                index: range.end.saturating_sub(1),
                usable: self.usable(),
            });
        }
        let m = self.dim();
        let mut a = DMatrix::<T>::zeros(m, m);
        let mut b = DVector::<T>::zeros(m);
        let mut c = DMatrix::<T>::zeros(m, m);
        for n in range {
            let x = self.feature(n).clone_owned();
            let w = self.a_core(n);
            a.ger(T::one(), &x, &w, T::one());
            b.axpy(self.b_coeff(n), &x, T::one());
            c.ger(T::one(), &x, &x, T::one());
        }
        Ok((a, b, c))
    }

    /// Means over `range`, packaged with the requested `U`.
    pub fn batch(
        &self,
        range: std::ops::Range<usize>,
        tau: T,
        u_mode: UMode,
    ) -> Result<EstimateSet<T>> {
        let count = range.len();
        let (mut a, mut b, mut c) = self.accumulate(range)?;
        let scale = T::one() / cvt::<T>(count as f64);
        a *= scale;
        b *= scale;
        c *= scale;
        let u_hat = match u_mode {
            UMode::Identity => DMatrix::identity(self.dim(), self.dim()),
            UMode::CHat => c.clone(),
        };
        Ok(EstimateSet {
            a_hat: a,
            b_hat: b,
            c_hat: c,
            u_hat,
            n_samples: count,
            tau,
        })
    }
}

/// Single-sample estimate of `A` (see module docs).
pub fn sample_a<T: Scalar>(
    dataset: &Dataset<T>,
    features: &FeatureMap<T>,
    table: &RatioTable<T>,
    n: usize,
    lambda: T,
    gamma: T,
) -> Result<DMatrix<T>> {
    SampleEstimator::new(dataset, features, table, lambda, gamma)?.a_n(n)
}

/// Single-sample estimate of `b`.
pub fn sample_b<T: Scalar>(
    dataset: &Dataset<T>,
    features: &FeatureMap<T>,
    table: &RatioTable<T>,
    n: usize,
    lambda: T,
    gamma: T,
) -> Result<DVector<T>> {
    SampleEstimator::new(dataset, features, table, lambda, gamma)?.b_n(n)
}

/// Single-sample estimate of `C`: the rank-one outer product `x_n x_n^T`.
pub fn sample_c<T: Scalar>(
    dataset: &Dataset<T>,
    features: &FeatureMap<T>,
    table: &RatioTable<T>,
    n: usize,
) -> Result<DMatrix<T>> {
    SampleEstimator::new(dataset, features, table, T::zero(), T::zero())?.c_n(n)
}

/// Batch estimates over all usable samples of one dataset.
pub fn batch_estimates<T: Scalar>(
    dataset: &Dataset<T>,
    features: &FeatureMap<T>,
    lambda: T,
    horizon: usize,
    gamma: T,
    tau: T,
    u_mode: UMode,
) -> Result<EstimateSet<T>> {
    let table = ratios(dataset, horizon)?;
    batch_estimates_with(dataset, features, &table, lambda, gamma, tau, u_mode)
}

/// Batch estimates reusing a precomputed ratio table (the table depends only
/// on the trajectory, not on `lambda` or `gamma`).
pub fn batch_estimates_with<T: Scalar>(
    dataset: &Dataset<T>,
    features: &FeatureMap<T>,
    table: &RatioTable<T>,
    lambda: T,
    gamma: T,
    tau: T,
    u_mode: UMode,
) -> Result<EstimateSet<T>> {
    let est = SampleEstimator::new(dataset, features, table, lambda, gamma)?;
    est.batch(0..est.usable(), tau, u_mode)
}

/// Health report of the aggregate estimates: `C` must be positive definite
/// and `A` invertible for the empirical saddle point to exist.
#[derive(Debug, Clone, Copy)]
pub struct AssumptionDiagnostics {
    pub min_eig_c: f64,
    pub max_eig_c: f64,
    pub min_sv_a: f64,
    pub max_sv_a: f64,
    pub satisfied: bool,
}

/// Checks the aggregate-data assumption on one estimate set.
pub fn assumption_diagnostics<T: Scalar>(set: &EstimateSet<T>) -> AssumptionDiagnostics {
    let sym = (&set.c_hat + set.c_hat.transpose()) * cvt::<T>(0.5);
    let eig = sym.symmetric_eigen();
    let min_eig_c = eig.eigenvalues.min().to_f64().unwrap_or(f64::NAN);
    let max_eig_c = eig.eigenvalues.max().to_f64().unwrap_or(f64::NAN);
    let svd = set.a_hat.clone().svd(false, false);
    let min_sv_a = svd.singular_values.min().to_f64().unwrap_or(f64::NAN);
    let max_sv_a = svd.singular_values.max().to_f64().unwrap_or(f64::NAN);
    let satisfied = min_eig_c > ASSUMPTION_TOL * max_eig_c.max(f64::MIN_POSITIVE)
        && min_sv_a > ASSUMPTION_TOL * max_sv_a.max(f64::MIN_POSITIVE);
    AssumptionDiagnostics {
        min_eig_c,
        max_eig_c,
        min_sv_a,
        max_sv_a,
        satisfied,
    }
}

/// Tau-weighted aggregation across agents. Individual sets may be rank
/// deficient; only the aggregate is required to satisfy the data assumption,
/// which is reported as a diagnostic rather than enforced here.
pub fn aggregate<T: Scalar>(
    sets: &[EstimateSet<T>],
) -> Result<(EstimateSet<T>, AssumptionDiagnostics)> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one estimate set".into()))?;
    let m = first.dim();
    let mut a = DMatrix::<T>::zeros(m, m);
    let mut b = DVector::<T>::zeros(m);
    let mut c = DMatrix::<T>::zeros(m, m);
    let mut u = DMatrix::<T>::zeros(m, m);
    let mut n_samples = 0;
    let mut tau_total = T::zero();
    for set in sets {
        if set.dim() != m {
            return Err(Error::DimensionMismatch(
                "estimate sets have differing feature dimensions".into(),
            ));
        }
        a += &set.a_hat * set.tau;
        b.axpy(set.tau, &set.b_hat, T::one());
        c += &set.c_hat * set.tau;
        u += &set.u_hat * set.tau;
        n_samples += set.n_samples;
        tau_total += set.tau;
    }
    let agg = EstimateSet {
        a_hat: a,
        b_hat: b,
        c_hat: c,
        u_hat: u,
        n_samples,
        tau: tau_total,
    };
    let diag = assumption_diagnostics(&agg);
    Ok((agg, diag))
}

/// Splits a global-state trajectory into per-agent datasets that share the
/// state/action stream but carry local rewards. Aggregating the resulting
/// estimates with `tau_k = 1/K` reproduces the global-reward problem.
pub fn marl_preprocess<T: Scalar>(
    global: &Dataset<T>,
    per_agent_rewards: &[Vec<T>],
) -> Result<Vec<Dataset<T>>> {
    if per_agent_rewards.is_empty() {
        return Err(Error::InvalidArgument("need at least one agent reward stream".into()));
    }
    per_agent_rewards
        .iter()
        .map(|rewards| {
            if rewards.len() != global.len() {
                return Err(Error::DimensionMismatch(format!(
                    "agent reward stream has length {}, trajectory has {}",
                    rewards.len(),
                    global.len()
                )));
            }
            global.with_rewards(rewards.clone())
        })
        .collect()
}
