//! Exact analytical quantities for verification: the truncated multi-step
//! Bellman operators, exact problem data `(A, b, C)`, projected fixed points,
//! empirical saddle points, and bias/variance approximation curves.
//!
//! With `P` the target-policy transition matrix, the `H`-truncated,
//! `lambda`-weighted Bellman identity reads `v = Gamma2 r + rho1 Gamma1 v`
//! where
//!
//! ```text
//! rho1   = ((1-lambda) gamma + (1-gamma)(gamma lambda)^H) / (1 - gamma lambda)
//! Gamma2 = sum_{n=0}^{H-1} (gamma lambda P)^n
//! Gamma1 = ((1-lambda) gamma P Gamma2 + (gamma lambda P)^H) / rho1
//! ```
//!
//! and the exact problem data is `A = X^T D (I - rho1 Gamma1) X`,
//! `b = X^T D Gamma2 r`, `C = X^T D X`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{assumption_diagnostics, EstimateSet, UMode};
use crate::features::{weighted_cross, FeatureMap};
use crate::mdp::{value_function, MarkovChain};
use crate::sampler::{ratios, Dataset};
use crate::scalar::{cvt, Scalar};

/// Condition-number threshold above which a solve is reported as unreliable.
const CONDITION_LIMIT: f64 = 1e12;

/// Solves `m x = rhs` by pivoted LU with a condition-number diagnostic.
fn lu_solve_vec<T: Scalar>(m: &DMatrix<T>, rhs: &DVector<T>, label: &str) -> Result<DVector<T>> {
    check_condition(m, label)?;
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular(label.to_string()))
}

/// Solves `m X = rhs` column-wise.
fn lu_solve_mat<T: Scalar>(m: &DMatrix<T>, rhs: &DMatrix<T>, label: &str) -> Result<DMatrix<T>> {
    check_condition(m, label)?;
    let lu = m.clone().lu();
    let mut out = DMatrix::<T>::zeros(rhs.nrows(), rhs.ncols());
    for c in 0..rhs.ncols() {
        let col = rhs.column(c).into_owned();
        let sol = lu
            .solve(&col)
            .ok_or_else(|| Error::Singular(label.to_string()))?;
        out.set_column(c, &sol);
    }
    Ok(out)
}

fn check_condition<T: Scalar>(m: &DMatrix<T>, label: &str) -> Result<()> {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max().to_f64().unwrap_or(f64::NAN);
    let min = svd.singular_values.min().to_f64().unwrap_or(f64::NAN);
    if !(min > 0.0) || max / min > CONDITION_LIMIT {
        return Err(Error::Singular(format!(
            "{label}: condition number {:.3e} exceeds {CONDITION_LIMIT:.0e}",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    Ok(())
}

/// The truncated multi-step Bellman operators for one `(gamma, lambda, H)`.
#[derive(Debug, Clone)]
pub struct BellmanOperators<T: Scalar> {
    pub rho1: T,
    pub gamma1: DMatrix<T>,
    pub gamma2: DMatrix<T>,
    pub lambda: T,
    pub horizon: usize,
    pub gamma: T,
}

impl<T: Scalar> BellmanOperators<T> {
    /// Residual of the truncated Bellman identity at the exact value
    /// function: `|Gamma2 r + rho1 Gamma1 v - v|_inf`.
    pub fn identity_residual(&self, chain: &MarkovChain<T>) -> Result<T> {
        let v = value_function(chain, self.gamma)?;
        let lhs = &self.gamma2 * chain.expected_reward() + (&self.gamma1 * &v) * self.rho1;
        Ok((lhs - v).amax())
    }
}

/// Builds `rho1`, `Gamma1`, `Gamma2` by direct accumulation of the matrix
/// powers. For `gamma = 0` the contraction factor is zero and `Gamma1`
/// degenerates; the convention `Gamma1 = P` is returned so the product
/// `rho1 * Gamma1` stays exact.
pub fn bellman_operators<T: Scalar>(
    chain: &MarkovChain<T>,
    gamma: T,
    lambda: T,
    horizon: usize,
) -> Result<BellmanOperators<T>> {
    if gamma < T::zero() || gamma >= T::one() {
        return Err(Error::InvalidArgument("gamma must lie in [0, 1)".into()));
    }
    if lambda < T::zero() || lambda > T::one() {
        return Err(Error::InvalidArgument("lambda must lie in [0, 1]".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let p = chain.transition();
    let n = p.nrows();
    let gl = gamma * lambda;
    let glp = p * gl;
    // gamma2 = sum_{n=0}^{H-1} (gl P)^n; pow ends at (gl P)^H.
    let mut gamma2 = DMatrix::<T>::zeros(n, n);
    let mut pow = DMatrix::<T>::identity(n, n);
    for _ in 0..horizon {
        gamma2 += &pow;
        pow = &pow * &glp;
    }
    let glh = gl.powi(horizon as i32);
    let rho1 = ((T::one() - lambda) * gamma + (T::one() - gamma) * glh) / (T::one() - gl);
    let rho1_gamma1 = p * ((T::one() - lambda) * gamma) * &gamma2 + &pow;
    let gamma1 = if rho1 > T::zero() {
        rho1_gamma1 / rho1
    } else {
        p.clone()
    };
    Ok(BellmanOperators {
        rho1,
        gamma1,
        gamma2,
        lambda,
        horizon,
        gamma,
    })
}

/// Exact problem data for one chain, feature map and state weighting.
#[derive(Debug, Clone)]
pub struct ExactProblem<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub c: DMatrix<T>,
    /// Diagonal of the state weighting `D`.
    pub d: DVector<T>,
    /// Weighted least-squares projection of the true value function.
    pub theta_star: DVector<T>,
    pub gamma: T,
    pub lambda: T,
    pub horizon: usize,
}

/// Computes `A = X^T D (I - rho1 Gamma1) X`, `b = X^T D Gamma2 r`,
/// `C = X^T D X` and the projected target `theta_star`. The weighting must be
/// strictly positive for every state (the aggregate-exploration assumption).
pub fn exact_abc<T: Scalar>(
    chain: &MarkovChain<T>,
    features: &FeatureMap<T>,
    d: &DVector<T>,
    gamma: T,
    lambda: T,
    horizon: usize,
) -> Result<ExactProblem<T>> {
    if d.len() != chain.num_states() || features.num_states() != chain.num_states() {
        return Err(Error::DimensionMismatch(
            "weighting/feature dimensions differ from the chain".into(),
        ));
    }
    let min_d = d.min();
    if min_d <= T::zero() {
        return Err(Error::AssumptionViolation {
            what: "state weighting must be strictly positive everywhere".into(),
            min_eig_c: min_d.to_f64().unwrap_or(f64::NAN),
            min_sv_a: f64::NAN,
        });
    }
    let ops = bellman_operators(chain, gamma, lambda, horizon)?;
    let x = features.matrix();
    let xtd = weighted_cross(x, d);
    let s = chain.num_states();
    let rho1_gamma1 = &ops.gamma1 * ops.rho1;
    let a = &xtd * ((DMatrix::<T>::identity(s, s) - rho1_gamma1) * x);
    let b = &xtd * (&ops.gamma2 * chain.expected_reward());
    let c = &xtd * x;
    let v = value_function(chain, gamma)?;
    let theta_star = lu_solve_vec(&c, &(&xtd * v), "X^T D X in theta_star")?;
    Ok(ExactProblem {
        a,
        b,
        c,
        d: d.clone(),
        theta_star,
        gamma,
        lambda,
        horizon,
    })
}

/// Independent route to the same `A`: the expanded form
/// `A = X^T D (I - gamma (1-lambda) P Gamma2 - (gamma lambda P)^H) X`,
/// accumulated without going through `rho1` or `Gamma1`. Used to cross-check
/// [`exact_abc`].
pub fn exact_a_expansion<T: Scalar>(
    chain: &MarkovChain<T>,
    features: &FeatureMap<T>,
    d: &DVector<T>,
    gamma: T,
    lambda: T,
    horizon: usize,
) -> Result<DMatrix<T>> {
    let p = chain.transition();
    let s = p.nrows();
    let gl = gamma * lambda;
    let glp = p * gl;
    let mut sum = DMatrix::<T>::zeros(s, s);
    let mut pow = DMatrix::<T>::identity(s, s);
    for _ in 0..horizon {
        sum += &pow;
        pow = &pow * &glp;
    }
    let inner = DMatrix::<T>::identity(s, s) - p * (gamma * (T::one() - lambda)) * sum - pow;
    let xtd = weighted_cross(features.matrix(), d);
    Ok(&xtd * (inner * features.matrix()))
}

/// Weighted least-squares fit of the value function:
/// `theta_star = (X^T D X)^{-1} X^T D v`.
pub fn theta_star<T: Scalar>(
    v: &DVector<T>,
    features: &FeatureMap<T>,
    d: &DVector<T>,
) -> Result<DVector<T>> {
    let xtd = weighted_cross(features.matrix(), d);
    let gram = &xtd * features.matrix();
    lu_solve_vec(&gram, &(&xtd * v), "X^T D X in theta_star")
}

/// Minimizer of the regularized projected Bellman cost:
/// `theta_o = (A^T C^{-1} A + eta U)^{-1} (eta U theta_p + A^T C^{-1} b)`.
pub fn theta_o<T: Scalar>(
    problem: &ExactProblem<T>,
    eta: T,
    u: &DMatrix<T>,
    theta_p: &DVector<T>,
) -> Result<DVector<T>> {
    let ca = lu_solve_mat(&problem.c, &problem.a, "C in theta_o")?;
    let cb = lu_solve_vec(&problem.c, &problem.b, "C in theta_o")?;
    let lhs = problem.a.transpose() * ca + u * eta;
    let rhs = u * theta_p * eta + problem.a.transpose() * cb;
    lu_solve_vec(&lhs, &rhs, "A^T C^{-1} A + eta U in theta_o")
}

/// Closed-form saddle point of the empirical primal-dual problem built from
/// aggregate estimates:
///
/// ```text
/// theta = (A^T C^{-1} A + eta U)^{-1} (eta U theta_p + A^T C^{-1} b)
/// omega = C^{-1} (b - A theta)
/// ```
pub fn saddle_point<T: Scalar>(
    agg: &EstimateSet<T>,
    eta: T,
    theta_p: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let diag = assumption_diagnostics(agg);
    if !diag.satisfied {
        return Err(Error::AssumptionViolation {
            what: "aggregate estimates must have C > 0 and A invertible".into(),
            min_eig_c: diag.min_eig_c,
            min_sv_a: diag.min_sv_a,
        });
    }
    let ca = lu_solve_mat(&agg.c_hat, &agg.a_hat, "C in saddle_point")?;
    let cb = lu_solve_vec(&agg.c_hat, &agg.b_hat, "C in saddle_point")?;
    let lhs = agg.a_hat.transpose() * &ca + &agg.u_hat * eta;
    let rhs = &agg.u_hat * theta_p * eta + agg.a_hat.transpose() * &cb;
    let theta = lu_solve_vec(&lhs, &rhs, "saddle system")?;
    let omega = cb - ca * &theta;
    Ok((theta, omega))
}

/// Exact bias curve over a `lambda` grid together with the fitted
/// closed-form approximation. The fitted constants are reported for
/// inspection; only the exact curve carries ground truth.
#[derive(Debug, Clone)]
pub struct BiasCurve<T: Scalar> {
    pub lambdas: Vec<T>,
    pub rho1: Vec<T>,
    /// `|theta_o(H, lambda) - theta_star|^2`.
    pub exact: Vec<T>,
    /// Fitted approximation evaluated on the grid.
    pub approx: Vec<T>,
    /// `(kappa1, kappa2, kappa3)` of the fit.
    pub kappa: [f64; 3],
    /// Sum of squared fit residuals on `sqrt(exact)`.
    pub fit_residual: f64,
}

/// Exact bias `|theta_o - theta_star|^2` as a function of `lambda`, plus the
/// two/three-constant approximation fitted by least squares.
#[allow(clippy::too_many_arguments)]
pub fn bias_curve<T: Scalar>(
    chain: &MarkovChain<T>,
    features: &FeatureMap<T>,
    d: &DVector<T>,
    gamma: T,
    horizon: usize,
    eta: T,
    u: &DMatrix<T>,
    theta_p: &DVector<T>,
    lambdas: &[T],
) -> Result<BiasCurve<T>> {
    let mut rho1 = Vec::with_capacity(lambdas.len());
    let mut exact = Vec::with_capacity(lambdas.len());
    let mut theta_gap = 0.0;
    let mut in_range = true;
    for (i, &lambda) in lambdas.iter().enumerate() {
        let problem = exact_abc(chain, features, d, gamma, lambda, horizon)?;
        let ops = bellman_operators(chain, gamma, lambda, horizon)?;
        let t_o = theta_o(&problem, eta, u, theta_p)?;
        let diff = &t_o - &problem.theta_star;
        rho1.push(ops.rho1);
        exact.push(diff.norm_squared());
        if i == 0 {
            theta_gap = (theta_p - &problem.theta_star)
                .norm()
                .to_f64()
                .unwrap_or(0.0);
            // Is the value function inside the feature span?
            let v = value_function(chain, gamma)?;
            let fitted = features.values(&problem.theta_star);
            in_range = (fitted - &v).amax() < cvt::<T>(1e-8) * v.amax().max(T::one());
        }
    }
    let rho_f: Vec<f64> = rho1.iter().map(|r| r.to_f64().unwrap()).collect();
    let exact_f: Vec<f64> = exact.iter().map(|e| e.to_f64().unwrap()).collect();
    let eta_f = eta.to_f64().unwrap_or(0.0);
    let (kappa, fit_residual) = fit::fit_bias(&rho_f, &exact_f, eta_f, theta_gap, in_range);
    let approx = rho_f
        .iter()
        .map(|&r| cvt(fit::bias_model(&kappa, r, eta_f, theta_gap, in_range)))
        .collect();
    Ok(BiasCurve {
        lambdas: lambdas.to_vec(),
        rho1,
        exact,
        approx,
        kappa,
        fit_residual,
    })
}

/// Empirical variance curve over a `lambda` grid: the mean of
/// `|theta_hat_o(H, lambda) - theta_o(H, lambda)|^2` over independently
/// regenerated datasets, plus the fitted single-constant approximation.
#[derive(Debug, Clone)]
pub struct VarianceCurve<T: Scalar> {
    pub lambdas: Vec<T>,
    pub empirical: Vec<T>,
    pub approx: Vec<T>,
    pub kappa4: f64,
    pub trials: usize,
    pub usable: usize,
}

/// Runs `trials` independent data regenerations (`make_datasets(trial)` must
/// return one dataset per agent) and measures the spread of the empirical
/// saddle around the exact minimizer per `lambda`.
#[allow(clippy::too_many_arguments)]
pub fn variance_curve<T: Scalar>(
    chain: &MarkovChain<T>,
    features: &FeatureMap<T>,
    d: &DVector<T>,
    gamma: T,
    horizon: usize,
    eta: T,
    u: &DMatrix<T>,
    theta_p: &DVector<T>,
    lambdas: &[T],
    taus: &[T],
    u_mode: UMode,
    trials: usize,
    kappa1: f64,
    mut make_datasets: impl FnMut(usize) -> Result<Vec<Dataset<T>>>,
) -> Result<VarianceCurve<T>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    // Exact minimizers per lambda.
    let mut exact_thetas = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let problem = exact_abc(chain, features, d, gamma, lambda, horizon)?;
        exact_thetas.push(theta_o(&problem, eta, u, theta_p)?);
    }
    let mut sums = vec![T::zero(); lambdas.len()];
    let mut usable = 0usize;
    for trial in 0..trials {
        let datasets = make_datasets(trial)?;
        if datasets.len() != taus.len() {
            return Err(Error::DimensionMismatch(
                "dataset count differs from tau count".into(),
            ));
        }
        let tables: Vec<_> = datasets
            .iter()
            .map(|ds| ratios(ds, horizon))
            .collect::<Result<_>>()?;
        usable = tables[0].usable();
        for (li, &lambda) in lambdas.iter().enumerate() {
            let mut sets = Vec::with_capacity(datasets.len());
            for (k, ds) in datasets.iter().enumerate() {
                sets.push(crate::estimators::batch_estimates_with(
                    ds, features, &tables[k], lambda, gamma, taus[k], u_mode,
                )?);
            }
            let (agg, _) = crate::estimators::aggregate(&sets)?;
            let (theta_hat, _) = saddle_point(&agg, eta, theta_p)?;
            sums[li] += (theta_hat - &exact_thetas[li]).norm_squared();
        }
    }
    let scale = cvt::<T>(1.0 / trials as f64);
    let empirical: Vec<T> = sums.into_iter().map(|s| s * scale).collect();
    // Fit kappa4 by least squares through the origin on the shape factor.
    let gamma_f = gamma.to_f64().unwrap();
    let eta_f = eta.to_f64().unwrap_or(0.0);
    let shape: Vec<f64> = lambdas
        .iter()
        .map(|l| fit::variance_shape(gamma_f, l.to_f64().unwrap(), horizon, usable, eta_f, kappa1))
        .collect();
    let emp_f: Vec<f64> = empirical.iter().map(|e| e.to_f64().unwrap()).collect();
    let num: f64 = shape.iter().zip(&emp_f).map(|(s, e)| s * e).sum();
    let den: f64 = shape.iter().map(|s| s * s).sum();
    let kappa4 = if den > 0.0 { num / den } else { 0.0 };
    let approx = shape.iter().map(|&s| cvt(kappa4 * s)).collect();
    Ok(VarianceCurve {
        lambdas: lambdas.to_vec(),
        empirical,
        approx,
        kappa4,
        trials,
        usable,
    })
}

/// Least-squares fitting of the approximation constants. These fits are
/// diagnostics: shape assertions in tests always run on the exact or
/// empirical curves, never on the fitted ones.
mod fit {
    /// Bias model evaluated at one grid point.
    pub fn bias_model(
        kappa: &[f64; 3],
        rho1: f64,
        eta: f64,
        theta_gap: f64,
        in_range: bool,
    ) -> f64 {
        let [k1, k2, k3] = *kappa;
        let reg = 1.0 + k1 * eta;
        let mut inner = k1 * eta * theta_gap / reg;
        if !in_range {
            let denom = (k3 - rho1) * reg;
            if denom.abs() > f64::EPSILON {
                inner += k2 * rho1 / denom;
            }
        }
        inner * inner
    }

    /// Variance shape factor `(1 - (gamma lambda)^{2H}) / (1 - (gamma
    /// lambda)^2) / ((1 + kappa1 eta)^2 (N - H))`.
    pub fn variance_shape(
        gamma: f64,
        lambda: f64,
        horizon: usize,
        usable: usize,
        eta: f64,
        kappa1: f64,
    ) -> f64 {
        let gl = gamma * lambda;
        let geom = if gl == 0.0 {
            1.0
        } else {
            (1.0 - gl.powi(2 * horizon as i32)) / (1.0 - gl * gl)
        };
        let reg = 1.0 + kappa1 * eta;
        geom / (reg * reg * usable as f64)
    }

    /// Fits `(kappa1, kappa2, kappa3)` to the exact bias curve. Returns the
    /// constants and the sum of squared residuals on `sqrt(bias)`.
    pub fn fit_bias(
        rho1: &[f64],
        exact: &[f64],
        eta: f64,
        theta_gap: f64,
        in_range: bool,
    ) -> ([f64; 3], f64) {
        let y: Vec<f64> = exact.iter().map(|e| e.max(0.0).sqrt()).collect();
        if in_range && eta == 0.0 {
            return ([0.0, 0.0, 0.0], y.iter().map(|v| v * v).sum());
        }
        // Initial guess: linearize 1/y = k3/(k2 rho) - 1/k2 when the grid
        // actually varies; otherwise pin the pole beyond the sampled range.
        let rho_min = rho1.iter().cloned().fold(f64::INFINITY, f64::min);
        let rho_max = rho1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut init = if rho_max - rho_min < 1e-12 {
            let k3 = 2.0 * rho_max.max(1.0);
            let mean_y: f64 = y.iter().sum::<f64>() / y.len() as f64;
            let k2 = mean_y * (k3 - rho_max) / rho_max.max(f64::EPSILON);
            [1.0, k2, k3]
        } else {
            let pairs: Vec<(f64, f64)> = rho1
                .iter()
                .zip(&y)
                .filter(|(_, &yv)| yv > 1e-15)
                .map(|(&r, &yv)| (1.0 / r, 1.0 / yv))
                .collect();
            linearized_guess(&pairs, rho_max)
        };
        let residual = |k: &[f64; 3]| -> Vec<f64> {
            rho1.iter()
                .zip(&y)
                .map(|(&r, &yv)| bias_model(k, r, eta, theta_gap, in_range).max(0.0).sqrt() - yv)
                .collect()
        };
        let ssr = |k: &[f64; 3]| residual(k).iter().map(|r| r * r).sum::<f64>();
        // Gauss-Newton with Levenberg damping and a numeric Jacobian.
        let mut damping = 1e-6;
        let mut best = ssr(&init);
        for _ in 0..200 {
            let r0 = residual(&init);
            let n = r0.len();
            let mut jac = vec![[0.0; 3]; n];
            for p in 0..3 {
                let mut bumped = init;
                let step = (init[p].abs() * 1e-6).max(1e-9);
                bumped[p] += step;
                let r1 = residual(&bumped);
                for i in 0..n {
                    jac[i][p] = (r1[i] - r0[i]) / step;
                }
            }
            let mut jtj = [[0.0; 3]; 3];
            let mut jtr = [0.0; 3];
            for i in 0..n {
                for p in 0..3 {
                    jtr[p] += jac[i][p] * r0[i];
                    for q in 0..3 {
                        jtj[p][q] += jac[i][p] * jac[i][q];
                    }
                }
            }
            for (p, row) in jtj.iter_mut().enumerate() {
                row[p] += damping * (1.0 + row[p]);
            }
            let delta = match solve3(&jtj, &jtr) {
                Some(d) => d,
                None => break,
            };
            let cand = [init[0] - delta[0], init[1] - delta[1], init[2] - delta[2]];
            let cand_ssr = ssr(&cand);
            if cand_ssr < best {
                best = cand_ssr;
                init = cand;
                damping = (damping * 0.5).max(1e-12);
            } else {
                damping *= 4.0;
                if damping > 1e8 {
                    break;
                }
            }
        }
        (init, best)
    }

    fn linearized_guess(pairs: &[(f64, f64)], rho_max: f64) -> [f64; 3] {
        if pairs.len() < 2 {
            return [1.0, 1.0, 2.0];
        }
        let n = pairs.len() as f64;
        let sx: f64 = pairs.iter().map(|p| p.0).sum();
        let sy: f64 = pairs.iter().map(|p| p.1).sum();
        let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-30 {
            return [1.0, 1.0, 2.0];
        }
        let slope = (n * sxy - sx * sy) / denom;
        let intercept = (sy - slope * sx) / n;
        if intercept.abs() < 1e-30 {
            return [1.0, 1.0, 2.0];
        }
        let k2 = -1.0 / intercept;
        let k3 = slope * k2;
        // Keep the pole outside the sampled range.
        let k3 = if k3 <= rho_max { rho_max * 1.5 } else { k3 };
        [1.0, k2, k3]
    }

    fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
        let mut m = *a;
        let mut v = *b;
        for col in 0..3 {
            let mut pivot = col;
            for row in col + 1..3 {
                if m[row][col].abs() > m[pivot][col].abs() {
                    pivot = row;
                }
            }
            if m[pivot][col].abs() < 1e-300 {
                return None;
            }
            m.swap(col, pivot);
            v.swap(col, pivot);
            for row in col + 1..3 {
                let f = m[row][col] / m[col][col];
                for c in col..3 {
                    m[row][c] -= f * m[col][c];
                }
                v[row] -= f * v[col];
            }
        }
        let mut x = [0.0; 3];
        for col in (0..3).rev() {
            let mut acc = v[col];
            for c in col + 1..3 {
                acc -= m[col][c] * x[c];
            }
            x[col] = acc / m[col][col];
        }
        Some(x)
    }
}
