//! Linear function approximation: feature matrices `X`, value estimates
//! `X theta`, and the `D`-weighted projection onto the feature span.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{cvt, Scalar};

/// Relative singular-value threshold below which a feature matrix counts as
/// rank deficient.
const RANK_TOL: f64 = 1e-10;
/// Resampling attempts for [`random_features`].
const RESAMPLE_BUDGET: usize = 32;

/// `S x M` feature matrix with full column rank, `M << S`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Scalar> {
    matrix: DMatrix<T>,
}

impl<T: Scalar> FeatureMap<T> {
    /// Validates full column rank via the singular-value ratio.
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        if matrix.ncols() > matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "feature matrix must be tall: got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let ratio = singular_value_ratio(&matrix);
        if ratio <= RANK_TOL {
            return Err(Error::DegenerateFeatures { ratio });
        }
        Ok(Self { matrix })
    }

    pub fn num_states(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    /// Feature vector of one state as a column.
    pub fn row(&self, state: usize) -> DVector<T> {
        self.matrix.row(state).transpose()
    }

    /// Value estimates `X theta` for all states.
    pub fn values(&self, theta: &DVector<T>) -> DVector<T> {
        &self.matrix * theta
    }
}

fn singular_value_ratio<T: Scalar>(m: &DMatrix<T>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if max == T::zero() {
        return 0.0;
    }
    (min / max).to_f64().unwrap_or(0.0)
}

/// Radial-basis features on a grid of `width x height` states plus a bias
/// column fixed at one. Each RBF column evaluates
/// `exp(sign * 0.5 * ((x - x_c)^2 + (y - y_c)^2))` at the state's grid
/// coordinates; `negative_exponent` selects the decaying sign (the
/// conventional choice), while `false` keeps the growing exponent.
pub fn rbf_grid_features<T: Scalar>(
    width: usize,
    height: usize,
    centers: &[(f64, f64)],
    negative_exponent: bool,
) -> Result<FeatureMap<T>> {
    if centers.is_empty() {
        return Err(Error::InvalidArgument("need at least one RBF center".into()));
    }
    let s_count = width * height;
    let m = centers.len() + 1;
    let sign = if negative_exponent { -0.5 } else { 0.5 };
    let mut x = DMatrix::<T>::zeros(s_count, m);
    for s in 0..s_count {
        let sx = (s % width) as f64;
        let sy = (s / width) as f64;
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            let d2 = (sx - cx) * (sx - cx) + (sy - cy) * (sy - cy);
            x[(s, c)] = cvt((sign * d2).exp());
        }
        x[(s, m - 1)] = T::one();
    }
    FeatureMap::new(x)
}

/// Evenly spaced `nx x ny` lattice of RBF centers over a grid, placed at the
/// centers of equal blocks.
pub fn lattice_centers(width: usize, height: usize, nx: usize, ny: usize) -> Vec<(f64, f64)> {
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (i as f64 + 0.5) * width as f64 / nx as f64 - 0.5;
            let cy = (j as f64 + 0.5) * height as f64 / ny as f64 - 0.5;
            centers.push((cx, cy));
        }
    }
    centers
}

/// Random `S x M` feature matrix: entries uniform on `[0, 1]` with the last
/// column fixed at one. Resamples on rank deficiency.
pub fn random_features<T: Scalar>(
    num_states: usize,
    dim: usize,
    seed: u64,
) -> Result<FeatureMap<T>> {
    if dim > num_states {
        return Err(Error::DimensionMismatch(format!(
            "feature dimension {dim} exceeds state count {num_states}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("feature dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = Error::GenerationFailed("unreachable".into());
    for _ in 0..RESAMPLE_BUDGET {
        let mut x = DMatrix::<T>::zeros(num_states, dim);
        for s in 0..num_states {
            for c in 0..dim - 1 {
                x[(s, c)] = cvt(rng.gen::<f64>());
            }
            x[(s, dim - 1)] = T::one();
        }
        match FeatureMap::new(x) {
            Ok(map) => return Ok(map),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Weighted projection `Pi = X (X^T D X)^{-1} X^T D` onto the span of `X`,
/// with `D = diag(weights)`.
pub fn projection<T: Scalar>(x: &FeatureMap<T>, weights: &DVector<T>) -> Result<DMatrix<T>> {
    if weights.len() != x.num_states() {
        return Err(Error::DimensionMismatch(
            "weight vector length differs from state count".into(),
        ));
    }
    if weights.iter().any(|&w| w < T::zero()) {
        return Err(Error::InvalidArgument("projection weights must be nonnegative".into()));
    }
    let xtd = weighted_cross(x.matrix(), weights); // X^T D
    let gram = &xtd * x.matrix(); // X^T D X
    let lu = gram.lu();
    let mut solved = DMatrix::<T>::zeros(x.dim(), x.num_states());
    // Solve (X^T D X) Y = X^T D column by column.
    for c in 0..x.num_states() {
        let col = xtd.column(c).into_owned();
        match lu.solve(&col) {
            Some(y) => solved.set_column(c, &y),
            None => return Err(Error::SingularWeighting),
        }
    }
    Ok(x.matrix() * solved)
}

/// `X^T D` with diagonal `D` given as a vector.
pub(crate) fn weighted_cross<T: Scalar>(x: &DMatrix<T>, weights: &DVector<T>) -> DMatrix<T> {
    let mut xt = x.transpose();
    for c in 0..xt.ncols() {
        let w = weights[c];
        for r in 0..xt.nrows() {
            xt[(r, c)] *= w;
        }
    }
    xt
}
