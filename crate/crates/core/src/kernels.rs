//! Covariance functions, covariance-matrix assembly and the log-domain
//! hyperparameter vector.
//!
//! The squared-exponential kernel here uses the lengthscale squared in the
//! denominator without the conventional factor of two:
//!
//! ```text
//! k(x1, x2) = variance * exp(-|x1 - x2|^2 / lengthscale^2)
//! ```
//!
//! Keep this in mind when comparing fitted lengthscales with other GP
//! libraries: ours are larger by a factor of sqrt(2).

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of entries in the hyperparameter vector (variance, lengthscale, noise).
pub const PARAM_DIM: usize = 3;

/// Relative jitter added to the diagonal before every factorization.
pub const BASE_JITTER: f64 = 1e-8;
/// Largest relative jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-2;

/// Kernel hyperparameters plus observation-noise variance, stored as logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_variance: f64,
    pub log_lengthscale: f64,
    pub log_noise_variance: f64,
}

impl KernelParams {
    pub fn new(log_variance: f64, log_lengthscale: f64, log_noise_variance: f64) -> Result<Self> {
        let p = Self {
            log_variance,
            log_lengthscale,
            log_noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unit variance, unit lengthscale, unit noise variance.
    pub fn unit() -> Self {
        Self {
            log_variance: 0.0,
            log_lengthscale: 0.0,
            log_noise_variance: 0.0,
        }
    }

    pub fn from_natural(variance: f64, lengthscale: f64, noise_variance: f64) -> Result<Self> {
        for (name, v) in [
            ("variance", variance),
            ("lengthscale", lengthscale),
            ("noise variance", noise_variance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Self::new(variance.ln(), lengthscale.ln(), noise_variance.ln())
    }

    /// Returns `(variance, lengthscale, noise_variance)`.
    pub fn to_natural(&self) -> (f64, f64, f64) {
        (self.variance(), self.lengthscale(), self.noise_variance())
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// Decodes one ensemble row laid out as `[log variance, log lengthscale, log noise]`.
    pub fn from_slice(row: &[f64]) -> Result<Self> {
        if row.len() != PARAM_DIM {
            return Err(Error::DimensionMismatch {
                expected: PARAM_DIM,
                got: row.len(),
            });
        }
        Self::new(row[0], row[1], row[2])
    }

    pub fn to_array(&self) -> [f64; PARAM_DIM] {
        [self.log_variance, self.log_lengthscale, self.log_noise_variance]
    }

    pub fn validate(&self) -> Result<()> {
        let arr = self.to_array();
        if arr.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite kernel parameters {arr:?}")))
        }
    }
}

/// Covariance function family. Only the squared exponential is provided;
/// everything that evaluates a kernel goes through [`Kernel::eval_sq_dist`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Kernel {
    #[default]
    SquaredExponential,
}

impl Kernel {
    #[inline]
    pub fn eval_sq_dist(&self, sq_dist: f64, variance: f64, lengthscale: f64) -> f64 {
        match self {
            Kernel::SquaredExponential => variance * (-sq_dist / (lengthscale * lengthscale)).exp(),
        }
    }
}

/// Fixed grid of K points in D dimensions where the GP mean is tracked.
///
/// Grids built with [`GridSpec::lattice`] remember their axes so that
/// covariance solves can use the Kronecker structure of the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    points: DMatrix<f64>,
    axes: Option<Vec<Vec<f64>>>,
}

impl GridSpec {
    /// Builds a grid from a K x D matrix of points (one point per row).
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        let k = points.nrows();
        if k < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 points, got {k}")));
        }
        if points.ncols() == 0 {
            return Err(Error::invalid("grid dimension must be positive"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid contains non-finite coordinates"));
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if sq_dist_rows(&points, i, &points, j) == 0.0 {
                    return Err(Error::invalid(format!("grid points {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { points, axes: None })
    }

    /// `k` equally spaced points on `[lo, hi]`.
    pub fn uniform_1d(lo: f64, hi: f64, k: usize) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::invalid(format!("empty interval [{lo}, {hi}]")));
        }
        Self::lattice(vec![linspace(lo, hi, k)])
    }

    /// Cartesian product of the given axes; the last axis varies fastest.
    pub fn lattice(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid("lattice needs at least one axis"));
        }
        for (d, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::invalid(format!("lattice axis {d} is empty")));
            }
            let mut sorted = axis.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("lattice axis {d} has repeated values")));
            }
        }
        let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
        let k: usize = dims.iter().product();
        if k < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 points, got {k}")));
        }
        let d = axes.len();
        let mut points = DMatrix::zeros(k, d);
        for idx in 0..k {
            let mut rem = idx;
            for axis in (0..d).rev() {
                let n = dims[axis];
                points[(idx, axis)] = axes[axis][rem % n];
                rem /= n;
            }
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid contains non-finite coordinates"));
        }
        Ok(Self {
            points,
            axes: Some(axes),
        })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// Number of grid points K.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Input dimension D.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn axes(&self) -> Option<&[Vec<f64>]> {
        self.axes.as_deref()
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[inline]
fn sq_dist_rows(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for d in 0..a.ncols() {
        let diff = a[(i, d)] - b[(j, d)];
        s += diff * diff;
    }
    s
}

/// Squared-exponential covariance between two points.
pub fn se_kernel(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    params.validate()?;
    let sq: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(Kernel::SquaredExponential.eval_sq_dist(sq, params.variance(), params.lengthscale()))
}

/// Covariance between every row of `x1` and every row of `x2`.
pub fn cov_matrix(x1: &DMatrix<f64>, x2: &DMatrix<f64>, params: &KernelParams) -> Result<DMatrix<f64>> {
    if x1.ncols() != x2.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x1.ncols(),
            got: x2.ncols(),
        });
    }
    params.validate()?;
    Ok(cov_matrix_unchecked(Kernel::SquaredExponential, x1, x2, params))
}

pub(crate) fn cov_matrix_unchecked(
    kernel: Kernel,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    params: &KernelParams,
) -> DMatrix<f64> {
    let (var, ls) = (params.variance(), params.lengthscale());
    DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
        kernel.eval_sq_dist(sq_dist_rows(x1, i, x2, j), var, ls)
    })
}

/// Symmetric covariance of a point set with itself; fills only one triangle
/// worth of kernel evaluations.
pub(crate) fn cov_matrix_sym(kernel: Kernel, x: &DMatrix<f64>, params: &KernelParams) -> DMatrix<f64> {
    let n = x.nrows();
    let (var, ls) = (params.variance(), params.lengthscale());
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        out[(j, j)] = var;
        for i in (j + 1)..n {
            let v = kernel.eval_sq_dist(sq_dist_rows(x, i, x, j), var, ls);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Cholesky factor of `a + jitter * I` under the escalating-jitter policy.
///
/// The first attempt adds `jitter + BASE_JITTER * mean(diag(a))`; each
/// failure multiplies the automatic part by ten until it exceeds
/// `MAX_JITTER * mean(diag(a))`. Returns the factor and the total jitter used.
pub fn regularized_cholesky(a: &DMatrix<f64>, jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if !(jitter >= 0.0) || !jitter.is_finite() {
        return Err(Error::invalid(format!("jitter must be finite and non-negative, got {jitter}")));
    }
    let n = a.nrows();
    let mean_diag = if n == 0 { 1.0 } else { a.diagonal().mean().abs() };
    let scale = if mean_diag > 0.0 && mean_diag.is_finite() { mean_diag } else { 1.0 };
    let mut rel = BASE_JITTER;
    let mut total = jitter + rel * scale;
    while rel <= MAX_JITTER * (1.0 + 1e-12) {
        total = jitter + rel * scale;
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += total;
        }
        if let Some(ch) = m.cholesky() {
            if ch.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
                return Ok((ch, total));
            }
        }
        rel *= 10.0;
    }
    Err(Error::Factorization { jitter: total })
}

/// Solves `(a + jitter * I) x = b` for symmetric `a`, with the jitter policy of
/// [`regularized_cholesky`] on top of the caller's `jitter`.
pub fn regularized_solve(a: &DMatrix<f64>, jitter: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let (ch, _) = regularized_cholesky(a, jitter)?;
    Ok(ch.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> KernelParams {
        KernelParams::unit()
    }

    #[test]
    fn se_kernel_zero_distance_is_variance() {
        let v = se_kernel(&[0.3, -1.2], &[0.3, -1.2], &unit()).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn se_kernel_known_values() {
        let v = se_kernel(&[0.0], &[1.0], &unit()).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-12);

        let p = KernelParams::from_natural(2.0, 5.0, 1.0).unwrap();
        let v = se_kernel(&[0.0, 0.0], &[3.0, 4.0], &p).unwrap();
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((v - 0.735_758_882_342_884_6).abs() < 1e-12);
    }

    #[test]
    fn se_kernel_dimension_mismatch() {
        let err = se_kernel(&[0.0], &[1.0, 2.0], &unit()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn cov_matrix_examples() {
        let one = DMatrix::from_row_slice(1, 1, &[0.7]);
        assert_eq!(cov_matrix(&one, &one, &unit()).unwrap()[(0, 0)], 1.0);

        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let k = cov_matrix(&x, &x, &unit()).unwrap();
        let e1 = (-1.0f64).exp();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert!((k[(0, 1)] - e1).abs() < 1e-15);
        assert_eq!(k[(0, 1)], k[(1, 0)]);

        let x1 = DMatrix::from_row_slice(1, 1, &[0.0]);
        let x2 = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let k = cov_matrix(&x1, &x2, &unit()).unwrap();
        assert_eq!(k.shape(), (1, 3));
        assert!((k[(0, 1)] - e1).abs() < 1e-15);
        assert!((k[(0, 2)] - (-4.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cov_matrix_dimension_mismatch() {
        let a = DMatrix::zeros(2, 1);
        let b = DMatrix::zeros(2, 2);
        assert!(cov_matrix(&a, &b, &unit()).is_err());
    }

    #[test]
    fn regularized_solve_identity_and_diagonal() {
        let b = DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 3.0]);
        let x = regularized_solve(&DMatrix::identity(3, 3), 0.0, &b).unwrap();
        assert!((x - &b).norm() < 1e-7);

        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0]));
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 4.0]);
        let x = regularized_solve(&a, 0.0, &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-7);
        assert!((x[(1, 0)] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn regularized_solve_residual_on_se_covariance() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let a = cov_matrix(&x, &x, &unit()).unwrap();
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let sol = regularized_solve(&a, 0.0, &b).unwrap();
        // Multiply back against the regularized system actually solved.
        let (_, jit) = regularized_cholesky(&a, 0.0).unwrap();
        let resid = (&a + DMatrix::identity(2, 2) * jit) * &sol - &b;
        assert!(resid.norm() < 1e-10);
    }

    #[test]
    fn jitter_escalates_on_singular_matrix() {
        // rank one, negative definite direction makes the first tries fail
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-4]);
        let (_, jit) = regularized_cholesky(&a, 0.0).unwrap();
        assert!(jit > BASE_JITTER);
    }

    #[test]
    fn jitter_exhaustion_reports_last_value() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match regularized_cholesky(&a, 0.0) {
            Err(Error::Factorization { jitter }) => assert!(jitter > 1e-3),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }

    #[test]
    fn natural_round_trip() {
        let p = KernelParams::new(0.3, -1.7, -4.6).unwrap();
        let (v, l, n) = p.to_natural();
        let q = KernelParams::from_natural(v, l, n).unwrap();
        for (a, b) in p.to_array().iter().zip(q.to_array()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn grid_rejects_duplicates_and_singletons() {
        assert!(GridSpec::new(DMatrix::from_row_slice(1, 1, &[0.0])).is_err());
        assert!(GridSpec::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).is_err());
        assert!(GridSpec::lattice(vec![vec![0.0, 0.0], vec![1.0]]).is_err());
    }

    #[test]
    fn lattice_ordering_last_axis_fastest() {
        let g = GridSpec::lattice(vec![vec![0.0, 1.0], vec![10.0, 20.0, 30.0]]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.dim(), 2);
        assert_eq!(g.points()[(1, 0)], 0.0);
        assert_eq!(g.points()[(1, 1)], 20.0);
        assert_eq!(g.points()[(3, 0)], 1.0);
        assert_eq!(g.points()[(3, 1)], 10.0);
    }

    fn params_strategy() -> impl Strategy<Value = KernelParams> {
        (-3.0..3.0f64, -2.0..2.0f64, -6.0..1.0f64).prop_map(|(a, b, c)| KernelParams::new(a, b, c).unwrap())
    }

    proptest! {
        #[test]
        fn cov_matrix_plus_jitter_is_positive_definite(
            pts in prop::collection::vec(-5.0..5.0f64, 2..24),
            p in params_strategy(),
        ) {
            let x = DMatrix::from_row_slice(pts.len() / 2, 2, &pts[..pts.len() / 2 * 2]);
            let mut k = cov_matrix(&x, &x, &p).unwrap();
            for i in 0..k.nrows() {
                k[(i, i)] += 1e-8 * p.variance();
            }
            // exact duplicates collapse to rank-deficient blocks; jitter keeps them PD
            prop_assert!(k.clone().cholesky().is_some());
        }

        #[test]
        fn se_kernel_symmetric(a in prop::collection::vec(-10.0..10.0f64, 3), b in prop::collection::vec(-10.0..10.0f64, 3), p in params_strategy()) {
            prop_assert_eq!(se_kernel(&a, &b, &p).unwrap(), se_kernel(&b, &a, &p).unwrap());
        }

        #[test]
        fn se_kernel_translation_invariant(
            a in prop::collection::vec(-10.0..10.0f64, 2),
            b in prop::collection::vec(-10.0..10.0f64, 2),
            shift in prop::collection::vec(-10.0..10.0f64, 2),
            p in params_strategy(),
        ) {
            let a2: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
            let b2: Vec<f64> = b.iter().zip(&shift).map(|(x, s)| x + s).collect();
            let d = (se_kernel(&a, &b, &p).unwrap() - se_kernel(&a2, &b2, &p).unwrap()).abs();
            prop_assert!(d < 1e-12 * p.variance().max(1.0));
        }

        #[test]
        fn se_kernel_monotone_decay(dir in prop::collection::vec(-1.0..1.0f64, 2), r1 in 0.0..3.0f64, dr in 1e-3..2.0f64) {
            let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
            prop_assume!(norm > 1e-3);
            let p = KernelParams::unit();
            let at = |r: f64| se_kernel(&[0.0, 0.0], &[dir[0] / norm * r, dir[1] / norm * r], &p).unwrap();
            prop_assert!(at(r1 + dr) < at(r1));
        }
    }
}
