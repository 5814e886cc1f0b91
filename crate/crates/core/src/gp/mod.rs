//! GP observation operator on a fixed grid, plus the full-history GP baseline.
//!
//! The filter state is the GP mean `g` at the K grid points. Predicted
//! function values at arbitrary locations are
//!
//! ```text
//! y_hat = K(X_new, X_g) [K(X_g, X_g) + noise_variance * I]^-1 g
//! ```
//!
//! [`GpPredictor`] factorizes the bracketed matrix once per hyperparameter
//! vector so several right-hand sides (the observation locations, the test
//! set, the grid itself) can reuse it.

pub mod classic;
mod lattice;

pub use classic::{classic_gp_fit_predict, ClassicGp, ClassicGpOptions};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::{cov_matrix_sym, cov_matrix_unchecked, regularized_cholesky, GridSpec, Kernel, KernelParams};
use lattice::LatticeSolver;

/// Grid-mean representation of the GP.
#[derive(Debug, Clone, PartialEq)]
pub struct GpState {
    pub grid: GridSpec,
    pub mean: Vec<f64>,
}

impl GpState {
    pub fn new(grid: GridSpec, mean: Vec<f64>) -> Result<Self> {
        if mean.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: mean.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("GP mean contains non-finite values"));
        }
        Ok(Self { grid, mean })
    }
}

/// S noisy function observations taken at time step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    locations: DMatrix<f64>,
    values: Vec<f64>,
    t: usize,
}

impl ObservationBatch {
    pub fn new(locations: DMatrix<f64>, values: Vec<f64>, t: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("observation batch must contain at least one value"));
        }
        if locations.nrows() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                got: locations.nrows(),
            });
        }
        if locations.ncols() == 0 {
            return Err(Error::invalid("observation locations need at least one coordinate"));
        }
        if locations.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation batch contains non-finite values"));
        }
        Ok(Self { locations, values, t })
    }

    /// One-dimensional convenience constructor.
    pub fn from_1d(xs: &[f64], values: Vec<f64>, t: usize) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(xs.len(), 1, xs), values, t)
    }

    pub fn locations(&self) -> &DMatrix<f64> {
        &self.locations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.locations.ncols()
    }
}

enum Solver {
    Dense(Cholesky<f64, Dyn>),
    Lattice(LatticeSolver),
}

/// `[K(X_g, X_g) + noise * I]` factorized for one hyperparameter vector.
///
/// Multi-dimensional lattice grids are solved through per-axis
/// eigendecompositions (the SE kernel factorizes over coordinates); all
/// other grids use a dense Cholesky factor.
pub struct GpPredictor<'a> {
    grid: &'a GridSpec,
    params: KernelParams,
    solver: Solver,
    jitter: f64,
}

impl<'a> GpPredictor<'a> {
    pub fn new(grid: &'a GridSpec, params: KernelParams) -> Result<Self> {
        params.validate()?;
        match grid.axes() {
            Some(axes) if axes.len() >= 2 => {
                let solver = LatticeSolver::new(axes, &params);
                let jitter = solver.jitter();
                Ok(Self {
                    grid,
                    params,
                    solver: Solver::Lattice(solver),
                    jitter,
                })
            }
            _ => Self::new_dense(grid, params),
        }
    }

    /// Always factorizes the dense grid covariance, ignoring lattice structure.
    pub fn new_dense(grid: &'a GridSpec, params: KernelParams) -> Result<Self> {
        params.validate()?;
        let mut kgg = cov_matrix_sym(Kernel::SquaredExponential, grid.points(), &params);
        let noise = params.noise_variance();
        for i in 0..kgg.nrows() {
            kgg[(i, i)] += noise;
        }
        let (chol, jitter) = regularized_cholesky(&kgg, 0.0)?;
        Ok(Self {
            grid,
            params,
            solver: Solver::Dense(chol),
            jitter,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Total diagonal jitter applied on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `[K_gg + noise * I]^-1 g`.
    pub fn weights(&self, state_mean: &[f64]) -> Result<DVector<f64>> {
        if state_mean.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: state_mean.len(),
            });
        }
        Ok(match &self.solver {
            Solver::Dense(ch) => ch.solve(&DVector::from_column_slice(state_mean)),
            Solver::Lattice(s) => DVector::from_vec(s.solve(state_mean)),
        })
    }

    /// Cross-covariance between `locations` and the grid.
    pub fn cross_cov(&self, locations: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if locations.ncols() != self.grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.dim(),
                got: locations.ncols(),
            });
        }
        Ok(cov_matrix_unchecked(
            Kernel::SquaredExponential,
            locations,
            self.grid.points(),
            &self.params,
        ))
    }

    pub fn predict(&self, locations: &DMatrix<f64>, state_mean: &[f64]) -> Result<DVector<f64>> {
        let w = self.weights(state_mean)?;
        Ok(self.cross_cov(locations)? * w)
    }
}

/// Predicted function values at `locations` given the grid mean and hyperparameters.
pub fn predict_at(
    locations: &DMatrix<f64>,
    state_mean: &[f64],
    params: &KernelParams,
    grid: &GridSpec,
) -> Result<DVector<f64>> {
    GpPredictor::new(grid, *params)?.predict(locations, state_mean)
}
