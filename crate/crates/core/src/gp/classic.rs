use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::ObservationBatch;
use crate::error::{Error, Result};
use crate::kernels::{cov_matrix_sym, cov_matrix_unchecked, regularized_cholesky, Kernel, KernelParams, PARAM_DIM};
use crate::optim::{nelder_mead, NelderMeadOptions};

#[derive(Debug, Clone, Copy)]
pub struct ClassicGpOptions {
    /// Evaluation budget for each restart of the simplex search.
    pub max_evals_per_restart: usize,
    /// Box for every log-hyperparameter during the search.
    pub log_bounds: (f64, f64),
    /// Lower bound on the log noise variance.
    pub min_log_noise: f64,
}

impl Default for ClassicGpOptions {
    fn default() -> Self {
        Self {
            max_evals_per_restart: 80,
            log_bounds: (-12.0, 12.0),
            min_log_noise: -16.0,
        }
    }
}

/// Zero-mean exact GP regression on the full observation history, with
/// hyperparameters chosen by maximizing the log marginal likelihood.
pub struct ClassicGp {
    x: DMatrix<f64>,
    params: KernelParams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_ml: f64,
    converged: bool,
    evals: usize,
}

struct Factorized {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_ml: f64,
}

fn factorize(x: &DMatrix<f64>, y: &DVector<f64>, params: &KernelParams) -> Result<Factorized> {
    let mut k = cov_matrix_sym(Kernel::SquaredExponential, x, params);
    let noise = params.noise_variance();
    for i in 0..k.nrows() {
        k[(i, i)] += noise;
    }
    let (chol, _) = regularized_cholesky(&k, 0.0)?;
    let alpha = chol.solve(y);
    let n = y.len() as f64;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let log_ml = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    Ok(Factorized { chol, alpha, log_ml })
}

fn check_data(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::invalid("classic GP needs at least one observation"));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: x.nrows(),
        });
    }
    Ok(())
}

impl ClassicGp {
    /// Log marginal likelihood of `y` under the given hyperparameters.
    pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &[f64], params: &KernelParams) -> Result<f64> {
        check_data(x, y)?;
        params.validate()?;
        Ok(factorize(x, &DVector::from_column_slice(y), params)?.log_ml)
    }

    /// The five deterministic starting points of the restart search, scaled
    /// to the data's variance and input extent.
    pub fn start_set(x: &DMatrix<f64>, y: &[f64]) -> Vec<KernelParams> {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let second = y.iter().map(|v| v * v).sum::<f64>() / n;
        let spread = (second - mean * mean).max(0.0) + mean * mean;
        let lv = spread.max(1e-6).ln();
        let extent = (0..x.ncols())
            .map(|d| {
                let col = x.column(d);
                col.max() - col.min()
            })
            .fold(0.0, f64::max);
        let ll = (extent.max(1e-3) / 10.0).ln();
        [
            (lv, ll, lv - 4.0),
            (lv, ll + 1.0, lv - 6.0),
            (lv, ll - 1.0, lv - 2.0),
            (lv + 1.0, ll + 0.5, lv - 8.0),
            (lv - 1.0, ll + 1.5, lv - 3.0),
        ]
        .into_iter()
        .map(|(a, b, c)| KernelParams {
            log_variance: a,
            log_lengthscale: b,
            log_noise_variance: c,
        })
        .collect()
    }

    /// Fits hyperparameters with restarts from [`ClassicGp::start_set`]. The
    /// best restart wins; ties go to the lower restart index.
    pub fn fit(x: DMatrix<f64>, y: &[f64], opts: &ClassicGpOptions) -> Result<Self> {
        check_data(&x, y)?;
        let starts = Self::start_set(&x, y);
        let yv = DVector::from_column_slice(y);
        let search = |start: &KernelParams| Self::search(&x, &yv, start, opts.max_evals_per_restart, opts);

        #[cfg(feature = "parallel")]
        let results: Vec<_> = {
            use rayon::prelude::*;
            starts.par_iter().map(search).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<_> = starts.iter().map(search).collect();

        let mut best: Option<(KernelParams, f64, bool)> = None;
        let mut evals = 0;
        for (params, value, converged, n) in results.into_iter().flatten() {
            evals += n;
            if best.as_ref().is_none_or(|b| value > b.1) {
                best = Some((params, value, converged));
            }
        }
        let (params, _, converged) =
            best.ok_or_else(|| Error::Degenerate("no restart produced a finite likelihood".into()))?;
        let mut gp = Self::with_params(x, y, params)?;
        gp.converged = converged;
        gp.evals = evals;
        Ok(gp)
    }

    /// Single warm-started search with a fixed evaluation budget, for
    /// refitting after each new batch.
    pub fn fit_warm(x: DMatrix<f64>, y: &[f64], start: KernelParams, max_evals: usize, opts: &ClassicGpOptions) -> Result<Self> {
        check_data(&x, y)?;
        let yv = DVector::from_column_slice(y);
        let (params, _, converged, evals) = Self::search(&x, &yv, &start, max_evals, opts)
            .ok_or_else(|| Error::Degenerate("warm start has no finite likelihood".into()))?;
        let mut gp = Self::with_params(x, y, params)?;
        gp.converged = converged;
        gp.evals = evals;
        Ok(gp)
    }

    fn search(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        start: &KernelParams,
        max_evals: usize,
        opts: &ClassicGpOptions,
    ) -> Option<(KernelParams, f64, bool, usize)> {
        let (lo, hi) = opts.log_bounds;
        let min_noise = opts.min_log_noise.max(lo);
        let objective = |v: &[f64]| {
            if v.iter().any(|p| *p < lo || *p > hi) || v[2] < min_noise {
                return f64::INFINITY;
            }
            let p = KernelParams {
                log_variance: v[0],
                log_lengthscale: v[1],
                log_noise_variance: v[2],
            };
            match factorize(x, y, &p) {
                Ok(f) if f.log_ml.is_finite() => -f.log_ml,
                _ => f64::INFINITY,
            }
        };
        let mut x0 = start.to_array();
        x0[2] = x0[2].max(min_noise);
        for v in &mut x0 {
            *v = v.clamp(lo, hi);
        }
        let m = nelder_mead(
            objective,
            &x0,
            &NelderMeadOptions {
                max_evals: max_evals.max(PARAM_DIM + 2),
                ..Default::default()
            },
        );
        if !m.value.is_finite() {
            return None;
        }
        let p = KernelParams::from_slice(&m.x).ok()?;
        Some((p, -m.value, m.converged, m.evals))
    }

    /// Conditions on the data with fixed hyperparameters.
    pub fn with_params(x: DMatrix<f64>, y: &[f64], params: KernelParams) -> Result<Self> {
        check_data(&x, y)?;
        params.validate()?;
        let f = factorize(&x, &DVector::from_column_slice(y), &params)?;
        Ok(Self {
            x,
            params,
            chol: f.chol,
            alpha: f.alpha,
            log_ml: f.log_ml,
            converged: true,
            evals: 0,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_ml
    }

    /// Whether the winning simplex search met its tolerance within budget.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn evaluations(&self) -> usize {
        self.evals
    }

    fn check_queries(&self, queries: &DMatrix<f64>) -> Result<()> {
        if queries.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x.ncols(),
                got: queries.ncols(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_queries(queries)?;
        let ks = cov_matrix_unchecked(Kernel::SquaredExponential, queries, &self.x, &self.params);
        Ok(ks * &self.alpha)
    }

    /// Predictive mean and latent-function standard deviation.
    pub fn predict_with_std(&self, queries: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_queries(queries)?;
        let ks = cov_matrix_unchecked(Kernel::SquaredExponential, queries, &self.x, &self.params);
        let mean = &ks * &self.alpha;
        let mut v = ks.transpose();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let var = self.params.variance();
        let std = DVector::from_iterator(
            queries.nrows(),
            (0..queries.nrows()).map(|j| (var - v.column(j).norm_squared()).max(0.0).sqrt()),
        );
        Ok((mean, std))
    }
}

/// Stacks a batch history into one design matrix and target vector.
pub(crate) fn stack_history(history: &[ObservationBatch]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let first = history
        .first()
        .ok_or_else(|| Error::invalid("classic GP needs at least one observation batch"))?;
    let d = first.dim();
    let n: usize = history.iter().map(ObservationBatch::len).sum();
    let mut x = DMatrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut row = 0;
    for b in history {
        if b.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: b.dim() });
        }
        for i in 0..b.len() {
            for c in 0..d {
                x[(row, c)] = b.locations()[(i, c)];
            }
            y.push(b.values()[i]);
            row += 1;
        }
    }
    Ok((x, y))
}

/// Fits the batch GP to every observation so far and predicts at `queries`.
pub fn classic_gp_fit_predict(history: &[ObservationBatch], queries: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (x, y) = stack_history(history)?;
    let gp = ClassicGp::fit(x, &y, &ClassicGpOptions::default())?;
    Ok(gp.predict(queries)?.iter().copied().collect())
}
