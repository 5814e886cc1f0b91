//! WebAssembly bindings for the static page in `www/`.
//!
//! Three operations are exported: a steppable synthetic run of any filter
//! mode, a classic GP fit on clicked points, and the kernel profile.
//! All timing stays in JavaScript; nothing here reads the clock.

use gpenkf::experiments::{ExperimentConfig, TestSet};
use gpenkf::kernels::cov_matrix;
use gpenkf::{ClassicGp, ClassicGpOptions, FilterConfig, FilterMode, FilterState, KernelParams, ObservationBatch};
use nalgebra::DMatrix;
use wasm_bindgen::prelude::*;

fn js(e: gpenkf::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn column(xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(xs.len(), 1, xs)
}

/// One synthetic run of the benchmark target, advanced a batch at a time.
#[wasm_bindgen]
pub struct FilterDemo {
    filter: FilterState,
    batches: Vec<ObservationBatch>,
    test: TestSet,
    nmse: Vec<f64>,
}

impl FilterDemo {
    pub fn build(mode: &str, members: usize, grid: usize, seed: u64, ensemble_mean: bool) -> gpenkf::Result<Self> {
        let mode: FilterMode = mode.parse()?;
        let mut cfg = ExperimentConfig {
            mode,
            k: grid,
            runs: 1,
            seed,
            ..ExperimentConfig::default()
        };
        cfg.filter = FilterConfig {
            n_members: members,
            seed: cfg.run_seed(0),
            centering: if ensemble_mean {
                gpenkf::Centering::EnsembleMean
            } else {
                gpenkf::Centering::Observation
            },
            ..cfg.filter
        };
        cfg.validate()?;
        Ok(Self {
            filter: FilterState::init(mode, cfg.grid()?, cfg.filter)?,
            batches: cfg.batches(0)?,
            test: cfg.test_set()?,
            nmse: Vec::new(),
        })
    }

    pub fn advance(&mut self, count: usize) -> gpenkf::Result<f64> {
        for _ in 0..count {
            let Some(batch) = self.batches.get(self.nmse.len()) else { break };
            self.filter.step(batch)?;
            let pred = self.filter.predict(&self.test.x)?;
            self.nmse.push(self.test.score(&pred.mean)?);
        }
        Ok(self.nmse.last().copied().unwrap_or(f64::NAN))
    }

    pub fn prediction(&self) -> gpenkf::Result<(Vec<f64>, Vec<f64>)> {
        let p = self.filter.predict(&self.test.x)?;
        Ok((p.mean, p.std))
    }
}

#[wasm_bindgen]
impl FilterDemo {
    /// `mode` is `dual`, `dual-liu-west` or `joint`.
    #[wasm_bindgen(constructor)]
    pub fn new(mode: &str, members: usize, grid: usize, seed: u32, ensemble_mean: bool) -> Result<FilterDemo, JsError> {
        Self::build(mode, members, grid, seed as u64, ensemble_mean).map_err(js)
    }

    /// Assimilates up to `count` more batches and returns the latest NMSE.
    pub fn step(&mut self, count: usize) -> Result<f64, JsError> {
        self.advance(count).map_err(js)
    }

    pub fn t(&self) -> usize {
        self.nmse.len()
    }

    pub fn horizon(&self) -> usize {
        self.batches.len()
    }

    #[wasm_bindgen(js_name = nmseTrace)]
    pub fn nmse_trace(&self) -> Vec<f64> {
        self.nmse.clone()
    }

    #[wasm_bindgen(js_name = testX)]
    pub fn test_x(&self) -> Vec<f64> {
        self.test.x.as_slice().to_vec()
    }

    pub fn truth(&self) -> Vec<f64> {
        self.test.truth.clone()
    }

    /// Ensemble mean followed by ensemble std at the test points.
    pub fn predict(&self) -> Result<Vec<f64>, JsError> {
        let (mut m, s) = self.prediction().map_err(js)?;
        m.extend(s);
        Ok(m)
    }

    /// Interleaved `x, y` of every observation assimilated so far.
    pub fn observed(&self) -> Vec<f64> {
        self.batches[..self.nmse.len()]
            .iter()
            .flat_map(|b| b.locations().as_slice().iter().zip(b.values()).flat_map(|(x, y)| [*x, *y]))
            .collect()
    }

    /// Ensemble means of variance, lengthscale and noise variance.
    pub fn params(&self) -> Vec<f64> {
        self.filter.param_summary().iter().map(|(m, _)| m.exp()).collect()
    }
}

/// Mean then std of a classic GP at `query`. Fits the hyperparameters when
/// `fixed` is empty, otherwise uses `[variance, lengthscale, noise]`.
pub fn classic(xs: &[f64], ys: &[f64], query: &[f64], fixed: &[f64]) -> gpenkf::Result<(Vec<f64>, Vec<f64>, [f64; 3])> {
    let x = column(xs);
    let gp = match fixed {
        [] => ClassicGp::fit(x, ys, &ClassicGpOptions::default())?,
        [v, l, n] => ClassicGp::with_params(x, ys, KernelParams::from_natural(*v, *l, *n)?)?,
        _ => return Err(gpenkf::Error::InvalidArgument("fixed parameters need exactly 3 values".into())),
    };
    let (m, s) = gp.predict_with_std(&column(query))?;
    let (v, l, n) = gp.params().to_natural();
    Ok((m.as_slice().to_vec(), s.as_slice().to_vec(), [v, l, n]))
}

/// Returns `mean ++ std ++ [variance, lengthscale, noise]`.
#[wasm_bindgen(js_name = classicGp)]
pub fn classic_gp(xs: Vec<f64>, ys: Vec<f64>, query: Vec<f64>, fixed: Vec<f64>) -> Result<Vec<f64>, JsError> {
    let (mut m, s, p) = classic(&xs, &ys, &query, &fixed).map_err(js)?;
    m.extend(s);
    m.extend(p);
    Ok(m)
}

/// `k(0, x)` for every `x`.
pub fn profile(variance: f64, lengthscale: f64, xs: &[f64]) -> gpenkf::Result<Vec<f64>> {
    let p = KernelParams::from_natural(variance, lengthscale, 1.0)?;
    Ok(cov_matrix(&column(&[0.0]), &column(xs), &p)?.as_slice().to_vec())
}

#[wasm_bindgen(js_name = kernelProfile)]
pub fn kernel_profile(variance: f64, lengthscale: f64, xs: Vec<f64>) -> Result<Vec<f64>, JsError> {
    profile(variance, lengthscale, &xs).map_err(js)
}
