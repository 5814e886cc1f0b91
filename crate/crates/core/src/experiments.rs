//! Synthetic-data experiments: target function, batch generator, the
//! relative-error metric, Monte Carlo runs and timing sweeps.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::enkf::rng::mix_seed;
use crate::enkf::{FilterConfig, FilterMode, FilterState};
use crate::error::{Error, Result};
use crate::gp::classic::stack_history;
use crate::gp::{ClassicGp, ClassicGpOptions, ObservationBatch};
use crate::kernels::{linspace, GridSpec, KernelParams};

/// Truth values with magnitude below this are left out of the metric.
pub const MIN_ABS_TRUTH: f64 = 1e-6;

const DATA_STREAM: u64 = 0xDA7A;

/// `f(x) = x / 2 + 25 x / (1 + x^2) * cos(x)`
pub fn target_fn(x: f64) -> f64 {
    x / 2.0 + 25.0 * x / (1.0 + x * x) * x.cos()
}

/// `s` observations at uniform locations on `domain`, with Gaussian noise.
pub fn gen_batch<R: Rng + ?Sized>(s: usize, domain: (f64, f64), noise_var: f64, rng: &mut R, t: usize) -> Result<ObservationBatch> {
    let (lo, hi) = domain;
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty domain [{lo}, {hi}]")));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::invalid(format!("noise variance must be non-negative, got {noise_var}")));
    }
    let sd = noise_var.sqrt();
    let mut xs = Vec::with_capacity(s);
    let mut ys = Vec::with_capacity(s);
    for _ in 0..s {
        let x = rng.random_range(lo..=hi);
        let e: f64 = StandardNormal.sample(rng);
        xs.push(x);
        ys.push(target_fn(x) + sd * e);
    }
    ObservationBatch::from_1d(&xs, ys, t)
}

/// Mean relative absolute error `mean(|pred - truth| / |truth|)`.
pub fn nmse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("metric needs at least one point"));
    }
    if let Some(index) = truth.iter().position(|v| *v == 0.0) {
        return Err(Error::ZeroTruth { index });
    }
    let sum: f64 = predictions
        .iter()
        .zip(truth)
        .map(|(p, y)| ((y - p) * (y - p)).sqrt() / y.abs())
        .sum();
    Ok(sum / truth.len() as f64)
}

/// Held-out evaluation points with noise-free truth.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub x: DMatrix<f64>,
    pub truth: Vec<f64>,
    /// Points dropped because `|truth| < MIN_ABS_TRUTH`.
    pub excluded: usize,
}

impl TestSet {
    /// `m` equally spaced points on `domain`.
    pub fn equispaced(domain: (f64, f64), m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("test set needs at least one point"));
        }
        let all = linspace(domain.0, domain.1, m);
        let kept: Vec<f64> = all.iter().copied().filter(|x| target_fn(*x).abs() >= MIN_ABS_TRUTH).collect();
        if kept.is_empty() {
            return Err(Error::Degenerate("every test point has zero truth".into()));
        }
        let truth = kept.iter().map(|x| target_fn(*x)).collect();
        Ok(Self {
            x: DMatrix::from_column_slice(kept.len(), 1, &kept),
            truth,
            excluded: all.len() - kept.len(),
        })
    }

    pub fn score(&self, predictions: &[f64]) -> Result<f64> {
        nmse(predictions, &self.truth)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: FilterMode,
    pub domain: (f64, f64),
    /// Grid size K.
    pub k: usize,
    /// Observations per step S.
    pub s: usize,
    /// Number of steps T.
    pub t: usize,
    /// Noise variance of the data generator.
    pub noise_var: f64,
    pub runs: usize,
    /// Test-set size M.
    pub test_size: usize,
    pub seed: u64,
    pub filter: FilterConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::DualLiuWest,
            domain: (-10.0, 10.0),
            k: 51,
            s: 5,
            t: 200,
            noise_var: 0.01,
            runs: 10,
            test_size: 201,
            seed: 0,
            filter: FilterConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t < 1 || self.runs < 1 || self.test_size < 1 || self.s < 1 {
            return Err(Error::invalid("T, runs, S and test size must all be at least 1"));
        }
        if self.k < 2 {
            return Err(Error::invalid(format!("grid size must be at least 2, got {}", self.k)));
        }
        if !(self.domain.0 < self.domain.1) {
            return Err(Error::invalid(format!("empty domain {:?}", self.domain)));
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::invalid("generator noise variance must be non-negative"));
        }
        self.filter.validate()
    }

    /// Seed of run `index`; shared by every method so they see the same data.
    pub fn run_seed(&self, index: usize) -> u64 {
        mix_seed(self.seed, index as u64)
    }

    /// The T observation batches of run `index`.
    pub fn batches(&self, index: usize) -> Result<Vec<ObservationBatch>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.run_seed(index), DATA_STREAM));
        (1..=self.t)
            .map(|t| gen_batch(self.s, self.domain, self.noise_var, &mut rng, t))
            .collect()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::uniform_1d(self.domain.0, self.domain.1, self.k)
    }

    pub fn test_set(&self) -> Result<TestSet> {
        TestSet::equispaced(self.domain, self.test_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub mode: FilterMode,
    /// NMSE after every step.
    pub nmse_trace: Vec<f64>,
    /// Cumulative wall-clock seconds after every step.
    pub elapsed_trace: Vec<f64>,
    pub final_nmse: f64,
    pub elapsed_s: f64,
    /// Log-domain `(mean, std)` of variance, lengthscale, noise variance.
    pub params: [ParamSummary; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticReport {
    pub mode: FilterMode,
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    /// Step-wise NMSE averaged over the successful runs.
    pub mean_trace: Vec<f64>,
    pub mean_final_nmse: f64,
    pub mean_elapsed_s: f64,
    pub excluded_test_points: usize,
}

/// Streams all batches of run `index` through a fresh filter, scoring after every step.
pub fn run_single(cfg: &ExperimentConfig, index: usize) -> Result<RunResult> {
    let seed = cfg.run_seed(index);
    let grid = cfg.grid()?;
    let test = cfg.test_set()?;
    let batches = cfg.batches(index)?;
    let filter_cfg = FilterConfig { seed, ..cfg.filter };
    let mut filter = FilterState::init(cfg.mode, grid, filter_cfg)?;

    let mut nmse_trace = Vec::with_capacity(cfg.t);
    let mut elapsed_trace = Vec::with_capacity(cfg.t);
    let mut elapsed = 0.0;
    for batch in &batches {
        let start = Instant::now();
        filter.step(batch)?;
        let pred = filter.predict(&test.x)?;
        elapsed += start.elapsed().as_secs_f64();
        nmse_trace.push(test.score(&pred.mean)?);
        elapsed_trace.push(elapsed);
    }
    let s = filter.param_summary();
    Ok(RunResult {
        run: index,
        seed,
        mode: cfg.mode,
        final_nmse: *nmse_trace.last().expect("T >= 1"),
        nmse_trace,
        elapsed_trace,
        elapsed_s: elapsed,
        params: s.map(|(mean, std)| ParamSummary { mean, std }),
    })
}

/// All Monte Carlo runs of one filter mode. Failed runs are reported and
/// left out of the averages.
pub fn run_synthetic(cfg: &ExperimentConfig) -> Result<SyntheticReport> {
    cfg.validate()?;
    let excluded = cfg.test_set()?.excluded;
    let outcomes: Vec<Result<RunResult>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..cfg.runs).into_par_iter().map(|i| run_single(cfg, i)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..cfg.runs).map(|i| run_single(cfg, i)).collect()
        }
    };
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => runs.push(r),
            Err(e) => failures.push(RunFailure {
                run: i,
                seed: cfg.run_seed(i),
                error: e.to_string(),
            }),
        }
    }
    if runs.is_empty() {
        return Err(Error::Degenerate(format!("all {} runs failed", cfg.runs)));
    }
    let n = runs.len() as f64;
    let mean_trace = (0..cfg.t)
        .map(|step| runs.iter().map(|r| r.nmse_trace[step]).sum::<f64>() / n)
        .collect();
    Ok(SyntheticReport {
        mode: cfg.mode,
        mean_final_nmse: runs.iter().map(|r| r.final_nmse).sum::<f64>() / n,
        mean_elapsed_s: runs.iter().map(|r| r.elapsed_s).sum::<f64>() / n,
        mean_trace,
        runs,
        failures,
        excluded_test_points: excluded,
    })
}

/// When the batch GP re-estimates its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitPolicy {
    /// Fit once on the full history after the last step.
    FinalOnly,
    /// Refit after every step, warm-started with a small evaluation budget.
    PerStep { evals_per_step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicResult {
    pub run: usize,
    pub final_nmse: f64,
    pub elapsed_s: f64,
    /// Per-step NMSE; empty for [`RefitPolicy::FinalOnly`].
    pub nmse_trace: Vec<f64>,
    pub params: KernelParams,
    pub converged: bool,
}

/// Batch GP on the same data stream as filter run `index`.
pub fn run_classic(cfg: &ExperimentConfig, index: usize, policy: RefitPolicy, opts: &ClassicGpOptions) -> Result<ClassicResult> {
    let test = cfg.test_set()?;
    let batches = cfg.batches(index)?;
    match policy {
        RefitPolicy::FinalOnly => {
            let start = Instant::now();
            let (x, y) = stack_history(&batches)?;
            let gp = ClassicGp::fit(x, &y, opts)?;
            let pred = gp.predict(&test.x)?;
            let elapsed = start.elapsed().as_secs_f64();
            Ok(ClassicResult {
                run: index,
                final_nmse: test.score(pred.as_slice())?,
                elapsed_s: elapsed,
                nmse_trace: vec![],
                params: *gp.params(),
                converged: gp.converged(),
            })
        }
        RefitPolicy::PerStep { evals_per_step } => {
            let mut elapsed = 0.0;
            let mut trace = Vec::with_capacity(batches.len());
            let mut current: Option<ClassicGp> = None;
            for t in 1..=batches.len() {
                let start = Instant::now();
                let (x, y) = stack_history(&batches[..t])?;
                let gp = match &current {
                    None => ClassicGp::fit(x, &y, opts)?,
                    Some(prev) => ClassicGp::fit_warm(x, &y, *prev.params(), evals_per_step, opts)?,
                };
                let pred = gp.predict(&test.x)?;
                elapsed += start.elapsed().as_secs_f64();
                trace.push(test.score(pred.as_slice())?);
                current = Some(gp);
            }
            let gp = current.expect("T >= 1");
            Ok(ClassicResult {
                run: index,
                final_nmse: *trace.last().expect("T >= 1"),
                elapsed_s: elapsed,
                nmse_trace: trace,
                params: *gp.params(),
                converged: gp.converged(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub t: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("linear fit needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingConfig {
    pub horizons: Vec<usize>,
    /// Timed repetitions per horizon; the minimum is kept.
    pub repeats: usize,
    pub classic_evals_per_step: usize,
    /// Also time the batch GP with per-step refits.
    pub include_classic: bool,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            horizons: vec![50, 100, 200],
            repeats: 3,
            classic_evals_per_step: 20,
            include_classic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
    /// Time-vs-T line for each filter mode.
    pub fits: Vec<(FilterMode, LinearFit)>,
}

impl TimingTable {
    pub fn seconds(&self, method: &str, t: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method && r.t == t).map(|r| r.seconds)
    }
}

pub const CLASSIC_METHOD: &str = "classic";

/// Times every filter mode (and optionally the per-step batch GP) at each
/// horizon on run 0's data. Runs serially.
pub fn run_timing(cfg: &ExperimentConfig, timing: &TimingConfig) -> Result<TimingTable> {
    cfg.validate()?;
    if timing.horizons.is_empty() || timing.repeats == 0 {
        return Err(Error::invalid("timing needs at least one horizon and one repeat"));
    }
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for mode in FilterMode::ALL {
        let mut ts = Vec::new();
        let mut secs = Vec::new();
        for &t in &timing.horizons {
            let c = ExperimentConfig {
                mode,
                t,
                runs: 1,
                ..cfg.clone()
            };
            let mut best = f64::INFINITY;
            for _ in 0..timing.repeats {
                best = best.min(run_single(&c, 0)?.elapsed_s);
            }
            rows.push(TimingRow {
                method: mode.to_string(),
                t,
                seconds: best,
            });
            ts.push(t as f64);
            secs.push(best);
        }
        if ts.len() >= 2 {
            fits.push((mode, linear_fit(&ts, &secs)?));
        }
    }
    if timing.include_classic {
        let opts = ClassicGpOptions::default();
        for &t in &timing.horizons {
            let c = ExperimentConfig {
                t,
                runs: 1,
                ..cfg.clone()
            };
            let r = run_classic(
                &c,
                0,
                RefitPolicy::PerStep {
                    evals_per_step: timing.classic_evals_per_step,
                },
                &opts,
            )?;
            rows.push(TimingRow {
                method: CLASSIC_METHOD.to_string(),
                t,
                seconds: r.elapsed_s,
            });
        }
    }
    Ok(TimingTable { rows, fits })
}
