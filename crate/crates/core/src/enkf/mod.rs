//! Ensemble Kalman filters over the GP grid mean (state) and the log
//! hyperparameters (parameters).
//!
//! Three variants share the same building blocks in [`ensemble`]:
//!
//! * **Dual**: random-walk forecast, then a parameter update, then a state
//!   update that re-predicts the observations with the updated parameters.
//! * **Dual Liu-West**: as Dual, but parameters are forecast with Liu-West
//!   kernel shrinkage instead of a random walk.
//! * **Joint**: one augmented ensemble `[g ; eta]` updated in a single step.
//!
//! A step either completes or leaves the filter untouched.

pub mod ensemble;
pub mod rng;
pub mod snapshot;

pub use ensemble::{
    apply_update, cross_covariance, kalman_gain, liu_west_coefficients, liu_west_predict, perturb_observations,
    predict_observations, predict_random_walk, prediction_covariance, Centering, Ensemble,
};
pub use rng::{StepRng, StreamTag};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpPredictor, ObservationBatch};
use crate::kernels::{GridSpec, KernelParams, PARAM_DIM};
use ensemble::map_members;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    Dual,
    DualLiuWest,
    Joint,
}

impl FilterMode {
    pub const ALL: [FilterMode; 3] = [FilterMode::Joint, FilterMode::Dual, FilterMode::DualLiuWest];

    pub fn as_str(&self) -> &'static str {
        match self {
            FilterMode::Dual => "dual",
            FilterMode::DualLiuWest => "liu-west",
            FilterMode::Joint => "joint",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FilterMode::Dual => "Dual GP-EnKF",
            FilterMode::DualLiuWest => "Liu-West Dual GP-EnKF",
            FilterMode::Joint => "Joint GP-EnKF",
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "dual" => Ok(FilterMode::Dual),
            "liu-west" | "dual-liu-west" | "liuwest" => Ok(FilterMode::DualLiuWest),
            "joint" => Ok(FilterMode::Joint),
            other => Err(Error::invalid(format!("unknown filter mode '{other}'"))),
        }
    }
}

/// Noise levels, prior spreads and discount factor of the filters.
///
/// All `sigma_*` fields except `sigma_obs_sq` are standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub n_members: usize,
    /// Random-walk std of the parameters (dual modes).
    pub sigma_eta: f64,
    /// Random-walk std of the grid mean (dual modes).
    pub sigma_g: f64,
    /// Random-walk std of the augmented state (joint mode).
    pub sigma_s: f64,
    /// Variance of the perturbations added to the observations.
    pub sigma_obs_sq: f64,
    /// Initial std of each log-parameter.
    pub init_param_std: f64,
    /// Initial std of each grid-mean entry.
    pub init_state_std: f64,
    /// Initial std of each grid entry of the augmented state; its parameter
    /// entries start at `init_param_std` like the dual filters.
    pub init_augmented_std: f64,
    pub delta_lw: f64,
    pub centering: Centering,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_members: 100,
            sigma_eta: 0.01,
            sigma_g: 0.5,
            sigma_s: 0.5,
            sigma_obs_sq: 0.01,
            init_param_std: 1.0,
            init_state_std: 5.0,
            init_augmented_std: 5.0,
            delta_lw: 0.95,
            centering: Centering::Observation,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_members < 2 {
            return Err(Error::invalid(format!("need at least 2 ensemble members, got {}", self.n_members)));
        }
        for (name, v) in [
            ("sigma_eta", self.sigma_eta),
            ("sigma_g", self.sigma_g),
            ("sigma_s", self.sigma_s),
            ("init_param_std", self.init_param_std),
            ("init_state_std", self.init_state_std),
            ("init_augmented_std", self.init_augmented_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.sigma_obs_sq > 0.0 && self.sigma_obs_sq.is_finite()) {
            return Err(Error::invalid(format!("sigma_obs_sq must be positive, got {}", self.sigma_obs_sq)));
        }
        liu_west_coefficients(self.delta_lw)?;
        Ok(())
    }
}

/// The ensembles carried by each mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Ensembles {
    Dual { params: Ensemble, state: Ensemble },
    /// Columns `0..K` hold the grid mean, `K..K+L` the log-parameters.
    Joint { augmented: Ensemble },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    mode: FilterMode,
    grid: GridSpec,
    ensembles: Ensembles,
    config: FilterConfig,
    t: u64,
}

/// Across-ensemble mean and std of per-member predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn gaussian_ensemble(rng: &StepRng, tag: StreamTag, n: usize, p: usize, std: f64) -> Result<Ensemble> {
    let rows = map_members(n, |i| {
        let z = rng.normals(tag, i, p);
        z.into_iter().map(|v| std * v).collect::<Vec<_>>()
    });
    Ensemble::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

impl FilterState {
    pub fn init(mode: FilterMode, grid: GridSpec, config: FilterConfig) -> Result<Self> {
        match mode {
            FilterMode::Joint => Self::init_joint(grid, config),
            _ => Self::init_dual_mode(mode, grid, config),
        }
    }

    /// Dual filter with random-walk parameter forecasts.
    pub fn init_dual(grid: GridSpec, config: FilterConfig) -> Result<Self> {
        Self::init_dual_mode(FilterMode::Dual, grid, config)
    }

    pub fn init_dual_liu_west(grid: GridSpec, config: FilterConfig) -> Result<Self> {
        Self::init_dual_mode(FilterMode::DualLiuWest, grid, config)
    }

    fn init_dual_mode(mode: FilterMode, grid: GridSpec, config: FilterConfig) -> Result<Self> {
        config.validate()?;
        let rng = StepRng::new(config.seed, 0);
        let n = config.n_members;
        let params = gaussian_ensemble(&rng, StreamTag::InitParams, n, PARAM_DIM, config.init_param_std)?;
        let state = gaussian_ensemble(&rng, StreamTag::InitState, n, grid.len(), config.init_state_std)?;
        Ok(Self {
            mode,
            grid,
            ensembles: Ensembles::Dual { params, state },
            config,
            t: 0,
        })
    }

    pub fn init_joint(grid: GridSpec, config: FilterConfig) -> Result<Self> {
        config.validate()?;
        let rng = StepRng::new(config.seed, 0);
        let k = grid.len();
        // diagonal prior: grid block at the augmented std, parameter block at the dual filters' parameter std
        let rows = map_members(config.n_members, |i| {
            let mut z = rng.normals(StreamTag::InitAugmented, i, k + PARAM_DIM);
            for (j, v) in z.iter_mut().enumerate() {
                *v *= if j < k { config.init_augmented_std } else { config.init_param_std };
            }
            z
        });
        let augmented = Ensemble::new(DMatrix::from_fn(config.n_members, k + PARAM_DIM, |i, j| rows[i][j]))?;
        Ok(Self {
            mode: FilterMode::Joint,
            grid,
            ensembles: Ensembles::Joint { augmented },
            config,
            t: 0,
        })
    }

    /// Rebuilds a filter from its parts, checking that shapes agree with the mode.
    pub fn from_parts(mode: FilterMode, grid: GridSpec, ensembles: Ensembles, config: FilterConfig, t: u64) -> Result<Self> {
        config.validate()?;
        let n = config.n_members;
        let k = grid.len();
        let ok = match (&mode, &ensembles) {
            (FilterMode::Joint, Ensembles::Joint { augmented }) => augmented.n() == n && augmented.p() == k + PARAM_DIM,
            (FilterMode::Dual | FilterMode::DualLiuWest, Ensembles::Dual { params, state }) => {
                params.n() == n && state.n() == n && params.p() == PARAM_DIM && state.p() == k
            }
            _ => false,
        };
        if !ok {
            return Err(Error::invalid(format!("ensemble layout does not match mode {mode}")));
        }
        Ok(Self {
            mode,
            grid,
            ensembles,
            config,
            t,
        })
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn ensembles(&self) -> &Ensembles {
        &self.ensembles
    }

    /// Number of completed steps.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Parameter ensemble (N x L); for joint mode, the parameter columns.
    pub fn param_ensemble(&self) -> Ensemble {
        match &self.ensembles {
            Ensembles::Dual { params, .. } => params.clone(),
            Ensembles::Joint { augmented } => augmented
                .columns(self.grid.len(), PARAM_DIM)
                .expect("augmented layout checked at construction"),
        }
    }

    /// Grid-mean ensemble (N x K); for joint mode, the state columns.
    pub fn state_ensemble(&self) -> Ensemble {
        match &self.ensembles {
            Ensembles::Dual { state, .. } => state.clone(),
            Ensembles::Joint { augmented } => augmented
                .columns(0, self.grid.len())
                .expect("augmented layout checked at construction"),
        }
    }

    /// Per-parameter `(mean, std)` of the log-parameters across members.
    pub fn param_summary(&self) -> [(f64, f64); PARAM_DIM] {
        let e = self.param_ensemble();
        let (m, v) = (e.mean(), e.variance());
        [(m[0], v[0].sqrt()), (m[1], v[1].sqrt()), (m[2], v[2].sqrt())]
    }

    /// Advances the filter by one batch using the step of its mode.
    pub fn step(&mut self, batch: &ObservationBatch) -> Result<()> {
        match self.mode {
            FilterMode::Joint => self.step_joint(batch),
            _ => self.step_dual(batch),
        }
    }

    fn check_batch(&self, batch: &ObservationBatch) -> Result<()> {
        if batch.dim() != self.grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.dim(),
                got: batch.dim(),
            });
        }
        Ok(())
    }

    /// One dual step: parameters are updated first, then the grid mean is
    /// updated against predictions made with the new parameters. The same
    /// perturbed observations feed both updates.
    pub fn step_dual(&mut self, batch: &ObservationBatch) -> Result<()> {
        let Ensembles::Dual { params, state } = &self.ensembles else {
            return Err(Error::invalid("step_dual called on a joint filter"));
        };
        self.check_batch(batch)?;
        let cfg = &self.config;
        let rng = StepRng::new(cfg.seed, self.t + 1);
        let (locs, y) = (batch.locations(), batch.values());

        let params_fc = match self.mode {
            FilterMode::DualLiuWest => liu_west_predict(params, cfg.delta_lw, &rng)?,
            _ => predict_random_walk(params, cfg.sigma_eta, &rng, StreamTag::WalkParams)?,
        };
        let state_fc = predict_random_walk(state, cfg.sigma_g, &rng, StreamTag::WalkState)?;
        let y_hat = predict_observations(&params_fc, &state_fc, locs, &self.grid)?;
        let y_obs = perturb_observations(y, cfg.sigma_obs_sq, cfg.n_members, &rng)?;

        let c_eta = cross_covariance(&params_fc, &y_hat, y, cfg.centering)?;
        let c_yy = prediction_covariance(&y_hat, y, cfg.centering)?;
        let gain_eta = kalman_gain(&c_eta, &c_yy, cfg.sigma_obs_sq)?;
        let params_new = apply_update(&params_fc, &gain_eta, &y_obs, &y_hat)?;

        let y_hat2 = predict_observations(&params_new, &state_fc, locs, &self.grid)?;
        let c_g = cross_covariance(&state_fc, &y_hat2, y, cfg.centering)?;
        let c_yy2 = prediction_covariance(&y_hat2, y, cfg.centering)?;
        let gain_g = kalman_gain(&c_g, &c_yy2, cfg.sigma_obs_sq)?;
        let state_new = apply_update(&state_fc, &gain_g, &y_obs, &y_hat2)?;

        if !params_new.is_finite() || !state_new.is_finite() {
            return Err(Error::Degenerate(format!("non-finite ensemble after step {}", self.t + 1)));
        }
        self.ensembles = Ensembles::Dual {
            params: params_new,
            state: state_new,
        };
        self.t += 1;
        Ok(())
    }

    /// One joint step on the augmented ensemble.
    pub fn step_joint(&mut self, batch: &ObservationBatch) -> Result<()> {
        let Ensembles::Joint { augmented } = &self.ensembles else {
            return Err(Error::invalid("step_joint called on a dual filter"));
        };
        self.check_batch(batch)?;
        let cfg = &self.config;
        let k = self.grid.len();
        let rng = StepRng::new(cfg.seed, self.t + 1);
        let (locs, y) = (batch.locations(), batch.values());

        let aug_fc = predict_random_walk(augmented, cfg.sigma_s, &rng, StreamTag::WalkAugmented)?;
        let state_fc = aug_fc.columns(0, k)?;
        let params_fc = aug_fc.columns(k, PARAM_DIM)?;
        let y_hat = predict_observations(&params_fc, &state_fc, locs, &self.grid)?;
        let y_obs = perturb_observations(y, cfg.sigma_obs_sq, cfg.n_members, &rng)?;

        let c_sy = cross_covariance(&aug_fc, &y_hat, y, cfg.centering)?;
        let c_yy = prediction_covariance(&y_hat, y, cfg.centering)?;
        let gain = kalman_gain(&c_sy, &c_yy, cfg.sigma_obs_sq)?;
        let aug_new = apply_update(&aug_fc, &gain, &y_obs, &y_hat)?;

        if !aug_new.is_finite() {
            return Err(Error::Degenerate(format!("non-finite ensemble after step {}", self.t + 1)));
        }
        self.ensembles = Ensembles::Joint { augmented: aug_new };
        self.t += 1;
        Ok(())
    }

    /// Mean and std across members of the per-member GP predictions at `locations`.
    pub fn predict(&self, locations: &DMatrix<f64>) -> Result<EnsemblePrediction> {
        if locations.ncols() != self.grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.dim(),
                got: locations.ncols(),
            });
        }
        let preds = predict_observations(&self.param_ensemble(), &self.state_ensemble(), locations, &self.grid)?;
        let var = preds.variance();
        Ok(EnsemblePrediction {
            mean: preds.mean(),
            std: var.into_iter().map(f64::sqrt).collect(),
        })
    }

    /// GP prediction from the ensemble-mean state and parameters.
    pub fn predict_mean_member(&self, locations: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = KernelParams::from_slice(&self.param_ensemble().mean())?;
        let pred = GpPredictor::new(&self.grid, p)?;
        Ok(pred.predict(locations, &self.state_ensemble().mean())?.iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::uniform_1d(-1.0, 1.0, 3).unwrap()
    }

    fn batch() -> ObservationBatch {
        ObservationBatch::from_1d(&[-0.3, 0.6], vec![0.4, -0.2], 1).unwrap()
    }

    #[test]
    fn degenerate_init_is_zero() {
        let cfg = FilterConfig {
            init_param_std: 0.0,
            init_state_std: 0.0,
            init_augmented_std: 0.0,
            n_members: 4,
            ..Default::default()
        };
        let f = FilterState::init_dual(grid(), cfg).unwrap();
        assert!(f.param_ensemble().members().iter().all(|v| *v == 0.0));
        assert!(f.state_ensemble().members().iter().all(|v| *v == 0.0));
        let j = FilterState::init_joint(grid(), cfg).unwrap();
        assert!(j.param_ensemble().members().iter().all(|v| *v == 0.0));
        assert_eq!(j.t(), 0);
    }

    #[test]
    fn init_moments() {
        let cfg = FilterConfig {
            n_members: 10_000,
            ..Default::default()
        };
        let f = FilterState::init_dual(grid(), cfg).unwrap();
        let j = FilterState::init_joint(grid(), FilterConfig { init_augmented_std: 3.0, ..cfg }).unwrap();
        for (e, sd) in [
            (f.param_ensemble(), cfg.init_param_std),
            (f.state_ensemble(), cfg.init_state_std),
            (j.param_ensemble(), cfg.init_param_std),
            (j.state_ensemble(), 3.0),
        ] {
            for (m, v) in e.mean().iter().zip(e.variance()) {
                assert!(m.abs() < 0.05 * sd, "{m}");
                assert!((v.sqrt() / sd - 1.0).abs() < 0.05, "{v}");
            }
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = FilterConfig {
            n_members: 8,
            seed: 99,
            ..Default::default()
        };
        assert_eq!(FilterState::init_dual(grid(), cfg).unwrap(), FilterState::init_dual(grid(), cfg).unwrap());
        assert_eq!(FilterState::init_joint(grid(), cfg).unwrap(), FilterState::init_joint(grid(), cfg).unwrap());
        let other = FilterConfig { seed: 100, ..cfg };
        assert_ne!(FilterState::init_dual(grid(), cfg).unwrap(), FilterState::init_dual(grid(), other).unwrap());
    }

    #[test]
    fn joint_layout_state_then_params() {
        let cfg = FilterConfig {
            n_members: 5,
            ..Default::default()
        };
        let f = FilterState::init_joint(grid(), cfg).unwrap();
        let Ensembles::Joint { augmented } = f.ensembles() else { panic!() };
        assert_eq!(augmented.p(), 3 + PARAM_DIM);
        for i in 0..5 {
            for j in 0..PARAM_DIM {
                assert_eq!(f.param_ensemble().members()[(i, j)], augmented.members()[(i, 3 + j)]);
            }
        }
    }

    #[test]
    fn zero_gain_step_returns_forecast() {
        // Constant members and no walk noise make every cross-covariance zero.
        let cfg = FilterConfig {
            n_members: 4,
            sigma_eta: 0.0,
            sigma_g: 0.0,
            sigma_s: 0.0,
            init_param_std: 0.0,
            init_state_std: 0.0,
            init_augmented_std: 0.0,
            ..Default::default()
        };
        for mode in FilterMode::ALL {
            let mut f = FilterState::init(mode, grid(), cfg).unwrap();
            let before = f.clone();
            f.step(&batch()).unwrap();
            assert_eq!(f.ensembles(), before.ensembles(), "{mode}");
            assert_eq!(f.t(), 1);
        }
    }

    #[test]
    fn steps_are_deterministic() {
        let cfg = FilterConfig {
            n_members: 6,
            seed: 3,
            ..Default::default()
        };
        for mode in FilterMode::ALL {
            let mut a = FilterState::init(mode, grid(), cfg).unwrap();
            let mut b = a.clone();
            for _ in 0..3 {
                a.step(&batch()).unwrap();
                b.step(&batch()).unwrap();
            }
            assert_eq!(a, b);
        }
    }

    #[test]
    fn wrong_step_for_mode_and_dimension_rejected() {
        let cfg = FilterConfig {
            n_members: 4,
            ..Default::default()
        };
        let mut j = FilterState::init_joint(grid(), cfg).unwrap();
        assert!(j.step_dual(&batch()).is_err());
        let mut d = FilterState::init_dual(grid(), cfg).unwrap();
        assert!(d.step_joint(&batch()).is_err());
        let b2 = ObservationBatch::new(DMatrix::zeros(1, 2), vec![1.0], 0).unwrap();
        let before = d.clone();
        assert!(d.step(&b2).is_err());
        assert_eq!(d, before);
    }

    #[test]
    fn failed_step_leaves_state_intact() {
        let cfg = FilterConfig {
            n_members: 4,
            ..Default::default()
        };
        let f = FilterState::init_dual(grid(), cfg).unwrap();
        let Ensembles::Dual { params, state } = f.ensembles().clone() else { panic!() };
        let mut m = params.into_inner();
        m[(2, 0)] = 800.0; // exp overflows to an infinite variance
        let mut bad = FilterState::from_parts(
            FilterMode::Dual,
            grid(),
            Ensembles::Dual {
                params: Ensemble::new(m).unwrap(),
                state,
            },
            cfg,
            0,
        )
        .unwrap();
        let before = bad.clone();
        assert!(bad.step(&batch()).is_err());
        assert_eq!(bad, before);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig { n_members: 1, ..Default::default() }.validate().is_err());
        assert!(FilterConfig { delta_lw: 0.0, ..Default::default() }.validate().is_err());
        assert!(FilterConfig { sigma_obs_sq: 0.0, ..Default::default() }.validate().is_err());
        assert!(FilterConfig { sigma_g: -1.0, ..Default::default() }.validate().is_err());
        assert!(FilterConfig::default().validate().is_ok());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("liu-west".parse::<FilterMode>().unwrap(), FilterMode::DualLiuWest);
        assert_eq!("dual_liu_west".parse::<FilterMode>().unwrap(), FilterMode::DualLiuWest);
        assert_eq!("Joint".parse::<FilterMode>().unwrap(), FilterMode::Joint);
        assert!("ukf".parse::<FilterMode>().is_err());
    }
}
