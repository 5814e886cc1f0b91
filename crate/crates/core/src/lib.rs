//! Online Gaussian-process regression with ensemble Kalman filters.
//!
//! A GP's latent values on a fixed grid, together with its log-domain kernel
//! hyperparameters, are tracked by an ensemble Kalman filter as batches of
//! observations arrive. Three filter variants are provided (dual, dual with
//! Liu-West kernel smoothing of the parameter walk, and joint), plus a classic
//! maximum-likelihood GP used as a baseline.

pub mod enkf;
pub mod error;
pub mod experiments;
pub mod geo;
pub mod gp;
pub mod ingest;
pub mod kernels;
pub mod optim;

pub use enkf::{Centering, Ensemble, EnsemblePrediction, FilterConfig, FilterMode, FilterState};
pub use error::{Error, Result};
pub use gp::classic::{ClassicGp, ClassicGpOptions};
pub use gp::{predict_at, GpPredictor, ObservationBatch};
pub use kernels::{GridSpec, Kernel, KernelParams};
