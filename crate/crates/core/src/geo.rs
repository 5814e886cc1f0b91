//! Streaming a filter over geocoded price records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::enkf::{Centering, FilterConfig, FilterMode, FilterState};
use crate::error::{Error, Result};
use crate::ingest::{batch_stream, make_grid, standardize, GeoRecord, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoConfig {
    pub mode: FilterMode,
    pub k_per_axis: usize,
    pub batch_size: usize,
    /// Seeds the shuffle of the records; the filter uses `filter.seed`.
    pub shuffle_seed: u64,
    /// Stop after this many batches.
    pub max_steps: Option<usize>,
    pub filter: FilterConfig,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::Dual,
            k_per_axis: 25,
            batch_size: 100,
            shuffle_seed: 0,
            max_steps: None,
            filter: FilterConfig {
                n_members: 200,
                // With 100 observations per batch the innovation term of
                // observation centering swamps the gain and the grid never moves.
                centering: Centering::EnsembleMean,
                sigma_g: 0.1,
                ..Default::default()
            },
        }
    }
}

/// Posterior over the grid after some step, in log-value units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoSnapshot {
    pub step: usize,
    pub longitude: Vec<f64>,
    pub latitude: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GeoSnapshot {
    pub fn capture(filter: &FilterState, standardizer: &Standardizer, step: usize) -> Result<Self> {
        let pts = filter.grid().points();
        let pred = filter.predict(pts)?;
        Ok(Self {
            step,
            longitude: pts.column(0).iter().copied().collect(),
            latitude: pts.column(1).iter().copied().collect(),
            mean: pred.mean.iter().map(|z| standardizer.to_log(*z)).collect(),
            std: pred.std.iter().map(|s| s * standardizer.std).collect(),
        })
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["longitude", "latitude", "mean_log", "std_log"])?;
        for i in 0..self.mean.len() {
            w.write_record(&[
                self.longitude[i].to_string(),
                self.latitude[i].to_string(),
                self.mean[i].to_string(),
                self.std[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// NMSE of the snapshot mean against `truth(lon, lat)`.
    pub fn nmse_against(&self, truth: impl Fn(f64, f64) -> f64) -> Result<f64> {
        let t: Vec<f64> = self
            .longitude
            .iter()
            .zip(&self.latitude)
            .map(|(lon, lat)| truth(*lon, *lat))
            .collect();
        crate::experiments::nmse(&self.mean, &t)
    }
}

#[derive(Debug, Clone)]
pub struct GeoRun {
    pub filter: FilterState,
    pub standardizer: Standardizer,
    pub first: GeoSnapshot,
    pub last: GeoSnapshot,
    pub steps: usize,
}

pub fn run_geo(records: &[GeoRecord], cfg: &GeoConfig) -> Result<GeoRun> {
    let (standardizer, z) = standardize(records)?;
    let grid = make_grid(records, cfg.k_per_axis)?;
    let mut batches = batch_stream(records, &z, cfg.batch_size, cfg.shuffle_seed)?;
    if let Some(m) = cfg.max_steps {
        batches.truncate(m);
    }
    if batches.is_empty() {
        return Err(Error::Degenerate("no complete batch".into()));
    }
    let mut filter = FilterState::init(cfg.mode, grid, cfg.filter)?;
    let mut first = None;
    for (i, b) in batches.iter().enumerate() {
        filter.step(b)?;
        if i == 0 {
            first = Some(GeoSnapshot::capture(&filter, &standardizer, 1)?);
        }
    }
    let steps = batches.len();
    let last = GeoSnapshot::capture(&filter, &standardizer, steps)?;
    Ok(GeoRun {
        filter,
        standardizer,
        first: first.expect("at least one batch"),
        last,
        steps,
    })
}

pub const FIXTURE_LON: (f64, f64) = (-3.0, 1.0);
pub const FIXTURE_LAT: (f64, f64) = (50.5, 53.0);

/// Smooth log-price surface used for the synthetic geo fixture.
pub fn fixture_log_price(lon: f64, lat: f64) -> f64 {
    let bump = 0.8 * (-((lon + 0.1).powi(2) + (lat - 51.5).powi(2)) / 0.5).exp();
    12.0 + 0.6 * (1.2 * lon).sin() + 0.5 * (1.5 * (lat - 51.5)).cos() + bump
}

/// `n` records uniform over the fixture box with log-normal noise of `noise_std`.
pub fn generate_fixture(n: usize, noise_std: f64, seed: u64) -> Result<Vec<GeoRecord>> {
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let lon = rng.random_range(FIXTURE_LON.0..FIXTURE_LON.1);
            let lat = rng.random_range(FIXTURE_LAT.0..FIXTURE_LAT.1);
            let v = (fixture_log_price(lon, lat) + noise.sample(&mut rng)).exp();
            GeoRecord {
                longitude: (lon * 1e5).round() / 1e5,
                latitude: (lat * 1e5).round() / 1e5,
                value: v.round(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_valid_and_deterministic() {
        let a = generate_fixture(50, 0.1, 1).unwrap();
        assert_eq!(a, generate_fixture(50, 0.1, 1).unwrap());
        assert!(a.iter().all(GeoRecord::is_valid));
    }

    #[test]
    fn short_run_improves() {
        let recs = generate_fixture(600, 0.1, 2).unwrap();
        let cfg = GeoConfig {
            k_per_axis: 8,
            batch_size: 50,
            filter: FilterConfig {
                n_members: 30,
                ..Default::default()
            },
            ..Default::default()
        };
        let run = run_geo(&recs, &cfg).unwrap();
        assert_eq!(run.steps, 12);
        assert_eq!(run.last.mean.len(), 64);
        let e0 = run.first.nmse_against(fixture_log_price).unwrap();
        let e1 = run.last.nmse_against(fixture_log_price).unwrap();
        assert!(e1 < e0, "{e0} -> {e1}");
    }
}
