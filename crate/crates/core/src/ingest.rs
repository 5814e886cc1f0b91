//! Loading and preparing pre-geocoded price records.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::ObservationBatch;
use crate::kernels::{linspace, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoRecord {
    pub longitude: f64,
    pub latitude: f64,
    pub value: f64,
}

impl GeoRecord {
    pub fn is_valid(&self) -> bool {
        self.longitude.is_finite()
            && self.latitude.is_finite()
            && self.value.is_finite()
            && (-180.0..=180.0).contains(&self.longitude)
            && (-90.0..=90.0).contains(&self.latitude)
            && self.value > 0.0
    }
}

/// CSV header names of the three input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub longitude: String,
    pub latitude: String,
    pub value: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            longitude: "longitude".into(),
            latitude: "latitude".into(),
            value: "price".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub records: Vec<GeoRecord>,
    /// Rows whose mapped fields did not parse as numbers.
    pub parse_skipped: usize,
    /// Rows that parsed but fall outside coordinate ranges or have a non-positive value.
    pub invalid_skipped: usize,
}

/// Reads records in file order, skipping and counting bad rows.
pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<LoadReport> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("{}: missing column '{name}'", path.display())))
    };
    let (ilon, ilat, ival) = (find(&columns.longitude)?, find(&columns.latitude)?, find(&columns.value)?);

    let mut records = Vec::new();
    let (mut parse_skipped, mut invalid_skipped) = (0, 0);
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                parse_skipped += 1;
                continue;
            }
        };
        let field = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok());
        let (Some(longitude), Some(latitude), Some(value)) = (field(ilon), field(ilat), field(ival)) else {
            parse_skipped += 1;
            continue;
        };
        let rec = GeoRecord {
            longitude,
            latitude,
            value,
        };
        if rec.is_valid() {
            records.push(rec);
        } else {
            invalid_skipped += 1;
        }
    }
    if records.is_empty() {
        return Err(Error::Degenerate(format!("{}: no valid rows", path.display())));
    }
    Ok(LoadReport {
        records,
        parse_skipped,
        invalid_skipped,
    })
}

/// Mean/std of log-values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Standardizer {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Degenerate("standardizing needs at least two values".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("log transform needs positive values, got {v}")));
        }
        let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::Degenerate("all values identical; standard deviation is zero".into()));
        }
        Ok(Self {
            mean,
            std,
            count: values.len(),
        })
    }

    /// `(ln(value) - mean) / std`
    pub fn transform(&self, value: f64) -> f64 {
        (value.ln() - self.mean) / self.std
    }

    pub fn inverse_transform(&self, z: f64) -> f64 {
        (z * self.std + self.mean).exp()
    }

    /// Standardized units back to log-value units.
    pub fn to_log(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn standardize(records: &[GeoRecord]) -> Result<(Standardizer, Vec<f64>)> {
    let values: Vec<f64> = records.iter().map(|r| r.value).collect();
    let s = Standardizer::fit(&values)?;
    Ok((s, values.iter().map(|v| s.transform(*v)).collect()))
}

/// Shuffles once with `seed`, then cuts consecutive batches of `s`. A final
/// partial batch is dropped. `values` are the per-record targets.
pub fn batch_stream(records: &[GeoRecord], values: &[f64], s: usize, seed: u64) -> Result<Vec<ObservationBatch>> {
    if values.len() != records.len() {
        return Err(Error::DimensionMismatch {
            expected: records.len(),
            got: values.len(),
        });
    }
    if s == 0 || s > records.len() {
        return Err(Error::invalid(format!(
            "batch size {s} must be between 1 and the record count {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks_exact(s)
        .enumerate()
        .map(|(t, chunk)| {
            let locs = DMatrix::from_fn(s, 2, |i, j| {
                let r = &records[chunk[i]];
                if j == 0 {
                    r.longitude
                } else {
                    r.latitude
                }
            });
            ObservationBatch::new(locs, chunk.iter().map(|&i| values[i]).collect(), t + 1)
        })
        .collect()
}

/// Uniform `k_per_axis` x `k_per_axis` lattice over the records' bounding
/// box (longitude first). A flat axis is widened by 0.5 degrees each way.
pub fn make_grid(records: &[GeoRecord], k_per_axis: usize) -> Result<GridSpec> {
    if k_per_axis < 2 {
        return Err(Error::invalid(format!("need at least 2 points per axis, got {k_per_axis}")));
    }
    if records.is_empty() {
        return Err(Error::invalid("cannot build a grid without records"));
    }
    let bounds = |f: fn(&GeoRecord) -> f64| {
        let (lo, hi) = records
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo > 0.0 {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (lon_lo, lon_hi) = bounds(|r| r.longitude);
    let (lat_lo, lat_hi) = bounds(|r| r.latitude);
    GridSpec::lattice(vec![
        linspace(lon_lo, lon_hi, k_per_axis),
        linspace(lat_lo, lat_hi, k_per_axis),
    ])
}
