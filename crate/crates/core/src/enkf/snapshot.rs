//! JSON snapshots of a [`FilterState`].
//!
//! Every float is stored as the 16-digit hex of its IEEE-754 bit pattern
//! (`"3ff0000000000000"` is 1.0), so a round trip is bit-exact. Matrices are
//! row-major.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Centering, Ensemble, Ensembles, FilterConfig, FilterMode, FilterState};
use crate::error::{Error, Result};
use crate::kernels::GridSpec;

pub const SNAPSHOT_FORMAT: &str = "gpenkf-filter-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| Error::Serialization(format!("bad hex float '{s}': {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    data: Vec<String>,
}

impl MatrixDoc {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(hex(m[(i, j)]));
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Serialization(format!(
                "matrix declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        let vals = self.data.iter().map(|s| unhex(s)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &vals))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridDoc {
    points: MatrixDoc,
    axes: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigDoc {
    n_members: usize,
    sigma_eta: String,
    sigma_g: String,
    sigma_s: String,
    sigma_obs_sq: String,
    init_param_std: String,
    init_state_std: String,
    init_augmented_std: String,
    delta_lw: String,
    centering: Centering,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsemblesDoc {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    params: Option<MatrixDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    state: Option<MatrixDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    augmented: Option<MatrixDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotDoc {
    format: String,
    schema_version: u32,
    mode: FilterMode,
    seed: u64,
    t: u64,
    config: ConfigDoc,
    grid: GridDoc,
    ensembles: EnsemblesDoc,
}

impl FilterState {
    pub fn to_snapshot_json(&self) -> Result<String> {
        let c = &self.config;
        let grid = GridDoc {
            points: MatrixDoc::from_matrix(self.grid.points()),
            axes: self
                .grid
                .axes()
                .map(|axes| axes.iter().map(|a| a.iter().copied().map(hex).collect()).collect()),
        };
        let ensembles = match &self.ensembles {
            Ensembles::Dual { params, state } => EnsemblesDoc {
                params: Some(MatrixDoc::from_matrix(params.members())),
                state: Some(MatrixDoc::from_matrix(state.members())),
                augmented: None,
            },
            Ensembles::Joint { augmented } => EnsemblesDoc {
                params: None,
                state: None,
                augmented: Some(MatrixDoc::from_matrix(augmented.members())),
            },
        };
        let doc = SnapshotDoc {
            format: SNAPSHOT_FORMAT.to_string(),
            schema_version: SNAPSHOT_VERSION,
            mode: self.mode,
            seed: c.seed,
            t: self.t,
            config: ConfigDoc {
                n_members: c.n_members,
                sigma_eta: hex(c.sigma_eta),
                sigma_g: hex(c.sigma_g),
                sigma_s: hex(c.sigma_s),
                sigma_obs_sq: hex(c.sigma_obs_sq),
                init_param_std: hex(c.init_param_std),
                init_state_std: hex(c.init_state_std),
                init_augmented_std: hex(c.init_augmented_std),
                delta_lw: hex(c.delta_lw),
                centering: c.centering,
            },
            grid,
            ensembles,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_snapshot_json(json: &str) -> Result<Self> {
        let doc: SnapshotDoc = serde_json::from_str(json)?;
        if doc.format != SNAPSHOT_FORMAT {
            return Err(Error::Serialization(format!("unexpected format tag '{}'", doc.format)));
        }
        if doc.schema_version != SNAPSHOT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported snapshot schema version {}",
                doc.schema_version
            )));
        }
        let c = &doc.config;
        let config = FilterConfig {
            n_members: c.n_members,
            sigma_eta: unhex(&c.sigma_eta)?,
            sigma_g: unhex(&c.sigma_g)?,
            sigma_s: unhex(&c.sigma_s)?,
            sigma_obs_sq: unhex(&c.sigma_obs_sq)?,
            init_param_std: unhex(&c.init_param_std)?,
            init_state_std: unhex(&c.init_state_std)?,
            init_augmented_std: unhex(&c.init_augmented_std)?,
            delta_lw: unhex(&c.delta_lw)?,
            centering: c.centering,
            seed: doc.seed,
        };
        let grid = match &doc.grid.axes {
            Some(axes) => {
                let axes = axes
                    .iter()
                    .map(|a| a.iter().map(|s| unhex(s)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                GridSpec::lattice(axes)?
            }
            None => GridSpec::new(doc.grid.points.to_matrix()?)?,
        };
        let e = &doc.ensembles;
        let ensembles = match (doc.mode, &e.params, &e.state, &e.augmented) {
            (FilterMode::Joint, None, None, Some(aug)) => Ensembles::Joint {
                augmented: Ensemble::new(aug.to_matrix()?)?,
            },
            (FilterMode::Dual | FilterMode::DualLiuWest, Some(p), Some(s), None) => Ensembles::Dual {
                params: Ensemble::new(p.to_matrix()?)?,
                state: Ensemble::new(s.to_matrix()?)?,
            },
            _ => {
                return Err(Error::Serialization(format!(
                    "ensembles present do not match mode {}",
                    doc.mode
                )))
            }
        };
        FilterState::from_parts(doc.mode, grid, ensembles, config, doc.t)
    }
}
