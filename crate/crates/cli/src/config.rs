//! Layered configuration: built-in defaults, then the TOML file, then flags.

use std::path::Path;

use gpenkf::experiments::{ExperimentConfig, TimingConfig};
use gpenkf::ingest::ColumnMap;
use gpenkf::{Centering, FilterConfig, FilterMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub columns: ColumnMap,
    pub mode: FilterMode,
    pub k_per_axis: usize,
    pub batch_size: usize,
    /// Number of batches to assimilate; all complete batches when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub filter: FilterConfig,
}

impl Default for GeoSection {
    fn default() -> Self {
        let g = gpenkf::geo::GeoConfig::default();
        Self {
            input: None,
            columns: ColumnMap::default(),
            mode: g.mode,
            k_per_axis: g.k_per_axis,
            batch_size: g.batch_size,
            steps: Some(20),
            filter: g.filter,
        }
    }
}

/// Everything a subcommand may read. `experiment.seed` is the single source
/// of randomness; the `seed` keys of the filter sections are not exposed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileConfig {
    pub experiment: ExperimentConfig,
    pub filter: FilterConfig,
    pub timing: TimingConfig,
    pub geo: GeoSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        let experiment = ExperimentConfig::default();
        Self {
            filter: experiment.filter,
            experiment,
            timing: TimingConfig::default(),
            geo: GeoSection::default(),
        }
    }
}

/// Keys that may appear in a file although the defaults leave them unset.
const OPTIONAL_KEYS: &[&str] = &["geo.input", "geo.steps"];

/// Keys hidden from the file format.
const HIDDEN_KEYS: &[&str] = &["experiment.filter", "filter.seed", "geo.filter.seed"];

fn remove_path(table: &mut toml::Table, path: &str) {
    match path.split_once('.') {
        Some((head, rest)) => {
            if let Some(toml::Value::Table(t)) = table.get_mut(head) {
                remove_path(t, rest);
            }
        }
        None => {
            table.remove(path);
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table, prefix: &str) -> Result<(), CliError> {
    for (k, v) in over {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &key)?,
            (Some(slot @ toml::Value::Float(_)), toml::Value::Integer(i)) => *slot = toml::Value::Float(i as f64),
            (Some(slot), v) => *slot = v,
            (None, v) if OPTIONAL_KEYS.contains(&key.as_str()) => {
                base.insert(k, v);
            }
            (None, _) => return Err(CliError::Usage(format!("unknown config key '{key}'"))),
        }
    }
    Ok(())
}

impl FileConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let user: toml::Table = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let mut base = toml::Table::try_from(FileConfig::default()).map_err(|e| CliError::Runtime(e.to_string()))?;
        for key in HIDDEN_KEYS {
            remove_path(&mut base, key);
        }
        merge(&mut base, user, "")?;
        // the filter section lives inside the experiment config in the library
        let filter = base.get("filter").cloned().unwrap_or_else(|| toml::Value::Table(Default::default()));
        if let Some(toml::Value::Table(e)) = base.get_mut("experiment") {
            e.insert("filter".into(), filter);
        }
        let mut cfg: FileConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        cfg.filter = cfg.experiment.filter;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", p.display())))?;
                Self::from_toml_str(&text)
            }
        }
    }

    /// The experiment config with the `[filter]` section folded in.
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            filter: self.filter,
            ..self.experiment.clone()
        }
    }
}

/// Flag values shared by the subcommands; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct FilterOverrides {
    pub n_members: Option<usize>,
    pub delta: Option<f64>,
    pub centering: Option<Centering>,
}

impl FilterOverrides {
    pub fn apply(&self, f: &mut FilterConfig) {
        if let Some(n) = self.n_members {
            f.n_members = n;
        }
        if let Some(d) = self.delta {
            f.delta_lw = d;
        }
        if let Some(c) = self.centering {
            f.centering = c;
        }
    }
}
