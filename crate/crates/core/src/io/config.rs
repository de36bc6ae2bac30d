//! Run configuration in TOML, with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discovery::DiscoveryConfig;
use crate::error::{Error, Result};
use crate::geometry::{ActionMode, Atlas, Chart};
use crate::tasks::{HeatConfig, PredictorKind};

fn default_n() -> usize {
    2000
}

fn default_range() -> f64 {
    1.0
}

fn default_m() -> usize {
    4
}

/// Where the data comes from: a built-in generator or a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Heat(HeatConfig),
    L1 {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_range")]
        range: f64,
    },
    Arctan {
        #[serde(default = "default_n")]
        n: usize,
    },
    Quadratic {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_m")]
        m: usize,
    },
    Dataset {
        path: PathBuf,
        /// Needed for vector data; field data always warps.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<ActionMode>,
    },
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Heat(_) => "heat",
            TaskSpec::L1 { .. } => "l1",
            TaskSpec::Arctan { .. } => "arctan",
            TaskSpec::Quadratic { .. } => "quadratic",
            TaskSpec::Dataset { .. } => "dataset",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    /// `(x, y)` as fractions of the grid.
    pub center: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_radius: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_radius: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<[[f64; 2]; 2]>,
}

/// Either an atlas file or charts listed inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_radius: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_radius: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub charts: Vec<ChartSpec>,
}

impl AtlasSpec {
    /// Resolves fractional centers on a grid; loads the file when `path` is set.
    pub fn resolve(&self, grid: (usize, usize)) -> Result<Atlas> {
        let atlas = match &self.path {
            Some(p) => {
                if !self.charts.is_empty() {
                    return Err(Error::Config("atlas: give either `path` or inline charts, not both".into()));
                }
                crate::io::load_atlas(p)?
            }
            None => {
                let charts = self
                    .charts
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let r_in = c.in_radius.or(self.in_radius);
                        let r_out = c.out_radius.or(self.out_radius);
                        let (Some(r_in), Some(r_out)) = (r_in, r_out) else {
                            return Err(Error::Config(format!("atlas chart {i} has no in/out radius")));
                        };
                        let chart = Chart::from_fraction((c.center[0], c.center[1]), grid, r_in, r_out)?;
                        Ok(match c.map {
                            Some(m) => chart.with_map(m),
                            None => chart,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Atlas::new(charts)
            }
        };
        atlas.validate(grid)?;
        Ok(atlas)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSpec {
    pub k_max: usize,
    /// Seeds `seed, seed + 1, ...`.
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, predictor initialization and every discovery stage.
    pub seed: u64,
    /// Directory for every artifact of the run.
    pub output: PathBuf,
    /// Fit the invariant metric of the discovered generators.
    #[serde(default)]
    pub metric: bool,
    pub task: TaskSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atlas: Option<AtlasSpec>,
    /// Defaults: the exact stencil for heat, an MLP for vectors, a CNN for field files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<PredictorKind>,
    #[serde(default)]
    pub discovery: DiscoveryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<SelectSpec>,
}

impl RunConfig {
    /// Parses TOML and spreads the run seed into the sub-configs.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_seed();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn apply_seed(&mut self) {
        self.discovery.seed = self.seed;
        if let TaskSpec::Heat(h) = &mut self.task {
            h.seed = self.seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.discovery.validate()?;
        if let TaskSpec::Dataset { path, .. } = &self.task {
            require_file(path)?;
        }
        if let Some(p) = self.atlas.as_ref().and_then(|a| a.path.as_ref()) {
            require_file(p)?;
        }
        if let TaskSpec::Heat(h) = &self.task {
            h.validate()?;
        }
        let field = matches!(self.task, TaskSpec::Heat(_)) || self.dataset_is_field()?;
        if field && self.atlas.is_none() {
            return Err(Error::Config(format!("task `{}` needs an atlas", self.task.name())));
        }
        if let Some(s) = &self.select {
            if s.k_max == 0 || s.runs < 2 {
                return Err(Error::Config("select needs k_max >= 1 and runs >= 2".into()));
            }
        }
        Ok(())
    }

    fn dataset_is_field(&self) -> Result<bool> {
        match &self.task {
            TaskSpec::Dataset { path, .. } => Ok(crate::io::read_dataset_header(path)?.kind == crate::io::DatasetKind::Field),
            _ => Ok(false),
        }
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("referenced file {} does not exist", p.display())))
    }
}

/// Reads a run config file, applies `key=value` overrides, then validates.
pub fn load_run_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.apply_seed();
    cfg.validate()?;
    Ok(cfg)
}

/// Sets a dotted key such as `discovery.k=2`. The value is read as TOML, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed a single key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
