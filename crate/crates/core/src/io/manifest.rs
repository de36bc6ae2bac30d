//! Results manifest, intermediate stage files, the atlas file and the loss-trace CSV.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::discovery::{CosetSummary, DimensionReport};
use crate::error::{Error, Result};
use crate::geometry::{Atlas, Chart};
use crate::io::RunConfig;
use crate::lie::{CosetBank, InvariantMetric, LieBasis};
use crate::tasks::Predictor;
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: &str = "atlasd-results/1";
pub const PREDICTORS_VERSION: &str = "atlasd-predictors/1";
pub const GENERATORS_VERSION: &str = "atlasd-generators/1";
pub const DIMENSION_VERSION: &str = "atlasd-dimension/1";
pub const ATLAS_VERSION: &str = "atlasd-atlas/1";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACES_FILE: &str = "traces.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const PREDICTORS_FILE: &str = "predictors.json";
pub const GENERATORS_FILE: &str = "generators.json";
pub const DIMENSION_FILE: &str = "dimension.json";
pub const ATLAS_FILE: &str = "atlas.toml";

pub fn tool_version() -> String {
    format!("atlasd {}", env!("CARGO_PKG_VERSION"))
}

/// JSON has no infinities; degenerate candidates carry an infinite loss.
mod lossy_floats {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum F {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let items: Vec<F> = v
            .iter()
            .map(|&x| if x.is_finite() { F::Num(x) } else { F::Text(x.to_string()) })
            .collect();
        items.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<F>::deserialize(d)?
            .into_iter()
            .map(|f| match f {
                F::Num(x) => Ok(x),
                F::Text(t) => t.parse().map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankRecord {
    pub candidates: Vec<Tensor>,
    #[serde(with = "lossy_floats")]
    pub losses: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl From<&CosetBank> for BankRecord {
    fn from(b: &CosetBank) -> Self {
        Self {
            candidates: b.candidates.clone(),
            losses: b.losses.clone(),
            degenerate: b.degenerate.clone(),
        }
    }
}

impl From<BankRecord> for CosetBank {
    fn from(b: BankRecord) -> Self {
        CosetBank {
            candidates: b.candidates,
            losses: b.losses,
            degenerate: b.degenerate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed { stage: String, error: String },
}

/// Everything a run produced except wall-clock time, which lives in its own file
/// so identical runs give identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsManifest {
    pub version: String,
    pub tool_version: String,
    pub status: RunStatus,
    pub config: RunConfig,
    #[serde(with = "lossy_floats")]
    pub predictor_losses: Vec<f64>,
    pub generators: Option<LieBasis>,
    /// Unique representatives in ascending loss.
    pub cosets: Vec<CosetSummary>,
    pub bank: Option<BankRecord>,
    pub metric: Option<InvariantMetric>,
    pub dimension: Option<DimensionReport>,
    /// File names relative to the manifest.
    pub traces: String,
    pub timing: String,
}

impl ResultsManifest {
    pub fn new(config: RunConfig) -> Self {
        Self {
            version: MANIFEST_VERSION.into(),
            tool_version: tool_version(),
            status: RunStatus::Complete,
            config,
            predictor_losses: Vec::new(),
            generators: None,
            cosets: Vec::new(),
            bank: None,
            metric: None,
            dimension: None,
            traces: TRACES_FILE.into(),
            timing: TIMING_FILE.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorsFile {
    pub version: String,
    pub predictors: Vec<Predictor>,
    #[serde(with = "lossy_floats")]
    pub losses: Vec<f64>,
    pub traces: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorsFile {
    pub version: String,
    pub basis: LieBasis,
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionFile {
    pub version: String,
    pub report: DimensionReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// `(stage, seconds)` in execution order.
    pub stages: Vec<(String, f64)>,
    pub total_seconds: f64,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Reads JSON after checking its `version` tag.
pub fn read_json<T: DeserializeOwned>(path: &Path, version: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match value.get("version").and_then(|v| v.as_str()) {
        Some(v) if v == version => {}
        Some(v) => return Err(Error::Format(format!("{}: unknown version `{v}`, expected `{version}`", path.display()))),
        None => return Err(Error::Format(format!("{}: missing version tag", path.display()))),
    }
    serde_json::from_value(value).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_manifest(m: &ResultsManifest, path: &Path) -> Result<()> {
    write_json(m, path)
}

pub fn load_manifest(path: &Path) -> Result<ResultsManifest> {
    read_json(path, MANIFEST_VERSION)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtlasFile {
    version: String,
    charts: Vec<Chart>,
}

pub fn save_atlas(atlas: &Atlas, path: &Path) -> Result<()> {
    let f = AtlasFile {
        version: ATLAS_VERSION.into(),
        charts: atlas.charts.clone(),
    };
    std::fs::write(path, toml::to_string(&f).map_err(|e| Error::Format(e.to_string()))?)?;
    Ok(())
}

pub fn load_atlas(path: &Path) -> Result<Atlas> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match table.get("version").and_then(|v| v.as_str()) {
        Some(ATLAS_VERSION) => {}
        Some(v) => return Err(Error::Format(format!("unknown atlas version `{v}`"))),
        None => return Err(Error::Format(format!("{}: missing version tag", path.display()))),
    }
    let f: AtlasFile = table.try_into().map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
    Ok(Atlas::new(f.charts))
}

/// One row per recorded loss: `stage,series,step,loss`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub stage: String,
    /// Chart index for predictor traces, 0 otherwise.
    pub series: usize,
    pub step: usize,
    pub loss: f64,
}

pub fn trace_rows(stage: &str, series: usize, trace: &[f64]) -> Vec<TraceRow> {
    trace
        .iter()
        .enumerate()
        .map(|(step, &loss)| TraceRow {
            stage: stage.into(),
            series,
            step,
            loss,
        })
        .collect()
}

pub fn write_traces(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::RunConfig;
    use crate::lie::rotation_generator;

    fn config() -> RunConfig {
        RunConfig::from_toml("seed = 5\noutput = \"out\"\n[task]\nkind = \"l1\"\nn = 10\n").unwrap()
    }

    fn bits(t: &Tensor) -> Vec<u64> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn manifest_with_generator_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let g = Tensor::from_rows(&[[0.1, -1.0 / 3.0], [std::f64::consts::PI, 1e-300]]);
        let mut m = ResultsManifest::new(config());
        m.generators = Some(LieBasis::new(2, vec![g.clone()]).unwrap());
        m.cosets.push(CosetSummary {
            index: 3,
            matrix: Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]),
            det: -1.0,
            loss: 2.5e-17,
        });
        m.bank = Some(BankRecord {
            candidates: vec![Tensor::eye(2), Tensor::zeros(&[2, 2])],
            losses: vec![0.125, f64::INFINITY],
            degenerate: vec![false, true],
        });
        m.predictor_losses = vec![1.0 / 7.0];
        save_manifest(&m, &p).unwrap();
        let back = load_manifest(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(bits(&back.generators.unwrap().matrices[0]), bits(&g));
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"shape\""));
    }

    #[test]
    fn manifest_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut m = ResultsManifest::new(config());
        m.version = "atlasd-results/0".into();
        save_manifest(&m, &p).unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("unknown version"), "{err}");
    }

    #[test]
    fn atlas_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(ATLAS_FILE);
        let atlas = Atlas::new(vec![
            Chart::new((20, 41), 13, 10),
            Chart::new((40, 22), 13, 10).with_map([[1.0, 0.3], [-0.1, 1.0 / 3.0]]),
        ]);
        save_atlas(&atlas, &p).unwrap();
        assert_eq!(load_atlas(&p).unwrap(), atlas);
        std::fs::write(&p, "version = \"nope\"\ncharts = []\n").unwrap();
        assert!(load_atlas(&p).is_err());
    }

    #[test]
    fn traces_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(TRACES_FILE);
        let mut rows = trace_rows("train-predictors", 1, &[0.5, 0.25]);
        rows.extend(trace_rows("discover-gen", 0, &[1.0 / 3.0]));
        write_traces(&rows, &p).unwrap();
        assert_eq!(read_traces(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("stage,series,step,loss\n"));
    }

    #[test]
    fn rotation_generator_survives_json() {
        let g = GeneratorsFile {
            version: GENERATORS_VERSION.into(),
            basis: LieBasis::new(2, vec![rotation_generator().scale(std::f64::consts::FRAC_1_SQRT_2)]).unwrap(),
            trace: vec![0.1, 0.01],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(GENERATORS_FILE);
        write_json(&g, &p).unwrap();
        assert_eq!(read_json::<GeneratorsFile>(&p, GENERATORS_VERSION).unwrap(), g);
        assert!(read_json::<GeneratorsFile>(&p, PREDICTORS_VERSION).is_err());
    }
}
