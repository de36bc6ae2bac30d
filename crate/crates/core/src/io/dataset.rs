//! Datasets as a TOML header plus a raw little-endian `f64` blob (all X, then all Y).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{FieldDataset, VectorDataset};
use crate::tensor::Tensor;

pub const DATASET_VERSION: &str = "atlasd-dataset/1";
const DTYPE: &str = "f64-le";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Field,
    Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Field(FieldDataset),
    Vector(VectorDataset),
}

impl Dataset {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Dataset::Field(_) => DatasetKind::Field,
            Dataset::Vector(_) => DatasetKind::Vector,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Field(d) => d.len(),
            Dataset::Vector(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tensors(&self) -> (&Tensor, &Tensor) {
        match self {
            Dataset::Field(d) => (&d.x, &d.y),
            Dataset::Vector(d) => (&d.x, &d.y),
        }
    }
}

/// A dataset with the provenance recorded in its header.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredDataset {
    pub data: Dataset,
    pub seed: Option<u64>,
    /// Generator name and parameters.
    pub generator: Option<toml::Table>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: String,
    pub kind: DatasetKind,
    pub samples: usize,
    pub dtype: String,
    /// Per-sample shapes.
    pub x_shape: Vec<usize>,
    pub y_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Blob file name, relative to the header.
    pub blob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<toml::Table>,
}

impl DatasetHeader {
    fn blob_bytes(&self) -> usize {
        let x: usize = self.x_shape.iter().product();
        let y: usize = self.y_shape.iter().product();
        self.samples * (x + y) * 8
    }
}

fn blob_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes `path` (the header) and the blob beside it with extension `.bin`.
pub fn save_dataset(ds: &StoredDataset, path: &Path) -> Result<()> {
    let (x, y) = ds.data.tensors();
    let n = ds.data.len();
    let blob = blob_path(path);
    let blob_name = blob
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad dataset path {}", path.display())))?
        .to_string();
    let field = matches!(ds.data, Dataset::Field(_));
    let header = DatasetHeader {
        version: DATASET_VERSION.into(),
        kind: ds.data.kind(),
        samples: n,
        dtype: DTYPE.into(),
        x_shape: x.shape()[1..].to_vec(),
        y_shape: y.shape()[1..].to_vec(),
        grid: field.then(|| [x.shape()[2], x.shape()[3]]),
        channels: field.then(|| x.shape()[1]),
        seed: ds.seed,
        blob: blob_name,
        generator: ds.generator.clone(),
    };
    let mut bytes = Vec::with_capacity(header.blob_bytes());
    for v in x.data().iter().chain(y.data()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text)?;
    std::fs::write(blob, bytes)?;
    Ok(())
}

pub fn read_dataset_header(path: &Path) -> Result<DatasetHeader> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match table.get("version").and_then(|v| v.as_str()) {
        Some(DATASET_VERSION) => {}
        Some(v) => return Err(Error::Format(format!("unknown dataset version `{v}`"))),
        None => return Err(Error::Format(format!("{}: missing version tag", path.display()))),
    }
    let header: DatasetHeader = table.try_into().map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
    if header.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype `{}`", header.dtype)));
    }
    Ok(header)
}

pub fn load_dataset(path: &Path) -> Result<StoredDataset> {
    let header = read_dataset_header(path)?;
    let blob = path.parent().unwrap_or(Path::new("")).join(&header.blob);
    let bytes = std::fs::read(&blob)?;
    let expected = header.blob_bytes();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "header expects {expected} bytes, blob {} has {} bytes",
            blob.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let n = header.samples;
    let nx = n * header.x_shape.iter().product::<usize>();
    let shape = |s: &[usize]| [&[n][..], s].concat();
    let x = Tensor::new(shape(&header.x_shape), values[..nx].to_vec())?;
    let y = Tensor::new(shape(&header.y_shape), values[nx..].to_vec())?;
    let data = match header.kind {
        DatasetKind::Field => {
            let ds = FieldDataset::new(x, y)?;
            if header.grid.is_some_and(|g| g != [ds.grid().0, ds.grid().1]) || header.channels.is_some_and(|c| c != ds.channels()) {
                return Err(Error::Format("grid/channels disagree with the sample shape".into()));
            }
            Dataset::Field(ds)
        }
        DatasetKind::Vector => Dataset::Vector(VectorDataset::new(x, y)?),
    };
    Ok(StoredDataset {
        data,
        seed: header.seed,
        generator: header.generator,
    })
}
