//! Configuration, persistence and the stage runners behind the command line.

mod config;
mod dataset;
mod heatmap;
mod manifest;
mod pipeline;

pub use config::{apply_override, load_run_config, AtlasSpec, ChartSpec, RunConfig, SelectSpec, TaskSpec};
pub use dataset::{load_dataset, read_dataset_header, save_dataset, Dataset, DatasetHeader, DatasetKind, StoredDataset, DATASET_VERSION};
pub use heatmap::{export_heatmap, heatmap_bytes};
pub use manifest::*;
pub use pipeline::{
    export_manifest_heatmaps, generate_task, prepare, run_cosets, run_generators, run_pipeline, run_select, run_train, verify_manifest, Prepared,
    VerifyReport,
};
