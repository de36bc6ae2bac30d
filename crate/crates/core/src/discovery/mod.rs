//! The discovery pipeline: fit chart predictors, learn generators, then train and filter cosets.

mod config;
mod cosets;
mod equivariance;
mod generators;
mod select;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{DiscoveryConfig, LossKind, RegKind};
pub use cosets::{discover_cosets, element_loss, filter_duplicate_cosets, CosetResult};
pub use equivariance::{equivariance_loss, valid_mask, ChartSamples, Problem};
pub use generators::{discover_generators, generator_loss, GeneratorResult};
pub use select::{select_basis_dimension, DimensionReport, DimensionRow, CONSISTENCY_DEG, WEAK_RATIO};
pub use train::{build_predictors, dataset_loss, train_predictors, TrainReport};

use crate::error::{Error, Result};
use crate::lie::{invariant_metric, CosetBank, InvariantMetric, LieBasis};
use crate::linalg;
use crate::tasks::Predictor;
use crate::tensor::Tensor;

/// Pipeline stages, each with its own random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Predictors = 0,
    Generators = 1,
    Cosets = 2,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Predictors => "train-predictors",
            Stage::Generators => "discover-gen",
            Stage::Cosets => "discover-cosets",
        }
    }
}

pub fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosetSummary {
    /// Index in the candidate bank.
    pub index: usize,
    pub matrix: Tensor,
    pub det: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub basis: LieBasis,
    /// Unique representatives in ascending loss.
    pub cosets: Vec<CosetSummary>,
    pub bank: CosetBank,
    pub predictor_losses: Vec<f64>,
    pub predictor_traces: Vec<Vec<f64>>,
    pub generator_trace: Vec<f64>,
    pub coset_trace: Vec<f64>,
    pub metric: Option<InvariantMetric>,
    pub dimension: Option<DimensionReport>,
    pub config: DiscoveryConfig,
}

/// Unique coset records for the given bank indices.
pub fn summarize(bank: &CosetBank, unique: &[usize]) -> Result<Vec<CosetSummary>> {
    unique
        .iter()
        .map(|&i| {
            Ok(CosetSummary {
                index: i,
                matrix: bank.candidates[i].clone(),
                det: linalg::det(&bank.candidates[i])?,
                loss: bank.losses[i],
            })
        })
        .collect()
}

/// Runs every stage on an already assembled problem; predictors are trained in place.
pub fn discover(problem: &Problem, predictors: &mut [Predictor], cfg: &DiscoveryConfig, with_metric: bool) -> Result<DiscoveryResult> {
    cfg.validate()?;
    let report = if cfg.interleave {
        // Tandem mode trains during generator discovery; record the starting fit only.
        let losses = (0..predictors.len())
            .map(|c| dataset_loss(problem, &predictors[c], c, cfg.loss))
            .collect::<Result<Vec<_>>>()?;
        TrainReport {
            traces: vec![Vec::new(); predictors.len()],
            final_loss: losses,
        }
    } else {
        train_predictors(problem, predictors, cfg, &mut stage_rng(cfg.seed, Stage::Predictors))
            .map_err(|e| e.in_stage(Stage::Predictors.name()))?
    };
    let gens = discover_generators(problem, predictors, cfg, &mut stage_rng(cfg.seed, Stage::Generators))
        .map_err(|e| e.in_stage(Stage::Generators.name()))?;
    let cos = discover_cosets(problem, predictors, cfg, &mut stage_rng(cfg.seed, Stage::Cosets))
        .map_err(|e| e.in_stage(Stage::Cosets.name()))?;
    let unique = filter_duplicate_cosets(&cos.bank, &gens.basis, cfg.top_q, cfg.epsilon)
        .map_err(|e| e.in_stage("filter-cosets"))?;
    let metric = if with_metric && gens.basis.k() > 0 {
        Some(invariant_metric(&gens.basis)?)
    } else {
        None
    };
    Ok(DiscoveryResult {
        cosets: summarize(&cos.bank, &unique)?,
        basis: gens.basis,
        bank: cos.bank,
        predictor_losses: report.final_loss,
        predictor_traces: report.traces,
        generator_trace: gens.trace,
        coset_trace: cos.trace,
        metric,
        dimension: None,
        config: cfg.clone(),
    })
}

/// Checks the invariants every reported result must satisfy.
pub fn check_result(result: &DiscoveryResult) -> Result<()> {
    let cfg = &result.config;
    for c in &result.cosets {
        if cfg.normalize_cosets && (c.det.abs() - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!("coset {} has |det| {}", c.index, c.det.abs())));
        }
    }
    for (i, a) in result.cosets.iter().enumerate() {
        for b in &result.cosets[i + 1..] {
            let rel = a.matrix.matmul(&linalg::inverse(&b.matrix)?)?;
            let d = crate::lie::component_distance(&rel, &result.basis)?;
            if d <= cfg.epsilon {
                return Err(Error::Numerical(format!(
                    "cosets {} and {} are duplicates (distance {d})",
                    a.index, b.index
                )));
            }
        }
    }
    Ok(())
}
