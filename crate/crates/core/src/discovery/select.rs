//! Choosing the number of generators from repeated runs.

use serde::{Deserialize, Serialize};

use crate::discovery::equivariance::Problem;
use crate::discovery::generators::discover_generators;
use crate::discovery::{stage_rng, DiscoveryConfig, Stage};
use crate::error::{Error, Result};
use crate::lie::{subspace_angle, LieBasis};
use crate::tasks::Predictor;

/// Largest principal angle (degrees) allowed between runs for a dimension to count as stable.
pub const CONSISTENCY_DEG: f64 = 15.0;
/// A generator weaker than this fraction of the strongest counts as collapsed.
pub const WEAK_RATIO: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionRow {
    pub k: usize,
    /// Worst pairwise largest principal angle across runs, in degrees.
    pub consistency_deg: f64,
    /// `min_i |B_i| / max_i |B_i|` per run.
    pub weakest_ratio: Vec<f64>,
    pub bases: Vec<LieBasis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub rows: Vec<DimensionRow>,
    /// Smallest `k` whose runs agree.
    pub consistent_k: Option<usize>,
    /// First `k` past `consistent_k` where every run has a collapsed generator.
    pub collapse_k: Option<usize>,
    pub recommended: Option<usize>,
    pub note: String,
}

fn weakest_ratio(b: &LieBasis) -> f64 {
    let norms = b.norms();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Runs generator discovery for `k = 1..=k_max`, once per seed, and applies the two-stage rule.
///
/// Stage one takes the smallest `k` whose runs span the same subspace. Stage two keeps
/// adding generators from there and stops one short of the first `k` where the weakest
/// generator collapses in every run.
pub fn select_basis_dimension(problem: &Problem, predictors: &mut [Predictor], k_max: usize, seeds: &[u64], cfg: &DiscoveryConfig) -> Result<DimensionReport> {
    if k_max == 0 || seeds.len() < 2 {
        return Err(Error::Config(format!(
            "dimension selection needs k_max >= 1 and at least 2 runs, got {k_max} and {}",
            seeds.len()
        )));
    }
    let mut rows = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut bases = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = DiscoveryConfig {
                k,
                seed,
                ..cfg.clone()
            };
            let mut rng = stage_rng(seed, Stage::Generators);
            bases.push(discover_generators(problem, predictors, &run, &mut rng)?.basis);
        }
        let mut worst: f64 = 0.0;
        for i in 0..bases.len() {
            for j in i + 1..bases.len() {
                worst = worst.max(subspace_angle(&bases[i], &bases[j]));
            }
        }
        log::info!("k = {k}: run agreement {worst:.2} deg");
        rows.push(DimensionRow {
            k,
            consistency_deg: worst,
            weakest_ratio: bases.iter().map(weakest_ratio).collect(),
            bases,
        });
    }
    Ok(recommend(rows))
}

pub(crate) fn recommend(rows: Vec<DimensionRow>) -> DimensionReport {
    let consistent_k = rows.iter().find(|r| r.consistency_deg <= CONSISTENCY_DEG).map(|r| r.k);
    let Some(kc) = consistent_k else {
        return DimensionReport {
            rows,
            consistent_k: None,
            collapse_k: None,
            recommended: None,
            note: "no stable dimension up to k_max".into(),
        };
    };
    let collapse_k = rows
        .iter()
        .filter(|r| r.k > kc)
        .find(|r| r.weakest_ratio.iter().all(|&v| v < WEAK_RATIO))
        .map(|r| r.k);
    let recommended = collapse_k.map_or(kc, |k| k - 1);
    let note = match collapse_k {
        Some(k) => format!("runs agree from k = {kc}; a generator collapses at k = {k}"),
        None => format!("runs agree from k = {kc}; no collapse observed up to k_max"),
    };
    DimensionReport {
        rows,
        consistent_k,
        collapse_k,
        recommended: Some(recommended),
        note,
    }
}
