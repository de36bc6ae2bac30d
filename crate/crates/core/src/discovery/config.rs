use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// Overlap of absolute-valued generators.
    Sbr,
    /// Plain pairwise cosine similarity.
    Cosine,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Mae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    /// Number of generators.
    pub k: usize,
    /// Coset candidates.
    pub n_cosets: usize,
    /// Candidates kept for duplicate filtering.
    pub top_q: usize,
    /// Duplicate threshold on the identity-component distance.
    pub epsilon: f64,
    pub reg: RegKind,
    pub gamma: f64,
    pub growth_factor: f64,
    pub growth_limit: f64,
    pub normalize_cosets: bool,
    /// Compare full zero-padded patches instead of masking invalid pixels.
    pub strict_padding: bool,
    pub loss: LossKind,
    pub basis_init_std: f64,
    pub coset_init_std: f64,
    pub predictor_epochs: usize,
    pub predictor_batch: usize,
    pub predictor_lr: f64,
    pub generator_steps: usize,
    pub generator_batch: usize,
    pub generator_lr: f64,
    pub coset_steps: usize,
    pub coset_batch: usize,
    pub coset_lr: f64,
    /// Samples in the fixed batch used to rank coset candidates.
    pub holdout: usize,
    /// Train predictors alongside generator discovery instead of before it.
    pub interleave: bool,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            k: 1,
            n_cosets: 16,
            top_q: 8,
            epsilon: 0.3,
            reg: RegKind::Sbr,
            gamma: 0.1,
            growth_factor: 0.1,
            growth_limit: 1.0,
            normalize_cosets: true,
            strict_padding: false,
            loss: LossKind::Mse,
            basis_init_std: 0.1,
            coset_init_std: 1.0,
            predictor_epochs: 50,
            predictor_batch: 32,
            predictor_lr: 1e-3,
            generator_steps: 500,
            generator_batch: 32,
            generator_lr: 1e-3,
            coset_steps: 500,
            coset_batch: 32,
            coset_lr: 1e-3,
            holdout: 256,
            interleave: false,
            seed: 0,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_cosets == 0 || self.top_q == 0 || self.top_q > self.n_cosets {
            return bad(format!(
                "need n_cosets >= top_q >= 1, got n_cosets {} and top_q {}",
                self.n_cosets, self.top_q
            ));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.growth_factor < 0.0 || !(self.growth_limit > 0.0) {
            return bad("growth factor must be >= 0 and growth limit > 0".into());
        }
        for (name, v) in [
            ("predictor_lr", self.predictor_lr),
            ("generator_lr", self.generator_lr),
            ("coset_lr", self.coset_lr),
            ("basis_init_std", self.basis_init_std),
            ("coset_init_std", self.coset_init_std),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("predictor_batch", self.predictor_batch),
            ("generator_batch", self.generator_batch),
            ("coset_batch", self.coset_batch),
            ("holdout", self.holdout),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        DiscoveryConfig::default().validate().unwrap();
    }

    #[test]
    fn invariants_checked() {
        let c = DiscoveryConfig {
            top_q: 20,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DiscoveryConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
