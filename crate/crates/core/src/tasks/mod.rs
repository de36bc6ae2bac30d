//! Synthetic datasets and the predictors trained on them.

mod heat;
mod predictor;
mod vector;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::FeatureField;
use crate::tensor::Tensor;

pub use heat::{evolve, gen_heat_dataset, heat_step, HeatConfig};
pub use predictor::{build_predictor, Predictor, PredictorKind};
pub use vector::{gen_arctan_dataset, gen_l1_dataset, gen_quadratic_invariant_dataset, minkowski};

/// Independent stream per sample so generation order never changes the data.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Paired input and output fields, `n x d x H x W` each.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDataset {
    pub x: Tensor,
    pub y: Tensor,
}

impl FieldDataset {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if x.rank() != 4 || x.shape() != y.shape() {
            return Err(Error::shape(
                "field dataset",
                format!("X {:?} and Y {:?} must both be n x d x H x W", x.shape(), y.shape()),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.x.shape()[2], self.x.shape()[3])
    }

    pub fn input(&self, i: usize) -> FeatureField {
        FeatureField::new(self.x.select(i)).expect("validated at construction")
    }

    pub fn output(&self, i: usize) -> FeatureField {
        FeatureField::new(self.y.select(i)).expect("validated at construction")
    }
}

/// Inputs `n x m` with scalar labels `n` or vector labels `n x o`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorDataset {
    pub x: Tensor,
    pub y: Tensor,
}

impl VectorDataset {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        match (x.shape(), y.shape()) {
            ([n, _], [ny]) | ([n, _], [ny, _]) if n == ny => Ok(Self { x, y }),
            (a, b) => Err(Error::shape(
                "vector dataset",
                format!("X {a:?} must be n x m and Y {b:?} must have n rows"),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.shape()[1]
    }

    /// Label width: 1 for scalar labels.
    pub fn out_dim(&self) -> usize {
        self.y.shape().get(1).copied().unwrap_or(1)
    }

    /// Rows `idx` of X and Y, with Y always `len x o`.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let m = self.dim();
        let o = self.out_dim();
        let mut xb = Vec::with_capacity(idx.len() * m);
        let mut yb = Vec::with_capacity(idx.len() * o);
        for &i in idx {
            xb.extend_from_slice(&self.x.data()[i * m..(i + 1) * m]);
            yb.extend_from_slice(&self.y.data()[i * o..(i + 1) * o]);
        }
        (
            Tensor::new(vec![idx.len(), m], xb).expect("shape"),
            Tensor::new(vec![idx.len(), o], yb).expect("shape"),
        )
    }
}
