use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tasks::{sample_rng, VectorDataset};
use crate::tensor::Tensor;

/// Smallest `|x|` accepted by the arctan task.
pub const ARCTAN_GUARD: f64 = 0.05;

fn build(n: usize, m: usize, seed: u64, mut draw: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, f64)) -> Result<VectorDataset> {
    let mut xs = Vec::with_capacity(n * m);
    let mut ys = Vec::with_capacity(n);
    for s in 0..n {
        let mut rng = sample_rng(seed, s as u64);
        let (x, y) = draw(&mut rng);
        xs.extend(x);
        ys.push(y);
    }
    VectorDataset::new(Tensor::new(vec![n, m], xs)?, Tensor::new(vec![n], ys)?)
}

/// `f(x, y) = |x| + |y|` on `[-range, range]^2`.
pub fn gen_l1_dataset(n: usize, range: f64, seed: u64) -> Result<VectorDataset> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::Config(format!("l1 sampling range must be positive, got {range}")));
    }
    build(n, 2, seed, |rng| {
        let x = rng.random_range(-range..=range);
        let y = rng.random_range(-range..=range);
        (vec![x, y], x.abs() + y.abs())
    })
}

/// `f(x, y) = arctan((y + 0.1) / x)` on `[-1, 1]^2`, resampling `|x| < 0.05`.
pub fn gen_arctan_dataset(n: usize, seed: u64) -> Result<VectorDataset> {
    build(n, 2, seed, |rng| {
        let x = loop {
            let x: f64 = rng.random_range(-1.0..=1.0);
            if x.abs() >= ARCTAN_GUARD {
                break x;
            }
        };
        let y = rng.random_range(-1.0..=1.0);
        (vec![x, y], ((y + 0.1) / x).atan())
    })
}

/// `diag(-1, 1, ..., 1)`.
pub fn minkowski(m: usize) -> Tensor {
    let mut d = vec![1.0; m];
    d[0] = -1.0;
    Tensor::diag(&d)
}

/// Normal inputs in `R^m` labelled by `x^T diag(-1, 1, ..., 1) x`.
pub fn gen_quadratic_invariant_dataset(n: usize, m: usize, seed: u64) -> Result<VectorDataset> {
    if m < 2 {
        return Err(Error::Config("quadratic task needs m >= 2".into()));
    }
    build(n, m, seed, |rng| {
        let x: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let y = x.iter().enumerate().map(|(i, v)| if i == 0 { -v * v } else { v * v }).sum();
        (x, y)
    })
}
