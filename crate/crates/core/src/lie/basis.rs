use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::matexp;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `k` generators of size `m x m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LieBasis {
    pub m: usize,
    pub matrices: Vec<Tensor>,
}

impl LieBasis {
    pub fn new(m: usize, matrices: Vec<Tensor>) -> Result<Self> {
        for (i, b) in matrices.iter().enumerate() {
            if b.shape() != [m, m] {
                return Err(Error::shape(
                    format!("generator {i}"),
                    format!("expected {m}x{m}, got {:?}", b.shape()),
                ));
            }
            if !b.all_finite() {
                return Err(Error::NonFinite(format!("generator {i}")));
            }
        }
        Ok(Self { m, matrices })
    }

    pub fn empty(m: usize) -> Self {
        Self {
            m,
            matrices: Vec::new(),
        }
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn random(k: usize, m: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let matrices = (0..k)
            .map(|_| Tensor::new(vec![m, m], (0..m * m).map(|_| normal.sample(rng)).collect()).expect("shape"))
            .collect();
        Self { m, matrices }
    }

    pub fn k(&self) -> usize {
        self.matrices.len()
    }

    /// Generators stacked into a `k x m x m` tensor.
    pub fn to_tensor(&self) -> Tensor {
        if self.matrices.is_empty() {
            return Tensor::zeros(&[0, self.m, self.m]);
        }
        Tensor::stack(&self.matrices).expect("uniform shapes")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [k, m, m2] = t.shape() else {
            return Err(Error::shape("basis", format!("expected k x m x m, got {:?}", t.shape())));
        };
        if m != m2 {
            return Err(Error::NotSquare(vec![*m, *m2]));
        }
        Self::new(*m, (0..*k).map(|i| t.select(i)).collect())
    }

    pub fn norms(&self) -> Vec<f64> {
        self.matrices.iter().map(Tensor::norm).collect()
    }

    /// `sum_i eta_i B_i`.
    pub fn combine(&self, eta: &[f64]) -> Result<Tensor> {
        if eta.len() != self.k() {
            return Err(Error::shape(
                "basis combination",
                format!("{} coefficients for {} generators", eta.len(), self.k()),
            ));
        }
        let mut acc = Tensor::zeros(&[self.m, self.m]);
        for (b, e) in self.matrices.iter().zip(eta) {
            acc.add_assign(&b.scale(*e));
        }
        Ok(acc)
    }

    pub fn element(&self, eta: &[f64]) -> Result<Tensor> {
        matexp(&self.combine(eta)?)
    }

    /// `exp(sum_i eta_i B_i)` with `eta ~ N(0, I)`.
    pub fn sample_group_element(&self, rng: &mut impl Rng) -> Result<Tensor> {
        if self.k() == 0 {
            return Err(Error::Config("sampling a group element needs at least one generator".into()));
        }
        let eta: Vec<f64> = (0..self.k()).map(|_| rng.sample(StandardNormal)).collect();
        self.element(&eta)
    }
}

/// Planar rotation generator `[[0, -1], [1, 0]]`.
pub fn rotation_generator() -> Tensor {
    Tensor::from_rows(&[[0.0, -1.0], [1.0, 0.0]])
}

fn unit(m: usize, i: usize, j: usize) -> Tensor {
    let mut t = Tensor::zeros(&[m, m]);
    t.set2(i, j, 1.0);
    t
}

/// Rotation generators of the spatial block in `(t, x, y, z)` coordinates.
pub fn so3_in_lorentz() -> LieBasis {
    let pairs = [(1, 2), (1, 3), (2, 3)];
    let matrices = pairs.iter().map(|&(i, j)| unit(4, i, j).sub(&unit(4, j, i))).collect();
    LieBasis { m: 4, matrices }
}

/// Three rotations and three boosts preserving `diag(-1, 1, 1, 1)`.
pub fn so13_basis() -> LieBasis {
    let mut basis = so3_in_lorentz();
    for i in 1..4 {
        basis.matrices.push(unit(4, 0, i).add(&unit(4, i, 0)));
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::det;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn zero_coefficients_give_identity() {
        let b = LieBasis::new(2, vec![rotation_generator()]).unwrap();
        assert_eq!(b.element(&[0.0]).unwrap(), Tensor::eye(2));
    }

    #[test]
    fn half_turn() {
        let b = LieBasis::new(2, vec![rotation_generator()]).unwrap();
        let g = b.element(&[PI]).unwrap();
        assert!(g.max_abs_diff(&Tensor::diag(&[-1.0, -1.0])) < 1e-14);
    }

    #[test]
    fn rotation_samples_have_unit_det() {
        let b = LieBasis::new(2, vec![rotation_generator()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let g = b.sample_group_element(&mut rng).unwrap();
            assert!((det(&g).unwrap() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn lorentz_generators_preserve_minkowski_form() {
        let eta = Tensor::diag(&[-1.0, 1.0, 1.0, 1.0]);
        for b in &so13_basis().matrices {
            let r = b.transpose().matmul(&eta).unwrap().add(&eta.matmul(b).unwrap());
            assert_eq!(r.max_abs(), 0.0);
        }
    }

    #[test]
    fn tensor_round_trip_and_seeded_init() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let x = LieBasis::random(3, 4, 0.1, &mut a);
        assert_eq!(x, LieBasis::random(3, 4, 0.1, &mut b));
        assert_eq!(LieBasis::from_tensor(&x.to_tensor()).unwrap(), x);
        assert!(LieBasis::empty(2).sample_group_element(&mut a).is_err());
    }
}
