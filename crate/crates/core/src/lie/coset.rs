use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::geometry::MIN_ABS_DET;
use crate::linalg;
use crate::tensor::Tensor;

/// `C / |det C|^(1/m)`; keeps the sign of the determinant.
pub fn normalize_coset(c: &Tensor) -> Result<Tensor> {
    let m = linalg::square_dim(c)?;
    let d = linalg::det(c)?;
    if !d.is_finite() || d.abs() <= MIN_ABS_DET {
        return Err(Error::Singular { det: d });
    }
    Ok(c.scale(d.abs().powf(-1.0 / m as f64)))
}

/// Graph form of [`normalize_coset`].
pub fn normalize_coset_node(g: &mut Graph, c: NodeId, m: usize) -> NodeId {
    let d = g.det(c);
    let a = g.abs(d);
    let s = g.powf(a, -1.0 / m as f64);
    g.mul(c, s)
}

/// Candidate coset representatives with their held-out losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosetBank {
    pub candidates: Vec<Tensor>,
    pub losses: Vec<f64>,
    /// Candidates frozen after hitting the singular guard.
    pub degenerate: Vec<bool>,
}

impl CosetBank {
    pub fn new(candidates: Vec<Tensor>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config("coset bank needs at least one candidate".into()));
        }
        let n = candidates.len();
        Ok(Self {
            candidates,
            losses: vec![0.0; n],
            degenerate: vec![false; n],
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Non-degenerate candidate indices by ascending loss, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| !self.degenerate[i]).collect();
        idx.sort_by(|&a, &b| self.losses[a].total_cmp(&self.losses[b]).then(a.cmp(&b)));
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(normalize_coset(&Tensor::diag(&[2.0, 2.0])).unwrap(), Tensor::eye(2));
        let swap = normalize_coset(&Tensor::from_rows(&[[0.0, 2.0], [2.0, 0.0]])).unwrap();
        assert_eq!(swap, Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        assert_eq!(linalg::det(&swap).unwrap(), -1.0);
        let unit = Tensor::from_rows(&[[2.0, 3.0], [1.0, 2.0]]);
        assert_eq!(normalize_coset(&unit).unwrap(), unit);
    }

    #[test]
    fn singular_is_rejected() {
        let c = Tensor::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(normalize_coset(&c), Err(Error::Singular { .. })));
    }

    #[test]
    fn node_matches_value() {
        let c = Tensor::from_rows(&[[0.3, -1.7, 0.2], [0.9, 0.4, -0.1], [0.0, 0.5, 1.3]]);
        let mut g = Graph::new();
        let n = g.param("C", c.clone());
        let out = normalize_coset_node(&mut g, n, 3);
        let v = g.evaluate([], out).unwrap();
        assert!(v.max_abs_diff(&normalize_coset(&c).unwrap()) < 1e-15);
    }

    #[test]
    fn ranking_skips_degenerate_and_breaks_ties_by_index() {
        let mut bank = CosetBank::new(vec![Tensor::eye(2); 4]).unwrap();
        bank.losses = vec![0.5, 0.1, 0.5, 0.0];
        bank.degenerate[3] = true;
        assert_eq!(bank.ranking(), vec![1, 0, 2]);
    }
}
