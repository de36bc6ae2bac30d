//! Basis regularizers, as plain values and as graph nodes over a `k x m x m` basis node.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::lie::LieBasis;
use crate::tensor::Tensor;

fn checked_norms(basis: &LieBasis) -> Result<Vec<f64>> {
    let norms = basis.norms();
    match norms.iter().position(|&n| n == 0.0) {
        Some(i) => Err(Error::ZeroNormGenerator(i)),
        None => Ok(norms),
    }
}

fn pairwise(basis: &LieBasis, gamma: f64, absolute: bool) -> Result<f64> {
    if basis.k() <= 1 {
        return Ok(0.0);
    }
    let norms = checked_norms(basis)?;
    let vecs: Vec<Tensor> = if absolute {
        basis.matrices.iter().map(|b| b.map(f64::abs)).collect()
    } else {
        basis.matrices.clone()
    };
    let mut total = 0.0;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            total += vecs[i].dot(&vecs[j]) / (norms[i] * norms[j]);
        }
    }
    Ok(gamma * total)
}

/// `gamma * sum_{i<j} <|B_i|, |B_j|> / (|B_i| |B_j|)`.
pub fn sbr_loss(basis: &LieBasis, gamma: f64) -> Result<f64> {
    pairwise(basis, gamma, true)
}

/// Pairwise cosine similarity without absolute values.
pub fn cosine_reg(basis: &LieBasis, gamma: f64) -> Result<f64> {
    pairwise(basis, gamma, false)
}

/// `-iota * sum_i min(|B_i|, beta)`.
pub fn growth_reg(basis: &LieBasis, iota: f64, beta: f64) -> f64 {
    -iota * basis.norms().iter().map(|n| n.min(beta)).sum::<f64>()
}

fn pairwise_node(g: &mut Graph, basis: NodeId, k: usize, gamma: f64, absolute: bool) -> NodeId {
    if k <= 1 {
        return g.constant(Tensor::scalar(0.0));
    }
    let src = if absolute { g.abs(basis) } else { basis };
    let raw: Vec<NodeId> = (0..k).map(|i| g.select(basis, i)).collect();
    let vecs: Vec<NodeId> = (0..k).map(|i| g.select(src, i)).collect();
    let norms: Vec<NodeId> = raw.iter().map(|&b| g.norm(b)).collect();
    let mut terms = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let prod = g.mul(vecs[i], vecs[j]);
            let num = g.sum(prod);
            let den = g.mul(norms[i], norms[j]);
            terms.push(g.div(num, den));
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    g.scale(total, gamma)
}

pub fn sbr_node(g: &mut Graph, basis: NodeId, k: usize, gamma: f64) -> NodeId {
    pairwise_node(g, basis, k, gamma, true)
}

pub fn cosine_node(g: &mut Graph, basis: NodeId, k: usize, gamma: f64) -> NodeId {
    pairwise_node(g, basis, k, gamma, false)
}

pub fn growth_node(g: &mut Graph, basis: NodeId, k: usize, iota: f64, beta: f64) -> NodeId {
    if k == 0 {
        return g.constant(Tensor::scalar(0.0));
    }
    let mut total = None;
    for i in 0..k {
        let b = g.select(basis, i);
        let n = g.norm(b);
        let c = g.min_scalar(n, beta);
        total = Some(match total {
            None => c,
            Some(t) => g.add(t, c),
        });
    }
    g.scale(total.expect("k > 0"), -iota)
}
