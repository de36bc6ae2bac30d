//! Equivariance losses on chart patches and vector inputs.

use crate::autodiff::{Graph, NodeId};
use crate::discovery::LossKind;
use crate::error::{Error, Result};
use crate::geometry::{self, ActionMode, Atlas};
use crate::linalg;
use crate::tasks::{FieldDataset, Predictor, VectorDataset};
use crate::tensor::Tensor;

/// Pulled-back training pairs of one chart.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartSamples {
    /// `n x d x S x S` at the in-radius.
    pub inputs: Tensor,
    /// `n x d x S' x S'` at the out-radius.
    pub targets: Tensor,
}

/// Everything discovery needs to know about a dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    Field { atlas: Atlas, charts: Vec<ChartSamples> },
    Vector { x: Tensor, y: Tensor, mode: ActionMode },
}

/// Rows `idx` along the leading axis.
pub(crate) fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("shape")
}

impl Problem {
    pub fn from_field(ds: &FieldDataset, atlas: &Atlas) -> Result<Self> {
        atlas.validate(ds.grid())?;
        if ds.is_empty() {
            return Err(Error::Config("field dataset is empty".into()));
        }
        let mut charts = Vec::with_capacity(atlas.charts.len());
        for chart in &atlas.charts {
            let mut ins = Vec::with_capacity(ds.len());
            let mut outs = Vec::with_capacity(ds.len());
            for s in 0..ds.len() {
                ins.push(geometry::pullback(&ds.input(s), chart, chart.in_radius)?);
                outs.push(geometry::pullback(&ds.output(s), chart, chart.out_radius)?);
            }
            charts.push(ChartSamples {
                inputs: Tensor::stack(&ins)?,
                targets: Tensor::stack(&outs)?,
            });
        }
        Ok(Problem::Field {
            atlas: atlas.clone(),
            charts,
        })
    }

    pub fn from_vector(ds: &VectorDataset, mode: ActionMode) -> Result<Self> {
        if mode == ActionMode::FieldWarp {
            return Err(Error::Config("vector data needs a linear action mode".into()));
        }
        if ds.is_empty() {
            return Err(Error::Config("vector dataset is empty".into()));
        }
        if mode == ActionMode::VectorLinearEquivariant && ds.out_dim() != ds.dim() {
            return Err(Error::Config(format!(
                "equivariant action needs labels of width {}, got {}",
                ds.dim(),
                ds.out_dim()
            )));
        }
        let (x, y) = ds.batch(&(0..ds.len()).collect::<Vec<_>>());
        Ok(Problem::Vector { x, y, mode })
    }

    pub fn len(&self) -> usize {
        match self {
            Problem::Field { charts, .. } => charts[0].inputs.shape()[0],
            Problem::Vector { x, .. } => x.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dimension of the acting group's matrices.
    pub fn m(&self) -> usize {
        match self {
            Problem::Field { .. } => 2,
            Problem::Vector { x, .. } => x.shape()[1],
        }
    }

    pub fn mode(&self) -> ActionMode {
        match self {
            Problem::Field { .. } => ActionMode::FieldWarp,
            Problem::Vector { mode, .. } => *mode,
        }
    }

    /// One per chart; vector problems have a single implicit chart.
    pub fn n_charts(&self) -> usize {
        match self {
            Problem::Field { charts, .. } => charts.len(),
            Problem::Vector { .. } => 1,
        }
    }

    pub fn in_shape(&self, c: usize) -> Vec<usize> {
        match self {
            Problem::Field { charts, .. } => charts[c].inputs.shape()[1..].to_vec(),
            Problem::Vector { x, .. } => vec![x.shape()[1]],
        }
    }

    pub fn out_shape(&self, c: usize) -> Vec<usize> {
        match self {
            Problem::Field { charts, .. } => charts[c].targets.shape()[1..].to_vec(),
            Problem::Vector { y, .. } => vec![y.shape()[1]],
        }
    }

    pub fn chart_map(&self, c: usize) -> Option<[[f64; 2]; 2]> {
        match self {
            Problem::Field { atlas, .. } => atlas.charts[c].chart_map,
            Problem::Vector { .. } => None,
        }
    }

    pub(crate) fn inputs(&self, c: usize, idx: &[usize]) -> Tensor {
        match self {
            Problem::Field { charts, .. } => gather(&charts[c].inputs, idx),
            Problem::Vector { x, .. } => gather(x, idx),
        }
    }

    pub(crate) fn targets(&self, c: usize, idx: &[usize]) -> Tensor {
        match self {
            Problem::Field { charts, .. } => gather(&charts[c].targets, idx),
            Problem::Vector { y, .. } => gather(y, idx),
        }
    }
}

/// Output pixels of a side `s` patch whose preimage `g_inv p` lies inside the patch.
///
/// Accepts the same `2 x 2` or `2 x 3` transforms as the sampler.
pub fn valid_mask(g_inv: &Tensor, side: usize) -> Vec<bool> {
    let c = (side as f64 - 1.0) / 2.0;
    let hi = side as f64 - 1.0 + 1e-9;
    let d = g_inv.data();
    let (g, t) = if d.len() == 6 {
        ([d[0], d[1], d[3], d[4]], [d[2], d[5]])
    } else {
        ([d[0], d[1], d[2], d[3]], [0.0, 0.0])
    };
    let mut mask = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let x = j as f64 - c;
            let y = i as f64 - c;
            let col = c + g[0] * x + g[1] * y + t[0];
            let row = c + g[2] * x + g[3] * y + t[1];
            mask.push(row >= -1e-9 && row <= hi && col >= -1e-9 && col <= hi);
        }
    }
    mask
}

/// Per-pixel weights for a batch so the weighted sum is the batch mean of masked means.
///
/// `g_invs` holds one transform per sample, or a single shared one.
pub(crate) fn field_weights(g_invs: &[Tensor], n: usize, d: usize, side: usize, strict: bool) -> Result<Tensor> {
    let px = side * side;
    let mut w = Vec::with_capacity(n * d * px);
    let mut shared: Option<Vec<f64>> = None;
    for s in 0..n {
        if g_invs.len() == 1 {
            if let Some(row) = &shared {
                w.extend_from_slice(row);
                continue;
            }
        }
        let g_inv = &g_invs[if g_invs.len() == 1 { 0 } else { s }];
        let mask = if strict {
            vec![true; px]
        } else {
            valid_mask(g_inv, side)
        };
        let count = mask.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::FullyMasked);
        }
        let v = 1.0 / (count * d * n) as f64;
        let mut row = Vec::with_capacity(d * px);
        for _ in 0..d {
            row.extend(mask.iter().map(|&m| if m { v } else { 0.0 }));
        }
        w.extend_from_slice(&row);
        shared = Some(row);
    }
    Tensor::new(vec![n, d, side, side], w)
}

/// How group elements reach the loss graph.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Action<'a> {
    /// One matrix for the whole batch.
    Shared(NodeId),
    /// One matrix per sample.
    PerSample(&'a [NodeId]),
}

/// Applies `f(sample, matrix)` per sample and restacks along the batch axis.
fn per_sample(g: &mut Graph, t: NodeId, mats: &[NodeId], row_shape: &[usize], mut f: impl FnMut(&mut Graph, NodeId, NodeId) -> NodeId) -> NodeId {
    let mut batched = vec![1];
    batched.extend_from_slice(row_shape);
    let parts: Vec<NodeId> = mats
        .iter()
        .enumerate()
        .map(|(s, &mat)| {
            let row = g.select(t, s);
            let out = f(g, row, mat);
            g.reshape(out, &batched)
        })
        .collect();
    g.concat(&parts, 0)
}

fn error_term(g: &mut Graph, a: NodeId, b: NodeId, loss: LossKind) -> NodeId {
    let diff = g.sub(a, b);
    match loss {
        LossKind::Mse => g.mul(diff, diff),
        LossKind::Mae => g.abs(diff),
    }
}

/// Masked patch loss for one chart, averaged over the batch.
///
/// `x` is the in-radius batch, `phi` the predictor's output on it, `w` the weights from
/// [`field_weights`], and `warp` carries inverse group elements.
#[allow(clippy::too_many_arguments)]
pub(crate) fn field_term(
    g: &mut Graph,
    pred: &Predictor,
    prefix: &str,
    x: NodeId,
    phi: NodeId,
    w: NodeId,
    warp: Action,
    loss: LossKind,
) -> NodeId {
    let (lhs_in, rhs) = match warp {
        Action::Shared(g_inv) => (g.grid_sample(x, g_inv, 0.0), g.grid_sample(phi, g_inv, 0.0)),
        Action::PerSample(g_invs) => {
            let a = per_sample(g, x, g_invs, &pred.in_shape, |g, p, m| g.grid_sample(p, m, 0.0));
            let b = per_sample(g, phi, g_invs, &pred.out_shape, |g, p, m| g.grid_sample(p, m, 0.0));
            (a, b)
        }
    };
    let lhs = pred.graph(g, lhs_in, prefix, false);
    let err = error_term(g, lhs, rhs, loss);
    let weighted = g.mul(err, w);
    g.sum(weighted)
}

/// Vector loss averaged over batch and outputs; `act` carries the group elements themselves.
pub(crate) fn vector_term(
    g: &mut Graph,
    pred: &Predictor,
    prefix: &str,
    mode: ActionMode,
    x: NodeId,
    phi: NodeId,
    act: Action,
    loss: LossKind,
) -> NodeId {
    let apply = |g: &mut Graph, t: NodeId, width: usize| match act {
        Action::Shared(mat) => {
            let mt = g.transpose(mat);
            g.matmul(t, mt)
        }
        Action::PerSample(mats) => per_sample(g, t, mats, &[width], |g, row, m| {
            let r = g.reshape(row, &[1, width]);
            let mt = g.transpose(m);
            g.matmul(r, mt)
        }),
    };
    let gx = apply(g, x, pred.in_shape[0]);
    let lhs = pred.graph(g, gx, prefix, false);
    let rhs = match mode {
        ActionMode::VectorLinearEquivariant => apply(g, phi, pred.out_shape[0]),
        _ => phi,
    };
    let err = error_term(g, lhs, rhs, loss);
    g.mean(err)
}

/// Loss of a single group element `g` on inputs `x`: one field patch `d x S x S`, or vectors `n x m`.
pub fn equivariance_loss(pred: &Predictor, g: &Tensor, x: &Tensor, mode: ActionMode, loss: LossKind, strict_padding: bool) -> Result<f64> {
    geometry::check_invertible(g)?;
    let mut graph = Graph::new();
    let xn = graph.input("x");
    let phin = graph.input("phi");
    match mode {
        ActionMode::FieldWarp => {
            if x.shape() != pred.in_shape.as_slice() {
                return Err(Error::shape(
                    "equivariance_loss",
                    format!("patch {:?} does not match predictor input {:?}", x.shape(), pred.in_shape),
                ));
            }
            let mut batched = vec![1];
            batched.extend_from_slice(x.shape());
            let xb = x.clone().reshape(&batched)?;
            let phi = pred.forward(&xb)?;
            let g_inv = linalg::inverse(g)?;
            let w = field_weights(std::slice::from_ref(&g_inv), 1, pred.out_shape[0], pred.out_shape[1], strict_padding)?;
            let gn = graph.constant(g_inv);
            let wn = graph.constant(w);
            let out = field_term(&mut graph, pred, "", xn, phin, wn, Action::Shared(gn), loss);
            graph.evaluate([("x", xb), ("phi", phi)], out).map(|t| t.item())
        }
        _ => {
            let xb = if x.rank() == 1 {
                x.clone().reshape(&[1, x.len()])?
            } else {
                x.clone()
            };
            let phi = pred.forward(&xb)?;
            let gn = graph.constant(g.clone());
            let out = vector_term(&mut graph, pred, "", mode, xn, phin, Action::Shared(gn), loss);
            graph.evaluate([("x", xb), ("phi", phi)], out).map(|t| t.item())
        }
    }
}
