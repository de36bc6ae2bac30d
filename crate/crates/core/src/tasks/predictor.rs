//! Chart predictors: the exact heat stencil, MLPs for vector tasks, small CNNs for fields.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorKind {
    /// `n_steps` explicit steps with diffusion number `courant = alpha dt / h^2`.
    HeatOracle { courant: f64, n_steps: usize },
    /// Hidden widths with tanh activations and a linear output layer.
    Mlp { hidden: Vec<usize> },
    /// `layers` same-padded convolutions with relu in between.
    Cnn {
        hidden: usize,
        layers: usize,
        kernel: usize,
    },
}

impl PredictorKind {
    pub fn default_mlp() -> Self {
        PredictorKind::Mlp { hidden: vec![64, 64] }
    }

    pub fn default_cnn() -> Self {
        PredictorKind::Cnn {
            hidden: 16,
            layers: 4,
            kernel: 3,
        }
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self, PredictorKind::HeatOracle { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub kind: PredictorKind,
    pub chart: usize,
    /// `[d, S, S]` for fields or `[m]` for vectors, without the batch axis.
    pub in_shape: Vec<usize>,
    /// `[d, S', S']` for fields, `[1]` or `[m]` for vectors.
    pub out_shape: Vec<usize>,
    pub params: BTreeMap<String, Tensor>,
    /// Stencil steps actually applied by a heat oracle.
    pub steps_used: usize,
    /// Chart map the oracle's stencil is expressed in, if any.
    #[serde(default)]
    pub chart_map: Option<[[f64; 2]; 2]>,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("shape")
}

fn field_dims(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [d, s, s2] if s == s2 && s % 2 == 1 => Ok((*d, *s)),
        _ => Err(Error::Config(format!("{what} shape {shape:?} must be d x S x S with odd S"))),
    }
}

/// Builds a predictor with seeded initial parameters.
pub fn build_predictor(kind: &PredictorKind, in_shape: &[usize], out_shape: &[usize], chart: usize, seed: u64) -> Result<Predictor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    let mut steps_used = 0;
    match kind {
        PredictorKind::HeatOracle { courant, n_steps } => {
            if !(0.0..=0.25).contains(courant) {
                return Err(Error::Unstable(*courant));
            }
            let (d, s_in) = field_dims(in_shape, "oracle input")?;
            let (d_out, s_out) = field_dims(out_shape, "oracle output")?;
            if d != d_out || s_out > s_in {
                return Err(Error::Config(format!(
                    "oracle cannot map {in_shape:?} to {out_shape:?}"
                )));
            }
            let room = (s_in - s_out) / 2;
            steps_used = (*n_steps).min(room);
            if steps_used < *n_steps {
                log::warn!(
                    "heat oracle on chart {chart}: {n_steps} steps exceed the context margin {room}; using {steps_used}"
                );
            }
        }
        PredictorKind::Mlp { hidden } => {
            let [m] = in_shape else {
                return Err(Error::Config(format!("MLP input shape {in_shape:?} must be [m]")));
            };
            let [o] = out_shape else {
                return Err(Error::Config(format!("MLP output shape {out_shape:?} must be [o]")));
            };
            let mut widths = vec![*m];
            widths.extend(hidden);
            widths.push(*o);
            for (l, w) in widths.windows(2).enumerate() {
                let bound = 1.0 / (w[0] as f64).sqrt();
                params.insert(format!("w{l}"), uniform(&[w[0], w[1]], bound, &mut rng));
                params.insert(format!("b{l}"), uniform(&[w[1]], bound, &mut rng));
            }
        }
        PredictorKind::Cnn {
            hidden,
            layers,
            kernel,
        } => {
            let (d, s_in) = field_dims(in_shape, "CNN input")?;
            let (d_out, s_out) = field_dims(out_shape, "CNN output")?;
            if d != d_out || s_out > s_in || *layers == 0 || kernel % 2 == 0 {
                return Err(Error::Config(format!(
                    "CNN with {layers} layers of odd kernel {kernel} cannot map {in_shape:?} to {out_shape:?}"
                )));
            }
            for l in 0..*layers {
                let cin = if l == 0 { d } else { *hidden };
                let cout = if l + 1 == *layers { d } else { *hidden };
                let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
                params.insert(format!("w{l}"), uniform(&[cout, cin, *kernel, *kernel], bound, &mut rng));
                params.insert(format!("b{l}"), uniform(&[cout], bound, &mut rng));
            }
        }
    }
    Ok(Predictor {
        kind: kind.clone(),
        chart,
        in_shape: in_shape.to_vec(),
        out_shape: out_shape.to_vec(),
        params,
        steps_used,
        chart_map: None,
    })
}

/// One explicit step of `u_t = div(D grad u)` as a 3x3 kernel, `D = A A^T` in (x, y) order.
///
/// Without a map this is the usual 5-point stencil.
fn diffusion_kernel(r: f64, map: Option<[[f64; 2]; 2]>) -> [f64; 9] {
    let a = map.unwrap_or([[1.0, 0.0], [0.0, 1.0]]);
    let dxx = a[0][0] * a[0][0] + a[0][1] * a[0][1];
    let dyy = a[1][0] * a[1][0] + a[1][1] * a[1][1];
    let dxy = a[0][0] * a[1][0] + a[0][1] * a[1][1];
    // rows index y, columns index x
    let c = dxy / 2.0;
    [
        r * c,
        r * dyy,
        -r * c,
        r * dxx,
        1.0 - 2.0 * r * (dxx + dyy),
        r * dxx,
        -r * c,
        r * dyy,
        r * c,
    ]
}

impl Predictor {
    /// Expresses an oracle's dynamics in a chart with the given map; trained kinds ignore it.
    pub fn with_chart_map(mut self, map: Option<[[f64; 2]; 2]>) -> Self {
        self.chart_map = map;
        self
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Appends the predictor to `g`, reading a batched input from `input`.
    ///
    /// Parameters are registered as `{prefix}{name}`; they receive gradients only if `trainable`.
    /// Appending the same predictor twice under one prefix shares the parameters.
    pub fn graph(&self, g: &mut Graph, input: NodeId, prefix: &str, trainable: bool) -> NodeId {
        let p = |g: &mut Graph, name: &str| {
            let full = format!("{prefix}{name}");
            if let Some(id) = g.param_node(&full) {
                return id;
            }
            let v = self.params[name].clone();
            if trainable {
                g.param(&full, v)
            } else {
                g.frozen_param(&full, v)
            }
        };
        match &self.kind {
            PredictorKind::HeatOracle { courant, .. } => {
                let d = self.in_shape[0];
                let stencil = diffusion_kernel(*courant, self.chart_map);
                let mut k = Tensor::zeros(&[d, d, 3, 3]);
                for c in 0..d {
                    let base = (c * d + c) * 9;
                    k.data_mut()[base..base + 9].copy_from_slice(&stencil);
                }
                let kernel = g.constant(k);
                let mut h = input;
                for _ in 0..self.steps_used {
                    h = g.conv2d(h, kernel, None, 0);
                }
                let s = self.in_shape[1] - 2 * self.steps_used;
                let so = self.out_shape[1];
                let off = (s - so) / 2;
                g.crop2d(h, off, off, so, so)
            }
            PredictorKind::Mlp { hidden } => {
                let mut h = input;
                for l in 0..=hidden.len() {
                    let w = p(g, &format!("w{l}"));
                    let b = p(g, &format!("b{l}"));
                    let z = g.matmul(h, w);
                    h = g.add(z, b);
                    if l < hidden.len() {
                        h = g.tanh(h);
                    }
                }
                h
            }
            PredictorKind::Cnn { layers, kernel, .. } => {
                let mut h = input;
                for l in 0..*layers {
                    let w = p(g, &format!("w{l}"));
                    let b = p(g, &format!("b{l}"));
                    h = g.conv2d(h, w, Some(b), kernel / 2);
                    if l + 1 < *layers {
                        h = g.relu(h);
                    }
                }
                let s = self.in_shape[1];
                let so = self.out_shape[1];
                let off = (s - so) / 2;
                g.crop2d(h, off, off, so, so)
            }
        }
    }

    /// Evaluates a batch: `n x d x S x S` fields or `n x m` vectors.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input("x");
        let out = self.graph(&mut g, x, "", false);
        g.evaluate([("x", input.clone())], out)
    }

    /// Copies updated values for `{prefix}{name}` parameters out of a graph.
    pub fn sync_from(&mut self, g: &Graph, prefix: &str) {
        for (name, value) in self.params.iter_mut() {
            if let Some(v) = g.param_value(&format!("{prefix}{name}")) {
                *value = v.clone();
            }
        }
    }
}
