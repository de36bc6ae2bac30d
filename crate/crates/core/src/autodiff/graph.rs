//! Computation graph with lazily evaluated nodes and reverse-mode gradients.
//!
//! Nodes are appended in construction order, so every node's operands precede
//! it and index order is a valid evaluation order. A graph is built once and
//! evaluated many times with fresh input bindings; parameter values can be
//! swapped between evaluations with [`Graph::set_param`].

use std::collections::{BTreeMap, HashMap};

use crate::autodiff::conv::{conv2d_backward, conv2d_forward};
use crate::autodiff::expm::{matexp_backward, matexp_forward, MatExpCache};
use crate::autodiff::sample::{grid_sample_backward, grid_sample_forward};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Param { name: String, trainable: bool },
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Powf(NodeId, f64),
    MinScalar(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Abs(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        pad: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    Norm(NodeId),
    Concat(Vec<NodeId>, usize),
    Reshape(NodeId, Vec<usize>),
    Select(NodeId, usize),
    Crop2d {
        input: NodeId,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    MatExp(NodeId),
    GridSample {
        patch: NodeId,
        g_inv: NodeId,
        fill: f64,
    },
    Inverse(NodeId),
    Det(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param { .. } => "param",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Powf(..) => "powf",
            Op::MinScalar(..) => "min_scalar",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Abs(_) => "abs",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Conv2d { .. } => "conv2d",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Norm(_) => "norm",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
            Op::Select(..) => "select",
            Op::Crop2d { .. } => "crop2d",
            Op::MatExp(_) => "matexp",
            Op::GridSample { .. } => "grid_sample",
            Op::Inverse(_) => "inverse",
            Op::Det(_) => "det",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param { .. } | Op::Const => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Powf(a, _)
            | Op::MinScalar(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Abs(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Norm(a)
            | Op::Reshape(a, _)
            | Op::Select(a, _)
            | Op::MatExp(a)
            | Op::Inverse(a)
            | Op::Det(a) => vec![*a],
            Op::Crop2d { input, .. } => vec![*input],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Concat(items, _) => items.clone(),
            Op::GridSample { patch, g_inv, .. } => vec![*patch, *g_inv],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    label: Option<String>,
    value: Option<Tensor>,
    matexp: Option<MatExpCache>,
    needs_grad: bool,
}

/// Gradients of a scalar output with respect to trainable parameters, by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    /// Adds `other` into `self`, name by name.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.grads {
            match self.grads.get_mut(name) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.grads.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: HashMap<String, NodeId>,
    params: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            label: None,
            value: None,
            matexp: None,
            needs_grad: false,
        });
        id
    }

    /// Attaches a human-readable name used in error messages.
    pub fn label(&mut self, id: NodeId, label: impl Into<String>) -> NodeId {
        self.nodes[id.0].label = Some(label.into());
        id
    }

    fn describe(&self, id: NodeId) -> String {
        let n = &self.nodes[id.0];
        match (&n.label, &n.op) {
            (Some(l), _) => format!("node #{} `{}` ({})", id.0, l, n.op.name()),
            (None, Op::Input(name)) => format!("node #{} input `{}`", id.0, name),
            (None, Op::Param { name, .. }) => format!("node #{} param `{}`", id.0, name),
            (None, op) => format!("node #{} ({})", id.0, op.name()),
        }
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(id) = self.inputs.get(name) {
            return *id;
        }
        let id = self.push(Op::Input(name.to_string()));
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// A trainable leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.leaf_param(name, value, true)
    }

    /// A named leaf whose value can be replaced but which receives no gradient.
    pub fn frozen_param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.leaf_param(name, value, false)
    }

    fn leaf_param(&mut self, name: &str, value: Tensor, trainable: bool) -> NodeId {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        let id = self.push(Op::Param {
            name: name.to_string(),
            trainable,
        });
        self.nodes[id.0].value = Some(value);
        self.nodes[id.0].needs_grad = trainable;
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let id = self.push(Op::Const);
        self.nodes[id.0].value = Some(value);
        id
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = *self
            .params
            .get(name)
            .ok_or_else(|| Error::UnknownInput(name.to_string()))?;
        let node = &mut self.nodes[id.0];
        if let Some(old) = &node.value {
            if old.shape() != value.shape() {
                return Err(Error::shape(
                    format!("param `{name}`"),
                    format!("new value {:?} vs {:?}", value.shape(), old.shape()),
                ));
            }
        }
        node.value = Some(value);
        Ok(())
    }

    /// Node of an already registered parameter.
    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    pub fn param_value(&self, name: &str) -> Option<&Tensor> {
        self.params
            .get(name)
            .and_then(|id| self.nodes[id.0].value.as_ref())
    }

    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].value.as_ref()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }
    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }
    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a))
    }
    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::Scale(a, s))
    }
    pub fn powf(&mut self, a: NodeId, p: f64) -> NodeId {
        self.push(Op::Powf(a, p))
    }
    /// `min(a, limit)` elementwise; the gradient is zero where `a >= limit`.
    pub fn min_scalar(&mut self, a: NodeId, limit: f64) -> NodeId {
        self.push(Op::MinScalar(a, limit))
    }
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Abs(a))
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a))
    }
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>, pad: usize) -> NodeId {
        self.push(Op::Conv2d {
            input,
            weight,
            bias,
            pad,
        })
    }
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }
    /// Euclidean norm of all entries.
    pub fn norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Norm(a))
    }
    pub fn concat(&mut self, items: &[NodeId], axis: usize) -> NodeId {
        self.push(Op::Concat(items.to_vec(), axis))
    }
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(a, shape.to_vec()))
    }
    /// Index along the leading axis.
    pub fn select(&mut self, a: NodeId, index: usize) -> NodeId {
        self.push(Op::Select(a, index))
    }
    /// Window of the two trailing axes.
    pub fn crop2d(&mut self, input: NodeId, top: usize, left: usize, height: usize, width: usize) -> NodeId {
        self.push(Op::Crop2d {
            input,
            top,
            left,
            height,
            width,
        })
    }
    pub fn matexp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MatExp(a))
    }
    pub fn grid_sample(&mut self, patch: NodeId, g_inv: NodeId, fill: f64) -> NodeId {
        self.push(Op::GridSample { patch, g_inv, fill })
    }
    pub fn inverse(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Inverse(a))
    }
    pub fn det(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Det(a))
    }

    /// Binds the named inputs and computes every node the output depends on.
    ///
    /// Inputs bound in an earlier call keep their value until rebound.
    pub fn evaluate<'a, I>(&mut self, inputs: I, output: NodeId) -> Result<Tensor>
    where
        I: IntoIterator<Item = (&'a str, Tensor)>,
    {
        for (name, value) in inputs {
            let id = *self
                .inputs
                .get(name)
                .ok_or_else(|| Error::UnknownInput(name.to_string()))?;
            self.nodes[id.0].value = Some(value);
        }
        let needed = self.ancestors(output);
        for (idx, _) in needed.iter().enumerate().take(output.0 + 1).filter(|(_, n)| **n) {
            self.forward_node(NodeId(idx))?;
        }
        Ok(self.nodes[output.0].value.clone().expect("evaluated"))
    }

    fn ancestors(&self, output: NodeId) -> Vec<bool> {
        let mut needed = vec![false; output.0 + 1];
        needed[output.0] = true;
        for idx in (0..=output.0).rev() {
            if needed[idx] {
                for op in self.nodes[idx].op.operands() {
                    needed[op.0] = true;
                }
            }
        }
        needed
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.as_ref().expect("operand evaluated first")
    }

    fn forward_node(&mut self, id: NodeId) -> Result<()> {
        let op = self.nodes[id.0].op.clone();
        let mut matexp_cache = None;
        let value = match &op {
            Op::Input(name) => {
                if self.nodes[id.0].value.is_none() {
                    return Err(Error::UnboundInput(name.clone()));
                }
                return Ok(());
            }
            Op::Param { .. } | Op::Const => return Ok(()),
            Op::Add(a, b) => self.broadcast(id, *a, *b, |x, y| x + y)?,
            Op::Sub(a, b) => self.broadcast(id, *a, *b, |x, y| x - y)?,
            Op::Mul(a, b) => self.broadcast(id, *a, *b, |x, y| x * y)?,
            Op::Div(a, b) => self.broadcast(id, *a, *b, |x, y| x / y)?,
            Op::Neg(a) => self.val(*a).map(|x| -x),
            Op::Scale(a, s) => self.val(*a).scale(*s),
            Op::Powf(a, p) => self.val(*a).map(|x| x.powf(*p)),
            Op::MinScalar(a, l) => self.val(*a).map(|x| x.min(*l)),
            Op::Relu(a) => self.val(*a).map(|x| x.max(0.0)),
            Op::Tanh(a) => self.val(*a).map(f64::tanh),
            Op::Abs(a) => self.val(*a).map(f64::abs),
            Op::MatMul(a, b) => self
                .val(*a)
                .matmul(self.val(*b))
                .map_err(|e| self.rename(id, e))?,
            Op::Transpose(a) => {
                let v = self.val(*a);
                if v.rank() != 2 {
                    return Err(Error::shape(self.describe(id), format!("rank {} input", v.rank())));
                }
                v.transpose()
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            } => conv2d_forward(
                self.val(*input),
                self.val(*weight),
                bias.map(|b| self.val(b)),
                *pad,
            )
            .map_err(|e| self.rename(id, e))?,
            Op::Sum(a) => Tensor::scalar(self.val(*a).sum()),
            Op::Mean(a) => {
                let v = self.val(*a);
                if v.is_empty() {
                    return Err(Error::shape(self.describe(id), "mean of empty tensor"));
                }
                Tensor::scalar(v.sum() / v.len() as f64)
            }
            Op::Norm(a) => Tensor::scalar(self.val(*a).norm()),
            Op::Concat(items, axis) => self.concat_forward(id, items, *axis)?,
            Op::Reshape(a, shape) => self
                .val(*a)
                .clone()
                .reshape(shape)
                .map_err(|e| self.rename(id, e))?,
            Op::Select(a, index) => {
                let v = self.val(*a);
                if v.rank() == 0 || *index >= v.shape()[0] {
                    return Err(Error::shape(
                        self.describe(id),
                        format!("index {} out of range for {:?}", index, v.shape()),
                    ));
                }
                v.select(*index)
            }
            Op::Crop2d {
                input,
                top,
                left,
                height,
                width,
            } => self.crop_forward(id, *input, *top, *left, *height, *width)?,
            Op::MatExp(a) => {
                let (out, cache) = matexp_forward(self.val(*a)).map_err(|e| self.rename(id, e))?;
                matexp_cache = Some(cache);
                out
            }
            Op::GridSample { patch, g_inv, fill } => {
                grid_sample_forward(self.val(*patch), self.val(*g_inv), *fill)
                    .map_err(|e| self.rename(id, e))?
            }
            Op::Inverse(a) => linalg::inverse(self.val(*a)).map_err(|e| self.rename(id, e))?,
            Op::Det(a) => Tensor::scalar(linalg::det(self.val(*a)).map_err(|e| self.rename(id, e))?),
        };
        let needs_grad = op.operands().iter().any(|o| self.nodes[o.0].needs_grad);
        let node = &mut self.nodes[id.0];
        node.value = Some(value);
        node.matexp = matexp_cache;
        node.needs_grad = needs_grad;
        Ok(())
    }

    fn rename(&self, id: NodeId, e: Error) -> Error {
        match e {
            Error::Shape { detail, .. } => Error::Shape {
                node: self.describe(id),
                detail,
            },
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at {}", self.describe(id))),
            other => other,
        }
    }

    fn broadcast(&self, id: NodeId, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        broadcast_binary(self.val(a), self.val(b), f).ok_or_else(|| {
            Error::shape(
                self.describe(id),
                format!(
                    "cannot broadcast {:?} with {:?}",
                    self.val(a).shape(),
                    self.val(b).shape()
                ),
            )
        })
    }

    fn concat_forward(&self, id: NodeId, items: &[NodeId], axis: usize) -> Result<Tensor> {
        let first = self.val(items[0]);
        if axis >= first.rank() {
            return Err(Error::shape(self.describe(id), format!("axis {axis} out of range")));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for it in items {
            let s = self.val(*it).shape();
            let compatible = s.len() == first.rank()
                && s.iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape(
                    self.describe(id),
                    format!("cannot concatenate {:?} with {:?} on axis {axis}", s, first.shape()),
                ));
            }
            shape[axis] += s[axis];
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for it in items {
                let v = self.val(*it);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Tensor::new(shape, data)
    }

    fn crop_forward(&self, id: NodeId, input: NodeId, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
        let v = self.val(input);
        let r = v.rank();
        if r < 2 || top + h > v.shape()[r - 2] || left + w > v.shape()[r - 1] {
            return Err(Error::shape(
                self.describe(id),
                format!("crop {h}x{w} at ({top},{left}) outside {:?}", v.shape()),
            ));
        }
        let (ih, iw) = (v.shape()[r - 2], v.shape()[r - 1]);
        let outer: usize = v.shape()[..r - 2].iter().product();
        let mut data = Vec::with_capacity(outer * h * w);
        for o in 0..outer {
            for i in 0..h {
                let start = (o * ih + top + i) * iw + left;
                data.extend_from_slice(&v.data()[start..start + w]);
            }
        }
        let mut shape = v.shape()[..r - 2].to_vec();
        shape.extend([h, w]);
        Tensor::new(shape, data)
    }

    /// Reverse pass from a scalar output; returns gradients of every trainable parameter.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = self.nodes[output.0]
            .value
            .as_ref()
            .ok_or_else(|| Error::Numerical("backward before evaluate".into()))?;
        if !out.shape().is_empty() {
            return Err(Error::NonScalar(out.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::scalar(1.0));
        let mut grads = Gradients::default();
        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Param { name, trainable: true } => {
                    grads.insert(name.clone(), g);
                }
                op => self.propagate(idx, op, &g, &mut adj),
            }
        }
        Ok(grads)
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, idx: usize, op: &Op, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let mut send = |id: NodeId, grad: Tensor| match &mut adj[id.0] {
            Some(acc) => acc.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        };
        let out = self.nodes[idx].value.as_ref().expect("evaluated");
        match op {
            Op::Input(_) | Op::Param { .. } | Op::Const => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    send(*a, reduce_to(g, self.val(*a).shape()));
                }
                if self.wants(*b) {
                    send(*b, reduce_to(g, self.val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    send(*a, reduce_to(g, self.val(*a).shape()));
                }
                if self.wants(*b) {
                    send(*b, reduce_to(&g.map(|x| -x), self.val(*b).shape()));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let t = broadcast_binary(g, self.val(*b), |x, y| x * y).expect("shape");
                    send(*a, reduce_to(&t, self.val(*a).shape()));
                }
                if self.wants(*b) {
                    let t = broadcast_binary(g, self.val(*a), |x, y| x * y).expect("shape");
                    send(*b, reduce_to(&t, self.val(*b).shape()));
                }
            }
            Op::Div(a, b) => {
                let bv = self.val(*b);
                if self.wants(*a) {
                    let t = broadcast_binary(g, bv, |x, y| x / y).expect("shape");
                    send(*a, reduce_to(&t, self.val(*a).shape()));
                }
                if self.wants(*b) {
                    // d(a/b)/db = -out / b
                    let t = g.zip_map(out, |x, o| -x * o);
                    let t = broadcast_binary(&t, bv, |x, y| x / y).expect("shape");
                    send(*b, reduce_to(&t, bv.shape()));
                }
            }
            Op::Neg(a) => send(*a, g.map(|x| -x)),
            Op::Scale(a, s) => send(*a, g.scale(*s)),
            Op::Powf(a, p) => {
                let t = g.zip_map(self.val(*a), |x, v| x * p * v.powf(p - 1.0));
                send(*a, t);
            }
            Op::MinScalar(a, l) => {
                let t = g.zip_map(self.val(*a), |x, v| if v < *l { x } else { 0.0 });
                send(*a, t);
            }
            Op::Relu(a) => send(*a, g.zip_map(self.val(*a), |x, v| if v > 0.0 { x } else { 0.0 })),
            Op::Tanh(a) => send(*a, g.zip_map(out, |x, y| x * (1.0 - y * y))),
            Op::Abs(a) => send(*a, g.zip_map(self.val(*a), |x, v| x * sign(v))),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    send(*a, g.matmul(&bv.transpose()).expect("shape"));
                }
                if self.wants(*b) {
                    send(*b, av.transpose().matmul(g).expect("shape"));
                }
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            } => {
                let want = [
                    self.wants(*input),
                    self.wants(*weight),
                    bias.is_some_and(|b| self.wants(b)),
                ];
                let (gi, gw, gb) = conv2d_backward(self.val(*input), self.val(*weight), *pad, g, want);
                if let Some(gi) = gi {
                    send(*input, gi);
                }
                if let Some(gw) = gw {
                    send(*weight, gw);
                }
                if let (Some(gb), Some(b)) = (gb, bias) {
                    send(*b, gb);
                }
            }
            Op::Sum(a) => {
                let v = self.val(*a);
                send(*a, Tensor::full(v.shape(), g.item()));
            }
            Op::Mean(a) => {
                let v = self.val(*a);
                send(*a, Tensor::full(v.shape(), g.item() / v.len() as f64));
            }
            Op::Norm(a) => {
                let n = out.item();
                let v = self.val(*a);
                let s = if n > 0.0 { g.item() / n } else { 0.0 };
                send(*a, v.scale(s));
            }
            Op::Concat(items, axis) => {
                let first = self.val(items[0]);
                let outer: usize = first.shape()[..*axis].iter().product();
                let inner: usize = first.shape()[axis + 1..].iter().product();
                let total = g.shape()[*axis] * inner;
                let mut offset = 0;
                for it in items {
                    let v = self.val(*it);
                    let chunk = v.shape()[*axis] * inner;
                    if self.wants(*it) {
                        let mut data = Vec::with_capacity(v.len());
                        for o in 0..outer {
                            let start = o * total + offset;
                            data.extend_from_slice(&g.data()[start..start + chunk]);
                        }
                        send(*it, Tensor::new(v.shape().to_vec(), data).expect("shape"));
                    }
                    offset += chunk;
                }
            }
            Op::Reshape(a, _) => {
                let shape = self.val(*a).shape().to_vec();
                send(*a, g.clone().reshape(&shape).expect("shape"));
            }
            Op::Select(a, index) => {
                let v = self.val(*a);
                let mut t = Tensor::zeros(v.shape());
                let inner = g.len();
                t.data_mut()[index * inner..(index + 1) * inner].copy_from_slice(g.data());
                send(*a, t);
            }
            Op::Crop2d {
                input,
                top,
                left,
                height,
                width,
            } => {
                let v = self.val(*input);
                let r = v.rank();
                let (ih, iw) = (v.shape()[r - 2], v.shape()[r - 1]);
                let outer: usize = v.shape()[..r - 2].iter().product();
                let mut t = Tensor::zeros(v.shape());
                let data = t.data_mut();
                for o in 0..outer {
                    for i in 0..*height {
                        let dst = (o * ih + top + i) * iw + left;
                        let src = (o * height + i) * width;
                        data[dst..dst + width].copy_from_slice(&g.data()[src..src + width]);
                    }
                }
                send(*input, t);
            }
            Op::MatExp(a) => {
                let cache = self.nodes[idx].matexp.as_ref().expect("cached by forward");
                let ga = matexp_backward(cache, g.data());
                send(*a, Tensor::new(self.val(*a).shape().to_vec(), ga).expect("shape"));
            }
            Op::GridSample { patch, g_inv, fill } => {
                let (gp, gg) = grid_sample_backward(
                    self.val(*patch),
                    self.val(*g_inv),
                    *fill,
                    g,
                    self.wants(*patch),
                    self.wants(*g_inv),
                );
                if let Some(gp) = gp {
                    send(*patch, gp);
                }
                if let Some(gg) = gg {
                    send(*g_inv, gg);
                }
            }
            Op::Inverse(a) => {
                // d(A^-1) = -A^-1 dA A^-1  =>  grad_A = -Y^T G Y^T
                let yt = out.transpose();
                let t = yt.matmul(g).and_then(|t| t.matmul(&yt)).expect("shape");
                send(*a, t.scale(-1.0));
            }
            Op::Det(a) => {
                let av = self.val(*a);
                let d = out.item();
                let t = match linalg::inverse(av) {
                    Ok(inv) => inv.transpose().scale(d * g.item()),
                    Err(_) => Tensor::zeros(av.shape()),
                };
                send(*a, t);
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to an output of rank `r`, zero on broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let mut strides = vec![0; r];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + r - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

pub(crate) fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Option<Tensor> {
    if a.shape() == b.shape() {
        return Some(a.zip_map(b, f));
    }
    if b.len() == 1 && b.rank() <= a.rank() {
        let y = b.data()[0];
        let shape = broadcast_shape(a.shape(), b.shape())?;
        return Tensor::new(shape, a.data().iter().map(|&x| f(x, y)).collect()).ok();
    }
    if a.len() == 1 && a.rank() <= b.rank() {
        let x = a.data()[0];
        let shape = broadcast_shape(a.shape(), b.shape())?;
        return Tensor::new(shape, b.data().iter().map(|&y| f(x, y)).collect()).ok();
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let sa = aligned_strides(a.shape(), &shape);
    let sb = aligned_strides(b.shape(), &shape);
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        data.push(f(a.data()[oa], b.data()[ob]));
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(shape, data).ok()
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let n: usize = shape.iter().product();
    if n == 1 {
        return Tensor::new(shape.to_vec(), vec![g.sum()]).expect("shape");
    }
    let out_shape = g.shape();
    let st = aligned_strides(shape, out_shape);
    let mut acc = vec![0.0; n];
    let mut idx = vec![0usize; out_shape.len()];
    let mut o = 0usize;
    for &v in g.data() {
        acc[o] += v;
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            o += st[d];
            if idx[d] < out_shape[d] {
                break;
            }
            o -= st[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(shape.to_vec(), acc).expect("shape")
}
