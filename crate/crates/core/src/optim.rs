//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::autodiff::{Gradients, Graph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }

    /// One update of every parameter that has a gradient. Parameters without one are left alone.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params
                .get(name)
                .ok_or_else(|| Error::UnknownInput(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    format!("adam `{name}`"),
                    format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Updates parameters that live inside a graph.
    pub fn step_graph(&mut self, graph: &mut Graph, grads: &Gradients) -> Result<()> {
        let mut params: BTreeMap<String, Tensor> = grads
            .iter()
            .map(|(name, _)| {
                graph
                    .param_value(name)
                    .cloned()
                    .map(|v| (name.clone(), v))
                    .ok_or_else(|| Error::UnknownInput(name.clone()))
            })
            .collect::<Result<_>>()?;
        self.step(&mut params, grads)?;
        for (name, value) in params {
            graph.set_param(&name, value)?;
        }
        Ok(())
    }
}
