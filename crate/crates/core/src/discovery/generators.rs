//! Gradient descent on a Lie algebra basis under sampled group elements.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{matexp, Graph, NodeId};
use crate::discovery::equivariance::{field_term, field_weights, vector_term, Action, Problem};
use crate::discovery::train::{predict, ChartTrainer};
use crate::discovery::{DiscoveryConfig, RegKind};
use crate::error::{Error, Result};
use crate::lie::{cosine_node, growth_node, sbr_node, LieBasis};
use crate::optim::Adam;
use crate::tasks::Predictor;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorResult {
    pub basis: LieBasis,
    /// Total loss per step, regularizers included.
    pub trace: Vec<f64>,
}

fn prefix(c: usize) -> String {
    format!("p{c}.")
}

/// Static graph of the batched discovery objective.
struct Objective {
    graph: Graph,
    total: NodeId,
    n: usize,
    field: bool,
}

impl Objective {
    fn build(problem: &Problem, predictors: &[Predictor], cfg: &DiscoveryConfig, init: &LieBasis, n: usize) -> Self {
        let (k, m) = (init.k(), init.m);
        let mut g = Graph::new();
        let basis = g.param("basis", init.to_tensor());
        let flat = g.reshape(basis, &[k, m * m]);
        let field = matches!(problem, Problem::Field { .. });
        let mut terms = Vec::new();
        for (c, pred) in predictors.iter().enumerate() {
            let eta = g.input(&format!("eta{c}"));
            let algebra = g.matmul(eta, flat);
            let mats: Vec<NodeId> = (0..n)
                .map(|s| {
                    let row = g.select(algebra, s);
                    let a = g.reshape(row, &[m, m]);
                    // Field patches need g^-1 = exp(-A); vectors need g itself.
                    let a = if field { g.neg(a) } else { a };
                    g.matexp(a)
                })
                .collect();
            let x = g.input(&format!("x{c}"));
            let phi = g.input(&format!("phi{c}"));
            let term = if field {
                let w = g.input(&format!("w{c}"));
                field_term(&mut g, pred, &prefix(c), x, phi, w, Action::PerSample(&mats), cfg.loss)
            } else {
                vector_term(&mut g, pred, &prefix(c), problem.mode(), x, phi, Action::PerSample(&mats), cfg.loss)
            };
            terms.push(term);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t);
        }
        let reg = match cfg.reg {
            RegKind::Sbr => Some(sbr_node(&mut g, basis, k, cfg.gamma)),
            RegKind::Cosine => Some(cosine_node(&mut g, basis, k, cfg.gamma)),
            RegKind::None => None,
        };
        if let Some(r) = reg {
            total = g.add(total, r);
        }
        let growth = growth_node(&mut g, basis, k, cfg.growth_factor, cfg.growth_limit);
        total = g.add(total, growth);
        Self { graph: g, total, n, field }
    }

    fn basis(&self) -> Result<LieBasis> {
        LieBasis::from_tensor(self.graph.param_value("basis").expect("registered at build"))
    }

    /// Evaluates the loss on samples `idx` with coefficients drawn from `rng`.
    fn evaluate(&mut self, problem: &Problem, predictors: &[Predictor], idx: &[usize], cfg: &DiscoveryConfig, rng: &mut impl Rng) -> Result<f64> {
        let basis = self.basis()?;
        let k = basis.k();
        let mut bindings: Vec<(String, Tensor)> = Vec::new();
        for (c, pred) in predictors.iter().enumerate() {
            let eta: Vec<f64> = (0..self.n * k).map(|_| rng.sample(StandardNormal)).collect();
            let eta = Tensor::new(vec![self.n, k], eta)?;
            if self.field {
                let g_invs = (0..self.n)
                    .map(|s| matexp(&basis.combine(&eta.data()[s * k..(s + 1) * k])?.scale(-1.0)))
                    .collect::<Result<Vec<_>>>()?;
                let out = &pred.out_shape;
                bindings.push((format!("w{c}"), field_weights(&g_invs, self.n, out[0], out[1], cfg.strict_padding)?));
            }
            bindings.push((format!("eta{c}"), eta));
            bindings.push((format!("x{c}"), problem.inputs(c, idx)));
            bindings.push((format!("phi{c}"), predict(problem, pred, c, idx)?));
        }
        let v = self
            .graph
            .evaluate(bindings.iter().map(|(n, t)| (n.as_str(), t.clone())), self.total)?
            .item();
        Ok(v)
    }
}

/// Loss of a fixed basis averaged over `batches` random batches; no parameters change.
pub fn generator_loss(problem: &Problem, predictors: &[Predictor], basis: &LieBasis, cfg: &DiscoveryConfig, batches: usize, rng: &mut impl Rng) -> Result<f64> {
    let n = cfg.generator_batch.min(problem.len());
    let mut obj = Objective::build(problem, predictors, cfg, basis, n);
    let mut total = 0.0;
    for _ in 0..batches {
        let idx = sample(rng, problem.len(), n).into_vec();
        total += obj.evaluate(problem, predictors, &idx, cfg, rng)?;
    }
    Ok(total / batches as f64)
}

/// Learns `cfg.k` generators; with `interleave`, trainable predictors take a step before each one.
pub fn discover_generators(problem: &Problem, predictors: &mut [Predictor], cfg: &DiscoveryConfig, rng: &mut impl Rng) -> Result<GeneratorResult> {
    let m = problem.m();
    if cfg.k == 0 {
        return Ok(GeneratorResult {
            basis: LieBasis::empty(m),
            trace: Vec::new(),
        });
    }
    if predictors.len() != problem.n_charts() {
        return Err(Error::Config(format!(
            "{} predictors for {} charts",
            predictors.len(),
            problem.n_charts()
        )));
    }
    let init = LieBasis::random(cfg.k, m, cfg.basis_init_std, rng);
    let n = cfg.generator_batch.min(problem.len());
    let mut obj = Objective::build(problem, predictors, cfg, &init, n);
    let mut adam = Adam::new(cfg.generator_lr);
    let mut trainers: Vec<Option<ChartTrainer>> = predictors
        .iter()
        .enumerate()
        .map(|(c, p)| (cfg.interleave && p.kind.is_trainable()).then(|| ChartTrainer::new(p, c, cfg.loss, cfg.predictor_lr)))
        .collect();
    let mut trace = Vec::with_capacity(cfg.generator_steps);
    for step in 0..cfg.generator_steps {
        for (c, trainer) in trainers.iter_mut().enumerate() {
            if let Some(t) = trainer {
                let idx = sample(rng, problem.len(), cfg.predictor_batch.min(problem.len())).into_vec();
                t.step(problem, &mut predictors[c], &idx)?;
                for (name, v) in &predictors[c].params {
                    obj.graph.set_param(&format!("{}{name}", prefix(c)), v.clone())?;
                }
            }
        }
        let idx = sample(rng, problem.len(), n).into_vec();
        let loss = obj.evaluate(problem, predictors, &idx, cfg, rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("generator loss at step {step}")));
        }
        let grads = obj.graph.backward(obj.total)?;
        adam.step_graph(&mut obj.graph, &grads)?;
        if step % 50 == 0 {
            log::debug!("generator step {step}: loss {loss:.4e}");
        }
        trace.push(loss);
    }
    Ok(GeneratorResult {
        basis: obj.basis()?,
        trace,
    })
}
