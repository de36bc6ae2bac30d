//! Supervised training of one predictor per chart.

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::discovery::equivariance::Problem;
use crate::discovery::{DiscoveryConfig, LossKind};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::tasks::{build_predictor, Predictor, PredictorKind};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch, one trace per chart.
    pub traces: Vec<Vec<f64>>,
    /// Loss over the full dataset after training.
    pub final_loss: Vec<f64>,
}

/// Builds one predictor per chart with shapes taken from the problem.
pub fn build_predictors(problem: &Problem, kind: &PredictorKind, seed: u64) -> Result<Vec<Predictor>> {
    (0..problem.n_charts())
        .map(|c| {
            let p = build_predictor(kind, &problem.in_shape(c), &problem.out_shape(c), c, seed.wrapping_add(c as u64))?;
            Ok(p.with_chart_map(problem.chart_map(c)))
        })
        .collect()
}

/// Minibatch trainer for a single chart's predictor.
pub(crate) struct ChartTrainer {
    chart: usize,
    graph: Graph,
    loss: NodeId,
    adam: Adam,
}

impl ChartTrainer {
    pub(crate) fn new(pred: &Predictor, chart: usize, loss: LossKind, lr: f64) -> Self {
        let mut graph = Graph::new();
        let x = graph.input("x");
        let y = graph.input("y");
        let out = pred.graph(&mut graph, x, "", true);
        let diff = graph.sub(out, y);
        let err = match loss {
            LossKind::Mse => graph.mul(diff, diff),
            LossKind::Mae => graph.abs(diff),
        };
        let loss = graph.mean(err);
        Self {
            chart,
            graph,
            loss,
            adam: Adam::new(lr),
        }
    }

    /// One Adam step on the samples `idx`; returns the loss before the update.
    pub(crate) fn step(&mut self, problem: &Problem, pred: &mut Predictor, idx: &[usize]) -> Result<f64> {
        let x = problem.inputs(self.chart, idx);
        let y = problem.targets(self.chart, idx);
        let l = self.graph.evaluate([("x", x), ("y", y)], self.loss)?.item();
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("predictor loss on chart {}", self.chart)));
        }
        let grads = self.graph.backward(self.loss)?;
        self.adam.step_graph(&mut self.graph, &grads)?;
        pred.sync_from(&self.graph, "");
        Ok(l)
    }
}

/// Mean loss of `pred` over all samples, evaluated in chunks.
pub fn dataset_loss(problem: &Problem, pred: &Predictor, chart: usize, loss: LossKind) -> Result<f64> {
    let n = problem.len();
    let mut total = 0.0;
    for start in (0..n).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(n)).collect();
        let out = pred.forward(&problem.inputs(chart, &idx))?;
        let y = problem.targets(chart, &idx);
        let diff = out.sub(&y);
        total += match loss {
            LossKind::Mse => diff.data().iter().map(|v| v * v).sum::<f64>(),
            LossKind::Mae => diff.data().iter().map(|v| v.abs()).sum::<f64>(),
        };
    }
    let per_sample: usize = problem.out_shape(chart).iter().product();
    Ok(total / (n * per_sample) as f64)
}

/// Random minibatches covering one epoch.
pub(crate) fn epoch_batches(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let order = sample(rng, n, n).into_vec();
    order.chunks(batch.min(n)).map(<[usize]>::to_vec).collect()
}

/// Fits every trainable predictor to its chart's pairs; oracles are left as they are.
pub fn train_predictors(problem: &Problem, predictors: &mut [Predictor], cfg: &DiscoveryConfig, rng: &mut impl Rng) -> Result<TrainReport> {
    if predictors.len() != problem.n_charts() {
        return Err(Error::Config(format!(
            "{} predictors for {} charts",
            predictors.len(),
            problem.n_charts()
        )));
    }
    let mut report = TrainReport::default();
    for (c, pred) in predictors.iter_mut().enumerate() {
        let mut trace = Vec::new();
        if pred.kind.is_trainable() {
            let mut trainer = ChartTrainer::new(pred, c, cfg.loss, cfg.predictor_lr);
            for epoch in 0..cfg.predictor_epochs {
                let mut sum = 0.0;
                let batches = epoch_batches(problem.len(), cfg.predictor_batch, rng);
                for idx in &batches {
                    sum += trainer.step(problem, pred, idx)?;
                }
                let mean = sum / batches.len() as f64;
                log::debug!("chart {c} epoch {epoch}: loss {mean:.3e}");
                trace.push(mean);
            }
        }
        report.final_loss.push(dataset_loss(problem, pred, c, cfg.loss)?);
        report.traces.push(trace);
    }
    Ok(report)
}

/// Predictor outputs for a batch, used as the fixed right-hand side of the equivariance loss.
pub(crate) fn predict(problem: &Problem, pred: &Predictor, chart: usize, idx: &[usize]) -> Result<Tensor> {
    pred.forward(&problem.inputs(chart, idx))
}
