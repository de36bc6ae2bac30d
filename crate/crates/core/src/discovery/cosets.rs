//! Independent coset candidates, held-out ranking, and duplicate filtering.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, NodeId};
use crate::discovery::equivariance::{field_term, field_weights, vector_term, Action, Problem};
use crate::discovery::train::predict;
use crate::discovery::DiscoveryConfig;
use crate::error::{Error, Result};
use crate::geometry::MIN_ABS_DET;
use crate::lie::{component_distance, normalize_coset, normalize_coset_node, CosetBank, LieBasis};
use crate::linalg;
use crate::optim::Adam;
use crate::tasks::Predictor;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CosetResult {
    /// Effective group elements (normalized when enabled) with held-out losses.
    pub bank: CosetBank,
    /// Mean loss over active candidates per step.
    pub trace: Vec<f64>,
}

fn param_name(l: usize) -> String {
    format!("c{l}")
}

/// The group element a raw candidate acts as.
fn effective(c: &Tensor, normalize: bool) -> Result<Tensor> {
    if normalize {
        normalize_coset(c)
    } else {
        Ok(c.clone())
    }
}

/// Summed loss over candidates, each with its own parameter; rebuilt when the active set changes.
struct BankGraph {
    graph: Graph,
    total: NodeId,
    /// `(candidate, loss node)` per active candidate.
    terms: Vec<(usize, NodeId)>,
    field: bool,
}

impl BankGraph {
    fn build(problem: &Problem, predictors: &[Predictor], cfg: &DiscoveryConfig, raw: &[Tensor], active: &[usize]) -> Self {
        let m = problem.m();
        let field = matches!(problem, Problem::Field { .. });
        let mut g = Graph::new();
        let xs: Vec<NodeId> = (0..predictors.len()).map(|c| g.input(&format!("x{c}"))).collect();
        let phis: Vec<NodeId> = (0..predictors.len()).map(|c| g.input(&format!("phi{c}"))).collect();
        let mut terms = Vec::with_capacity(active.len());
        for &l in active {
            let c_node = g.param(&param_name(l), raw[l].clone());
            let elem = if cfg.normalize_cosets {
                normalize_coset_node(&mut g, c_node, m)
            } else {
                c_node
            };
            let acting = if field { g.inverse(elem) } else { elem };
            let mut sum = None;
            for (c, pred) in predictors.iter().enumerate() {
                let prefix = format!("p{c}.");
                let t = if field {
                    let w = g.input(&format!("w{l}_{c}"));
                    field_term(&mut g, pred, &prefix, xs[c], phis[c], w, Action::Shared(acting), cfg.loss)
                } else {
                    vector_term(&mut g, pred, &prefix, problem.mode(), xs[c], phis[c], Action::Shared(acting), cfg.loss)
                };
                sum = Some(match sum {
                    None => t,
                    Some(s) => g.add(s, t),
                });
            }
            terms.push((l, sum.expect("at least one chart")));
        }
        let mut total = terms[0].1;
        for &(_, t) in &terms[1..] {
            total = g.add(total, t);
        }
        Self {
            graph: g,
            total,
            terms,
            field,
        }
    }

    fn evaluate(&mut self, problem: &Problem, predictors: &[Predictor], idx: &[usize], cfg: &DiscoveryConfig) -> Result<f64> {
        let mut bindings: Vec<(String, Tensor)> = Vec::new();
        for (c, pred) in predictors.iter().enumerate() {
            bindings.push((format!("x{c}"), problem.inputs(c, idx)));
            bindings.push((format!("phi{c}"), predict(problem, pred, c, idx)?));
        }
        if self.field {
            for &(l, _) in &self.terms {
                let raw = self.graph.param_value(&param_name(l)).expect("registered");
                let g_inv = linalg::inverse(&effective(raw, cfg.normalize_cosets)?)?;
                for (c, pred) in predictors.iter().enumerate() {
                    let out = &pred.out_shape;
                    let w = field_weights(std::slice::from_ref(&g_inv), idx.len(), out[0], out[1], cfg.strict_padding)?;
                    bindings.push((format!("w{l}_{c}"), w));
                }
            }
        }
        Ok(self
            .graph
            .evaluate(bindings.iter().map(|(n, t)| (n.as_str(), t.clone())), self.total)?
            .item())
    }

    fn term_losses(&self) -> Vec<(usize, f64)> {
        self.terms
            .iter()
            .map(|&(l, t)| (l, self.graph.value(t).map_or(f64::NAN, Tensor::item)))
            .collect()
    }
}

fn is_singular(c: &Tensor) -> bool {
    linalg::det(c).map_or(true, |d| !d.is_finite() || d.abs() <= MIN_ABS_DET)
}

/// Indices of a fixed held-out batch and of the samples left for training.
pub(crate) fn split_holdout(n: usize, holdout: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let h = holdout.min(n);
    let mut held = sample(rng, n, h).into_vec();
    held.sort_unstable();
    if n < 2 * h {
        // Too little data to set samples aside; rank on a fixed subset of the training data.
        return (held, (0..n).collect());
    }
    let mut is_held = vec![false; n];
    for &i in &held {
        is_held[i] = true;
    }
    (held, (0..n).filter(|&i| !is_held[i]).collect())
}

/// Trains `cfg.n_cosets` candidates on shared batches and ranks them on a held-out batch.
pub fn discover_cosets(problem: &Problem, predictors: &[Predictor], cfg: &DiscoveryConfig, rng: &mut impl Rng) -> Result<CosetResult> {
    if cfg.n_cosets == 0 {
        return Err(Error::Config("need at least one coset candidate".into()));
    }
    let m = problem.m();
    let (held, train) = split_holdout(problem.len(), cfg.holdout, rng);
    let mut raw: Vec<Tensor> = (0..cfg.n_cosets)
        .map(|_| {
            let data = (0..m * m).map(|_| cfg.coset_init_std * rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::new(vec![m, m], data).expect("shape")
        })
        .collect();
    let mut degenerate: Vec<bool> = raw.iter().map(is_singular).collect();
    let active = |deg: &[bool]| (0..deg.len()).filter(|&l| !deg[l]).collect::<Vec<_>>();
    let mut adam = Adam::new(cfg.coset_lr);
    let mut trace = Vec::with_capacity(cfg.coset_steps);
    let n = cfg.coset_batch.min(train.len());
    let mut bank = (!active(&degenerate).is_empty()).then(|| BankGraph::build(problem, predictors, cfg, &raw, &active(&degenerate)));
    for step in 0..cfg.coset_steps {
        let Some(bg) = bank.as_mut() else { break };
        let pick = sample(rng, train.len(), n).into_vec();
        let idx: Vec<usize> = pick.iter().map(|&i| train[i]).collect();
        let loss = bg.evaluate(problem, predictors, &idx, cfg)?;
        let bad: Vec<usize> = bg.term_losses().into_iter().filter(|(_, v)| !v.is_finite()).map(|(l, _)| l).collect();
        if !bad.is_empty() {
            for l in bad {
                log::warn!("coset candidate {l} produced a non-finite loss at step {step}; freezing it");
                degenerate[l] = true;
            }
            let act = active(&degenerate);
            bank = (!act.is_empty()).then(|| BankGraph::build(problem, predictors, cfg, &raw, &act));
            continue;
        }
        let grads = bg.graph.backward(bg.total)?;
        adam.step_graph(&mut bg.graph, &grads)?;
        trace.push(loss / bg.terms.len() as f64);
        let mut changed = false;
        for &(l, _) in &bg.terms {
            raw[l] = bg.graph.param_value(&param_name(l)).expect("registered").clone();
            if is_singular(&raw[l]) {
                log::warn!("coset candidate {l} hit the singular guard at step {step}; freezing it");
                degenerate[l] = true;
                changed = true;
            }
        }
        if changed {
            let act = active(&degenerate);
            bank = (!act.is_empty()).then(|| BankGraph::build(problem, predictors, cfg, &raw, &act));
        }
    }
    let mut candidates = Vec::with_capacity(raw.len());
    let mut losses = vec![f64::INFINITY; raw.len()];
    for (l, c) in raw.iter().enumerate() {
        if degenerate[l] {
            candidates.push(c.clone());
            continue;
        }
        let e = effective(c, cfg.normalize_cosets)?;
        losses[l] = element_loss(problem, predictors, &e, &held, cfg)?;
        candidates.push(e);
    }
    Ok(CosetResult {
        bank: CosetBank {
            candidates,
            losses,
            degenerate,
        },
        trace,
    })
}

/// Summed chart loss of one group element over the samples `idx`, in chunks of 64.
pub fn element_loss(problem: &Problem, predictors: &[Predictor], elem: &Tensor, idx: &[usize], cfg: &DiscoveryConfig) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Config("cannot rank cosets on an empty batch".into()));
    }
    let field = matches!(problem, Problem::Field { .. });
    let acting = if field { linalg::inverse(elem)? } else { elem.clone() };
    let mut total = 0.0;
    for chunk in idx.chunks(64) {
        let mut g = Graph::new();
        let a = g.constant(acting.clone());
        let mut bindings = Vec::new();
        let mut sum = None;
        for (c, pred) in predictors.iter().enumerate() {
            let x = g.input(&format!("x{c}"));
            let phi = g.input(&format!("phi{c}"));
            let t = if field {
                let out = &pred.out_shape;
                let w = field_weights(std::slice::from_ref(&acting), chunk.len(), out[0], out[1], cfg.strict_padding)?;
                let wn = g.constant(w);
                field_term(&mut g, pred, &format!("p{c}."), x, phi, wn, Action::Shared(a), cfg.loss)
            } else {
                vector_term(&mut g, pred, &format!("p{c}."), problem.mode(), x, phi, Action::Shared(a), cfg.loss)
            };
            bindings.push((format!("x{c}"), problem.inputs(c, chunk)));
            bindings.push((format!("phi{c}"), predict(problem, pred, c, chunk)?));
            sum = Some(match sum {
                None => t,
                Some(s) => g.add(s, t),
            });
        }
        let out = sum.expect("at least one chart");
        let v = g.evaluate(bindings.iter().map(|(n, t)| (n.as_str(), t.clone())), out)?.item();
        total += v * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Keeps the best `q` candidates that are pairwise more than `epsilon` apart modulo the identity component.
///
/// Greedy in ascending loss: a candidate survives if `C_i C_j^-1` is farther than `epsilon`
/// from the identity component for every survivor `C_j`. Returns bank indices.
pub fn filter_duplicate_cosets(bank: &CosetBank, basis: &LieBasis, q: usize, epsilon: f64) -> Result<Vec<usize>> {
    let mut kept: Vec<(usize, Tensor)> = Vec::new();
    for i in bank.ranking().into_iter().take(q) {
        let ci = &bank.candidates[i];
        let mut unique = true;
        for (_, inv_j) in &kept {
            if component_distance(&ci.matmul(inv_j)?, basis)? <= epsilon {
                unique = false;
                break;
            }
        }
        if unique {
            kept.push((i, linalg::inverse(ci)?));
        }
    }
    Ok(kept.into_iter().map(|(i, _)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::rotation_generator;

    fn rot(t: f64) -> Tensor {
        Tensor::from_rows(&[[t.cos(), -t.sin()], [t.sin(), t.cos()]])
    }

    fn so2() -> LieBasis {
        LieBasis::new(2, vec![rotation_generator()]).unwrap()
    }

    fn bank(cands: Vec<Tensor>, losses: Vec<f64>) -> CosetBank {
        let mut b = CosetBank::new(cands).unwrap();
        b.losses = losses;
        b
    }

    #[test]
    fn nearby_rotations_collapse() {
        let b = bank(vec![rot(0.3), rot(0.5)], vec![0.1, 0.2]);
        assert_eq!(filter_duplicate_cosets(&b, &so2(), 2, 0.3).unwrap(), vec![0]);
    }

    #[test]
    fn reflection_survives() {
        let refl = Tensor::diag(&[1.0, -1.0]).matmul(&rot(0.2)).unwrap();
        let b = bank(vec![rot(0.3), refl], vec![0.1, 0.2]);
        assert_eq!(filter_duplicate_cosets(&b, &so2(), 2, 0.3).unwrap(), vec![0, 1]);
    }

    #[test]
    fn empty_basis_uses_identity_distance() {
        let flip = Tensor::diag(&[-1.0, 1.0]);
        let b = bank(vec![Tensor::eye(2), flip.clone(), Tensor::eye(2), flip], vec![0.4, 0.1, 0.2, 0.3]);
        assert_eq!(filter_duplicate_cosets(&b, &LieBasis::empty(2), 4, 0.3).unwrap(), vec![1, 2]);
    }

    #[test]
    fn ranking_respects_q_and_degenerate() {
        let mut b = bank(vec![Tensor::eye(2), Tensor::diag(&[-1.0, 1.0]), Tensor::diag(&[1.0, -1.0])], vec![0.3, 0.1, 0.2]);
        assert_eq!(filter_duplicate_cosets(&b, &LieBasis::empty(2), 1, 0.3).unwrap(), vec![1]);
        b.degenerate[1] = true;
        assert_eq!(filter_duplicate_cosets(&b, &LieBasis::empty(2), 1, 0.3).unwrap(), vec![2]);
    }

    #[test]
    fn holdout_split_is_disjoint() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (h, t) = split_holdout(100, 20, &mut rng);
        assert_eq!(h.len(), 20);
        assert_eq!(t.len(), 80);
        assert!(h.iter().all(|i| !t.contains(i)));
        let (h, t) = split_holdout(30, 20, &mut rng);
        assert_eq!((h.len(), t.len()), (20, 30));
    }
}
