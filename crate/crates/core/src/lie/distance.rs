//! Distance from a matrix to the identity component `{exp(sum t_s B_s)}`.
//!
//! Minimizes `f(t) = |M - exp(sum t_s B_s)|_F^2`: a coarse grid over `[-pi, pi]^k`
//! when `k <= 2`, seeded random starts otherwise, each refined
//! by BFGS and a backtracking line search. The result is an upper bound on the true minimum.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{matexp_backward, matexp_forward};
use crate::error::{Error, Result};
use crate::lie::LieBasis;
use crate::tensor::Tensor;

const GRID_POINTS: usize = 64;
const GRID_STARTS: usize = 4;
const RANDOM_STARTS: usize = 32;
const MAX_ITERS: usize = 400;
const START_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentDistance {
    pub distance: f64,
    /// Minimizing coefficients `t`.
    pub coefficients: Vec<f64>,
}

struct Objective<'a> {
    target: &'a Tensor,
    basis: &'a LieBasis,
}

impl Objective<'_> {
    fn value(&self, t: &[f64]) -> f64 {
        let Ok(a) = self.basis.combine(t) else {
            return f64::INFINITY;
        };
        match matexp_forward(&a) {
            Ok((e, _)) => {
                let v = e.sub(self.target).data().iter().map(|x| x * x).sum::<f64>();
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    }

    fn value_and_grad(&self, t: &[f64]) -> (f64, Vec<f64>) {
        let a = self.basis.combine(t).expect("coefficient count matches");
        let Ok((e, cache)) = matexp_forward(&a) else {
            return (f64::INFINITY, vec![0.0; t.len()]);
        };
        let r = e.sub(self.target);
        let f = r.data().iter().map(|x| x * x).sum::<f64>();
        let seed: Vec<f64> = r.data().iter().map(|x| 2.0 * x).collect();
        let ga = Tensor::new(a.shape().to_vec(), matexp_backward(&cache, &seed)).expect("shape");
        let grad = self.basis.matrices.iter().map(|b| ga.dot(b)).collect();
        (f, grad)
    }

    /// BFGS with a backtracking line search.
    fn refine(&self, mut t: Vec<f64>) -> (f64, Vec<f64>) {
        let k = t.len();
        let (mut f, mut g) = self.value_and_grad(&t);
        let mut h = identity(k);
        for _ in 0..MAX_ITERS {
            let gg: f64 = g.iter().map(|x| x * x).sum();
            if !f.is_finite() || gg < 1e-30 || f < 1e-28 {
                break;
            }
            let mut d: Vec<f64> = (0..k).map(|i| -(0..k).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
            let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                h = identity(k);
                d = g.iter().map(|x| -x).collect();
                slope = -gg;
            }
            let mut step = 1.0;
            let mut next = None;
            while step > 1e-14 {
                let cand: Vec<f64> = t.iter().zip(&d).map(|(ti, di)| ti + step * di).collect();
                if self.value(&cand) <= f + 1e-4 * step * slope {
                    next = Some(cand);
                    break;
                }
                step *= 0.5;
            }
            let Some(cand) = next else { break };
            let (fc, gc) = self.value_and_grad(&cand);
            let s: Vec<f64> = cand.iter().zip(&t).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            if sy > 1e-300 {
                let hy: Vec<f64> = (0..k).map(|i| (0..k).map(|j| h[i][j] * y[j]).sum()).collect();
                let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
                for i in 0..k {
                    for j in 0..k {
                        h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                    }
                }
            }
            t = cand;
            f = fc;
            g = gc;
        }
        (f, t)
    }
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn grid_starts(obj: &Objective, k: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..GRID_POINTS)
        .map(|i| -PI + 2.0 * PI * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let points: Vec<Vec<f64>> = if k == 1 {
        axis.iter().map(|&a| vec![a]).collect()
    } else {
        axis.iter()
            .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
            .collect()
    };
    let mut scored: Vec<(f64, Vec<f64>)> = points.into_iter().map(|p| (obj.value(&p), p)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.into_iter().take(GRID_STARTS).map(|(_, p)| p).collect()
}

fn random_starts(k: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut starts = vec![vec![0.0; k]];
    starts.extend((0..RANDOM_STARTS).map(|_| (0..k).map(|_| StandardNormal.sample(&mut rng)).collect()));
    starts
}

/// Closest point of the identity component spanned by `basis` to `m`.
pub fn closest_in_component(m: &Tensor, basis: &LieBasis) -> Result<ComponentDistance> {
    if m.shape() != [basis.m, basis.m] {
        return Err(Error::shape(
            "component_distance",
            format!("matrix {:?} vs basis of size {}", m.shape(), basis.m),
        ));
    }
    if !m.all_finite() {
        return Err(Error::NonFinite("component_distance argument".into()));
    }
    let k = basis.k();
    if k == 0 {
        return Ok(ComponentDistance {
            distance: m.sub(&Tensor::eye(basis.m)).norm(),
            coefficients: vec![],
        });
    }
    let obj = Objective { target: m, basis };
    let starts = if k <= 2 { grid_starts(&obj, k) } else { random_starts(k) };
    let mut best = (obj.value(&vec![0.0; k]), vec![0.0; k]);
    for s in starts {
        let (f, t) = obj.refine(s);
        if f < best.0 {
            best = (f, t);
        }
        if best.0 < 1e-28 {
            break;
        }
    }
    Ok(ComponentDistance {
        distance: best.0.sqrt(),
        coefficients: best.1,
    })
}

/// `min_t |M - exp(sum t_s B_s)|_F`, approximated from above.
pub fn component_distance(m: &Tensor, basis: &LieBasis) -> Result<f64> {
    closest_in_component(m, basis).map(|d| d.distance)
}
