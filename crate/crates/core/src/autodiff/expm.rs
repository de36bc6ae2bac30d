//! Matrix exponential by scaling and squaring around a truncated Taylor core.
//!
//! The forward pass keeps every Horner stage and every squaring stage so the
//! backward pass is the exact chain rule of the computed recursion.

use crate::error::{Error, Result};
use crate::linalg::square_dim;
use crate::tensor::{gemm, Tensor};

/// 1-norm bound for the scaled argument.
const SCALED_NORM_BOUND: f64 = 1.0;
/// Taylor degree; the remainder at norm 1 is below 1/21! ~ 2e-20.
const TAYLOR_DEGREE: usize = 20;

#[derive(Clone, Debug)]
pub(crate) struct MatExpCache {
    m: usize,
    squarings: u32,
    scaled: Vec<f64>,
    /// Horner stages `P_q, P_{q-1}, ..., P_0` with `P_q = I`.
    horner: Vec<Vec<f64>>,
    /// Squaring stages `X_0, ..., X_s` where `X_0 = P_0` and `X_s = exp(A)`.
    squares: Vec<Vec<f64>>,
}

fn one_norm(m: usize, a: &[f64]) -> f64 {
    (0..m)
        .map(|j| (0..m).map(|i| a[i * m + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn identity(m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m * m];
    for i in 0..m {
        v[i * m + i] = 1.0;
    }
    v
}

pub(crate) fn matexp_forward(a: &Tensor) -> Result<(Tensor, MatExpCache)> {
    let m = square_dim(a)?;
    if !a.all_finite() {
        return Err(Error::NonFinite("matexp argument".into()));
    }
    let norm = one_norm(m, a.data());
    let squarings = if norm > SCALED_NORM_BOUND {
        (norm / SCALED_NORM_BOUND).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let factor = 0.5f64.powi(squarings as i32);
    let scaled: Vec<f64> = a.data().iter().map(|x| x * factor).collect();

    let mut horner = Vec::with_capacity(TAYLOR_DEGREE + 1);
    horner.push(identity(m));
    for j in (1..=TAYLOR_DEGREE).rev() {
        let prev = horner.last().expect("non-empty");
        let mut next = vec![0.0; m * m];
        gemm(m, m, m, &scaled, false, prev, false, &mut next, 0.0);
        let inv_j = 1.0 / j as f64;
        for (i, v) in next.iter_mut().enumerate() {
            *v *= inv_j;
            if i % (m + 1) == 0 {
                *v += 1.0;
            }
        }
        horner.push(next);
    }

    let mut squares = Vec::with_capacity(squarings as usize + 1);
    squares.push(horner.last().expect("non-empty").clone());
    for _ in 0..squarings {
        let x = squares.last().expect("non-empty");
        let mut y = vec![0.0; m * m];
        gemm(m, m, m, x, false, x, false, &mut y, 0.0);
        squares.push(y);
    }
    let out = Tensor::new(vec![m, m], squares.last().expect("non-empty").clone())?;
    if !out.all_finite() {
        return Err(Error::NonFinite("matexp result (argument too large)".into()));
    }
    Ok((
        out,
        MatExpCache {
            m,
            squarings,
            scaled,
            horner,
            squares,
        },
    ))
}

/// Gradient of a scalar loss w.r.t. `A` given its gradient w.r.t. `exp(A)`.
pub(crate) fn matexp_backward(cache: &MatExpCache, grad_out: &[f64]) -> Vec<f64> {
    let m = cache.m;
    let mut g = grad_out.to_vec();
    // Y = X X  =>  dX = G X^T + X^T G
    for x in cache.squares[..cache.squarings as usize].iter().rev() {
        let mut next = vec![0.0; m * m];
        gemm(m, m, m, &g, false, x, true, &mut next, 0.0);
        gemm(m, m, m, x, true, &g, false, &mut next, 1.0);
        g = next;
    }
    // Horner: P_{j-1} = I + S P_j / j, walked from P_0 back to P_q.
    let mut grad_scaled = vec![0.0; m * m];
    let q = TAYLOR_DEGREE;
    for step in 0..q {
        let j = step + 1;
        // P_{j-1} is horner[q - j + 1], P_j is horner[q - j].
        let p_j = &cache.horner[q - j];
        let inv_j = 1.0 / j as f64;
        let gs: Vec<f64> = g.iter().map(|v| v * inv_j).collect();
        gemm(m, m, m, &gs, false, p_j, true, &mut grad_scaled, 1.0);
        let mut next = vec![0.0; m * m];
        gemm(m, m, m, &cache.scaled, true, &gs, false, &mut next, 0.0);
        g = next;
    }
    let factor = 0.5f64.powi(cache.squarings as i32);
    grad_scaled.iter().map(|v| v * factor).collect()
}

/// Matrix exponential of a finite square matrix.
pub fn matexp(a: &Tensor) -> Result<Tensor> {
    matexp_forward(a).map(|(out, _)| out)
}
