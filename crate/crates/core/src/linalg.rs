//! Small dense linear algebra on square matrices: LU, determinant, inverse.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn square_dim(a: &Tensor) -> Result<usize> {
    match a.shape() {
        [r, c] if r == c => Ok(*r),
        s => Err(Error::NotSquare(s.to_vec())),
    }
}

/// In-place LU with partial pivoting. Returns the permutation sign, or `None` on an exact zero pivot.
fn lu_in_place(m: usize, a: &mut [f64], perm: &mut [usize]) -> Option<f64> {
    let mut sign = 1.0;
    for (i, p) in perm.iter_mut().enumerate() {
        *p = i;
    }
    for col in 0..m {
        let mut piv = col;
        let mut best = a[col * m + col].abs();
        for row in col + 1..m {
            let v = a[row * m + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best == 0.0 {
            return None;
        }
        if piv != col {
            for j in 0..m {
                a.swap(col * m + j, piv * m + j);
            }
            perm.swap(col, piv);
            sign = -sign;
        }
        let d = a[col * m + col];
        for row in col + 1..m {
            let f = a[row * m + col] / d;
            a[row * m + col] = f;
            for j in col + 1..m {
                a[row * m + j] -= f * a[col * m + j];
            }
        }
    }
    Some(sign)
}

pub fn det(a: &Tensor) -> Result<f64> {
    let m = square_dim(a)?;
    if m == 0 {
        return Ok(1.0);
    }
    let mut lu = a.data().to_vec();
    let mut perm = vec![0; m];
    match lu_in_place(m, &mut lu, &mut perm) {
        None => Ok(0.0),
        Some(sign) => Ok((0..m).fold(sign, |acc, i| acc * lu[i * m + i])),
    }
}

/// Matrix inverse; fails when `|det| <= 1e-300` or the result is non-finite.
pub fn inverse(a: &Tensor) -> Result<Tensor> {
    let m = square_dim(a)?;
    let mut lu = a.data().to_vec();
    let mut perm = vec![0; m];
    let sign = lu_in_place(m, &mut lu, &mut perm).ok_or(Error::Singular { det: 0.0 })?;
    let d = (0..m).fold(sign, |acc, i| acc * lu[i * m + i]);
    if d.abs() <= 1e-300 {
        return Err(Error::Singular { det: d });
    }
    let mut inv = vec![0.0; m * m];
    let mut col = vec![0.0; m];
    for j in 0..m {
        // Solve A x = e_j using P A = L U.
        for (i, c) in col.iter_mut().enumerate() {
            *c = if perm[i] == j { 1.0 } else { 0.0 };
        }
        for i in 0..m {
            let mut s = col[i];
            for k in 0..i {
                s -= lu[i * m + k] * col[k];
            }
            col[i] = s;
        }
        for i in (0..m).rev() {
            let mut s = col[i];
            for k in i + 1..m {
                s -= lu[i * m + k] * col[k];
            }
            col[i] = s / lu[i * m + i];
        }
        for i in 0..m {
            inv[i * m + j] = col[i];
        }
    }
    let out = Tensor::new(vec![m, m], inv)?;
    if !out.all_finite() {
        return Err(Error::Singular { det: d });
    }
    Ok(out)
}

pub fn frobenius_distance(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).norm()
}

/// Cosine similarity of two tensors viewed as flat vectors.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}
