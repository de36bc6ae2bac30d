//! Invariant symmetric forms of a basis and principal angles between bases.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::LieBasis;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantMetric {
    /// Symmetric, unit Frobenius norm.
    pub j: Tensor,
    /// `max_i |B_i^T J + J B_i|_F`.
    pub residual: f64,
    /// Number of (numerically) minimal directions; above 1 the minimizer is not unique.
    pub multiplicity: usize,
}

/// Orthonormal basis of symmetric `m x m` matrices under the Frobenius product.
fn symmetric_basis(m: usize) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            let mut t = Tensor::zeros(&[m, m]);
            if i == j {
                t.set2(i, i, 1.0);
            } else {
                let v = std::f64::consts::FRAC_1_SQRT_2;
                t.set2(i, j, v);
                t.set2(j, i, v);
            }
            out.push(t);
        }
    }
    out
}

fn lyapunov(b: &Tensor, j: &Tensor) -> Tensor {
    b.transpose()
        .matmul(j)
        .expect("square")
        .add(&j.matmul(b).expect("square"))
}

/// Unit symmetric `J` minimizing `sum_i |B_i^T J + J B_i|_F^2`.
pub fn invariant_metric(basis: &LieBasis) -> Result<InvariantMetric> {
    if basis.k() == 0 {
        return Err(Error::Config("invariant metric needs at least one generator".into()));
    }
    let m = basis.m;
    if m < 2 {
        return Err(Error::Config("invariant metric needs m >= 2".into()));
    }
    let sym = symmetric_basis(m);
    let n = sym.len();
    let rows = basis.k() * m * m;
    let mut op = DMatrix::<f64>::zeros(rows, n);
    for (c, s) in sym.iter().enumerate() {
        for (i, b) in basis.matrices.iter().enumerate() {
            for (r, v) in lyapunov(b, s).data().iter().enumerate() {
                op[(i * m * m + r, c)] = *v;
            }
        }
    }
    let gram = op.transpose() * &op;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lo = eig.eigenvalues[order[0]].max(0.0);
    let hi = eig.eigenvalues[order[n - 1]].max(0.0);
    let tol = 1e-10 * hi.max(1e-300) + lo * 1e-6;
    let multiplicity = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] - lo <= tol)
        .count();
    let v = eig.eigenvectors.column(order[0]);
    let mut j = Tensor::zeros(&[m, m]);
    for (c, s) in sym.iter().enumerate() {
        j.add_assign(&s.scale(v[c]));
    }
    let norm = j.norm();
    j = j.scale(1.0 / norm);
    let lead = (0..m)
        .map(|i| j.at2(i, i))
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    if lead < 0.0 {
        j = j.scale(-1.0);
    }
    let residual = basis
        .matrices
        .iter()
        .map(|b| lyapunov(b, &j).norm())
        .fold(0.0, f64::max);
    Ok(InvariantMetric {
        j,
        residual,
        multiplicity,
    })
}

/// Orthonormal columns spanning the vectorized generators, or `None` if rank deficient.
fn orthonormal_span(basis: &LieBasis) -> Option<DMatrix<f64>> {
    let d = basis.m * basis.m;
    let a = DMatrix::from_fn(d, basis.k(), |r, c| basis.matrices[c].data()[r]);
    let svd = a.clone().svd(true, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 || svd.singular_values.iter().any(|&s| s <= 1e-10 * smax) {
        return None;
    }
    svd.u
}

/// Principal angles in degrees between the spans of two bases, ascending.
///
/// Spans of different dimension, or rank-deficient bases, report a 90 degree angle.
pub fn principal_angles(a: &LieBasis, b: &LieBasis) -> Vec<f64> {
    let k = a.k().max(b.k());
    if a.m != b.m || a.k() != b.k() || a.k() == 0 {
        return vec![90.0; k.max(1)];
    }
    let (Some(qa), Some(qb)) = (orthonormal_span(a), orthonormal_span(b)) else {
        return vec![90.0; k];
    };
    let s = (qa.transpose() * qb).singular_values();
    let mut angles: Vec<f64> = s.iter().map(|v| v.clamp(-1.0, 1.0).acos().to_degrees()).collect();
    angles.sort_by(f64::total_cmp);
    angles
}

/// Largest principal angle in degrees.
pub fn subspace_angle(a: &LieBasis, b: &LieBasis) -> f64 {
    principal_angles(a, b).into_iter().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cosine_similarity;
    use crate::lie::{rotation_generator, so13_basis, so3_in_lorentz};

    #[test]
    fn rotation_preserves_euclidean_form() {
        let b = LieBasis::new(2, vec![rotation_generator()]).unwrap();
        let j = invariant_metric(&b).unwrap();
        let want = Tensor::eye(2).scale(std::f64::consts::FRAC_1_SQRT_2);
        assert!(j.j.max_abs_diff(&want) < 1e-12);
        assert!(j.residual < 1e-12);
        assert_eq!(j.multiplicity, 1);
    }

    #[test]
    fn boost_preserves_split_form() {
        let b = LieBasis::new(2, vec![Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]])]).unwrap();
        let j = invariant_metric(&b).unwrap();
        let c = cosine_similarity(&j.j, &Tensor::diag(&[1.0, -1.0]));
        assert!(c.abs() > 1.0 - 1e-12);
    }

    #[test]
    fn lorentz_basis_gives_minkowski() {
        let j = invariant_metric(&so13_basis()).unwrap();
        let c = cosine_similarity(&j.j, &Tensor::diag(&[-1.0, 1.0, 1.0, 1.0]));
        assert!(c.abs() >= 0.999, "{c}");
        assert!(j.residual <= 1e-8);
        assert!((j.j.norm() - 1.0).abs() < 1e-9);
        assert_eq!(j.j, j.j.transpose());
    }

    #[test]
    fn rotations_alone_leave_two_invariant_forms() {
        assert_eq!(invariant_metric(&so3_in_lorentz()).unwrap().multiplicity, 2);
    }

    #[test]
    fn angles() {
        let a = so13_basis();
        assert!(subspace_angle(&a, &a) < 1e-6);
        let mut shuffled = a.clone();
        shuffled.matrices.reverse();
        shuffled.matrices[0] = shuffled.matrices[0].add(&shuffled.matrices[1]);
        assert!(subspace_angle(&a, &shuffled) < 1e-6);
        assert_eq!(subspace_angle(&a, &so3_in_lorentz()), 90.0);
        let p = LieBasis::new(2, vec![Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]])]).unwrap();
        let q = LieBasis::new(2, vec![Tensor::from_rows(&[[1.0, 1.0], [0.0, 0.0]])]).unwrap();
        assert!((subspace_angle(&p, &q) - 45.0).abs() < 1e-9);
    }
}
