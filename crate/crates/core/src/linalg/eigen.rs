//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use super::dense::Matrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const REL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;
// Components this close to the peak magnitude count as tied for the sign rule.
const TIE_TOL: f64 = 1e-12;

/// `m = U · diag(values) · Uᵀ` with ascending `values`.
///
/// Each eigenvector's largest-magnitude component (first one on ties, within
/// 1e-12) is
/// nonnegative, so identical input bits give identical output bits.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub vectors: Matrix,
    pub values: Vec<f64>,
}

impl EigenSystem {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let n = self.n();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            for (j, v) in scaled.row_mut(i).iter_mut().enumerate() {
                *v *= self.values[j];
            }
        }
        scaled.matmul_t(&self.vectors).expect("square factors")
    }
}

pub fn eig_sym(m: &Matrix) -> Result<EigenSystem> {
    let n = m.rows();
    let scale = m.max_abs().max(1.0);
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }

    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let tol = REL_TOL * m.frobenius_norm();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    let residual = off_diagonal_norm(&a);
    if !converged && residual > tol {
        return Err(Error::NoConvergence {
            what: "jacobi eigensolver",
            iterations: MAX_SWEEPS,
            residual,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));

    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let peak = (0..n).fold(0.0f64, |m, r| m.max(v[(r, src)].abs()));
        let lead = (0..n)
            .find(|&r| v[(r, src)].abs() >= peak - TIE_TOL)
            .unwrap_or(0);
        let sign = if v[(lead, src)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, dst)] = sign * v[(r, src)];
        }
    }
    Ok(EigenSystem { vectors, values })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    (2.0 * s).sqrt()
}

/// One Jacobi rotation in the (p, q) plane annihilating `a[p][q]`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
