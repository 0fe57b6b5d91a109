use super::dense::Matrix;
use crate::error::{dim_err, Result};

/// Q factor of the thin QR decomposition of a tall matrix, normalised so that
/// `R` has a nonnegative diagonal (the unique Q for full-rank input).
pub fn thin_q(a: &Matrix) -> Result<Matrix> {
    let (m, n) = a.shape();
    if m < n {
        return Err(dim_err("thin_q", format!("{m}x{n} is wider than tall")));
    }
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut diag_sign = vec![1.0; n];

    for k in 0..n {
        let norm = (k..m).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        if norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] > 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            reflectors.push(Vec::new());
            diag_sign[k] = alpha.signum();
            continue;
        }
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..m {
                r[(i, j)] -= 2.0 * v[i - k] * dot;
            }
        }
        diag_sign[k] = if alpha < 0.0 { -1.0 } else { 1.0 };
        reflectors.push(v);
    }

    let mut q = Matrix::eye(m, n);
    for k in (0..n).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for j in 0..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * q[(i, j)]).sum();
            if dot != 0.0 {
                for i in k..m {
                    q[(i, j)] -= 2.0 * v[i - k] * dot;
                }
            }
        }
    }
    for j in 0..n {
        if diag_sign[j] < 0.0 {
            for i in 0..m {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_is_orthonormal_and_spans_input() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 7.0], [-1.0, 0.5]]);
        let q = thin_q(&a).unwrap();
        assert!(q.orthonormality_defect() < 1e-13);
        // R = Qᵀ A must be upper triangular with a positive diagonal.
        let r = q.t_matmul(&a).unwrap();
        assert!(r[(1, 0)].abs() < 1e-12);
        assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0);
        assert!(q.matmul(&r).unwrap().max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn orthonormal_input_is_fixed() {
        let e = Matrix::eye(4, 2);
        assert!(thin_q(&e).unwrap().max_abs_diff(&e) < 1e-15);
    }
}
