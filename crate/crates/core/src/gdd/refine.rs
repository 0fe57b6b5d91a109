//! Descent on the Stiefel manifold of column-orthonormal matrices.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{thin_q, Matrix, StructureMatrix};

const MAX_ITERATIONS: usize = 1000;
const GRAD_TOL: f64 = 1e-8;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const START_DEFECT_TOL: f64 = 1e-6;

/// Dense `n_fine × n_coarse` inter-scale operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Prolongation {
    pub p: Matrix,
    pub alpha: f64,
    /// Final Frobenius residual `‖(1/α)·P·L_coarse − α·L_fine·P‖_F`.
    pub objective: f64,
}

impl Prolongation {
    pub fn n_fine(&self) -> usize {
        self.p.rows()
    }

    pub fn n_coarse(&self) -> usize {
        self.p.cols()
    }
}

/// Per-iterate record of a refinement run. Index 0 is the starting point.
#[derive(Clone, Debug, Default)]
pub struct RefineTrace {
    pub objective: Vec<f64>,
    pub defect: Vec<f64>,
    pub gradient_norm: Vec<f64>,
}

/// The residual `R = (1/α)·P·L_c − α·L_f·P`.
pub fn residual(
    p: &Matrix,
    l_coarse: &StructureMatrix,
    l_fine: &StructureMatrix,
    alpha: f64,
) -> Result<Matrix> {
    if p.rows() != l_fine.n() || p.cols() != l_coarse.n() {
        return Err(dim_err(
            "lgdd residual",
            format!(
                "P is {}x{}, graphs have {} and {} nodes",
                p.rows(),
                p.cols(),
                l_fine.n(),
                l_coarse.n()
            ),
        ));
    }
    // P·L_c = (L_c·Pᵀ)ᵀ because L_c is symmetric.
    let pl = l_coarse.spmm(&p.transpose())?.transpose();
    let lp = l_fine.spmm(p)?;
    let mut r = pl.scale(1.0 / alpha);
    r.axpy(-alpha, &lp)?;
    Ok(r)
}

/// `‖(1/α)·P·L_c − α·L_f·P‖_F`.
pub fn lgdd_objective(
    p: &Matrix,
    l_coarse: &StructureMatrix,
    l_fine: &StructureMatrix,
    alpha: f64,
) -> Result<f64> {
    Ok(residual(p, l_coarse, l_fine, alpha)?.frobenius_norm())
}

fn euclidean_gradient(
    r: &Matrix,
    l_coarse: &StructureMatrix,
    l_fine: &StructureMatrix,
    alpha: f64,
) -> Result<Matrix> {
    let rl = l_coarse.spmm(&r.transpose())?.transpose();
    let lr = l_fine.spmm(r)?;
    let mut g = rl.scale(2.0 / alpha);
    g.axpy(-2.0 * alpha, &lr)?;
    Ok(g)
}

/// `G − P·sym(PᵀG)`: projection onto the tangent space at `P`.
fn riemannian_gradient(p: &Matrix, g: &Matrix) -> Result<Matrix> {
    let ptg = p.t_matmul(g)?;
    let sym = ptg.add(&ptg.transpose())?.scale(0.5);
    g.sub(&p.matmul(&sym)?)
}

pub fn refine_orthogonal(
    p0: &Matrix,
    l_coarse: &StructureMatrix,
    l_fine: &StructureMatrix,
    alpha: f64,
) -> Result<Prolongation> {
    refine_orthogonal_traced(p0, l_coarse, l_fine, alpha).map(|(p, _)| p)
}

/// Minimises the squared objective over column-orthonormal `P` starting at
/// `p0`. Steps are QR retractions with Armijo backtracking that halves from
/// a unit step.
pub fn refine_orthogonal_traced(
    p0: &Matrix,
    l_coarse: &StructureMatrix,
    l_fine: &StructureMatrix,
    alpha: f64,
) -> Result<(Prolongation, RefineTrace)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if p0.rows() < p0.cols() {
        return Err(Error::InvalidArgument(format!(
            "prolongation must be tall, got {}x{}",
            p0.rows(),
            p0.cols()
        )));
    }
    let defect0 = p0.orthonormality_defect();
    if !(defect0 < START_DEFECT_TOL) {
        return Err(Error::InvalidArgument(format!(
            "starting point is not column-orthonormal (defect {defect0:e})"
        )));
    }

    let mut p = p0.clone();
    let mut r = residual(&p, l_coarse, l_fine, alpha)?;
    let mut f = r.frobenius_norm().powi(2);
    let mut trace = RefineTrace::default();
    trace.objective.push(f.sqrt());
    trace.defect.push(defect0);

    for _ in 0..MAX_ITERATIONS {
        let g = euclidean_gradient(&r, l_coarse, l_fine, alpha)?;
        let xi = riemannian_gradient(&p, &g)?;
        let gnorm = xi.frobenius_norm();
        trace.gradient_norm.push(gnorm);
        if gnorm < GRAD_TOL {
            break;
        }
        let slope = gnorm * gnorm;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial = p.clone();
            trial.axpy(-step, &xi)?;
            let q = thin_q(&trial)?;
            let rq = residual(&q, l_coarse, l_fine, alpha)?;
            let fq = rq.frobenius_norm().powi(2);
            if fq <= f - ARMIJO * step * slope {
                accepted = Some((q, rq, fq));
                break;
            }
            step *= 0.5;
        }
        let Some((q, rq, fq)) = accepted else {
            // No representable step decreases the objective: stationary to
            // working precision.
            break;
        };
        p = q;
        r = rq;
        f = fq;
        trace.objective.push(f.sqrt());
        trace.defect.push(p.orthonormality_defect());
    }

    Ok((
        Prolongation {
            p,
            alpha,
            objective: f.sqrt(),
        },
        trace,
    ))
}
