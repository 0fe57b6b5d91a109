//! Linear graph diffusion distance and optimised prolongation operators.
//!
//! The distance between a coarse graph `G₁` and a fine graph `G₂` is
//! `inf ‖(1/α)·P·L(G₁) − α·L(G₂)·P‖_F` over column-orthonormal `P`. The
//! pipeline eigendecomposes both Laplacians, matches eigenvalues with a
//! rectangular assignment, lifts the matching to a warm start and polishes it
//! on the Stiefel manifold.

mod refine;
mod rlap;
mod search;

pub use refine::{
    lgdd_objective, refine_orthogonal, refine_orthogonal_traced, residual, Prolongation,
    RefineTrace,
};
pub use rlap::{rlap_solve, Assignment};
pub use search::{
    coarse_search, distance_rows_csv, limit_curve, search_rows_csv, LimitFamily, LimitRow,
    SearchRow,
};

use crate::error::{dim_err, Error, Result};
use crate::graph::{laplacian, Graph};
use crate::linalg::{eig_sym, EigenSystem, Matrix, StructureMatrix};

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )))
    }
}

/// `(λ₁/α − α·λ₂)²`.
pub fn assignment_cost(lambda1: f64, lambda2: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((lambda1 / alpha - alpha * lambda2).powi(2))
}

/// `C[j][l] = cost(λ_coarse_j, λ_fine_l)`.
pub fn cost_matrix(coarse: &[f64], fine: &[f64], alpha: f64) -> Result<Matrix> {
    check_alpha(alpha)?;
    let mut c = Matrix::zeros(coarse.len(), fine.len());
    for (j, &a) in coarse.iter().enumerate() {
        for (l, &b) in fine.iter().enumerate() {
            c[(j, l)] = (a / alpha - alpha * b).powi(2);
        }
    }
    Ok(c)
}

/// `U_fine · P̃ · U_coarseᵀ` where `P̃[l][j] = 1` for each assigned `(j, l)`.
pub fn warm_start(e_coarse: &EigenSystem, e_fine: &EigenSystem, a: &Assignment) -> Result<Matrix> {
    let (nc, nf) = (e_coarse.n(), e_fine.n());
    if a.pairs.len() != nc {
        return Err(dim_err(
            "warm_start",
            format!("{} pairs for {nc} coarse modes", a.pairs.len()),
        ));
    }
    let mut used = vec![false; nf];
    // Columns of U_fine picked by the assignment, in coarse order.
    let mut picked = Matrix::zeros(nf, nc);
    for &(j, l) in &a.pairs {
        if j >= nc || l >= nf || used[l] {
            return Err(dim_err(
                "warm_start",
                format!("pair ({j}, {l}) is not a valid injection"),
            ));
        }
        used[l] = true;
        for r in 0..nf {
            picked[(r, j)] = e_fine.vectors[(r, l)];
        }
    }
    picked.matmul_t(&e_coarse.vectors)
}

/// Everything the pipeline produced for one graph pair.
#[derive(Clone, Debug)]
pub struct GddReport {
    pub prolongation: Prolongation,
    pub assignment: Assignment,
    /// Objective at the warm start, before refinement.
    pub warm_objective: f64,
    pub trace: RefineTrace,
}

impl GddReport {
    pub fn distance(&self) -> f64 {
        self.prolongation.objective
    }
}

/// Laplacian and its eigensystem, reusable across many comparisons.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub laplacian: StructureMatrix,
    pub eigen: EigenSystem,
}

impl Spectrum {
    pub fn of(g: &Graph) -> Result<Self> {
        let laplacian = laplacian(g);
        let eigen = eig_sym(&laplacian.to_dense())?;
        Ok(Self { laplacian, eigen })
    }
}

pub fn gdd_spectra(coarse: &Spectrum, fine: &Spectrum, alpha: f64) -> Result<GddReport> {
    check_alpha(alpha)?;
    let (nc, nf) = (coarse.eigen.n(), fine.eigen.n());
    if nc > nf {
        return Err(Error::InvalidArgument(format!(
            "coarse graph ({nc} nodes) is larger than fine graph ({nf} nodes)"
        )));
    }
    let cost = cost_matrix(&coarse.eigen.values, &fine.eigen.values, alpha)?;
    let assignment = rlap_solve(&cost)?;
    let p0 = warm_start(&coarse.eigen, &fine.eigen, &assignment)?;
    let warm_objective = lgdd_objective(&p0, &coarse.laplacian, &fine.laplacian, alpha)?;
    let (prolongation, trace) =
        refine_orthogonal_traced(&p0, &coarse.laplacian, &fine.laplacian, alpha)?;
    Ok(GddReport {
        prolongation,
        assignment,
        warm_objective,
        trace,
    })
}

pub fn gdd_report(g_coarse: &Graph, g_fine: &Graph, alpha: f64) -> Result<GddReport> {
    check_alpha(alpha)?;
    if g_coarse.n() > g_fine.n() {
        return Err(Error::InvalidArgument(format!(
            "coarse graph {} ({} nodes) is larger than fine graph {} ({} nodes)",
            g_coarse.name,
            g_coarse.n(),
            g_fine.name,
            g_fine.n()
        )));
    }
    gdd_spectra(&Spectrum::of(g_coarse)?, &Spectrum::of(g_fine)?, alpha)
}

/// Optimised prolongation from `g_coarse` to `g_fine`; its `objective` is
/// the distance.
pub fn gdd(g_coarse: &Graph, g_fine: &Graph, alpha: f64) -> Result<Prolongation> {
    gdd_report(g_coarse, g_fine, alpha).map(|r| r.prolongation)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::rlap::tests::brute_force;
    use super::*;
    use crate::graph::make_tube;
    use crate::rng::seeded;

    pub(crate) fn random_graph(n: usize, rng: &mut impl Rng) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(0.5) {
                    edges.push((u, v, rng.random_range(0.5..2.0)));
                }
            }
        }
        Graph::new(n, edges, format!("random{n}")).unwrap()
    }

    fn path(n: usize) -> Graph {
        Graph::new(n, (0..n - 1).map(|i| (i, i + 1, 1.0)), format!("path{n}")).unwrap()
    }

    #[test]
    fn cost_examples() {
        assert_eq!(assignment_cost(1.5, 1.5, 1.0).unwrap(), 0.0);
        assert_eq!(assignment_cost(-2.0, 0.0, 1.0).unwrap(), 4.0);
        let a = std::f64::consts::SQRT_2;
        assert!((assignment_cost(-4.0, -1.0, a).unwrap() - 2.0).abs() < 1e-12);
        assert!(assignment_cost(1.0, 1.0, 0.0).is_err());
        assert!(assignment_cost(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn identical_graphs_give_identity() {
        let g = make_tube(3, 4, 1, 1.0).unwrap();
        let s = Spectrum::of(&g).unwrap();
        let ident = Assignment {
            pairs: (0..g.n()).map(|i| (i, i)).collect(),
            total_cost: 0.0,
        };
        let p = warm_start(&s.eigen, &s.eigen, &ident).unwrap();
        assert!(p.max_abs_diff(&Matrix::identity(g.n())) < 1e-10);
        let refined =
            refine_orthogonal(&Matrix::identity(g.n()), &s.laplacian, &s.laplacian, 1.0).unwrap();
        assert_eq!(refined.objective, 0.0);
        assert_eq!(refined.p, Matrix::identity(g.n()));
        assert!(gdd(&g, &g, 1.0).unwrap().objective < 1e-8);
    }

    #[test]
    fn warm_start_is_orthonormal_and_matches_rlap_cost() {
        let mut rng = seeded(3);
        for _ in 0..20 {
            let nc = rng.random_range(2..=5);
            let nf = rng.random_range(nc..=8);
            let (g1, g2) = (random_graph(nc, &mut rng), random_graph(nf, &mut rng));
            let r = gdd_report(&g1, &g2, 1.0).unwrap();
            let p0 = warm_start(
                &Spectrum::of(&g1).unwrap().eigen,
                &Spectrum::of(&g2).unwrap().eigen,
                &r.assignment,
            )
            .unwrap();
            assert!(p0.orthonormality_defect() < 1e-10);
            assert!((r.warm_objective.powi(2) - r.assignment.total_cost).abs() < 1e-9);
            assert!(r.distance() <= r.warm_objective + 1e-9);
        }
    }

    #[test]
    fn warm_start_rejects_bad_assignment() {
        let s = Spectrum::of(&path(3)).unwrap();
        let bad = Assignment {
            pairs: vec![(0, 0), (1, 0), (2, 1)],
            total_cost: 0.0,
        };
        assert!(warm_start(&s.eigen, &s.eigen, &bad).is_err());
    }

    #[test]
    fn refinement_trace_is_monotone_from_a_rotated_start() {
        let mut rng = seeded(5);
        let g1 = random_graph(4, &mut rng);
        let g2 = random_graph(6, &mut rng);
        let (s1, s2) = (Spectrum::of(&g1).unwrap(), Spectrum::of(&g2).unwrap());
        let start = thin_start(6, 4, &mut rng);
        let (p, trace) =
            refine_orthogonal_traced(&start, &s1.laplacian, &s2.laplacian, 1.0).unwrap();
        assert!(trace.objective.len() > 1);
        for w in trace.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(trace.defect.iter().all(|&d| d < 1e-6));
        assert!(p.objective <= trace.objective[0]);
    }

    fn thin_start(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        crate::linalg::thin_q(&Matrix::from_vec(rows, cols, data).unwrap()).unwrap()
    }

    #[test]
    fn refinement_rejects_non_orthonormal_start() {
        let s = Spectrum::of(&path(3)).unwrap();
        assert!(
            refine_orthogonal(&Matrix::filled(3, 3, 1.0), &s.laplacian, &s.laplacian, 1.0).is_err()
        );
    }

    /// Smallest objective over every subpermutation warm start.
    fn exhaustive_warm_objective(g1: &Graph, g2: &Graph) -> f64 {
        let (s1, s2) = (Spectrum::of(g1).unwrap(), Spectrum::of(g2).unwrap());
        let cost = cost_matrix(&s1.eigen.values, &s2.eigen.values, 1.0).unwrap();
        brute_force(&cost).sqrt()
    }

    #[test]
    fn refined_beats_exhaustive_subpermutations() {
        let mut rng = seeded(8);
        for _ in 0..10 {
            let g1 = random_graph(4, &mut rng);
            let g2 = random_graph(6, &mut rng);
            let d = gdd(&g1, &g2, 1.0).unwrap().objective;
            assert!(d <= exhaustive_warm_objective(&g1, &g2) + 1e-9);
        }
    }

    #[test]
    fn paths_match_exhaustive() {
        let d = gdd(&path(3), &path(4), 1.0).unwrap().objective;
        assert!((d - exhaustive_warm_objective(&path(3), &path(4))).abs() < 1e-6);
    }

    #[test]
    fn relabeling_does_not_change_distance() {
        let mut rng = seeded(9);
        let g1 = random_graph(4, &mut rng);
        let g2 = random_graph(7, &mut rng);
        let d = gdd(&g1, &g2, 1.0).unwrap().objective;
        let perm1 = [2, 0, 3, 1];
        let perm2 = [6, 4, 5, 0, 2, 1, 3];
        let d1 = gdd(&g1.relabeled(&perm1).unwrap(), &g2, 1.0)
            .unwrap()
            .objective;
        let d2 = gdd(&g1, &g2.relabeled(&perm2).unwrap(), 1.0)
            .unwrap()
            .objective;
        assert!((d - d1).abs() < 1e-6);
        assert!((d - d2).abs() < 1e-6);
    }

    #[test]
    fn size_order_enforced() {
        assert!(gdd(&path(4), &path(3), 1.0).is_err());
    }
}
