//! Sweeps of distances over candidate coarse graphs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gdd_spectra, Spectrum};
use crate::error::Result;
use crate::graph::{make_grid, make_tube, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub k: usize,
    pub p: usize,
    pub seam_weight: f64,
    pub distance: f64,
}

/// Distance from every `Tube(n_rings, k, p, w)` to `g_fine`, ordered by `k`,
/// then `p`, then `w` as given. Cells run on the rayon pool; the fine
/// spectrum is computed once.
pub fn coarse_search(
    g_fine: &Graph,
    n_rings: usize,
    k_range: &[usize],
    p_range: &[usize],
    seam_weights: &[f64],
) -> Result<Vec<SearchRow>> {
    let fine = Spectrum::of(g_fine)?;
    let mut cells = Vec::new();
    for &k in k_range {
        for &p in p_range {
            for &w in seam_weights {
                cells.push((k, p, w));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(k, p, w)| {
            let coarse = Spectrum::of(&make_tube(n_rings, k, p, w)?)?;
            let distance = gdd_spectra(&coarse, &fine, 1.0)?.distance();
            Ok(SearchRow {
                k,
                p,
                seam_weight: w,
                distance,
            })
        })
        .collect()
}

/// Coarse families compared against `Tube(2n, 13, 3)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitFamily {
    /// `Tube(n, 13, 1)`.
    Tube,
    /// `Grid(n, 13)`.
    Grid,
}

impl LimitFamily {
    pub fn name(self) -> &'static str {
        match self {
            LimitFamily::Tube => "tube",
            LimitFamily::Grid => "grid",
        }
    }

    pub fn graph(self, n: usize) -> Result<Graph> {
        match self {
            LimitFamily::Tube => make_tube(n, 13, 1, 1.0),
            LimitFamily::Grid => make_grid(n, 13),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub n: usize,
    pub family: LimitFamily,
    pub distance: f64,
}

/// Rows sorted by `n`, then by the order of `families`.
pub fn limit_curve(ns: &[usize], families: &[LimitFamily]) -> Result<Vec<LimitRow>> {
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let per_n: Vec<Vec<LimitRow>> = ns
        .par_iter()
        .map(|&n| {
            let fine = Spectrum::of(&make_tube(2 * n, 13, 3, 1.0)?)?;
            families
                .iter()
                .map(|&family| {
                    let coarse = Spectrum::of(&family.graph(n)?)?;
                    Ok(LimitRow {
                        n,
                        family,
                        distance: gdd_spectra(&coarse, &fine, 1.0)?.distance(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_n.into_iter().flatten().collect())
}

/// `k,p,seam_weight,distance` with full-precision distances.
pub fn search_rows_csv(rows: &[SearchRow]) -> String {
    let mut s = String::from("k,p,seam_weight,distance\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:e}", r.k, r.p, r.seam_weight, r.distance);
    }
    s
}

/// `n,family,distance`.
pub fn distance_rows_csv(rows: &[LimitRow]) -> String {
    let mut s = String::from("n,family,distance\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e}", r.n, r.family.name(), r.distance);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_equal_to_fine_graph_is_zero() {
        let fine = make_tube(4, 5, 1, 1.0).unwrap();
        let rows = coarse_search(&fine, 4, &[5], &[1], &[1.0]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].distance < 1e-8);
    }

    #[test]
    fn rows_follow_grid_order_and_repeat_exactly() {
        let fine = make_tube(6, 5, 1, 1.0).unwrap();
        let a = coarse_search(&fine, 3, &[3, 4], &[0, 1], &[1.0, 2.0]).unwrap();
        assert_eq!(a.len(), 8);
        let keys: Vec<_> = a.iter().map(|r| (r.k, r.p, r.seam_weight)).collect();
        assert_eq!(keys[0], (3, 0, 1.0));
        assert_eq!(keys[1], (3, 0, 2.0));
        assert_eq!(keys[7], (4, 1, 2.0));
        let b = coarse_search(&fine, 3, &[3, 4], &[0, 1], &[1.0, 2.0]).unwrap();
        assert_eq!(search_rows_csv(&a), search_rows_csv(&b));
    }

    #[test]
    fn limit_rows_are_sorted() {
        let rows = limit_curve(&[3, 2], &[LimitFamily::Tube, LimitFamily::Grid]).unwrap();
        let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
        assert_eq!(ns, vec![2, 2, 3, 3]);
        assert!(distance_rows_csv(&rows).starts_with("n,family,distance\n2,tube,"));
    }
}
