//! Rectangular linear assignment by shortest augmenting paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Injective matching of every row (coarse eigen-index) to a column (fine
/// eigen-index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, column)` pairs, one per row, in row order.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    /// Column assigned to each row.
    pub fn columns(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(_, l)| l).collect()
    }
}

/// Minimum-cost injection of the rows of `cost` into its columns.
///
/// Jonker–Volgenant style: one Dijkstra-like search over reduced costs per
/// row, with dual potentials kept feasible throughout. Among equally short
/// paths the search extends through a free column first, then the lowest
/// column index.
pub fn rlap_solve(cost: &Matrix) -> Result<Assignment> {
    let (nr, nc) = cost.shape();
    if nr > nc {
        return Err(Error::InvalidArgument(format!(
            "assignment needs rows <= columns, got {nr}x{nc}"
        )));
    }
    if !cost.is_finite() {
        return Err(Error::InvalidArgument(
            "assignment costs must be finite".into(),
        ));
    }

    let mut u = vec![0.0; nr];
    let mut v = vec![0.0; nc];
    let mut col4row: Vec<Option<usize>> = vec![None; nr];
    let mut row4col: Vec<Option<usize>> = vec![None; nc];
    let mut path = vec![0usize; nc];
    let mut dist = vec![f64::INFINITY; nc];
    let mut seen_row = vec![false; nr];
    let mut seen_col = vec![false; nc];
    let mut remaining: Vec<usize> = Vec::with_capacity(nc);

    for cur in 0..nr {
        dist.fill(f64::INFINITY);
        seen_row.fill(false);
        seen_col.fill(false);
        remaining.clear();
        remaining.extend(0..nc);

        let mut i = cur;
        let mut min_val = 0.0;
        let sink = loop {
            seen_row[i] = true;
            let mut best: Option<usize> = None;
            let mut lowest = f64::INFINITY;
            for (it, &j) in remaining.iter().enumerate() {
                let r = min_val + cost[(i, j)] - u[i] - v[j];
                if r < dist[j] {
                    path[j] = i;
                    dist[j] = r;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let jb = remaining[b];
                        dist[j] < lowest
                            || (dist[j] == lowest
                                && (row4col[j].is_none(), std::cmp::Reverse(j))
                                    > (row4col[jb].is_none(), std::cmp::Reverse(jb)))
                    }
                };
                if better {
                    lowest = dist[j];
                    best = Some(it);
                }
            }
            let idx = best.expect("at least one free column remains");
            min_val = lowest;
            let j = remaining.swap_remove(idx);
            seen_col[j] = true;
            match row4col[j] {
                None => break j,
                Some(r) => i = r,
            }
        };

        u[cur] += min_val;
        for r in 0..nr {
            if seen_row[r] && r != cur {
                let c = col4row[r].expect("visited rows are matched");
                u[r] += min_val - dist[c];
            }
        }
        for c in 0..nc {
            if seen_col[c] {
                v[c] -= min_val - dist[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = Some(r);
            let prev = col4row[r].replace(j);
            if r == cur {
                break;
            }
            j = prev.expect("augmenting path passes through matched rows");
        }
    }

    let pairs: Vec<(usize, usize)> = col4row
        .into_iter()
        .enumerate()
        .map(|(r, c)| (r, c.expect("every row matched")))
        .collect();
    let total_cost = pairs.iter().map(|&(r, c)| cost[(r, c)]).sum();
    Ok(Assignment { pairs, total_cost })
}

#[cfg(test)]
pub(crate) mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::rng::seeded;

    /// Exhaustive minimum over all injections.
    pub(crate) fn brute_force(cost: &Matrix) -> f64 {
        fn go(cost: &Matrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.rows() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost.cols() {
                if !used[j] {
                    used[j] = true;
                    go(cost, row + 1, used, acc + cost[(row, j)], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(cost, 0, &mut vec![false; cost.cols()], 0.0, &mut best);
        best
    }

    fn check_valid(a: &Assignment, nr: usize, nc: usize) {
        assert_eq!(a.pairs.len(), nr);
        let mut used = vec![false; nc];
        for (k, &(r, c)) in a.pairs.iter().enumerate() {
            assert_eq!(r, k);
            assert!(!used[c]);
            used[c] = true;
        }
    }

    #[test]
    fn identity_padded_avoids_diagonal() {
        let cost = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let a = rlap_solve(&cost).unwrap();
        check_valid(&a, 2, 3);
        assert_eq!(a.total_cost, 0.0);
        assert!(a.pairs.iter().all(|&(r, c)| r != c));
    }

    #[test]
    fn single_row_picks_cheapest() {
        let a = rlap_solve(&Matrix::from_rows(&[[5.0, 2.0, 7.0]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn ties_go_to_lowest_column() {
        let a = rlap_solve(&Matrix::filled(2, 4, 1.0)).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn rejects_tall_and_non_finite() {
        assert!(rlap_solve(&Matrix::zeros(3, 2)).is_err());
        assert!(rlap_solve(&Matrix::from_rows(&[[f64::NAN, 1.0]])).is_err());
    }

    #[test]
    fn random_four_by_six_matches_exhaustive() {
        let mut rng = seeded(11);
        for _ in 0..50 {
            let data: Vec<f64> = (0..24).map(|_| rng.random_range(0.0..10.0)).collect();
            let cost = Matrix::from_vec(4, 6, data).unwrap();
            let a = rlap_solve(&cost).unwrap();
            check_valid(&a, 4, 6);
            assert!((a.total_cost - brute_force(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn up_to_five_by_seven_over_hundred_trials() {
        let mut rng = seeded(12);
        for _ in 0..100 {
            let nr = rng.random_range(1..=5);
            let nc = rng.random_range(nr..=7);
            // Small integer costs make ties common.
            let data: Vec<f64> = (0..nr * nc)
                .map(|_| rng.random_range(0..4) as f64)
                .collect();
            let cost = Matrix::from_vec(nr, nc, data).unwrap();
            let a = rlap_solve(&cost).unwrap();
            check_valid(&a, nr, nc);
            assert!((a.total_cost - brute_force(&cost)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn optimal_against_exhaustive(
            nr in 1usize..=4,
            extra in 0usize..=2,
            seed in any::<u64>(),
        ) {
            let nc = nr + extra;
            let mut rng = seeded(seed);
            let data: Vec<f64> = (0..nr * nc).map(|_| rng.random_range(-5.0..5.0)).collect();
            let cost = Matrix::from_vec(nr, nc, data).unwrap();
            let a = rlap_solve(&cost).unwrap();
            prop_assert!((a.total_cost - brute_force(&cost)).abs() < 1e-9);
        }
    }
}
