//! Weighted undirected graphs: the tube and grid families and their
//! Laplacians.
//!
//! Tube nodes are numbered ring-major, `id = ring * k + column`. Dataset
//! tensors and prolongation matrices share this ordering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::StructureMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    /// `(u, v, w)` with `u < v`, sorted, each pair once, `w > 0`.
    edges: Vec<(usize, usize, f64)>,
    pub name: String,
}

impl Graph {
    /// Validates and canonicalises an edge list. Repeated pairs (in either
    /// orientation) are merged by summing their weights.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        name: impl Into<String>,
    ) -> Result<Self> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u},{v}) outside a {n}-node graph"
                )));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop at node {u}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u},{v}) has weight {w}"
                )));
            }
            *merged.entry((u.min(v), u.max(v))).or_insert(0.0) += w;
        }
        Ok(Self {
            n,
            edges: merged.into_iter().map(|((u, v), w)| (u, v, w)).collect(),
            name: name.into(),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let key = (u.min(v), u.max(v));
        self.edges
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&key))
            .ok()
            .map(|i| self.edges[i].2)
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(u, v, w) in &self.edges {
            d[u] += w;
            d[v] += w;
        }
        d
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::InvalidArgument(
                "permutation length differs from node count".into(),
            ));
        }
        Self::new(
            self.n,
            self.edges.iter().map(|&(u, v, w)| (perm[u], perm[v], w)),
            self.name.clone(),
        )
    }

    /// Edge-list text: `n` on the first line, then `u v w` per edge in
    /// `(u, v)` order.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for &(u, v, w) in &self.edges {
            let _ = writeln!(s, "{u} {v} {w}");
        }
        s
    }

    pub fn from_edge_list(
        text: &str,
        name: impl Into<String>,
    ) -> std::result::Result<Self, String> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let n: usize = lines
            .next()
            .ok_or("empty edge list")?
            .parse()
            .map_err(|e| format!("node count: {e}"))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [u, v, w] = parts.as_slice() else {
                return Err(format!("edge line {}: expected `u v w`", lineno + 1));
            };
            let parse_err = |e: &dyn std::fmt::Display| format!("edge line {}: {e}", lineno + 1);
            edges.push((
                u.parse().map_err(|e| parse_err(&e))?,
                v.parse().map_err(|e| parse_err(&e))?,
                w.parse().map_err(|e| parse_err(&e))?,
            ));
        }
        Self::new(n, edges, name).map_err(|e| e.to_string())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        Self::from_edge_list(&text, name).map_err(|detail| Error::Parse {
            path: path.to_path_buf(),
            detail,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }
}

/// `G_Tube(n_rings, k, offset)`: a helical lattice of `n_rings` turns with `k`
/// nodes per turn.
///
/// Column `k − 1` of ring `i` joins column `0` of ring `i + offset` through a
/// seam edge of weight `seam_weight`; seam edges that would leave the tube are
/// dropped. With `offset = 0` the seam closes each ring on itself.
pub fn make_tube(n_rings: usize, k: usize, offset: usize, seam_weight: f64) -> Result<Graph> {
    if n_rings < 2 || k < 2 {
        return Err(Error::InvalidArgument(format!(
            "tube needs >= 2 rings and >= 2 columns, got ({n_rings}, {k})"
        )));
    }
    if offset >= n_rings {
        return Err(Error::InvalidArgument(format!(
            "offset {offset} must be below ring count {n_rings}"
        )));
    }
    if !(seam_weight > 0.0 && seam_weight.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "seam weight must be positive, got {seam_weight}"
        )));
    }
    let id = |ring: usize, col: usize| ring * k + col;
    let mut edges = Vec::new();
    for i in 0..n_rings {
        for j in 0..k {
            if i + 1 < n_rings {
                edges.push((id(i, j), id(i + 1, j), 1.0));
            }
            if j + 1 < k {
                edges.push((id(i, j), id(i, j + 1), 1.0));
            }
        }
        if i + offset < n_rings {
            edges.push((id(i, k - 1), id(i + offset, 0), seam_weight));
        }
    }
    let name = if seam_weight == 1.0 {
        format!("tube({n_rings},{k},{offset})")
    } else {
        format!("tube({n_rings},{k},{offset},w={seam_weight})")
    };
    Graph::new(n_rings * k, edges, name)
}

/// `rows × cols` four-neighbour lattice with unit weights.
pub fn make_grid(rows: usize, cols: usize) -> Result<Graph> {
    if rows < 1 || cols < 1 {
        return Err(Error::InvalidArgument(format!(
            "grid needs positive dimensions, got ({rows}, {cols})"
        )));
    }
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1), 1.0));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c), 1.0));
            }
        }
    }
    Graph::new(rows * cols, edges, format!("grid({rows},{cols})"))
}

/// `L(G) = A(G) − diag(A(G)·1)`: negative semidefinite, zero row sums.
pub fn laplacian(g: &Graph) -> StructureMatrix {
    let deg = g.degrees();
    let mut trip = Vec::with_capacity(2 * g.edges.len() + g.n);
    for &(u, v, w) in &g.edges {
        trip.push((u, v, w));
        trip.push((v, u, w));
    }
    for (i, d) in deg.into_iter().enumerate() {
        trip.push((i, i, -d));
    }
    StructureMatrix::from_triplets(g.n, trip).expect("edges validated on construction")
}

pub fn structure_power(z: &StructureMatrix, r: usize) -> Result<StructureMatrix> {
    z.power(r)
}
