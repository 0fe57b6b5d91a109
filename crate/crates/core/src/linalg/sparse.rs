//! Compressed-sparse-row square matrices used as GCN structure matrices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dense::Matrix;
use crate::error::{dim_err, Error, Result};

/// Square sparse matrix in CSR layout. Exact zeros are never stored, so
/// [`nnz`](Self::nnz) is the `|Z|` of the GCN cost model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl StructureMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(dim_err(
                    "from_triplets",
                    format!("entry ({i},{j}) outside {n}x{n}"),
                ));
            }
            *acc.entry((i, j)).or_insert(0.0) += v;
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(acc.len());
        let mut values = Vec::with_capacity(acc.len());
        for ((i, j), v) in acc {
            if v != 0.0 {
                row_ptr[i + 1] += 1;
                col_idx.push(j);
                values.push(v);
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(m: &Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(dim_err(
                "from_dense",
                format!("{:?} is not square", m.shape()),
            ));
        }
        let n = m.rows();
        Self::from_triplets(
            n,
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| (i, j, m[(i, j)])),
        )
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0))).expect("in range")
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(p) => self.values[range.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .fold(0.0f64, |m, (i, j, v)| m.max((v - self.get(j, i)).abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `Z · X` for `X` holding one or more vertically stacked `n`-row blocks;
    /// each block is multiplied independently. Only stored entries are read.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        self.apply(x, false)
    }

    /// `Zᵀ · X` with the same block convention as [`spmm`](Self::spmm).
    pub fn spmm_t(&self, x: &Matrix) -> Result<Matrix> {
        self.apply(x, true)
    }

    fn apply(&self, x: &Matrix, transpose: bool) -> Result<Matrix> {
        let n = self.n;
        if n == 0 || !x.rows().is_multiple_of(n) {
            return Err(dim_err(
                "spmm",
                format!("{}x{} structure vs {} input rows", n, n, x.rows()),
            ));
        }
        let f = x.cols();
        let mut out = Matrix::zeros(x.rows(), f);
        for block in 0..x.rows() / n {
            let base = block * n;
            for i in 0..n {
                for (j, v) in self.row(i) {
                    let (dst, src) = if transpose { (j, i) } else { (i, j) };
                    let src_row = x.row(base + src);
                    let dst_row = out.row_mut(base + dst);
                    for (d, s) in dst_row.iter_mut().zip(src_row) {
                        *d += v * s;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &StructureMatrix) -> Result<StructureMatrix> {
        if self.n != other.n {
            return Err(dim_err(
                "sparse matmul",
                format!("{} vs {}", self.n, other.n),
            ));
        }
        let mut trip = Vec::new();
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for i in 0..self.n {
            acc.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    *acc.entry(j).or_insert(0.0) += a * b;
                }
            }
            trip.extend(acc.iter().map(|(&j, &v)| (i, j, v)));
        }
        Self::from_triplets(self.n, trip)
    }

    /// `Zʳ` by repeated sparse products.
    pub fn power(&self, r: usize) -> Result<StructureMatrix> {
        if r < 1 {
            return Err(Error::InvalidArgument(format!(
                "structure power must be >= 1, got {r}"
            )));
        }
        let mut out = self.clone();
        for _ in 1..r {
            out = out.matmul(self)?;
        }
        Ok(out)
    }

    /// Relabels nodes: entry `(i, j)` moves to `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> Result<StructureMatrix> {
        if perm.len() != self.n {
            return Err(dim_err("permuted", "permutation length"));
        }
        Self::from_triplets(
            self.n,
            self.triplets().map(|(i, j, v)| (perm[i], perm[j], v)),
        )
    }
}
