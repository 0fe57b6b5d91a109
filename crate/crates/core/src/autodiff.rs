//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node whose value is computed
//! eagerly. Nodes are appended in evaluation order, so walking the tape
//! backwards is a valid reverse topological order. Nodes that do not depend on
//! any parameter leaf never receive a gradient.
//!
//! Row-block operations treat an input with `b·n` rows as `b` stacked samples
//! of `n` rows each; this is how a batch is pushed through one tape.

use std::sync::Arc;

use crate::activation::{row_softmax, Activation};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{gemm_slices, Matrix, StructureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Same `a` applied to every row block of `x`.
    Project {
        a: Var,
        x: Var,
        transpose: bool,
    },
    /// Row block `k` of `a` applied to row block `k` of `x`.
    BlockProject {
        a: Var,
        x: Var,
        transpose: bool,
        blocks: usize,
    },
    Sparse {
        z: Arc<StructureMatrix>,
        x: Var,
    },
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    RowSoftmax(Var),
    ConcatCols(Vec<Var>),
    Square(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every tape node that depends on a
/// parameter.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a · x_k` (or `aᵀ · x_k` when `transpose`) for each row block `x_k`.
    pub fn project(&mut self, a: Var, x: Var, transpose: bool) -> Result<Var> {
        let am = self.value(a);
        let xm = self.value(x);
        let (r, c) = if transpose {
            (am.cols(), am.rows())
        } else {
            am.shape()
        };
        if c == 0 || !xm.rows().is_multiple_of(c) {
            return Err(dim_err(
                "project",
                format!("operator {:?} vs input rows {}", am.shape(), xm.rows()),
            ));
        }
        let blocks = xm.rows() / c;
        let mut out = Matrix::zeros(blocks * r, xm.cols());
        batched_gemm(
            Blocks::shared(am),
            transpose,
            Blocks::stacked(xm, c),
            false,
            &mut out,
            r,
            false,
            blocks,
        );
        let ng = self.needs(&[a, x]);
        Ok(self.push(out, Op::Project { a, x, transpose }, ng))
    }

    /// Per-sample operator: row block `k` of `a` (shape `r × c`) times row
    /// block `k` of `x`, or its transpose when `transpose`.
    pub fn block_project(&mut self, a: Var, x: Var, blocks: usize, transpose: bool) -> Result<Var> {
        let am = self.value(a);
        let xm = self.value(x);
        if blocks == 0 || !am.rows().is_multiple_of(blocks) {
            return Err(dim_err(
                "block_project",
                format!("{} rows in {blocks} blocks", am.rows()),
            ));
        }
        let ar = am.rows() / blocks;
        let (r, c) = if transpose {
            (am.cols(), ar)
        } else {
            (ar, am.cols())
        };
        if xm.rows() != blocks * c {
            return Err(dim_err(
                "block_project",
                format!("input rows {} vs {}", xm.rows(), blocks * c),
            ));
        }
        let mut out = Matrix::zeros(blocks * r, xm.cols());
        batched_gemm(
            Blocks::stacked(am, ar),
            transpose,
            Blocks::stacked(xm, c),
            false,
            &mut out,
            r,
            false,
            blocks,
        );
        let ng = self.needs(&[a, x]);
        Ok(self.push(
            out,
            Op::BlockProject {
                a,
                x,
                transpose,
                blocks,
            },
            ng,
        ))
    }

    /// Constant sparse structure matrix applied to every row block of `x`.
    pub fn sparse(&mut self, z: &Arc<StructureMatrix>, x: Var) -> Result<Var> {
        let value = z.spmm(self.value(x))?;
        let ng = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::Sparse {
                z: Arc::clone(z),
                x,
            },
            ng,
        ))
    }

    /// Adds a `1 × C` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xm, bm) = (self.value(x), self.value(b));
        if bm.rows() != 1 || bm.cols() != xm.cols() {
            return Err(dim_err(
                "add_bias",
                format!("{:?} + {:?}", xm.shape(), bm.shape()),
            ));
        }
        let mut out = xm.clone();
        for i in 0..out.rows() {
            for (o, bv) in out.row_mut(i).iter_mut().zip(bm.as_slice()) {
                *o += bv;
            }
        }
        let ng = self.needs(&[x, b]);
        Ok(self.push(out, Op::AddBias(x, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.needs(&[a]);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let value = act.apply_matrix(self.value(a));
        let ng = self.needs(&[a]);
        self.push(value, Op::Act(a, act), ng)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = row_softmax(self.value(a));
        let ng = self.needs(&[a]);
        self.push(value, Op::RowSoftmax(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::hstack(&mats)?;
        let ng = self.needs(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let ng = self.needs(&[a]);
        self.push(value, Op::Square(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.needs(&[a]);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::filled(1, 1, m.sum() / m.len().max(1) as f64);
        let ng = self.needs(&[a]);
        self.push(value, Op::Mean(a), ng)
    }

    /// Mean squared difference between `pred` and `target`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::EmptyTape);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(dim_err(
                "backward",
                format!("loss has shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut send = |v: Var, delta: Matrix| -> Result<()> {
            if !self.nodes[v.0].needs_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    send(*a, g.matmul_t(self.value(*b))?)?;
                }
                if self.nodes[b.0].needs_grad {
                    send(*b, self.value(*a).t_matmul(g)?)?;
                }
            }
            Op::Project { a, x, transpose } => {
                let am = self.value(*a);
                let xm = self.value(*x);
                let (r, c) = if *transpose {
                    (am.cols(), am.rows())
                } else {
                    am.shape()
                };
                let blocks = xm.rows() / c;
                if self.nodes[x.0].needs_grad {
                    // dx_k = op(a)ᵀ g_k
                    let mut dx = Matrix::zeros(xm.rows(), xm.cols());
                    batched_gemm(
                        Blocks::shared(am),
                        !*transpose,
                        Blocks::stacked(g, r),
                        false,
                        &mut dx,
                        c,
                        false,
                        blocks,
                    );
                    send(*x, dx)?;
                }
                if self.nodes[a.0].needs_grad {
                    // da = Σ g_k x_kᵀ, or Σ x_k g_kᵀ for the transposed form
                    let mut da = Matrix::zeros(am.rows(), am.cols());
                    if *transpose {
                        batched_gemm(
                            Blocks::stacked(xm, c),
                            false,
                            Blocks::stacked(g, r),
                            true,
                            &mut da,
                            c,
                            true,
                            blocks,
                        );
                    } else {
                        batched_gemm(
                            Blocks::stacked(g, r),
                            false,
                            Blocks::stacked(xm, c),
                            true,
                            &mut da,
                            r,
                            true,
                            blocks,
                        );
                    }
                    send(*a, da)?;
                }
            }
            Op::BlockProject {
                a,
                x,
                transpose,
                blocks,
            } => {
                let am = self.value(*a);
                let xm = self.value(*x);
                let ar = am.rows() / blocks;
                let (r, c) = if *transpose {
                    (am.cols(), ar)
                } else {
                    (ar, am.cols())
                };
                if self.nodes[x.0].needs_grad {
                    let mut dx = Matrix::zeros(xm.rows(), xm.cols());
                    batched_gemm(
                        Blocks::stacked(am, ar),
                        !*transpose,
                        Blocks::stacked(g, r),
                        false,
                        &mut dx,
                        c,
                        false,
                        *blocks,
                    );
                    send(*x, dx)?;
                }
                if self.nodes[a.0].needs_grad {
                    let mut da = Matrix::zeros(am.rows(), am.cols());
                    if *transpose {
                        batched_gemm(
                            Blocks::stacked(xm, c),
                            false,
                            Blocks::stacked(g, r),
                            true,
                            &mut da,
                            ar,
                            false,
                            *blocks,
                        );
                    } else {
                        batched_gemm(
                            Blocks::stacked(g, r),
                            false,
                            Blocks::stacked(xm, c),
                            true,
                            &mut da,
                            ar,
                            false,
                            *blocks,
                        );
                    }
                    send(*a, da)?;
                }
            }
            Op::Sparse { z, x } => send(*x, z.spmm_t(g)?)?,
            Op::AddBias(x, b) => {
                send(*x, g.clone())?;
                if self.nodes[b.0].needs_grad {
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, v) in db.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    send(*b, db)?;
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.scale(-1.0))?;
            }
            Op::Scale(a, s) => send(*a, g.scale(*s))?,
            Op::Act(a, act) => {
                let d = match act {
                    Activation::Linear => g.clone(),
                    Activation::Relu => {
                        g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?
                    }
                    Activation::Sigmoid => g.zip_map(&node.value, |gv, s| gv * s * (1.0 - s))?,
                };
                send(*a, d)?;
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
                    for ((dv, yv), gv) in d.row_mut(i).iter_mut().zip(y.row(i)).zip(g.row(i)) {
                        *dv = yv * (gv - dot);
                    }
                }
                send(*a, d)?;
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.nodes[p.0].needs_grad {
                        let mut d = Matrix::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        send(*p, d)?;
                    }
                    off += w;
                }
            }
            Op::Square(a) => send(*a, g.zip_map(self.value(*a), |gv, x| 2.0 * x * gv)?)?,
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                send(*a, Matrix::filled(r, c, g[(0, 0)]))?;
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                send(*a, Matrix::filled(r, c, g[(0, 0)] / (r * c).max(1) as f64))?;
            }
        }
        Ok(())
    }
}

/// A matrix viewed either as one shared operand or as stacked row blocks.
#[derive(Clone, Copy)]
struct Blocks<'a> {
    m: &'a Matrix,
    rows: usize,
    shared: bool,
}

impl<'a> Blocks<'a> {
    fn shared(m: &'a Matrix) -> Self {
        Self {
            m,
            rows: m.rows(),
            shared: true,
        }
    }

    fn stacked(m: &'a Matrix, rows: usize) -> Self {
        Self {
            m,
            rows,
            shared: false,
        }
    }

    fn block(&self, k: usize) -> &'a [f64] {
        let c = self.m.cols();
        if self.shared {
            self.m.as_slice()
        } else {
            &self.m.as_slice()[k * self.rows * c..(k + 1) * self.rows * c]
        }
    }

    /// Logical shape and strides of block `k` after an optional transpose.
    fn view(&self, transpose: bool) -> ((usize, usize), (isize, isize)) {
        let c = self.m.cols();
        if transpose {
            ((c, self.rows), (1, c as isize))
        } else {
            ((self.rows, c), (c as isize, 1))
        }
    }
}

/// For each block `k`: `out_k (+)= op(l_k) · op(r_k)`. When `accumulate` the
/// products are summed into the whole of `out`; otherwise block `k` of `out`
/// (with `out_rows` rows) receives product `k`.
#[allow(clippy::too_many_arguments)]
fn batched_gemm(
    l: Blocks<'_>,
    tl: bool,
    r: Blocks<'_>,
    tr: bool,
    out: &mut Matrix,
    out_rows: usize,
    accumulate: bool,
    blocks: usize,
) {
    let ((m, k), ls) = l.view(tl);
    let ((k2, n), rs) = r.view(tr);
    debug_assert_eq!(k, k2);
    debug_assert_eq!(m, out_rows);
    debug_assert_eq!(n, out.cols());
    let stride = out_rows * n;
    for b in 0..blocks {
        let (dst, beta) = if accumulate {
            (&mut out.as_mut_slice()[..], if b == 0 { 0.0 } else { 1.0 })
        } else {
            (&mut out.as_mut_slice()[b * stride..(b + 1) * stride], 0.0)
        };
        gemm_slices(1.0, l.block(b), ls, r.block(b), rs, (m, k, n), beta, dst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Central-difference gradient of `f` at `x`.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-5;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            g.as_mut_slice()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm()).max(1e-12)
    }

    #[test]
    fn square_at_three() {
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(1, 1, 3.0));
        let y = t.square(x);
        let loss = t.sum(y);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap()[(0, 0)], 6.0);
    }

    #[test]
    fn norm_of_product_matches_differences() {
        let a = pseudo(4, 3, 1);
        let x0 = pseudo(3, 1, 2);
        let f = |x: &Matrix| a.matmul(x).unwrap().frobenius_norm().powi(2);
        let mut t = Tape::new();
        let av = t.constant(a.clone());
        let xv = t.param(x0.clone());
        let y = t.matmul(av, xv).unwrap();
        let sq = t.square(y);
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert!(rel_err(g.get(xv).unwrap(), &numeric_grad(&x0, f)) < 1e-6);
        assert!(g.get(av).is_none());
    }

    #[test]
    fn composite_ops_match_differences() {
        let z = Arc::new(
            StructureMatrix::from_triplets(
                3,
                [
                    (0, 0, -1.0),
                    (0, 1, 1.0),
                    (1, 0, 1.0),
                    (1, 1, -2.0),
                    (1, 2, 1.0),
                    (2, 1, 1.0),
                    (2, 2, -1.0),
                ],
            )
            .unwrap(),
        );
        let x = pseudo(6, 2, 3);
        let w0 = pseudo(2, 4, 4);
        let b0 = pseudo(1, 4, 5);
        let p0 = pseudo(3, 2, 6);
        let s0 = pseudo(6, 2, 7);

        let eval = |w: &Matrix,
                    p: &Matrix,
                    s: &Matrix,
                    grads: bool|
         -> (f64, Option<(Matrix, Matrix, Matrix)>) {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let wv = t.param(w.clone());
            let bv = t.param(b0.clone());
            let pv = t.param(p.clone());
            let sv = t.param(s.clone());
            let zx = t.sparse(&z, xv).unwrap();
            let a = t.matmul(zx, wv).unwrap();
            let a = t.add_bias(a, bv).unwrap();
            let h1 = t.activation(a, Activation::Sigmoid);
            let h2 = t.activation(a, Activation::Relu);
            let h = t.concat_cols(&[h1, h2]).unwrap();
            // restrict each 3-row sample to 2 rows and prolong back
            let coarse = t.project(pv, h, true).unwrap();
            let fine = t.project(pv, coarse, false).unwrap();
            let sm = t.row_softmax(sv);
            let pooled = t.block_project(sm, fine, 2, true).unwrap();
            let back = t.block_project(sm, pooled, 2, false).unwrap();
            let mixed = t.sub(back, h).unwrap();
            let mixed = t.scale(mixed, 0.7);
            let sq = t.square(mixed);
            let loss = t.mean(sq);
            let value = t.value(loss)[(0, 0)];
            if !grads {
                return (value, None);
            }
            let mut g = t.backward(loss).unwrap();
            (
                value,
                Some((
                    g.take(wv).unwrap(),
                    g.take(pv).unwrap(),
                    g.take(sv).unwrap(),
                )),
            )
        };

        let (_, Some((gw, gp, gs))) = eval(&w0, &p0, &s0, true) else {
            panic!()
        };
        let nw = numeric_grad(&w0, |w| eval(w, &p0, &s0, false).0);
        let np = numeric_grad(&p0, |p| eval(&w0, p, &s0, false).0);
        let ns = numeric_grad(&s0, |s| eval(&w0, &p0, s, false).0);
        assert!(rel_err(&gw, &nw) < 1e-6, "w {}", rel_err(&gw, &nw));
        assert!(rel_err(&gp, &np) < 1e-6, "p {}", rel_err(&gp, &np));
        assert!(rel_err(&gs, &ns) < 1e-6, "s {}", rel_err(&gs, &ns));
    }

    #[test]
    fn backward_errors() {
        let t = Tape::new();
        assert!(matches!(t.backward(Var(0)), Err(Error::EmptyTape)));
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 1));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn project_matches_dense_per_block() {
        let a = pseudo(2, 3, 8);
        let x = pseudo(6, 2, 9);
        let mut t = Tape::new();
        let av = t.constant(a.clone());
        let xv = t.constant(x.clone());
        let y = t.project(av, xv, false).unwrap();
        for b in 0..2 {
            let want = a.matmul(&x.row_block(3 * b, 3)).unwrap();
            assert!(t.value(y).row_block(2 * b, 2).max_abs_diff(&want) < 1e-14);
        }
    }
}
