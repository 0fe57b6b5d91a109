//! Multiscale and baseline GCN ensembles.
//!
//! Every model is a sum of member GCNs. Members of a GPCN run on
//! successively coarser graphs: the input is restricted by `Pᵀ` on the way
//! down and each member's output is prolonged by `P` on the way back up, so
//! the result is `gcn(Z₁, X) + Σᵢ P₁ᵢ·gcn(Zᵢ, P₁ᵢᵀ·X)`. DiffPool models use the
//! same wiring with input-dependent soft assignments in place of `P`.

mod table;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use table::{build_from_table, Hierarchy, MODEL_NAMES};

use crate::activation::Activation;
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::gcn::{
    gcn_forward_tape, gcn_layer_tape, GcnLayerParams, GcnParams, GcnSpec, GcnVars, LayerVars,
    Structure,
};
use crate::gdd::Prolongation;
use crate::linalg::{Matrix, StructureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Members on a chain of graphs linked by prolongations.
    Gpcn,
    /// Members all on the fine graph.
    PlainEnsemble,
    /// Members on powers of the fine structure matrix.
    Ngcn,
    /// GPCN wiring with learned soft pooling in place of prolongations.
    DiffPool,
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    /// Fine level first.
    pub levels: Vec<GcnSpec>,
    /// `P_{i,i+1}` for GPCN models, fine side first.
    pub prolongations: Vec<Prolongation>,
    /// Prolongation entries are trained with the filters.
    pub adaptive: bool,
    pub in_features: usize,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        kind: ModelKind,
        levels: Vec<GcnSpec>,
        prolongations: Vec<Prolongation>,
        adaptive: bool,
        in_features: usize,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            kind,
            levels,
            prolongations,
            adaptive,
            in_features,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.levels.is_empty() {
            return bad("model needs at least one level".into());
        }
        if self.in_features == 0 {
            return bad("model needs at least one input feature".into());
        }
        let n0 = self.levels[0].n;
        if self.levels[0].z.is_none() {
            return bad("fine level needs a structure matrix".into());
        }
        match self.kind {
            ModelKind::Gpcn => {
                if self.prolongations.len() + 1 != self.levels.len() {
                    return bad(format!(
                        "{} levels need {} prolongations, got {}",
                        self.levels.len(),
                        self.levels.len() - 1,
                        self.prolongations.len()
                    ));
                }
                for (i, p) in self.prolongations.iter().enumerate() {
                    let (fine, coarse) = (&self.levels[i], &self.levels[i + 1]);
                    if p.p.shape() != (fine.n, coarse.n) {
                        return Err(dim_err(
                            "model spec",
                            format!(
                                "P_{{{},{}}} is {:?}, levels have {} and {} nodes",
                                i + 1,
                                i + 2,
                                p.p.shape(),
                                fine.n,
                                coarse.n
                            ),
                        ));
                    }
                    if coarse.z.is_none() {
                        return bad(format!("level {} needs a structure matrix", i + 1));
                    }
                }
            }
            ModelKind::PlainEnsemble | ModelKind::Ngcn => {
                if self.levels.iter().any(|l| l.n != n0 || l.z.is_none()) {
                    return bad("ensemble members must share the fine node count".into());
                }
            }
            ModelKind::DiffPool => {
                if self.levels.windows(2).any(|w| w[1].n > w[0].n) {
                    return bad("pooled levels must not grow".into());
                }
            }
        }
        if self.kind != ModelKind::Gpcn && (!self.prolongations.is_empty() || self.adaptive) {
            return bad("only GPCN models carry prolongations".into());
        }
        Ok(())
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn n_fine(&self) -> usize {
        self.levels[0].n
    }

    /// Glorot-initialised filters drawn level by level, then pooling layers;
    /// prolongations start at the spec's matrices.
    pub fn init(&self, rng: &mut impl Rng) -> ModelParams {
        let levels = self
            .levels
            .iter()
            .map(|l| l.init(self.in_features, rng))
            .collect();
        let pools = if self.kind == ModelKind::DiffPool {
            self.levels
                .windows(2)
                .map(|w| GcnLayerParams::glorot(self.in_features, w[1].n, Activation::Linear, rng))
                .collect()
        } else {
            Vec::new()
        };
        ModelParams {
            levels,
            prolongations: self.prolongations.iter().map(|p| p.p.clone()).collect(),
            pools,
        }
    }
}

/// Trainable state of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub levels: Vec<GcnParams>,
    /// Current `P_{i,i+1}` values.
    pub prolongations: Vec<Matrix>,
    /// One pooling layer per level below the finest (DiffPool only).
    pub pools: Vec<GcnLayerParams>,
}

impl ModelParams {
    /// Every tensor with the level that owns it. `P_{i,i+1}` and pooling
    /// layer `i` belong to level `i + 1`, the level they feed.
    pub fn tensors_mut(&mut self) -> Vec<(usize, &mut Matrix)> {
        let mut out = Vec::new();
        for (lvl, p) in self.levels.iter_mut().enumerate() {
            out.extend(p.tensors_mut().into_iter().map(|t| (lvl, t)));
        }
        for (i, p) in self.prolongations.iter_mut().enumerate() {
            out.push((i + 1, p));
        }
        for (i, l) in self.pools.iter_mut().enumerate() {
            out.push((i + 1, &mut l.w));
            out.push((i + 1, &mut l.b));
        }
        out
    }

    pub fn tensors(&self) -> Vec<(usize, &Matrix)> {
        let mut out = Vec::new();
        for (lvl, p) in self.levels.iter().enumerate() {
            out.extend(p.tensors().into_iter().map(|t| (lvl, t)));
        }
        for (i, p) in self.prolongations.iter().enumerate() {
            out.push((i + 1, p));
        }
        for (i, l) in self.pools.iter().enumerate() {
            out.push((i + 1, &l.w));
            out.push((i + 1, &l.b));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Places the parameters on `tape`. Level `i` is trainable iff
    /// `trainable[i]`; prolongations additionally require an adaptive model.
    pub fn register(&self, spec: &ModelSpec, tape: &mut Tape, trainable: &[bool]) -> ModelVars {
        let on = |i: usize| trainable.get(i).copied().unwrap_or(false);
        let levels = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, p)| p.register(tape, on(i)))
            .collect();
        let prolongations = self
            .prolongations
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if spec.adaptive && on(i + 1) {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        let pools = self
            .pools
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut put = |m: &Matrix| {
                    if on(i + 1) {
                        tape.param(m.clone())
                    } else {
                        tape.constant(m.clone())
                    }
                };
                LayerVars {
                    w: put(&l.w),
                    b: put(&l.b),
                    activation: l.activation,
                }
            })
            .collect();
        ModelVars {
            levels,
            prolongations,
            pools,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub levels: Vec<GcnVars>,
    pub prolongations: Vec<Var>,
    pub pools: Vec<LayerVars>,
}

impl ModelVars {
    /// Gradients in the order of [`ModelParams::tensors`].
    pub fn gradients(&self, grads: &Gradients) -> Vec<Option<Matrix>> {
        let mut out: Vec<Option<Matrix>> = Vec::new();
        for l in &self.levels {
            out.extend(l.gradients(grads));
        }
        out.extend(self.prolongations.iter().map(|&v| grads.get(v).cloned()));
        for l in &self.pools {
            out.push(grads.get(l.w).cloned());
            out.push(grads.get(l.b).cloned());
        }
        out
    }
}

/// Handles into one recorded model forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Stacked `n_fine × 1` predictions.
    pub output: Var,
    /// Each active level's own GCN output, at that level's resolution.
    pub level_outputs: Vec<Option<Var>>,
}

/// Records the forward pass of `spec` on `tape` for `blocks` stacked samples
/// in `x`. Levels with `active[i] == false` are left out of the sum.
pub fn forward_tape(
    spec: &ModelSpec,
    vars: &ModelVars,
    tape: &mut Tape,
    x: Var,
    active: &[bool],
) -> Result<ModelOutput> {
    let rows = tape.value(x).rows();
    let n0 = spec.n_fine();
    if rows == 0 || !rows.is_multiple_of(n0) || tape.value(x).cols() != spec.in_features {
        return Err(dim_err(
            "model forward",
            format!(
                "input {:?} for n = {n0}, F = {}",
                tape.value(x).shape(),
                spec.in_features
            ),
        ));
    }
    if active.len() != spec.n_levels() || !active.contains(&true) {
        return Err(Error::InvalidArgument(format!(
            "level mask {active:?} must have {} entries with at least one set",
            spec.n_levels()
        )));
    }
    let blocks = rows / n0;
    match spec.kind {
        ModelKind::PlainEnsemble | ModelKind::Ngcn => forward_members(spec, vars, tape, x, active),
        ModelKind::Gpcn => forward_gpcn(spec, vars, tape, x, active),
        ModelKind::DiffPool => forward_diffpool(spec, vars, tape, x, active, blocks),
    }
}

fn z_of(level: &GcnSpec) -> &Arc<StructureMatrix> {
    level.z.as_ref().expect("validated fixed structure")
}

fn forward_members(
    spec: &ModelSpec,
    vars: &ModelVars,
    tape: &mut Tape,
    x: Var,
    active: &[bool],
) -> Result<ModelOutput> {
    let mut total: Option<Var> = None;
    let mut level_outputs = vec![None; spec.n_levels()];
    for (i, level) in spec.levels.iter().enumerate() {
        if !active[i] {
            continue;
        }
        let y = gcn_forward_tape(tape, Structure::Sparse(z_of(level)), &vars.levels[i], x)?.output;
        level_outputs[i] = Some(y);
        total = Some(match total {
            None => y,
            Some(t) => tape.add(t, y)?,
        });
    }
    Ok(ModelOutput {
        output: total.expect("mask has an active level"),
        level_outputs,
    })
}

/// Deepest active level; restriction stops there.
fn deepest(active: &[bool]) -> usize {
    active
        .iter()
        .rposition(|&a| a)
        .expect("mask has an active level")
}

fn forward_gpcn(
    spec: &ModelSpec,
    vars: &ModelVars,
    tape: &mut Tape,
    x: Var,
    active: &[bool],
) -> Result<ModelOutput> {
    let last = deepest(active);
    let mut inputs = vec![x];
    for i in 0..last {
        let xi = tape.project(vars.prolongations[i], inputs[i], true)?;
        inputs.push(xi);
    }
    let mut level_outputs = vec![None; spec.n_levels()];
    for i in 0..=last {
        if active[i] {
            let y = gcn_forward_tape(
                tape,
                Structure::Sparse(z_of(&spec.levels[i])),
                &vars.levels[i],
                inputs[i],
            )?
            .output;
            level_outputs[i] = Some(y);
        }
    }
    // y₁ + P₁₂(y₂ + P₂₃(y₃ + …)), innermost first.
    let mut acc: Option<Var> = None;
    for i in (0..=last).rev() {
        if let Some(a) = acc {
            acc = Some(tape.project(vars.prolongations[i], a, false)?);
        }
        if let Some(y) = level_outputs[i] {
            acc = Some(match acc {
                None => y,
                Some(a) => tape.add(y, a)?,
            });
        }
    }
    Ok(ModelOutput {
        output: acc.expect("mask has an active level"),
        level_outputs,
    })
}

fn forward_diffpool(
    spec: &ModelSpec,
    vars: &ModelVars,
    tape: &mut Tape,
    x: Var,
    active: &[bool],
    blocks: usize,
) -> Result<ModelOutput> {
    let last = deepest(active);
    let z0 = z_of(&spec.levels[0]);
    let mut inputs = vec![x];
    // Dense per-sample structure for pooled levels; index 0 unused.
    let mut dense_z: Vec<Option<Var>> = vec![None];
    let mut assign = Vec::new();
    for i in 0..last {
        let z_i = match dense_z[i] {
            None => Structure::Sparse(z0),
            Some(z) => Structure::Dense { z, blocks },
        };
        let (_, scores) = gcn_layer_tape(tape, z_i, inputs[i], &vars.pools[i])?;
        let s = tape.row_softmax(scores);
        let x_next = tape.block_project(s, inputs[i], blocks, true)?;
        let zs = match dense_z[i] {
            None => tape.sparse(z0, s)?,
            Some(z) => tape.block_project(z, s, blocks, false)?,
        };
        let z_next = tape.block_project(s, zs, blocks, true)?;
        inputs.push(x_next);
        dense_z.push(Some(z_next));
        assign.push(s);
    }
    let mut level_outputs = vec![None; spec.n_levels()];
    for i in 0..=last {
        if active[i] {
            let z_i = match dense_z[i] {
                None => Structure::Sparse(z0),
                Some(z) => Structure::Dense { z, blocks },
            };
            level_outputs[i] =
                Some(gcn_forward_tape(tape, z_i, &vars.levels[i], inputs[i])?.output);
        }
    }
    let mut acc: Option<Var> = None;
    for i in (0..=last).rev() {
        if let Some(a) = acc {
            acc = Some(tape.block_project(assign[i], a, blocks, false)?);
        }
        if let Some(y) = level_outputs[i] {
            acc = Some(match acc {
                None => y,
                Some(a) => tape.add(y, a)?,
            });
        }
    }
    Ok(ModelOutput {
        output: acc.expect("mask has an active level"),
        level_outputs,
    })
}

/// Model predictions for stacked samples, all levels active.
pub fn model_forward(spec: &ModelSpec, params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    model_forward_masked(spec, params, x, &vec![true; spec.n_levels()])
}

pub fn model_forward_masked(
    spec: &ModelSpec,
    params: &ModelParams,
    x: &Matrix,
    active: &[bool],
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = params.register(spec, &mut tape, &[]);
    let xv = tape.constant(x.clone());
    let out = forward_tape(spec, &vars, &mut tape, xv, active)?;
    Ok(tape.value(out.output).clone())
}

/// `P_{1,2}·P_{2,3}·…`, left to right. An empty chain is the identity of
/// size `n` (pass the fine node count).
pub fn compose_prolongations(ps: &[&Matrix], n: usize) -> Result<Matrix> {
    let Some((first, rest)) = ps.split_first() else {
        return Ok(Matrix::identity(n));
    };
    let mut acc = (*first).clone();
    for p in rest {
        if acc.cols() != p.rows() {
            return Err(dim_err(
                "compose_prolongations",
                format!("{:?} then {:?}", acc.shape(), p.shape()),
            ));
        }
        acc = acc.matmul(p)?;
    }
    Ok(acc)
}

/// `∂E/∂X = Σᵢ P₁ᵢ·Zᵢᵀ·(∂E/∂A₁⁽ⁱ⁾)·W₁⁽ⁱ⁾ᵀ` with `E` the sum of all ensemble
/// outputs. Each level's `∂E/∂A₁⁽ⁱ⁾` is taken from a backward sweep of
/// `1ᵀ·P₁ᵢ·gcnᵢ(P₁ᵢᵀ·X)`.
pub fn ensemble_input_gradient(
    spec: &ModelSpec,
    params: &ModelParams,
    x: &Matrix,
) -> Result<Matrix> {
    if spec.kind == ModelKind::DiffPool {
        return Err(Error::InvalidArgument(
            "analytic input gradient needs fixed structure matrices".into(),
        ));
    }
    let n0 = spec.n_fine();
    if !x.rows().is_multiple_of(n0) || x.cols() != spec.in_features {
        return Err(dim_err(
            "ensemble_input_gradient",
            format!("input {:?}", x.shape()),
        ));
    }
    let mut total = Matrix::zeros(x.rows(), x.cols());
    for (i, level) in spec.levels.iter().enumerate() {
        let p1i = if spec.kind == ModelKind::Gpcn {
            let chain: Vec<&Matrix> = params.prolongations[..i].iter().collect();
            Some(compose_prolongations(&chain, n0)?)
        } else {
            None
        };
        let mut tape = Tape::new();
        let vars = params.levels[i].register(&mut tape, true);
        let xi = match &p1i {
            Some(p) if i > 0 => {
                let pv = tape.constant(p.clone());
                let xv = tape.constant(x.clone());
                tape.project(pv, xv, true)?
            }
            _ => tape.constant(x.clone()),
        };
        let restricted = tape.value(xi).clone();
        let z = z_of(level);
        let out = gcn_forward_tape(&mut tape, Structure::Sparse(z), &vars, xi)?;
        let lifted = match &p1i {
            Some(p) if i > 0 => {
                let pv = tape.constant(p.clone());
                tape.project(pv, out.output, false)?
            }
            _ => out.output,
        };
        let e = tape.sum(lifted);
        let grads = tape.backward(e)?;
        let g_a1 = grads
            .get(out.a1)
            .expect("first layer depends on trainable weights");
        let g_level = z.spmm_t(g_a1)?.matmul_t(&params.levels[i].gcn[0].w)?;
        debug_assert_eq!(g_level.shape(), restricted.shape());
        match &p1i {
            Some(p) if i > 0 => {
                let mut t = Tape::new();
                let pv = t.constant(p.clone());
                let gv = t.constant(g_level);
                let up = t.project(pv, gv, false)?;
                total.add_assign(t.value(up))?;
            }
            _ => total.add_assign(&g_level)?,
        }
    }
    Ok(total)
}

/// `∂E/∂X` from one backward sweep over the whole model with `X` as a leaf.
pub fn tape_ensemble_input_gradient(
    spec: &ModelSpec,
    params: &ModelParams,
    x: &Matrix,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = params.register(spec, &mut tape, &[]);
    let xv = tape.param(x.clone());
    let out = forward_tape(spec, &vars, &mut tape, xv, &vec![true; spec.n_levels()])?;
    let e = tape.sum(out.output);
    let mut grads = tape.backward(e)?;
    Ok(grads.take(xv).expect("input is a leaf"))
}

/// Pooled graph for one level: `S = softmax(Z·X·W + b)`, `X' = SᵀX`,
/// `Z' = SᵀZS` (single sample, dense result).
pub fn diffpool_coarsen(
    pool: &GcnLayerParams,
    z: &StructureMatrix,
    x: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let scores = crate::gcn::gcn_layer(
        z,
        x,
        &GcnLayerParams {
            activation: Activation::Linear,
            ..pool.clone()
        },
    )?;
    let s = crate::activation::row_softmax(&scores);
    let x_coarse = s.t_matmul(x)?;
    let z_coarse = s.t_matmul(&z.spmm(&s)?)?;
    Ok((z_coarse, x_coarse, s))
}
