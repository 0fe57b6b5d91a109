//! Single-scale graph convolutional network with a node-wise dense head.
//!
//! GCN layers compute `g(Z·X·W + b)`. The dense head reads the node-wise
//! concatenation of every GCN layer's output. Inputs may hold several samples
//! stacked as consecutive `n`-row blocks; every operation acts per block.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{Matrix, StructureMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnLayerParams {
    /// `F_in × F_out`.
    pub w: Matrix,
    /// `1 × F_out`, broadcast over nodes.
    pub b: Matrix,
    pub activation: Activation,
}

impl GcnLayerParams {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(f_in: usize, f_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (f_in + f_out) as f64).sqrt();
        let data = (0..f_in * f_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            w: Matrix::from_vec(f_in, f_out, data).expect("sized buffer"),
            b: Matrix::zeros(1, f_out),
            activation,
        }
    }

    pub fn f_in(&self) -> usize {
        self.w.rows()
    }

    pub fn f_out(&self) -> usize {
        self.w.cols()
    }
}

/// `g(Z·X·W + b)` for one layer, outside any tape.
pub fn gcn_layer(z: &StructureMatrix, x: &Matrix, params: &GcnLayerParams) -> Result<Matrix> {
    if x.cols() != params.f_in() {
        return Err(dim_err(
            "gcn_layer",
            format!(
                "input has {} features, W has {} rows",
                x.cols(),
                params.f_in()
            ),
        ));
    }
    let mut a = z.spmm(&x.matmul(&params.w)?)?;
    for i in 0..a.rows() {
        for (v, b) in a.row_mut(i).iter_mut().zip(params.b.as_slice()) {
            *v += b;
        }
    }
    Ok(params.activation.apply_matrix(&a))
}

/// Architecture of one GCN. `z` is `None` for levels whose structure matrix
/// is produced at run time (pooled levels).
#[derive(Clone, Debug)]
pub struct GcnSpec {
    pub n: usize,
    pub z: Option<Arc<StructureMatrix>>,
    pub gcn_widths: Vec<usize>,
    pub dense_widths: Vec<usize>,
}

impl GcnSpec {
    pub fn new(
        z: Arc<StructureMatrix>,
        gcn_widths: Vec<usize>,
        dense_widths: Vec<usize>,
    ) -> Result<Self> {
        let spec = Self {
            n: z.n(),
            z: Some(z),
            gcn_widths,
            dense_widths,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn pooled(n: usize, gcn_widths: Vec<usize>, dense_widths: Vec<usize>) -> Result<Self> {
        let spec = Self {
            n,
            z: None,
            gcn_widths,
            dense_widths,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.gcn_widths.is_empty() || self.gcn_widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "gcn widths must be positive and nonempty: {:?}",
                self.gcn_widths
            )));
        }
        if self.dense_widths.contains(&0) || self.dense_widths.last() != Some(&1) {
            return Err(Error::InvalidArgument(format!(
                "dense widths must be positive and end in 1: {:?}",
                self.dense_widths
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("gcn on an empty graph".into()));
        }
        Ok(())
    }

    /// Width of the concatenated GCN outputs fed to the dense head.
    pub fn concat_width(&self) -> usize {
        self.gcn_widths.iter().sum()
    }

    /// `(F_in, F_out)` of every GCN layer, then every dense layer.
    pub fn layer_dims(&self, in_features: usize) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let mut gcn = Vec::new();
        let mut f = in_features;
        for &c in &self.gcn_widths {
            gcn.push((f, c));
            f = c;
        }
        let mut dense = Vec::new();
        let mut f = self.concat_width();
        for &c in &self.dense_widths {
            dense.push((f, c));
            f = c;
        }
        (gcn, dense)
    }

    pub fn init(&self, in_features: usize, rng: &mut impl Rng) -> GcnParams {
        let (gdims, ddims) = self.layer_dims(in_features);
        let gcn = gdims
            .into_iter()
            .map(|(a, b)| GcnLayerParams::glorot(a, b, Activation::Relu, rng))
            .collect();
        let last = ddims.len().saturating_sub(1);
        let dense = ddims
            .into_iter()
            .enumerate()
            .map(|(i, (a, b))| {
                let act = if i == last {
                    Activation::Linear
                } else {
                    Activation::Sigmoid
                };
                GcnLayerParams::glorot(a, b, act, rng)
            })
            .collect();
        GcnParams { gcn, dense }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub gcn: Vec<GcnLayerParams>,
    pub dense: Vec<GcnLayerParams>,
}

impl GcnParams {
    /// Weights and biases in layer order: `w₀, b₀, w₁, b₁, …`.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.gcn
            .iter()
            .chain(&self.dense)
            .flat_map(|l| [&l.w, &l.b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.gcn
            .iter_mut()
            .chain(self.dense.iter_mut())
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
    }

    /// Places every tensor on `tape`, trainable or constant.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> GcnVars {
        let mut put = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let layer = |l: &GcnLayerParams, put: &mut dyn FnMut(&Matrix) -> Var| LayerVars {
            w: put(&l.w),
            b: put(&l.b),
            activation: l.activation,
        };
        GcnVars {
            gcn: self.gcn.iter().map(|l| layer(l, &mut put)).collect(),
            dense: self.dense.iter().map(|l| layer(l, &mut put)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub w: Var,
    pub b: Var,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct GcnVars {
    pub gcn: Vec<LayerVars>,
    pub dense: Vec<LayerVars>,
}

impl GcnVars {
    /// Tape variables in the same order as [`GcnParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.gcn
            .iter()
            .chain(&self.dense)
            .flat_map(|l| [l.w, l.b])
            .collect()
    }

    /// Collects gradients in tensor order; `None` where no gradient exists.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Option<Matrix>> {
        self.vars()
            .into_iter()
            .map(|v| grads.get(v).cloned())
            .collect()
    }
}

/// How a GCN level obtains its structure matrix on the tape.
#[derive(Clone, Copy, Debug)]
pub enum Structure<'a> {
    /// Fixed sparse matrix shared by every sample block.
    Sparse(&'a Arc<StructureMatrix>),
    /// Dense per-sample matrices stacked as `blocks` row blocks.
    Dense { z: Var, blocks: usize },
}

impl Structure<'_> {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Structure::Sparse(z) => tape.sparse(z, x),
            Structure::Dense { z, blocks } => tape.block_project(z, x, blocks, false),
        }
    }
}

/// Handles into a recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GcnOutput {
    /// Stacked `n × 1` predictions.
    pub output: Var,
    /// First layer pre-activation `A₁ = Z·X·W₁ + b₁`.
    pub a1: Var,
}

/// One graph-convolution layer on the tape. Returns `(pre-activation, output)`.
pub fn gcn_layer_tape(
    tape: &mut Tape,
    z: Structure<'_>,
    x: Var,
    layer: &LayerVars,
) -> Result<(Var, Var)> {
    let xw = tape.matmul(x, layer.w)?;
    let zxw = z.apply(tape, xw)?;
    let a = tape.add_bias(zxw, layer.b)?;
    Ok((a, tape.activation(a, layer.activation)))
}

fn dense_layer_tape(tape: &mut Tape, x: Var, layer: &LayerVars) -> Result<Var> {
    let xw = tape.matmul(x, layer.w)?;
    let a = tape.add_bias(xw, layer.b)?;
    Ok(tape.activation(a, layer.activation))
}

pub fn gcn_forward_tape(
    tape: &mut Tape,
    z: Structure<'_>,
    vars: &GcnVars,
    x: Var,
) -> Result<GcnOutput> {
    let mut h = x;
    let mut outs = Vec::with_capacity(vars.gcn.len());
    let mut a1 = None;
    for layer in &vars.gcn {
        let (a, out) = gcn_layer_tape(tape, z, h, layer)?;
        a1.get_or_insert(a);
        outs.push(out);
        h = out;
    }
    let mut h = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    for layer in &vars.dense {
        h = dense_layer_tape(tape, h, layer)?;
    }
    Ok(GcnOutput {
        output: h,
        a1: a1.ok_or_else(|| Error::InvalidArgument("gcn without layers".into()))?,
    })
}

fn fixed_structure(spec: &GcnSpec) -> Result<&Arc<StructureMatrix>> {
    spec.z
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("level has no fixed structure matrix".into()))
}

fn check_input(spec: &GcnSpec, params: &GcnParams, x: &Matrix) -> Result<()> {
    let f_in = params.gcn.first().map_or(0, GcnLayerParams::f_in);
    if x.rows() == 0 || !x.rows().is_multiple_of(spec.n) || x.cols() != f_in {
        return Err(dim_err(
            "gcn_forward",
            format!("input {:?} for n = {}, F = {f_in}", x.shape(), spec.n),
        ));
    }
    Ok(())
}

/// Stacked `n × 1` predictions for every sample block of `x`.
pub fn gcn_forward(spec: &GcnSpec, params: &GcnParams, x: &Matrix) -> Result<Matrix> {
    check_input(spec, params, x)?;
    let z = fixed_structure(spec)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let out = gcn_forward_tape(&mut tape, Structure::Sparse(z), &vars, xv)?;
    Ok(tape.value(out.output).clone())
}

/// `∂E/∂X = Zᵀ·(∂E/∂A₁)·W₁ᵀ` with `E` the sum of all outputs. `∂E/∂A₁` comes
/// from a backward sweep that stops at the first layer.
pub fn energy_input_gradient(spec: &GcnSpec, params: &GcnParams, x: &Matrix) -> Result<Matrix> {
    check_input(spec, params, x)?;
    let z = fixed_structure(spec)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let xv = tape.constant(x.clone());
    let out = gcn_forward_tape(&mut tape, Structure::Sparse(z), &vars, xv)?;
    let e = tape.sum(out.output);
    let grads = tape.backward(e)?;
    let g_a1 = grads
        .get(out.a1)
        .expect("first layer depends on trainable weights");
    z.spmm_t(g_a1)?.matmul_t(&params.gcn[0].w)
}

/// `∂E/∂X` by differentiating the whole tape with `X` as a leaf.
pub fn tape_input_gradient(spec: &GcnSpec, params: &GcnParams, x: &Matrix) -> Result<Matrix> {
    check_input(spec, params, x)?;
    let z = fixed_structure(spec)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let xv = tape.param(x.clone());
    let out = gcn_forward_tape(&mut tape, Structure::Sparse(z), &vars, xv)?;
    let e = tape.sum(out.output);
    let mut grads = tape.backward(e)?;
    Ok(grads.take(xv).expect("input is a leaf"))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::graph::{laplacian, make_tube, Graph};
    use crate::rng::seeded;

    fn path2() -> Arc<StructureMatrix> {
        Arc::new(laplacian(&Graph::new(2, [(0, 1, 1.0)], "p2").unwrap()))
    }

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    fn small_spec() -> GcnSpec {
        let z = Arc::new(laplacian(&make_tube(3, 4, 1, 1.0).unwrap()));
        GcnSpec::new(z, vec![5, 4], vec![6, 3, 1]).unwrap()
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut rng = seeded(1);
        let x = random(4, 3, &mut rng);
        let p = GcnLayerParams {
            w: Matrix::identity(3),
            b: Matrix::zeros(1, 3),
            activation: Activation::Linear,
        };
        assert_eq!(gcn_layer(&StructureMatrix::identity(4), &x, &p).unwrap(), x);
    }

    #[test]
    fn path_layer_by_hand() {
        let p = GcnLayerParams {
            w: Matrix::identity(1),
            b: Matrix::zeros(1, 1),
            activation: Activation::Relu,
        };
        let out = gcn_layer(&path2(), &Matrix::column(&[1.0, 0.0]), &p).unwrap();
        assert_eq!(out, Matrix::column(&[0.0, 1.0]));
    }

    #[test]
    fn layer_shapes_and_errors() {
        let mut rng = seeded(2);
        let z = StructureMatrix::identity(7);
        let p = GcnLayerParams::glorot(3, 5, Activation::Relu, &mut rng);
        assert_eq!(
            gcn_layer(&z, &random(7, 3, &mut rng), &p).unwrap().shape(),
            (7, 5)
        );
        assert!(gcn_layer(&z, &random(7, 4, &mut rng), &p).is_err());
        assert!(gcn_layer(&z, &random(6, 3, &mut rng), &p).is_err());
    }

    #[test]
    fn dense_layer_equals_gcn_layer_with_identity() {
        let mut rng = seeded(3);
        let x = random(6, 4, &mut rng);
        let p = GcnLayerParams::glorot(4, 3, Activation::Sigmoid, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let lv = LayerVars {
            w: tape.constant(p.w.clone()),
            b: tape.constant(p.b.clone()),
            activation: p.activation,
        };
        let dense = dense_layer_tape(&mut tape, xv, &lv).unwrap();
        let via_gcn = gcn_layer(&StructureMatrix::identity(6), &x, &p).unwrap();
        assert!(tape.value(dense).max_abs_diff(&via_gcn) < 1e-12);
    }

    #[test]
    fn table_widths_on_full_tube() {
        let z = Arc::new(laplacian(&make_tube(48, 13, 3, 1.0).unwrap()));
        let spec = GcnSpec::new(z, vec![64, 64, 64], vec![256, 32, 8, 1]).unwrap();
        assert_eq!(spec.concat_width(), 192);
        let params = spec.init(10, &mut seeded(4));
        let x = random(624, 10, &mut seeded(5));
        assert_eq!(gcn_forward(&spec, &params, &x).unwrap().shape(), (624, 1));
    }

    #[test]
    fn zero_weights_give_constant_output() {
        let spec = GcnSpec::new(path2(), vec![1], vec![3, 1]).unwrap();
        let mut params = spec.init(2, &mut seeded(6));
        params.gcn[0].w.as_mut_slice().fill(0.0);
        let out = gcn_forward(&spec, &params, &random(2, 2, &mut seeded(7))).unwrap();
        let head = gcn_forward(&spec, &params, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(out, head);
        assert_eq!(out[(0, 0)], out[(1, 0)]);
        let mut zeroed = params.clone();
        zeroed.zero();
        let grad = energy_input_gradient(&spec, &zeroed, &random(2, 2, &mut seeded(8))).unwrap();
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn rejects_bad_specs_and_inputs() {
        assert!(GcnSpec::new(path2(), vec![], vec![1]).is_err());
        assert!(GcnSpec::new(path2(), vec![2], vec![3, 2]).is_err());
        let spec = small_spec();
        let params = spec.init(3, &mut seeded(9));
        assert!(gcn_forward(&spec, &params, &Matrix::zeros(12, 2)).is_err());
        assert!(gcn_forward(&spec, &params, &Matrix::zeros(11, 3)).is_err());
    }

    #[test]
    fn stacked_samples_match_individual_passes() {
        let spec = small_spec();
        let params = spec.init(3, &mut seeded(10));
        let mut rng = seeded(11);
        let (x1, x2) = (random(12, 3, &mut rng), random(12, 3, &mut rng));
        let both = gcn_forward(&spec, &params, &Matrix::vstack(&[&x1, &x2]).unwrap()).unwrap();
        let y1 = gcn_forward(&spec, &params, &x1).unwrap();
        let y2 = gcn_forward(&spec, &params, &x2).unwrap();
        assert!(both.row_block(0, 12).max_abs_diff(&y1) < 1e-12);
        assert!(both.row_block(12, 12).max_abs_diff(&y2) < 1e-12);
    }

    fn energy(spec: &GcnSpec, params: &GcnParams, x: &Matrix) -> f64 {
        gcn_forward(spec, params, x).unwrap().sum()
    }

    #[test]
    fn input_gradient_matches_tape_and_differences() {
        let spec = small_spec();
        let params = spec.init(3, &mut seeded(12));
        let x = random(12, 3, &mut seeded(13));
        let analytic = energy_input_gradient(&spec, &params, &x).unwrap();
        let tape = tape_input_gradient(&spec, &params, &x).unwrap();
        assert!(analytic.max_abs_diff(&tape) < 1e-10);
        let h = 1e-5;
        for i in 0..12 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let fd = (energy(&spec, &params, &xp) - energy(&spec, &params, &xm)) / (2.0 * h);
                let a = analytic[(i, j)];
                assert!((a - fd).abs() <= 1e-5 * a.abs().max(1e-3), "{a} vs {fd}");
            }
        }
    }

    #[test]
    fn weight_gradients_match_differences() {
        let spec = small_spec();
        let params = spec.init(3, &mut seeded(14));
        let x = random(12, 3, &mut seeded(15));
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let xv = tape.constant(x.clone());
        let out = gcn_forward_tape(
            &mut tape,
            Structure::Sparse(spec.z.as_ref().unwrap()),
            &vars,
            xv,
        )
        .unwrap();
        let e = tape.sum(out.output);
        let grads = vars.gradients(&tape.backward(e).unwrap());
        let h = 1e-5;
        for (t, g) in grads.iter().enumerate() {
            let g = g.as_ref().unwrap();
            for k in 0..g.len().min(6) {
                let mut pp = params.clone();
                pp.tensors_mut()[t].as_mut_slice()[k] += h;
                let mut pm = params.clone();
                pm.tensors_mut()[t].as_mut_slice()[k] -= h;
                let fd = (energy(&spec, &pp, &x) - energy(&spec, &pm, &x)) / (2.0 * h);
                let a = g.as_slice()[k];
                assert!(
                    (a - fd).abs() <= 1e-5 * a.abs().max(1e-3),
                    "tensor {t} entry {k}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn relabeling_nodes_permutes_output() {
        let spec = small_spec();
        let params = spec.init(3, &mut seeded(16));
        let x = random(12, 3, &mut seeded(17));
        let perm: Vec<usize> = (0..12).map(|i| (i * 5) % 12).collect();
        let zp = Arc::new(spec.z.as_ref().unwrap().permuted(&perm).unwrap());
        let spec_p = GcnSpec::new(zp, spec.gcn_widths.clone(), spec.dense_widths.clone()).unwrap();
        let mut xp = Matrix::zeros(12, 3);
        for i in 0..12 {
            xp.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let y = gcn_forward(&spec, &params, &x).unwrap();
        let yp = gcn_forward(&spec_p, &params, &xp).unwrap();
        for i in 0..12 {
            assert!((y[(i, 0)] - yp[(perm[i], 0)]).abs() < 1e-10);
        }
    }
}
