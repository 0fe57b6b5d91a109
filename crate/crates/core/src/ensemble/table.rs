//! The named model configurations of the comparison experiment.

use std::sync::Arc;

use super::{ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::gcn::GcnSpec;
use crate::gdd::{gdd, Prolongation};
use crate::graph::{laplacian, make_tube, Graph};
use crate::linalg::StructureMatrix;

pub const MODEL_NAMES: [&str; 10] = [
    "single_gcn",
    "ensemble2",
    "ensemble3",
    "gpcn2",
    "gpcn3",
    "a_gpcn2",
    "a_gpcn3",
    "ngcn3",
    "ngcn5",
    "diffpool3",
];

const DENSE: [usize; 4] = [256, 32, 8, 1];

/// Fine, intermediate and coarse graphs with the prolongations linking them.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub graphs: [Graph; 3],
    pub laplacians: [Arc<StructureMatrix>; 3],
    /// `P_{fine,inter}` and `P_{inter,coarse}`.
    pub prolongations: [Prolongation; 2],
}

impl Hierarchy {
    /// `Tube(n, 13, 3)`, `Tube(n/2, 13, 1)`, `Tube(n/2, 3, 0)` with optimised
    /// prolongations between consecutive levels.
    pub fn tube(n_rings: usize) -> Result<Self> {
        if n_rings < 4 || !n_rings.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "hierarchy needs an even ring count >= 4, got {n_rings}"
            )));
        }
        let fine = make_tube(n_rings, 13, 3, 1.0)?;
        let inter = make_tube(n_rings / 2, 13, 1, 1.0)?;
        let coarse = make_tube(n_rings / 2, 3, 0, 1.0)?;
        let p_fi = gdd(&inter, &fine, 1.0)?;
        let p_ic = gdd(&coarse, &inter, 1.0)?;
        Ok(Self::from_parts([fine, inter, coarse], [p_fi, p_ic]))
    }

    pub fn from_parts(graphs: [Graph; 3], prolongations: [Prolongation; 2]) -> Self {
        let laplacians = [
            Arc::new(laplacian(&graphs[0])),
            Arc::new(laplacian(&graphs[1])),
            Arc::new(laplacian(&graphs[2])),
        ];
        Self {
            graphs,
            laplacians,
            prolongations,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.graphs[0].n(), self.graphs[1].n(), self.graphs[2].n()]
    }
}

fn level(z: &Arc<StructureMatrix>, width: usize) -> Result<GcnSpec> {
    GcnSpec::new(Arc::clone(z), vec![width; 3], DENSE.to_vec())
}

/// Architecture of a named model on `h`, with `in_features` input columns.
pub fn build_from_table(name: &str, h: &Hierarchy, in_features: usize) -> Result<ModelSpec> {
    let [fine, inter, coarse] = &h.laplacians;
    let [p_fi, p_ic] = &h.prolongations;
    let powers = |radii: &[usize]| -> Result<Vec<GcnSpec>> {
        radii
            .iter()
            .map(|&r| level(&Arc::new(fine.power(r)?), 64))
            .collect()
    };
    use ModelKind::*;
    let (kind, levels, ps, adaptive) = match name {
        "single_gcn" => (PlainEnsemble, vec![level(fine, 64)?], vec![], false),
        "ensemble2" => (
            PlainEnsemble,
            vec![level(fine, 64)?, level(fine, 32)?],
            vec![],
            false,
        ),
        "ensemble3" => (
            PlainEnsemble,
            vec![level(fine, 64)?, level(fine, 32)?, level(fine, 16)?],
            vec![],
            false,
        ),
        "gpcn2" | "a_gpcn2" => (
            Gpcn,
            vec![level(fine, 32)?, level(inter, 64)?],
            vec![p_fi.clone()],
            name == "a_gpcn2",
        ),
        "gpcn3" | "a_gpcn3" => (
            Gpcn,
            vec![level(fine, 16)?, level(inter, 32)?, level(coarse, 64)?],
            vec![p_fi.clone(), p_ic.clone()],
            name == "a_gpcn3",
        ),
        "ngcn3" => (Ngcn, powers(&[1, 2, 4])?, vec![], false),
        "ngcn5" => (Ngcn, powers(&[1, 2, 4, 8, 16])?, vec![], false),
        "diffpool3" => {
            let [_, n_inter, n_coarse] = h.sizes();
            (
                DiffPool,
                vec![
                    level(fine, 16)?,
                    GcnSpec::pooled(n_inter, vec![32; 3], DENSE.to_vec())?,
                    GcnSpec::pooled(n_coarse, vec![64; 3], DENSE.to_vec())?,
                ],
                vec![],
                false,
            )
        }
        other => {
            return Err(Error::UnknownModel {
                name: other.to_string(),
                valid: MODEL_NAMES.join(", "),
            })
        }
    };
    ModelSpec::new(name, kind, levels, ps, adaptive, in_features)
}
