//! Analytic FLOPs model of forward passes and a running ledger.

use serde::{Deserialize, Serialize};

use crate::ensemble::{ModelKind, ModelSpec};
use crate::gcn::GcnSpec;

/// `n·F·(|Z| + C)` for a graph convolution with `nnz = |Z|`.
pub fn flops_gcn_layer(n: u64, f: u64, c: u64, nnz: u64) -> u64 {
    n * f * (nnz + c)
}

/// `n·F·C` for a node-wise dense layer.
pub fn flops_dense(n: u64, f: u64, c: u64) -> u64 {
    n * f * c
}

/// `n·m·k` for an `n × m` matrix applied to `k` columns.
pub fn flops_project(n: u64, m: u64, k: u64) -> u64 {
    n * m * k
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    GcnLayer,
    Dense,
    Projection,
}

/// Cost of one layer for a single sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub level: usize,
    pub label: String,
    pub category: Category,
    pub flops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsLedger {
    pub total: u64,
    pub gcn_layer: u64,
    pub dense: u64,
    pub projection: u64,
}

impl FlopsLedger {
    pub fn add(&mut self, category: Category, flops: u64) {
        self.total += flops;
        match category {
            Category::GcnLayer => self.gcn_layer += flops,
            Category::Dense => self.dense += flops,
            Category::Projection => self.projection += flops,
        }
    }

    /// Charge `samples` forward passes, each layer `multiplier` times.
    pub fn charge(&mut self, costs: &[LayerCost], samples: u64, multiplier: u64) {
        for c in costs {
            self.add(c.category, c.flops * samples * multiplier);
        }
    }

    /// One optimisation step: forward plus a backward pass at twice the cost.
    pub fn charge_training(&mut self, costs: &[LayerCost], samples: u64) {
        self.charge(costs, samples, 3);
    }
}

fn level_costs(
    out: &mut Vec<LayerCost>,
    level: usize,
    spec: &GcnSpec,
    in_features: usize,
    nnz: u64,
) {
    let n = spec.n as u64;
    let (gcn, dense) = spec.layer_dims(in_features);
    for (k, (f, c)) in gcn.into_iter().enumerate() {
        out.push(LayerCost {
            level,
            label: format!("gcn{}", k + 1),
            category: Category::GcnLayer,
            flops: flops_gcn_layer(n, f as u64, c as u64, nnz),
        });
    }
    for (k, (f, c)) in dense.into_iter().enumerate() {
        out.push(LayerCost {
            level,
            label: format!("dense{}", k + 1),
            category: Category::Dense,
            flops: flops_dense(n, f as u64, c as u64),
        });
    }
}

fn structure_nnz(spec: &GcnSpec) -> u64 {
    match &spec.z {
        Some(z) => z.nnz() as u64,
        // pooled levels carry a dense structure matrix
        None => (spec.n * spec.n) as u64,
    }
}

/// Per-sample forward cost of every layer that runs under the level mask.
pub fn model_flops(spec: &ModelSpec, active: &[bool]) -> Vec<LayerCost> {
    let mut out = Vec::new();
    let f = spec.in_features as u64;
    let last = active.iter().rposition(|&a| a).unwrap_or(0);
    let sizes: Vec<u64> = spec.levels.iter().map(|l| l.n as u64).collect();
    let proj = |out: &mut Vec<LayerCost>, level: usize, label: String, flops: u64| {
        out.push(LayerCost {
            level,
            label,
            category: Category::Projection,
            flops,
        })
    };
    match spec.kind {
        ModelKind::PlainEnsemble | ModelKind::Ngcn => {}
        ModelKind::Gpcn => {
            for i in 0..last {
                proj(
                    &mut out,
                    i + 1,
                    "restrict".into(),
                    flops_project(sizes[i], sizes[i + 1], f),
                );
            }
        }
        ModelKind::DiffPool => {
            for i in 0..last {
                let (n, m) = (sizes[i], sizes[i + 1]);
                let nnz = structure_nnz(&spec.levels[i]);
                out.push(LayerCost {
                    level: i + 1,
                    label: "pool".into(),
                    category: Category::GcnLayer,
                    flops: flops_gcn_layer(n, f, m, nnz),
                });
                proj(&mut out, i + 1, "pool_x".into(), flops_project(m, n, f));
                let zs = if spec.levels[i].z.is_some() {
                    n * m * nnz
                } else {
                    flops_project(n, n, m)
                };
                proj(&mut out, i + 1, "pool_zs".into(), zs);
                proj(&mut out, i + 1, "pool_szs".into(), flops_project(m, n, m));
            }
        }
    }
    for i in 0..=last {
        if active[i] {
            level_costs(
                &mut out,
                i,
                &spec.levels[i],
                spec.in_features,
                structure_nnz(&spec.levels[i]),
            );
        }
    }
    if matches!(spec.kind, ModelKind::Gpcn | ModelKind::DiffPool) {
        for i in (0..last).rev() {
            proj(
                &mut out,
                i + 1,
                "prolong".into(),
                flops_project(sizes[i], sizes[i + 1], 1),
            );
        }
    }
    out
}

pub fn total(costs: &[LayerCost]) -> u64 {
    costs.iter().map(|c| c.flops).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulas() {
        assert_eq!(flops_dense(1, 1, 1), 1);
        assert_eq!(flops_gcn_layer(624, 10, 64, 100), 6240 * 164);
        assert_eq!(flops_project(624, 78, 10), 624 * 78 * 10);
    }

    #[test]
    fn ledger_is_additive() {
        let costs = vec![
            LayerCost {
                level: 0,
                label: "a".into(),
                category: Category::GcnLayer,
                flops: 7,
            },
            LayerCost {
                level: 0,
                label: "b".into(),
                category: Category::Projection,
                flops: 5,
            },
        ];
        let mut l = FlopsLedger::default();
        l.charge_training(&costs, 8);
        assert_eq!(l.total, 3 * 8 * 12);
        assert_eq!(l.gcn_layer + l.dense + l.projection, l.total);
        let before = l.total;
        l.add(Category::Dense, 4);
        assert_eq!(l.total, before + 4);
    }
}
