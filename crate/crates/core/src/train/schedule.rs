//! Epoch-level schedules: which levels are trained and which contribute to
//! the output in each epoch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Joint,
    GammaCycle,
    CoarseToFine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub gamma: usize,
    pub smoothing_epochs: usize,
    pub patience: usize,
    pub total_epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Smoothing at level `l` runs the ensemble of levels `l..` only, instead
    /// of the full ensemble with masked gradients.
    pub partial_ensembles: bool,
    /// Stop once this many training FLOPs have been spent.
    pub flops_budget: Option<u64>,
    pub learning_rate: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Joint,
            gamma: 1,
            smoothing_epochs: 1,
            patience: 10,
            total_epochs: 1000,
            batches_per_epoch: 20,
            batch_size: 8,
            partial_ensembles: false,
            flops_budget: None,
            learning_rate: 1e-3,
        }
    }
}

impl ScheduleSpec {
    pub fn validate(&self, n_levels: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batches_per_epoch == 0 || self.batch_size == 0 {
            return bad("batches_per_epoch and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        match self.kind {
            ScheduleKind::GammaCycle => {
                if n_levels < 2 {
                    return bad("gamma-cycle needs a model with at least two levels".into());
                }
                if self.gamma > 3 {
                    return bad(format!("gamma must be in 0..=3, got {}", self.gamma));
                }
                if self.smoothing_epochs == 0 {
                    return bad("smoothing_epochs must be positive".into());
                }
            }
            ScheduleKind::CoarseToFine if self.patience == 0 => {
                return bad("patience must be positive".into())
            }
            _ => {}
        }
        Ok(())
    }
}

/// Levels visited by one γ-cycle from `level` down, `smoothing` epochs per
/// visit. The coarsest level is smoothed once per visit.
pub fn gamma_cycle_from(
    level: usize,
    n_levels: usize,
    gamma: usize,
    smoothing: usize,
    out: &mut Vec<usize>,
) {
    out.extend(std::iter::repeat_n(level, smoothing));
    if level + 1 == n_levels {
        return;
    }
    for _ in 0..gamma {
        gamma_cycle_from(level + 1, n_levels, gamma, smoothing, out);
    }
    out.extend(std::iter::repeat_n(level, smoothing));
}

/// One full cycle starting at the fine level.
pub fn gamma_cycle_sequence(n_levels: usize, gamma: usize, smoothing: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if n_levels > 0 {
        gamma_cycle_from(0, n_levels, gamma, smoothing, &mut out);
    }
    out
}

/// Levels `first..n` on, the rest off.
pub fn levels_from(first: usize, n_levels: usize) -> Vec<bool> {
    (0..n_levels).map(|i| i >= first).collect()
}

pub fn only_level(level: usize, n_levels: usize) -> Vec<bool> {
    (0..n_levels).map(|i| i == level).collect()
}
