use std::borrow::{Borrow, BorrowMut};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// ADAM moments for a list of parameter tensors.
///
/// Step counts are kept per tensor: a tensor whose gradient is masked out is
/// left completely untouched, and its bias correction resumes where it stopped.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: Vec<u64>,
}

impl AdamState {
    pub fn new<M: Borrow<Matrix>>(config: AdamConfig, params: &[M]) -> Self {
        Self {
            config,
            first: params
                .iter()
                .map(|p| Matrix::zeros(p.borrow().rows(), p.borrow().cols()))
                .collect(),
            second: params
                .iter()
                .map(|p| Matrix::zeros(p.borrow().rows(), p.borrow().cols()))
                .collect(),
            steps: vec![0; params.len()],
        }
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    /// Applies one update. `None` gradients skip their tensor.
    pub fn step<M: BorrowMut<Matrix>>(
        &mut self,
        params: &mut [M],
        grads: &[Option<Matrix>],
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(dim_err(
                "adam_step",
                format!(
                    "{} params, {} grads, {} states",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let p: &mut Matrix = p.borrow_mut();
            if g.shape() != p.shape() || self.first[idx].shape() != p.shape() {
                return Err(dim_err(
                    "adam_step",
                    format!("param {idx}: {:?} vs {:?}", p.shape(), g.shape()),
                ));
            }
            self.steps[idx] += 1;
            let t = self.steps[idx] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let m = self.first[idx].as_mut_slice();
            let v = self.second[idx].as_mut_slice();
            for (((pv, &gv), mv), vv) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v)
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
