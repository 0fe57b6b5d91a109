//! Losses, data splits, FLOPs accounting and the training loops.

pub mod flops;
pub mod schedule;

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use flops::{
    flops_dense, flops_gcn_layer, flops_project, model_flops, Category, FlopsLedger, LayerCost,
};
pub use schedule::{gamma_cycle_sequence, levels_from, only_level, ScheduleKind, ScheduleSpec};

use crate::autodiff::Tape;
use crate::ensemble::{forward_tape, ModelParams, ModelSpec};
use crate::error::{dim_err, Error, Result};
use crate::linalg::Matrix;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{substream, SplitMix64};
use crate::sim::{Dataset, Normalization, NormalizationMode};

/// Mean squared error over all entries; inputs are expected to be z-scored.
pub fn nmse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(dim_err(
            "nmse",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("nmse of empty matrices".into()));
    }
    let sse: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / pred.len() as f64)
}

const SPLIT_STREAM: u64 = 0x5eed;

/// Seeded shuffle of `0..count`; the first `round(val_fraction·count)`
/// indices (at least one when `count > 1`) are validation, the rest training.
/// Both halves are returned sorted.
pub fn split_indices(seed: u64, count: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut substream(seed, SPLIT_STREAM));
    let mut n_val = (val_fraction * count as f64).round() as usize;
    if count > 1 {
        n_val = n_val.clamp(1, count - 1);
    } else {
        n_val = 0;
    }
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Normalized frames with a fixed train/validation split.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub inputs: Vec<Matrix>,
    pub targets: Vec<Matrix>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub normalization: Normalization,
}

impl TrainData {
    pub const VAL_FRACTION: f64 = 0.2;

    /// Split with `split_seed` and normalize with statistics of the training
    /// frames only.
    pub fn from_dataset(ds: &Dataset, split_seed: u64, mode: NormalizationMode) -> Result<Self> {
        if ds.frames.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 frames, got {}",
                ds.frames.len()
            )));
        }
        let (train, val) = split_indices(split_seed, ds.frames.len(), Self::VAL_FRACTION);
        let normalization = Normalization::fit(&ds.frames, &train, mode)?;
        let inputs = ds
            .frames
            .iter()
            .map(|f| normalization.x(&f.x))
            .collect::<Result<_>>()?;
        let targets = ds
            .frames
            .iter()
            .map(|f| normalization.y(&f.y))
            .collect::<Result<_>>()?;
        Ok(Self {
            inputs,
            targets,
            train,
            val,
            normalization,
        })
    }

    fn stack(&self, idx: &[usize]) -> Result<(Matrix, Matrix)> {
        let xs: Vec<&Matrix> = idx.iter().map(|&i| &self.inputs[i]).collect();
        let ys: Vec<&Matrix> = idx.iter().map(|&i| &self.targets[i]).collect();
        Ok((Matrix::vstack(&xs)?, Matrix::vstack(&ys)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    /// Cumulative training FLOPs.
    pub flops: u64,
    /// Mean batch loss over the epoch (full training set for epoch 0).
    pub train_nmse: f64,
    pub val_nmse: f64,
    pub best_val_nmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub points: Vec<EvalPoint>,
    /// Levels whose parameters were updated, per epoch.
    pub epoch_levels: Vec<Vec<usize>>,
    /// First epoch of each coarse-to-fine stage.
    pub stage_starts: Vec<usize>,
    pub ledger: FlopsLedger,
    pub aborted: Option<String>,
}

impl RunRecord {
    pub fn best_val_nmse(&self) -> f64 {
        self.points
            .last()
            .map_or(f64::INFINITY, |p| p.best_val_nmse)
    }

    /// Best validation error reached within `budget` training FLOPs.
    pub fn best_within(&self, budget: u64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.flops <= budget)
            .map(|p| p.best_val_nmse)
            .fold(f64::INFINITY, f64::min)
    }

    /// `flops,epoch,train_nmse,best_val_nmse` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("flops,epoch,train_nmse,best_val_nmse\n");
        for p in &self.points {
            writeln!(
                s,
                "{},{},{},{}",
                p.flops, p.epoch, p.train_nmse, p.best_val_nmse
            )
            .unwrap();
        }
        s
    }
}

/// Mean and sample standard deviation of the best validation error per
/// model, in first-seen order.
pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<f64>> = HashMap::new();
    for r in records {
        if !groups.contains_key(r.model.as_str()) {
            order.push(&r.model);
        }
        groups.entry(&r.model).or_default().push(r.best_val_nmse());
    }
    let mut s = String::from("model,seeds,mean_best_val_nmse,std_best_val_nmse\n");
    for m in order {
        let v = &groups[m];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        writeln!(s, "{m},{},{mean},{std}", v.len()).unwrap();
    }
    s
}

pub struct TrainOutcome {
    pub record: RunRecord,
    /// Parameters at the best validation error.
    pub best_params: ModelParams,
    pub final_params: ModelParams,
}

struct Trainer<'a> {
    spec: &'a ModelSpec,
    data: &'a TrainData,
    schedule: &'a ScheduleSpec,
    params: ModelParams,
    best_params: ModelParams,
    adam: AdamState,
    rng: SplitMix64,
    record: RunRecord,
    costs: HashMap<Vec<bool>, Vec<LayerCost>>,
    epoch: usize,
    exhausted: bool,
}

impl<'a> Trainer<'a> {
    fn new(
        spec: &'a ModelSpec,
        data: &'a TrainData,
        schedule: &'a ScheduleSpec,
        seed: u64,
    ) -> Self {
        let params = spec.init(&mut substream(seed, 1));
        let tensors: Vec<&Matrix> = params.tensors().into_iter().map(|(_, t)| t).collect();
        let adam = AdamState::new(
            AdamConfig {
                lr: schedule.learning_rate,
                ..AdamConfig::default()
            },
            &tensors,
        );
        Self {
            spec,
            data,
            schedule,
            best_params: params.clone(),
            params,
            adam,
            rng: substream(seed, 2),
            record: RunRecord {
                model: spec.name.clone(),
                seed,
                schedule: schedule.kind,
                points: Vec::new(),
                epoch_levels: Vec::new(),
                stage_starts: Vec::new(),
                ledger: FlopsLedger::default(),
                aborted: None,
            },
            costs: HashMap::new(),
            epoch: 0,
            exhausted: false,
        }
    }

    fn all(&self) -> Vec<bool> {
        vec![true; self.spec.n_levels()]
    }

    fn evaluate(&self, idx: &[usize], active: &[bool]) -> Result<f64> {
        let mut sse = 0.0;
        let mut count = 0usize;
        for chunk in idx.chunks(self.schedule.batch_size) {
            let (x, y) = self.data.stack(chunk)?;
            let pred = crate::ensemble::model_forward_masked(self.spec, &self.params, &x, active)?;
            sse += nmse(&pred, &y)? * y.len() as f64;
            count += y.len();
        }
        Ok(sse / count as f64)
    }

    fn push_point(&mut self, train_nmse: f64, val_nmse: f64) {
        let prev = self.record.best_val_nmse();
        if val_nmse < prev {
            self.best_params = self.params.clone();
        }
        self.record.points.push(EvalPoint {
            epoch: self.epoch,
            flops: self.record.ledger.total,
            train_nmse,
            val_nmse,
            best_val_nmse: prev.min(val_nmse),
        });
    }

    fn budget_left(&self) -> bool {
        self.schedule
            .flops_budget
            .is_none_or(|b| self.record.ledger.total < b)
    }

    fn done(&self) -> bool {
        self.exhausted || self.epoch >= self.schedule.total_epochs
    }

    /// One epoch updating `trainable` levels with the `active` ensemble.
    /// Returns the validation error, or `None` if the budget ran out first.
    fn epoch(
        &mut self,
        trainable: &[bool],
        active: &[bool],
        val_active: &[bool],
    ) -> Result<Option<f64>> {
        if !self.budget_left() {
            self.exhausted = true;
            return Ok(None);
        }
        self.epoch += 1;
        let costs = self
            .costs
            .entry(active.to_vec())
            .or_insert_with(|| model_flops(self.spec, active))
            .clone();
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for _ in 0..self.schedule.batches_per_epoch {
            if !self.budget_left() {
                self.exhausted = true;
                break;
            }
            let idx: Vec<usize> = (0..self.schedule.batch_size)
                .map(|_| self.data.train[self.rng.random_range(0..self.data.train.len())])
                .collect();
            let (x, y) = self.data.stack(&idx)?;
            let mut tape = Tape::new();
            let vars = self.params.register(self.spec, &mut tape, trainable);
            let xv = tape.constant(x);
            let out = forward_tape(self.spec, &vars, &mut tape, xv, active)?;
            let yv = tape.constant(y);
            let loss = tape.mse(out.output, yv)?;
            let lv = tape.value(loss)[(0, 0)];
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: self.epoch });
            }
            let grads = tape.backward(loss)?;
            let g = vars.gradients(&grads);
            let mut tensors: Vec<&mut Matrix> = self
                .params
                .tensors_mut()
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            self.adam.step(&mut tensors, &g)?;
            self.record.ledger.charge_training(&costs, idx.len() as u64);
            loss_sum += lv;
            batches += 1;
        }
        self.record
            .epoch_levels
            .push((0..trainable.len()).filter(|&i| trainable[i]).collect());
        let val = self.evaluate(&self.data.val, val_active)?;
        let train = if batches > 0 {
            loss_sum / batches as f64
        } else {
            f64::NAN
        };
        self.push_point(train, val);
        Ok(Some(val))
    }

    fn run(&mut self) -> Result<()> {
        let all = self.all();
        let n_levels = self.spec.n_levels();
        match self.schedule.kind {
            ScheduleKind::Joint => {
                while !self.done() {
                    self.epoch(&all, &all, &all)?;
                }
            }
            ScheduleKind::GammaCycle => {
                let cycle = gamma_cycle_sequence(
                    n_levels,
                    self.schedule.gamma,
                    self.schedule.smoothing_epochs,
                );
                'outer: loop {
                    for &level in &cycle {
                        if self.done() {
                            break 'outer;
                        }
                        let trainable = only_level(level, n_levels);
                        let active = if self.schedule.partial_ensembles {
                            levels_from(level, n_levels)
                        } else {
                            all.clone()
                        };
                        self.epoch(&trainable, &active, &all)?;
                    }
                }
            }
            ScheduleKind::CoarseToFine => {
                for stage in 1..=n_levels {
                    if self.done() {
                        break;
                    }
                    let mask = levels_from(n_levels - stage, n_levels);
                    self.record.stage_starts.push(self.epoch + 1);
                    let mut stage_best = f64::INFINITY;
                    let mut stale = 0;
                    while !self.done() {
                        let Some(val) = self.epoch(&mask, &mask, &mask)? else {
                            break;
                        };
                        if val < stage_best {
                            stage_best = val;
                            stale = 0;
                        } else {
                            stale += 1;
                        }
                        if stage < n_levels && stale >= self.schedule.patience {
                            break;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Train `spec` on `data` under `schedule`. Deterministic in `seed`. A
/// non-finite loss stops training early and is noted in the record.
pub fn train(
    spec: &ModelSpec,
    data: &TrainData,
    schedule: &ScheduleSpec,
    seed: u64,
) -> Result<TrainOutcome> {
    schedule.validate(spec.n_levels())?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    let mut t = Trainer::new(spec, data, schedule, seed);
    let all = t.all();
    let train0 = t.evaluate(&data.train, &all)?;
    let val0 = t.evaluate(&data.val, &all)?;
    t.push_point(train0, val0);
    match t.run() {
        Ok(()) => {}
        Err(e @ Error::NonFiniteLoss { .. }) => t.record.aborted = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(TrainOutcome {
        record: t.record,
        best_params: t.best_params,
        final_params: t.params,
    })
}
