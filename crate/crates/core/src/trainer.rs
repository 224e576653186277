//! Mini-batch training with per-epoch validation and early stopping.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::config::TrainConfig;
use crate::datastore::SequenceSample;
use crate::error::{Error, Result};
use crate::evaluator::MetricsReport;
use crate::model::Model;
use crate::objectives::LossBreakdown;
use crate::optim::{clip_grad_norm, AdamW};
use crate::params::NamedTensor;

#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub best_metric: Option<f64>,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub optimizer: AdamW,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &Model, cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            best_metric: None,
            best_epoch: 0,
            epochs_since_improvement: 0,
            optimizer: AdamW::new(&model.store, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_normal: f64,
    pub l_bpr: f64,
    pub l_toi: f64,
    pub l_total: f64,
    pub val_hr5: f64,
    pub val_hr10: f64,
    pub val_ndcg5: f64,
    pub val_ndcg10: f64,
    /// Value of the early-stopping metric.
    pub val_metric: f64,
    pub wall_secs: f64,
}

pub const LOG_HEADER: &str =
    "epoch,l_normal,l_bpr,l_toi,l_total,val_hr5,val_hr10,val_ndcg5,val_ndcg10,val_metric,wall_secs";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}",
            self.epoch,
            self.l_normal,
            self.l_bpr,
            self.l_toi,
            self.l_total,
            self.val_hr5,
            self.val_hr10,
            self.val_ndcg5,
            self.val_ndcg10,
            self.val_metric,
            self.wall_secs
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub validations: usize,
    pub stopped_early: bool,
}

/// One optimizer update on `batch`. Returns the loss before the update.
pub fn train_step(
    model: &mut Model,
    batch: &[&SequenceSample],
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let draws = model.draw(batch, &mut state.rng);
    let (breakdown, grads) = {
        let mut g = Graph::new(&model.store);
        let dropout: Option<&mut dyn rand::RngCore> =
            (model.config.encoder.dropout > 0.0).then_some(&mut state.rng as &mut dyn rand::RngCore);
        let (loss, breakdown) = model.loss_graph(&mut g, batch, &draws, dropout)?;
        if !breakdown.is_finite() {
            return Err(non_finite(batch, &breakdown));
        }
        (breakdown, g.backward(loss))
    };
    model.store.zero_grad();
    for (id, grad) in grads {
        model.store.get_mut(id).grad = grad;
    }
    if let Some(max) = cfg.grad_clip {
        clip_grad_norm(&mut model.store, max);
    }
    state.optimizer.step(&mut model.store);
    if !model.store.all_finite() {
        return Err(non_finite(batch, &breakdown));
    }
    Ok(breakdown)
}

fn non_finite(batch: &[&SequenceSample], b: &LossBreakdown) -> Error {
    let users: Vec<String> = batch
        .iter()
        .take(8)
        .map(|s| format!("{}@{}", s.user_id, s.position))
        .collect();
    Error::NonFinite(format!(
        "loss {b:?} on batch of {} samples (first: {})",
        batch.len(),
        users.join(", ")
    ))
}

/// Runs one pass over `train` in shuffled mini-batches; returns the mean losses.
pub fn train_epoch(
    model: &mut Model,
    train: &[SequenceSample],
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut state.rng);
    let mut sum = LossBreakdown::default();
    let mut batches = 0usize;
    for chunk in order.chunks(cfg.batch_size_train) {
        let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| &train[i]).collect();
        let b = train_step(model, &batch, state, cfg)?;
        sum.l_normal += b.l_normal;
        sum.l_bpr += b.l_bpr;
        sum.l_ioi += b.l_ioi;
        sum.l_toi += b.l_toi;
        sum.l_total += b.l_total;
        batches += 1;
    }
    let n = batches.max(1) as f64;
    state.epoch += 1;
    Ok(LossBreakdown {
        l_normal: sum.l_normal / n,
        l_bpr: sum.l_bpr / n,
        l_ioi: sum.l_ioi / n,
        l_toi: sum.l_toi / n,
        l_total: sum.l_total / n,
    })
}

/// Trains until the validation metric has not improved for `patience`
/// consecutive validations or `max_epochs` is reached, then restores the
/// best parameters. `validate` is called once per epoch.
pub fn fit(
    model: &mut Model,
    train: &[SequenceSample],
    cfg: &TrainConfig,
    mut validate: impl FnMut(&Model, usize) -> Result<MetricsReport>,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut state = TrainState::new(model, cfg);
    let mut best: Option<Vec<NamedTensor>> = None;
    let mut log = Vec::new();
    let start = Instant::now();
    if let Some(w) = log_sink.as_deref_mut() {
        writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io("training log", e))?;
    }
    let mut stopped_early = false;
    for _ in 0..cfg.max_epochs {
        let losses = train_epoch(model, train, &mut state, cfg)?;
        let report = validate(model, state.epoch)?;
        let metric = report.metric(cfg.validation_metric);
        let row = EpochLog {
            epoch: state.epoch,
            l_normal: losses.l_normal,
            l_bpr: losses.l_bpr,
            l_toi: losses.l_toi,
            l_total: losses.l_total,
            val_hr5: report.hr(5),
            val_hr10: report.hr(10),
            val_ndcg5: report.ndcg(5),
            val_ndcg10: report.ndcg(10),
            val_metric: metric,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        log::info!("{}", row.csv_row());
        if let Some(w) = log_sink.as_deref_mut() {
            writeln!(w, "{}", row.csv_row()).map_err(|e| Error::io("training log", e))?;
        }
        log.push(row);
        if state.best_metric.is_none_or(|b| metric > b) {
            state.best_metric = Some(metric);
            state.best_epoch = state.epoch;
            state.epochs_since_improvement = 0;
            best = Some(model.store.export());
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    if let Some(best) = best {
        model.store.import(&best)?;
    }
    Ok(FitResult {
        validations: log.len(),
        log,
        best_epoch: state.best_epoch,
        best_metric: state.best_metric.unwrap_or(f64::NAN),
        stopped_early,
    })
}
