//! Optimisation loop: PK batches, homologous expansion, multi-branch
//! forward, summed loss, one Adam step per iteration under a single cosine
//! learning-rate decay, with all backbones frozen for the first iterations.

use std::f64::consts::PI;

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::{homologous_expand, normalize_into, AugmentConfig};
use crate::data::{Dataset, PkSampler};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::losses::{total_loss, LossBundle, LossConfig};
use crate::model::MultiBranchModel;
use crate::nn::ParamKind;
use crate::rng;

mod adam;
mod rundir;

pub use adam::{Adam, AdamConfig};
pub use rundir::{resolve_checkpoint, RunDir, CHECKPOINT_FILE, CONFIG_FILE, HISTORY_FILE, METRICS_FILE};

const SAMPLER_STREAM: u64 = 21;
const AUGMENT_STREAM: u64 = 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Defaults to `max(1, train images / (P·K))`.
    pub iterations_per_epoch: Option<usize>,
    /// Identities per batch.
    pub p: usize,
    /// Instances per identity.
    pub k: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    /// Iterations during which every backbone is held fixed.
    pub freeze_iterations: usize,
    pub adam: AdamConfig,
    /// L2 penalty on weights; normalisation parameters are exempt.
    pub weight_decay: f64,
    /// Evaluate held-out data every this many epochs (0: only after the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            iterations_per_epoch: None,
            p: 8,
            k: 4,
            base_lr: 3.5e-4,
            min_lr: 3.5e-6,
            freeze_iterations: 100,
            adam: AdamConfig::default(),
            weight_decay: 5e-4,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: &str| Err(Error::config(format!("train.{key}"), msg));
        if self.p < 2 {
            return err("p", "needs at least 2 identities per batch");
        }
        if self.k < 2 {
            return err("k", "needs at least 2 instances per identity");
        }
        if !(self.min_lr >= 0.0 && self.base_lr > self.min_lr && self.base_lr.is_finite()) {
            return err("base_lr", "must satisfy base_lr > min_lr >= 0");
        }
        if self.iterations_per_epoch == Some(0) {
            return err("iterations_per_epoch", "must be positive when set");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err("weight_decay", "must be finite and non-negative");
        }
        self.adam.validate()
    }

    pub fn iterations_per_epoch(&self, num_train: usize) -> usize {
        self.iterations_per_epoch
            .unwrap_or_else(|| (num_train / (self.p * self.k)).max(1))
    }

    pub fn total_iterations(&self, num_train: usize) -> usize {
        self.epochs * self.iterations_per_epoch(num_train)
    }
}

/// `min_lr + ½(base_lr − min_lr)(1 + cos(π t / T))` for `0 ≤ t ≤ T`.
pub fn lr_schedule(config: &TrainConfig, total_iterations: usize, iteration: usize) -> Result<f64> {
    if iteration > total_iterations {
        return Err(Error::Precondition(format!(
            "iteration {iteration} outside the schedule of {total_iterations} iterations"
        )));
    }
    if total_iterations == 0 {
        return Ok(config.base_lr);
    }
    let frac = iteration as f64 / total_iterations as f64;
    Ok(config.min_lr + 0.5 * (config.base_lr - config.min_lr) * (1.0 + (PI * frac).cos()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub backbone_frozen: bool,
    pub loss: LossBundle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_total: f64,
    /// Mean over iterations of the branch-averaged KL term.
    pub mean_kl: f64,
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn lr_trace(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.lr).collect()
    }
}

/// Hooks called by [`train_lds`].
pub trait TrainObserver {
    fn on_iteration(&mut self, _record: &IterationRecord) -> Result<()> {
        Ok(())
    }

    /// Called after every epoch; may return held-out metrics to record.
    fn on_epoch(&mut self, _epoch: usize, _model: &mut MultiBranchModel, _record: &EpochRecord) -> Result<Option<MetricsReport>> {
        Ok(None)
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Everything the loop needs besides the model and data.
#[derive(Clone, Debug)]
pub struct TrainSetup<'a> {
    pub train: &'a TrainConfig,
    pub augment: &'a AugmentConfig,
    pub loss: &'a LossConfig,
    pub seed: u64,
}

/// Builds the branch-input tensors of one batch: `S` tensors of `B × 3 × H × W`.
pub fn batch_inputs(dataset: &Dataset, indices: &[usize], augment: &AugmentConfig, seed: u64, iteration: usize) -> Vec<Array4<f32>> {
    let (h, w) = (augment.height as usize, augment.width as usize);
    let s = augment.num_branches();
    let mut out = vec![Array4::zeros((indices.len(), 3, h, w)); s];
    for (i, &idx) in indices.iter().enumerate() {
        let mut r = rng::stream(rng::mix(&[seed, iteration as u64, i as u64]), AUGMENT_STREAM);
        let inputs = homologous_expand(&dataset.samples()[idx].pixels, augment, &mut r);
        for (k, img) in inputs.images.iter().enumerate() {
            normalize_into(img, augment, out[k].index_axis_mut(Axis(0), i));
        }
    }
    out
}

/// Trains `model` in place and returns the per-iteration history.
pub fn train_lds(model: &mut MultiBranchModel, dataset: &Dataset, setup: &TrainSetup<'_>, observer: &mut dyn TrainObserver) -> Result<TrainHistory> {
    let cfg = setup.train;
    cfg.validate()?;
    setup.augment.validate()?;
    setup.loss.validate()?;
    if setup.augment.num_branches() != model.num_branches() {
        return Err(Error::config(
            "augment.branch_plan",
            format!(
                "{} transforms for a {}-branch model",
                setup.augment.num_branches(),
                model.num_branches()
            ),
        ));
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    dataset.check_triplet_ready()?;
    let sampler = PkSampler::new(dataset, cfg.p, cfg.k)?;
    let per_epoch = cfg.iterations_per_epoch(dataset.len());
    let total = per_epoch * cfg.epochs;
    let roles = model.roles();
    let mut adam = Adam::new(cfg.adam.clone());
    let mut iteration = 0;
    for epoch in 1..=cfg.epochs {
        let (mut sum_total, mut sum_kl) = (0.0, 0.0);
        for _ in 0..per_epoch {
            let lr = lr_schedule(cfg, total, iteration)?;
            let frozen = iteration < cfg.freeze_iterations;
            let mut r = rng::stream(rng::mix(&[setup.seed, iteration as u64]), SAMPLER_STREAM);
            let batch = sampler.sample(&mut r);
            let inputs = batch_inputs(dataset, &batch.indices, setup.augment, setup.seed, iteration);
            let outputs = model.forward_multibranch(&inputs, true)?;
            let outcome = total_loss(&outputs, &batch.labels, &roles, setup.loss)?;
            if let Some((term, value)) = outcome.bundle.non_finite() {
                return Err(Error::NonFinite { term, iteration, value });
            }
            debug_assert!(outcome.bundle.check_identities(1e-9).is_ok());
            model.zero_grad();
            model.backward(&outcome.grads, !frozen)?;
            let wd = cfg.weight_decay;
            model.visit_grouped(&mut |name, is_backbone, p| {
                if p.kind == ParamKind::Buffer || (frozen && is_backbone) {
                    return;
                }
                let decay = if p.kind == ParamKind::Weight { wd } else { 0.0 };
                adam.update(name, p, lr, decay);
            });
            sum_total += outcome.bundle.total;
            sum_kl += outcome.bundle.mean_kl();
            let record = IterationRecord {
                iteration,
                epoch,
                lr,
                backbone_frozen: frozen,
                loss: outcome.bundle,
            };
            observer.on_iteration(&record)?;
            history.iterations.push(record);
            iteration += 1;
        }
        let mut record = EpochRecord {
            epoch,
            mean_total: sum_total / per_epoch as f64,
            mean_kl: sum_kl / per_epoch as f64,
            metrics: None,
        };
        record.metrics = observer.on_epoch(epoch, model, &record)?;
        log::info!(
            "epoch {epoch}/{}: loss {:.4}, kl {:.4}{}",
            cfg.epochs,
            record.mean_total,
            record.mean_kl,
            record
                .metrics
                .as_ref()
                .map(|m| format!(", rank1 {:.3}, mAP {:.3}", m.rank1, m.map))
                .unwrap_or_default()
        );
        history.epochs.push(record);
    }
    Ok(history)
}
