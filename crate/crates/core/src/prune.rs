//! Greedy backward elimination of pixels from a trained bank.

use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Dataset;
use crate::sensor::SensorMode;
use crate::train::{evaluate_model, fit, Checkpoint, Metrics, Model};

/// When the head is retrained during pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneCadence {
    /// Fine-tune the head after every committed removal.
    EveryRemoval,
    /// Keep the original head throughout.
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub target_k: usize,
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_cadence")]
    pub cadence: FinetuneCadence,
}

fn default_finetune_epochs() -> usize {
    3
}

fn default_cadence() -> FinetuneCadence {
    FinetuneCadence::EveryRemoval
}

impl PruneConfig {
    pub fn new(target_k: usize) -> Self {
        Self {
            target_k,
            finetune_epochs: default_finetune_epochs(),
            cadence: default_cadence(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PruneStep {
    pub step: usize,
    pub removed_index: usize,
    /// Validation loss with the pixel zeroed, before any fine-tuning.
    pub pre_loss: f64,
    pub post_finetune_loss: f64,
    pub val_rmse: f64,
    /// Screen loss of every candidate, in pixel order.
    pub candidates: Vec<(usize, f64)>,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone)]
pub struct PruneTrace {
    /// Validation loss of the unpruned model.
    pub initial_loss: f64,
    pub steps: Vec<PruneStep>,
}

impl PruneTrace {
    pub fn removed(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.removed_index).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record([
            "step",
            "removed_index",
            "pre_loss",
            "post_finetune_loss",
            "val_rmse",
        ])
        .map_err(|e| csv_error(path, e))?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.removed_index.to_string(),
                s.pre_loss.to_string(),
                s.post_finetune_loss.to_string(),
                s.val_rmse.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(0, format!("{}: {other:?}", path.display())),
    }
}

fn val_metrics(ckpt: &Checkpoint, model: &Model, val: &Dataset) -> Result<Metrics> {
    let camera = ckpt.setup().camera()?;
    evaluate_model(
        model,
        &camera,
        SensorMode::Full,
        &ckpt.scene,
        val,
        ckpt.meta.validation_noise_seed,
    )
}

/// Removes pixels one at a time until `target_k` remain, each time dropping
/// the pixel whose zeroed measurement costs the least validation loss.
pub fn greedy_prune(
    checkpoint: &Checkpoint,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &PruneConfig,
) -> Result<PruneTrace> {
    let remaining = checkpoint.model.active.iter().filter(|&&a| a).count();
    if cfg.target_k == 0 || cfg.target_k >= remaining {
        return Err(Error::config(format!(
            "target_k must be in [1, {}), got {}",
            remaining, cfg.target_k
        )));
    }

    let mut setup = checkpoint.setup();
    setup.train.freeze_masks = true;
    setup.train.max_epochs = cfg.finetune_epochs;
    setup.train.patience = cfg.finetune_epochs.max(1);

    let mut current = checkpoint.clone();
    let initial_loss = val_metrics(&current, &current.model, val_set)?.loss;
    let mut steps = Vec::new();

    for step in 0..remaining - cfg.target_k {
        let live: Vec<usize> = (0..current.pixels())
            .filter(|&j| current.model.active[j])
            .collect();
        let candidates = live
            .par_iter()
            .map(|&j| {
                let mut m = current.model.clone();
                m.active[j] = false;
                val_metrics(&current, &m, val_set).map(|v| (j, v.loss))
            })
            .collect::<Result<Vec<_>>>()?;
        let (removed, pre_loss) = candidates
            .iter()
            .copied()
            .fold(None, |best: Option<(usize, f64)>, c| match best {
                Some(b) if b.1 <= c.1 => Some(b),
                _ => Some(c),
            })
            .expect("at least two live pixels");

        let mut model = current.model.clone();
        model.active[removed] = false;
        current = match cfg.cadence {
            FinetuneCadence::EveryRemoval if cfg.finetune_epochs > 0 => {
                fit(&setup, model, train_set, val_set)?.checkpoint
            }
            _ => {
                let v = val_metrics(&current, &model, val_set)?;
                let mut c = current.clone();
                c.model = model;
                c.val_rmse = v.rmse;
                c.val_loss = v.loss;
                c
            }
        };
        let post = val_metrics(&current, &current.model, val_set)?;
        info!(
            "prune step {step}: removed pixel {removed}, loss {pre_loss:.4} -> {:.4}",
            post.loss
        );
        steps.push(PruneStep {
            step,
            removed_index: removed,
            pre_loss,
            post_finetune_loss: post.loss,
            val_rmse: post.rmse,
            candidates,
            checkpoint: current.clone(),
        });
    }
    Ok(PruneTrace {
        initial_loss,
        steps,
    })
}
