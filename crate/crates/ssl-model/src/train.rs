use std::io::Write;

use autodiff_core::{Adam, AutodiffError, Gradients, Tape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ModelResult};
use crate::loss::{loss_on_tape, LossBreakdown};
use crate::model::SslModel;
use crate::tokens::{apply_mask, SceneInput, TokenMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    /// Drives shuffling and the random audio masks.
    pub seed: u64,
    /// Batch gradients above this global norm are rescaled to it.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 0.001,
            decay_factor: 0.95,
            decay_every: 10,
            seed: 0,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> ModelResult<()> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be at least 1".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(ModelError::Config(format!("decay_factor {} must lie in (0, 1]", self.decay_factor)));
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return Err(ModelError::Config("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean over the epoch's samples, under training masks.
    pub loss: LossBreakdown,
    /// Mean over batches of the pre-clipping global gradient norm.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the dataset with scenario masks only, before training.
    pub initial_loss: LossBreakdown,
    /// The same measurement after the last epoch.
    pub final_loss: LossBreakdown,
    pub epochs: Vec<EpochLog>,
}

fn mean_of(sum: LossBreakdown, n: usize) -> LossBreakdown {
    let s = 1.0 / n as f64;
    LossBreakdown {
        sound: sum.sound * s,
        mloc: sum.mloc * s,
        sloc: sum.sloc * s,
        total: sum.total * s,
    }
}

fn add_to(acc: &mut LossBreakdown, l: &LossBreakdown) {
    acc.sound += l.sound;
    acc.mloc += l.mloc;
    acc.sloc += l.sloc;
    acc.total += l.total;
}

fn sample_gradients(model: &SslModel, scene: &SceneInput, mask: &TokenMask) -> ModelResult<(Gradients, LossBreakdown)> {
    let mut tape = Tape::new(model.store());
    let pass = model.forward(&mut tape, scene, mask, false)?;
    let (total, breakdown) = loss_on_tape(&mut tape, &pass, scene, model.config())?;
    Ok((tape.backward(total)?, breakdown))
}

/// Loss of one scene under `mask`, without gradients.
pub fn scene_loss(model: &SslModel, scene: &SceneInput, mask: &TokenMask) -> ModelResult<LossBreakdown> {
    let mut tape = Tape::new(model.store());
    let pass = model.forward(&mut tape, scene, mask, false)?;
    Ok(loss_on_tape(&mut tape, &pass, scene, model.config())?.1)
}

/// Mean loss over `scenes` with scenario masks only.
pub fn evaluation_loss(model: &SslModel, scenes: &[SceneInput]) -> ModelResult<LossBreakdown> {
    if scenes.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut sum = LossBreakdown::default();
    for s in scenes {
        add_to(&mut sum, &scene_loss(model, s, &TokenMask::scenario_only(s))?);
    }
    Ok(mean_of(sum, scenes.len()))
}

fn diverged(epoch: usize, e: ModelError) -> ModelError {
    match e {
        ModelError::Autodiff(
            inner @ (AutodiffError::NonFinite { .. } | AutodiffError::NonFiniteGradient(_)),
        ) => ModelError::Diverged {
            epoch,
            detail: inner.to_string(),
        },
        other => other,
    }
}

/// Minibatch Adam over `scenes`. Per-sample gradients are averaged within a
/// batch. Given the same model, scenes and config the run is bit-for-bit
/// reproducible. Each epoch's [`EpochLog`] is written to `log` as one JSON
/// line.
pub fn train(
    model: &mut SslModel,
    scenes: &[SceneInput],
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> ModelResult<TrainReport> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut adam = Adam::new(config.learning_rate)?;
    adam.decay_factor = config.decay_factor;
    adam.decay_every = config.decay_every;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mask_ratio = model.config().mask_ratio;
    let initial_loss = evaluation_loss(model, scenes)?;
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        adam.epoch_schedule(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut norm_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::empty(model.store().len());
            for &i in batch {
                let mask = apply_mask(&scenes[i], mask_ratio, rng.random())?;
                let (g, l) = sample_gradients(model, &scenes[i], &mask).map_err(|e| diverged(epoch, e))?;
                if !l.total.is_finite() {
                    return Err(ModelError::Diverged {
                        epoch,
                        detail: format!("loss {} on scene {i}", l.total),
                    });
                }
                grads.accumulate(&g)?;
                add_to(&mut sum, &l);
            }
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    detail: format!("gradient norm {norm}"),
                });
            }
            if let Some(max) = config.max_grad_norm {
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            norm_sum += norm;
            batches += 1;
            adam.step(model.store_mut(), &grads).map_err(|e| diverged(epoch, e.into()))?;
        }
        let entry = EpochLog {
            epoch,
            learning_rate: adam.learning_rate,
            loss: mean_of(sum, scenes.len()),
            grad_norm: norm_sum / batches as f64,
        };
        log::debug!("epoch {epoch}: loss {:.6e}", entry.loss.total);
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&entry).map_err(|e| ModelError::Config(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        epochs.push(entry);
    }
    let final_loss = evaluation_loss(model, scenes)?;
    Ok(TrainReport {
        initial_loss,
        final_loss,
        epochs,
    })
}
