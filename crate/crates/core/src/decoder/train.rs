//! Mini-batch SGD with a cosine-annealed learning rate.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_gradient, loss_value};
use super::DecoderModel;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::PlainImage;
use crate::optics::SpecklePattern;
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.15,
            epochs: 30,
            batch_size: 32,
            seed: 29,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        self.epochs * self.steps_per_epoch(n_train)
    }
}

/// `0.5·lr0·(1 + cos(π·step/total_steps))`.
pub fn cosine_lr(lr0: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
}

/// Paired ciphertexts and plaintexts.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a> {
    pub speckles: &'a [SpecklePattern],
    pub plaintexts: &'a [PlainImage],
}

impl<'a> TrainingSet<'a> {
    pub fn new(speckles: &'a [SpecklePattern], plaintexts: &'a [PlainImage]) -> Result<Self> {
        if speckles.len() != plaintexts.len() {
            return Err(Error::invalid(format!(
                "{} speckles but {} plaintexts",
                speckles.len(),
                plaintexts.len()
            )));
        }
        Ok(Self {
            speckles,
            plaintexts,
        })
    }

    pub fn len(&self) -> usize {
        self.speckles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speckles.is_empty()
    }

    fn check_shapes(&self, model: &DecoderModel) -> Result<()> {
        let input = model.input_shape();
        let (oh, ow) = model.output_shape();
        for (i, (s, p)) in self.speckles.iter().zip(self.plaintexts).enumerate() {
            if s.height != input.height || s.width != input.width {
                return Err(Error::invalid(format!(
                    "sample {i}: speckle {}x{} does not match decoder input {}x{}",
                    s.height, s.width, input.height, input.width
                )));
            }
            if p.height() != oh || p.width() != ow {
                return Err(Error::invalid(format!(
                    "sample {i}: plaintext {}x{} does not match decoder output {oh}x{ow}",
                    p.height(),
                    p.width()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_pcc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,train_loss,eval_loss,eval_pcc")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{:.9},{:.9},{:.9}",
                e.epoch, e.train_loss, e.eval_loss, e.eval_pcc
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Mean loss and mean PCC of the model over a labelled set. Samples whose PCC
/// is undefined count as zero correlation.
pub fn evaluate_set(model: &DecoderModel, set: TrainingSet<'_>, exec: Exec) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let predictions = model.predict(set.speckles, exec)?;
    let mut loss_sum = 0.0;
    let mut pcc_sum = 0.0;
    for (p, t) in predictions.iter().zip(set.plaintexts) {
        let v = loss_value(p.data(), t.data())?;
        loss_sum += v.loss;
        pcc_sum += v.pcc.unwrap_or(0.0);
    }
    let n = set.len() as f64;
    Ok((loss_sum / n, pcc_sum / n))
}

/// Trains with plain SGD (no momentum, no weight decay). Mini-batches follow
/// a seeded shuffle per epoch; the learning rate is annealed per optimizer
/// step. Identical inputs and seeds give bit-identical weights regardless of
/// the number of worker threads.
pub fn train(
    mut model: DecoderModel,
    train_set: TrainingSet<'_>,
    eval_set: TrainingSet<'_>,
    config: &TrainConfig,
    exec: Exec,
) -> Result<(DecoderModel, TrainHistory)> {
    let history = train_in_place(&mut model, train_set, eval_set, config, exec)?;
    Ok((model, history))
}

fn train_in_place(
    model: &mut DecoderModel,
    train_set: TrainingSet<'_>,
    eval_set: TrainingSet<'_>,
    config: &TrainConfig,
    exec: Exec,
) -> Result<TrainHistory> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    train_set.check_shapes(model)?;
    eval_set.check_shapes(model)?;

    let n = train_set.len();
    let total_steps = config.total_steps(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::stream(config.seed, streams::SHUFFLE);
    let mut history = TrainHistory::default();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let lr = cosine_lr(config.learning_rate, step, total_steps);
            let speckles: Vec<&SpecklePattern> =
                batch.iter().map(|&i| &train_set.speckles[i]).collect();
            let (outputs, tape) = model.forward_batch(&speckles, exec)?;
            let scale = 1.0 / batch.len() as f64;
            let per_sample = exec.try_map(batch.len(), |s| {
                loss_and_gradient(&outputs[s], train_set.plaintexts[batch[s]].data())
            })?;
            let mut batch_loss = 0.0;
            let mut output_grads = Vec::with_capacity(batch.len());
            for (value, mut g) in per_sample {
                batch_loss += value.loss * scale;
                g.iter_mut().for_each(|v| *v *= scale);
                output_grads.push(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step,
                    learning_rate: lr,
                    loss: batch_loss,
                });
            }
            let grads = model.backward_batch(tape, output_grads, exec)?;
            let mut finite = true;
            for (layer, g) in model.layers_mut().iter_mut().zip(&grads) {
                for (p, gv) in layer.params_mut().iter_mut().zip(g) {
                    *p -= lr * gv;
                    finite &= p.is_finite();
                }
            }
            if !finite {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step,
                    learning_rate: lr,
                    loss: f64::NAN,
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            step += 1;
        }
        let (eval_loss, eval_pcc) = evaluate_set(model, eval_set, exec)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: epoch_loss / n as f64,
            eval_loss,
            eval_pcc,
        };
        log::info!(
            "epoch {:>3}: train loss {:.5}, eval loss {:.5}, eval PCC {:.4}",
            record.epoch,
            record.train_loss,
            record.eval_loss,
            record.eval_pcc
        );
        history.epochs.push(record);
    }
    Ok(history)
}
