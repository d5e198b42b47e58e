//! End-to-end optimization of `L = L_clf - lambda * sum_l F_l` with
//! per-epoch validation and dual checkpoint selection.

mod config;

pub use config::{TrainConfig, UpdateMode};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, ShiftedExample};
use crate::eval::{accuracies, to_tensor, EvalError};
use crate::mi::{ifm_loss_with_grad, IfmOutput, MiError};
use crate::nn::{
    save_checkpoint, softmax_xent, Checkpoint, CheckpointError, Classifier, Discriminator,
    FeatureMap, Mode, ModelError, Sgd,
};
use crate::seeding::{derive_seed, substream};

const EPOCH_ORDER_TAG: u64 = 0xE90C;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize },
    #[error("not enough data: {0}")]
    DataExhausted(String),
    #[error("training history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mi(#[from] MiError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One line of the metrics log. Losses and objectives are means over the
/// epoch's steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub clf_loss: f64,
    pub f_conv12: f64,
    pub f_conv23: f64,
    pub f_conv34: f64,
    pub val_digit_acc: f64,
    pub val_texture_acc: f64,
    pub seconds: f64,
    pub objective_form: String,
}

impl EpochRecord {
    /// Equality ignoring wall time.
    pub fn same_metrics(&self, other: &Self) -> bool {
        Self {
            seconds: 0.0,
            ..self.clone()
        } == Self {
            seconds: 0.0,
            ..other.clone()
        }
    }
}

/// Values of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub clf_loss: f64,
    pub f: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<EpochRecord>,
    pub best_digit_epoch: usize,
    pub best_texture_epoch: usize,
    pub best_digit: Checkpoint,
    pub best_texture: Checkpoint,
    pub final_checkpoint: Checkpoint,
    pub config: TrainConfig,
}

/// Epoch indices maximizing validation digit and texture accuracy; the
/// earliest epoch wins ties.
pub fn select_checkpoints(history: &[EpochRecord]) -> Result<(usize, usize), TrainError> {
    let argmax = |key: fn(&EpochRecord) -> f64| {
        let mut best = 0;
        for (i, r) in history.iter().enumerate() {
            if key(r) > key(&history[best]) {
                best = i;
            }
        }
        best
    };
    if history.is_empty() {
        return Err(TrainError::EmptyHistory);
    }
    Ok((argmax(|r| r.val_digit_acc), argmax(|r| r.val_texture_acc)))
}

/// Mutable state of a run: the classifier, its pair discriminators and
/// their optimizers.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub classifier: Classifier<f32>,
    pub discriminators: Vec<Discriminator<f32>>,
    clf_opt: Sgd<f32>,
    disc_opts: Vec<Sgd<f32>>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::InvalidConfig)?;
        let classifier = Classifier::init(config.classifier.clone(), config.model_seed)?;
        let discriminators = if config.uses_discriminators() {
            config
                .discriminator_configs()
                .into_iter()
                .enumerate()
                .map(|(k, c)| Discriminator::init(c, config.model_seed, k as u64))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        let lr = config.learning_rate as f32;
        let mu = config.momentum as f32;
        Ok(Self {
            clf_opt: Sgd::new(lr, mu),
            disc_opts: discriminators.iter().map(|_| Sgd::new(lr, mu)).collect(),
            classifier,
            discriminators,
            config,
        })
    }

    fn discriminator_step(&mut self, out: &IfmOutput<f32>) {
        for ((d, opt), g) in self.discriminators.iter_mut().zip(&mut self.disc_opts).zip(&out.disc_grads) {
            opt.step(d, g);
        }
        out.update_running_stats(&mut self.discriminators);
    }

    /// One update on `batch`. Pair sampling is keyed by `sample_key`.
    /// Returns `None` as the loss is non-finite, leaving parameters untouched.
    pub fn step(&mut self, batch: &[ShiftedExample], sample_key: u64) -> Result<Option<StepStats>, TrainError> {
        let lambda = self.config.lambda_ifm;
        let ifm = self.config.ifm();
        let x = to_tensor::<f32>(batch);
        let labels: Vec<u8> = batch.iter().map(|e| e.digit_label).collect();
        let (out, cache) = self.classifier.forward(x.view(), Mode::Train)?;
        let xent = softmax_xent(out.logits.view(), &labels)?;
        let clf_loss = xent.loss as f64;

        let mut f = [0.0; 3];
        let mut dtaps: Option<Vec<FeatureMap<f32>>> = None;
        if self.config.uses_discriminators() {
            // Gradients of -sum F: discriminators descend them as they are,
            // the classifier receives them scaled by lambda.
            let o = ifm_loss_with_grad(&out.taps, &self.discriminators, &ifm, sample_key, -1.0)?;
            for (slot, e) in f.iter_mut().zip(&o.per_layer) {
                *slot = e.value;
            }
            let total: f64 = f.iter().sum();
            if !total.is_finite() || !(clf_loss - lambda * total).is_finite() {
                return Ok(None);
            }
            self.discriminator_step(&o);
            if lambda > 0.0 {
                let taps_grad = match self.config.update_mode {
                    UpdateMode::Joint => o.tap_grads,
                    UpdateMode::Alternating => {
                        let key = derive_seed(&[sample_key, 1]);
                        ifm_loss_with_grad(&out.taps, &self.discriminators, &ifm, key, -1.0)?.tap_grads
                    }
                };
                let l = lambda as f32;
                dtaps = Some(taps_grad.iter().map(|g| g.map(|v| v * l)).collect());
            }
        }
        let loss = clf_loss - lambda * f.iter().sum::<f64>();
        if !loss.is_finite() {
            return Ok(None);
        }
        let mut grads = self.classifier.zeros_like();
        self.classifier
            .backward(&cache, xent.dlogits.view(), dtaps.as_deref(), &mut grads);
        self.clf_opt.step(&mut self.classifier, &grads);
        self.classifier.update_running_stats(&cache);
        Ok(Some(StepStats { loss, clf_loss, f }))
    }

    pub fn checkpoint(&self, label: &str, record: Option<&EpochRecord>) -> Checkpoint {
        let mut ckpt = Checkpoint::new(label, self.classifier.clone(), self.discriminators.clone());
        if let Some(r) = record {
            ckpt.meta.epoch = Some(r.epoch);
            ckpt.meta.val_digit_acc = Some(r.val_digit_acc);
            ckpt.meta.val_texture_acc = Some(r.val_texture_acc);
        }
        ckpt.meta.train_config = serde_json::to_value(&self.config).expect("config serializes");
        ckpt
    }
}

fn limited(split: &[ShiftedExample], limit: Option<usize>) -> &[ShiftedExample] {
    &split[..limit.map_or(split.len(), |n| n.min(split.len()))]
}

pub fn train(config: TrainConfig, bundle: &DatasetBundle) -> Result<TrainResult, TrainError> {
    train_with(config, bundle, |_| {})
}

/// [`train`] with a callback after every epoch (for streaming logs).
pub fn train_with(
    config: TrainConfig,
    bundle: &DatasetBundle,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainResult, TrainError> {
    let train_set = limited(&bundle.train, config.train_limit);
    let val_set = limited(&bundle.val, config.val_limit);
    if train_set.len() < 2 {
        return Err(TrainError::DataExhausted(format!(
            "{} training examples; at least 2 are needed for batch statistics",
            train_set.len()
        )));
    }
    if val_set.is_empty() {
        return Err(TrainError::DataExhausted("validation split is empty".into()));
    }
    let mut trainer = Trainer::new(config.clone())?;
    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best_digit: Option<Checkpoint> = None;
    let mut best_texture: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch: Vec<ShiftedExample> = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut substream(&[config.data_seed, EPOCH_ORDER_TAG, epoch as u64]));
        let mut sums = [0.0f64; 5];
        let mut steps = 0usize;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_set[i].clone()));
            let key = derive_seed(&[config.sampling_seed, epoch as u64, step as u64]);
            let s = trainer
                .step(&batch, key)?
                .ok_or(TrainError::DivergedLoss { epoch, step })?;
            for (acc, v) in sums.iter_mut().zip([s.loss, s.clf_loss, s.f[0], s.f[1], s.f[2]]) {
                *acc += v;
            }
            steps += 1;
        }
        let mean = |k: usize| sums[k] / steps as f64;
        let (val_digit_acc, val_texture_acc) = accuracies(&trainer.classifier, val_set)?;
        let record = EpochRecord {
            epoch,
            loss: mean(0),
            clf_loss: mean(1),
            f_conv12: mean(2),
            f_conv23: mean(3),
            f_conv34: mean(4),
            val_digit_acc,
            val_texture_acc,
            seconds: started.elapsed().as_secs_f64(),
            objective_form: config.objective_form.tag().to_string(),
        };
        let improves = |best: &Option<Checkpoint>, acc: f64, key: fn(&Checkpoint) -> Option<f64>| {
            best.as_ref().and_then(key).is_none_or(|b| acc > b)
        };
        if improves(&best_digit, val_digit_acc, |c| c.meta.val_digit_acc) {
            best_digit = Some(trainer.checkpoint("best_digit", Some(&record)));
        }
        if improves(&best_texture, val_texture_acc, |c| c.meta.val_texture_acc) {
            best_texture = Some(trainer.checkpoint("best_texture", Some(&record)));
        }
        log::info!(
            "epoch {epoch}: loss {:.4} clf {:.4} F [{:.4} {:.4} {:.4}] val digit {:.4} texture {:.4} ({:.1}s)",
            record.loss,
            record.clf_loss,
            record.f_conv12,
            record.f_conv23,
            record.f_conv34,
            val_digit_acc,
            val_texture_acc,
            record.seconds
        );
        on_epoch(&record);
        history.push(record);
    }
    let (best_digit_epoch, best_texture_epoch) = select_checkpoints(&history)?;
    let final_checkpoint = trainer.checkpoint("final", history.last());
    Ok(TrainResult {
        history,
        best_digit_epoch,
        best_texture_epoch,
        best_digit: best_digit.expect("at least one epoch"),
        best_texture: best_texture.expect("at least one epoch"),
        final_checkpoint,
        config,
    })
}

pub fn metrics_line(record: &EpochRecord) -> String {
    serde_json::to_string(record).expect("record serializes")
}

pub fn write_metrics(history: &[EpochRecord], path: &Path) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in history {
        writeln!(f, "{}", metrics_line(r)).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Writes `best_digit.ckpt`, `best_texture.ckpt`, `final.ckpt` and
/// `metrics.jsonl` into `dir`.
pub fn save_run(result: &TrainResult, dir: &Path) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    save_checkpoint(&result.best_digit, dir.join("best_digit.ckpt"))?;
    save_checkpoint(&result.best_texture, dir.join("best_texture.ckpt"))?;
    save_checkpoint(&result.final_checkpoint, dir.join("final.ckpt"))?;
    write_metrics(&result.history, &dir.join("metrics.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, d: f64, t: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            loss: 0.0,
            clf_loss: 0.0,
            f_conv12: 0.0,
            f_conv23: 0.0,
            f_conv34: 0.0,
            val_digit_acc: d,
            val_texture_acc: t,
            seconds: 0.0,
            objective_form: "standard".into(),
        }
    }

    #[test]
    fn selection_argmax_and_ties() {
        let h = [rec(0, 0.1, 0.9), rec(1, 0.5, 0.9), rec(2, 0.3, 0.2)];
        assert_eq!(select_checkpoints(&h).unwrap(), (1, 0));
        assert!(matches!(select_checkpoints(&[]), Err(TrainError::EmptyHistory)));
    }

    #[test]
    fn metrics_field_names() {
        let line = metrics_line(&rec(3, 0.5, 0.25));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        for key in [
            "epoch", "loss", "clf_loss", "f_conv12", "f_conv23", "f_conv34",
            "val_digit_acc", "val_texture_acc", "seconds",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { lambda_ifm: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let widths: Vec<_> = TrainConfig::default()
            .discriminator_configs()
            .iter()
            .map(|c| c.input_width)
            .collect();
        assert_eq!(widths, vec![96, 192, 256]);
    }
}
