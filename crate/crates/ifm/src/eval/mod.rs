//! Dual-label scoring: one forward pass, compared against both the digit and
//! the texture label.

mod report;

pub use report::{
    paper_reference_rows, parse_csv, render_csv, render_table, ReferenceRow, CSV_HEADER,
    ICE_FI_REVNET,
};

use ndarray::{Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{ShiftedExample, IMAGE_SIZE};
use crate::nn::{Checkpoint, Classifier, ClassifierConfig, ModelError, Real};

/// Examples scored per forward pass.
pub const EVAL_CHUNK: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty split")]
    EmptySplit,
    #[error("checkpoint does not fit the data: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Row label, e.g. `ours_Digit`.
    pub model: String,
    pub split: String,
    pub n: usize,
    pub digit_accuracy: f64,
    pub texture_accuracy: f64,
}

impl EvalResult {
    /// `min / max` of the two accuracies; 1 means both cues are used equally.
    pub fn balance(&self) -> f64 {
        let (lo, hi) = if self.digit_accuracy < self.texture_accuracy {
            (self.digit_accuracy, self.texture_accuracy)
        } else {
            (self.texture_accuracy, self.digit_accuracy)
        };
        if hi == 0.0 {
            0.0
        } else {
            lo / hi
        }
    }
}

/// Stacks examples into a `(b, 1, 32, 32)` tensor scaled to `[0, 1]`.
pub fn to_tensor<T: Real>(examples: &[ShiftedExample]) -> Array4<T> {
    let scale = T::lit(1.0 / 255.0);
    let mut data = Vec::with_capacity(examples.len() * IMAGE_SIZE * IMAGE_SIZE);
    for ex in examples {
        data.extend(ex.image.iter().map(|&p| T::from_u8(p).unwrap() * scale));
    }
    Array4::from_shape_vec((examples.len(), 1, IMAGE_SIZE, IMAGE_SIZE), data).expect("sized")
}

/// Index of the largest logit per row; the first one wins ties.
pub fn argmax_rows<T: Real>(logits: ArrayView2<T>) -> Vec<usize> {
    logits
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// `(digit hits, texture hits)` for predictions against a split.
pub fn count_hits(predictions: &[usize], examples: &[ShiftedExample]) -> (usize, usize) {
    predictions.iter().zip(examples).fold((0, 0), |(d, t), (&p, ex)| {
        (
            d + (p == ex.digit_label as usize) as usize,
            t + (p == ex.texture_label as usize) as usize,
        )
    })
}

/// Eval-mode digit and texture accuracy of `clf`; parameters and running
/// statistics are untouched.
pub fn accuracies<T: Real>(clf: &Classifier<T>, examples: &[ShiftedExample]) -> Result<(f64, f64), EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let (mut d, mut t) = (0, 0);
    for chunk in examples.chunks(EVAL_CHUNK) {
        let logits = clf.predict_logits(to_tensor::<T>(chunk).view())?;
        let (dd, tt) = count_hits(&argmax_rows(logits.view()), chunk);
        d += dd;
        t += tt;
    }
    let n = examples.len() as f64;
    Ok((d as f64 / n, t as f64 / n))
}

fn check_config(cfg: &ClassifierConfig) -> Result<(), EvalError> {
    if cfg.in_channels != 1 || cfg.input_size != IMAGE_SIZE || cfg.num_classes != 10 {
        return Err(EvalError::ConfigMismatch(format!(
            "classifier expects {}x{}x{} inputs and {} classes; data is 1x32x32 with 10",
            cfg.in_channels, cfg.input_size, cfg.input_size, cfg.num_classes
        )));
    }
    Ok(())
}

pub fn evaluate(
    ckpt: &Checkpoint,
    model: &str,
    split_name: &str,
    split: &[ShiftedExample],
) -> Result<EvalResult, EvalError> {
    if ckpt.meta.classifier != ckpt.classifier.config {
        return Err(EvalError::ConfigMismatch(
            "checkpoint metadata disagrees with its stored classifier".into(),
        ));
    }
    check_config(&ckpt.classifier.config)?;
    let (digit_accuracy, texture_accuracy) = accuracies(&ckpt.classifier, split)?;
    Ok(EvalResult {
        model: model.to_string(),
        split: split_name.to_string(),
        n: split.len(),
        digit_accuracy,
        texture_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ex(d: u8, t: u8) -> ShiftedExample {
        ShiftedExample {
            image: [0; 1024],
            digit_label: d,
            texture_label: t,
        }
    }

    #[test]
    fn hand_counted_hits() {
        let logits = array![
            [0.0f32, 5.0, 0.0],
            [3.0, 1.0, 0.0],
            [0.0, 0.0, 2.0],
            [1.0, 1.0, 0.0],
            [0.0, 0.0, 9.0]
        ];
        let preds = argmax_rows(logits.view());
        assert_eq!(preds, vec![1, 0, 2, 0, 2]);
        let split = [ex(1, 0), ex(0, 0), ex(1, 2), ex(0, 1), ex(2, 2)];
        assert_eq!(count_hits(&preds, &split), (4, 3));
    }

    #[test]
    fn balance_score() {
        let r = EvalResult {
            model: "m".into(),
            split: "test".into(),
            n: 1,
            digit_accuracy: 0.2,
            texture_accuracy: 0.8,
        };
        assert!((r.balance() - 0.25).abs() < 1e-12);
    }
}
