use ndarray::{Array2, ArrayView2};

use super::{bad_shape, ModelError, Real};

/// Mean cross-entropy of softmax(logits) against integer labels, with its
/// gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct SoftmaxXent<T> {
    /// Nats, averaged over the batch.
    pub loss: T,
    pub dlogits: Array2<T>,
}

pub fn softmax_xent<T: Real>(
    logits: ArrayView2<T>,
    labels: &[u8],
) -> Result<SoftmaxXent<T>, ModelError> {
    let (b, k) = logits.dim();
    if labels.len() != b || b == 0 {
        return Err(bad_shape(format!("{} labels", b.max(1)), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(ModelError::BadLabel {
            label: bad as usize,
            classes: k,
        });
    }
    let inv_b = T::one() / T::from_usize(b).unwrap();
    let mut dlogits = Array2::<T>::zeros((b, k));
    let mut total = T::zero();
    for ((row, mut drow), &label) in logits.outer_iter().zip(dlogits.outer_iter_mut()).zip(labels) {
        let max = row.fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut sum = T::zero();
        for (d, &v) in drow.iter_mut().zip(row.iter()) {
            *d = (v - max).exp();
            sum += *d;
        }
        let log_z = sum.ln() + max;
        total += log_z - row[label as usize];
        drow.mapv_inplace(|e| e / sum * inv_b);
        drow[label as usize] -= inv_b;
    }
    Ok(SoftmaxXent {
        loss: total * inv_b,
        dlogits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn uniform_logits_cost_ln_10() {
        let logits = Array2::<f64>::zeros((4, 10));
        let out = softmax_xent(logits.view(), &[0, 3, 9, 5]).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn saturated_true_class_costs_nothing() {
        let mut logits = Array2::<f64>::zeros((2, 10));
        logits[[0, 4]] = 1000.0;
        logits[[1, 7]] = 1000.0;
        let out = softmax_xent(logits.view(), &[4, 7]).unwrap();
        assert!(out.loss < 1e-6);
    }

    #[test]
    fn single_hot_logit_matches_hand_value() {
        // -ln(e / (e + 9)) with e = exp(1): 1.4611502
        let logits = array![[1.0f64, 0., 0., 0., 0., 0., 0., 0., 0., 0.]];
        let out = softmax_xent(logits.view(), &[0]).unwrap();
        let e = 1f64.exp();
        assert!((out.loss - ((9.0 + e) / e).ln()).abs() < 1e-12);
        assert!((out.loss - 1.46115).abs() < 1e-5);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Array2::<f32>::zeros((1, 10));
        assert_eq!(
            softmax_xent(logits.view(), &[10]).unwrap_err(),
            ModelError::BadLabel { label: 10, classes: 10 }
        );
    }
}
