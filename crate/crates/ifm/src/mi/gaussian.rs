use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{Discriminator, DiscriminatorConfig, Mode, Sgd};
use crate::seeding::substream;

use super::ifm::{backward_batches, score_batches, BnGrouping};
use super::objective::{log_two_over_one_plus_exp, objective_from_scores, objective_grad, MIEstimate, ObjectiveForm};
use super::MiError;

const HALF_WIDTH: f64 = 8.0;
const GRID: usize = 2001;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianReference {
    /// `2 * JSD(P || Q)`, the supremum of the standard-form objective.
    pub two_jsd: f64,
    /// `-0.5 * ln(1 - rho^2)`.
    pub mutual_information: f64,
}

fn simpson_weight(i: usize) -> f64 {
    if i == 0 || i == GRID - 1 {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Divergence between a standard bivariate normal with correlation `rho`
/// and the product of its marginals, by Simpson quadrature on `[-8, 8]^2`.
pub fn gaussian_reference_jsd(rho: f64) -> Result<GaussianReference, MiError> {
    if !(rho.abs() < 1.0) {
        return Err(MiError::DegenerateRho(rho));
    }
    let one_m = 1.0 - rho * rho;
    let log_norm = LN_2PI + 0.5 * one_m.ln();
    let h = 2.0 * HALF_WIDTH / (GRID - 1) as f64;
    let mut total = 0.0;
    for i in 0..GRID {
        let x = -HALF_WIDTH + i as f64 * h;
        let mut row = 0.0;
        for j in 0..GRID {
            let y = -HALF_WIDTH + j as f64 * h;
            let lq = -(x * x + y * y) / 2.0 - LN_2PI;
            let lp = -(x * x - 2.0 * rho * x * y + y * y) / (2.0 * one_m) - log_norm;
            let d = lq - lp;
            let v = lp.exp() * log_two_over_one_plus_exp(d) + lq.exp() * log_two_over_one_plus_exp(-d);
            row += simpson_weight(j) * v;
        }
        total += simpson_weight(i) * row;
    }
    Ok(GaussianReference {
        two_jsd: total * h * h / 9.0,
        mutual_information: 0.0 - 0.5 * one_m.ln(),
    })
}

/// Training settings for [`estimate_mi_gaussian`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianHarness {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub grouping: BnGrouping,
    /// Size of the fresh sample the final estimate is computed on.
    pub eval_samples: usize,
}

impl Default for GaussianHarness {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 0.01,
            momentum: 0.9,
            grouping: BnGrouping::Pooled,
            eval_samples: 20_000,
        }
    }
}

pub const MIN_GAUSSIAN_SAMPLES: usize = 1000;

fn draw_pairs<R: Rng + ?Sized>(rho: f64, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let c = (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            (x, rho * x + c * e)
        })
        .collect()
}

/// Joint rows take `(x_i, z_i)`; marginal rows pair `x` and `z` from two
/// independently drawn indices.
fn batches<R: Rng + ?Sized>(
    data: &[(f64, f64)],
    m: usize,
    rng: &mut R,
) -> (Array2<f32>, Array2<f32>) {
    let n = data.len();
    let mut joint = Array2::zeros((m, 2));
    let mut marginal = Array2::zeros((m, 2));
    for r in 0..m {
        let (x, z) = data[rng.random_range(0..n)];
        joint[[r, 0]] = x as f32;
        joint[[r, 1]] = z as f32;
        let a = data[rng.random_range(0..n)].0;
        let b = data[rng.random_range(0..n)].1;
        marginal[[r, 0]] = a as f32;
        marginal[[r, 1]] = b as f32;
    }
    (joint, marginal)
}

/// Trains a fresh two-input discriminator on `n_samples` draws of a
/// correlated Gaussian pair by ascending the standard-form objective, then
/// reports the objective on a fresh sample.
pub fn estimate_mi_gaussian(
    rho: f64,
    n_samples: usize,
    train_steps: usize,
    seed: u64,
) -> Result<MIEstimate, MiError> {
    estimate_mi_gaussian_with(rho, n_samples, train_steps, seed, &GaussianHarness::default())
}

pub fn estimate_mi_gaussian_with(
    rho: f64,
    n_samples: usize,
    train_steps: usize,
    seed: u64,
    harness: &GaussianHarness,
) -> Result<MIEstimate, MiError> {
    if !(rho.abs() < 1.0) {
        return Err(MiError::DegenerateRho(rho));
    }
    if n_samples < MIN_GAUSSIAN_SAMPLES {
        return Err(MiError::TooFewSamples {
            min: MIN_GAUSSIAN_SAMPLES,
            got: n_samples,
        });
    }
    if harness.batch_size < 2 || harness.eval_samples == 0 {
        return Err(MiError::EmptyBatch);
    }
    let data = draw_pairs(rho, n_samples, &mut substream(&[seed, 0]));
    let mut disc = Discriminator::<f32>::init(DiscriminatorConfig::new(2), seed, 0)?;
    let mut opt = Sgd::new(harness.learning_rate as f32, harness.momentum as f32);
    let mut rng = substream(&[seed, 1]);
    let form = ObjectiveForm::Standard;
    for _ in 0..train_steps {
        let (joint, marginal) = batches(&data, harness.batch_size, &mut rng);
        let sc = score_batches(&disc, &joint, &marginal, harness.grouping, Mode::Train)?;
        let (mut dj, mut dm) = objective_grad(sc.joint.view(), sc.marginal.view(), form)?;
        // Descend -F.
        dj.mapv_inplace(|v| -v);
        dm.mapv_inplace(|v| -v);
        let mut grads = disc.zeros_like();
        backward_batches(&disc, &sc, &dj, &dm, &mut grads, false);
        for c in &sc.caches {
            disc.update_running_stats(c);
        }
        if !grads.out_bias.iter().all(|v| v.is_finite()) {
            return Err(MiError::ShapeMismatch("non-finite discriminator gradient".into()));
        }
        opt.step(&mut disc, &grads);
    }
    let fresh = draw_pairs(rho, harness.eval_samples, &mut substream(&[seed, 2]));
    let (joint, marginal) = batches(&fresh, harness.eval_samples, &mut substream(&[seed, 3]));
    let sc = score_batches(&disc, &joint, &marginal, harness.grouping, Mode::Eval)?;
    Ok(MIEstimate {
        value: objective_from_scores(sc.joint.view(), sc.marginal.view(), form)?,
        layer_pair_id: 0,
        sample_count: harness.eval_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independence_is_exactly_zero() {
        let r = gaussian_reference_jsd(0.0).unwrap();
        assert_eq!(r.two_jsd, 0.0);
        assert_eq!(r.mutual_information, 0.0);
    }

    #[test]
    fn closed_form_mi() {
        let r = gaussian_reference_jsd(0.9).unwrap();
        assert!((r.mutual_information - 0.830_365_6).abs() < 1e-7);
        let s = gaussian_reference_jsd(-0.9).unwrap();
        assert!((r.two_jsd - s.two_jsd).abs() < 1e-6);
        assert!(r.two_jsd > 0.0 && r.two_jsd < std::f64::consts::LN_2 * 2.0);
    }

    #[test]
    fn degenerate_rho() {
        assert_eq!(gaussian_reference_jsd(1.0).unwrap_err(), MiError::DegenerateRho(1.0));
        assert!(gaussian_reference_jsd(f64::NAN).is_err());
        assert!(matches!(
            estimate_mi_gaussian(0.5, 999, 1, 0),
            Err(MiError::TooFewSamples { .. })
        ));
    }
}
