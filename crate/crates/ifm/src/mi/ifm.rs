use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::nn::{Discriminator, DiscriminatorCache, FeatureMap, Mode, Real};
use crate::seeding::substream;

use super::objective::{objective_from_scores, objective_grad, MIEstimate, ObjectiveForm};
use super::{sample_pairs, MiError, PairBatch};

/// Adjacent tap indices whose information flow is regularized.
pub const LAYER_PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 3)];

/// How batch-norm statistics inside a discriminator are formed in train mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BnGrouping {
    /// Joint and marginal batches are normalized separately.
    PerDistribution,
    /// Both batches share one set of statistics, so train and eval modes
    /// compute the same function of a sample.
    #[default]
    Pooled,
}

impl std::str::FromStr for BnGrouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_distribution" | "per-distribution" => Ok(Self::PerDistribution),
            "pooled" => Ok(Self::Pooled),
            other => Err(format!("unknown bn grouping `{other}` (per_distribution|pooled)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IfmConfig {
    /// Joint (and, separately, marginal) pairs drawn per image per layer pair.
    pub pairs_per_image: usize,
    pub form: ObjectiveForm,
    pub grouping: BnGrouping,
}

impl Default for IfmConfig {
    fn default() -> Self {
        Self {
            pairs_per_image: 32,
            form: ObjectiveForm::Standard,
            grouping: BnGrouping::Pooled,
        }
    }
}

/// Result of the regularizer with gradients.
#[derive(Debug, Clone)]
pub struct IfmOutput<T> {
    /// Sum of the per-pair objective values.
    pub total: f64,
    pub per_layer: Vec<MIEstimate>,
    /// Gradient of `grad_scale * total` with respect to each of the four taps.
    pub tap_grads: Vec<FeatureMap<T>>,
    /// Gradient of `grad_scale * total` with respect to each discriminator.
    pub disc_grads: Vec<Discriminator<T>>,
    /// Train-mode caches per discriminator, for running-statistics updates.
    pub disc_caches: Vec<Vec<DiscriminatorCache<T>>>,
}

impl<T: Real> IfmOutput<T> {
    pub fn update_running_stats(&self, discs: &mut [Discriminator<T>]) {
        for (d, caches) in discs.iter_mut().zip(&self.disc_caches) {
            for c in caches {
                d.update_running_stats(c);
            }
        }
    }
}

pub(crate) struct Scored<T> {
    pub joint: Array1<T>,
    pub marginal: Array1<T>,
    pub caches: Vec<DiscriminatorCache<T>>,
}

pub(crate) fn score_batches<T: Real>(
    disc: &Discriminator<T>,
    joint: &Array2<T>,
    marginal: &Array2<T>,
    grouping: BnGrouping,
    mode: Mode,
) -> Result<Scored<T>, MiError> {
    if joint.nrows() == 0 || marginal.nrows() == 0 {
        return Err(MiError::EmptyBatch);
    }
    let width = disc.config.input_width;
    if joint.ncols() != width || marginal.ncols() != width {
        return Err(MiError::WidthMismatch {
            expected: width,
            got: joint.ncols(),
        });
    }
    if grouping == BnGrouping::Pooled || mode == Mode::Eval {
        let both = concatenate(Axis(0), &[joint.view(), marginal.view()])
            .expect("equal widths");
        let (v, cache) = disc.scores(both.view(), mode)?;
        let m = joint.nrows();
        Ok(Scored {
            joint: v.slice(s![..m]).to_owned(),
            marginal: v.slice(s![m..]).to_owned(),
            caches: vec![cache],
        })
    } else {
        let (vj, cj) = disc.scores(joint.view(), mode)?;
        let (vm, cm) = disc.scores(marginal.view(), mode)?;
        Ok(Scored {
            joint: vj,
            marginal: vm,
            caches: vec![cj, cm],
        })
    }
}

/// Backpropagates score gradients; returns input gradients for the joint and
/// marginal rows when requested.
pub(crate) fn backward_batches<T: Real>(
    disc: &Discriminator<T>,
    scored: &Scored<T>,
    dj: &Array1<T>,
    dm: &Array1<T>,
    grads: &mut Discriminator<T>,
    need_input_grad: bool,
) -> Option<(Array2<T>, Array2<T>)> {
    if scored.caches.len() == 1 {
        let d = concatenate(Axis(0), &[dj.view(), dm.view()]).expect("1-d");
        let dx = disc.backward(&scored.caches[0], d.view(), grads, need_input_grad)?;
        let m = dj.len();
        Some((dx.slice(s![..m, ..]).to_owned(), dx.slice(s![m.., ..]).to_owned()))
    } else {
        let dxj = disc.backward(&scored.caches[0], dj.view(), grads, need_input_grad);
        let dxm = disc.backward(&scored.caches[1], dm.view(), grads, need_input_grad);
        dxj.zip(dxm)
    }
}

fn check_inputs<T: Real>(
    taps: &[FeatureMap<T>],
    discs: &[Discriminator<T>],
    cfg: &IfmConfig,
) -> Result<(), MiError> {
    if taps.len() != 4 {
        return Err(MiError::ShapeMismatch(format!("expected 4 taps, got {}", taps.len())));
    }
    if discs.len() != LAYER_PAIRS.len() {
        return Err(MiError::ShapeMismatch(format!(
            "expected {} discriminators, got {}",
            LAYER_PAIRS.len(),
            discs.len()
        )));
    }
    if cfg.pairs_per_image == 0 {
        return Err(MiError::ZeroSamples);
    }
    Ok(())
}

fn draw<T: Real>(
    taps: &[FeatureMap<T>],
    l: usize,
    cfg: &IfmConfig,
    stream_key: u64,
) -> Result<PairBatch<T>, MiError> {
    let (a, b) = LAYER_PAIRS[l];
    let m = cfg.pairs_per_image * taps[a].batch();
    let mut rng = substream(&[stream_key, l as u64]);
    sample_pairs(&taps[a], &taps[b], m, l, &mut rng)
}

/// Sum over the adjacent tap pairs of the variational objective.
///
/// Pairs for layer pair `l` come from the substream `(stream_key, l)`, so the
/// three terms are independent of evaluation order.
pub fn ifm_loss<T: Real>(
    taps: &[FeatureMap<T>],
    discs: &[Discriminator<T>],
    cfg: &IfmConfig,
    stream_key: u64,
    mode: Mode,
) -> Result<(f64, Vec<MIEstimate>), MiError> {
    check_inputs(taps, discs, cfg)?;
    let mut per_layer = Vec::with_capacity(LAYER_PAIRS.len());
    for (l, disc) in discs.iter().enumerate() {
        let pairs = draw(taps, l, cfg, stream_key)?;
        let sc = score_batches(disc, &pairs.joint, &pairs.marginal, cfg.grouping, mode)?;
        per_layer.push(MIEstimate {
            value: objective_from_scores(sc.joint.view(), sc.marginal.view(), cfg.form)?,
            layer_pair_id: l,
            sample_count: pairs.len(),
        });
    }
    let total = per_layer.iter().map(|e| e.value).sum();
    Ok((total, per_layer))
}

/// Train-mode [`ifm_loss`] plus gradients of `grad_scale * total` with
/// respect to taps and discriminator parameters.
pub fn ifm_loss_with_grad<T: Real>(
    taps: &[FeatureMap<T>],
    discs: &[Discriminator<T>],
    cfg: &IfmConfig,
    stream_key: u64,
    grad_scale: f64,
) -> Result<IfmOutput<T>, MiError> {
    check_inputs(taps, discs, cfg)?;
    let mut tap_grads: Vec<FeatureMap<T>> = taps
        .iter()
        .map(|t| {
            let (b, c, h, w) = t.shape();
            FeatureMap::zeros(b, c, h, w)
        })
        .collect();
    let mut per_layer = Vec::with_capacity(LAYER_PAIRS.len());
    let mut disc_grads = Vec::with_capacity(discs.len());
    let mut disc_caches = Vec::with_capacity(discs.len());
    let scale = T::lit(grad_scale);
    for (l, disc) in discs.iter().enumerate() {
        let (a, b) = LAYER_PAIRS[l];
        let pairs = draw(taps, l, cfg, stream_key)?;
        let sc = score_batches(disc, &pairs.joint, &pairs.marginal, cfg.grouping, Mode::Train)?;
        per_layer.push(MIEstimate {
            value: objective_from_scores(sc.joint.view(), sc.marginal.view(), cfg.form)?,
            layer_pair_id: l,
            sample_count: pairs.len(),
        });
        let (mut dj, mut dm) = objective_grad(sc.joint.view(), sc.marginal.view(), cfg.form)?;
        dj *= scale;
        dm *= scale;
        let mut g = disc.zeros_like();
        let (dxj, dxm) =
            backward_batches(disc, &sc, &dj, &dm, &mut g, true).expect("input grad requested");
        let (dleft, dright) = pairs.scatter(dxj.view(), dxm.view());
        *tap_grads[a].cnhw_mut() += dleft.cnhw();
        *tap_grads[b].cnhw_mut() += dright.cnhw();
        disc_grads.push(g);
        disc_caches.push(sc.caches);
    }
    let total = per_layer.iter().map(|e| e.value).sum();
    Ok(IfmOutput {
        total,
        per_layer,
        tap_grads,
        disc_grads,
        disc_caches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DiscriminatorConfig, Parameterized};
    use crate::seeding::substream;
    use rand::Rng;

    fn taps(b: usize, seed: u64) -> Vec<FeatureMap<f64>> {
        let mut rng = substream(&[seed]);
        [(32, 16), (64, 8), (128, 4), (128, 2)]
            .iter()
            .map(|&(c, s)| FeatureMap::from_fn(b, c, s, s, |_, _, _, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn discs(seed: u64) -> Vec<Discriminator<f64>> {
        [96, 192, 256]
            .iter()
            .enumerate()
            .map(|(k, &n)| Discriminator::init(DiscriminatorConfig::new(n), seed, k as u64).unwrap())
            .collect()
    }

    #[test]
    fn zeroed_discriminators_give_zero_total() {
        let t = taps(2, 1);
        let mut d = discs(2);
        for x in &mut d {
            x.zero_params();
        }
        let (total, per) = ifm_loss(&t, &d, &IfmConfig::default(), 7, Mode::Train).unwrap();
        assert_eq!(total, 0.0);
        assert_eq!(per.len(), 3);
    }

    #[test]
    fn per_layer_ids_and_sum() {
        let t = taps(2, 3);
        let d = discs(4);
        let (total, per) = ifm_loss(&t, &d, &IfmConfig::default(), 9, Mode::Train).unwrap();
        let ids: Vec<_> = per.iter().map(|e| e.layer_pair_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert!(per.iter().all(|e| e.sample_count == 64));
        assert!((total - per.iter().map(|e| e.value).sum::<f64>()).abs() < 1e-6);
    }

    #[test]
    fn gradient_reaches_the_deepest_tap() {
        let t = taps(2, 5);
        let d = discs(6);
        let out = ifm_loss_with_grad(&t, &d, &IfmConfig::default(), 11, 1.0).unwrap();
        let norm: f64 = out.tap_grads[3].cnhw().iter().map(|v| v * v).sum();
        assert!(norm > 0.0);
        let (total, _) = ifm_loss(&t, &d, &IfmConfig::default(), 11, Mode::Train).unwrap();
        assert_eq!(total, out.total);
    }

    #[test]
    fn wrong_counts_are_rejected() {
        let t = taps(2, 1);
        let d = discs(2);
        assert!(matches!(
            ifm_loss(&t[..3], &d, &IfmConfig::default(), 0, Mode::Train),
            Err(MiError::ShapeMismatch(_))
        ));
    }
}
