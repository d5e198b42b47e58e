//! Central finite differences (step 1e-3, f64) against the analytic
//! gradients on a miniature network.
//!
//! Perturbed passes reuse the rectifier branches and pooling winners of the
//! unperturbed pass, so differences are taken on the smooth piece of the
//! network through the base point rather than across a kink.

use ifm::mi::{
    ifm_loss_with_grad, objective_from_scores, sample_pairs, upsample_nearest, BnGrouping,
    IfmConfig, ObjectiveForm, LAYER_PAIRS,
};
use ifm::nn::{
    softmax_xent, Classifier, ClassifierCache, ClassifierConfig, Discriminator,
    DiscriminatorCache, DiscriminatorConfig, FeatureMap, Mode, Parameterized,
};
use ifm::seeding::substream;
use ndarray::{concatenate, s, Array4, ArrayD, Axis};
use rand::Rng;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
pub const BATCH: usize = 4;

pub fn mini_config() -> ClassifierConfig {
    ClassifierConfig {
        conv_channels: [4, 4, 4, 4],
        ..ClassifierConfig::default()
    }
}

fn mini_discs(seed: u64) -> Vec<Discriminator<f64>> {
    (0..3)
        .map(|k| {
            let cfg = DiscriminatorConfig {
                hidden: vec![8, 8, 8],
                ..DiscriminatorConfig::new(8)
            };
            Discriminator::init(cfg, seed, k).unwrap()
        })
        .collect()
}

pub fn images(seed: u64) -> Array4<f64> {
    let mut rng = substream(&[seed, 99]);
    Array4::from_shape_fn((BATCH, 1, 32, 32), |_| rng.random::<f64>())
}

fn labels() -> Vec<u8> {
    vec![3, 7, 0, 9]
}

/// `||a - n|| / max(||a||, ||n||)` over one tensor.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn log(what: &str, name: &str, err: f64) {
    if err > TOLERANCE {
        eprintln!("{what} {name}: relative error {err:.3e}");
    }
}

fn check_params<M: Parameterized<f64> + Clone>(what: &str, model: &M, grads: &M, f: impl Fn(&M) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let analytic: Vec<(String, ArrayD<f64>)> =
        grads.params().into_iter().map(|(n, a)| (n, a.to_owned())).collect();
    for (t, (name, g)) in analytic.iter().enumerate() {
        let numeric: Vec<f64> = (0..g.len())
            .map(|i| {
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    let mut params = m.params_mut();
                    *params[t].1.iter_mut().nth(i).unwrap() += delta;
                    drop(params);
                    f(&m)
                };
                (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
            })
            .collect();
        let err = rel_error(&g.iter().copied().collect::<Vec<_>>(), &numeric);
        log(what, name, err);
        worst = worst.max(err);
    }
    worst
}

fn check_taps(
    what: &str,
    taps: &[FeatureMap<f64>],
    grads: &[FeatureMap<f64>],
    f: impl Fn(&[FeatureMap<f64>]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, g) in grads.iter().enumerate() {
        let numeric: Vec<f64> = (0..g.cnhw().len())
            .map(|i| {
                let eval = |delta: f64| {
                    let mut t = taps.to_vec();
                    *t[k].cnhw_mut().iter_mut().nth(i).unwrap() += delta;
                    f(&t)
                };
                (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
            })
            .collect();
        let err = rel_error(&g.cnhw().iter().copied().collect::<Vec<_>>(), &numeric);
        log(what, &format!("tap {k}"), err);
        worst = worst.max(err);
    }
    worst
}

/// Sum of the layer-pair objectives with every discriminator held in the
/// regime of `regimes`. Mirrors the sampling of `ifm_loss`.
fn frozen_objective(
    taps: &[FeatureMap<f64>],
    discs: &[Discriminator<f64>],
    cfg: &IfmConfig,
    key: u64,
    regimes: &[Vec<DiscriminatorCache<f64>>],
) -> f64 {
    let mut total = 0.0;
    for (l, &(a, b)) in LAYER_PAIRS.iter().enumerate() {
        let right = upsample_nearest(&taps[b], taps[a].spatial()).unwrap();
        let m = cfg.pairs_per_image * taps[a].batch();
        let pairs = sample_pairs(&taps[a], &right, m, l, &mut substream(&[key, l as u64])).unwrap();
        let (vj, vm) = match cfg.grouping {
            BnGrouping::Pooled => {
                let both = concatenate(Axis(0), &[pairs.joint.view(), pairs.marginal.view()]).unwrap();
                let v = discs[l].scores_frozen(both.view(), Mode::Train, &regimes[l][0]).unwrap();
                (v.slice(s![..m]).to_owned(), v.slice(s![m..]).to_owned())
            }
            BnGrouping::PerDistribution => (
                discs[l].scores_frozen(pairs.joint.view(), Mode::Train, &regimes[l][0]).unwrap(),
                discs[l].scores_frozen(pairs.marginal.view(), Mode::Train, &regimes[l][1]).unwrap(),
            ),
        };
        total += objective_from_scores(vj.view(), vm.view(), cfg.form).unwrap();
    }
    total
}

fn frozen_clf_loss(clf: &Classifier<f64>, x: &Array4<f64>, regime: &ClassifierCache<f64>) -> f64 {
    let out = clf.forward_frozen(x.view(), Mode::Train, regime).unwrap();
    softmax_xent(out.logits.view(), &labels()).unwrap().loss
}

/// Worst error of the classification-loss gradients.
pub fn classification_loss_error() -> f64 {
    let clf = Classifier::<f64>::init(mini_config(), 11).unwrap();
    let x = images(1);
    let (out, cache) = clf.forward(x.view(), Mode::Train).unwrap();
    let xent = softmax_xent(out.logits.view(), &labels()).unwrap();
    assert_eq!(xent.loss, frozen_clf_loss(&clf, &x, &cache));
    let mut grads = clf.zeros_like();
    clf.backward(&cache, xent.dlogits.view(), None, &mut grads);
    check_params("L_clf", &clf, &grads, |m| frozen_clf_loss(m, &x, &cache))
}

fn random_taps(seed: u64) -> Vec<FeatureMap<f64>> {
    let mut rng = substream(&[seed, 7]);
    [(4, 16), (4, 8), (4, 4), (4, 2)]
        .iter()
        .map(|&(c, s)| FeatureMap::from_fn(BATCH, c, s, s, |_, _, _, _| rng.random_range(-1.5..1.5)))
        .collect()
}

fn objective_config(grouping: BnGrouping) -> IfmConfig {
    IfmConfig {
        pairs_per_image: 8,
        form: ObjectiveForm::Standard,
        grouping,
    }
}

/// Worst error of the objective's gradients with respect to discriminator
/// parameters and taps.
pub fn objective_error(grouping: BnGrouping) -> f64 {
    {
        let cfg = objective_config(grouping);
        let taps = random_taps(3);
        let discs = mini_discs(5);
        let key = 17;
        let out = ifm_loss_with_grad(&taps, &discs, &cfg, key, 1.0).unwrap();
        let regimes = &out.disc_caches;
        assert!((out.total - frozen_objective(&taps, &discs, &cfg, key, regimes)).abs() < 1e-12);
        let mut worst: f64 = 0.0;
        for (l, (d, g)) in discs.iter().zip(&out.disc_grads).enumerate() {
            worst = worst.max(check_params(&format!("F pair {l} ({grouping:?})"), d, g, |m| {
                let mut ds = discs.clone();
                ds[l] = m.clone();
                frozen_objective(&taps, &ds, &cfg, key, regimes)
            }));
        }
        worst = worst.max(check_taps(&format!("F ({grouping:?})"), &taps, &out.tap_grads, |t| {
            frozen_objective(t, &discs, &cfg, key, regimes)
        }));
        worst
    }
}

/// Worst error of `L_clf - lambda * F` with respect to classifier parameters.
pub fn combined_error() -> f64 {
    let cfg = objective_config(BnGrouping::Pooled);
    let clf = Classifier::<f64>::init(mini_config(), 21).unwrap();
    let discs = mini_discs(22);
    let x = images(2);
    let key = 5;
    let lambda = 1.0;
    let (out, cache) = clf.forward(x.view(), Mode::Train).unwrap();
    let xent = softmax_xent(out.logits.view(), &labels()).unwrap();
    let reg = ifm_loss_with_grad(&out.taps, &discs, &cfg, key, -lambda).unwrap();
    let loss = |m: &Classifier<f64>| {
        let o = m.forward_frozen(x.view(), Mode::Train, &cache).unwrap();
        let xent = softmax_xent(o.logits.view(), &labels()).unwrap().loss;
        xent - lambda * frozen_objective(&o.taps, &discs, &cfg, key, &reg.disc_caches)
    };
    assert!((loss(&clf) - (xent.loss - lambda * reg.total)).abs() < 1e-12);
    let mut grads = clf.zeros_like();
    clf.backward(&cache, xent.dlogits.view(), Some(&reg.tap_grads), &mut grads);
    check_params("L", &clf, &grads, loss)
}
