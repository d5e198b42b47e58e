mod common;

use common::stats::uniformity_p;
use ifm::mi::{
    gaussian_reference_jsd, ifm_loss, ifm_loss_with_grad, objective_from_scores, sample_pairs,
    upsample_nearest, upsample_nearest_backward, IfmConfig, ObjectiveForm, LAYER_PAIRS, LN_4,
};
use ifm::nn::{Classifier, ClassifierConfig, Discriminator, DiscriminatorConfig, FeatureMap, Mode};
use ifm::seeding::substream;
use ndarray::{Array1, Array4};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-50.0f64..50.0, -1e4f64..1e4, Just(0.0)], 1..64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn standard_objective_never_exceeds_ln_4(joint in scores(), marginal in scores()) {
        let v = objective_from_scores(
            Array1::from(joint).view(),
            Array1::from(marginal).view(),
            ObjectiveForm::Standard,
        ).unwrap();
        prop_assert!(v <= LN_4 + 1e-6, "{v}");
        prop_assert!(v.is_finite());
    }

    #[test]
    fn objective_ignores_sample_order(joint in scores(), marginal in scores(), seed in any::<u64>()) {
        let mut rng = substream(&[seed]);
        let mut pj = joint.clone();
        let mut pm = marginal.clone();
        pj.shuffle(&mut rng);
        pm.shuffle(&mut rng);
        for form in [ObjectiveForm::Standard, ObjectiveForm::PaperLiteral] {
            let a = objective_from_scores(Array1::from(joint.clone()).view(), Array1::from(marginal.clone()).view(), form).unwrap();
            let b = objective_from_scores(Array1::from(pj.clone()).view(), Array1::from(pm.clone()).view(), form).unwrap();
            prop_assert!((a - b).abs() < 1e-9 || (a.is_infinite() && a == b), "{form:?}: {a} vs {b}");
        }
    }
}

#[test]
fn upsampling_law_on_every_small_grid() {
    for h in 1..=8 {
        for w in 1..=8 {
            let fm = FeatureMap::from_fn(2, 3, h, w, |b, c, i, j| (b * 1000 + c * 100 + i * 10 + j) as f64);
            for th in (h..=16).filter(|t| t % h == 0) {
                for tw in (w..=16).filter(|t| t % w == 0) {
                    let up = upsample_nearest(&fm, (th, tw)).unwrap();
                    assert_eq!(up.shape(), (2, 3, th, tw));
                    for b in 0..2 {
                        for c in 0..3 {
                            for i in 0..th {
                                for j in 0..tw {
                                    assert_eq!(up.get(b, c, i, j), fm.get(b, c, i * h / th, j * w / tw));
                                }
                            }
                        }
                    }
                    // Each source cell receives exactly its block.
                    let ones = FeatureMap::from_fn(2, 3, th, tw, |_, _, _, _| 1.0f64);
                    let back = upsample_nearest_backward(&ones, (h, w)).unwrap();
                    let block = ((th / h) * (tw / w)) as f64;
                    assert!(back.cnhw().iter().all(|&v| v == block));
                }
            }
        }
    }
}

#[test]
fn joint_sites_are_uniform() {
    let fm = FeatureMap::from_fn(2, 1, 3, 3, |_, _, _, _| 0.0f64);
    let mut rng = substream(&[4242]);
    let batch = sample_pairs(&fm, &fm, 18_000, 0, &mut rng).unwrap();
    let mut counts = [0u64; 18];
    for &s in &batch.sites.joint {
        counts[s] += 1;
    }
    let mut left = [0u64; 18];
    let mut right = [0u64; 18];
    for (&a, &b) in batch.sites.marginal_left.iter().zip(&batch.sites.marginal_right) {
        left[a] += 1;
        right[b] += 1;
    }
    for (name, c) in [("joint", counts), ("marginal left", left), ("marginal right", right)] {
        let p = uniformity_p(&c);
        assert!(p > 0.01, "{name}: {c:?} (p = {p:.4})");
    }
}

fn full_size_taps(seed: u64) -> (Classifier<f32>, Vec<FeatureMap<f32>>) {
    let clf = Classifier::<f32>::init(ClassifierConfig::default(), seed).unwrap();
    let mut rng = substream(&[seed, 1]);
    let images = Array4::from_shape_fn((4, 1, 32, 32), |_| rng.random::<f32>());
    let (out, _) = clf.forward(images.view(), Mode::Train).unwrap();
    (clf, out.taps)
}

fn discs_for(config: &ClassifierConfig) -> Vec<Discriminator<f32>> {
    LAYER_PAIRS
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let width = config.conv_channels[a] + config.conv_channels[b];
            Discriminator::init(DiscriminatorConfig::new(width), 3, k as u64).unwrap()
        })
        .collect()
}

#[test]
fn default_network_pairs_have_the_expected_widths() {
    let (clf, taps) = full_size_taps(2);
    let discs = discs_for(&clf.config);
    let mut rng = substream(&[1]);
    let widths: Vec<usize> = LAYER_PAIRS
        .iter()
        .enumerate()
        .map(|(l, &(a, b))| sample_pairs(&taps[a], &taps[b], 8, l, &mut rng).unwrap().width())
        .collect();
    assert_eq!(widths, [96, 192, 256]);
    let (total, per_layer) = ifm_loss(&taps, &discs, &IfmConfig::default(), 9, Mode::Eval).unwrap();
    assert_eq!(per_layer.len(), 3);
    assert!((total - per_layer.iter().map(|e| e.value).sum::<f64>()).abs() < 1e-12);
}

#[test]
fn regularizer_gradient_reaches_every_tap() {
    let (clf, taps) = full_size_taps(6);
    let discs = discs_for(&clf.config);
    let out = ifm_loss_with_grad(&taps, &discs, &IfmConfig::default(), 11, -1.0).unwrap();
    for (k, g) in out.tap_grads.iter().enumerate() {
        assert_eq!(g.shape(), taps[k].shape());
        let norm: f32 = g.cnhw().iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "tap {k} received no gradient");
    }
}

#[test]
fn gaussian_oracle_shape() {
    assert_eq!(gaussian_reference_jsd(0.0).unwrap().two_jsd, 0.0);
    let mut last = 0.0;
    for rho in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let plus = gaussian_reference_jsd(rho).unwrap().two_jsd;
        let minus = gaussian_reference_jsd(-rho).unwrap().two_jsd;
        assert!((plus - minus).abs() < 1e-6);
        assert!(plus > last && plus < LN_4);
        last = plus;
    }
}
