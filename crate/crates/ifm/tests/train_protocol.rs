mod common;

use ifm::eval::{accuracies, to_tensor};
use ifm::nn::{decode_checkpoint, encode_checkpoint, load_checkpoint, Mode};
use ifm::train::{save_run, select_checkpoints, train, EpochRecord, Trainer};
use proptest::prelude::*;

fn small_bundle() -> ifm::data::DatasetBundle {
    common::bundle(1_000, 200, 21)
}

#[test]
fn reporting_discriminators_do_not_touch_the_baseline() {
    let bundle = small_bundle();
    let on = common::small_config(0.0);
    let off = ifm::train::TrainConfig { ifm_reporting: false, ..on.clone() };
    let a = train(on, &bundle).unwrap();
    let b = train(off, &bundle).unwrap();
    assert_eq!(a.final_checkpoint.classifier, b.final_checkpoint.classifier);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!((x.clf_loss, x.val_digit_acc, x.val_texture_acc), (y.clf_loss, y.val_digit_acc, y.val_texture_acc));
    }
    assert!(a.history.iter().all(|r| r.f_conv12 != 0.0));
    assert!(b.history.iter().all(|r| r.f_conv12 == 0.0));
}

#[test]
fn step_loss_decomposes() {
    let bundle = small_bundle();
    for lambda in [0.0, 0.3, 1.0] {
        let mut trainer = Trainer::new(common::small_config(lambda)).unwrap();
        for (k, batch) in bundle.train.chunks(16).take(5).enumerate() {
            let s = trainer.step(batch, k as u64).unwrap().unwrap();
            let expect = s.clf_loss - lambda * s.f.iter().sum::<f64>();
            assert!((s.loss - expect).abs() < 1e-6, "lambda {lambda}: {} vs {expect}", s.loss);
        }
    }
}

#[test]
fn runs_are_reproducible_and_records_decompose() {
    let bundle = small_bundle();
    let a = train(common::small_config(1.0), &bundle).unwrap();
    let b = train(common::small_config(1.0), &bundle).unwrap();
    assert_eq!(a.history.len(), 2);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert!(x.same_metrics(y), "{x:?} vs {y:?}");
        let expect = x.clf_loss - (x.f_conv12 + x.f_conv23 + x.f_conv34);
        assert!((x.loss - expect).abs() < 1e-6);
    }
    assert_eq!(a.final_checkpoint, b.final_checkpoint);
    assert_eq!(a.best_digit, b.best_digit);
}

#[test]
fn evaluation_is_pure() {
    let bundle = small_bundle();
    let result = train(common::small_config(0.0), &bundle).unwrap();
    let clf = result.final_checkpoint.classifier;
    let before = clf.clone();
    let first = accuracies(&clf, &bundle.test).unwrap();
    assert_eq!(accuracies(&clf, &bundle.test).unwrap(), first);
    assert_eq!(clf, before);
    // Eval-mode predictions do not depend on what else is in the batch.
    let whole = clf.predict_logits(to_tensor::<f32>(&bundle.test[..8]).view()).unwrap();
    for i in 0..8 {
        let alone = clf.predict_logits(to_tensor::<f32>(&bundle.test[i..i + 1]).view()).unwrap();
        for (a, b) in alone.row(0).iter().zip(whole.row(i)) {
            assert!((a - b).abs() < 1e-5);
        }
    }
    let (_, cache) = clf.forward(to_tensor::<f32>(&bundle.test[..8]).view(), Mode::Eval).unwrap();
    let mut after = clf.clone();
    after.update_running_stats(&cache);
    assert_eq!(after, clf, "eval caches must not move running statistics");
}

#[test]
fn one_epoch_writes_a_complete_run() {
    let bundle = common::bundle(125, 50, 8);
    let cfg = ifm::train::TrainConfig { epochs: 1, ..common::small_config(1.0) };
    let result = train(cfg, &bundle).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_run(&result, dir.path()).unwrap();
    for f in ["best_digit.ckpt", "best_texture.ckpt", "final.ckpt", "metrics.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let text = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    for key in [
        "epoch", "loss", "clf_loss", "f_conv12", "f_conv23", "f_conv34",
        "val_digit_acc", "val_texture_acc", "seconds", "objective_form",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["objective_form"], "standard");
    let back: EpochRecord = serde_json::from_str(lines[0]).unwrap();
    assert!(back.same_metrics(&result.history[0]));

    let ckpt = load_checkpoint(dir.path().join("best_digit.ckpt")).unwrap();
    assert_eq!(ckpt, result.best_digit);
    assert_eq!(ckpt.meta.epoch, Some(0));
    assert_eq!(ckpt.discriminators.len(), 3);
    assert_eq!(decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap(), ckpt);
    let a = accuracies(&ckpt.classifier, &bundle.val).unwrap();
    assert_eq!(a, (back.val_digit_acc, back.val_texture_acc));
}

fn record(epoch: usize, d: f64, t: f64) -> EpochRecord {
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

proptest! {
    #[test]
    fn selection_is_the_earliest_argmax(accs in prop::collection::vec((0u8..20, 0u8..20), 1..30)) {
        let history: Vec<EpochRecord> = accs
            .iter()
            .enumerate()
            .map(|(i, &(d, t))| record(i, d as f64 / 20.0, t as f64 / 20.0))
            .collect();
        let (bd, bt) = select_checkpoints(&history).unwrap();
        let max_d = history.iter().map(|r| r.val_digit_acc).fold(f64::MIN, f64::max);
        let max_t = history.iter().map(|r| r.val_texture_acc).fold(f64::MIN, f64::max);
        prop_assert_eq!(history[bd].val_digit_acc, max_d);
        prop_assert_eq!(history[bt].val_texture_acc, max_t);
        prop_assert!(history[..bd].iter().all(|r| r.val_digit_acc < max_d));
        prop_assert!(history[..bt].iter().all(|r| r.val_texture_acc < max_t));
    }
}

#[test]
fn empty_history_is_an_error() {
    assert!(select_checkpoints(&[]).is_err());
}
