#![allow(dead_code)]

pub mod gradcheck;
pub mod stats;

use std::path::PathBuf;

use ifm::data::{build_splits, build_texture_bank, load_mnist, DatasetBundle, LabeledImageSet, MnistPart, TextureSource};
use ifm::nn::ClassifierConfig;
use ifm::train::TrainConfig;

/// `$IFM_MNIST_DIR`, else `data/mnist` at the repository root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("IFM_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn mnist(part: MnistPart) -> LabeledImageSet {
    let dir = mnist_dir();
    load_mnist(&dir, part).unwrap_or_else(|e| {
        panic!("MNIST not found under {} ({e}); run scripts/fetch_mnist.sh", dir.display())
    })
}

pub fn bundle(train: usize, test: usize, seed: u64) -> DatasetBundle {
    let tr = mnist(MnistPart::Train).truncated(train);
    let te = mnist(MnistPart::Test).truncated(test);
    let bank = build_texture_bank(&TextureSource::Procedural, seed).unwrap();
    build_splits(&tr, &te, &bank, seed).unwrap()
}

pub fn full_bundle(seed: u64) -> DatasetBundle {
    bundle(usize::MAX, usize::MAX, seed)
}

/// Narrow networks so protocol tests run in seconds.
pub fn small_config(lambda: f64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs: 2,
        lambda_ifm: lambda,
        pairs_per_image: 4,
        classifier: ClassifierConfig {
            conv_channels: [4, 8, 8, 8],
            ..ClassifierConfig::default()
        },
        disc_hidden: vec![16, 8, 8],
        ..TrainConfig::default()
    }
    .with_seed(5)
}
