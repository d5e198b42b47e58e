use rand::seq::SliceRandom;
use rand::Rng;

use crate::seeding::substream;

use super::{
    composite, crop_texture, DataError, DatasetBundle, LabeledImageSet, Manifest, ShiftedExample,
    TextureBank, NUM_CLASSES, SPLIT_FORMAT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitId {
    Train = 0,
    Val = 1,
    Test = 2,
}

const PARTITION_TAG: u64 = 0x5B17;

/// Seeded partition of `0..n` into (train, val) with `|val| = round(n / 5)`.
pub fn partition_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(&[seed, PARTITION_TAG]));
    let n_val = (n as f64 / 5.0).round() as usize;
    let train = idx.split_off(n_val);
    (train, idx)
}

fn make_split(
    source: &LabeledImageSet,
    indices: &[usize],
    bank: &TextureBank,
    seed: u64,
    split: SplitId,
) -> Result<Vec<ShiftedExample>, DataError> {
    indices
        .iter()
        .enumerate()
        .map(|(pos, &src)| {
            let mut rng = substream(&[seed, split as u64, pos as u64]);
            let digit_label = source.labels[src];
            let texture_label = match split {
                SplitId::Train => digit_label,
                SplitId::Val | SplitId::Test => rng.random_range(0..NUM_CLASSES),
            };
            let patch = crop_texture(bank, texture_label as usize, &mut rng)?;
            Ok(ShiftedExample {
                image: composite(source.image(src), &patch),
                digit_label,
                texture_label,
            })
        })
        .collect()
}

/// Train examples take the texture of their digit class; validation and
/// test examples take a uniformly random texture.
pub fn build_splits(
    mnist_train: &LabeledImageSet,
    mnist_test: &LabeledImageSet,
    bank: &TextureBank,
    seed: u64,
) -> Result<DatasetBundle, DataError> {
    if mnist_train.is_empty() || mnist_test.is_empty() {
        return Err(DataError::EmptySource);
    }
    let (train_idx, val_idx) = partition_indices(mnist_train.len(), seed);
    let test_idx: Vec<usize> = (0..mnist_test.len()).collect();
    let train = make_split(mnist_train, &train_idx, bank, seed, SplitId::Train)?;
    let val = make_split(mnist_train, &val_idx, bank, seed, SplitId::Val)?;
    let test = make_split(mnist_test, &test_idx, bank, seed, SplitId::Test)?;
    let manifest = Manifest {
        format_version: SPLIT_FORMAT_VERSION,
        seed,
        source_kind: bank.source.kind().to_string(),
        textures: bank.provenance.clone(),
        train: train.len(),
        val: val.len(),
        test: test.len(),
    };
    Ok(DatasetBundle {
        train,
        val,
        test,
        manifest,
    })
}
