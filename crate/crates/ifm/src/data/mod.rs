//! The shifted-digit dataset: MNIST digits composited onto texture
//! backgrounds whose class matches the digit in training and is random in
//! validation and test.

mod composite;
mod format;
mod idx;
mod splits;
mod texture;

pub use composite::{composite, pad_digit, FOREGROUND_THRESHOLD, PAD};
pub use format::{
    decode_split, encode_split, read_bundle, read_split, write_bundle, write_split, Manifest,
    BUNDLE_MANIFEST, SPLIT_FORMAT_VERSION, SPLIT_HEADER_LEN,
};
pub use idx::{load_mnist, parse_idx, parse_idx_images, parse_idx_labels, IdxImages, MnistPart};
pub use splits::{build_splits, partition_indices, SplitId};
pub use texture::{
    build_texture_bank, crop_texture, procedural_texture, Texture, TextureBank, TextureSource,
    NUM_TEXTURES, PROCEDURAL_SIZE,
};

use std::path::PathBuf;

pub const DIGIT_SIZE: usize = 28;
pub const IMAGE_SIZE: usize = 32;
pub const IMAGE_PIXELS: usize = IMAGE_SIZE * IMAGE_SIZE;
pub const NUM_CLASSES: u8 = 10;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("payload truncated: header declares {declared} bytes, {available} available")]
    TruncatedPayload { declared: u64, available: u64 },
    #[error("{images} images but {labels} labels")]
    DimensionMismatch { images: usize, labels: usize },
    #[error("label {0} is outside 0..=9")]
    BadLabel(u8),
    #[error("images are {rows}x{cols}, expected 28x28")]
    BadImageSize { rows: usize, cols: usize },
    #[error("need at least 10 texture images, found {found}")]
    InsufficientTextures { found: usize },
    #[error("cannot read texture {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("texture {id} is {width}x{height}, smaller than 32x32")]
    TextureTooSmall { id: usize, width: usize, height: usize },
    #[error("source image set is empty")]
    EmptySource,
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad split header: {0}")]
    BadHeader(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("bad manifest: {0}")]
    BadManifest(String),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::IoFailure { path, source }
}

/// Raw digits with their labels; image `i` occupies bytes `784*i..784*(i+1)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledImageSet {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = DIGIT_SIZE * DIGIT_SIZE;
        &self.images[i * n..(i + 1) * n]
    }

    /// The first `n` examples (all of them if fewer).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n * DIGIT_SIZE * DIGIT_SIZE].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct ShiftedExample {
    /// Row-major 32x32 grayscale.
    pub image: [u8; IMAGE_PIXELS],
    pub digit_label: u8,
    pub texture_label: u8,
}

impl std::fmt::Debug for ShiftedExample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShiftedExample")
            .field("digit_label", &self.digit_label)
            .field("texture_label", &self.texture_label)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train: Vec<ShiftedExample>,
    pub val: Vec<ShiftedExample>,
    pub test: Vec<ShiftedExample>,
    pub manifest: Manifest,
}
