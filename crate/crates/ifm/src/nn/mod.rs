//! Network definitions with explicit forward and backward passes.
//!
//! Activations inside the classifier are stored channel-major, `(C, B, H, W)`,
//! so a 3x3 convolution is a single GEMM over an im2col matrix and batch norm
//! statistics are contiguous row reductions. [`FeatureMap`] hides that layout
//! and presents the usual `(batch, channels, height, width)` indexing.
//!
//! All kernels are generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

mod checkpoint;
mod classifier;
mod discriminator;
mod feature_map;
mod init;
pub mod layers;
mod loss;
mod optim;
mod params;

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError, CheckpointMeta, CHECKPOINT_VERSION,
};
pub use classifier::{Classifier, ClassifierCache, ClassifierConfig, ClassifierOutputs};
pub use discriminator::{Discriminator, DiscriminatorCache, DiscriminatorConfig};
pub use feature_map::FeatureMap;
pub use init::init_rng;
pub use loss::{softmax_xent, SoftmaxXent};
pub use optim::Sgd;
pub use params::Parameterized;

/// Floating point element type accepted by every kernel.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Batch-norm behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics; the pass is a pure per-example map.
    Eval,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("bad shape: expected {expected}, got {got}")]
    BadShape { expected: String, got: String },
    #[error("label {label} outside 0..{classes}")]
    BadLabel { label: usize, classes: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub(crate) fn bad_shape(expected: impl Into<String>, got: impl Debug) -> ModelError {
    ModelError::BadShape {
        expected: expected.into(),
        got: format!("{got:?}"),
    }
}

pub(crate) struct RegimeHasher(u64);

pub(crate) fn regime_hasher() -> RegimeHasher {
    RegimeHasher(0)
}

impl RegimeHasher {
    fn push(&mut self, word: u64) {
        self.0 = crate::seeding::mix64(self.0 ^ word).wrapping_add(word);
    }

    pub(crate) fn signs(&mut self, bits: impl Iterator<Item = bool>) {
        let (mut word, mut n) = (0u64, 0);
        for b in bits {
            word = (word << 1) | b as u64;
            n += 1;
            if n == 64 {
                self.push(word);
                (word, n) = (0, 0);
            }
        }
        self.push(word ^ ((n as u64) << 56));
    }

    pub(crate) fn bytes(&mut self, bytes: &[u8]) {
        for chunk in bytes.chunks(8) {
            let mut w = [0u8; 8];
            w[..chunk.len()].copy_from_slice(chunk);
            self.push(u64::from_le_bytes(w));
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}
