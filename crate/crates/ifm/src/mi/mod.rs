//! Mutual-information machinery: joint/marginal pair construction over
//! adjacent feature maps, the Jensen-Shannon variational objective, the
//! summed IFM regularizer, and a bivariate Gaussian reference oracle.

mod gaussian;
mod ifm;
mod objective;
mod pairs;
mod upsample;

pub use gaussian::{
    estimate_mi_gaussian, estimate_mi_gaussian_with, gaussian_reference_jsd, GaussianHarness,
    GaussianReference, MIN_GAUSSIAN_SAMPLES,
};
pub use ifm::{ifm_loss, ifm_loss_with_grad, BnGrouping, IfmConfig, IfmOutput, LAYER_PAIRS};
pub use objective::{
    jsd_objective, objective_from_scores, objective_grad, MIEstimate, ObjectiveForm, LN_4,
};
pub use pairs::{sample_pairs, PairBatch, PairSites};
pub use upsample::{upsample_nearest, upsample_nearest_backward};

use crate::nn::ModelError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MiError {
    #[error("target size {target:?} is not an integer multiple of {source_size:?}")]
    NonIntegerScale {
        source_size: (usize, usize),
        target: (usize, usize),
    },
    #[error("feature map shapes disagree: {0}")]
    ShapeMismatch(String),
    #[error("cannot draw zero sample pairs")]
    ZeroSamples,
    #[error("pair width {got} does not match discriminator width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("empty pair batch")]
    EmptyBatch,
    #[error("correlation {0} is outside (-1, 1)")]
    DegenerateRho(f64),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}
