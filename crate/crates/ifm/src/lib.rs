//! Information flow maximization (IFM) for convolutional classifiers.
//!
//! The crate trains a small CNN while maximizing a Jensen-Shannon lower bound
//! on the mutual information between adjacent feature maps, and ships the
//! shiftedMNIST benchmark used to show that the regularizer recovers digit
//! shape features that plain cross-entropy training discards in favour of a
//! correlated background texture.
//!
//! Modules:
//!
//! * [`data`]: IDX ingestion, texture banks, compositing, split files.
//! * [`nn`]: the classifier and pair discriminator with hand-written
//!   forward/backward passes, generic over `f32`/`f64`.
//! * [`mi`]: pair sampling, the JSD objective, the IFM regularizer, and a
//!   Gaussian reference oracle.
//! * [`train`]: the end-to-end training loop with dual model selection.
//! * [`eval`]: digit/texture scoring and report generation.

pub mod data;
pub mod eval;
pub mod mi;
pub mod nn;
pub mod seeding;
pub mod train;

pub use nn::Real;
