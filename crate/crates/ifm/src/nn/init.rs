use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Real;
use crate::seeding;

/// Generator used for weight initialization of the model named by `tag`.
pub fn init_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    seeding::substream(&[seed, 0x1A17, tag])
}

/// Fan-in scaled uniform weights for leaky rectifiers:
/// `U(-b, b)` with `b = sqrt(6 / ((1 + slope^2) * fan_in))`.
///
/// Values are drawn in `f64` and rounded, so `f32` and `f64` models built from
/// the same seed agree up to rounding.
pub(crate) fn he_uniform<T: Real, D: Dimension, Sh: ShapeBuilder<Dim = D>>(
    shape: Sh,
    fan_in: usize,
    slope: f64,
    rng: &mut ChaCha8Rng,
) -> Array<T, D> {
    let bound = (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt();
    Array::from_shape_simple_fn(shape, || {
        T::lit(rng.random_range(-bound..bound))
    })
}
