use ndarray::{ArrayViewD, ArrayViewMutD};

use super::Real;

/// Uniform access to the trainable arrays and running buffers of a model.
///
/// `params` and `params_mut` must list arrays in the same order, which is also
/// the order used for checkpoints and optimizer state.
pub trait Parameterized<T: Real> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, T>)>;
    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)>;
    /// Non-trainable state (batch-norm running statistics).
    fn buffers(&self) -> Vec<(String, ArrayViewD<'_, T>)>;
    fn buffers_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, a)| a.len()).sum()
    }

    fn zero_params(&mut self) {
        for (_, mut a) in self.params_mut() {
            a.fill(T::zero());
        }
    }

    /// `self += scale * other`, parameter by parameter.
    fn add_scaled(&mut self, other: &Self, scale: T)
    where
        Self: Sized,
    {
        let src = other.params();
        for ((_, mut dst), (_, s)) in self.params_mut().into_iter().zip(src) {
            dst.zip_mut_with(&s, |d, &v| *d += scale * v);
        }
    }
}
