use ndarray::{Array4, ArrayView4};

use super::Real;

/// A convolutional activation tensor addressed as `(batch, channel, row, col)`.
///
/// Storage is channel-major `(C, B, H, W)`; [`FeatureMap::view`] returns the
/// logical batch-major view without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    cnhw: Array4<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            cnhw: Array4::zeros((channels, batch, height, width)),
        }
    }

    /// Wraps channel-major storage. The array is made contiguous if it is not.
    pub fn from_cnhw(cnhw: Array4<T>) -> Self {
        let cnhw = if cnhw.is_standard_layout() {
            cnhw
        } else {
            cnhw.as_standard_layout().into_owned()
        };
        Self { cnhw }
    }

    /// Builds a map from a batch-major `(B, C, H, W)` array.
    pub fn from_bchw(bchw: ArrayView4<T>) -> Self {
        Self::from_cnhw(bchw.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned())
    }

    pub fn from_fn(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let cnhw = Array4::from_shape_fn((channels, batch, height, width), |(c, b, i, j)| {
            f(b, c, i, j)
        });
        Self { cnhw }
    }

    /// `(batch, channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let (c, b, h, w) = self.cnhw.dim();
        (b, c, h, w)
    }

    pub fn batch(&self) -> usize {
        self.cnhw.dim().1
    }

    pub fn channels(&self) -> usize {
        self.cnhw.dim().0
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, _, h, w) = self.cnhw.dim();
        (h, w)
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, i: usize, j: usize) -> T {
        self.cnhw[[c, b, i, j]]
    }

    #[inline]
    pub fn get_mut(&mut self, b: usize, c: usize, i: usize, j: usize) -> &mut T {
        &mut self.cnhw[[c, b, i, j]]
    }

    /// Batch-major view `(B, C, H, W)`.
    pub fn view(&self) -> ArrayView4<'_, T> {
        self.cnhw.view().permuted_axes([1, 0, 2, 3])
    }

    pub fn cnhw(&self) -> &Array4<T> {
        &self.cnhw
    }

    pub fn cnhw_mut(&mut self) -> &mut Array4<T> {
        &mut self.cnhw
    }

    pub fn into_cnhw(self) -> Array4<T> {
        self.cnhw
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> FeatureMap<U> {
        FeatureMap {
            cnhw: self.cnhw.mapv(f),
        }
    }
}
