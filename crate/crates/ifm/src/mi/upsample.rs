use crate::nn::{FeatureMap, Real};

use super::MiError;

fn scale(source: (usize, usize), target: (usize, usize)) -> Result<(usize, usize), MiError> {
    let err = MiError::NonIntegerScale {
        source_size: source,
        target,
    };
    let (h, w) = source;
    let (th, tw) = target;
    if h == 0 || w == 0 || th < h || tw < w || th % h != 0 || tw % w != 0 {
        return Err(err);
    }
    Ok((th / h, tw / w))
}

/// Nearest-neighbour upsampling:
/// `out[b, c, i, j] = input[b, c, i * h / H, j * w / W]`.
pub fn upsample_nearest<T: Real>(
    fmap: &FeatureMap<T>,
    target: (usize, usize),
) -> Result<FeatureMap<T>, MiError> {
    let (b, c, h, w) = fmap.shape();
    scale((h, w), target)?;
    let (th, tw) = target;
    let src = fmap.cnhw();
    let out = ndarray::Array4::from_shape_fn((c, b, th, tw), |(ci, bi, i, j)| {
        src[[ci, bi, i * h / th, j * w / tw]]
    });
    Ok(FeatureMap::from_cnhw(out))
}

/// Adjoint of [`upsample_nearest`]: sums each block of output gradients onto
/// its source cell.
pub fn upsample_nearest_backward<T: Real>(
    grad: &FeatureMap<T>,
    source: (usize, usize),
) -> Result<FeatureMap<T>, MiError> {
    let (b, c, th, tw) = grad.shape();
    scale(source, (th, tw))?;
    let (h, w) = source;
    let mut out = FeatureMap::zeros(b, c, h, w);
    let g = grad.cnhw();
    let o = out.cnhw_mut();
    for ((ci, bi, i, j), &v) in g.indexed_iter() {
        o[[ci, bi, i * h / th, j * w / tw]] += v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_by_two_doubles() {
        let fm = FeatureMap::from_bchw(array![[[[1.0f64, 2.0], [3.0, 4.0]]]].view());
        let up = upsample_nearest(&fm, (4, 4)).unwrap();
        let expect = array![[[
            [1.0, 1.0, 2.0, 2.0],
            [1.0, 1.0, 2.0, 2.0],
            [3.0, 3.0, 4.0, 4.0],
            [3.0, 3.0, 4.0, 4.0]
        ]]];
        assert_eq!(up.view(), expect.view());
    }

    #[test]
    fn same_size_is_identity() {
        let fm = FeatureMap::from_fn(2, 3, 4, 4, |b, c, i, j| (b + 2 * c + 3 * i + 5 * j) as f32);
        assert_eq!(upsample_nearest(&fm, (4, 4)).unwrap(), fm);
    }

    #[test]
    fn conv2_tap_matches_conv1_grid() {
        let fm = FeatureMap::<f32>::zeros(3, 64, 8, 8);
        assert_eq!(upsample_nearest(&fm, (16, 16)).unwrap().shape(), (3, 64, 16, 16));
    }

    #[test]
    fn non_integer_scale_is_rejected() {
        let fm = FeatureMap::<f32>::zeros(1, 1, 3, 3);
        assert!(matches!(
            upsample_nearest(&fm, (4, 4)),
            Err(MiError::NonIntegerScale { .. })
        ));
        assert!(upsample_nearest(&fm, (2, 2)).is_err());
    }

    #[test]
    fn backward_is_adjoint() {
        let x = FeatureMap::from_fn(2, 2, 2, 4, |b, c, i, j| (1 + b + 3 * c + 5 * i + 7 * j) as f64);
        let y = FeatureMap::from_fn(2, 2, 8, 8, |b, c, i, j| ((b * 3 + c * 5 + i * 7 + j) % 11) as f64);
        let up = upsample_nearest(&x, (8, 8)).unwrap();
        let lhs: f64 = up.cnhw().iter().zip(y.cnhw().iter()).map(|(a, b)| a * b).sum();
        let back = upsample_nearest_backward(&y, (2, 4)).unwrap();
        let rhs: f64 = x.cnhw().iter().zip(back.cnhw().iter()).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
