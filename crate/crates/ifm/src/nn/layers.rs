//! Layer kernels on channel-major data.
//!
//! Convolutions are 3x3, stride 1, zero padding 1. Batch norm operates on the
//! rows of a `(features, samples)` matrix, which covers both the spatial case
//! (`samples = B*H*W`) and the fully connected case (`samples = m`).

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};

use super::Real;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Unfolds a `(C, B, H, W)` tensor into `(C*9, B*H*W)` patch columns.
///
/// Row `c*9 + ky*3 + kx` holds input pixel `(y + ky - 1, x + kx - 1)` of
/// channel `c` for every output position; out-of-range taps are zero.
pub fn im2col<T: Real>(x: ArrayView4<T>) -> Array2<T> {
    let (c, b, h, w) = x.dim();
    let len = b * h * w;
    let mut cols = Array2::<T>::zeros((c * TAPS, len));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("fresh array is contiguous");
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * TAPS + ky * KERNEL + kx) * len;
                let (x0, x1) = tap_range(kx, w);
                for bi in 0..b {
                    for y in 0..h {
                        let Some(sy) = shifted(y, ky, h) else { continue };
                        let src = ((ci * b + bi) * h + sy) * w;
                        let dst = row + (bi * h + y) * w;
                        for xx in x0..x1 {
                            cs[dst + xx] = xs[src + xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates patch columns back onto a `(C, B, H, W)` tensor.
pub fn col2im<T: Real>(cols: ArrayView2<T>, shape: (usize, usize, usize, usize)) -> Array4<T> {
    let (c, b, h, w) = shape;
    let len = b * h * w;
    debug_assert_eq!(cols.dim(), (c * TAPS, len));
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut out = Array4::<T>::zeros(shape);
    let os = out.as_slice_mut().expect("fresh array is contiguous");
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * TAPS + ky * KERNEL + kx) * len;
                let (x0, x1) = tap_range(kx, w);
                for bi in 0..b {
                    for y in 0..h {
                        let Some(sy) = shifted(y, ky, h) else { continue };
                        let dst = ((ci * b + bi) * h + sy) * w;
                        let src = row + (bi * h + y) * w;
                        for xx in x0..x1 {
                            os[dst + xx + kx - 1] += cs[src + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn shifted(y: usize, ky: usize, h: usize) -> Option<usize> {
    let sy = (y + ky).checked_sub(1)?;
    (sy < h).then_some(sy)
}

#[inline]
fn tap_range(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    }
}

/// `weight` is `(Cout, Cin, 3, 3)`; returns the pre-activation `(Cout, B*H*W)`.
pub fn conv_forward<T: Real>(weight: ArrayView4<T>, cols: ArrayView2<T>) -> Array2<T> {
    let w2 = conv_matrix(weight);
    let mut out = Array2::<T>::zeros((w2.nrows(), cols.ncols()));
    general_mat_mul(T::one(), &w2, &cols, T::zero(), &mut out);
    out
}

/// Returns `(dweight, dcols)`; `dcols` is skipped when the input gradient is not needed.
pub fn conv_backward<T: Real>(
    weight: ArrayView4<T>,
    cols: ArrayView2<T>,
    dout: ArrayView2<T>,
    need_input_grad: bool,
) -> (Array4<T>, Option<Array2<T>>) {
    let w2 = conv_matrix(weight);
    let mut dw = Array2::<T>::zeros(w2.dim());
    general_mat_mul(T::one(), &dout, &cols.t(), T::zero(), &mut dw);
    let dw = dw
        .into_shape_with_order(weight.dim())
        .expect("element count preserved");
    let dcols = need_input_grad.then(|| {
        let mut dcols = Array2::<T>::zeros(cols.dim());
        general_mat_mul(T::one(), &w2.t(), &dout, T::zero(), &mut dcols);
        dcols
    });
    (dw, dcols)
}

fn conv_matrix<T: Real>(weight: ArrayView4<T>) -> ArrayView2<T> {
    let (co, ci, kh, kw) = weight.dim();
    weight
        .into_shape_with_order((co, ci * kh * kw))
        .expect("conv weights are stored contiguously")
}

/// Per-row batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnStats<T> {
    pub mean: Array1<T>,
    /// Biased variance (divides by the sample count).
    pub var: Array1<T>,
    pub inv_std: Array1<T>,
    pub count: usize,
}

/// Normalizes each row with its own statistics; returns `(xhat, stats)`.
pub fn bn_train<T: Real>(z: ArrayView2<T>, eps: T) -> (Array2<T>, BnStats<T>) {
    let (rows, n) = z.dim();
    let inv_n = T::one() / T::from_usize(n).expect("count fits");
    let mut xhat = Array2::<T>::zeros((rows, n));
    let mut mean = Array1::<T>::zeros(rows);
    let mut var = Array1::<T>::zeros(rows);
    let mut inv_std = Array1::<T>::zeros(rows);
    for (r, (zr, mut xr)) in z.outer_iter().zip(xhat.outer_iter_mut()).enumerate() {
        let mu = zr.sum() * inv_n;
        let v = zr.fold(T::zero(), |acc, &x| acc + (x - mu) * (x - mu)) * inv_n;
        let is = T::one() / (v + eps).sqrt();
        xr.zip_mut_with(&zr, |o, &x| *o = (x - mu) * is);
        mean[r] = mu;
        var[r] = v;
        inv_std[r] = is;
    }
    (
        xhat,
        BnStats {
            mean,
            var,
            inv_std,
            count: n,
        },
    )
}

/// Normalizes each row with fixed statistics.
pub fn bn_eval<T: Real>(
    z: ArrayView2<T>,
    running_mean: ArrayView1<T>,
    running_var: ArrayView1<T>,
    eps: T,
) -> Array2<T> {
    let mut out = z.to_owned();
    for ((mut row, &mu), &v) in out
        .outer_iter_mut()
        .zip(running_mean.iter())
        .zip(running_var.iter())
    {
        let is = T::one() / (v + eps).sqrt();
        row.mapv_inplace(|x| (x - mu) * is);
    }
    out
}

/// `y = gamma * xhat + beta` row-wise, followed by a leaky rectifier, in place.
pub fn affine_leaky_inplace<T: Real>(
    xhat: &mut Array2<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
    slope: T,
) {
    for ((mut row, &g), &b) in xhat.outer_iter_mut().zip(gamma.iter()).zip(beta.iter()) {
        row.mapv_inplace(|x| leaky(g * x + b, slope));
    }
}

/// As [`affine_leaky_inplace`], but each rectifier branch is copied from
/// `reference` (positive entries select the identity branch).
pub fn affine_leaky_frozen_inplace<T: Real>(
    xhat: &mut Array2<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
    slope: T,
    reference: ArrayView2<T>,
) {
    for (((mut row, refr), &g), &b) in xhat
        .outer_iter_mut()
        .zip(reference.outer_iter())
        .zip(gamma.iter())
        .zip(beta.iter())
    {
        row.zip_mut_with(&refr, |x, &r| {
            let y = g * *x + b;
            *x = if r > T::zero() { y } else { y * slope };
        });
    }
}

#[inline]
pub fn leaky<T: Real>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

/// Backward through `act = leaky(gamma * xhat + beta)` and the batch
/// normalization that produced `xhat`. `dact` is overwritten with `dz`.
///
/// Returns `(dgamma, dbeta)`.
pub fn affine_leaky_bn_backward<T: Real>(
    dact: &mut Array2<T>,
    act: ArrayView2<T>,
    xhat: ArrayView2<T>,
    gamma: ArrayView1<T>,
    inv_std: ArrayView1<T>,
    slope: T,
) -> (Array1<T>, Array1<T>) {
    let rows = dact.nrows();
    let n = T::from_usize(dact.ncols()).expect("count fits");
    let mut dgamma = Array1::<T>::zeros(rows);
    let mut dbeta = Array1::<T>::zeros(rows);
    for r in 0..rows {
        let mut d = dact.row_mut(r);
        let a = act.row(r);
        let xh = xhat.row(r);
        d.zip_mut_with(&a, |g, &y| {
            if y <= T::zero() {
                *g *= slope;
            }
        });
        // d now holds dL/dy with y = gamma * xhat + beta
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for (&g, &x) in d.iter().zip(xh.iter()) {
            sum_dy += g;
            sum_dy_xhat += g * x;
        }
        dgamma[r] = sum_dy_xhat;
        dbeta[r] = sum_dy;
        let scale = gamma[r] * inv_std[r] / n;
        d.zip_mut_with(&xh, |g, &x| *g = scale * (n * *g - sum_dy - x * sum_dy_xhat));
    }
    (dgamma, dbeta)
}

/// Backward through `act = leaky(bn_eval(z))` with frozen statistics.
pub fn affine_leaky_eval_backward<T: Real>(
    dact: &mut Array2<T>,
    act: ArrayView2<T>,
    xhat: ArrayView2<T>,
    gamma: ArrayView1<T>,
    inv_std: ArrayView1<T>,
    slope: T,
) -> (Array1<T>, Array1<T>) {
    let rows = dact.nrows();
    let mut dgamma = Array1::<T>::zeros(rows);
    let mut dbeta = Array1::<T>::zeros(rows);
    for r in 0..rows {
        let mut d = dact.row_mut(r);
        d.zip_mut_with(&act.row(r), |g, &y| {
            if y <= T::zero() {
                *g *= slope;
            }
        });
        dbeta[r] = d.sum();
        dgamma[r] = d.iter().zip(xhat.row(r).iter()).map(|(&g, &x)| g * x).sum();
        let s = gamma[r] * inv_std[r];
        d.mapv_inplace(|g| g * s);
    }
    (dgamma, dbeta)
}

/// Exponential moving update of running statistics (unbiased variance).
pub fn update_running<T: Real>(
    running_mean: &mut Array1<T>,
    running_var: &mut Array1<T>,
    stats: &BnStats<T>,
    momentum: T,
) {
    let keep = T::one() - momentum;
    let unbias = if stats.count > 1 {
        T::from_usize(stats.count).unwrap() / T::from_usize(stats.count - 1).unwrap()
    } else {
        T::one()
    };
    running_mean.zip_mut_with(&stats.mean, |r, &m| *r = keep * *r + momentum * m);
    running_var.zip_mut_with(&stats.var, |r, &v| *r = keep * *r + momentum * v * unbias);
}

/// 2x2 stride-2 max pooling over `(C, B, H, W)`.
///
/// Returns the pooled tensor and, per output cell, the winning offset
/// `dy*2 + dx` within the window (first maximum on ties).
pub fn maxpool_forward<T: Real>(x: ArrayView4<T>) -> (Array4<T>, Vec<u8>) {
    let (c, b, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::<T>::zeros((c, b, oh, ow));
    let mut arg = vec![0u8; c * b * oh * ow];
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().unwrap();
    for plane in 0..c * b {
        let src = plane * h * w;
        let dst = plane * oh * ow;
        for i in 0..oh {
            for j in 0..ow {
                let base = src + 2 * i * w + 2 * j;
                let cand = [xs[base], xs[base + 1], xs[base + w], xs[base + w + 1]];
                let mut best = 0usize;
                for k in 1..4 {
                    if cand[k] > cand[best] {
                        best = k;
                    }
                }
                os[dst + i * ow + j] = cand[best];
                arg[dst + i * ow + j] = best as u8;
            }
        }
    }
    (out, arg)
}

/// Pooling with prescribed winners (offsets as returned by [`maxpool_forward`]).
pub fn maxpool_frozen<T: Real>(x: ArrayView4<T>, arg: &[u8]) -> Array4<T> {
    let (c, b, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::<T>::zeros((c, b, oh, ow));
    let os = out.as_slice_mut().unwrap();
    for plane in 0..c * b {
        for i in 0..oh {
            for j in 0..ow {
                let o = plane * oh * ow + i * ow + j;
                let k = arg[o] as usize;
                os[o] = xs[plane * h * w + (2 * i + k / 2) * w + 2 * j + k % 2];
            }
        }
    }
    out
}

/// Routes pooled gradients back to the winning positions.
pub fn maxpool_backward<T: Real>(
    dout: ArrayView4<T>,
    arg: &[u8],
    in_shape: (usize, usize, usize, usize),
) -> Array4<T> {
    let (c, b, h, w) = in_shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Array4::<T>::zeros(in_shape);
    let dout = dout.as_standard_layout();
    let ds = dout.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().unwrap();
    for plane in 0..c * b {
        let src = plane * oh * ow;
        let dst = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let k = arg[src + i * ow + j] as usize;
                xs[dst + (2 * i + k / 2) * w + 2 * j + k % 2] += ds[src + i * ow + j];
            }
        }
    }
    dx
}

/// Dense layer in feature-major form: `(out, in) x (in, m) -> (out, m)`.
pub fn linear_forward<T: Real>(weight: ArrayView2<T>, x: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::<T>::zeros((weight.nrows(), x.ncols()));
    general_mat_mul(T::one(), &weight, &x, T::zero(), &mut out);
    out
}

/// Returns `(dweight, dx)` for [`linear_forward`].
pub fn linear_backward<T: Real>(
    weight: ArrayView2<T>,
    x: ArrayView2<T>,
    dout: ArrayView2<T>,
    need_input_grad: bool,
) -> (Array2<T>, Option<Array2<T>>) {
    let mut dw = Array2::<T>::zeros(weight.dim());
    general_mat_mul(T::one(), &dout, &x.t(), T::zero(), &mut dw);
    let dx = need_input_grad.then(|| {
        let mut dx = Array2::<T>::zeros(x.dim());
        general_mat_mul(T::one(), &weight.t(), &dout, T::zero(), &mut dx);
        dx
    });
    (dw, dx)
}

pub fn row_sums<T: Real>(a: ArrayView2<T>) -> Array1<T> {
    a.sum_axis(Axis(1))
}
