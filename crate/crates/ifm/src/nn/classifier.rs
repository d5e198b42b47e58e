use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView4, ArrayViewD, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};

use super::init::{he_uniform, init_rng};
use super::layers::{self, BnStats};
use super::{bad_shape, FeatureMap, Mode, ModelError, Parameterized, Real};

/// Four `conv3x3 -> BN -> leaky ReLU -> maxpool 2x2` blocks and a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub conv_channels: [usize; 4],
    pub num_classes: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            input_size: 32,
            conv_channels: [32, 64, 128, 128],
            num_classes: 10,
            leaky_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ClassifierConfig {
    /// Spatial side length of the map after block `k` (0-based).
    pub fn tap_size(&self, k: usize) -> usize {
        self.input_size >> (k + 1)
    }

    /// `(channels, side)` of every tap.
    pub fn tap_shapes(&self) -> [(usize, usize); 4] {
        std::array::from_fn(|k| (self.conv_channels[k], self.tap_size(k)))
    }

    pub fn head_inputs(&self) -> usize {
        let s = self.tap_size(3);
        self.conv_channels[3] * s * s
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "input size {} is not a positive multiple of 16",
                self.input_size
            )));
        }
        if self.in_channels == 0 || self.num_classes == 0 || self.conv_channels.contains(&0) {
            return Err(ModelError::InvalidConfig("zero-width layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    /// `(Cout, Cin, 3, 3)`; no bias, batch norm supplies the shift.
    pub weight: Array4<T>,
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    pub config: ClassifierConfig,
    pub blocks: Vec<ConvBlock<T>>,
    /// `(classes, C4 * s * s)`, inputs flattened in `(channel, row, col)` order.
    pub head_weight: Array2<T>,
    pub head_bias: Array1<T>,
}

/// Logits plus the four post-pool feature maps.
#[derive(Debug, Clone)]
pub struct ClassifierOutputs<T> {
    pub logits: Array2<T>,
    pub taps: Vec<FeatureMap<T>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    in_shape: (usize, usize, usize, usize),
    cols: Array2<T>,
    xhat: Array2<T>,
    act: Array2<T>,
    inv_std: Array1<T>,
    argmax: Vec<u8>,
    stats: Option<BnStats<T>>,
}

/// Intermediate values needed by [`Classifier::backward`].
#[derive(Debug, Clone)]
pub struct ClassifierCache<T> {
    start: usize,
    mode: Mode,
    blocks: Vec<BlockCache<T>>,
    features: Array2<T>,
}

impl<T: Real> ClassifierCache<T> {
    /// Fingerprint of the piecewise-linear regime of a forward pass: the sign
    /// of every rectifier input and every pooling winner. Two passes with equal
    /// regimes lie on the same smooth piece of the network.
    pub fn regime(&self) -> u64 {
        let mut h = super::regime_hasher();
        for b in &self.blocks {
            h.signs(b.act.iter().map(|v| *v > T::zero()));
            h.bytes(&b.argmax);
        }
        h.finish()
    }
}

impl<T: Real> Classifier<T> {
    /// Deterministic initialization: He-uniform conv and head weights, zero
    /// head bias, unit BN scale, zero BN shift, running stats (0, 1).
    pub fn init(config: ClassifierConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = init_rng(seed, 0);
        let slope = config.leaky_slope;
        let mut cin = config.in_channels;
        let mut blocks = Vec::with_capacity(4);
        for &cout in &config.conv_channels {
            blocks.push(ConvBlock {
                weight: he_uniform((cout, cin, 3, 3), cin * 9, slope, &mut rng),
                gamma: Array1::ones(cout),
                beta: Array1::zeros(cout),
                running_mean: Array1::zeros(cout),
                running_var: Array1::ones(cout),
            });
            cin = cout;
        }
        let fan_in = config.head_inputs();
        let head_weight = he_uniform((config.num_classes, fan_in), fan_in, slope, &mut rng);
        let head_bias = Array1::zeros(config.num_classes);
        Ok(Self {
            config,
            blocks,
            head_weight,
            head_bias,
        })
    }

    /// A same-shaped model with every parameter and buffer zeroed; used as a
    /// gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_params();
        for (_, mut b) in z.buffers_mut() {
            b.fill(T::zero());
        }
        z
    }

    pub fn cast<U: Real>(&self) -> Classifier<U> {
        let c = |x: &T| U::from_f64(x.to_f64().unwrap()).unwrap();
        Classifier {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    weight: b.weight.map(c),
                    gamma: b.gamma.map(c),
                    beta: b.beta.map(c),
                    running_mean: b.running_mean.map(c),
                    running_var: b.running_var.map(c),
                })
                .collect(),
            head_weight: self.head_weight.map(c),
            head_bias: self.head_bias.map(c),
        }
    }

    /// Runs the network on a `(B, C, H, W)` batch of images scaled to `[0, 1]`.
    pub fn forward(
        &self,
        images: ArrayView4<T>,
        mode: Mode,
    ) -> Result<(ClassifierOutputs<T>, ClassifierCache<T>), ModelError> {
        let cfg = &self.config;
        let (b, c, h, w) = images.dim();
        if c != cfg.in_channels || h != cfg.input_size || w != cfg.input_size || b == 0 {
            return Err(bad_shape(
                format!("(b, {}, {s}, {s})", cfg.in_channels, s = cfg.input_size),
                images.dim(),
            ));
        }
        let x = FeatureMap::from_bchw(images);
        self.forward_from(0, x, mode)
    }

    /// Evaluation-mode logits only.
    pub fn predict_logits(&self, images: ArrayView4<T>) -> Result<Array2<T>, ModelError> {
        Ok(self.forward(images, Mode::Eval)?.0.logits)
    }

    /// Runs blocks `start..4` and the head on `input`, where `input` is the
    /// image batch for `start == 0` and tap `start - 1` otherwise
    /// (`start == 4` runs the head alone).
    ///
    /// Returned taps cover blocks `start..4` only.
    pub fn forward_from(
        &self,
        start: usize,
        input: FeatureMap<T>,
        mode: Mode,
    ) -> Result<(ClassifierOutputs<T>, ClassifierCache<T>), ModelError> {
        self.forward_impl(start, input, mode, None)
    }

    /// Forward pass that reuses the rectifier branches and pooling winners of
    /// `regime` instead of recomputing them. On inputs and parameters close
    /// to those that produced `regime` this is the smooth piece of the
    /// network through that point, which is what finite differences need.
    pub fn forward_frozen(
        &self,
        images: ArrayView4<T>,
        mode: Mode,
        regime: &ClassifierCache<T>,
    ) -> Result<ClassifierOutputs<T>, ModelError> {
        if regime.start != 0 || regime.blocks.len() != self.blocks.len() {
            return Err(ModelError::InvalidConfig("regime comes from a different network".into()));
        }
        let x = FeatureMap::from_bchw(images);
        Ok(self.forward_impl(0, x, mode, Some(regime))?.0)
    }

    fn forward_impl(
        &self,
        start: usize,
        input: FeatureMap<T>,
        mode: Mode,
        frozen: Option<&ClassifierCache<T>>,
    ) -> Result<(ClassifierOutputs<T>, ClassifierCache<T>), ModelError> {
        let cfg = &self.config;
        if start > 4 {
            return Err(ModelError::InvalidConfig(format!("no block {start}")));
        }
        let (expect_c, expect_s) = if start == 0 {
            (cfg.in_channels, cfg.input_size)
        } else {
            (cfg.conv_channels[start - 1], cfg.tap_size(start - 1))
        };
        let (b, c, h, w) = input.shape();
        if c != expect_c || h != expect_s || w != expect_s || b == 0 {
            return Err(bad_shape(format!("(b, {expect_c}, {expect_s}, {expect_s})"), input.shape()));
        }
        if mode == Mode::Train && b < 2 {
            return Err(bad_shape("batch of at least 2 in train mode", input.shape()));
        }
        let slope = T::lit(cfg.leaky_slope);
        let eps = T::lit(cfg.bn_eps);
        let mut x = input.into_cnhw();
        let mut taps = Vec::with_capacity(4 - start);
        let mut caches = Vec::with_capacity(4 - start);
        for (k, block) in self.blocks[start..].iter().enumerate() {
            let base = frozen.map(|r| &r.blocks[k]);
            let in_shape = x.dim();
            let (_, bsz, hh, ww) = in_shape;
            let cols = layers::im2col(x.view());
            let z = layers::conv_forward(block.weight.view(), cols.view());
            let (xhat, inv_std, stats) = match mode {
                Mode::Train => {
                    let (xhat, stats) = layers::bn_train(z.view(), eps);
                    let inv_std = stats.inv_std.clone();
                    (xhat, inv_std, Some(stats))
                }
                Mode::Eval => {
                    let xhat = layers::bn_eval(
                        z.view(),
                        block.running_mean.view(),
                        block.running_var.view(),
                        eps,
                    );
                    let inv_std = block.running_var.mapv(|v| T::one() / (v + eps).sqrt());
                    (xhat, inv_std, None)
                }
            };
            drop(z);
            let mut act = xhat.clone();
            match base {
                Some(r) if r.act.dim() == act.dim() => layers::affine_leaky_frozen_inplace(
                    &mut act,
                    block.gamma.view(),
                    block.beta.view(),
                    slope,
                    r.act.view(),
                ),
                Some(_) => return Err(bad_shape("input shaped like the regime's", in_shape)),
                None => layers::affine_leaky_inplace(&mut act, block.gamma.view(), block.beta.view(), slope),
            }
            let cout = act.nrows();
            let act4 = act
                .view()
                .into_shape_with_order((cout, bsz, hh, ww))
                .expect("row-major activations");
            let (pooled, argmax) = match base {
                Some(r) => (layers::maxpool_frozen(act4, &r.argmax), r.argmax.clone()),
                None => layers::maxpool_forward(act4),
            };
            taps.push(FeatureMap::from_cnhw(pooled.clone()));
            caches.push(BlockCache {
                in_shape,
                cols,
                xhat,
                act,
                inv_std,
                argmax,
                stats,
            });
            x = pooled;
        }
        let features = flatten_head_input(&x);
        let mut logits = Array2::<T>::zeros((features.nrows(), cfg.num_classes));
        general_mat_mul(T::one(), &features, &self.head_weight.t(), T::zero(), &mut logits);
        logits += &self.head_bias;
        Ok((
            ClassifierOutputs { logits, taps },
            ClassifierCache {
                start,
                mode,
                blocks: caches,
                features,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads`.
    ///
    /// `dlogits` is the loss gradient at the logits; `dtaps[k]`, when present,
    /// is an extra gradient arriving directly at tap `start + k` (from the
    /// IFM regularizer). Returns the total gradient at each tap and at the
    /// input of block `start` (the latter only when `start > 0`).
    pub fn backward(
        &self,
        cache: &ClassifierCache<T>,
        dlogits: ndarray::ArrayView2<T>,
        dtaps: Option<&[FeatureMap<T>]>,
        grads: &mut Classifier<T>,
    ) -> (Vec<FeatureMap<T>>, Option<FeatureMap<T>>) {
        let cfg = &self.config;
        let slope = T::lit(cfg.leaky_slope);
        let start = cache.start;
        let nblocks = cache.blocks.len();

        // head
        let mut dw = Array2::<T>::zeros(self.head_weight.dim());
        general_mat_mul(T::one(), &dlogits.t(), &cache.features, T::zero(), &mut dw);
        grads.head_weight += &dw;
        grads.head_bias += &dlogits.sum_axis(Axis(0));
        let mut dfeat = Array2::<T>::zeros(cache.features.dim());
        general_mat_mul(T::one(), &dlogits, &self.head_weight, T::zero(), &mut dfeat);

        let bsz = cache.features.nrows();
        let (c4, s4) = (cfg.conv_channels[3], cfg.tap_size(3));
        let mut dx = unflatten_head_input(dfeat.view(), (c4, bsz, s4, s4));

        let mut tap_grads = vec![FeatureMap::zeros(0, 0, 0, 0); nblocks];
        let mut input_grad = None;
        for k in (0..nblocks).rev() {
            let bc = &cache.blocks[k];
            let block = &self.blocks[start + k];
            let gblock = &mut grads.blocks[start + k];
            if let Some(extra) = dtaps.and_then(|d| d.get(k)) {
                dx += extra.cnhw();
            }
            tap_grads[k] = FeatureMap::from_cnhw(dx.clone());
            let (cout, _, hh, ww) = (bc.act.nrows(), bc.in_shape.1, bc.in_shape.2, bc.in_shape.3);
            let dact4 = layers::maxpool_backward(dx.view(), &bc.argmax, (cout, bsz, hh, ww));
            let mut dz = dact4
                .into_shape_with_order((cout, bsz * hh * ww))
                .expect("contiguous");
            let (dgamma, dbeta) = match cache.mode {
                Mode::Train => layers::affine_leaky_bn_backward(
                    &mut dz,
                    bc.act.view(),
                    bc.xhat.view(),
                    block.gamma.view(),
                    bc.inv_std.view(),
                    slope,
                ),
                Mode::Eval => layers::affine_leaky_eval_backward(
                    &mut dz,
                    bc.act.view(),
                    bc.xhat.view(),
                    block.gamma.view(),
                    bc.inv_std.view(),
                    slope,
                ),
            };
            gblock.gamma += &dgamma;
            gblock.beta += &dbeta;
            let need_input = k > 0 || start > 0;
            let (dweight, dcols) =
                layers::conv_backward(block.weight.view(), bc.cols.view(), dz.view(), need_input);
            gblock.weight += &dweight;
            if let Some(dcols) = dcols {
                dx = layers::col2im(dcols.view(), bc.in_shape);
                if k == 0 {
                    input_grad = Some(FeatureMap::from_cnhw(dx.clone()));
                }
            }
        }
        if nblocks == 0 {
            input_grad = Some(FeatureMap::from_cnhw(dx));
        }
        (tap_grads, input_grad)
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&mut self, cache: &ClassifierCache<T>) {
        let momentum = T::lit(self.config.bn_momentum);
        for (k, bc) in cache.blocks.iter().enumerate() {
            if let Some(stats) = &bc.stats {
                let block = &mut self.blocks[cache.start + k];
                layers::update_running(&mut block.running_mean, &mut block.running_var, stats, momentum);
            }
        }
    }
}

/// `(C, B, s, s)` -> `(B, C*s*s)` with `(channel, row, col)` ordering per row.
fn flatten_head_input<T: Real>(x: &Array4<T>) -> Array2<T> {
    let (c, b, h, w) = x.dim();
    let hw = h * w;
    let mut out = Array2::<T>::zeros((b, c * hw));
    for ci in 0..c {
        for bi in 0..b {
            for p in 0..hw {
                out[[bi, ci * hw + p]] = x[[ci, bi, p / w, p % w]];
            }
        }
    }
    out
}

fn unflatten_head_input<T: Real>(
    d: ndarray::ArrayView2<T>,
    shape: (usize, usize, usize, usize),
) -> Array4<T> {
    let (c, b, h, w) = shape;
    let hw = h * w;
    Array4::from_shape_fn(shape, |(ci, bi, i, j)| d[[bi, ci * hw + i * w + j]])
        .into_shape_with_order((c, b, h, w))
        .expect("shape preserved")
}

impl<T: Real> Parameterized<T> for Classifier<T> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            out.push((format!("conv{}.weight", k + 1), b.weight.view().into_dyn()));
            out.push((format!("conv{}.bn.gamma", k + 1), b.gamma.view().into_dyn()));
            out.push((format!("conv{}.bn.beta", k + 1), b.beta.view().into_dyn()));
        }
        out.push(("fc.weight".into(), self.head_weight.view().into_dyn()));
        out.push(("fc.bias".into(), self.head_bias.view().into_dyn()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("conv{}.weight", k + 1), b.weight.view_mut().into_dyn()));
            out.push((format!("conv{}.bn.gamma", k + 1), b.gamma.view_mut().into_dyn()));
            out.push((format!("conv{}.bn.beta", k + 1), b.beta.view_mut().into_dyn()));
        }
        out.push(("fc.weight".into(), self.head_weight.view_mut().into_dyn()));
        out.push(("fc.bias".into(), self.head_bias.view_mut().into_dyn()));
        out
    }

    fn buffers(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            out.push((format!("conv{}.bn.running_mean", k + 1), b.running_mean.view().into_dyn()));
            out.push((format!("conv{}.bn.running_var", k + 1), b.running_var.view().into_dyn()));
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter_mut().enumerate() {
            out.push((
                format!("conv{}.bn.running_mean", k + 1),
                b.running_mean.view_mut().into_dyn(),
            ));
            out.push((
                format!("conv{}.bn.running_var", k + 1),
                b.running_var.view_mut().into_dyn(),
            ));
        }
        out
    }
}
