use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use super::init::{he_uniform, init_rng};
use super::layers::{self, BnStats};
use super::{bad_shape, Mode, ModelError, Parameterized, Real};

/// Pair discriminator: `N -> 256 -> 128 -> 64 -> 1` with batch norm and leaky
/// rectifiers on the hidden layers and a logistic output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_width: usize,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl DiscriminatorConfig {
    pub fn new(input_width: usize) -> Self {
        Self {
            input_width,
            hidden: vec![256, 128, 64],
            leaky_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_width == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(ModelError::InvalidConfig(format!(
                "discriminator widths must be positive: N={} hidden={:?}",
                self.input_width, self.hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer<T> {
    /// `(out, in)`; no bias, batch norm supplies the shift.
    pub weight: Array2<T>,
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub hidden: Vec<HiddenLayer<T>>,
    /// `(1, last hidden width)`.
    pub out_weight: Array2<T>,
    pub out_bias: Array1<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    xhat: Array2<T>,
    act: Array2<T>,
    inv_std: Array1<T>,
    stats: Option<BnStats<T>>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorCache<T> {
    mode: Mode,
    /// Network input, feature-major `(N, m)`; later layers read the previous
    /// layer's `act`.
    input: Array2<T>,
    layers: Vec<LayerCache<T>>,
}

impl<T: Real> DiscriminatorCache<T> {
    /// See [`super::ClassifierCache::regime`].
    pub fn regime(&self) -> u64 {
        let mut h = super::regime_hasher();
        for l in &self.layers {
            h.signs(l.act.iter().map(|v| *v > T::zero()));
        }
        h.finish()
    }
}

impl<T: Real> Discriminator<T> {
    pub fn init(config: DiscriminatorConfig, seed: u64, tag: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = init_rng(seed, 1 + tag);
        let slope = config.leaky_slope;
        let mut fan_in = config.input_width;
        let mut hidden = Vec::with_capacity(config.hidden.len());
        for &width in &config.hidden {
            hidden.push(HiddenLayer {
                weight: he_uniform((width, fan_in), fan_in, slope, &mut rng),
                gamma: Array1::ones(width),
                beta: Array1::zeros(width),
                running_mean: Array1::zeros(width),
                running_var: Array1::ones(width),
            });
            fan_in = width;
        }
        let out_weight = he_uniform((1, fan_in), fan_in, slope, &mut rng);
        Ok(Self {
            config,
            hidden,
            out_weight,
            out_bias: Array1::zeros(1),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_params();
        for (_, mut b) in z.buffers_mut() {
            b.fill(T::zero());
        }
        z
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        let c = |x: &T| U::from_f64(x.to_f64().unwrap()).unwrap();
        Discriminator {
            config: self.config.clone(),
            hidden: self
                .hidden
                .iter()
                .map(|l| HiddenLayer {
                    weight: l.weight.map(c),
                    gamma: l.gamma.map(c),
                    beta: l.beta.map(c),
                    running_mean: l.running_mean.map(c),
                    running_var: l.running_var.map(c),
                })
                .collect(),
            out_weight: self.out_weight.map(c),
            out_bias: self.out_bias.map(c),
        }
    }

    /// Pre-squash scores `V(x)` for each row of `vectors` (`m x N`).
    pub fn scores(
        &self,
        vectors: ArrayView2<T>,
        mode: Mode,
    ) -> Result<(Array1<T>, DiscriminatorCache<T>), ModelError> {
        self.scores_impl(vectors, mode, None)
    }

    /// Scores with the rectifier branches of `regime`; see
    /// [`super::Classifier::forward_frozen`].
    pub fn scores_frozen(
        &self,
        vectors: ArrayView2<T>,
        mode: Mode,
        regime: &DiscriminatorCache<T>,
    ) -> Result<Array1<T>, ModelError> {
        if regime.layers.len() != self.hidden.len()
            || regime.layers.first().is_some_and(|l| l.act.ncols() != vectors.nrows())
        {
            return Err(bad_shape("vectors shaped like the regime's", vectors.dim()));
        }
        Ok(self.scores_impl(vectors, mode, Some(regime))?.0)
    }

    fn scores_impl(
        &self,
        vectors: ArrayView2<T>,
        mode: Mode,
        frozen: Option<&DiscriminatorCache<T>>,
    ) -> Result<(Array1<T>, DiscriminatorCache<T>), ModelError> {
        let (m, n) = vectors.dim();
        if n != self.config.input_width {
            return Err(bad_shape(format!("(m, {})", self.config.input_width), (m, n)));
        }
        if m == 0 || (mode == Mode::Train && m < 2) {
            return Err(bad_shape("at least 2 rows in train mode, 1 in eval mode", (m, n)));
        }
        let slope = T::lit(self.config.leaky_slope);
        let eps = T::lit(self.config.bn_eps);
        let input = vectors.t().as_standard_layout().into_owned();
        let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(self.hidden.len());
        for (k, layer) in self.hidden.iter().enumerate() {
            let x = caches.last().map_or(input.view(), |c| c.act.view());
            let z = layers::linear_forward(layer.weight.view(), x);
            let (xhat, inv_std, stats) = match mode {
                Mode::Train => {
                    let (xhat, stats) = layers::bn_train(z.view(), eps);
                    let inv_std = stats.inv_std.clone();
                    (xhat, inv_std, Some(stats))
                }
                Mode::Eval => (
                    layers::bn_eval(
                        z.view(),
                        layer.running_mean.view(),
                        layer.running_var.view(),
                        eps,
                    ),
                    layer.running_var.mapv(|v| T::one() / (v + eps).sqrt()),
                    None,
                ),
            };
            let mut act = xhat.clone();
            match frozen {
                Some(r) => layers::affine_leaky_frozen_inplace(
                    &mut act,
                    layer.gamma.view(),
                    layer.beta.view(),
                    slope,
                    r.layers[k].act.view(),
                ),
                None => layers::affine_leaky_inplace(&mut act, layer.gamma.view(), layer.beta.view(), slope),
            }
            caches.push(LayerCache {
                xhat,
                act,
                inv_std,
                stats,
            });
        }
        let x = caches.last().map_or(input.view(), |c| c.act.view());
        let v = layers::linear_forward(self.out_weight.view(), x);
        let bias = self.out_bias[0];
        let scores = v.row(0).mapv(|s| s + bias);
        Ok((
            scores,
            DiscriminatorCache {
                mode,
                input,
                layers: caches,
            },
        ))
    }

    /// Probabilities `sigma(V(x))`, each strictly inside (0, 1) for finite scores.
    pub fn forward(&self, vectors: ArrayView2<T>, mode: Mode) -> Result<Array1<T>, ModelError> {
        let (v, _) = self.scores(vectors, mode)?;
        Ok(v.mapv(sigmoid))
    }

    /// Accumulates parameter gradients for upstream gradient `dscores`
    /// (`dL/dV`, one per row) and returns `dL/dx` as `m x N`.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache<T>,
        dscores: ArrayView1<T>,
        grads: &mut Discriminator<T>,
        need_input_grad: bool,
    ) -> Option<Array2<T>> {
        let slope = T::lit(self.config.leaky_slope);
        let dv = dscores.to_owned().insert_axis(ndarray::Axis(0));
        grads.out_bias[0] += dscores.sum();
        let layer_input = |k: usize| if k == 0 { cache.input.view() } else { cache.layers[k - 1].act.view() };
        let nlayers = self.hidden.len();
        let (dw, dx) = layers::linear_backward(self.out_weight.view(), layer_input(nlayers), dv.view(), true);
        grads.out_weight += &dw;
        let mut d = dx.expect("requested");
        for k in (0..nlayers).rev() {
            let lc = &cache.layers[k];
            let layer = &self.hidden[k];
            let (dgamma, dbeta) = match cache.mode {
                Mode::Train => layers::affine_leaky_bn_backward(
                    &mut d,
                    lc.act.view(),
                    lc.xhat.view(),
                    layer.gamma.view(),
                    lc.inv_std.view(),
                    slope,
                ),
                Mode::Eval => layers::affine_leaky_eval_backward(
                    &mut d,
                    lc.act.view(),
                    lc.xhat.view(),
                    layer.gamma.view(),
                    lc.inv_std.view(),
                    slope,
                ),
            };
            let g = &mut grads.hidden[k];
            g.gamma += &dgamma;
            g.beta += &dbeta;
            let want_dx = k > 0 || need_input_grad;
            let (dw, dx) = layers::linear_backward(layer.weight.view(), layer_input(k), d.view(), want_dx);
            g.weight += &dw;
            match dx {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d.t().as_standard_layout().into_owned())
    }

    pub fn update_running_stats(&mut self, cache: &DiscriminatorCache<T>) {
        let momentum = T::lit(self.config.bn_momentum);
        for (layer, lc) in self.hidden.iter_mut().zip(&cache.layers) {
            if let Some(stats) = &lc.stats {
                layers::update_running(&mut layer.running_mean, &mut layer.running_var, stats, momentum);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Parameterized<T> for Discriminator<T> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (k, l) in self.hidden.iter().enumerate() {
            out.push((format!("fc{}.weight", k + 1), l.weight.view().into_dyn()));
            out.push((format!("fc{}.bn.gamma", k + 1), l.gamma.view().into_dyn()));
            out.push((format!("fc{}.bn.beta", k + 1), l.beta.view().into_dyn()));
        }
        let k = self.hidden.len() + 1;
        out.push((format!("fc{k}.weight"), self.out_weight.view().into_dyn()));
        out.push((format!("fc{k}.bias"), self.out_bias.view().into_dyn()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        let k = self.hidden.len() + 1;
        for (i, l) in self.hidden.iter_mut().enumerate() {
            out.push((format!("fc{}.weight", i + 1), l.weight.view_mut().into_dyn()));
            out.push((format!("fc{}.bn.gamma", i + 1), l.gamma.view_mut().into_dyn()));
            out.push((format!("fc{}.bn.beta", i + 1), l.beta.view_mut().into_dyn()));
        }
        out.push((format!("fc{k}.weight"), self.out_weight.view_mut().into_dyn()));
        out.push((format!("fc{k}.bias"), self.out_bias.view_mut().into_dyn()));
        out
    }

    fn buffers(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (k, l) in self.hidden.iter().enumerate() {
            out.push((format!("fc{}.bn.running_mean", k + 1), l.running_mean.view().into_dyn()));
            out.push((format!("fc{}.bn.running_var", k + 1), l.running_var.view().into_dyn()));
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        for (k, l) in self.hidden.iter_mut().enumerate() {
            out.push((
                format!("fc{}.bn.running_mean", k + 1),
                l.running_mean.view_mut().into_dyn(),
            ));
            out.push((
                format!("fc{}.bn.running_var", k + 1),
                l.running_var.view_mut().into_dyn(),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};

    #[test]
    fn first_layer_width_matches_pair_width() {
        let d = Discriminator::<f32>::init(DiscriminatorConfig::new(32 + 64), 0, 0).unwrap();
        assert_eq!(d.hidden[0].weight.dim(), (256, 96));
        assert_eq!(d.out_weight.dim(), (1, 64));
    }

    #[test]
    fn zero_weights_output_one_half() {
        let mut d = Discriminator::<f64>::init(DiscriminatorConfig::new(4), 0, 0).unwrap();
        d.zero_params();
        let x = Array::from_shape_fn((5, 4), |(i, j)| (i * 4 + j) as f64);
        for mode in [Mode::Train, Mode::Eval] {
            let p = d.forward(x.view(), mode).unwrap();
            assert!(p.iter().all(|&v| v == 0.5), "{p:?}");
        }
    }

    #[test]
    fn wrong_width_is_rejected() {
        let d = Discriminator::<f32>::init(DiscriminatorConfig::new(96), 0, 0).unwrap();
        let x = Array2::<f32>::zeros((4, 100));
        assert!(matches!(d.forward(x.view(), Mode::Train), Err(ModelError::BadShape { .. })));
    }

    #[test]
    fn outputs_are_strict_probabilities() {
        let d = Discriminator::<f64>::init(DiscriminatorConfig::new(8), 2, 0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x = Array::from_shape_simple_fn((1000, 8), || rng.random_range(-3.0..3.0));
        let p = d.forward(x.view(), Mode::Train).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
