//! Encoder-decoder generator with skip concatenation.
//!
//! Layout for `depth = d`, `base_width = w`:
//!
//! ```text
//! enc[l]      two 3x3 convs to w*2^l, leaky ReLU, then 2x2 average pool   (l = 0..d)
//! bottleneck  two 3x3 convs at w*2^(d-1)
//! dec[l]      2x bilinear upsample, concat enc[l] output, two 3x3 convs   (l = d-1..0)
//! head        1x1 linear conv to out_heads * in_channels
//! ```
//!
//! Inputs whose sides are not multiples of `2^d` are reflect-padded before
//! the first layer and center-cropped after the head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, Conv2d, LEAKY_SLOPE};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::video::Frame;

const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    /// 1 for plain training, 2 for the main/minor heads of reweighted training.
    pub out_heads: usize,
    pub base_width: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_heads: 1,
            base_width: 32,
            depth: 4,
            seed: 0,
        }
    }
}

/// Name and shape of one convolution: `(name, in, out, kernel)`.
pub type LayerShape = (String, usize, usize, usize);

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "in_channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.out_heads != 1 && self.out_heads != 2 {
            return Err(Error::InvalidConfig(format!(
                "out_heads must be 1 or 2, got {}",
                self.out_heads
            )));
        }
        if self.base_width == 0 {
            return Err(Error::InvalidConfig("base_width must be positive".into()));
        }
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(Error::InvalidConfig(format!(
                "depth must be in 1..={MAX_DEPTH}, got {}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.out_heads * self.in_channels
    }

    /// Spatial sizes fed to the network are padded to a multiple of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    fn level_width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Every convolution in canonical (storage and checkpoint) order.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let d = self.depth;
        let mut shapes = Vec::with_capacity(4 * d + 3);
        let mut cin = self.in_channels;
        for l in 0..d {
            let c = self.level_width(l);
            shapes.push((format!("enc{l}.conv1"), cin, c, 3));
            shapes.push((format!("enc{l}.conv2"), c, c, 3));
            cin = c;
        }
        let cb = self.level_width(d - 1);
        shapes.push(("bottleneck.conv1".into(), cin, cb, 3));
        shapes.push(("bottleneck.conv2".into(), cb, cb, 3));
        let mut below = cb;
        for l in (0..d).rev() {
            let c = self.level_width(l);
            shapes.push((format!("dec{l}.conv1"), below + c, c, 3));
            shapes.push((format!("dec{l}.conv2"), c, c, 3));
            below = c;
        }
        shapes.push(("head".into(), below, self.out_channels(), 1));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(_, cin, cout, k)| cout * cin * k * k + cout)
            .sum()
    }

    fn enc_index(&self, level: usize, conv: usize) -> usize {
        2 * level + conv
    }

    fn bottleneck_index(&self, conv: usize) -> usize {
        2 * self.depth + conv
    }

    fn dec_index(&self, level: usize, conv: usize) -> usize {
        2 * self.depth + 2 + 2 * (self.depth - 1 - level) + conv
    }

    fn head_index(&self) -> usize {
        4 * self.depth + 2
    }
}

/// All learnable weights of the generator. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<T> {
    config: GeneratorConfig,
    layers: Vec<Conv2d<T>>,
}

impl<T: Real> GeneratorParams<T> {
    /// All-zero parameters; the forward pass of such a network is zero.
    pub fn zeros(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(name, cin, cout, k)| Conv2d::zeros(name, cin, cout, k))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn from_layers(config: GeneratorConfig, layers: Vec<Conv2d<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::mismatch(
                format!("{} layers", shapes.len()),
                format!("{} layers", layers.len()),
            ));
        }
        for ((name, cin, cout, k), layer) in shapes.iter().zip(&layers) {
            let ok = &layer.name == name
                && layer.in_channels == *cin
                && layer.out_channels == *cout
                && layer.kernel == *k
                && layer.weight.len() == cout * cin * k * k
                && layer.bias.len() == *cout;
            if !ok {
                return Err(Error::mismatch(
                    format!("{name} {cin}->{cout} k{k}"),
                    format!(
                        "{} {}->{} k{}",
                        layer.name, layer.in_channels, layer.out_channels, layer.kernel
                    ),
                ));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Conv2d<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Conv2d<T>] {
        &mut self.layers
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            layers: self.layers.iter().map(Conv2d::zeros_like).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv2d::param_count).sum()
    }

    /// Flat view used by gradient checks: weights then bias, layer by layer.
    pub fn get(&self, mut index: usize) -> T {
        for l in &self.layers {
            if index < l.weight.len() {
                return l.weight[index];
            }
            index -= l.weight.len();
            if index < l.bias.len() {
                return l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set(&mut self, mut index: usize, value: T) {
        for l in &mut self.layers {
            if index < l.weight.len() {
                l.weight[index] = value;
                return;
            }
            index -= l.weight.len();
            if index < l.bias.len() {
                l.bias[index] = value;
                return;
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn iter_values(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn all_finite(&self) -> bool {
        self.iter_values().all(|v| v.is_finite())
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> GeneratorParams<U> {
        let conv = |v: &T| U::of(v.as_f64());
        GeneratorParams {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| Conv2d {
                    name: l.name.clone(),
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    kernel: l.kernel,
                    weight: l.weight.iter().map(conv).collect(),
                    bias: l.bias.iter().map(conv).collect(),
                })
                .collect(),
        }
    }
}

/// Initial bias of every head channel.
pub const HEAD_BIAS: f64 = 0.5;

/// Random initialization: zero-mean normal weights with He scaling for the
/// leaky-ReLU layers and unit-gain fan-in scaling for the linear head. Hidden
/// biases are zero and head biases start at mid-gray.
pub fn init_generator<T: Real>(config: &GeneratorConfig) -> Result<GeneratorParams<T>> {
    let mut params = GeneratorParams::zeros(*config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let head = config.head_index();
    let hidden_gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let fan_in = (layer.in_channels * layer.kernel * layer.kernel) as f64;
        let gain = if i == head {
            layer.bias.fill(T::of(HEAD_BIAS));
            1.0
        } else {
            hidden_gain
        };
        let normal = Normal::new(0.0, gain / fan_in.sqrt()).expect("positive std");
        for w in &mut layer.weight {
            *w = T::of(normal.sample(&mut rng));
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy)]
struct PadGeometry {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
    padded_height: usize,
    padded_width: usize,
}

impl PadGeometry {
    fn new(height: usize, width: usize, multiple: usize) -> Self {
        let padded_height = height.div_ceil(multiple) * multiple;
        let padded_width = width.div_ceil(multiple) * multiple;
        Self {
            top: (padded_height - height) / 2,
            left: (padded_width - width) / 2,
            height,
            width,
            padded_height,
            padded_width,
        }
    }

    fn is_identity(&self) -> bool {
        self.padded_height == self.height && self.padded_width == self.width
    }
}

struct LayerCache<T> {
    cols: Vec<T>,
    output: Tensor<T>,
}

struct ForwardCache<T> {
    geometry: PadGeometry,
    layers: Vec<Option<LayerCache<T>>>,
}

fn check_input<T: Real>(params: &GeneratorParams<T>, input: &Tensor<T>) -> Result<()> {
    if input.channels != params.config.in_channels {
        return Err(Error::mismatch(
            format!("{} input channels", params.config.in_channels),
            format!("{} input channels", input.channels),
        ));
    }
    Ok(())
}

fn run<T: Real>(params: &GeneratorParams<T>, input: &Tensor<T>, keep: bool) -> (Tensor<T>, ForwardCache<T>) {
    let cfg = &params.config;
    let d = cfg.depth;
    let geometry = PadGeometry::new(input.height, input.width, cfg.size_multiple());
    let mut cache = ForwardCache {
        geometry,
        layers: (0..params.layers.len()).map(|_| None).collect(),
    };

    let conv = |idx: usize, x: &Tensor<T>, activate: bool, cache: &mut ForwardCache<T>| -> Tensor<T> {
        let (mut out, cols) = params.layers[idx].forward(x);
        if activate {
            ops::leaky_relu_inplace(&mut out);
        }
        if keep {
            cache.layers[idx] = Some(LayerCache {
                cols,
                output: out.clone(),
            });
        }
        out
    };

    let mut x = if geometry.is_identity() {
        input.clone()
    } else {
        ops::reflect_pad(
            input,
            geometry.top,
            geometry.left,
            geometry.padded_height,
            geometry.padded_width,
        )
    };
    let mut skips = Vec::with_capacity(d);
    for l in 0..d {
        let a = conv(cfg.enc_index(l, 0), &x, true, &mut cache);
        let b = conv(cfg.enc_index(l, 1), &a, true, &mut cache);
        x = ops::avg_pool2(&b);
        skips.push(b);
    }
    let a = conv(cfg.bottleneck_index(0), &x, true, &mut cache);
    x = conv(cfg.bottleneck_index(1), &a, true, &mut cache);
    for l in (0..d).rev() {
        let up = ops::upsample2(&x);
        let cat = ops::concat_channels(&up, &skips[l]);
        let a = conv(cfg.dec_index(l, 0), &cat, true, &mut cache);
        x = conv(cfg.dec_index(l, 1), &a, true, &mut cache);
    }
    let out = conv(cfg.head_index(), &x, false, &mut cache);
    let out = if geometry.is_identity() {
        out
    } else {
        ops::crop(&out, geometry.top, geometry.left, geometry.height, geometry.width)
    };
    (out, cache)
}

fn backward<T: Real>(params: &GeneratorParams<T>, cache: &ForwardCache<T>, grad_out: Tensor<T>) -> GeneratorParams<T> {
    let cfg = &params.config;
    let d = cfg.depth;
    let geo = cache.geometry;
    let mut grads = params.zeros_like();

    let layer_back = |idx: usize, mut g: Tensor<T>, activated: bool, need_input: bool, grads: &mut GeneratorParams<T>| {
        let lc = cache.layers[idx].as_ref().expect("forward cache populated");
        if activated {
            ops::leaky_relu_backward_inplace(&mut g, &lc.output);
        }
        params.layers[idx].backward(&lc.cols, &g, &mut grads.layers[idx], need_input)
    };

    let g = if geo.is_identity() {
        grad_out
    } else {
        ops::uncrop(&grad_out, geo.top, geo.left, geo.padded_height, geo.padded_width)
    };
    let mut g = layer_back(cfg.head_index(), g, false, true, &mut grads).expect("input grad");
    let mut skip_grads: Vec<Option<Tensor<T>>> = (0..d).map(|_| None).collect();
    for l in 0..d {
        g = layer_back(cfg.dec_index(l, 1), g, true, true, &mut grads).expect("input grad");
        g = layer_back(cfg.dec_index(l, 0), g, true, true, &mut grads).expect("input grad");
        let up_channels = g.channels - cfg.level_width(l);
        let (g_up, g_skip) = ops::split_channels(&g, up_channels);
        skip_grads[l] = Some(g_skip);
        g = ops::upsample2_backward(&g_up);
    }
    g = layer_back(cfg.bottleneck_index(1), g, true, true, &mut grads).expect("input grad");
    g = layer_back(cfg.bottleneck_index(0), g, true, true, &mut grads).expect("input grad");
    for l in (0..d).rev() {
        let mut total = ops::avg_pool2_backward(&g);
        let skip = skip_grads[l].take().expect("skip grad");
        for (t, s) in total.data.iter_mut().zip(&skip.data) {
            *t += *s;
        }
        let gb = layer_back(cfg.enc_index(l, 1), total, true, true, &mut grads).expect("input grad");
        match layer_back(cfg.enc_index(l, 0), gb, true, l > 0, &mut grads) {
            Some(next) => g = next,
            None => break,
        }
    }
    grads
}

/// Raw network output on a planar input; `out_heads * in_channels` channels.
pub fn forward_tensor<T: Real>(params: &GeneratorParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    check_input(params, input)?;
    Ok(run(params, input, false).0)
}

/// Runs the generator on one frame. Returns the main head and, for two-head
/// networks, the minor head. Values are not clamped.
pub fn forward<T: Real>(params: &GeneratorParams<T>, frame: &Frame) -> Result<(Frame, Option<Frame>)> {
    let out = forward_tensor(params, &Tensor::from_frame(frame))?;
    Ok(split_heads(&out, params.config.in_channels))
}

pub(crate) fn split_heads<T: Real>(out: &Tensor<T>, channels: usize) -> (Frame, Option<Frame>) {
    let main = out.to_frame(0, channels);
    let minor = (out.channels > channels).then(|| out.to_frame(channels, channels));
    (main, minor)
}

/// Loss value and `d loss / d params`.
#[derive(Debug, Clone)]
pub struct LossGradient<T> {
    pub loss: f64,
    pub grads: GeneratorParams<T>,
}

/// Differentiates `loss_fn(forward(input))` with respect to every parameter.
///
/// `loss_fn` receives the raw output tensor and returns the loss together
/// with its gradient with respect to that output.
pub fn loss_gradient_tensor<T, F>(params: &GeneratorParams<T>, input: &Tensor<T>, loss_fn: F) -> Result<LossGradient<T>>
where
    T: Real,
    F: FnOnce(&Tensor<T>) -> (f64, Tensor<T>),
{
    check_input(params, input)?;
    let (out, cache) = run(params, input, true);
    let (loss, grad_out) = loss_fn(&out);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, frame: 0 });
    }
    assert!(grad_out.same_shape(&out), "loss gradient must match output shape");
    let grads = backward(params, &cache, grad_out);
    Ok(LossGradient { loss, grads })
}

pub fn loss_gradient<T, F>(params: &GeneratorParams<T>, frame: &Frame, loss_fn: F) -> Result<LossGradient<T>>
where
    T: Real,
    F: FnOnce(&Tensor<T>) -> (f64, Tensor<T>),
{
    loss_gradient_tensor(params, &Tensor::from_frame(frame), loss_fn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            in_channels: 3,
            out_heads: 2,
            base_width: 4,
            depth: 2,
            seed: 11,
        }
    }

    /// Per-layer tally written out by hand for the default-width two-head network.
    #[test]
    fn param_count_matches_layer_tally() {
        let cfg = GeneratorConfig {
            out_heads: 2,
            ..GeneratorConfig::default()
        };
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let expected = conv(3, 32, 3)
            + conv(32, 32, 3)
            + conv(32, 64, 3)
            + conv(64, 64, 3)
            + conv(64, 128, 3)
            + conv(128, 128, 3)
            + conv(128, 256, 3)
            + conv(256, 256, 3)
            + conv(256, 256, 3)
            + conv(256, 256, 3)
            + conv(512, 256, 3)
            + conv(256, 256, 3)
            + conv(384, 128, 3)
            + conv(128, 128, 3)
            + conv(192, 64, 3)
            + conv(64, 64, 3)
            + conv(96, 32, 3)
            + conv(32, 32, 3)
            + conv(32, 6, 1);
        assert_eq!(expected, 4_897_190);
        assert_eq!(cfg.param_count(), expected);
        let params = init_generator::<f32>(&cfg).unwrap();
        assert_eq!(params.param_count(), expected);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = small_cfg();
        let a = init_generator::<f32>(&cfg).unwrap();
        let b = init_generator::<f32>(&cfg).unwrap();
        assert_eq!(a, b);
        let c = init_generator::<f32>(&GeneratorConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
        assert!(a.all_finite());
        let (head, hidden) = a.layers().split_last().unwrap();
        assert!(hidden.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(head.bias.iter().all(|&b| b == HEAD_BIAS as f32));
    }

    #[test]
    fn init_rejects_invalid_configs() {
        for cfg in [
            GeneratorConfig { in_channels: 2, ..small_cfg() },
            GeneratorConfig { out_heads: 3, ..small_cfg() },
            GeneratorConfig { base_width: 0, ..small_cfg() },
            GeneratorConfig { depth: 0, ..small_cfg() },
        ] {
            assert!(init_generator::<f32>(&cfg).is_err());
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let params = GeneratorParams::<f32>::zeros(small_cfg()).unwrap();
        let f = Frame::filled(8, 8, 3, 0.7).unwrap();
        let (main, minor) = forward(&params, &f).unwrap();
        assert!(main.data().iter().all(|&v| v == 0.0));
        assert!(minor.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_matches_input_including_padding() {
        let params = init_generator::<f32>(&small_cfg()).unwrap();
        for (h, w) in [(8, 8), (7, 10), (5, 3), (1, 1)] {
            let f = Frame::filled(h, w, 3, 0.3).unwrap();
            let (main, minor) = forward(&params, &f).unwrap();
            assert_eq!((main.height(), main.width(), main.channels()), (h, w, 3));
            assert_eq!(minor.unwrap().shape(), main.shape());
        }
        let gray = Frame::filled(8, 8, 1, 0.3).unwrap();
        assert!(forward(&params, &gray).is_err());
    }

    #[test]
    fn bottleneck_is_four_by_four_at_depth_four() {
        let cfg = GeneratorConfig {
            base_width: 2,
            ..GeneratorConfig::default()
        };
        let params = init_generator::<f32>(&cfg).unwrap();
        let input = Tensor::from_frame(&Frame::filled(64, 64, 3, 0.5).unwrap());
        let (out, cache) = run(&params, &input, true);
        let bottleneck = cache.layers[cfg.bottleneck_index(1)].as_ref().unwrap();
        assert_eq!((bottleneck.output.height, bottleneck.output.width), (4, 4));
        assert_eq!((out.height, out.width), (64, 64));
    }

    #[test]
    fn forward_is_pure() {
        let params = init_generator::<f32>(&small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Frame::from_fn(8, 8, 3, |_, _, _| rng.random()).unwrap();
        assert_eq!(forward(&params, &f).unwrap(), forward(&params, &f).unwrap());
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let params = init_generator::<f64>(&small_cfg()).unwrap();
        let f = Frame::filled(8, 8, 3, 0.4).unwrap();
        let lg = loss_gradient(&params, &f, |out| {
            (3.0, Tensor::zeros(out.channels, out.height, out.width))
        })
        .unwrap();
        assert_eq!(lg.loss, 3.0);
        assert!(lg.grads.iter_values().all(|v| v == 0.0));
    }

    #[test]
    fn sum_loss_gradient_on_head_bias_is_pixel_count() {
        let cfg = small_cfg();
        let params = init_generator::<f64>(&cfg).unwrap();
        let f = Frame::filled(8, 6, 3, 0.4).unwrap();
        let lg = loss_gradient(&params, &f, |out| {
            let s = out.data.iter().sum();
            (s, Tensor::from_vec(out.channels, out.height, out.width, vec![1.0; out.len()]))
        })
        .unwrap();
        let head = &lg.grads.layers()[cfg.head_index()];
        assert!(head.bias.iter().all(|&b| (b - 48.0).abs() < 1e-9));
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let params = init_generator::<f64>(&small_cfg()).unwrap();
        let f = Frame::filled(8, 8, 3, 0.4).unwrap();
        let r = loss_gradient(&params, &f, |out| {
            (f64::NAN, Tensor::zeros(out.channels, out.height, out.width))
        });
        assert!(matches!(r, Err(Error::NonFiniteLoss { .. })));
    }

    /// The smallest network the config allows: one level, single-pixel width.
    /// Every gradient component is checked against central differences on a
    /// 3x3 input with the L1 loss.
    #[test]
    fn tiny_network_gradient_matches_finite_differences() {
        let cfg = GeneratorConfig {
            in_channels: 1,
            out_heads: 1,
            base_width: 1,
            depth: 1,
            seed: 5,
        };
        let params = init_generator::<f64>(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = Frame::from_fn(3, 3, 1, |_, _, _| rng.random()).unwrap();
        let target: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l1 = |out: &Tensor<f64>| -> (f64, Tensor<f64>) {
            let n = out.len() as f64;
            let loss = out.data.iter().zip(&target).map(|(o, t)| (o - t).abs()).sum::<f64>() / n;
            let g = out.data.iter().zip(&target).map(|(o, t)| (o - t).signum() / n).collect();
            (loss, Tensor::from_vec(out.channels, out.height, out.width, g))
        };
        let lg = loss_gradient(&params, &input, l1).unwrap();
        let x = Tensor::from_frame(&input);
        let eps = 1e-4;
        for i in 0..params.param_count() {
            let mut p = params.clone();
            p.set(i, params.get(i) + eps);
            let lp = l1(&forward_tensor(&p, &x).unwrap()).0;
            p.set(i, params.get(i) - eps);
            let lm = l1(&forward_tensor(&p, &x).unwrap()).0;
            let fd = (lp - lm) / (2.0 * eps);
            let an = lg.grads.get(i);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-3 || (fd - an).abs() < 1e-9, "param {i}: fd {fd} analytic {an}");
        }
    }
}
