//! Single-video training loop.
//!
//! The generator is fitted to map every input frame to its processed frame,
//! one frame pair per iteration, with a plain data term and no temporal
//! regularization. Consistency comes from stopping early: coherent content is
//! fitted long before per-frame flicker is.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flow::WarpCorrespondences;
use crate::irt::{anchored_schedule, confidence_planar, irt_loss_planar};
use crate::metrics::{e_warp, f_data, MetricsTrace, TraceRecord};
use crate::nn::generator::split_heads;
use crate::nn::{forward_tensor, init_generator, loss_gradient_tensor, GeneratorConfig, GeneratorParams, Tensor};
use crate::video::{Frame, FrameShape, VideoClip};

/// Frame pairs consumed per parameter update.
pub const BATCH_SIZE: usize = 1;

/// A differentiable distance between an output and a target frame, both in
/// planar layout described by `shape`. Returns the value and `d/d output`.
pub trait Distance: Send + Sync {
    fn value_and_grad(&self, output: &[f32], target: &[f32], shape: FrameShape) -> (f64, Vec<f32>);
}

#[derive(Clone, Default)]
pub enum DataTerm {
    #[default]
    L1,
    L2,
    /// Caller-supplied distance, e.g. a perceptual feature loss.
    Custom(Arc<dyn Distance>),
}

impl DataTerm {
    pub fn name(&self) -> &'static str {
        match self {
            DataTerm::L1 => "l1",
            DataTerm::L2 => "l2",
            DataTerm::Custom(_) => "custom",
        }
    }
}

impl fmt::Debug for DataTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartialEq for DataTerm {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (DataTerm::L1, DataTerm::L1) | (DataTerm::L2, DataTerm::L2) => true,
            (DataTerm::Custom(a), DataTerm::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl std::str::FromStr for DataTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(DataTerm::L1),
            "l2" => Ok(DataTerm::L2),
            other => Err(Error::InvalidConfig(format!("unknown data term {other:?}"))),
        }
    }
}

impl Serialize for DataTerm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DataTerm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Value and gradient of a data term over two equally long buffers.
pub(crate) fn data_term_grad(kind: &DataTerm, output: &[f32], target: &[f32], shape: FrameShape) -> (f64, Vec<f32>) {
    debug_assert_eq!(output.len(), target.len());
    let n = output.len() as f64;
    match kind {
        DataTerm::L1 => {
            let mut sum = 0.0f64;
            let scale = (1.0 / n) as f32;
            let grad = output
                .iter()
                .zip(target)
                .map(|(&o, &t)| {
                    let d = o - t;
                    sum += (d as f64).abs();
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                })
                .collect();
            (sum / n, grad)
        }
        DataTerm::L2 => {
            let mut sum = 0.0f64;
            let scale = (2.0 / n) as f32;
            let grad = output
                .iter()
                .zip(target)
                .map(|(&o, &t)| {
                    let d = o - t;
                    sum += (d as f64) * (d as f64);
                    scale * d
                })
                .collect();
            (sum / n, grad)
        }
        DataTerm::Custom(f) => f.value_and_grad(output, target, shape),
    }
}

/// L1 is the mean absolute difference, L2 the mean squared difference.
pub fn data_term(output: &Frame, target: &Frame, kind: &DataTerm) -> Result<f64> {
    output.ensure_same_shape(target)?;
    let o = Tensor::<f32>::from_frame(output);
    let t = Tensor::<f32>::from_frame(target);
    Ok(data_term_grad(kind, &o.data, &t.data, output.shape()).0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameOrder {
    #[default]
    Sequential,
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub irt_enabled: bool,
    /// Confidence threshold of reweighted training.
    pub delta: f64,
    /// Anchoring iterations at the start of reweighted training; `None`
    /// means one epoch's worth (`T`).
    pub anchor_iterations: Option<usize>,
    pub anchor_frame: usize,
    pub data_term: DataTerm,
    pub seed: u64,
    pub frame_order: FrameOrder,
    /// Keep full-clip outputs every this many epochs (0: final epoch only).
    pub snapshot_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 25,
            irt_enabled: false,
            delta: 0.02,
            anchor_iterations: None,
            anchor_frame: 0,
            data_term: DataTerm::L1,
            seed: 0,
            frame_order: FrameOrder::Sequential,
            snapshot_every: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig("delta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        BATCH_SIZE
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &GeneratorParams<f32>, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = params.layers().iter().map(|l| l.param_count()).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut GeneratorParams<f32>, grads: &GeneratorParams<f32>) {
        self.step += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let c1 = (1.0 - self.beta1.powi(self.step)) as f32;
        let c2 = (1.0 - self.beta2.powi(self.step)) as f32;
        let lr = self.lr as f32;
        let eps = self.eps as f32;
        for (((layer, grad), m), v) in params
            .layers_mut()
            .iter_mut()
            .zip(grads.layers())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let values = layer.weight.iter_mut().chain(layer.bias.iter_mut());
            let gs = grad.weight.iter().chain(grad.bias.iter());
            for (((p, &g), m), v) in values.zip(gs).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Clamped full-clip outputs of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub main: VideoClip,
    pub minor: Option<VideoClip>,
}

/// Runs the generator on every frame and clamps the result to `[0, 1]`.
pub fn infer_clip(params: &GeneratorParams<f32>, input: &VideoClip) -> Result<Inference> {
    let tensors: Vec<Tensor<f32>> = input.iter().map(Tensor::from_frame).collect();
    infer_tensors(params, &tensors)
}

pub(crate) fn infer_tensors(params: &GeneratorParams<f32>, inputs: &[Tensor<f32>]) -> Result<Inference> {
    let c = params.config().in_channels;
    let mut main = Vec::with_capacity(inputs.len());
    let mut minor = Vec::new();
    for x in inputs {
        let out = forward_tensor(params, x)?;
        let (m, n) = split_heads(&out, c);
        main.push(m.clamped());
        if let Some(n) = n {
            minor.push(n.clamped());
        }
    }
    Ok(Inference {
        main: VideoClip::new(main)?,
        minor: if minor.is_empty() {
            None
        } else {
            Some(VideoClip::new(minor)?)
        },
    })
}

/// Outputs kept at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub outputs: Inference,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: GeneratorParams<f32>,
    pub snapshots: Vec<Snapshot>,
    pub trace: MetricsTrace,
    /// Training frame pairs read in each epoch.
    pub pairs_read: Vec<usize>,
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainResult {
    pub fn snapshot(&self, epoch: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.epoch == epoch)
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("final epoch is always kept")
    }
}

/// What the per-epoch observer sees.
pub struct EpochState<'a> {
    pub epoch: usize,
    pub params: &'a GeneratorParams<f32>,
    pub outputs: &'a Inference,
    pub record: &'a TraceRecord,
    pub is_snapshot: bool,
}

/// One-pair-per-iteration optimizer state shared by the clip trainer and the toy.
pub(crate) struct Trainer<'a> {
    inputs: &'a [Tensor<f32>],
    targets: &'a [Tensor<f32>],
    cfg: &'a TrainConfig,
    shape: FrameShape,
    anchor_iterations: usize,
    params: GeneratorParams<f32>,
    adam: Adam,
    /// Training pairs read so far.
    pub reads: usize,
}

impl<'a> Trainer<'a> {
    pub(crate) fn new(
        inputs: &'a [Tensor<f32>],
        targets: &'a [Tensor<f32>],
        net_cfg: &GeneratorConfig,
        cfg: &'a TrainConfig,
    ) -> Result<Self> {
        let first = &inputs[0];
        let shape = FrameShape::new(first.height, first.width, first.channels);
        let params = init_generator::<f32>(net_cfg)?;
        let adam = Adam::new(&params, cfg);
        let anchor_iterations = if cfg.irt_enabled {
            cfg.anchor_iterations.unwrap_or(inputs.len())
        } else {
            0
        };
        Ok(Self {
            inputs,
            targets,
            cfg,
            shape,
            anchor_iterations,
            params,
            adam,
            reads: 0,
        })
    }

    pub(crate) fn params(&self) -> &GeneratorParams<f32> {
        &self.params
    }

    pub(crate) fn into_params(self) -> GeneratorParams<f32> {
        self.params
    }

    fn read(&mut self, t: usize) -> (&'a Tensor<f32>, &'a Tensor<f32>) {
        self.reads += 1;
        (&self.inputs[t], &self.targets[t])
    }

    /// One Adam update on one frame pair; `epoch` only labels errors.
    pub(crate) fn step(&mut self, iteration: usize, normal_frame: usize, epoch: usize) -> Result<f64> {
        let cfg = self.cfg;
        let shape = self.shape;
        let channels = shape.channels;
        let plane = shape.pixels();
        let step = anchored_schedule(iteration, self.anchor_iterations, cfg.anchor_frame, normal_frame);
        let (x, target) = self.read(step.frame);
        let non_finite = || Error::NonFiniteLoss {
            epoch,
            frame: step.frame,
        };
        let lg = loss_gradient_tensor(&self.params, x, |out| {
            if cfg.irt_enabled {
                let main = out.channel_range(0, channels);
                let minor = out.channel_range(channels, channels);
                let conf = if step.anchored {
                    vec![1u8; plane]
                } else {
                    confidence_planar(main, minor, &target.data, channels, plane, cfg.delta)
                };
                let (loss, g_main, g_minor) = irt_loss_planar(main, minor, &target.data, &conf, shape, &cfg.data_term);
                let mut grad = Tensor::zeros(out.channels, out.height, out.width);
                grad.channel_range_mut(0, channels).copy_from_slice(&g_main);
                grad.channel_range_mut(channels, channels).copy_from_slice(&g_minor);
                (loss, grad)
            } else {
                let (loss, g) = data_term_grad(&cfg.data_term, &out.data, &target.data, shape);
                (loss, Tensor::from_vec(out.channels, out.height, out.width, g))
            }
        })
        .map_err(|e| match e {
            Error::NonFiniteLoss { .. } => non_finite(),
            other => other,
        })?;
        if !lg.grads.all_finite() {
            return Err(non_finite());
        }
        self.adam.update(&mut self.params, &lg.grads);
        Ok(lg.loss)
    }
}

fn check_inputs(input: &VideoClip, processed: &VideoClip, net: &GeneratorConfig, cfg: &TrainConfig) -> Result<()> {
    input.ensure_compatible(processed)?;
    net.validate()?;
    cfg.validate()?;
    if input.shape().channels != net.in_channels {
        return Err(Error::mismatch(
            format!("{} channels", net.in_channels),
            format!("{} channels", input.shape().channels),
        ));
    }
    let heads = if cfg.irt_enabled { 2 } else { 1 };
    if net.out_heads != heads {
        return Err(Error::InvalidConfig(format!(
            "{} training needs {heads} output head(s), generator has {}",
            if cfg.irt_enabled { "reweighted" } else { "plain" },
            net.out_heads
        )));
    }
    if cfg.anchor_frame >= input.len() {
        return Err(Error::InvalidConfig(format!(
            "anchor frame {} outside clip of {} frames",
            cfg.anchor_frame,
            input.len()
        )));
    }
    Ok(())
}

pub fn train_dvp(
    input: &VideoClip,
    processed: &VideoClip,
    net_cfg: &GeneratorConfig,
    train_cfg: &TrainConfig,
    flows: Option<&WarpCorrespondences>,
) -> Result<TrainResult> {
    train_dvp_observed(input, processed, net_cfg, train_cfg, flows, |_| Ok(()))
}

/// [`train_dvp`] with a callback after every epoch's evaluation.
pub fn train_dvp_observed(
    input: &VideoClip,
    processed: &VideoClip,
    net_cfg: &GeneratorConfig,
    train_cfg: &TrainConfig,
    flows: Option<&WarpCorrespondences>,
    mut observer: impl FnMut(&EpochState<'_>) -> Result<()>,
) -> Result<TrainResult> {
    check_inputs(input, processed, net_cfg, train_cfg)?;
    let started = Instant::now();
    let frames = input.len();

    let inputs: Vec<Tensor<f32>> = input.iter().map(Tensor::from_frame).collect();
    let targets: Vec<Tensor<f32>> = processed.iter().map(Tensor::from_frame).collect();
    let mut trainer = Trainer::new(&inputs, &targets, net_cfg, train_cfg)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);

    let mut result = TrainResult {
        params: trainer.params().clone(),
        snapshots: Vec::new(),
        trace: MetricsTrace::new(),
        pairs_read: Vec::with_capacity(train_cfg.epochs),
        epoch_loss: Vec::with_capacity(train_cfg.epochs),
    };

    let mut order: Vec<usize> = (0..frames).collect();
    for epoch in 1..=train_cfg.epochs {
        if train_cfg.frame_order == FrameOrder::Shuffled {
            order.sort_unstable();
            order.shuffle(&mut order_rng);
        }
        trainer.reads = 0;
        let mut loss_sum = 0.0;
        for (k, &normal) in order.iter().enumerate() {
            loss_sum += trainer.step((epoch - 1) * frames + k, normal, epoch)?;
        }
        result.pairs_read.push(trainer.reads);
        result.epoch_loss.push(loss_sum / frames as f64);

        let outputs = infer_tensors(trainer.params(), &inputs)?;
        let record = TraceRecord {
            epoch,
            f_data: f_data(processed, &outputs.main)?,
            e_warp: flows.map(|c| e_warp(&outputs.main, c)).transpose()?,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        let is_snapshot = epoch == train_cfg.epochs
            || (train_cfg.snapshot_every > 0 && epoch % train_cfg.snapshot_every == 0);
        observer(&EpochState {
            epoch,
            params: trainer.params(),
            outputs: &outputs,
            record: &record,
            is_snapshot,
        })?;
        result.trace.push(record)?;
        if is_snapshot {
            result.snapshots.push(Snapshot { epoch, outputs });
        }
    }
    result.params = trainer.into_params();
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopPolicy {
    /// A fixed epoch, as used for every video of a task.
    Fixed(usize),
    /// Maximize `F_norm - lambda * E_norm`, both min-max normalized over the
    /// trace. An analysis aid only.
    Knee { lambda: f64 },
}

impl Default for StopPolicy {
    fn default() -> Self {
        StopPolicy::Fixed(25)
    }
}

/// Picks the epoch to stop at. A fixed epoch beyond the trace maps to its last epoch.
pub fn select_stop_epoch(trace: &MetricsTrace, policy: StopPolicy) -> Result<usize> {
    let records = trace.records();
    let last = records.last().ok_or(Error::EmptyTrace)?;
    match policy {
        StopPolicy::Fixed(epoch) => Ok(epoch.min(last.epoch)),
        StopPolicy::Knee { lambda } => {
            let normalize = |values: Vec<f64>| -> Vec<f64> {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = hi - lo;
                values
                    .iter()
                    .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
                    .collect()
            };
            let f = normalize(records.iter().map(|r| r.f_data).collect());
            let e = normalize(records.iter().map(|r| r.e_warp.unwrap_or(0.0)).collect());
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, (fv, ev)) in f.iter().zip(&e).enumerate() {
                let score = fv - lambda * ev;
                if score > best_score {
                    best = i;
                    best_score = score;
                }
            }
            Ok(records[best].epoch)
        }
    }
}
