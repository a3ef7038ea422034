//! Eight-frame toy experiment: track how far apart the generator's outputs
//! drift while it fits flickering targets.
//!
//! Inputs are one small texture with a little independent noise per frame,
//! the ground truth equals the input, and the targets are either unimodal
//! flicker of the ground truth or an alternating two-mode rendering of it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GeneratorConfig, Tensor};
use crate::synth::{
    alternating_pattern, apply_multimodal_flicker, apply_unimodal_flicker, default_modes, make_moving_clip, render_mode,
    SynthSpec,
};
use crate::train::{infer_tensors, TrainConfig, Trainer};
use crate::video::{frame_distance_l1, Frame, VideoClip};

pub const TOY_FRAMES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyMode {
    Unimodal,
    Multimodal,
}

impl std::str::FromStr for ToyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unimodal" => Ok(ToyMode::Unimodal),
            "multimodal" => Ok(ToyMode::Multimodal),
            other => Err(Error::InvalidConfig(format!("unknown toy mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub mode: ToyMode,
    pub iterations: usize,
    pub record_every: usize,
    pub irt: bool,
    /// Side length of the square RGB frames.
    pub size: usize,
    /// Flicker scale of unimodal targets.
    pub sigma: f64,
    /// Per-frame input noise standard deviation.
    pub input_noise: f64,
    pub learning_rate: f64,
    pub base_width: usize,
    pub depth: usize,
    pub delta: f64,
    pub anchor_iterations: Option<usize>,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            mode: ToyMode::Unimodal,
            iterations: 1000,
            record_every: 100,
            irt: false,
            size: 16,
            sigma: 0.3,
            input_noise: 0.1,
            learning_rate: 1e-3,
            base_width: 32,
            depth: 2,
            delta: 0.02,
            anchor_iterations: None,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        if self.size == 0 {
            return Err(Error::InvalidConfig("size must be positive".into()));
        }
        if !(self.sigma >= 0.0) || !(self.input_noise >= 0.0) {
            return Err(Error::InvalidConfig("noise scales must be non-negative".into()));
        }
        Ok(())
    }

    fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            in_channels: 3,
            out_heads: if self.irt { 2 } else { 1 },
            base_width: self.base_width,
            depth: self.depth,
            seed: self.seed,
        }
    }

    fn training(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.iterations.div_ceil(TOY_FRAMES).max(1),
            irt_enabled: self.irt,
            delta: self.delta,
            anchor_iterations: self.anchor_iterations,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

/// Distances among the main outputs at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyRecord {
    pub iteration: usize,
    /// `pairwise[i][j]`: frame-mean L1 between outputs `i` and `j`.
    pub pairwise: Vec<Vec<f64>>,
    pub to_processed: Vec<f64>,
    pub to_ground_truth: Vec<f64>,
    pub to_mode_a: Option<Vec<f64>>,
    pub to_mode_b: Option<Vec<f64>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean over unordered pairs `i < j`.
pub fn mean_pairwise(m: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, row) in m.iter().enumerate() {
        for &d in &row[i + 1..] {
            sum += d;
            n += 1;
        }
    }
    sum / n as f64
}

fn pairwise_matrix(frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
    let n = frames.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = frame_distance_l1(&frames[i], &frames[j])?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

fn distances(a: &VideoClip, b: &VideoClip) -> Result<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| frame_distance_l1(x, y)).collect()
}

impl ToyRecord {
    pub fn mean_pairwise_output(&self) -> f64 {
        mean_pairwise(&self.pairwise)
    }

    pub fn mean_to_processed(&self) -> f64 {
        mean(&self.to_processed)
    }

    pub fn mean_to_ground_truth(&self) -> f64 {
        mean(&self.to_ground_truth)
    }
}

#[derive(Debug, Clone)]
pub struct ToyTrace {
    pub config: ToyConfig,
    pub records: Vec<ToyRecord>,
    /// Pairwise distances among the processed targets.
    pub processed_pairwise: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ToyTrace {
    pub fn processed_mean_pairwise(&self) -> f64 {
        mean_pairwise(&self.processed_pairwise)
    }

    pub fn to_csv(&self) -> String {
        let modes = self.config.mode == ToyMode::Multimodal;
        let mut out = String::from("iteration,mean_pairwise_output,mean_output_to_processed,mean_output_to_ground_truth");
        if modes {
            out.push_str(",mean_output_to_mode_a,mean_output_to_mode_b");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{}",
                r.iteration,
                r.mean_pairwise_output(),
                r.mean_to_processed(),
                r.mean_to_ground_truth()
            );
            if modes {
                let a = r.to_mode_a.as_deref().map(mean).unwrap_or(f64::NAN);
                let b = r.to_mode_b.as_deref().map(mean).unwrap_or(f64::NAN);
                let _ = write!(out, ",{a},{b}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Inputs and ground truth of the toy: one texture plus per-frame noise.
fn toy_inputs(cfg: &ToyConfig) -> Result<VideoClip> {
    let (base, _) = make_moving_clip(2, cfg.size, cfg.size, 0.0, 0.0, cfg.seed)?;
    let base = base.frame(0).clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let noise = Normal::new(0.0f32, cfg.input_noise as f32).expect("finite noise");
    VideoClip::new(
        (0..TOY_FRAMES)
            .map(|_| {
                let data = base
                    .data()
                    .iter()
                    .map(|&v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect();
                Frame::new(cfg.size, cfg.size, 3, data)
            })
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Trains on the toy clip and records output distances every
/// `record_every` iterations, starting at iteration 0.
pub fn toy_experiment(cfg: &ToyConfig) -> Result<ToyTrace> {
    cfg.validate()?;
    let clean = toy_inputs(cfg)?;
    let modes = default_modes();
    let (processed, labels, renditions) = match cfg.mode {
        ToyMode::Unimodal => (
            apply_unimodal_flicker(&clean, cfg.sigma, cfg.seed.wrapping_add(2))?,
            vec![0; TOY_FRAMES],
            None,
        ),
        ToyMode::Multimodal => {
            let spec = SynthSpec::multimodal(modes.clone(), alternating_pattern(TOY_FRAMES), cfg.seed);
            let (p, labels) = apply_multimodal_flicker(&clean, &spec)?;
            let a = render_mode(&clean, &modes[0])?;
            let b = render_mode(&clean, &modes[1])?;
            (p, labels, Some((a, b)))
        }
    };

    let net_cfg = cfg.generator();
    let train_cfg = cfg.training();
    let inputs: Vec<Tensor<f32>> = clean.iter().map(Tensor::from_frame).collect();
    let targets: Vec<Tensor<f32>> = processed.iter().map(Tensor::from_frame).collect();
    let mut trainer = Trainer::new(&inputs, &targets, &net_cfg, &train_cfg)?;

    let mut records = Vec::with_capacity(cfg.iterations / cfg.record_every + 1);
    for iteration in 0..=cfg.iterations {
        if iteration % cfg.record_every == 0 {
            let outputs = infer_tensors(trainer.params(), &inputs)?.main;
            records.push(ToyRecord {
                iteration,
                pairwise: pairwise_matrix(outputs.frames())?,
                to_processed: distances(&outputs, &processed)?,
                to_ground_truth: distances(&outputs, &clean)?,
                to_mode_a: renditions.as_ref().map(|(a, _)| distances(&outputs, a)).transpose()?,
                to_mode_b: renditions.as_ref().map(|(_, b)| distances(&outputs, b)).transpose()?,
            });
        }
        if iteration < cfg.iterations {
            trainer.step(iteration, iteration % TOY_FRAMES, iteration / TOY_FRAMES + 1)?;
        }
    }
    Ok(ToyTrace {
        config: cfg.clone(),
        records,
        processed_pairwise: pairwise_matrix(processed.frames())?,
        labels,
    })
}
