//! Synthetic clips with known ground truth: a patch moving over a static
//! background with exact flows, unimodal flicker and multimodal mode switching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ClipFlows, FlowField, FlowPair};
use crate::video::{Frame, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Unimodal,
    Multimodal,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unimodal" => Ok(SynthKind::Unimodal),
            "multimodal" => Ok(SynthKind::Multimodal),
            other => Err(Error::InvalidConfig(format!("unknown kind {other:?}"))),
        }
    }
}

/// Per-mode color transform `p = gain * i + bias` on RGB vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorTransform {
    pub gain: [[f32; 3]; 3],
    pub bias: [f32; 3],
}

impl ColorTransform {
    pub fn identity() -> Self {
        Self {
            gain: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            bias: [0.0; 3],
        }
    }

    /// `s * I + bias`.
    pub fn scaled(s: f32, bias: [f32; 3]) -> Self {
        Self {
            gain: [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]],
            bias,
        }
    }

    /// Unclamped transform of one pixel. Gray pixels use the first row's
    /// sum as gain and the first bias entry.
    pub fn apply_pixel(&self, px: &[f32], out: &mut [f32]) {
        match px.len() {
            1 => out[0] = self.gain[0].iter().sum::<f32>() * px[0] + self.bias[0],
            _ => {
                for (o, (row, b)) in out.iter_mut().zip(self.gain.iter().zip(&self.bias)) {
                    *o = row[0] * px[0] + row[1] * px[1] + row[2] * px[2] + b;
                }
            }
        }
    }

    /// Clamped transform of a frame.
    pub fn apply(&self, frame: &Frame) -> Frame {
        let c = frame.channels();
        let mut data = vec![0.0f32; frame.data().len()];
        for (src, dst) in frame.data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
            self.apply_pixel(src, dst);
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Frame::new(frame.height(), frame.width(), c, data).expect("same shape")
    }
}

/// The two default modes; their gap on any clip is 0.4.
pub fn default_modes() -> Vec<ColorTransform> {
    vec![
        ColorTransform::scaled(0.6, [0.4, 0.0, 0.4]),
        ColorTransform::scaled(0.6, [0.0, 0.4, 0.0]),
    ]
}

/// `0, 1, 0, 1, ...` of length `frames`.
pub fn alternating_pattern(frames: usize) -> Vec<usize> {
    (0..frames).map(|t| t % 2).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub sigma: f64,
    pub modes: Vec<ColorTransform>,
    pub switch_pattern: Vec<usize>,
    /// Scalar gain jitter `U(-jitter, jitter)` added on top of each mode.
    pub jitter: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn unimodal(sigma: f64, seed: u64) -> Self {
        Self {
            kind: SynthKind::Unimodal,
            sigma,
            modes: Vec::new(),
            switch_pattern: Vec::new(),
            jitter: 0.0,
            seed,
        }
    }

    pub fn multimodal(modes: Vec<ColorTransform>, switch_pattern: Vec<usize>, seed: u64) -> Self {
        Self {
            kind: SynthKind::Multimodal,
            sigma: 0.0,
            modes,
            switch_pattern,
            jitter: 0.0,
            seed,
        }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if !(self.sigma >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::InvalidConfig("sigma and jitter must be non-negative".into()));
        }
        if self.kind == SynthKind::Multimodal {
            if self.modes.is_empty() {
                return Err(Error::InvalidConfig("at least one mode is required".into()));
            }
            if self.switch_pattern.len() != frames {
                return Err(Error::InvalidConfig(format!(
                    "switch pattern has {} entries for {frames} frames",
                    self.switch_pattern.len()
                )));
            }
            if let Some(&m) = self.switch_pattern.iter().find(|&&m| m >= self.modes.len()) {
                return Err(Error::InvalidConfig(format!(
                    "mode index {m} out of range for {} modes",
                    self.modes.len()
                )));
            }
            let finite = self
                .modes
                .iter()
                .all(|m| m.gain.iter().flatten().chain(&m.bias).all(|v| v.is_finite()));
            if !finite {
                return Err(Error::InvalidConfig("mode transforms must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn apply(&self, clip: &VideoClip) -> Result<(VideoClip, Vec<usize>)> {
        match self.kind {
            SynthKind::Unimodal => Ok((apply_unimodal_flicker(clip, self.sigma, self.seed)?, vec![0; clip.len()])),
            SynthKind::Multimodal => apply_multimodal_flicker(clip, self),
        }
    }
}

/// Smooth random texture: a random base color plus plane waves per channel.
struct Texture {
    base: Vec<f32>,
    waves: Vec<[Wave; 6]>,
}

#[derive(Clone, Copy)]
struct Wave {
    fx: f32,
    fy: f32,
    phase: f32,
    amplitude: f32,
}

impl Texture {
    /// `contrast` scales the wave amplitudes.
    fn new(channels: usize, contrast: f32, rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..channels)
            .map(|_| {
                std::array::from_fn(|k| {
                    let freq = 0.08 + 0.1 * k as f32 + rng.random_range(0.0..0.05);
                    let angle = rng.random_range(0.0..std::f32::consts::TAU);
                    Wave {
                        fx: freq * angle.cos(),
                        fy: freq * angle.sin(),
                        phase: rng.random_range(0.0..std::f32::consts::TAU),
                        amplitude: contrast * rng.random_range(0.04..0.08),
                    }
                })
            })
            .collect();
        let base = (0..channels).map(|_| rng.random_range(0.3..0.7)).collect();
        Self { base, waves }
    }

    fn sample(&self, y: f32, x: f32, c: usize) -> f32 {
        let v: f32 = self.waves[c]
            .iter()
            .map(|w| w.amplitude * (w.fx * x + w.fy * y + w.phase).sin())
            .sum();
        (self.base[c] + v).clamp(0.0, 1.0)
    }
}

/// Axis-aligned moving patch: top-left corner at `origin + t * step`.
#[derive(Debug, Clone, Copy)]
struct Patch {
    y0: f32,
    x0: f32,
    height: f32,
    width: f32,
    dy: f32,
    dx: f32,
}

impl Patch {
    fn corner(&self, t: f32) -> (f32, f32) {
        (self.y0 + t * self.dy, self.x0 + t * self.dx)
    }

    fn contains(&self, t: f32, y: f32, x: f32) -> bool {
        let (cy, cx) = self.corner(t);
        y >= cy && y < cy + self.height && x >= cx && x < cx + self.width
    }

    /// Flow from frame `t` to frame `s` at pixel `(y, x)` of frame `t`.
    fn flow(&self, t: usize, s: usize, y: usize, x: usize) -> (f32, f32) {
        if self.contains(t as f32, y as f32, x as f32) {
            let k = s as f32 - t as f32;
            (k * self.dx, k * self.dy)
        } else {
            (0.0, 0.0)
        }
    }

    fn flow_field(&self, t: usize, s: usize, height: usize, width: usize) -> FlowField {
        let mut data = Vec::with_capacity(2 * height * width);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = self.flow(t, s, y, x);
                data.push(u);
                data.push(v);
            }
        }
        FlowField::new(height, width, data).expect("finite flow")
    }
}

/// RGB clip of a textured patch moving `(dx, dy)` per frame over a fixed
/// textured background, with its exact flows. Backward flows are included,
/// so disoccluded background is masked by the consistency check.
pub fn make_moving_clip(
    frames: usize,
    height: usize,
    width: usize,
    dx: f32,
    dy: f32,
    seed: u64,
) -> Result<(VideoClip, ClipFlows)> {
    if frames < 2 {
        return Err(Error::TooFewFrames(frames));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidConfig("frame size must be positive".into()));
    }
    let span = frames as f32 - 1.0;
    let (travel_x, travel_y) = (dx.abs() * span, dy.abs() * span);
    if !dx.is_finite() || !dy.is_finite() || travel_x >= width as f32 || travel_y >= height as f32 {
        return Err(Error::InvalidConfig(format!(
            "motion ({dx}, {dy}) over {frames} frames exceeds a {height}x{width} frame"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Texture::new(3, 0.35, &mut rng);
    let object = Texture::new(3, 0.9, &mut rng);
    let patch_h = (height as f32 / 2.5).ceil().max(1.0);
    let patch_w = (width as f32 / 2.5).ceil().max(1.0);
    // Center the patch's path; the patch may leave the frame partially.
    let y0 = ((height as f32 - patch_h - dy * span) / 2.0).floor();
    let x0 = ((width as f32 - patch_w - dx * span) / 2.0).floor();
    let patch = Patch {
        y0,
        x0,
        height: patch_h,
        width: patch_w,
        dy,
        dx,
    };
    let clip = VideoClip::new(
        (0..frames)
            .map(|t| {
                let (cy, cx) = patch.corner(t as f32);
                Frame::from_fn(height, width, 3, |y, x, c| {
                    let (yf, xf) = (y as f32, x as f32);
                    if patch.contains(t as f32, yf, xf) {
                        object.sample(yf - cy, xf - cx, c)
                    } else {
                        background.sample(yf, xf, c)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    let pair = |t: usize, s: usize| FlowPair {
        forward: patch.flow_field(t, s, height, width),
        backward: Some(patch.flow_field(s, t, height, width)),
    };
    let flows = ClipFlows {
        short: (1..frames).map(|t| pair(t, t - 1)).collect(),
        long: (1..frames).map(|t| pair(t, 0)).collect(),
    };
    Ok((clip, flows))
}

/// `P_t = clamp(I_t + g_t * I_t + n_t)` with `g_t ~ U(-sigma, sigma)` per
/// frame and `n_t ~ N(0, sigma/2)` per sample.
pub fn apply_unimodal_flicker(clip: &VideoClip, sigma: f64, seed: u64) -> Result<VideoClip> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(clip.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, (sigma / 2.0) as f32).expect("finite sigma");
    let s = sigma as f32;
    clip.map(|frame| {
        let g = rng.random_range(-s..s);
        let data = frame
            .data()
            .iter()
            .map(|&v| (v + g * v + noise.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        Frame::new(frame.height(), frame.width(), frame.channels(), data).expect("same shape")
    })
}

/// `P_t = clamp(A_m * I_t + b_m)` for `m = switch_pattern[t]`, optionally
/// scaled by `1 + U(-jitter, jitter)` before clamping. Returns the mode labels.
pub fn apply_multimodal_flicker(clip: &VideoClip, spec: &SynthSpec) -> Result<(VideoClip, Vec<usize>)> {
    if spec.kind != SynthKind::Multimodal {
        return Err(Error::InvalidConfig("spec is not multimodal".into()));
    }
    spec.validate(clip.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let j = spec.jitter as f32;
    let c = clip.shape().channels;
    let frames = clip
        .iter()
        .zip(&spec.switch_pattern)
        .map(|(frame, &m)| {
            let g = if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
            let mut data = vec![0.0f32; frame.data().len()];
            for (src, dst) in frame.data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
                spec.modes[m].apply_pixel(src, dst);
                for v in dst.iter_mut() {
                    *v = (*v * (1.0 + g)).clamp(0.0, 1.0);
                }
            }
            Frame::new(frame.height(), frame.width(), c, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((VideoClip::new(frames)?, spec.switch_pattern.clone()))
}

/// Every frame of `clip` rendered in one mode.
pub fn render_mode(clip: &VideoClip, mode: &ColorTransform) -> Result<VideoClip> {
    clip.map(|f| mode.apply(f))
}

/// Inter-mode gap on `clip`: the channel mean of
/// `|(A_1 - A_2) * mean(I) + (b_1 - b_2)|`, with `mean(I)` the mean color.
pub fn mode_gap(a: &ColorTransform, b: &ColorTransform, clip: &VideoClip) -> f64 {
    let c = clip.shape().channels;
    let mut mean = vec![0.0f64; c];
    let mut count = 0usize;
    for frame in clip {
        for px in frame.data().chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(px) {
                *m += v as f64;
            }
            count += 1;
        }
    }
    let mean: Vec<f32> = mean.iter().map(|m| (m / count as f64) as f32).collect();
    let mut pa = vec![0.0f32; c];
    let mut pb = vec![0.0f32; c];
    a.apply_pixel(&mean, &mut pa);
    b.apply_pixel(&mean, &mut pb);
    pa.iter().zip(&pb).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / c as f64
}
