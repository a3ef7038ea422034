//! Iteratively reweighted training.
//!
//! A two-head generator predicts a main and a minor rendition of every frame.
//! Each iteration scores the processed frame pixel by pixel: a pixel joins the
//! main mode when the main head explains it at least as well as the minor head
//! (or within `delta`). The main head is then trained on main-mode pixels and
//! the minor head on the rest. Training starts with a short anchoring phase on
//! one frame so the main head settles on that frame's mode.

use crate::error::{Error, Result};
use crate::nn::Real;
use crate::train::{data_term_grad, DataTerm};
use crate::nn::Tensor;
use crate::video::{Frame, FrameShape};

/// Binary main-mode assignment, one value per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::mismatch(height * width, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidConfig("confidence values must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Fraction of pixels assigned to the main mode.
    pub fn coverage(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Single-channel frame with values 0.0 / 1.0, for visualization.
    pub fn to_frame(&self) -> Frame {
        Frame::new(
            self.height,
            self.width,
            1,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("valid shape")
    }
}

/// Confidence on planar buffers of `channels` planes of `plane` pixels each.
pub(crate) fn confidence_planar<T: Real>(
    main: &[T],
    minor: &[T],
    target: &[T],
    channels: usize,
    plane: usize,
    delta: f64,
) -> Vec<u8> {
    let mut d_main = vec![0.0f64; plane];
    let mut d_minor = vec![0.0f64; plane];
    for c in 0..channels {
        let range = c * plane..(c + 1) * plane;
        for (p, ((&m, &n), &t)) in main[range.clone()]
            .iter()
            .zip(&minor[range.clone()])
            .zip(&target[range])
            .enumerate()
        {
            d_main[p] += (m - t).abs().as_f64();
            d_minor[p] += (n - t).abs().as_f64();
        }
    }
    let cn = channels as f64;
    d_main
        .iter()
        .zip(&d_minor)
        .map(|(&a, &b)| ((a / cn) < (b / cn).max(delta)) as u8)
        .collect()
}

/// `C(x) = 1` iff `d(main(x), P(x)) < max(d(minor(x), P(x)), delta)`, where
/// `d` is the mean absolute difference over channels.
pub fn compute_confidence(main: &Frame, minor: &Frame, processed: &Frame, delta: f64) -> Result<ConfidenceMap> {
    main.ensure_same_shape(processed)?;
    minor.ensure_same_shape(processed)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!("delta must be positive, got {delta}")));
    }
    let c = processed.channels();
    let data = main
        .data()
        .chunks_exact(c)
        .zip(minor.data().chunks_exact(c))
        .zip(processed.data().chunks_exact(c))
        .map(|((m, n), p)| {
            let dm: f64 = m.iter().zip(p).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / c as f64;
            let dn: f64 = n.iter().zip(p).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / c as f64;
            (dm < dn.max(delta)) as u8
        })
        .collect();
    ConfidenceMap::new(processed.height(), processed.width(), data)
}

/// Reweighted loss and gradients on planar buffers: the data term of the
/// masked main head plus the data term of the complementary-masked minor head.
pub(crate) fn irt_loss_planar(
    main: &[f32],
    minor: &[f32],
    target: &[f32],
    conf: &[u8],
    shape: FrameShape,
    kind: &DataTerm,
) -> (f64, Vec<f32>, Vec<f32>) {
    let plane = shape.pixels();
    let mask = |x: &[f32], keep: u8| -> Vec<f32> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| if conf[i % plane] == keep { v } else { 0.0 })
            .collect()
    };
    let (l_main, mut g_main) = data_term_grad(kind, &mask(main, 1), &mask(target, 1), shape);
    let (l_minor, mut g_minor) = data_term_grad(kind, &mask(minor, 0), &mask(target, 0), shape);
    for (i, (gm, gn)) in g_main.iter_mut().zip(g_minor.iter_mut()).enumerate() {
        if conf[i % plane] == 1 {
            *gn = 0.0;
        } else {
            *gm = 0.0;
        }
    }
    (l_main + l_minor, g_main, g_minor)
}

/// Frame-level reweighted loss (the map is a constant, not differentiated).
pub fn irt_loss(main: &Frame, minor: &Frame, processed: &Frame, conf: &ConfidenceMap, kind: &DataTerm) -> Result<f64> {
    main.ensure_same_shape(processed)?;
    minor.ensure_same_shape(processed)?;
    if (conf.height, conf.width) != (processed.height(), processed.width()) {
        return Err(Error::mismatch(
            format!("{}x{} confidence", processed.height(), processed.width()),
            format!("{}x{} confidence", conf.height, conf.width),
        ));
    }
    let planar = |f: &Frame| Tensor::<f32>::from_frame(f).data;
    let (loss, _, _) = irt_loss_planar(
        &planar(main),
        &planar(minor),
        &planar(processed),
        &conf.data,
        processed.shape(),
        kind,
    );
    Ok(loss)
}

/// What one training iteration works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleStep {
    pub frame: usize,
    /// Anchored steps force the confidence to all-ones.
    pub anchored: bool,
}

/// Iterations before `anchor_iterations` train on `anchor_frame` only;
/// afterwards the trainer's own order (`normal_frame`) applies.
pub fn anchored_schedule(iteration: usize, anchor_iterations: usize, anchor_frame: usize, normal_frame: usize) -> ScheduleStep {
    if iteration < anchor_iterations {
        ScheduleStep {
            frame: anchor_frame,
            anchored: true,
        }
    } else {
        ScheduleStep {
            frame: normal_frame,
            anchored: false,
        }
    }
}
