//! Dense flow fields, backward warping and forward-backward occlusion masks.
//!
//! A flow `F_{t->s}` stored at pixel `x` of frame `t` points to the matching
//! position `x + F(x)` in frame `s`. Warping frame `s` with it therefore
//! produces an image aligned with frame `t`.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::video::Frame;

/// Forward-backward consistency constants of the occlusion test.
pub const OCCLUSION_A: f64 = 0.01;
pub const OCCLUSION_B: f64 = 0.5;

/// Sanity value at the start of every `.flo` file.
pub const FLO_MAGIC: f32 = 202021.25;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    /// Interleaved `(u, v)` per pixel, row-major.
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 2 {
            return Err(Error::mismatch(height * width * 2, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("flow values must be finite".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        let data = (0..height * width).flat_map(|_| [u, v]).collect();
        Self { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }

    fn ensure_size(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width) != (height, width) {
            return Err(Error::mismatch(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }

    /// Bilinear sample of the flow at a real position, zero outside.
    fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let mut u = 0.0;
        let mut v = 0.0;
        for_each_tap(x, y, self.width, self.height, |yy, xx, w| {
            let (a, b) = self.at(yy, xx);
            u += w * a as f64;
            v += w * b as f64;
        });
        (u, v)
    }
}

/// Binary validity map; 0 marks occluded or out-of-frame pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl OcclusionMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::mismatch(height * width, data.len()));
        }
        if data.iter().any(|&m| m > 1) {
            return Err(Error::InvalidConfig("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
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

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&m| m as usize).sum()
    }
}

/// Visits the (up to four) in-frame bilinear taps around `(x, y)`.
/// Taps outside the frame contribute zero.
#[inline]
fn for_each_tap(x: f64, y: f64, width: usize, height: usize, mut f: impl FnMut(usize, usize, f64)) {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        let yy = y0 + dy;
        if wy == 0.0 || yy < 0 || yy >= height as i64 {
            continue;
        }
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let xx = x0 + dx;
            if wx == 0.0 || xx < 0 || xx >= width as i64 {
                continue;
            }
            f(yy as usize, xx as usize, wy * wx);
        }
    }
}

#[inline]
fn in_frame(x: f64, y: f64, width: usize, height: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64
}

/// `output(x) = source(x + flow(x))`, bilinear; samples that fall outside the
/// frame read zero and are expected to be masked out.
pub fn backward_warp(source: &Frame, flow: &FlowField) -> Result<Frame> {
    flow.ensure_size(source.height(), source.width())?;
    let (h, w, c) = (source.height(), source.width(), source.channels());
    let mut out = Frame::filled(h, w, c, 0.0)?;
    let mut acc = [0.0f64; 3];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(y, x);
            acc[..c].fill(0.0);
            for_each_tap(x as f64 + u as f64, y as f64 + v as f64, w, h, |yy, xx, wt| {
                for (a, &s) in acc.iter_mut().zip(source.pixel(yy, xx)) {
                    *a += wt * s as f64;
                }
            });
            for (ch, &a) in acc[..c].iter().enumerate() {
                out.set(y, x, ch, a as f32);
            }
        }
    }
    Ok(out)
}

/// Forward-backward consistency check. Pixel `x` is valid (1) unless its
/// target `x + fwd(x)` leaves the frame or
/// `|fwd + bwd'|^2 > a (|fwd|^2 + |bwd'|^2) + b` with `bwd' = bwd(x + fwd(x))`.
pub fn occlusion_from_flows(fwd: &FlowField, bwd: &FlowField, a: f64, b: f64) -> Result<OcclusionMask> {
    bwd.ensure_size(fwd.height, fwd.width)?;
    if a < 0.0 || b < 0.0 {
        return Err(Error::InvalidConfig("occlusion thresholds must be non-negative".into()));
    }
    let (h, w) = (fwd.height, fwd.width);
    let mut data = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = fwd.at(y, x);
            let (u, v) = (u as f64, v as f64);
            let (tx, ty) = (x as f64 + u, y as f64 + v);
            if !in_frame(tx, ty, w, h) {
                continue;
            }
            let (bu, bv) = bwd.sample(tx, ty);
            let lhs = (u + bu).powi(2) + (v + bv).powi(2);
            let rhs = a * (u * u + v * v + bu * bu + bv * bv) + b;
            data[y * w + x] = (lhs <= rhs) as u8;
        }
    }
    OcclusionMask::new(h, w, data)
}

/// Validity from frame bounds alone, used when no backward flow is available.
pub fn in_frame_mask(fwd: &FlowField) -> OcclusionMask {
    let (h, w) = (fwd.height, fwd.width);
    let mut data = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = fwd.at(y, x);
            data[y * w + x] = in_frame(x as f64 + u as f64, y as f64 + v as f64, w, h) as u8;
        }
    }
    OcclusionMask { height: h, width: w, data }
}

/// A flow together with its reverse, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair {
    pub forward: FlowField,
    pub backward: Option<FlowField>,
}

impl FlowPair {
    pub fn mask(&self) -> Result<OcclusionMask> {
        match &self.backward {
            Some(bwd) => occlusion_from_flows(&self.forward, bwd, OCCLUSION_A, OCCLUSION_B),
            None => Ok(in_frame_mask(&self.forward)),
        }
    }
}

/// Flows for every frame `t >= 1` of a clip (0-based): `short[t-1]` relates
/// frame `t` to `t-1`, `long[t-1]` relates frame `t` to frame 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFlows {
    pub short: Vec<FlowPair>,
    pub long: Vec<FlowPair>,
}

/// A warp target: flow plus the validity mask it is evaluated under.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub flow: FlowField,
    pub mask: OcclusionMask,
}

/// Everything the warping error needs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpCorrespondences {
    pub short: Vec<Correspondence>,
    pub long: Vec<Correspondence>,
}

impl ClipFlows {
    pub fn frame_count(&self) -> usize {
        self.short.len() + 1
    }

    pub fn correspondences(&self) -> Result<WarpCorrespondences> {
        let build = |pairs: &[FlowPair]| -> Result<Vec<Correspondence>> {
            pairs
                .iter()
                .map(|p| {
                    Ok(Correspondence {
                        flow: p.forward.clone(),
                        mask: p.mask()?,
                    })
                })
                .collect()
        };
        Ok(WarpCorrespondences {
            short: build(&self.short)?,
            long: build(&self.long)?,
        })
    }

    /// Writes `{short,long}_{fwd,bwd}_%06d.flo`, indexed by the later frame.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (kind, pairs) in [("short", &self.short), ("long", &self.long)] {
            for (k, pair) in pairs.iter().enumerate() {
                let t = k + 1;
                write_flow_file(&pair.forward, dir.join(flow_file_name(kind, "fwd", t)))?;
                if let Some(bwd) = &pair.backward {
                    write_flow_file(bwd, dir.join(flow_file_name(kind, "bwd", t)))?;
                }
            }
        }
        Ok(())
    }

    /// Reads the layout written by [`ClipFlows::save_dir`]. Forward files are
    /// required; backward files are optional.
    pub fn load_dir(dir: impl AsRef<Path>, frames: usize) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::MissingDirectory(dir.to_path_buf()));
        }
        let load = |kind: &str| -> Result<Vec<FlowPair>> {
            (1..frames)
                .map(|t| {
                    let forward = read_flow_file(dir.join(flow_file_name(kind, "fwd", t)))?;
                    let bwd_path = dir.join(flow_file_name(kind, "bwd", t));
                    let backward = if bwd_path.exists() {
                        Some(read_flow_file(bwd_path)?)
                    } else {
                        None
                    };
                    Ok(FlowPair { forward, backward })
                })
                .collect()
        };
        Ok(Self {
            short: load("short")?,
            long: load("long")?,
        })
    }
}

pub fn flow_file_name(kind: &str, direction: &str, t: usize) -> String {
    format!("{kind}_{direction}_{t:06}.flo")
}

/// Ground-truth flows of a camera translating `(dx, dy)` per frame, so that
/// frame `t` at `x` matches frame `s` at `x + (t - s) (dx, dy)`.
pub fn synth_translation_flows(frames: usize, dx: f32, dy: f32, height: usize, width: usize) -> Result<ClipFlows> {
    if frames < 2 {
        return Err(Error::TooFewFrames(frames));
    }
    let pair = |steps: f32| FlowPair {
        forward: FlowField::constant(height, width, steps * dx, steps * dy),
        backward: Some(FlowField::constant(height, width, -steps * dx, -steps * dy)),
    };
    Ok(ClipFlows {
        short: (1..frames).map(|_| pair(1.0)).collect(),
        long: (1..frames).map(|t| pair(t as f32)).collect(),
    })
}

/// Serializes a flow in the Middlebury `.flo` layout (little-endian).
pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(12 + flow.data.len() * 4);
    bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    bytes.extend_from_slice(&(flow.width as i32).to_le_bytes());
    bytes.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for v in &flow.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_flow(mut r: impl Read) -> Result<FlowField> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| Error::FlowFormat("truncated header".into()))?;
    let magic = f32::from_le_bytes([head[0], head[1], head[2], head[3]]);
    if magic != FLO_MAGIC {
        return Err(Error::FlowFormat(format!("bad magic {magic}")));
    }
    let width = i32::from_le_bytes([head[4], head[5], head[6], head[7]]);
    let height = i32::from_le_bytes([head[8], head[9], head[10], head[11]]);
    if width <= 0 || height <= 0 {
        return Err(Error::FlowFormat(format!("invalid size {width}x{height}")));
    }
    let n = width as usize * height as usize * 2;
    let mut body = vec![0u8; n * 4];
    r.read_exact(&mut body)
        .map_err(|_| Error::FlowFormat("truncated flow data".into()))?;
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FlowField::new(height as usize, width as usize, data)
}

pub fn write_flow_file(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flow(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flow_file(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(bytes.as_slice())
}
