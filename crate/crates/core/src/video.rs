//! Frame and clip value types plus the on-disk frame-directory format.
//!
//! Frames hold `f32` samples with nominal range `[0, 1]`, stored row-major
//! with interleaved channels. On disk a clip is a directory of 8-bit
//! lossless images named `frame_%06d.png`; lexicographic file order is
//! temporal order.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "bmp", "jpg", "jpeg"];

/// Spatial and channel shape shared by all frames of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FrameShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for FrameShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// A single image, `height x width x channels`, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    shape: FrameShape,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let shape = FrameShape::new(height, width, channels);
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!("frame must be non-empty, got {shape}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "frames have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::mismatch(shape.len(), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds a frame by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        let idx = (y * self.shape.width + x) * self.shape.channels + c;
        self.data[idx] = value;
    }

    /// The samples of pixel `(y, x)`, one per channel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let c = self.shape.channels;
        let start = (y * self.shape.width + x) * c;
        &self.data[start..start + c]
    }

    pub fn clamped(&self) -> Frame {
        Frame {
            shape: self.shape,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub(crate) fn ensure_same_shape(&self, other: &Frame) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch(self.shape, other.shape));
        }
        Ok(())
    }
}

/// An ordered sequence of equally shaped frames, `T >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::TooFewFrames(frames.len()));
        }
        let shape = frames[0].shape();
        if let Some(bad) = frames.iter().find(|f| f.shape() != shape) {
            return Err(Error::mismatch(shape, bad.shape()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> FrameShape {
        self.frames[0].shape()
    }

    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    pub fn map(&self, f: impl FnMut(&Frame) -> Frame) -> Result<VideoClip> {
        VideoClip::new(self.frames.iter().map(f).collect())
    }

    pub(crate) fn ensure_compatible(&self, other: &VideoClip) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::mismatch(
                format!("{} frames", self.len()),
                format!("{} frames", other.len()),
            ));
        }
        if self.shape() != other.shape() {
            return Err(Error::mismatch(self.shape(), other.shape()));
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a VideoClip {
    type Item = &'a Frame;
    type IntoIter = std::slice::Iter<'a, Frame>;

    fn into_iter(self) -> Self::IntoIter {
        self.frames.iter()
    }
}

/// Mean absolute difference over all pixels and channels.
pub fn frame_distance_l1(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// File name of frame `t` inside a clip directory.
pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:06}.png")
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn decode_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let frame = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => {
            let gray = img.into_luma8();
            let data = gray.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Frame::new(gray.height() as usize, gray.width() as usize, 1, data)?
        }
        other => {
            let rgb = other.into_rgb8();
            let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Frame::new(rgb.height() as usize, rgb.width() as usize, 3, data)?
        }
    };
    Ok(frame)
}

/// Lists the image files of a clip directory in temporal (sorted-name) order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Loads every image in `dir`, in sorted-name order, as a clip with values in `[0, 1]`.
pub fn load_clip(dir: impl AsRef<Path>) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let files = list_frame_files(dir)?;
    if files.len() < 2 {
        return Err(Error::TooFewFrames(files.len()));
    }
    let frames = files
        .iter()
        .map(|p| decode_frame(p))
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames)
}

/// Quantizes a `[0, 1]` sample to 8 bits, clamping out-of-range values.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes one frame as an 8-bit PNG.
pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = frame.data.iter().map(|&v| quantize_u8(v)).collect();
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let result = if frame.channels() == 1 {
        GrayImage::from_raw(w, h, bytes).expect("buffer size matches").save(path)
    } else {
        RgbImage::from_raw(w, h, bytes).expect("buffer size matches").save(path)
    };
    result.map_err(|source| Error::Encode {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `frame_%06d.png` files into `dir`, creating it if needed.
pub fn save_clip(clip: &VideoClip, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, frame) in clip.iter().enumerate() {
        save_frame(frame, &dir.join(frame_file_name(t)))?;
    }
    Ok(())
}
