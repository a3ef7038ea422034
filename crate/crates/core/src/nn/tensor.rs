use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::video::Frame;

/// Floating-point scalar the generator can run in.
///
/// Training uses `f32`; gradient checks run the same code in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    /// `C = alpha * A * B + beta * C` with arbitrary row/column strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Planar (channel-major) activation map, `channels x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor buffer size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Converts an interleaved frame into planar layout.
    pub fn from_frame(frame: &Frame) -> Self {
        let (h, w, c) = (frame.height(), frame.width(), frame.channels());
        let mut out = Self::zeros(c, h, w);
        let plane = h * w;
        for (p, px) in frame.data().chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out.data[ch * plane + p] = T::of(v as f64);
            }
        }
        out
    }

    /// Converts channels `[first, first + count)` back into an interleaved frame.
    pub fn to_frame(&self, first: usize, count: usize) -> Frame {
        let plane = self.plane();
        let mut data = Vec::with_capacity(plane * count);
        for p in 0..plane {
            for ch in first..first + count {
                data.push(self.data[ch * plane + p].as_f64() as f32);
            }
        }
        Frame::new(self.height, self.width, count, data).expect("valid frame shape")
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Channels `[first, first + count)` as one contiguous slice.
    pub fn channel_range(&self, first: usize, count: usize) -> &[T] {
        let plane = self.plane();
        &self.data[first * plane..(first + count) * plane]
    }

    pub fn channel_range_mut(&mut self, first: usize, count: usize) -> &mut [T] {
        let plane = self.plane();
        &mut self.data[first * plane..(first + count) * plane]
    }

    pub fn same_shape(&self, other: &Tensor<T>) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}
