//! Layer primitives with explicit backward passes.
//!
//! All activations are planar `Tensor`s. Convolutions are stride 1 with
//! zero "same" padding and run as im2col followed by one GEMM.

use super::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Square convolution, weights laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.name.clone(), self.in_channels, self.out_channels, self.kernel)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Returns the output and the im2col buffer needed by `backward`.
    pub fn forward(&self, input: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        assert_eq!(input.channels, self.in_channels, "{}: input channels", self.name);
        let (h, w) = (input.height, input.width);
        let hw = h * w;
        let cols = im2col(input, self.kernel);
        let mut out = Tensor::zeros(self.out_channels, h, w);
        for (row, &b) in out.data.chunks_exact_mut(hw).zip(&self.bias) {
            row.fill(b);
        }
        let k = self.patch_len();
        // SAFETY: weight is out x k, cols is k x hw, out is out x hw, all row-major.
        unsafe {
            T::gemm(
                self.out_channels,
                k,
                hw,
                T::one(),
                self.weight.as_ptr(),
                k as isize,
                1,
                cols.as_ptr(),
                hw as isize,
                1,
                T::one(),
                out.data.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        (out, cols)
    }

    /// Accumulates parameter gradients into `grad` and, when asked, returns
    /// the gradient with respect to the layer input.
    pub fn backward(
        &self,
        cols: &[T],
        grad_out: &Tensor<T>,
        grad: &mut Conv2d<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (h, w) = (grad_out.height, grad_out.width);
        let hw = h * w;
        let k = self.patch_len();
        for (gb, row) in grad.bias.iter_mut().zip(grad_out.data.chunks_exact(hw)) {
            let mut s = T::zero();
            for &v in row {
                s += v;
            }
            *gb += s;
        }
        // SAFETY: grad_out is out x hw; cols^T is hw x k (strides swapped); grad.weight is out x k.
        unsafe {
            T::gemm(
                self.out_channels,
                hw,
                k,
                T::one(),
                grad_out.data.as_ptr(),
                hw as isize,
                1,
                cols.as_ptr(),
                1,
                hw as isize,
                T::one(),
                grad.weight.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        if !need_input_grad {
            return None;
        }
        let mut grad_cols = vec![T::zero(); k * hw];
        // SAFETY: weight^T is k x out (strides swapped); grad_out is out x hw; grad_cols is k x hw.
        unsafe {
            T::gemm(
                k,
                self.out_channels,
                hw,
                T::one(),
                self.weight.as_ptr(),
                1,
                k as isize,
                grad_out.data.as_ptr(),
                hw as isize,
                1,
                T::zero(),
                grad_cols.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        Some(col2im(&grad_cols, self.in_channels, h, w, self.kernel))
    }
}

/// Valid output range `[lo, hi)` for a kernel tap shifted by `d`.
#[inline]
fn valid_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

pub fn im2col<T: Real>(input: &Tensor<T>, kernel: usize) -> Vec<T> {
    let (c, h, w) = (input.channels, input.height, input.width);
    let hw = h * w;
    if kernel == 1 {
        return input.data.clone();
    }
    let pad = (kernel / 2) as isize;
    let mut cols = vec![T::zero(); c * kernel * kernel * hw];
    let mut row = 0;
    for ch in 0..c {
        let src = &input.data[ch * hw..(ch + 1) * hw];
        for ky in 0..kernel {
            let dy = ky as isize - pad;
            let (ylo, yhi) = valid_range(dy, h);
            for kx in 0..kernel {
                let dx = kx as isize - pad;
                let (xlo, xhi) = valid_range(dx, w);
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let s0 = sy * w + (xlo as isize + dx) as usize;
                    dst[y * w + xlo..y * w + xhi].copy_from_slice(&src[s0..s0 + (xhi - xlo)]);
                }
                row += 1;
            }
        }
    }
    cols
}

pub fn col2im<T: Real>(cols: &[T], channels: usize, h: usize, w: usize, kernel: usize) -> Tensor<T> {
    let hw = h * w;
    if kernel == 1 {
        return Tensor::from_vec(channels, h, w, cols.to_vec());
    }
    let pad = (kernel / 2) as isize;
    let mut out = Tensor::zeros(channels, h, w);
    let mut row = 0;
    for ch in 0..channels {
        let dst = &mut out.data[ch * hw..(ch + 1) * hw];
        for ky in 0..kernel {
            let dy = ky as isize - pad;
            let (ylo, yhi) = valid_range(dy, h);
            for kx in 0..kernel {
                let dx = kx as isize - pad;
                let (xlo, xhi) = valid_range(dx, w);
                let src = &cols[row * hw..(row + 1) * hw];
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let d0 = sy * w + (xlo as isize + dx) as usize;
                    for (d, &s) in dst[d0..d0 + (xhi - xlo)].iter_mut().zip(&src[y * w + xlo..y * w + xhi]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
    out
}

pub fn leaky_relu_inplace<T: Real>(t: &mut Tensor<T>) {
    let slope = T::of(LEAKY_SLOPE);
    for v in &mut t.data {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// `activated` is the layer output after the activation. With a positive slope
/// its sign equals the pre-activation sign.
pub fn leaky_relu_backward_inplace<T: Real>(grad: &mut Tensor<T>, activated: &Tensor<T>) {
    let slope = T::of(LEAKY_SLOPE);
    for (g, &a) in grad.data.iter_mut().zip(&activated.data) {
        if a <= T::zero() {
            *g *= slope;
        }
    }
}

/// 2x2 average pooling; height and width must be even.
pub fn avg_pool2<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (input.channels, input.height, input.width);
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let src = &input.data[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out.data[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &src[2 * y * w..(2 * y + 1) * w];
            let r1 = &src[(2 * y + 1) * w..(2 * y + 2) * w];
            for x in 0..ow {
                dst[y * ow + x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, oh, ow) = (grad_out.channels, grad_out.height, grad_out.width);
    let (h, w) = (oh * 2, ow * 2);
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.data[(ch * h + y) * w + x] = grad_out.data[(ch * oh + y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    out
}

/// Two-tap bilinear weights for 2x upsampling along one axis, half-pixel
/// centers with edge clamping.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let s = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn upsample2<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (input.channels, input.height, input.width);
    let (oh, ow) = (2 * h, 2 * w);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut out = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let src = &input.data[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out.data[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::of(1.0 - fy), T::of(fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::of(1.0 - fx), T::of(fx));
                dst[oy * ow + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                    + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, oh, ow) = (grad_out.channels, grad_out.height, grad_out.width);
    let (h, w) = (oh / 2, ow / 2);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = &grad_out.data[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut out.data[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::of(1.0 - fy), T::of(fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::of(1.0 - fx), T::of(fx));
                let g = src[oy * ow + ox];
                dst[y0 * w + x0] += wy0 * wx0 * g;
                dst[y0 * w + x1] += wy0 * wx1 * g;
                dst[y1 * w + x0] += wy1 * wx0 * g;
                dst[y1 * w + x1] += wy1 * wx1 * g;
            }
        }
    }
    out
}

/// Stacks `a` on top of `b` along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.height, a.width), (b.height, b.width), "concat spatial size");
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.channels + b.channels, a.height, a.width, data)
}

pub fn split_channels<T: Real>(t: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first * t.plane();
    (
        Tensor::from_vec(first, t.height, t.width, t.data[..cut].to_vec()),
        Tensor::from_vec(t.channels - first, t.height, t.width, t.data[cut..].to_vec()),
    )
}

#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Reflect-pads by `(top, left)` before and up to `(out_h, out_w)` in total.
pub fn reflect_pad<T: Real>(t: &Tensor<T>, top: usize, left: usize, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = (t.channels, t.height, t.width);
    let mut out = Tensor::zeros(c, out_h, out_w);
    let xs: Vec<usize> = (0..out_w).map(|x| reflect_index(x as isize - left as isize, w)).collect();
    for ch in 0..c {
        for y in 0..out_h {
            let sy = reflect_index(y as isize - top as isize, h);
            let src = &t.data[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            let dst = &mut out.data[(ch * out_h + y) * out_w..(ch * out_h + y + 1) * out_w];
            for (d, &sx) in dst.iter_mut().zip(&xs) {
                *d = src[sx];
            }
        }
    }
    out
}

pub fn crop<T: Real>(t: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(t.channels, h, w);
    for ch in 0..t.channels {
        for y in 0..h {
            let s0 = (ch * t.height + top + y) * t.width + left;
            out.data[(ch * h + y) * w..(ch * h + y + 1) * w].copy_from_slice(&t.data[s0..s0 + w]);
        }
    }
    out
}

/// Adjoint of `crop`: places `g` into a zero tensor of the uncropped size.
pub fn uncrop<T: Real>(g: &Tensor<T>, top: usize, left: usize, full_h: usize, full_w: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(g.channels, full_h, full_w);
    for ch in 0..g.channels {
        for y in 0..g.height {
            let d0 = (ch * full_h + top + y) * full_w + left;
            out.data[d0..d0 + g.width]
                .copy_from_slice(&g.data[(ch * g.height + y) * g.width..(ch * g.height + y + 1) * g.width]);
        }
    }
    out
}
