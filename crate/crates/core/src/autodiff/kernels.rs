//! Convolution kernels on flat NCHW buffers, lowered to GEMM through im2col.
//!
//! Transposed convolution reuses the same three kernels with the roles of
//! input and output swapped: its forward pass is the input-gradient of a
//! plain convolution and vice versa.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Geometry of a plain cross-correlation `[n, cin, h, w] -> [n, cout, oh, ow]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (batch, cin, h, w) = nchw("conv2d", input)?;
        let (cout, wcin, kh, kw) = nchw("conv2d weight", weight)?;
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be >= 1"));
        }
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit padded input {h}x{w} (pad {pad})"),
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Self { batch, cin, h, w, cout, kh, kw, stride, pad, oh, ow })
    }

    /// Geometry of the plain convolution whose input-gradient is the
    /// transposed convolution of `input` by `weight` (`[cin_t, cout_t, kh, kw]`).
    pub fn transposed(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Self> {
        let (batch, cin_t, h, w) = nchw("conv_transpose2d", input)?;
        let (wcin, cout_t, kh, kw) = nchw("conv_transpose2d weight", weight)?;
        if stride == 0 {
            return Err(Error::shape("conv_transpose2d", "stride must be >= 1"));
        }
        if wcin != cin_t {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input has {cin_t} channels but weight expects {wcin}"),
            ));
        }
        if output_pad >= stride {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("output padding {output_pad} must be smaller than stride {stride}"),
            ));
        }
        let full_h = (h - 1) * stride + kh + output_pad;
        let full_w = (w - 1) * stride + kw + output_pad;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(Error::shape("conv_transpose2d", "padding consumes the whole output"));
        }
        let g = Self {
            batch,
            cin: cout_t,
            h: full_h - 2 * pad,
            w: full_w - 2 * pad,
            cout: cin_t,
            kh,
            kw,
            stride,
            pad,
            oh: h,
            ow: w,
        };
        debug_assert_eq!((g.h + 2 * pad - kh) / stride + 1, h);
        Ok(g)
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.cin * self.h * self.w
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.cout * self.oh * self.ow
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.batch, self.cin, self.h, self.w]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.cout, self.oh, self.ow]
    }
}

pub(crate) fn nchw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::shape(op, format!("expected 4-d tensor, got shape {shape:?}"))),
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let xc = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = conv(x, w)` without bias.
pub fn conv_forward<T: Real>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let k = g.patch_len();
    let plane = g.out_plane();
    let mut cols = vec![T::zero(); k * plane];
    let mut y = vec![T::zero(); g.output_len()];
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * plane;
    for n in 0..g.batch {
        im2col(&x[n * in_len..(n + 1) * in_len], g, &mut cols);
        T::gemm(
            g.cout,
            k,
            plane,
            T::one(),
            w,
            false,
            &cols,
            false,
            T::zero(),
            &mut y[n * out_len..(n + 1) * out_len],
        );
    }
    y
}

/// Accumulates `∂L/∂w` given the forward input and the output gradient.
pub fn conv_backward_weight<T: Real>(x: &[T], dy: &[T], g: &ConvGeom, dw: &mut [T]) {
    let k = g.patch_len();
    let plane = g.out_plane();
    let mut cols = vec![T::zero(); k * plane];
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * plane;
    for n in 0..g.batch {
        im2col(&x[n * in_len..(n + 1) * in_len], g, &mut cols);
        T::gemm(
            g.cout,
            plane,
            k,
            T::one(),
            &dy[n * out_len..(n + 1) * out_len],
            false,
            &cols,
            true,
            T::one(),
            dw,
        );
    }
}

/// Accumulates `∂L/∂x` given the weights and the output gradient.
pub fn conv_backward_input<T: Real>(dy: &[T], w: &[T], g: &ConvGeom, dx: &mut [T]) {
    let k = g.patch_len();
    let plane = g.out_plane();
    let mut cols = vec![T::zero(); k * plane];
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * plane;
    for n in 0..g.batch {
        T::gemm(
            k,
            g.cout,
            plane,
            T::one(),
            w,
            true,
            &dy[n * out_len..(n + 1) * out_len],
            false,
            T::zero(),
            &mut cols,
        );
        col2im_add(&cols, g, &mut dx[n * in_len..(n + 1) * in_len]);
    }
}

/// Adds a per-channel bias to an NCHW buffer in place.
pub fn add_channel_bias<T: Real>(y: &mut [T], bias: &[T], channels: usize, plane: usize) {
    for (i, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[i % channels];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// Accumulates the per-channel sum of an NCHW gradient into `db`.
pub fn channel_sum_add<T: Real>(dy: &[T], channels: usize, plane: usize, db: &mut [T]) {
    for (i, chunk) in dy.chunks(plane).enumerate() {
        db[i % channels] += chunk.iter().copied().sum::<T>();
    }
}
