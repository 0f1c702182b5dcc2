//! Slice-level kernels for 2-D cross-correlation (via im2col) and max pooling.
//!
//! These are shared by the differentiable graph ops and by sparse inference.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Real};

/// Geometry of a convolution over `[N, C, H, W]` inputs with `[F, C, kh, kw]`
/// kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(input_shape: &[usize], kernel_shape: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (&[batch, in_channels, height, width], &[filters, kc, kernel_h, kernel_w]) = (input_shape, kernel_shape)
        else {
            return Err(Error::Shape(format!(
                "conv2d expects 4-D input and kernels, got {input_shape:?} and {kernel_shape:?}"
            )));
        };
        if kc != in_channels {
            return Err(Error::Shape(format!(
                "conv2d input has {in_channels} channels, kernels expect {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d stride must be positive".into()));
        }
        if height + 2 * padding < kernel_h || width + 2 * padding < kernel_w {
            return Err(Error::Shape(format!(
                "kernel {kernel_h}x{kernel_w} larger than padded input {}x{}",
                height + 2 * padding,
                width + 2 * padding
            )));
        }
        Ok(ConvGeometry {
            batch,
            in_channels,
            height,
            width,
            filters,
            kernel_h,
            kernel_w,
            stride,
            padding,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Rows of the im2col matrix: `C * kh * kw`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn in_sample_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_sample_len(&self) -> usize {
        self.filters * self.out_plane()
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.filters, self.out_h(), self.out_w()]
    }
}

/// Unrolls one `[C, H, W]` sample into a `[C*kh*kw, Ho*Wo]` matrix.
pub(crate) fn im2col<T: Real>(g: &ConvGeometry, input: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        dst[oy * ow + ox] = if iy >= 0 && (iy as usize) < g.height && ix >= 0 && (ix as usize) < g.width
                        {
                            input[(c * g.height + iy as usize) * g.width + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix into one sample.
pub(crate) fn col2im_add<T: Real>(g: &ConvGeometry, cols: &[T], input_grad: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix as usize >= g.width {
                            continue;
                        }
                        input_grad[(c * g.height + iy as usize) * g.width + ix as usize] =
                            input_grad[(c * g.height + iy as usize) * g.width + ix as usize] + src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation. Returns the output and, when `keep_cols` is
/// set, the per-sample column matrices needed for the kernel gradient.
pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    kernels: &[T],
    keep_cols: bool,
) -> (Vec<T>, Vec<T>) {
    let patch = g.patch_len();
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.batch * g.out_sample_len()];
    let mut saved = if keep_cols {
        vec![T::zero(); g.batch * patch * plane]
    } else {
        Vec::new()
    };
    let mut scratch = vec![T::zero(); patch * plane];
    for n in 0..g.batch {
        let cols: &mut [T] = if keep_cols {
            &mut saved[n * patch * plane..(n + 1) * patch * plane]
        } else {
            &mut scratch
        };
        im2col(g, &input[n * g.in_sample_len()..(n + 1) * g.in_sample_len()], cols);
        gemm(
            MatRef::new(kernels, g.filters, patch),
            MatRef::new(cols, patch, plane),
            T::zero(),
            &mut out[n * g.out_sample_len()..(n + 1) * g.out_sample_len()],
        );
    }
    (out, saved)
}

/// Backward pass of [`conv2d_forward`]; either gradient may be skipped.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeometry,
    out_grad: &[T],
    kernels: &[T],
    cols: &[T],
    mut input_grad: Option<&mut [T]>,
    mut kernel_grad: Option<&mut [T]>,
) {
    let patch = g.patch_len();
    let plane = g.out_plane();
    let mut dcols = vec![T::zero(); patch * plane];
    for n in 0..g.batch {
        let dout = &out_grad[n * g.out_sample_len()..(n + 1) * g.out_sample_len()];
        if let Some(kg) = kernel_grad.as_deref_mut() {
            let c = &cols[n * patch * plane..(n + 1) * patch * plane];
            gemm(
                MatRef::new(dout, g.filters, plane),
                MatRef::transposed(c, plane, patch),
                T::one(),
                kg,
            );
        }
        if let Some(ig) = input_grad.as_deref_mut() {
            gemm(
                MatRef::transposed(kernels, patch, g.filters),
                MatRef::new(dout, g.filters, plane),
                T::zero(),
                &mut dcols,
            );
            col2im_add(g, &dcols, &mut ig[n * g.in_sample_len()..(n + 1) * g.in_sample_len()]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub size: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn new(input_shape: &[usize], size: usize, stride: usize) -> Result<Self> {
        let &[batch, channels, height, width] = input_shape else {
            return Err(Error::Shape(format!(
                "max_pool2d expects 4-D input, got {input_shape:?}"
            )));
        };
        if size == 0 || stride == 0 || size > height || size > width {
            return Err(Error::Shape(format!(
                "pool window {size} (stride {stride}) does not fit {height}x{width}"
            )));
        }
        Ok(PoolGeometry {
            batch,
            channels,
            height,
            width,
            size,
            stride,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.height - self.size) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width - self.size) / self.stride + 1
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.out_h(), self.out_w()]
    }
}

/// Max pooling; also returns the flat input index of every selected maximum.
/// Ties resolve to the first element in row-major window order.
pub(crate) fn max_pool_forward<T: Real>(g: &PoolGeometry, input: &[T]) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = Vec::with_capacity(g.batch * g.channels * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..g.batch * g.channels {
        let base = plane * g.height * g.width;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * g.stride * g.width + ox * g.stride;
                let mut best = input[best_idx];
                for ky in 0..g.size {
                    for kx in 0..g.size {
                        let idx = base + (oy * g.stride + ky) * g.width + ox * g.stride + kx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    (out, argmax)
}
