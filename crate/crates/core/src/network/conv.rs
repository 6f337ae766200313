//! Convolution as a matrix product.
//!
//! Feature maps travel between layers as `N × (C·H·W)` matrices, one sample
//! per row in channel-major order. A convolution layer unrolls its input into
//! a patch matrix with one row per receptive field (`N·OH·OW` rows, sample
//! major, then output row, then output column) and `C·k·k` columns ordered
//! channel, kernel row, kernel column. The layer is then `patches · W` with
//! `W` of shape `C·k·k × C_out`, exactly like a dense layer.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Shape(format!(
                "convolution needs non-zero channels, kernel and stride: {self:?}"
            )));
        }
        if self.kernel > self.height || self.kernel > self.width {
            return Err(Error::Shape(format!(
                "kernel {} does not fit a {}x{} input",
                self.kernel, self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn patches_per_sample(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unrolls `input` (`N × C·H·W`) into its patch matrix.
pub fn im2col(input: &Matrix, geom: &ConvGeometry) -> Result<Matrix> {
    geom.validate()?;
    if input.cols() != geom.input_len() {
        return Err(Error::Shape(format!(
            "input width {} does not match {}x{}x{}",
            input.cols(),
            geom.channels,
            geom.height,
            geom.width
        )));
    }
    let (oh, ow, k) = (geom.out_height(), geom.out_width(), geom.kernel);
    let patches = geom.patches_per_sample();
    let mut out = Matrix::zeros(input.rows() * patches, geom.patch_len());
    for n in 0..input.rows() {
        let sample = input.row(n);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = out.row_mut(n * patches + oy * ow + ox);
                let mut col = 0;
                for c in 0..geom.channels {
                    let plane = &sample[c * geom.height * geom.width..];
                    for ky in 0..k {
                        let y = oy * geom.stride + ky;
                        for kx in 0..k {
                            let x = ox * geom.stride + kx;
                            row[col] = plane[y * geom.width + x];
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input
/// layout, summing where receptive fields overlap.
pub fn col2im(patch_grad: &Matrix, geom: &ConvGeometry, batch: usize) -> Result<Matrix> {
    geom.validate()?;
    let patches = geom.patches_per_sample();
    if patch_grad.rows() != batch * patches || patch_grad.cols() != geom.patch_len() {
        return Err(Error::Shape(format!(
            "patch gradient {}x{} does not match {} samples of {}x{} patches",
            patch_grad.rows(),
            patch_grad.cols(),
            batch,
            patches,
            geom.patch_len()
        )));
    }
    let (oh, ow, k) = (geom.out_height(), geom.out_width(), geom.kernel);
    let mut out = Matrix::zeros(batch, geom.input_len());
    for n in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = patch_grad.row(n * patches + oy * ow + ox).to_vec();
                let dst = out.row_mut(n);
                let mut col = 0;
                for c in 0..geom.channels {
                    let base = c * geom.height * geom.width;
                    for ky in 0..k {
                        let y = oy * geom.stride + ky;
                        for kx in 0..k {
                            let x = ox * geom.stride + kx;
                            dst[base + y * geom.width + x] += src[col];
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Patch-layout activations (`N·P × C_out`) to channel-major rows
/// (`N × C_out·P`).
pub(crate) fn patches_to_maps(m: &Matrix, batch: usize, patches: usize) -> Matrix {
    let channels = m.cols();
    let mut out = Matrix::zeros(batch, channels * patches);
    for n in 0..batch {
        for p in 0..patches {
            let src = m.row(n * patches + p);
            let dst = out.row_mut(n);
            for (c, &v) in src.iter().enumerate() {
                dst[c * patches + p] = v;
            }
        }
    }
    out
}

/// Inverse of [`patches_to_maps`].
pub(crate) fn maps_to_patches(m: &Matrix, channels: usize, patches: usize) -> Matrix {
    let batch = m.rows();
    let mut out = Matrix::zeros(batch * patches, channels);
    for n in 0..batch {
        let src = m.row(n);
        for p in 0..patches {
            let dst = out.row_mut(n * patches + p);
            for (c, d) in dst.iter_mut().enumerate() {
                *d = src[c * patches + p];
            }
        }
    }
    out
}
