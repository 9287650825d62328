//! 3x3 convolution kernels with zero padding 1 via im2col.

use crate::real::Real;

pub const KERNEL: usize = 3;
const PAD: isize = 1;

/// Output side length for a padded 3x3 convolution: `ceil(len / stride)`.
pub fn conv_output_size(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, stride: usize) -> Self {
        ConvGeom {
            channels,
            height,
            width,
            stride,
            out_h: conv_output_size(height, stride),
            out_w: conv_output_size(width, stride),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.channels * KERNEL * KERNEL
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Input index read by patch row `(c, ky, kx)` at output `(oy, ox)`.
    #[inline]
    fn source(&self, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.stride) as isize + ky as isize - PAD;
        let x = (ox * self.stride) as isize + kx as isize - PAD;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some(y as usize * self.width + x as usize)
        }
    }
}

/// Fills `cols` (`patch_len x positions`) from one `c x h x w` image.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.positions();
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = match g.source(ky, kx, oy, ox) {
                            Some(i) => src[i],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto a `c x h x w` image gradient.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let p = g.positions();
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let dst = &mut dx[c * plane..(c + 1) * plane];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        if let Some(i) = g.source(ky, kx, oy, ox) {
                            dst[i] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
