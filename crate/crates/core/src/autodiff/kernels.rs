//! im2col / col2im lowering for strided "same"-padded 2-D convolution.

use super::Real;

/// Geometry of a convolution from `[channels, h, w]` to `[_, out_h, out_w]`
/// with `out = ceil(in / stride)` and the padding split before/after.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    pub fn same(
        channels: usize,
        (h, w): (usize, usize),
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
    ) -> Self {
        let out_h = h.div_ceil(sh);
        let out_w = w.div_ceil(sw);
        let pad_h = ((out_h - 1) * sh + kh).saturating_sub(h) / 2;
        let pad_w = ((out_w - 1) * sw + kw).saturating_sub(w) / 2;
        ConvGeom {
            channels,
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            out_h,
            out_w,
            pad_h,
            pad_w,
        }
    }

    /// Rows of the lowered matrix: `channels * kh * kw`.
    pub fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Columns of the lowered matrix: `out_h * out_w`.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn src(&self, oy: usize, ky: usize, ox: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.sh + ky).checked_sub(self.pad_h)?;
        let x = (ox * self.sw + kx).checked_sub(self.pad_w)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.positions();
    let mut cols = vec![T::zero(); g.patch() * p];
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        if let Some((y, xx)) = g.src(oy, ky, ox, kx) {
                            dst[oy * g.out_w + ox] = plane[y * g.w + xx];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an input plane.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom, out: &mut [T]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        if let Some((y, xx)) = g.src(oy, ky, ox, kx) {
                            let v = &mut plane[y * g.w + xx];
                            *v = *v + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
