//! im2col / col2im helpers for stride-1 zero-padded 3D cross-correlation.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub k: usize,
    pub pad: usize,
    pub src: [usize; 3],
    pub out: [usize; 3],
}

impl ConvGeom {
    pub fn new(in_c: usize, k: usize, pad: usize, src: [usize; 3]) -> Option<Self> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = src[a] + 2 * pad;
            if padded < k {
                return None;
            }
            out[a] = padded - k + 1;
        }
        Some(ConvGeom { in_c, k, pad, src, out })
    }

    pub fn rows(&self) -> usize {
        self.in_c * self.k.pow(3)
    }

    pub fn out_len(&self) -> usize {
        self.out.iter().product()
    }

    pub fn src_len(&self) -> usize {
        self.src.iter().product()
    }

    /// A 1x1x1 unpadded conv reads its input directly as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    /// For one kernel tap offset along an axis: the output index range whose
    /// source index `o + tap - pad` lies inside the source.
    #[inline]
    fn valid_range(&self, axis: usize, tap: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(tap);
        let hi = (self.src[axis] + self.pad).saturating_sub(tap).min(self.out[axis]);
        (lo, hi.max(lo))
    }
}

/// Fill `col` (`rows x out_len`) from one batch item `x` (`in_c x src_len`).
pub(crate) fn im2col<S: Scalar>(g: &ConvGeom, x: &[S], col: &mut [S]) {
    let [sd, sh, sw] = g.src;
    let [_, oh, ow] = g.out;
    let ol = g.out_len();
    let k = g.k;
    col.fill(S::zero());
    let mut row = 0;
    for c in 0..g.in_c {
        let xc = &x[c * sd * sh * sw..(c + 1) * sd * sh * sw];
        for kz in 0..k {
            let (z0, z1) = g.valid_range(0, kz);
            for ky in 0..k {
                let (y0, y1) = g.valid_range(1, ky);
                for kx in 0..k {
                    let (x0, x1) = g.valid_range(2, kx);
                    let dst = &mut col[row * ol..(row + 1) * ol];
                    if x1 > x0 {
                        for oz in z0..z1 {
                            let iz = oz + kz - g.pad;
                            for oy in y0..y1 {
                                let iy = oy + ky - g.pad;
                                let s = (iz * sh + iy) * sw + x0 + kx - g.pad;
                                let d = (oz * oh + oy) * ow + x0;
                                dst[d..d + (x1 - x0)].copy_from_slice(&xc[s..s + (x1 - x0)]);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-add `col` back into one batch item gradient `dx`.
pub(crate) fn col2im<S: Scalar>(g: &ConvGeom, col: &[S], dx: &mut [S]) {
    let [sd, sh, sw] = g.src;
    let [_, oh, ow] = g.out;
    let ol = g.out_len();
    let k = g.k;
    let mut row = 0;
    for c in 0..g.in_c {
        let dxc = &mut dx[c * sd * sh * sw..(c + 1) * sd * sh * sw];
        for kz in 0..k {
            let (z0, z1) = g.valid_range(0, kz);
            for ky in 0..k {
                let (y0, y1) = g.valid_range(1, ky);
                for kx in 0..k {
                    let (x0, x1) = g.valid_range(2, kx);
                    let src = &col[row * ol..(row + 1) * ol];
                    if x1 > x0 {
                        for oz in z0..z1 {
                            let iz = oz + kz - g.pad;
                            for oy in y0..y1 {
                                let iy = oy + ky - g.pad;
                                let s = (iz * sh + iy) * sw + x0 + kx - g.pad;
                                let d = (oz * oh + oy) * ow + x0;
                                for (t, v) in dxc[s..s + (x1 - x0)].iter_mut().zip(&src[d..d + (x1 - x0)]) {
                                    *t += *v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}
