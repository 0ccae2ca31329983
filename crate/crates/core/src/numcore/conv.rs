//! Direct 2-D convolution kernels on NCHW buffers.
//!
//! A convolution maps a "big" grid to a "small" grid. The transposed
//! convolution is the adjoint map, so three loops cover both ops and their
//! gradients:
//!
//! | quantity                  | kernel            |
//! |---------------------------|-------------------|
//! | conv forward              | [`correlate`]     |
//! | conv grad wrt input       | [`scatter`]       |
//! | conv grad wrt weight      | [`weight_grad`]   |
//! | tconv forward             | [`scatter`]       |
//! | tconv grad wrt input      | [`correlate`]     |
//! | tconv grad wrt weight     | [`weight_grad`] (big = output grad) |

use alloc::vec;
use alloc::vec::Vec;

/// Geometry shared by a convolution and its transpose.
///
/// Weights are laid out `[c_small, c_big, k, k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_big: usize,
    pub h_big: usize,
    pub w_big: usize,
    pub c_small: usize,
    pub h_small: usize,
    pub w_small: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output extent of a strided convolution over `n` samples, if the
    /// kernel fits.
    pub fn conv_out(n: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = n + 2 * pad;
        (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
    }

    pub fn big_len(&self) -> usize {
        self.batch * self.c_big * self.h_big * self.w_big
    }

    pub fn small_len(&self) -> usize {
        self.batch * self.c_small * self.h_small * self.w_small
    }

    pub fn weight_len(&self) -> usize {
        self.c_small * self.c_big * self.kernel * self.kernel
    }

    /// Range of small-grid indices `o` with `o * stride + k - pad` inside
    /// `[0, big)`.
    #[inline]
    fn valid(&self, k: usize, big: usize, small: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        if big + p <= k {
            return (0, 0);
        }
        let hi = ((big - 1 + p - k) / s + 1).min(small);
        (lo.min(hi), hi)
    }
}

/// Patch matrix of one batch element: row `(i·k + ky)·k + kx`, column
/// `y·w_small + x` holds `big[i, y·s + ky − p, x·s + kx − p]` (zero outside).
fn im2col(plane: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (k, hb, wb, hs, ws) = (g.kernel, g.h_big, g.w_big, g.h_small, g.w_small);
    cols.fill(0.0);
    for i in 0..g.c_big {
        let src = &plane[i * hb * wb..][..hb * wb];
        for ky in 0..k {
            let (y0, y1) = g.valid(ky, hb, hs);
            for kx in 0..k {
                let (x0, x1) = g.valid(kx, wb, ws);
                let row = &mut cols[((i * k + ky) * k + kx) * hs * ws..][..hs * ws];
                for y in y0..y1 {
                    let iy = y * g.stride + ky - g.pad;
                    let line = &src[iy * wb..][..wb];
                    let out = &mut row[y * ws..][..ws];
                    for x in x0..x1 {
                        out[x] = line[x * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

/// Adds a patch matrix back onto the big grid; adjoint of [`im2col`].
fn col2im(cols: &[f64], g: &ConvGeom, plane: &mut [f64]) {
    let (k, hb, wb, hs, ws) = (g.kernel, g.h_big, g.w_big, g.h_small, g.w_small);
    for i in 0..g.c_big {
        let dst = &mut plane[i * hb * wb..][..hb * wb];
        for ky in 0..k {
            let (y0, y1) = g.valid(ky, hb, hs);
            for kx in 0..k {
                let (x0, x1) = g.valid(kx, wb, ws);
                let row = &cols[((i * k + ky) * k + kx) * hs * ws..][..hs * ws];
                for y in y0..y1 {
                    let iy = y * g.stride + ky - g.pad;
                    let line = &mut dst[iy * wb..][..wb];
                    let src = &row[y * ws..][..ws];
                    for x in x0..x1 {
                        line[x * g.stride + kx - g.pad] += src[x];
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `small[n, o, y, x] = Σ w[o, i, ky, kx] · big[n, i, y·s + ky − p, x·s + kx − p]`.
pub fn correlate(big: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut small = vec![0.0; g.small_len()];
    let (rows, plane) = (g.c_big * g.kernel * g.kernel, g.h_small * g.w_small);
    let big_plane = g.c_big * g.h_big * g.w_big;
    let mut cols = vec![0.0; rows * plane];
    for n in 0..g.batch {
        im2col(&big[n * big_plane..][..big_plane], g, &mut cols);
        for o in 0..g.c_small {
            let out = &mut small[(n * g.c_small + o) * plane..][..plane];
            for (r, &wv) in weight[o * rows..][..rows].iter().enumerate() {
                if wv != 0.0 {
                    axpy(out, wv, &cols[r * plane..][..plane]);
                }
            }
        }
    }
    small
}

/// Adjoint of [`correlate`] with respect to `big`.
pub fn scatter(small: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut big = vec![0.0; g.big_len()];
    let (rows, plane) = (g.c_big * g.kernel * g.kernel, g.h_small * g.w_small);
    let big_plane = g.c_big * g.h_big * g.w_big;
    let mut cols = vec![0.0; rows * plane];
    for n in 0..g.batch {
        cols.fill(0.0);
        for o in 0..g.c_small {
            let src = &small[(n * g.c_small + o) * plane..][..plane];
            for (r, &wv) in weight[o * rows..][..rows].iter().enumerate() {
                if wv != 0.0 {
                    axpy(&mut cols[r * plane..][..plane], wv, src);
                }
            }
        }
        col2im(&cols, g, &mut big[n * big_plane..][..big_plane]);
    }
    big
}

/// Gradient of `⟨small_grad, correlate(big, w)⟩` with respect to `w`.
pub fn weight_grad(big: &[f64], small_grad: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut gw = vec![0.0; g.weight_len()];
    let (rows, plane) = (g.c_big * g.kernel * g.kernel, g.h_small * g.w_small);
    let big_plane = g.c_big * g.h_big * g.w_big;
    let mut cols = vec![0.0; rows * plane];
    for n in 0..g.batch {
        im2col(&big[n * big_plane..][..big_plane], g, &mut cols);
        for o in 0..g.c_small {
            let src = &small_grad[(n * g.c_small + o) * plane..][..plane];
            for (r, acc) in gw[o * rows..][..rows].iter_mut().enumerate() {
                *acc += dot(src, &cols[r * plane..][..plane]);
            }
        }
    }
    gw
}
