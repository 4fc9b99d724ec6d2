//! Forward and adjoint kernels for the primitive operations.
//!
//! All spatial kernels view a tensor `[channels, *spatial]` as a stack of
//! `h × w` planes; one-dimensional signals are planes with `h = 1`.

use crate::error::{Error, Result};
use crate::tensor::{axpy, dot};

/// Boundary handling of [`conv`](super::conv).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Periodic extension, `out[i] = Σ_t c[t] x[(i + t) mod n]` (the circulant `T(c)`).
    Circular,
    /// Zero extension with `⌈(ℓ−1)/2⌉` zeros before and `⌊(ℓ−1)/2⌋` after; output extent equals input extent.
    ZeroSame,
}

/// Plane geometry of a channel-first tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Planes {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    /// 1 or 2
    pub spatial_rank: usize,
}

impl Planes {
    pub fn of(shape: &[usize], op: &'static str) -> Result<Self> {
        match shape {
            [c, n] => Ok(Planes {
                channels: *c,
                h: 1,
                w: *n,
                spatial_rank: 1,
            }),
            [c, h, w] => Ok(Planes {
                channels: *c,
                h: *h,
                w: *w,
                spatial_rank: 2,
            }),
            _ => Err(Error::Rank {
                op,
                rank: shape.len(),
            }),
        }
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn shape_with_channels(&self, channels: usize) -> Vec<usize> {
        if self.spatial_rank == 1 {
            vec![channels, self.w]
        } else {
            vec![channels, self.h, self.w]
        }
    }
}

/// Kernel geometry: `kh × kw` taps (kh = 1 for 1D).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps {
    pub kh: usize,
    pub kw: usize,
}

impl Taps {
    pub fn count(&self) -> usize {
        self.kh * self.kw
    }
}

/// One contiguous run `out[i, j0..j0+len] ↔ src[r, s0..s0+len]` for tap `tap`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Segment {
    tap: usize,
    out_start: usize,
    src_start: usize,
    len: usize,
}

fn offset(extent: usize, padding: Padding) -> usize {
    match padding {
        Padding::Circular => 0,
        Padding::ZeroSame => extent / 2, // == ⌈(ℓ−1)/2⌉
    }
}

/// Enumerates the row segments realizing `out[i,j] = Σ_{a,b} k[a,b] src[i+a−oh, j+b−ow]`.
pub(crate) fn segments(h: usize, w: usize, taps: Taps, padding: Padding) -> Vec<Segment> {
    let oh = offset(taps.kh, padding) as isize;
    let ow = offset(taps.kw, padding) as isize;
    let mut out = Vec::with_capacity(taps.count() * h * 2);
    for a in 0..taps.kh {
        for b in 0..taps.kw {
            let tap = a * taps.kw + b;
            let dcol = b as isize - ow;
            for i in 0..h {
                let r = i as isize + a as isize - oh;
                let r = match padding {
                    Padding::ZeroSame if r < 0 || r >= h as isize => continue,
                    Padding::ZeroSame => r as usize,
                    Padding::Circular => r.rem_euclid(h as isize) as usize,
                };
                match padding {
                    Padding::ZeroSame => {
                        let j0 = (-dcol).max(0) as usize;
                        let j1 = (w as isize - dcol).min(w as isize);
                        if j1 as usize > j0 {
                            let len = j1 as usize - j0;
                            out.push(Segment {
                                tap,
                                out_start: i * w + j0,
                                src_start: r * w + (j0 as isize + dcol) as usize,
                                len,
                            });
                        }
                    }
                    Padding::Circular => {
                        let shift = dcol.rem_euclid(w as isize) as usize;
                        // j in [0, w - shift) reads s = j + shift
                        if w - shift > 0 {
                            out.push(Segment {
                                tap,
                                out_start: i * w,
                                src_start: r * w + shift,
                                len: w - shift,
                            });
                        }
                        if shift > 0 {
                            out.push(Segment {
                                tap,
                                out_start: i * w + (w - shift),
                                src_start: r * w,
                                len: shift,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out_plane += Σ_taps k[tap] · shift(src_plane)`.
pub(crate) fn correlate_plane(out: &mut [f64], src: &[f64], kernel: &[f64], segs: &[Segment]) {
    for s in segs {
        let kv = kernel[s.tap];
        if kv == 0.0 {
            continue;
        }
        axpy(
            kv,
            &src[s.src_start..s.src_start + s.len],
            &mut out[s.out_start..s.out_start + s.len],
        );
    }
}

/// Adjoint of [`correlate_plane`] with respect to the source plane.
pub(crate) fn correlate_plane_adjoint(dsrc: &mut [f64], dout: &[f64], kernel: &[f64], segs: &[Segment]) {
    for s in segs {
        let kv = kernel[s.tap];
        if kv == 0.0 {
            continue;
        }
        axpy(
            kv,
            &dout[s.out_start..s.out_start + s.len],
            &mut dsrc[s.src_start..s.src_start + s.len],
        );
    }
}

/// Gradient of [`correlate_plane`] with respect to the kernel, accumulated into `dkernel`.
pub(crate) fn correlate_plane_kernel_grad(dkernel: &mut [f64], dout: &[f64], src: &[f64], segs: &[Segment]) {
    for s in segs {
        dkernel[s.tap] += dot(
            &dout[s.out_start..s.out_start + s.len],
            &src[s.src_start..s.src_start + s.len],
        );
    }
}

/// Multi-channel convolution: `x [ci, *S]`, `k [co, ci, *K]` → `[co, *S]`.
pub(crate) fn conv_full(
    x: &[f64],
    planes: Planes,
    kernel: &[f64],
    co: usize,
    taps: Taps,
    padding: Padding,
) -> Vec<f64> {
    let pl = planes.plane_len();
    let ci = planes.channels;
    let segs = segments(planes.h, planes.w, taps, padding);
    let mut out = vec![0.0; co * pl];
    for o in 0..co {
        let out_plane = &mut out[o * pl..(o + 1) * pl];
        for i in 0..ci {
            let kern = &kernel[(o * ci + i) * taps.count()..(o * ci + i + 1) * taps.count()];
            correlate_plane(out_plane, &x[i * pl..(i + 1) * pl], kern, &segs);
        }
    }
    out
}

pub(crate) fn conv_full_backward(
    x: &[f64],
    planes: Planes,
    kernel: &[f64],
    co: usize,
    taps: Taps,
    padding: Padding,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let pl = planes.plane_len();
    let ci = planes.channels;
    let tc = taps.count();
    let segs = segments(planes.h, planes.w, taps, padding);
    let mut dx = vec![0.0; ci * pl];
    let mut dk = vec![0.0; kernel.len()];
    for o in 0..co {
        let g = &dout[o * pl..(o + 1) * pl];
        for i in 0..ci {
            let idx = (o * ci + i) * tc;
            correlate_plane_adjoint(&mut dx[i * pl..(i + 1) * pl], g, &kernel[idx..idx + tc], &segs);
            correlate_plane_kernel_grad(&mut dk[idx..idx + tc], g, &x[i * pl..(i + 1) * pl], &segs);
        }
    }
    (dx, dk)
}

/// Same kernel applied to every channel independently.
pub(crate) fn conv_depthwise(x: &[f64], planes: Planes, kernel: &[f64], taps: Taps, padding: Padding) -> Vec<f64> {
    let pl = planes.plane_len();
    let segs = segments(planes.h, planes.w, taps, padding);
    let mut out = vec![0.0; x.len()];
    for c in 0..planes.channels {
        correlate_plane(&mut out[c * pl..(c + 1) * pl], &x[c * pl..(c + 1) * pl], kernel, &segs);
    }
    out
}

pub(crate) fn conv_depthwise_backward(
    x: &[f64],
    planes: Planes,
    kernel: &[f64],
    taps: Taps,
    padding: Padding,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let pl = planes.plane_len();
    let segs = segments(planes.h, planes.w, taps, padding);
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kernel.len()];
    for c in 0..planes.channels {
        let g = &dout[c * pl..(c + 1) * pl];
        correlate_plane_adjoint(&mut dx[c * pl..(c + 1) * pl], g, kernel, &segs);
        correlate_plane_kernel_grad(&mut dk, g, &x[c * pl..(c + 1) * pl], &segs);
    }
    (dx, dk)
}

/// Zero insertion `[x1, …, xn] → [x1, 0, x2, 0, …, xn, 0]` along every spatial axis.
pub(crate) fn upsample2x(x: &[f64], planes: Planes) -> Vec<f64> {
    let (h, w) = (planes.h, planes.w);
    let oh = if planes.spatial_rank == 2 { 2 * h } else { 1 };
    let ow = 2 * w;
    let step_h = if planes.spatial_rank == 2 { 2 } else { 1 };
    let mut out = vec![0.0; planes.channels * oh * ow];
    for c in 0..planes.channels {
        for i in 0..h {
            let src = &x[(c * h + i) * w..(c * h + i + 1) * w];
            let row = &mut out[(c * oh + step_h * i) * ow..(c * oh + step_h * i + 1) * ow];
            for (j, &v) in src.iter().enumerate() {
                row[2 * j] = v;
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: gathers the even-index entries.
pub(crate) fn upsample2x_adjoint(dout: &[f64], planes: Planes) -> Vec<f64> {
    let (h, w) = (planes.h, planes.w);
    let oh = if planes.spatial_rank == 2 { 2 * h } else { 1 };
    let ow = 2 * w;
    let step_h = if planes.spatial_rank == 2 { 2 } else { 1 };
    let mut dx = vec![0.0; planes.channels * h * w];
    for c in 0..planes.channels {
        for i in 0..h {
            let row = &dout[(c * oh + step_h * i) * ow..(c * oh + step_h * i + 1) * ow];
            let dst = &mut dx[(c * h + i) * w..(c * h + i + 1) * w];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = row[2 * j];
            }
        }
    }
    dx
}

/// Boundary-truncated linear interpolation `R^n → R^{2n−1}` on 1D channels:
/// even outputs copy the input, odd outputs average the two neighbours.
pub(crate) fn interp_truncated(x: &[f64], channels: usize, n: usize) -> Vec<f64> {
    let m = 2 * n - 1;
    let mut out = vec![0.0; channels * m];
    for c in 0..channels {
        let src = &x[c * n..(c + 1) * n];
        let dst = &mut out[c * m..(c + 1) * m];
        for t in 0..n {
            dst[2 * t] = src[t];
            if t + 1 < n {
                dst[2 * t + 1] = 0.5 * (src[t] + src[t + 1]);
            }
        }
    }
    out
}

pub(crate) fn interp_truncated_adjoint(dout: &[f64], channels: usize, n: usize) -> Vec<f64> {
    let m = 2 * n - 1;
    let mut dx = vec![0.0; channels * n];
    for c in 0..channels {
        let g = &dout[c * m..(c + 1) * m];
        let dst = &mut dx[c * n..(c + 1) * n];
        for t in 0..n {
            let mut v = g[2 * t];
            if t > 0 {
                v += 0.5 * g[2 * t - 1];
            }
            if t + 1 < n {
                v += 0.5 * g[2 * t + 1];
            }
            dst[t] = v;
        }
    }
    dx
}

/// `out[s, p] = Σ_j coeffs[j, s] · x[j, p]` for `x [k, P]`, `coeffs [k, ko]`.
pub(crate) fn channel_mix(x: &[f64], k: usize, p: usize, coeffs: &[f64], ko: usize) -> Vec<f64> {
    assert_eq!(x.len(), k * p);
    assert_eq!(coeffs.len(), k * ko);
    let mut out = vec![0.0; ko * p];
    // SAFETY: pointer/stride pairs describe the row-major buffers whose
    // lengths were asserted above.
    unsafe {
        matrixmultiply::dgemm(
            ko,
            k,
            p,
            1.0,
            coeffs.as_ptr(),
            1,
            ko as isize,
            x.as_ptr(),
            p as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            p as isize,
            1,
        );
    }
    out
}

/// Returns `(dx, dcoeffs)` for [`channel_mix`].
pub(crate) fn channel_mix_backward(
    x: &[f64],
    k: usize,
    p: usize,
    coeffs: &[f64],
    ko: usize,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(dout.len(), ko * p);
    let mut dx = vec![0.0; k * p];
    let mut dc = vec![0.0; k * ko];
    // SAFETY: as in `channel_mix`; all lengths checked.
    unsafe {
        matrixmultiply::dgemm(
            k,
            ko,
            p,
            1.0,
            coeffs.as_ptr(),
            ko as isize,
            1,
            dout.as_ptr(),
            p as isize,
            1,
            0.0,
            dx.as_mut_ptr(),
            p as isize,
            1,
        );
        matrixmultiply::dgemm(
            k,
            p,
            ko,
            1.0,
            x.as_ptr(),
            p as isize,
            1,
            dout.as_ptr(),
            1,
            p as isize,
            0.0,
            dc.as_mut_ptr(),
            ko as isize,
            1,
        );
    }
    (dx, dc)
}

/// Per-channel standardization plus offset: `(z − mean) / sqrt(var + eps) + beta`.
pub(crate) fn channel_norm(x: &[f64], channels: usize, beta: &[f64], eps: f64) -> Vec<f64> {
    let p = x.len() / channels;
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        let z = &x[c * p..(c + 1) * p];
        let (mean, var) = mean_var(z);
        let inv = 1.0 / (var + eps).sqrt();
        for (o, &v) in out[c * p..(c + 1) * p].iter_mut().zip(z) {
            *o = (v - mean) * inv + beta[c];
        }
    }
    out
}

/// Returns `(dz, dbeta)`; differentiates through the mean and the variance.
pub(crate) fn channel_norm_backward(x: &[f64], channels: usize, eps: f64, dout: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = x.len() / channels;
    let pf = p as f64;
    let mut dx = vec![0.0; x.len()];
    let mut dbeta = vec![0.0; channels];
    for c in 0..channels {
        let z = &x[c * p..(c + 1) * p];
        let g = &dout[c * p..(c + 1) * p];
        let (mean, var) = mean_var(z);
        let inv = 1.0 / (var + eps).sqrt();
        let g_sum: f64 = g.iter().sum();
        let gx_sum: f64 = g.iter().zip(z).map(|(gi, zi)| gi * (zi - mean) * inv).sum();
        dbeta[c] = g_sum;
        let g_mean = g_sum / pf;
        let gx_mean = gx_sum / pf;
        for ((d, &gi), &zi) in dx[c * p..(c + 1) * p].iter_mut().zip(g).zip(z) {
            let xhat = (zi - mean) * inv;
            *d = inv * (gi - g_mean - xhat * gx_mean);
        }
    }
    (dx, dbeta)
}

/// Empirical mean and population variance.
pub(crate) fn mean_var(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Logistic function, clamped to the open interval (0, 1) in `f64`.
pub(crate) fn sigmoid(v: f64) -> f64 {
    const UPPER: f64 = 1.0 - f64::EPSILON / 2.0;
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, UPPER)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_same_offsets_are_left_biased() {
        assert_eq!(offset(4, Padding::ZeroSame), 2);
        assert_eq!(offset(3, Padding::ZeroSame), 1);
        assert_eq!(offset(1, Padding::ZeroSame), 0);
        assert_eq!(offset(5, Padding::Circular), 0);
    }

    #[test]
    fn interp_matches_displayed_three_point_example() {
        let out = interp_truncated(&[2.0, 4.0, 8.0], 1, 3);
        assert_eq!(out, vec![2.0, 3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn channel_mix_is_transpose_product() {
        // x: 2 channels × 3 positions, coeffs 2×1
        let x = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        let out = channel_mix(&x, 2, 3, &[1.0, -1.0], 1);
        assert_eq!(out, vec![-9.0, -18.0, -27.0]);
    }
}
