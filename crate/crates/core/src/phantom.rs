//! Deterministic synthetic test images.

use rand::Rng as _;

use crate::rng;
use crate::tensor::Tensor;

/// `(intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees)`.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Modified (high-contrast) Shepp-Logan head phantom, values in `[0, 1]`,
/// shape `[h, w]`. Pixel centers span `[−1, 1]`, `y` pointing up.
pub fn shepp_logan(h: usize, w: usize) -> Tensor {
    let mut data = vec![0.0; h * w];
    for r in 0..h {
        let y = 1.0 - (2.0 * r as f64 + 1.0) / h as f64;
        for c in 0..w {
            let x = (2.0 * c as f64 + 1.0) / w as f64 - 1.0;
            let mut v = 0.0;
            for [a0, a, b, x0, y0, phi] in SHEPP_LOGAN {
                let (s, co) = phi.to_radians().sin_cos();
                let (dx, dy) = (x - x0, y - y0);
                let u = dx * co + dy * s;
                let t = -dx * s + dy * co;
                if (u / a).powi(2) + (t / b).powi(2) <= 1.0 {
                    v += a0;
                }
            }
            data[r * w + c] = v.clamp(0.0, 1.0);
        }
    }
    Tensor::from_parts(vec![h, w], data)
}

/// Smooth image in `[0, 1]`: a few Gaussian blobs over a gentle gradient.
pub fn smooth_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let blobs: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            [
                r.random_range(0.15..0.85),
                r.random_range(0.15..0.85),
                r.random_range(0.08..0.25),
                r.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let (gx, gy) = (r.random_range(-0.3..0.3), r.random_range(-0.3..0.3));
    let mut data = vec![0.0; h * w];
    for i in 0..h {
        let y = (i as f64 + 0.5) / h as f64;
        for j in 0..w {
            let x = (j as f64 + 0.5) / w as f64;
            let mut v = gx * (x - 0.5) + gy * (y - 0.5);
            for [cx, cy, s, a] in &blobs {
                v += a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp();
            }
            data[i * w + j] = v;
        }
    }
    let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    data.iter_mut().for_each(|v| *v = 0.1 + 0.8 * (*v - lo) / (hi - lo));
    Tensor::from_parts(vec![h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_range_and_symmetry() {
        let p = shepp_logan(64, 64);
        assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(p.data()[0], 0.0);
        // the skull rim has full intensity
        assert!(p.data().iter().any(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(shepp_logan(64, 64), p);
    }

    #[test]
    fn smooth_image_is_deterministic_and_bounded() {
        let a = smooth_image(32, 32, 1);
        assert_eq!(a, smooth_image(32, 32, 1));
        assert_ne!(a, smooth_image(32, 32, 2));
        assert!(a.data().iter().all(|v| (0.1 - 1e-12..=0.9 + 1e-12).contains(v)));
    }
}
