//! Classical comparison methods: wavelet thresholding, ℓ1-wavelet recovery by
//! iterative soft thresholding, and total-variation regularized recovery.

use crate::error::{Error, Result};
use crate::operators::LinearOperator;
use crate::tensor::{dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaveletFamily {
    Haar,
    Cdf97,
}

impl std::str::FromStr for WaveletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(WaveletFamily::Haar),
            "cdf97" => Ok(WaveletFamily::Cdf97),
            _ => Err(Error::invalid(format!("unknown wavelet `{s}` (expected haar or cdf97)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WaveletBasis {
    pub family: WaveletFamily,
    /// Decomposition depth; `None` decomposes as far as the extents allow.
    pub levels: Option<usize>,
}

impl WaveletBasis {
    pub fn haar() -> Self {
        WaveletBasis {
            family: WaveletFamily::Haar,
            levels: None,
        }
    }

    pub fn cdf97() -> Self {
        WaveletBasis {
            family: WaveletFamily::Cdf97,
            levels: None,
        }
    }

    pub fn is_orthonormal(&self) -> bool {
        self.family == WaveletFamily::Haar
    }
}

/// `(channels, h, w)` view of a signal, 1D signals being a single row.
fn planes(shape: &[usize]) -> Result<(usize, usize, usize)> {
    let (c, h, w) = match *shape {
        [w] => (1, 1, w),
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Rank {
                op: "wavelet transform",
                rank: shape.len(),
            })
        }
    };
    if !h.is_power_of_two() || !w.is_power_of_two() || w < 2 {
        return Err(Error::invalid(format!("wavelet transform needs power-of-two extents, got {h}×{w}")));
    }
    Ok((c, h, w))
}

fn resolve_levels(basis: &WaveletBasis, h: usize, w: usize) -> Result<usize> {
    let max = if h == 1 {
        w.trailing_zeros()
    } else {
        h.min(w).trailing_zeros()
    } as usize;
    match basis.levels {
        None => Ok(max),
        Some(l) if l <= max => Ok(l),
        Some(l) => Err(Error::invalid(format!("{l} levels exceed the {max} supported by {h}×{w}"))),
    }
}

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn haar_forward(x: &mut [f64], tmp: &mut [f64]) {
    let half = x.len() / 2;
    for i in 0..half {
        tmp[i] = (x[2 * i] + x[2 * i + 1]) * SQRT_HALF;
        tmp[half + i] = (x[2 * i] - x[2 * i + 1]) * SQRT_HALF;
    }
    x.copy_from_slice(&tmp[..x.len()]);
}

fn haar_inverse(x: &mut [f64], tmp: &mut [f64]) {
    let half = x.len() / 2;
    for i in 0..half {
        tmp[2 * i] = (x[i] + x[half + i]) * SQRT_HALF;
        tmp[2 * i + 1] = (x[i] - x[half + i]) * SQRT_HALF;
    }
    x.copy_from_slice(&tmp[..x.len()]);
}

const CDF97_LIFT: [f64; 4] = [-1.586134342059924, -0.052980118572961, 0.882911075530934, 0.443506852043971];
const CDF97_K: f64 = 1.149604398860241;

// periodic lifting; odd samples are details, even samples approximations
fn cdf97_forward(x: &mut [f64], tmp: &mut [f64]) {
    let n = x.len();
    for (step, &c) in CDF97_LIFT.iter().enumerate() {
        let start = if step % 2 == 0 { 1 } else { 0 };
        for i in (start..n).step_by(2) {
            let left = x[(i + n - 1) % n];
            let right = x[(i + 1) % n];
            x[i] += c * (left + right);
        }
    }
    let half = n / 2;
    for i in 0..half {
        tmp[i] = x[2 * i] * CDF97_K;
        tmp[half + i] = x[2 * i + 1] / CDF97_K;
    }
    x.copy_from_slice(&tmp[..n]);
}

fn cdf97_inverse(x: &mut [f64], tmp: &mut [f64]) {
    let n = x.len();
    let half = n / 2;
    for i in 0..half {
        tmp[2 * i] = x[i] / CDF97_K;
        tmp[2 * i + 1] = x[half + i] * CDF97_K;
    }
    x.copy_from_slice(&tmp[..n]);
    for (step, &c) in CDF97_LIFT.iter().enumerate().rev() {
        let start = if step % 2 == 0 { 1 } else { 0 };
        for i in (start..n).step_by(2) {
            let left = x[(i + n - 1) % n];
            let right = x[(i + 1) % n];
            x[i] -= c * (left + right);
        }
    }
}

fn transform(data: &mut [f64], shape: &[usize], basis: &WaveletBasis, inverse: bool) -> Result<()> {
    let (c, h, w) = planes(shape)?;
    let levels = resolve_levels(basis, h, w)?;
    let step = match (basis.family, inverse) {
        (WaveletFamily::Haar, false) => haar_forward,
        (WaveletFamily::Haar, true) => haar_inverse,
        (WaveletFamily::Cdf97, false) => cdf97_forward,
        (WaveletFamily::Cdf97, true) => cdf97_inverse,
    };
    let mut tmp = vec![0.0; h.max(w)];
    let mut line = vec![0.0; h.max(w)];
    for plane in data.chunks_exact_mut(h * w).take(c) {
        let order: Vec<usize> = if inverse {
            (0..levels).rev().collect()
        } else {
            (0..levels).collect()
        };
        for level in order {
            let ww = w >> level;
            let hh = if h == 1 { 1 } else { h >> level };
            let rows = |plane: &mut [f64], tmp: &mut [f64]| {
                for r in 0..hh {
                    step(&mut plane[r * w..r * w + ww], tmp);
                }
            };
            let cols = |plane: &mut [f64], tmp: &mut [f64], line: &mut [f64]| {
                if hh < 2 {
                    return;
                }
                for col in 0..ww {
                    for r in 0..hh {
                        line[r] = plane[r * w + col];
                    }
                    step(&mut line[..hh], tmp);
                    for r in 0..hh {
                        plane[r * w + col] = line[r];
                    }
                }
            };
            if inverse {
                cols(plane, &mut tmp, &mut line);
                rows(plane, &mut tmp);
            } else {
                rows(plane, &mut tmp);
                cols(plane, &mut tmp, &mut line);
            }
        }
    }
    Ok(())
}

/// Separable multi-level transform; coefficients share the image layout.
pub fn wavelet_forward(image: &Tensor, basis: &WaveletBasis) -> Result<Tensor> {
    let mut out = image.clone();
    transform(out.data_mut(), image.shape(), basis, false)?;
    Ok(out)
}

pub fn wavelet_inverse(coeffs: &Tensor, basis: &WaveletBasis) -> Result<Tensor> {
    let mut out = coeffs.clone();
    transform(out.data_mut(), coeffs.shape(), basis, true)?;
    Ok(out)
}

/// Keeps the `n_keep` largest-magnitude coefficients (lower index wins ties)
/// and inverts.
pub fn threshold_compress(image: &Tensor, basis: &WaveletBasis, n_keep: usize) -> Result<Tensor> {
    let coeffs = wavelet_forward(image, basis)?;
    if n_keep == 0 || n_keep > coeffs.len() {
        return Err(Error::invalid(format!("n_keep {n_keep} outside [1, {}]", coeffs.len())));
    }
    let c = coeffs.data();
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| c[b].abs().total_cmp(&c[a].abs()).then(a.cmp(&b)));
    let mut kept = Tensor::zeros(coeffs.shape());
    for &i in &order[..n_keep] {
        kept.data_mut()[i] = c[i];
    }
    wavelet_inverse(&kept, basis)
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IstaSettings {
    pub lambda: f64,
    pub iterations: usize,
    /// Step size; `None` uses `1/‖A‖²` from a power-iteration estimate.
    pub step: Option<f64>,
    /// Nesterov momentum (FISTA); the objective then need not decrease monotonically.
    pub accelerated: bool,
}

impl Default for IstaSettings {
    fn default() -> Self {
        IstaSettings {
            lambda: 1e-3,
            iterations: 500,
            step: None,
            accelerated: false,
        }
    }
}

/// Result of an iterative baseline: the final iterate and its objective trace.
#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub estimate: Tensor,
    pub objective: Vec<f64>,
}

/// `½‖y − Ax‖² + λ‖Wx‖₁`.
pub fn l1_objective(y: &[f64], a: &LinearOperator, x: &Tensor, basis: &WaveletBasis, lambda: f64) -> Result<f64> {
    let r: Vec<f64> = a.apply(x.data())?.iter().zip(y).map(|(p, q)| p - q).collect();
    let w = wavelet_forward(x, basis)?;
    Ok(0.5 * dot(&r, &r) + lambda * w.data().iter().map(|v| v.abs()).sum::<f64>())
}

/// Iterative soft thresholding on the wavelet coefficients of the estimate,
/// starting from zero. `shape` is the image shape; `W` must be orthonormal.
pub fn ista_l1(
    y: &[f64],
    a: &LinearOperator,
    shape: &[usize],
    basis: &WaveletBasis,
    settings: &IstaSettings,
) -> Result<BaselineResult> {
    if !basis.is_orthonormal() {
        return Err(Error::invalid("soft thresholding in the wavelet domain needs an orthonormal basis"));
    }
    if settings.lambda < 0.0 || !settings.lambda.is_finite() {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let step = match settings.step {
        Some(s) if s > 0.0 => s,
        Some(_) => return Err(Error::invalid("step must be positive")),
        None => 1.0 / a.norm_estimate(200, 0)?.powi(2),
    };
    let mut x = Tensor::zeros(shape);
    if x.len() != a.n() {
        return Err(Error::shape("image shape does not match operator"));
    }
    let mut z = x.clone();
    let mut t: f64 = 1.0;
    let mut objective = vec![l1_objective(y, a, &x, basis, settings.lambda)?];
    let limit = 1e6 * objective[0].max(f64::MIN_POSITIVE);
    for it in 0..settings.iterations {
        let (_, g) = a.residual_gradient(z.data(), y)?;
        let mut v = z.clone();
        v.data_mut().iter_mut().zip(&g).for_each(|(p, gi)| *p -= step * gi);
        let mut w = wavelet_forward(&v, basis)?;
        w.data_mut().iter_mut().for_each(|c| *c = soft_threshold(*c, settings.lambda * step));
        let next = wavelet_inverse(&w, basis)?;
        if settings.accelerated {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            z = next.clone();
            z.data_mut().iter_mut().zip(next.data().iter().zip(x.data())).for_each(|(zi, (n, o))| *zi = n + beta * (n - o));
            t = t_next;
        } else {
            z = next.clone();
        }
        x = next;
        let obj = l1_objective(y, a, &x, basis, settings.lambda)?;
        if !obj.is_finite() || obj > limit {
            return Err(Error::Diverged {
                iteration: it + 1,
                objective: obj,
            });
        }
        objective.push(obj);
    }
    Ok(BaselineResult { estimate: x, objective })
}

/// Smoothing of the absolute value inside the total variation: `√(t² + δ)`.
pub const TV_SMOOTHING: f64 = 1e-6;

/// Forward differences along rows and columns (no wrap-around).
fn tv_terms(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize)) {
    for ch in 0..c {
        let base = ch * h * w;
        for r in 0..h {
            for col in 0..w {
                let i = base + r * w + col;
                if col + 1 < w {
                    f(i, i + 1);
                }
                if r + 1 < h {
                    f(i, i + w);
                }
            }
        }
    }
}

/// Smoothed anisotropic total variation `Σ √((x_j − x_i)² + δ)`.
pub fn tv_smoothed(x: &Tensor) -> Result<f64> {
    let (c, h, w) = tv_planes(x.shape())?;
    let d = x.data();
    let mut s = 0.0;
    tv_terms(c, h, w, |i, j| s += ((d[j] - d[i]).powi(2) + TV_SMOOTHING).sqrt());
    Ok(s)
}

fn tv_planes(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [w] => Ok((1, 1, w)),
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Rank {
            op: "total variation",
            rank: shape.len(),
        }),
    }
}

/// `‖y − Ax‖² + λ·TV(x)`.
pub fn tv_objective(y: &[f64], a: &LinearOperator, x: &Tensor, lambda: f64) -> Result<f64> {
    let r: Vec<f64> = a.apply(x.data())?.iter().zip(y).map(|(p, q)| p - q).collect();
    Ok(dot(&r, &r) + lambda * tv_smoothed(x)?)
}

/// Accelerated gradient descent on the smoothed TV objective, from `Aᵀy`.
pub fn tv_recover(y: &[f64], a: &LinearOperator, shape: &[usize], lambda: f64, iterations: usize) -> Result<BaselineResult> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let (c, h, w) = tv_planes(shape)?;
    if c * h * w != a.n() {
        return Err(Error::shape("image shape does not match operator"));
    }
    let norm = a.norm_estimate(200, 0)?;
    // curvature of the data term plus the largest second derivative of the smoothed TV
    let lipschitz = 2.0 * norm * norm + lambda * 8.0 / TV_SMOOTHING.sqrt();
    let step = 1.0 / lipschitz;
    let mut x = Tensor::new(shape, a.adjoint(y)?)?;
    let mut z = x.clone();
    let mut t: f64 = 1.0;
    let mut objective = vec![tv_objective(y, a, &x, lambda)?];
    let limit = 1e6 * objective[0].max(f64::MIN_POSITIVE);
    for it in 0..iterations {
        let (_, g) = a.residual_gradient(z.data(), y)?;
        let zd = z.data();
        let mut grad: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        tv_terms(c, h, w, |i, j| {
            let diff = zd[j] - zd[i];
            let s = lambda * diff / (diff * diff + TV_SMOOTHING).sqrt();
            grad[j] += s;
            grad[i] -= s;
        });
        let next: Vec<f64> = zd.iter().zip(&grad).map(|(v, g)| v - step * g).collect();
        let next = Tensor::new(shape, next).map_err(|_| Error::Diverged {
            iteration: it + 1,
            objective: f64::INFINITY,
        })?;
        let obj = tv_objective(y, a, &next, lambda)?;
        if !obj.is_finite() || obj > limit {
            return Err(Error::Diverged {
                iteration: it + 1,
                objective: obj,
            });
        }
        // restart momentum whenever the objective goes up
        let restart = obj > *objective.last().expect("non-empty");
        let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let beta = if restart { 0.0 } else { (t - 1.0) / t_next };
        z = next.clone();
        z.data_mut().iter_mut().zip(next.data().iter().zip(x.data())).for_each(|(zi, (n, o))| *zi = n + beta * (n - o));
        t = t_next;
        x = next;
        objective.push(obj);
    }
    Ok(BaselineResult { estimate: x, objective })
}

/// Regularization weights tried when tuning a baseline against a reference.
pub const LAMBDA_GRID: [f64; 7] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

/// Runs `solve` for every λ of `grid` and keeps the estimate with the highest
/// PSNR against `reference`. Returns `(λ, estimate, psnr)`.
pub fn select_lambda(
    grid: &[f64],
    reference: &[f64],
    jobs: usize,
    solve: impl Fn(f64) -> Result<Tensor> + Sync,
) -> Result<(f64, Tensor, f64)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    let runs = crate::parallel::map(grid, jobs, |&l| solve(l));
    let mut best: Option<(f64, Tensor, f64)> = None;
    for (&lambda, run) in grid.iter().zip(runs) {
        let Ok(est) = run else { continue };
        let p = crate::recovery::psnr(est.data(), reference, 1.0);
        if best.as_ref().is_none_or(|b| p > b.2) {
            best = Some((lambda, est, p));
        }
    }
    best.ok_or_else(|| Error::invalid("every lambda in the grid diverged"))
}
