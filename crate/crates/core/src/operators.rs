//! Measurement operators `A: R^n → R^m` with forward and adjoint application.
//!
//! Complex measurements of the masked Fourier operator are stored as
//! interleaved `(re, im)` pairs, so its real output length is twice the number
//! of acquired k-space samples.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{axpy, dot};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Identity,
    Dense,
    MaskedFourier,
}

/// Column mask for Cartesian k-space undersampling.
///
/// `keep[j]` refers to column `j` in centered order, i.e. after shifting the
/// zero frequency to index `width / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceMask {
    pub width: usize,
    pub keep: Vec<bool>,
    pub acceleration: usize,
    pub center_fraction: f64,
    pub seed: u64,
}

impl KSpaceMask {
    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Centered indices of the fully sampled low-frequency band.
    pub fn center_band(width: usize, center_fraction: f64) -> std::ops::Range<usize> {
        let c = (center_fraction * width as f64).floor() as usize;
        let start = (width - c) / 2;
        start..start + c
    }

    /// Natural (unshifted) DFT column index of centered column `j`.
    pub fn natural_column(&self, j: usize) -> usize {
        (j + self.width - self.width / 2) % self.width
    }

    /// Kept natural-order columns, listed in ascending centered order.
    pub fn kept_natural_columns(&self) -> Vec<usize> {
        (0..self.width)
            .filter(|&j| self.keep[j])
            .map(|j| self.natural_column(j))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {} {}\n", self.width, self.acceleration, self.center_fraction, self.seed);
        for &k in &self.keep {
            s.push_str(if k { "1\n" } else { "0\n" });
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format("empty mask file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::format("mask header must be `width acceleration center_fraction seed`"));
        }
        let bad = |what: &str| Error::format(format!("mask header: bad {what}"));
        let width: usize = fields[0].parse().map_err(|_| bad("width"))?;
        let acceleration: usize = fields[1].parse().map_err(|_| bad("acceleration"))?;
        let center_fraction: f64 = fields[2].parse().map_err(|_| bad("center_fraction"))?;
        let seed: u64 = fields[3].parse().map_err(|_| bad("seed"))?;
        let mut keep = Vec::with_capacity(width);
        for (i, line) in lines.enumerate() {
            match line.trim() {
                "0" => keep.push(false),
                "1" => keep.push(true),
                "" if i >= width => continue,
                other => return Err(Error::format(format!("mask line {}: expected 0 or 1, got `{other}`", i + 2))),
            }
        }
        if keep.len() != width {
            return Err(Error::format(format!("mask has {} entries, header says {width}", keep.len())));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::invalid("mask keeps no columns"));
        }
        Ok(KSpaceMask {
            width,
            keep,
            acceleration,
            center_fraction,
            seed,
        })
    }
}

/// Keeps the `⌊center_fraction·w⌋` center columns and random others until
/// `⌊w/acceleration⌋` columns are kept.
pub fn make_mask(width: usize, acceleration: usize, center_fraction: f64, seed: u64) -> Result<KSpaceMask> {
    if acceleration == 0 {
        return Err(Error::invalid("acceleration must be at least 1"));
    }
    if !(0.0..1.0 / acceleration as f64).contains(&center_fraction) {
        return Err(Error::invalid(format!(
            "center fraction {center_fraction} must lie in [0, 1/{acceleration})"
        )));
    }
    let total = width / acceleration;
    if total == 0 {
        return Err(Error::invalid(format!("width {width} keeps no columns at acceleration {acceleration}")));
    }
    let band = KSpaceMask::center_band(width, center_fraction);
    let mut keep = vec![false; width];
    keep[band.clone()].iter_mut().for_each(|k| *k = true);
    let others: Vec<usize> = (0..width).filter(|j| !band.contains(j)).collect();
    let extra = total.saturating_sub(band.len());
    let mut r = rng::seeded(seed);
    for i in rand::seq::index::sample(&mut r, others.len(), extra) {
        keep[others[i]] = true;
    }
    Ok(KSpaceMask {
        width,
        keep,
        acceleration,
        center_fraction,
        seed,
    })
}

/// Unitary 2D DFT plans for an `h × w` image.
#[derive(Clone)]
pub struct Dft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Dft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dft2({}x{})", self.h, self.w)
    }
}

impl Dft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Dft2 {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.row_fwd, &*self.col_fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.row_inv, &*self.col_inv);
    }

    fn transform(&self, data: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        assert_eq!(data.len(), self.h * self.w);
        rows.process(data);
        let mut column = vec![Complex64::new(0.0, 0.0); self.h];
        for c in 0..self.w {
            for r in 0..self.h {
                column[r] = data[r * self.w + c];
            }
            cols.process(&mut column);
            for r in 0..self.h {
                data[r * self.w + c] = column[r];
            }
        }
        let scale = 1.0 / ((self.h * self.w) as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Unitary DFT of a real image.
pub fn dft2_real(image: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Dft2::new(h, w).forward(&mut data);
    data
}

/// Unitary inverse DFT.
pub fn idft2(kspace: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut data = kspace.to_vec();
    Dft2::new(h, w).inverse(&mut data);
    data
}

#[derive(Clone, Debug)]
pub struct MaskedFourier {
    h: usize,
    w: usize,
    mask: KSpaceMask,
    columns: Vec<usize>,
    dft: Dft2,
}

impl MaskedFourier {
    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn mask(&self) -> &KSpaceMask {
        &self.mask
    }

    /// Samples the kept columns of a full k-space array.
    pub fn sample(&self, kspace: &[Complex64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.h * self.columns.len());
        for r in 0..self.h {
            for &c in &self.columns {
                let v = kspace[r * self.w + c];
                out.push(v.re);
                out.push(v.im);
            }
        }
        out
    }

    /// Zero-filled full k-space from interleaved measurements.
    pub fn zero_fill(&self, y: &[f64]) -> Vec<Complex64> {
        let mut full = vec![Complex64::new(0.0, 0.0); self.h * self.w];
        let kc = self.columns.len();
        for r in 0..self.h {
            for (j, &c) in self.columns.iter().enumerate() {
                let i = 2 * (r * kc + j);
                full[r * self.w + c] = Complex64::new(y[i], y[i + 1]);
            }
        }
        full
    }
}

#[derive(Clone, Debug)]
pub enum LinearOperator {
    Identity { n: usize },
    /// Row-major `m × n` matrix.
    Dense { m: usize, n: usize, data: Vec<f64> },
    MaskedFourier(MaskedFourier),
}

impl LinearOperator {
    pub fn identity(n: usize) -> Self {
        LinearOperator::Identity { n }
    }

    pub fn dense(m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || n == 0 || data.len() != m * n {
            return Err(Error::shape(format!("dense operator needs {m}×{n} entries, got {}", data.len())));
        }
        Ok(LinearOperator::Dense { m, n, data })
    }

    pub fn kind(&self) -> OperatorKind {
        match self {
            LinearOperator::Identity { .. } => OperatorKind::Identity,
            LinearOperator::Dense { .. } => OperatorKind::Dense,
            LinearOperator::MaskedFourier(_) => OperatorKind::MaskedFourier,
        }
    }

    /// Length of the (real) measurement vector.
    pub fn m(&self) -> usize {
        match self {
            LinearOperator::Identity { n } => *n,
            LinearOperator::Dense { m, .. } => *m,
            LinearOperator::MaskedFourier(f) => 2 * f.h * f.columns.len(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            LinearOperator::Identity { n } => *n,
            LinearOperator::Dense { n, .. } => *n,
            LinearOperator::MaskedFourier(f) => f.h * f.w,
        }
    }

    fn check(&self, len: usize, expected: usize, what: &str) -> Result<()> {
        if len != expected {
            return Err(Error::shape(format!("{what} has length {len}, operator expects {expected}")));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len(), self.n(), "input")?;
        Ok(match self {
            LinearOperator::Identity { .. } => x.to_vec(),
            LinearOperator::Dense { n, data, .. } => data.chunks_exact(*n).map(|row| dot(row, x)).collect(),
            LinearOperator::MaskedFourier(f) => {
                let mut k: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                f.dft.forward(&mut k);
                f.sample(&k)
            }
        })
    }

    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y.len(), self.m(), "measurement")?;
        Ok(match self {
            LinearOperator::Identity { .. } => y.to_vec(),
            LinearOperator::Dense { n, data, .. } => {
                let mut out = vec![0.0; *n];
                for (row, &yi) in data.chunks_exact(*n).zip(y) {
                    axpy(yi, row, &mut out);
                }
                out
            }
            LinearOperator::MaskedFourier(f) => {
                let mut full = f.zero_fill(y);
                f.dft.inverse(&mut full);
                full.into_iter().map(|v| v.re).collect()
            }
        })
    }

    /// `(‖Ax − y‖², Aᵀ(Ax − y))`; dense operators do this in one pass over A.
    pub fn residual_gradient(&self, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x.len(), self.n(), "input")?;
        self.check(y.len(), self.m(), "measurement")?;
        match self {
            LinearOperator::Dense { n, data, .. } => {
                let mut grad = vec![0.0; *n];
                let mut loss = 0.0;
                for (row, &yi) in data.chunks_exact(*n).zip(y) {
                    let r = dot(row, x) - yi;
                    loss += r * r;
                    axpy(r, row, &mut grad);
                }
                Ok((loss, grad))
            }
            _ => {
                let r: Vec<f64> = self.apply(x)?.iter().zip(y).map(|(a, b)| a - b).collect();
                let loss = dot(&r, &r);
                Ok((loss, self.adjoint(&r)?))
            }
        }
    }

    /// `‖A‖₂` by power iteration on `AᵀA`.
    pub fn norm_estimate(&self, iterations: usize, seed: u64) -> Result<f64> {
        let mut r = rng::seeded(seed);
        let mut v: Vec<f64> = (0..self.n()).map(|_| r.sample(StandardNormal)).collect();
        let mut sigma2 = 0.0;
        for _ in 0..iterations.max(1) {
            let nv = crate::tensor::norm(&v);
            if nv == 0.0 {
                return Ok(0.0);
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let w = self.adjoint(&self.apply(&v)?)?;
            let next = dot(&v, &w);
            let converged = (next - sigma2).abs() <= 1e-12 * next;
            sigma2 = next;
            v = w;
            if converged {
                break;
            }
        }
        Ok(sigma2.max(0.0).sqrt())
    }
}

/// Dense matrix with iid `N(0, 1/m)` entries.
pub fn make_gaussian(m: usize, n: usize, seed: u64) -> Result<LinearOperator> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("operator dimensions must be positive"));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut r = rng::seeded(seed);
    let data = (0..m * n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r))
        .collect();
    LinearOperator::dense(m, n, data)
}

/// Dense matrix with iid equiprobable `±1` entries (unscaled).
pub fn make_rademacher(m: usize, n: usize, seed: u64) -> Result<LinearOperator> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("operator dimensions must be positive"));
    }
    let mut r = rng::seeded(seed);
    let data = (0..m * n).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
    LinearOperator::dense(m, n, data)
}

/// Kept columns of the unitary 2D DFT of an `h × w` real image.
pub fn make_masked_fourier(h: usize, w: usize, mask: KSpaceMask) -> Result<LinearOperator> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("image extents must be positive"));
    }
    if mask.width != w || mask.keep.len() != w {
        return Err(Error::shape(format!("mask width {} does not match image width {w}", mask.width)));
    }
    if mask.kept_count() == 0 {
        return Err(Error::invalid("mask keeps no columns"));
    }
    let columns = mask.kept_natural_columns();
    Ok(LinearOperator::MaskedFourier(MaskedFourier {
        h,
        w,
        mask,
        columns,
        dft: Dft2::new(h, w),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..len).map(|_| r.sample(StandardNormal)).collect()
    }

    #[test]
    fn gaussian_columns_have_unit_expected_energy() {
        let a = make_gaussian(50, 1000, 3).unwrap();
        let LinearOperator::Dense { data, .. } = &a else { panic!() };
        let mean: f64 = (0..1000)
            .map(|j| (0..50).map(|i| data[i * 1000 + j].powi(2)).sum::<f64>())
            .sum::<f64>()
            / 1000.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
        let b = make_gaussian(50, 1000, 3).unwrap();
        assert_eq!(a.apply(&vec![1.0; 1000]).unwrap(), b.apply(&vec![1.0; 1000]).unwrap());
    }

    #[test]
    fn rademacher_entries_and_row_means() {
        let a = make_rademacher(100, 4096, 5).unwrap();
        let LinearOperator::Dense { data, .. } = &a else { panic!() };
        assert!(data.iter().all(|&v| v == 1.0 || v == -1.0));
        let small = data
            .chunks_exact(4096)
            .filter(|row| (row.iter().sum::<f64>() / 4096.0).abs() < 0.1)
            .count();
        assert!(small >= 95);
    }

    #[test]
    fn mask_counts() {
        let m = make_mask(128, 8, 0.04, 1).unwrap();
        assert_eq!(m.kept_count(), 16);
        assert_eq!(KSpaceMask::center_band(128, 0.04), 61..66);
        assert!(m.keep[61..66].iter().all(|&k| k));
        // the zero frequency sits in the band
        assert_eq!(m.natural_column(64), 0);
        let full = make_mask(37, 1, 0.0, 9).unwrap();
        assert!(full.keep.iter().all(|&k| k));
        assert_eq!(make_mask(128, 8, 0.04, 1).unwrap(), m);
        assert!(make_mask(128, 8, 0.2, 1).is_err());
        assert!(make_mask(128, 0, 0.0, 1).is_err());
        assert!(make_mask(4, 8, 0.0, 1).is_err());
    }

    #[test]
    fn mask_text_roundtrip() {
        let m = make_mask(32, 4, 0.1, 7).unwrap();
        assert_eq!(KSpaceMask::from_text(&m.to_text()).unwrap(), m);
        let mut bad = m.to_text();
        bad.push_str("1\n");
        assert!(KSpaceMask::from_text(&bad).is_err());
        assert!(KSpaceMask::from_text("4 1 0 0\n0\n0\n0\n0\n").is_err());
    }

    #[test]
    fn full_mask_adjoint_inverts() {
        let (h, w) = (6, 10);
        let op = make_masked_fourier(h, w, make_mask(w, 1, 0.0, 0).unwrap()).unwrap();
        let x = random_vec(h * w, 2);
        let back = op.adjoint(&op.apply(&x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }
        let y = op.apply(&x).unwrap();
        assert!((crate::tensor::norm(&y) - crate::tensor::norm(&x)).abs() < 1e-10);
    }

    #[test]
    fn masked_fourier_rejects_bad_masks() {
        let mut m = make_mask(8, 2, 0.0, 0).unwrap();
        assert!(make_masked_fourier(4, 16, m.clone()).is_err());
        m.keep = vec![false; 8];
        assert!(make_masked_fourier(4, 8, m).is_err());
    }

    #[test]
    fn fused_residual_gradient_matches_two_pass() {
        let a = make_gaussian(20, 30, 1).unwrap();
        let x = random_vec(30, 2);
        let y = random_vec(20, 3);
        let (loss, g) = a.residual_gradient(&x, &y).unwrap();
        let r: Vec<f64> = a.apply(&x).unwrap().iter().zip(&y).map(|(p, q)| p - q).collect();
        assert!((loss - dot(&r, &r)).abs() < 1e-10);
        for (p, q) in g.iter().zip(a.adjoint(&r).unwrap()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn norm_estimate_of_identity_and_scaled_fourier() {
        assert!((LinearOperator::identity(9).norm_estimate(50, 0).unwrap() - 1.0).abs() < 1e-12);
        let op = make_masked_fourier(8, 8, make_mask(8, 2, 0.2, 3).unwrap()).unwrap();
        assert!((op.norm_estimate(100, 0).unwrap() - 1.0).abs() < 1e-6);
    }
}
