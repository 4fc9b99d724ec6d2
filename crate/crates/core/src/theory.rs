//! Numerical checks of the analytical results: the Lipschitz bound on the
//! μ-ball, the circulant/Hankel identity, the subspace dimension per ReLU sign
//! pattern, and measurement-count sweeps for in-range recovery.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autodiff::{self, Padding};
use crate::error::{Error, Result};
use crate::generator::{self, param_count, Arch, Generator, GeneratorConfig, GeneratorParams};
use crate::operators::{make_gaussian, LinearOperator};
use crate::recovery::{self, fit, normalized_mse, OptimizerSettings, RecoveryProblem};
use crate::rng;
use crate::tensor::{norm, Tensor};

/// Coefficients with `‖C_i‖_F ≤ mu` for every layer, input norm `xi`, and `d`
/// ReLU layers (coefficient blocks `C_0 … C_{d−1}` plus the output weights).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallSpec {
    pub mu: f64,
    pub xi: f64,
    pub d: usize,
}

impl BallSpec {
    pub fn new(mu: f64, xi: f64, d: usize) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite() && xi > 0.0 && xi.is_finite()) {
            return Err(Error::invalid("mu and xi must be positive"));
        }
        Ok(BallSpec { mu, xi, d })
    }

    /// Ball matching a plain generator: `xi = ‖B_0‖_F`, `d = depth − 1`.
    pub fn for_config(config: &GeneratorConfig, mu: f64) -> Result<Self> {
        let xi = generator::InputVolume::for_config(config).norm;
        BallSpec::new(mu, xi, config.depth.saturating_sub(1))
    }
}

/// `ξ·μ^d·d`.
pub fn lipschitz_bound(ball: &BallSpec) -> f64 {
    ball.xi * ball.mu.powi(ball.d as i32) * ball.d as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub pairs: usize,
    pub violations: usize,
}

impl LipschitzReport {
    pub fn slack(&self) -> f64 {
        self.bound / self.max_ratio
    }
}

/// Uniform draw from the Frobenius ball of radius `mu` in `dim` dimensions.
fn sample_ball(r: &mut rng::Rng, dim: usize, mu: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let n = norm(&v);
    let radius = mu * r.random::<f64>().powf(1.0 / dim as f64);
    v.iter_mut().for_each(|x| *x *= radius / n);
    v
}

fn sample_params(config: &GeneratorConfig, r: &mut rng::Rng, mu: f64) -> Result<GeneratorParams> {
    let mut p = GeneratorParams::zeros(config)?;
    let blocks = p.blocks().to_vec();
    for b in blocks {
        let v = sample_ball(r, b.len(), mu);
        p.values_mut()[b.range()].copy_from_slice(&v);
    }
    Ok(p)
}

/// Samples parameter pairs in the ball and returns the largest observed
/// `‖G(C) − G(C′)‖ / ‖C − C′‖`. Half of the pairs are independent draws, the
/// other half are small perturbations that probe the local slope.
pub fn empirical_lipschitz_check(
    config: &GeneratorConfig,
    ball: &BallSpec,
    trials: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    if config.arch != Arch::Plain || config.use_sigmoid || config.use_channel_norm {
        return Err(Error::invalid("the Lipschitz check needs the plain architecture"));
    }
    if config.depth < 2 || ball.d != config.depth - 1 {
        return Err(Error::invalid(format!(
            "ball depth {} must equal the number of ReLU layers ({})",
            ball.d,
            config.depth.saturating_sub(1)
        )));
    }
    let xi = generator::InputVolume::for_config(config).norm;
    if ball.xi < xi * (1.0 - 1e-12) {
        return Err(Error::invalid(format!("xi = {} is below the input norm {xi}", ball.xi)));
    }
    let gen = Generator::new(config)?;
    let bound = lipschitz_bound(ball);
    let mut r = rng::seeded(seed);
    let mut report = LipschitzReport {
        max_ratio: 0.0,
        bound,
        pairs: 0,
        violations: 0,
    };
    for t in 0..trials {
        let a = sample_params(config, &mut r, ball.mu)?;
        let b = if t % 2 == 0 {
            sample_params(config, &mut r, ball.mu)?
        } else {
            let mut b = a.clone();
            let eps = 1e-4 * ball.mu;
            let dim = b.len();
            let delta = sample_ball(&mut r, dim, eps);
            b.values_mut().iter_mut().zip(delta).for_each(|(v, d)| *v += d);
            recovery::project_ball(&mut b, ball.mu);
            b
        };
        let denom = crate::tensor::squared_distance(a.values(), b.values()).sqrt();
        if denom == 0.0 {
            continue;
        }
        let ga = gen.forward(&a)?;
        let gb = gen.forward(&b)?;
        let ratio = crate::tensor::squared_distance(ga.data(), gb.data()).sqrt() / denom;
        report.pairs += 1;
        report.max_ratio = report.max_ratio.max(ratio);
        if ratio > bound {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// The circulant `T(c)`: row `i` holds `c` starting at column `i`, wrapping around.
pub fn circulant(c: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for (j, &cj) in c.iter().enumerate() {
            t[i * n + (i + j) % n] += cj;
        }
    }
    t
}

/// First `ell` columns of the circulant Hankel matrix with first column `v`.
pub fn hankel(v: &[f64], ell: usize) -> Vec<f64> {
    let n = v.len();
    let mut h = vec![0.0; n * ell];
    for i in 0..n {
        for t in 0..ell {
            h[i * ell + t] = v[(i + t) % n];
        }
    }
    h
}

fn matvec(a: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    a.chunks_exact(cols).map(|row| crate::tensor::dot(row, x)).collect()
}

/// Largest deviation among `T(c)·v`, `H(v)·c` and the circular convolution of
/// the engine, with `v = U b` (`U` the 2× upsampling; identity for odd `n`).
pub fn hankel_identity_check(n: usize, ell: usize, trials: usize, seed: u64) -> Result<f64> {
    if ell == 0 || ell > n {
        return Err(Error::invalid(format!("filter length {ell} must lie in [1, {n}]")));
    }
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let c: Vec<f64> = (0..ell).map(|_| r.sample(StandardNormal)).collect();
        let v = if n.is_multiple_of(2) {
            let b: Vec<f64> = (0..n / 2).map(|_| r.sample(StandardNormal)).collect();
            autodiff::upsample2x(&Tensor::new(&[n / 2], b)?)?.into_data()
        } else {
            (0..n).map(|_| r.sample(StandardNormal)).collect()
        };
        let lhs = matvec(&circulant(&c, n), n, &v);
        let rhs = matvec(&hankel(&v, ell), ell, &c);
        let conv = autodiff::conv(
            &Tensor::new(&[n], v.clone())?,
            &Tensor::new(&[ell], c.clone())?,
            Padding::Circular,
        )?;
        for ((a, b), e) in lhs.iter().zip(&rhs).zip(conv.data()) {
            worst = worst.max((a - b).abs()).max((a - e).abs());
        }
    }
    Ok(worst)
}

/// One-layer decoder `relu([Σ_j T(c_ij) U b_j]_i) c_2` together with its sign pattern.
#[derive(Clone, Debug)]
pub struct OneLayerDecoder {
    pub n: usize,
    pub k: usize,
    pub ell: usize,
    /// `k` input channels of length `n/2`.
    pub b: Vec<Vec<f64>>,
}

impl OneLayerDecoder {
    pub fn random(n: usize, k: usize, ell: usize, seed: u64) -> Result<Self> {
        if !n.is_multiple_of(2) || ell == 0 || ell > n || k == 0 {
            return Err(Error::invalid("one-layer decoder needs even n, 1 ≤ ell ≤ n, k ≥ 1"));
        }
        let mut r = rng::seeded(seed);
        let b = (0..k).map(|_| (0..n / 2).map(|_| r.sample(StandardNormal)).collect()).collect();
        Ok(OneLayerDecoder { n, k, ell, b })
    }

    /// `H(U b_j)` for every input channel, stacked as `[H_1 … H_k]` (`n × kℓ`).
    pub fn hankel_stack(&self) -> Result<Vec<f64>> {
        let (n, ell, k) = (self.n, self.ell, self.k);
        let mut out = vec![0.0; n * k * ell];
        for (j, b) in self.b.iter().enumerate() {
            let v = autodiff::upsample2x(&Tensor::new(&[n / 2], b.clone())?)?.into_data();
            let h = hankel(&v, ell);
            for i in 0..n {
                out[i * k * ell + j * ell..i * k * ell + (j + 1) * ell].copy_from_slice(&h[i * ell..(i + 1) * ell]);
            }
        }
        Ok(out)
    }

    /// Output and sign pattern for filters `c1` (`k × k × ℓ`, `[i][j]` is the
    /// filter from input `j` to channel `i`) and output weights `c2`.
    pub fn evaluate(&self, c1: &[f64], c2: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
        let (n, k, ell) = (self.n, self.k, self.ell);
        let hs = self.hankel_stack()?;
        let mut out = vec![0.0; n];
        let mut pattern = vec![false; n * k];
        for i in 0..k {
            let ci = &c1[i * k * ell..(i + 1) * k * ell];
            let pre = matvec(&hs, k * ell, ci);
            for (t, &p) in pre.iter().enumerate() {
                if p > 0.0 {
                    pattern[t * k + i] = true;
                    out[t] += p * c2[i];
                }
            }
        }
        Ok((out, pattern))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternClass {
    pub members: usize,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignPatternReport {
    pub bound: usize,
    pub min_members: usize,
    pub classes: Vec<PatternClass>,
}

impl SignPatternReport {
    /// Classes large enough for their rank to be informative.
    pub fn checked(&self) -> impl Iterator<Item = &PatternClass> {
        self.classes.iter().filter(|c| c.members >= self.min_members)
    }

    pub fn max_checked_rank(&self) -> usize {
        self.checked().map(|c| c.rank).max().unwrap_or(0)
    }

    pub fn violations(&self) -> usize {
        self.checked().filter(|c| c.rank > self.bound).count()
    }
}

/// Singular values below `1e−8·σ_max` count as zero.
pub fn numerical_rank(rows: &[Vec<f64>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let cols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let sv = DMatrix::from_row_slice(rows.len(), cols, &flat).singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-8 * max).count()
}

/// Samples one-layer decoder outputs, groups them by the exact ReLU sign
/// pattern and measures the rank of every group.
///
/// Samples come in clusters: an anchor filter set plus small perturbations,
/// each with fresh output weights, so that patterns repeat often enough.
pub fn signpattern_rank_check(n: usize, k: usize, ell: usize, samples: usize, seed: u64) -> Result<SignPatternReport> {
    let dec = OneLayerDecoder::random(n, k, ell, rng::derive(&[seed, 0]))?;
    let mut r = rng::seeded(rng::derive(&[seed, 1]));
    let dim = k * k * ell;
    let cluster = 4 * dim;
    let mut groups: HashMap<Vec<bool>, Vec<Vec<f64>>> = HashMap::new();
    let mut anchor: Vec<f64> = Vec::new();
    for s in 0..samples {
        if s % cluster == 0 {
            anchor = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        }
        let c1: Vec<f64> = anchor.iter().map(|a| a + 1e-3 * r.sample::<f64, _>(StandardNormal)).collect();
        let c2: Vec<f64> = (0..k).map(|_| r.sample(StandardNormal)).collect();
        let (out, pattern) = dec.evaluate(&c1, &c2)?;
        groups.entry(pattern).or_default().push(out);
    }
    let mut keys: Vec<&Vec<bool>> = groups.keys().collect();
    keys.sort();
    let classes = keys
        .into_iter()
        .map(|key| {
            let rows = &groups[key];
            PatternClass {
                members: rows.len(),
                rank: numerical_rank(rows),
            }
        })
        .collect();
    Ok(SignPatternReport {
        bound: ell * k * k,
        min_members: ell * k * k + 2,
        classes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    /// `G(Ĉ)` where `Ĉ` is the best fit of the generator to fixed noise.
    InRangeNoiseFit,
    /// `G(C)` for coefficients drawn like an initialization.
    InRangeRandom,
    /// The smooth synthetic test image.
    NaturalImage,
}

impl std::str::FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_range_noise_fit" | "noise" => Ok(TargetKind::InRangeNoiseFit),
            "in_range_random" | "random" => Ok(TargetKind::InRangeRandom),
            "natural_image" | "natural" => Ok(TargetKind::NaturalImage),
            _ => Err(Error::invalid(format!("unknown target kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    /// Requested parameter counts; each is matched by choosing the channel count.
    pub n_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub target: TargetKind,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.m_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("sweep grid needs at least one N, m and seed"));
        }
        if self.n_values.contains(&0) || self.m_values.contains(&0) {
            return Err(Error::invalid("sweep grid values must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    /// Optimizer for fitting the target to noise.
    pub target_fit: OptimizerSettings,
    /// Optimizer for recovery from measurements.
    pub recovery: OptimizerSettings,
    pub jobs: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            target_fit: OptimizerSettings {
                iterations: 2000,
                ..Default::default()
            },
            recovery: OptimizerSettings {
                iterations: 10_000,
                ..Default::default()
            },
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    /// Actual parameter count of the generator used.
    pub n_params: usize,
    pub m: usize,
    pub seed: u64,
    pub mse: f64,
    pub normalized_mse: f64,
    pub psnr: f64,
    pub iterations: usize,
    pub wall_time: f64,
}

/// Channel count whose parameter count is closest to `target` (smaller wins ties).
pub fn channels_for_params(template: &GeneratorConfig, target: usize) -> Result<GeneratorConfig> {
    let mut best: Option<(usize, GeneratorConfig)> = None;
    for k in 1..=4096 {
        let mut cfg = template.clone();
        cfg.channels = k;
        let n = param_count(&cfg);
        let gap = n.abs_diff(target);
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, cfg));
        }
        if n > target {
            break;
        }
    }
    let (_, cfg) = best.expect("at least one channel count");
    cfg.validate()?;
    Ok(cfg)
}

/// Target image for one `(N, seed)` pair of the sweep.
pub fn sweep_target(cfg: &GeneratorConfig, kind: TargetKind, seed: u64, fit_settings: &OptimizerSettings) -> Result<Tensor> {
    let shape = cfg.output_shape();
    match kind {
        TargetKind::NaturalImage => {
            let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let img = crate::phantom::smooth_image(h, w, seed);
            Tensor::new(&shape, img.into_data())
        }
        TargetKind::InRangeNoiseFit => {
            let mut r = rng::seeded(rng::derive(&[seed, 0x006e_6f69_7365]));
            let noise = Tensor::new(&shape, (0..cfg.output_len()).map(|_| r.random::<f64>()).collect())?;
            let problem = RecoveryProblem::compression(cfg.clone(), &noise)?;
            let settings = OptimizerSettings {
                init_seed: rng::derive(&[seed, 1]),
                ..fit_settings.clone()
            };
            Ok(fit(&problem, &settings)?.estimate)
        }
        TargetKind::InRangeRandom => {
            let params = generator::init_params(cfg, rng::derive(&[seed, 2]), fit_settings.init_scale)?;
            generator::forward(cfg, &params)
        }
    }
}

/// Recovery from `m` Gaussian measurements for every grid cell.
pub fn measurement_sweep(grid: &SweepGrid, template: &GeneratorConfig, settings: &SweepSettings) -> Result<Vec<SweepRecord>> {
    grid.validate()?;
    let configs: Vec<GeneratorConfig> = grid
        .n_values
        .iter()
        .map(|&n| channels_for_params(template, n))
        .collect::<Result<_>>()?;
    let target_jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| grid.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let targets = crate::parallel::map(&target_jobs, settings.jobs, |&(i, s)| {
        sweep_target(&configs[i], grid.target, rng::derive(&[s, param_count(&configs[i]) as u64]), &settings.target_fit)
    });
    let targets: Vec<Tensor> = targets.into_iter().collect::<Result<_>>()?;
    let cells: Vec<(usize, usize, usize)> = (0..target_jobs.len())
        .flat_map(|t| grid.m_values.iter().map(move |&m| (t, m, 0)))
        .collect();
    let records = crate::parallel::map(&cells, settings.jobs, |&(t, m, _)| {
        let (i, seed) = target_jobs[t];
        run_cell(&configs[i], &targets[t], m, seed, &settings.recovery)
    });
    records.into_iter().collect()
}

/// One recovery trial; the operator and initialization are keyed by `(N, m, seed)`.
pub fn run_cell(cfg: &GeneratorConfig, target: &Tensor, m: usize, seed: u64, opt: &OptimizerSettings) -> Result<SweepRecord> {
    let start = Instant::now();
    let n_params = param_count(cfg);
    let key = [n_params as u64, m as u64, seed];
    let a: LinearOperator = make_gaussian(m, cfg.output_len(), rng::derive(&key))?;
    let y = a.apply(target.data())?;
    let problem = RecoveryProblem::new(a, y, cfg.clone(), Some(target.clone()))?;
    let settings = OptimizerSettings {
        init_seed: rng::derive(&[key[0], key[1], key[2], 1]),
        ..opt.clone()
    };
    let result = fit(&problem, &settings)?;
    let est = result.estimate.data();
    Ok(SweepRecord {
        n_params,
        m,
        seed,
        mse: recovery::mse(est, target.data()),
        normalized_mse: normalized_mse(est, target.data()),
        psnr: recovery::psnr(est, target.data(), 1.0),
        iterations: result.iterations_run,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// CSV with columns `N,m,seed,mse,psnr,iterations,wall_time`.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut s = String::from("N,m,seed,mse,psnr,iterations,wall_time\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{:e},{},{},{:.3}",
            r.n_params, r.m, r.seed, r.mse, r.psnr, r.iterations, r.wall_time
        )
        .unwrap();
    }
    s
}

/// Mean and population standard deviation of the MSE per `(N, m)` cell.
pub fn sweep_summary(records: &[SweepRecord]) -> Vec<(usize, usize, f64, f64)> {
    let mut cells: Vec<(usize, usize)> = records.iter().map(|r| (r.n_params, r.m)).collect();
    cells.sort();
    cells.dedup();
    cells
        .into_iter()
        .map(|(n, m)| {
            let v: Vec<f64> = records.iter().filter(|r| r.n_params == n && r.m == m).map(|r| r.mse).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
            (n, m, mean, var.sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_examples() {
        assert_eq!(lipschitz_bound(&BallSpec::new(1.0, 3.0, 1).unwrap()), 3.0);
        assert_eq!(lipschitz_bound(&BallSpec::new(2.0, 1.0, 3).unwrap()), 24.0);
        assert!(BallSpec::new(0.0, 1.0, 2).is_err());
    }

    #[test]
    fn circulant_and_hankel_match_displayed_patterns() {
        let t = circulant(&[1.0, 2.0, 3.0], 5);
        #[rustfmt::skip]
        let expected = [
            1.0, 2.0, 3.0, 0.0, 0.0,
            0.0, 1.0, 2.0, 3.0, 0.0,
            0.0, 0.0, 1.0, 2.0, 3.0,
            3.0, 0.0, 0.0, 1.0, 2.0,
            2.0, 3.0, 0.0, 0.0, 1.0,
        ];
        assert_eq!(t, expected);
        let h = hankel(&[1.0, 2.0, 3.0, 4.0, 5.0], 3);
        assert_eq!(h, [1.0, 2.0, 3.0, 2.0, 3.0, 4.0, 3.0, 4.0, 5.0, 4.0, 5.0, 1.0, 5.0, 1.0, 2.0]);
    }

    #[test]
    fn impulse_filter_reproduces_signal() {
        let v = [0.5, -1.0, 2.0, 0.25];
        let tv = matvec(&circulant(&[1.0, 0.0], 4), 4, &v);
        assert_eq!(tv, v);
        assert_eq!(matvec(&hankel(&v, 2), 2, &[1.0, 0.0]), v);
    }

    #[test]
    fn hankel_identity_small() {
        assert!(hankel_identity_check(8, 3, 20, 1).unwrap() < 1e-12);
        assert!(hankel_identity_check(7, 7, 20, 2).unwrap() < 1e-12);
        assert!(hankel_identity_check(4, 5, 1, 0).is_err());
    }

    #[test]
    fn zero_parameters_give_rank_zero() {
        let dec = OneLayerDecoder::random(16, 2, 3, 0).unwrap();
        let (out, pattern) = dec.evaluate(&[0.0; 12], &[0.0; 2]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(pattern.iter().all(|&p| !p));
        assert_eq!(numerical_rank(&[out.clone(), out]), 0);
    }

    #[test]
    fn single_filter_class_is_one_dimensional() {
        // k = ℓ = 1 with c_2 = 1: every output in a class is a multiple of one vector
        let dec = OneLayerDecoder::random(16, 1, 1, 4).unwrap();
        let mut groups: HashMap<Vec<bool>, Vec<Vec<f64>>> = HashMap::new();
        for c in [0.3, 1.0, 2.5, -0.7, -2.0] {
            let (out, pat) = dec.evaluate(&[c], &[1.0]).unwrap();
            groups.entry(pat).or_default().push(out);
        }
        assert!(groups.values().all(|rows| numerical_rank(rows) <= 1));
    }

    #[test]
    fn rank_report_small() {
        let rep = signpattern_rank_check(16, 1, 2, 200, 3).unwrap();
        assert_eq!(rep.bound, 2);
        assert!(rep.checked().count() > 0);
        assert_eq!(rep.violations(), 0);
    }

    #[test]
    fn channel_matching() {
        let mut t = GeneratorConfig::new(Arch::I, 3, 1);
        t.input_extent = 4;
        for target in [30, 100, 500] {
            let cfg = channels_for_params(&t, target).unwrap();
            let n = param_count(&cfg);
            for k in [cfg.channels.saturating_sub(1).max(1), cfg.channels + 1] {
                let mut other = t.clone();
                other.channels = k;
                assert!(param_count(&other).abs_diff(target) >= n.abs_diff(target));
            }
        }
    }

    #[test]
    fn lipschitz_rejects_wrong_arch_and_depth() {
        let cfg = GeneratorConfig::new(Arch::I, 3, 2);
        assert!(empirical_lipschitz_check(&cfg, &BallSpec::new(1.0, 1.0, 2).unwrap(), 2, 0).is_err());
        let mut plain = GeneratorConfig::new(Arch::Plain, 3, 2);
        plain.input_extent = 4;
        let ball = BallSpec::for_config(&plain, 1.0).unwrap();
        assert_eq!(ball.d, 2);
        assert!(empirical_lipschitz_check(&plain, &BallSpec { d: 3, ..ball }, 2, 0).is_err());
        assert!(empirical_lipschitz_check(&plain, &ball, 10, 0).unwrap().violations == 0);
    }
}
