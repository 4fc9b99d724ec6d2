//! The five subcommands. Each writes its artifacts under `io.out_dir` and
//! returns the lines printed to stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use num_complex::Complex64;
use undec::baselines::{self, IstaSettings, WaveletBasis, LAMBDA_GRID};
use undec::construction::{self, PiecewiseLinearSpec};
use undec::generator::{param_count, Arch, GeneratorConfig};
use undec::io;
use undec::operators::{self, KSpaceMask, LinearOperator};
use undec::recovery::{self, fit_with_jobs, RecoveryProblem, RecoveryResult};
use undec::theory::{self, BallSpec, SweepGrid, SweepSettings};
use undec::{phantom, rng, Tensor};

use crate::config::{Check, Command, Measurement, Phantom, RunConfig};

/// Header of every `result.csv`.
/// `lambda` is empty for methods without a regularization weight.
pub const RESULT_HEADER: &str = "method,params,measurements,mse,psnr,wall_time,lambda";

#[derive(Debug)]
pub struct Outcome {
    /// The configuration with every `auto` value resolved; written as `manifest.txt`.
    pub resolved: RunConfig,
    pub report: Vec<String>,
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let out = cfg.io.out_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let mut resolved = cfg.clone();
    let report = match cfg.command {
        Command::Compress => compress(&mut resolved)?,
        Command::Cs => cs(&mut resolved)?,
        Command::Mri => mri(&mut resolved)?,
        Command::Construct => construct(&resolved)?,
        Command::Theory => run_theory(&mut resolved)?,
    };
    io::save_text(out.join("manifest.txt"), &resolved.to_text())?;
    Ok(Outcome { resolved, report })
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.io.out_dir.join(name)
}

fn image_file(stem: &str, image: &Tensor) -> String {
    let rgb = image.shape().len() == 3 && image.shape()[0] == 3;
    format!("{stem}.{}", if rgb { "ppm" } else { "pgm" })
}

/// The input image as `[c, h, w]`: the file when given, else the built-in phantom.
fn input_image(cfg: &RunConfig) -> Result<Tensor> {
    let image = match &cfg.io.image {
        Some(p) => io::load_image(p)?,
        None => builtin_phantom(cfg),
    };
    let shape = image.shape().to_vec();
    let chw = if shape.len() == 2 { vec![1, shape[0], shape[1]] } else { shape };
    Ok(image.reshape(&chw)?)
}

fn builtin_phantom(cfg: &RunConfig) -> Tensor {
    let n = cfg.io.size;
    match cfg.io.phantom {
        Phantom::Shepp => phantom::shepp_logan(n, n),
        Phantom::Smooth => phantom::smooth_image(n, n, cfg.seed),
    }
}

/// Fills in `input_extent` and `out_channels` from a `[c, h, w]` image and
/// checks that the generator output matches it.
fn resolve_generator(cfg: &mut RunConfig, shape: &[usize]) -> Result<GeneratorConfig> {
    let [c, h, w] = *shape else {
        bail!("expected a [channels, height, width] image, got {shape:?}");
    };
    if h != w {
        bail!("generators produce square images; input is {h}×{w}");
    }
    let g = &mut cfg.generator;
    g.spatial_rank = 2;
    if cfg.out_channels_auto {
        g.out_channels = c;
        cfg.out_channels_auto = false;
    }
    if cfg.input_extent_auto {
        let factor = if g.arch.upsamples() { 1usize << (g.depth.max(1) - 1) } else { 1 };
        if w % factor != 0 {
            bail!(
                "image extent {w} is not divisible by 2^(depth−1) = {factor}; choose another depth or set generator.input_extent"
            );
        }
        g.input_extent = w / factor;
        cfg.input_extent_auto = false;
    }
    g.validate()?;
    if g.output_shape() != shape {
        bail!("generator output {:?} does not match the image {shape:?}", g.output_shape());
    }
    Ok(g.clone())
}

fn is_pow2_image(shape: &[usize]) -> bool {
    shape[1..].iter().all(|v| v.is_power_of_two())
}

struct Row {
    method: &'static str,
    params: usize,
    measurements: usize,
    mse: f64,
    psnr: f64,
    wall_time: f64,
    lambda: Option<f64>,
}

fn write_results(cfg: &RunConfig, rows: &[Row]) -> Result<()> {
    let mut s = format!("{RESULT_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{:e},{},{:.3},{}",
            r.method,
            r.params,
            r.measurements,
            r.mse,
            r.psnr,
            r.wall_time,
            r.lambda.map(|l| format!("{l:e}")).unwrap_or_default()
        )
        .unwrap();
    }
    io::save_text(out_path(cfg, "result.csv"), &s)?;
    Ok(())
}

fn describe(rows: &[Row]) -> Vec<String> {
    rows.iter()
        .map(|r| format!("{:<16} PSNR {:7.2} dB  MSE {:.3e}", r.method, r.psnr, r.mse))
        .collect()
}

fn row(method: &'static str, params: usize, measurements: usize, est: &[f64], reference: &[f64], start: Instant) -> Row {
    let mse = recovery::mse(est, reference);
    Row {
        method,
        params,
        measurements,
        mse,
        psnr: recovery::psnr(est, reference, 1.0),
        wall_time: start.elapsed().as_secs_f64(),
        lambda: None,
    }
}

fn fit_decoder(cfg: &RunConfig, problem: &RecoveryProblem) -> Result<RecoveryResult> {
    let result = fit_with_jobs(problem, &cfg.optimizer_settings(), cfg.jobs)?;
    io::save_text(out_path(cfg, "trace.csv"), &result.trace_csv())?;
    io::save_params(out_path(cfg, "params.bin"), &result.params)?;
    Ok(result)
}

fn compress(cfg: &mut RunConfig) -> Result<Vec<String>> {
    let image = input_image(cfg)?;
    let gen = resolve_generator(cfg, image.shape())?;
    let n_params = param_count(&gen);
    let start = Instant::now();
    let problem = RecoveryProblem::compression(gen, &image)?;
    let result = fit_decoder(cfg, &problem)?;
    io::save_image(out_path(cfg, &image_file("decoder", &image)), &result.estimate, 255)?;
    let mut rows = vec![row("decoder", n_params, image.len(), result.estimate.data(), image.data(), start)];
    if is_pow2_image(image.shape()) {
        let start = Instant::now();
        let kept = baselines::threshold_compress(&image, &WaveletBasis::haar(), n_params)?;
        io::save_image(out_path(cfg, &image_file("wavelet", &image)), &kept, 255)?;
        rows.push(row("wavelet_haar", n_params, image.len(), kept.data(), image.data(), start));
    }
    write_results(cfg, &rows)?;
    let mut report = vec![format!(
        "compress: {} parameters for {} pixels (compression factor {:.2})",
        n_params,
        image.len(),
        image.len() as f64 / n_params as f64
    )];
    report.extend(describe(&rows));
    Ok(report)
}

fn dense_operator(kind: Measurement, m: usize, n: usize, seed: u64) -> Result<LinearOperator> {
    let seed = rng::derive(&[seed, 1]);
    Ok(match kind {
        Measurement::Gaussian => operators::make_gaussian(m, n, seed)?,
        Measurement::Rademacher => operators::make_rademacher(m, n, seed)?,
        Measurement::Fourier => unreachable!("handled by the caller"),
    })
}

fn load_or_make_mask(cfg: &RunConfig, width: usize) -> Result<KSpaceMask> {
    let mask = match &cfg.io.mask {
        Some(p) => io::load_mask(p)?,
        None => operators::make_mask(
            width,
            cfg.operator.acceleration,
            cfg.operator.center_fraction,
            rng::derive(&[cfg.seed, 2]),
        )?,
    };
    if mask.width != width {
        bail!("mask has width {} but the k-space has {width} columns", mask.width);
    }
    io::save_mask(out_path(cfg, "mask.txt"), &mask)?;
    Ok(mask)
}

/// ℓ1-wavelet (FISTA, Haar) and TV baselines, with λ fixed or tuned on the grid.
fn baseline_rows(
    cfg: &RunConfig,
    y: &[f64],
    a: &LinearOperator,
    reference: &Tensor,
    rows: &mut Vec<Row>,
    tv: bool,
) -> Result<()> {
    let shape = reference.shape().to_vec();
    let grid: Vec<f64> = match cfg.baseline.lambda {
        Some(l) => vec![l],
        None => LAMBDA_GRID.to_vec(),
    };
    let iterations = cfg.baseline.iterations;
    if is_pow2_image(&shape) {
        let start = Instant::now();
        let (lambda, est, _) = baselines::select_lambda(&grid, reference.data(), cfg.jobs, |lambda| {
            let settings = IstaSettings {
                lambda,
                iterations,
                step: None,
                accelerated: true,
            };
            Ok(baselines::ista_l1(y, a, &shape, &WaveletBasis::haar(), &settings)?.estimate)
        })?;
        io::save_image(out_path(cfg, &image_file("l1_wavelet", reference)), &est, 255)?;
        rows.push(Row {
            lambda: Some(lambda),
            ..row("l1_wavelet", 0, a.m(), est.data(), reference.data(), start)
        });
    }
    if tv {
        let start = Instant::now();
        let (lambda, est, _) = baselines::select_lambda(&grid, reference.data(), cfg.jobs, |lambda| {
            Ok(baselines::tv_recover(y, a, &shape, lambda, iterations)?.estimate)
        })?;
        io::save_image(out_path(cfg, &image_file("tv", reference)), &est, 255)?;
        rows.push(Row {
            lambda: Some(lambda),
            ..row("tv", 0, a.m(), est.data(), reference.data(), start)
        });
    }
    Ok(())
}

fn cs(cfg: &mut RunConfig) -> Result<Vec<String>> {
    let image = input_image(cfg)?;
    let gen = resolve_generator(cfg, image.shape())?;
    let n = image.len();
    let a = match cfg.operator.kind {
        Measurement::Fourier => {
            let [1, h, w] = *image.shape() else {
                bail!("the fourier operator needs a grayscale image");
            };
            operators::make_masked_fourier(h, w, load_or_make_mask(cfg, w)?)?
        }
        kind => {
            let m = cfg.operator.measurements.unwrap_or(n.div_ceil(3));
            if m == 0 {
                bail!("operator.measurements must be positive");
            }
            cfg.operator.measurements = Some(m);
            dense_operator(kind, m, n, cfg.seed)?
        }
    };
    let y = a.apply(image.data())?;
    let n_params = param_count(&gen);
    let start = Instant::now();
    let problem = RecoveryProblem::new(a.clone(), y.clone(), gen, Some(image.clone()))?;
    let result = fit_decoder(cfg, &problem)?;
    io::save_image(out_path(cfg, &image_file("decoder", &image)), &result.estimate, 255)?;
    let mut rows = vec![row("decoder", n_params, a.m(), result.estimate.data(), image.data(), start)];
    let start = Instant::now();
    let adj = Tensor::new(image.shape(), a.adjoint(&y)?)?;
    rows.push(row("adjoint", 0, a.m(), adj.data(), image.data(), start));
    baseline_rows(cfg, &y, &a, &image, &mut rows, true)?;
    write_results(cfg, &rows)?;
    let mut report = vec![format!(
        "cs: {} measurements of {} pixels (n/m = {:.2}), {} parameters",
        a.m(),
        n,
        n as f64 / a.m() as f64,
        n_params
    )];
    report.extend(describe(&rows));
    Ok(report)
}

fn mri(cfg: &mut RunConfig) -> Result<Vec<String>> {
    let (h, w, kspace) = match &cfg.io.kspace {
        Some(p) => io::load_kspace(p)?,
        None => {
            let img = builtin_phantom(cfg);
            let (h, w) = (img.shape()[0], img.shape()[1]);
            let k = operators::dft2_real(img.data(), h, w);
            io::save_kspace(out_path(cfg, "kspace.kspc"), h, w, &k)?;
            (h, w, k)
        }
    };
    let magnitude: Vec<f64> = operators::idft2(&kspace, h, w).iter().map(|v| v.norm()).collect();
    let scale = magnitude.iter().cloned().fold(0.0, f64::max);
    if !(scale > 0.0) {
        bail!("k-space is identically zero");
    }
    // images are fitted and compared on a [0, 1] scale
    let reference = Tensor::new(&[1, h, w], magnitude.iter().map(|v| v / scale).collect())?;
    io::save_image(out_path(cfg, "reference.pgm"), &reference, 65535)?;
    let gen = resolve_generator(cfg, reference.shape())?;
    let mask = load_or_make_mask(cfg, w)?;
    let a = operators::make_masked_fourier(h, w, mask)?;
    let LinearOperator::MaskedFourier(mf) = &a else {
        unreachable!("make_masked_fourier builds a masked Fourier operator");
    };
    let scaled: Vec<Complex64> = kspace.iter().map(|v| v / scale).collect();
    let y = mf.sample(&scaled);

    let start = Instant::now();
    let adj = Tensor::new(&[1, h, w], a.adjoint(&y)?)?;
    io::save_image(out_path(cfg, "zero_fill.pgm"), &adj, 65535)?;
    let mut rows = vec![row("zero_fill", 0, a.m(), adj.data(), reference.data(), start)];

    let n_params = param_count(&gen);
    let start = Instant::now();
    let problem = RecoveryProblem::new(a.clone(), y.clone(), gen, Some(reference.clone()))?;
    let result = fit_decoder(cfg, &problem)?;
    io::save_image(out_path(cfg, "decoder.pgm"), &result.estimate, 65535)?;
    rows.push(row("decoder", n_params, a.m(), result.estimate.data(), reference.data(), start));
    baseline_rows(cfg, &y, &a, &reference, &mut rows, false)?;
    write_results(cfg, &rows)?;
    let mut report = vec![format!(
        "mri: {h}×{w} k-space, {} of {w} columns kept, {} parameters",
        mf.mask().kept_count(),
        n_params
    )];
    report.extend(describe(&rows));
    Ok(report)
}

fn construct(cfg: &RunConfig) -> Result<Vec<String>> {
    let d = cfg.generator.depth;
    if d == 0 || d > 24 {
        bail!("construction depth must lie in 1..=24, got {d}");
    }
    let n = construction::output_len(d);
    let spec = match &cfg.io.spec {
        Some(p) => PiecewiseLinearSpec::from_text(&io::load_text(p)?, n).map_err(|e| anyhow!(e.at(p)))?,
        None => PiecewiseLinearSpec::new(n, vec![(cfg.construct.p, cfg.construct.slope)], 0.0)?,
    };
    let sparse = construction::build_piecewise(&spec, d)?;
    let output = sparse.forward()?;
    let target = spec.evaluate();
    let err = output.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let s = spec.segment_count();
    let bound = s * (d + 1) + s + 1;

    let mut csv = String::from("i,target,output\n");
    for (i, (t, o)) in target.iter().zip(&output).enumerate() {
        writeln!(csv, "{i},{t},{o}").unwrap();
    }
    io::save_text(out_path(cfg, "function.csv"), &csv)?;
    io::save_params(out_path(cfg, "params.bin"), &sparse.params)?;
    io::save_text(
        out_path(cfg, "result.csv"),
        &format!(
            "n,segments,depth,params,nonzero_count,nonzero_bound,max_abs_error\n{n},{s},{d},{},{},{bound},{err:e}\n",
            sparse.params.len(),
            sparse.nonzero_count
        ),
    )?;
    Ok(vec![format!(
        "construct: n = {n}, {s} segments, depth {d}: {} nonzero of {} parameters (bound {bound}), max error {err:.3e}",
        sparse.nonzero_count,
        sparse.params.len()
    )])
}

fn theory_template(cfg: &mut RunConfig, arch: Arch) -> GeneratorConfig {
    let mut g = GeneratorConfig::new(arch, cfg.generator.depth, cfg.generator.channels);
    g.spatial_rank = cfg.generator.spatial_rank;
    g.input_extent = if cfg.input_extent_auto { 4 } else { cfg.generator.input_extent };
    g.input_seed = cfg.generator.input_seed;
    cfg.generator.input_extent = g.input_extent;
    cfg.input_extent_auto = false;
    g
}

fn run_theory(cfg: &mut RunConfig) -> Result<Vec<String>> {
    let t = cfg.theory.clone();
    match t.check {
        Check::Hankel => {
            let dev = theory::hankel_identity_check(t.n, t.ell, t.trials, cfg.seed)?;
            io::save_text(
                out_path(cfg, "result.csv"),
                &format!("check,n,ell,trials,max_deviation\nhankel,{},{},{},{dev:e}\n", t.n, t.ell, t.trials),
            )?;
            Ok(vec![format!(
                "hankel: max deviation {dev:.3e} over {} trials (n = {}, ell = {})",
                t.trials, t.n, t.ell
            )])
        }
        Check::Lipschitz => {
            let g = theory_template(cfg, Arch::Plain);
            let mut csv = String::from("mu,d,xi,bound,max_ratio,pairs,violations\n");
            let mut report = Vec::new();
            for (i, &mu) in t.mu.iter().enumerate() {
                let ball = BallSpec::for_config(&g, mu)?;
                let r = theory::empirical_lipschitz_check(&g, &ball, t.trials, rng::derive(&[cfg.seed, i as u64]))?;
                writeln!(
                    csv,
                    "{mu},{},{},{},{},{},{}",
                    ball.d, ball.xi, r.bound, r.max_ratio, r.pairs, r.violations
                )
                .unwrap();
                report.push(format!(
                    "lipschitz: mu = {mu}, d = {}: max ratio {:.4e}, bound {:.4e}, {} violations in {} pairs",
                    ball.d, r.max_ratio, r.bound, r.violations, r.pairs
                ));
            }
            io::save_text(out_path(cfg, "result.csv"), &csv)?;
            Ok(report)
        }
        Check::Rank => {
            let r = theory::signpattern_rank_check(t.n, t.k, t.ell, t.samples, cfg.seed)?;
            let mut csv = String::from("class,members,rank,checked\n");
            for (i, c) in r.classes.iter().enumerate() {
                writeln!(csv, "{i},{},{},{}", c.members, c.rank, c.members >= r.min_members).unwrap();
            }
            io::save_text(out_path(cfg, "result.csv"), &csv)?;
            Ok(vec![format!(
                "rank: {} sign patterns, {} with at least {} samples; max rank {} (bound {}), {} violations",
                r.classes.len(),
                r.checked().count(),
                r.min_members,
                r.max_checked_rank(),
                r.bound,
                r.violations()
            )])
        }
        Check::Sweep => {
            let template = theory_template(cfg, cfg.generator.arch);
            let grid = SweepGrid {
                n_values: t.n_values.clone(),
                m_values: t.m_values.clone(),
                seeds: t.seeds.clone(),
                target: t.target,
            };
            let recovery = cfg.optimizer_settings();
            let settings = SweepSettings {
                target_fit: undec::recovery::OptimizerSettings {
                    iterations: t.target_iterations,
                    ..recovery.clone()
                },
                recovery,
                jobs: cfg.jobs,
            };
            let records = theory::measurement_sweep(&grid, &template, &settings)?;
            io::save_text(out_path(cfg, "sweep.csv"), &theory::sweep_csv(&records))?;
            let mut csv = String::from("N,m,mean_mse,std_mse\n");
            let mut report = Vec::new();
            for (n, m, mean, std) in theory::sweep_summary(&records) {
                writeln!(csv, "{n},{m},{mean:e},{std:e}").unwrap();
                report.push(format!("sweep: N = {n}, m = {m}: MSE {mean:.3e} ± {std:.1e}"));
            }
            io::save_text(out_path(cfg, "result.csv"), &csv)?;
            Ok(report)
        }
    }
}

/// Loads a config file into `cfg`, naming the file on failure.
pub fn apply_config_file(cfg: &mut RunConfig, path: &Path) -> Result<()> {
    let text = io::load_text(path)?;
    cfg.apply_text(&text).with_context(|| format!("{}", path.display()))
}
