//! Fitting generator weights to linear measurements `y = A x*`.
//!
//! With `A = I` this is compression: the image is represented by the fitted
//! weights. With fewer measurements than pixels it is compressive sensing and
//! the estimate is `G(Ĉ)`.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::generator::{init_params, BlockKind, Generator, GeneratorConfig, GeneratorParams};
use crate::operators::LinearOperator;
use crate::tensor::Tensor;

/// PSNR reported when the error is exactly zero.
pub const PSNR_CAP: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Adam,
    Gd,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Method::Adam),
            "gd" => Ok(Method::Gd),
            _ => Err(Error::invalid(format!("unknown optimizer `{s}` (expected adam or gd)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Adam => "adam",
            Method::Gd => "gd",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub method: Method,
    pub step_size: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub restarts: usize,
    pub init_seed: u64,
    pub init_scale: f64,
    /// Project every coefficient block onto `‖C_i‖_F ≤ μ` after each step.
    pub ball: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            method: Method::Adam,
            step_size: 0.01,
            iterations: 5000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            restarts: 1,
            init_seed: 0,
            init_scale: 0.1,
            ball: None,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::invalid("Adam moments must lie in [0, 1) and eps must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init scale must be non-negative"));
        }
        if let Some(mu) = self.ball {
            if !(mu > 0.0) {
                return Err(Error::invalid("ball radius must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RecoveryProblem {
    pub operator: LinearOperator,
    pub y: Vec<f64>,
    pub config: GeneratorConfig,
    pub reference: Option<Tensor>,
}

impl RecoveryProblem {
    pub fn new(
        operator: LinearOperator,
        y: Vec<f64>,
        config: GeneratorConfig,
        reference: Option<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        if operator.m() != y.len() {
            return Err(Error::shape(format!(
                "operator has {} rows but {} measurements were given",
                operator.m(),
                y.len()
            )));
        }
        if operator.n() != config.output_len() {
            return Err(Error::shape(format!(
                "operator acts on {} entries but the generator outputs {}",
                operator.n(),
                config.output_len()
            )));
        }
        if let Some(r) = &reference {
            if r.len() != config.output_len() {
                return Err(Error::shape("reference size differs from generator output"));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "in measurements".into(),
            });
        }
        Ok(RecoveryProblem {
            operator,
            y,
            config,
            reference,
        })
    }

    /// `A = I`, `y = target`, with the target as reference.
    pub fn compression(config: GeneratorConfig, target: &Tensor) -> Result<Self> {
        let n = target.len();
        RecoveryProblem::new(LinearOperator::identity(n), target.data().to_vec(), config, Some(target.clone()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub psnr: f64,
}

impl Metrics {
    pub fn between(x: &[f64], reference: &[f64]) -> Self {
        let mse = mse(x, reference);
        Metrics {
            mse,
            psnr: psnr_from_mse(mse, 1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RecoveryResult {
    pub params: GeneratorParams,
    pub estimate: Tensor,
    /// Loss before each update plus the final loss.
    pub loss_trace: Vec<f64>,
    /// Metrics of the iterate matching each loss entry, when a reference exists.
    pub metric_trace: Vec<Metrics>,
    pub metrics: Option<Metrics>,
    pub iterations_run: usize,
    pub wall_time: Duration,
    /// Index of the restart that produced this result.
    pub restart: usize,
}

impl RecoveryResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace is never empty")
    }

    /// CSV with columns `iteration,loss[,mse,psnr]`.
    pub fn trace_csv(&self) -> String {
        let with_metrics = !self.metric_trace.is_empty();
        let mut s = String::from(if with_metrics { "iteration,loss,mse,psnr\n" } else { "iteration,loss\n" });
        for (i, loss) in self.loss_trace.iter().enumerate() {
            if with_metrics {
                let m = self.metric_trace[i];
                writeln!(s, "{i},{loss:e},{:e},{}", m.mse, m.psnr).unwrap();
            } else {
                writeln!(s, "{i},{loss:e}").unwrap();
            }
        }
        s
    }
}

pub fn mse(x: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(x.len(), reference.len());
    crate::tensor::squared_distance(x, reference) / x.len() as f64
}

/// `‖x − x*‖² / ‖x*‖²`.
pub fn normalized_mse(x: &[f64], reference: &[f64]) -> f64 {
    crate::tensor::squared_distance(x, reference) / crate::tensor::dot(reference, reference)
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
    }
}

/// `10·log10(peak² / MSE)` in dB, capped at [`PSNR_CAP`].
pub fn psnr(x: &[f64], reference: &[f64], peak: f64) -> f64 {
    psnr_from_mse(mse(x, reference), peak)
}

/// `‖y − A·G(C)‖²`.
pub fn loss(problem: &RecoveryProblem, params: &GeneratorParams) -> Result<f64> {
    let out = Generator::new(&problem.config)?.forward(params)?;
    let r: Vec<f64> = problem.operator.apply(out.data())?.iter().zip(&problem.y).map(|(a, b)| a - b).collect();
    Ok(crate::tensor::dot(&r, &r))
}

/// Minimizes `‖y − A·G(C)‖²`; with several restarts keeps the lowest final loss.
pub fn fit(problem: &RecoveryProblem, opt: &OptimizerSettings) -> Result<RecoveryResult> {
    fit_with_jobs(problem, opt, 1)
}

/// [`fit`] with restarts spread over up to `jobs` threads. The outcome does not
/// depend on `jobs`.
pub fn fit_with_jobs(problem: &RecoveryProblem, opt: &OptimizerSettings, jobs: usize) -> Result<RecoveryResult> {
    opt.validate()?;
    let generator = Generator::new(&problem.config)?;
    let restarts: Vec<usize> = (0..opt.restarts).collect();
    let runs = crate::parallel::map(&restarts, jobs, |&r| fit_once(&generator, problem, opt, r));
    let mut best: Option<RecoveryResult> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.final_loss() < b.final_loss()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn fit_once(
    generator: &Generator,
    problem: &RecoveryProblem,
    opt: &OptimizerSettings,
    restart: usize,
) -> Result<RecoveryResult> {
    let start = Instant::now();
    let mut params = init_params(&problem.config, opt.init_seed.wrapping_add(restart as u64), opt.init_scale)?;
    if let Some(mu) = opt.ball {
        project_ball(&mut params, mu);
    }
    let reference = problem.reference.as_ref().map(|r| r.data());
    let mut trace = Vec::with_capacity(opt.iterations + 1);
    let mut metric_trace = Vec::new();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for it in 0..=opt.iterations {
        let step = generator.value_and_grad(&params, |out| {
            let (loss, g) = problem.operator.residual_gradient(out.data(), &problem.y)?;
            let seed = Tensor::new(out.shape(), g.into_iter().map(|v| 2.0 * v).collect())?;
            Ok((loss, seed))
        });
        let (loss, output, grad) = match step {
            Ok(s) => s,
            Err(Error::NonFinite { .. }) => return Err(Error::NonFiniteLoss { iteration: it }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        trace.push(loss);
        if let Some(r) = reference {
            metric_trace.push(Metrics::between(output.data(), r));
        }
        if it == opt.iterations {
            let metrics = metric_trace.last().copied();
            return Ok(RecoveryResult {
                params,
                estimate: output,
                loss_trace: trace,
                metric_trace,
                metrics,
                iterations_run: opt.iterations,
                wall_time: start.elapsed(),
                restart,
            });
        }
        let values = params.values_mut();
        match opt.method {
            Method::Gd => {
                for (p, g) in values.iter_mut().zip(&grad) {
                    *p -= opt.step_size * g;
                }
            }
            Method::Adam => {
                b1t *= opt.beta1;
                b2t *= opt.beta2;
                let lr = opt.step_size * (1.0 - b2t).sqrt() / (1.0 - b1t);
                let eps = opt.eps * (1.0 - b2t).sqrt();
                for i in 0..values.len() {
                    let g = grad[i];
                    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
                    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
                    values[i] -= lr * m[i] / (v[i].sqrt() + eps);
                }
            }
        }
        if let Some(mu) = opt.ball {
            project_ball(&mut params, mu);
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Scales each coefficient block `C_i` (including the output layer) into the
/// Frobenius ball of radius `mu`.
pub fn project_ball(params: &mut GeneratorParams, mu: f64) {
    let kinds: Vec<BlockKind> = params
        .blocks()
        .iter()
        .map(|b| b.kind)
        .filter(|k| matches!(k, BlockKind::Coeffs(_) | BlockKind::Filters(_) | BlockKind::Output))
        .collect();
    for kind in kinds {
        let block = params.block_mut(kind).expect("block exists");
        let norm = crate::tensor::norm(block);
        if norm > mu {
            let s = mu / norm;
            block.iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{forward, Arch};
    use crate::operators::make_gaussian;

    fn small_config() -> GeneratorConfig {
        let mut c = GeneratorConfig::new(Arch::I, 3, 4);
        c.input_extent = 4;
        c
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&[0.3, 0.4], &[0.3, 0.4], 1.0), PSNR_CAP);
        let x = [0.1, 0.1, 0.1, 0.1];
        let r = [0.0; 4];
        assert!((psnr(&x, &r, 1.0) - 20.0).abs() < 1e-12);
        let xs: Vec<f64> = x.iter().map(|v| v * 255.0).collect();
        assert!((psnr(&xs, &r, 255.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn loss_of_half_output_against_zero() {
        let cfg = small_config();
        let params = GeneratorParams::zeros(&cfg).unwrap();
        let n = cfg.output_len();
        let p = RecoveryProblem::new(LinearOperator::identity(n), vec![0.0; n], cfg, None).unwrap();
        assert!((loss(&p, &params).unwrap() - 0.25 * n as f64).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let cfg = small_config();
        let target = Tensor::filled(&cfg.output_shape(), 0.3);
        let p = RecoveryProblem::compression(cfg.clone(), &target).unwrap();
        let opt = OptimizerSettings {
            iterations: 0,
            ..Default::default()
        };
        let res = fit(&p, &opt).unwrap();
        let init = init_params(&cfg, 0, 0.1).unwrap();
        assert_eq!(res.params, init);
        assert_eq!(res.loss_trace.len(), 1);
        assert_eq!(res.estimate, forward(&cfg, &init).unwrap());
        assert!((res.loss_trace[0] - loss(&p, &init).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fit_reduces_loss_and_is_deterministic() {
        let cfg = small_config();
        let truth = init_params(&cfg, 77, 1.0).unwrap();
        let x = forward(&cfg, &truth).unwrap();
        let a = make_gaussian(cfg.output_len(), cfg.output_len(), 4).unwrap();
        let y = a.apply(x.data()).unwrap();
        let p = RecoveryProblem::new(a, y, cfg, Some(x)).unwrap();
        let opt = OptimizerSettings {
            iterations: 200,
            restarts: 2,
            ..Default::default()
        };
        let r1 = fit(&p, &opt).unwrap();
        let r2 = fit_with_jobs(&p, &opt, 2).unwrap();
        assert_eq!(r1.params, r2.params);
        assert_eq!(r1.loss_trace, r2.loss_trace);
        assert!(r1.final_loss() < r1.loss_trace[0]);
        assert_eq!(r1.loss_trace.len(), 201);
        assert!(r1.trace_csv().starts_with("iteration,loss,mse,psnr\n0,"));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let cfg = small_config();
        let n = cfg.output_len();
        assert!(RecoveryProblem::new(LinearOperator::identity(n), vec![0.0; n + 1], cfg.clone(), None).is_err());
        assert!(RecoveryProblem::new(LinearOperator::identity(n + 1), vec![0.0; n + 1], cfg, None).is_err());
    }

    #[test]
    fn ball_projection_bounds_coefficients() {
        let cfg = small_config();
        let mut p = init_params(&cfg, 1, 5.0).unwrap();
        project_ball(&mut p, 0.5);
        assert!(p.coefficient_norms().iter().all(|&n| n <= 0.5 + 1e-12));
    }
}
