//! Exact representation of discrete piecewise-linear functions with few
//! nonzero generator parameters.
//!
//! The construction network starts from `B_1 = I_2` and repeatedly applies the
//! truncated linear upsampling `M_i: R^{n} → R^{2n−1}`, so `n_1 = 2` and
//! `n_{i+1} = 2 n_i − 1`. Channel `j` carries a ramp `[0, α, 2α, …]` that is
//! shifted down by the bias of the last hidden layer, giving after the ReLU
//! the rectangular function `α · max(i − p_j, 0)`. The output layer sums the
//! channels with weights ±1 and adds a constant.

use crate::autodiff::{ops, relu};
use crate::error::{Error, Result};
use crate::generator::{self, Arch, BlockKind, GeneratorConfig, GeneratorParams};
use crate::tensor::Tensor;

/// Samples of `initial_value + Σ_j slope_j · max(i − p_j, 0)` on `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinearSpec {
    pub n: usize,
    /// `(breakpoint p_j, slope change)`, breakpoints strictly increasing.
    pub segments: Vec<(usize, f64)>,
    pub initial_value: f64,
}

impl PiecewiseLinearSpec {
    pub fn new(n: usize, segments: Vec<(usize, f64)>, initial_value: f64) -> Result<Self> {
        let spec = PiecewiseLinearSpec {
            n,
            segments,
            initial_value,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("a piecewise-linear spec needs at least one segment"));
        }
        if !self.initial_value.is_finite() || self.segments.iter().any(|(_, s)| !s.is_finite()) {
            return Err(Error::invalid("piecewise-linear spec has a non-finite value"));
        }
        for w in self.segments.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid("breakpoints must be strictly increasing"));
            }
        }
        if let Some(&(p, _)) = self.segments.last() {
            if p >= self.n {
                return Err(Error::invalid(format!("breakpoint {p} outside [0, {})", self.n)));
            }
        }
        Ok(())
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Direct evaluation of the sampled function.
    pub fn evaluate(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.initial_value
                    + self
                        .segments
                        .iter()
                        .map(|&(p, s)| if i > p { s * (i - p) as f64 } else { 0.0 })
                        .sum::<f64>()
            })
            .collect()
    }

    /// Parses lines `p slope`, plus an optional `initial = v` line. `n` is
    /// supplied by the caller (it follows from the depth).
    pub fn from_text(text: &str, n: usize) -> Result<Self> {
        let mut segments = Vec::new();
        let mut initial = 0.0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() != "initial" {
                    return Err(Error::format(format!("line {}: unknown key `{}`", lineno + 1, k.trim())));
                }
                initial = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(format!("line {}: bad initial value", lineno + 1)))?;
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(p), Some(s), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::format(format!("line {}: expected `p slope`", lineno + 1)));
            };
            let p = p
                .parse()
                .map_err(|_| Error::format(format!("line {}: bad breakpoint `{p}`", lineno + 1)))?;
            let s = s
                .parse()
                .map_err(|_| Error::format(format!("line {}: bad slope `{s}`", lineno + 1)))?;
            segments.push((p, s));
        }
        PiecewiseLinearSpec::new(n, segments, initial)
    }
}

/// Generator parameters of the construction architecture and their support size.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseParams {
    pub config: GeneratorConfig,
    pub params: GeneratorParams,
    pub nonzero_count: usize,
}

impl SparseParams {
    fn new(params: GeneratorParams) -> Self {
        let nonzero_count = params.values().iter().filter(|v| v.abs() > 0.0).count();
        SparseParams {
            config: params.config().clone(),
            params,
            nonzero_count,
        }
    }

    pub fn forward(&self) -> Result<Vec<f64>> {
        Ok(generator::forward(&self.config, &self.params)?.into_data())
    }
}

/// Output length `n_d` of a depth-`d` construction network.
pub fn output_len(depth: usize) -> usize {
    (1usize << (depth - 1)) + 1
}

pub fn construction_config(depth: usize, channels: usize) -> GeneratorConfig {
    GeneratorConfig::new(Arch::Construction, depth, channels.max(1))
}

/// Input slope `c_1` that yields a final per-index slope of `alpha_target`.
///
/// Evaluates a unit ramp once through the network and rescales.
pub fn calibrate_slope(depth: usize, alpha_target: f64) -> Result<f64> {
    if depth == 0 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    if !alpha_target.is_finite() {
        return Err(Error::invalid("target slope must be finite"));
    }
    let unit = ramp_params(depth, &[(0, 1.0, 1.0)], 0.0)?;
    let out = generator::forward(unit.config(), &unit)?;
    let slope = out.data()[1] - out.data()[0];
    Ok(alpha_target / slope)
}

/// Rectangular function `slope · max(i − p, 0)` on `n_d` points.
pub fn build_rectangular(depth: usize, p: usize, slope: f64) -> Result<SparseParams> {
    let n = output_len(depth.max(1));
    if p >= n {
        return Err(Error::invalid(format!("kink index {p} outside [0, {n})")));
    }
    build_piecewise(&PiecewiseLinearSpec::new(n, vec![(p, slope)], 0.0)?, depth)
}

/// Network with one channel per segment reproducing `spec` exactly.
pub fn build_piecewise(spec: &PiecewiseLinearSpec, depth: usize) -> Result<SparseParams> {
    spec.validate()?;
    if depth == 0 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    if spec.n != output_len(depth) {
        return Err(Error::invalid(format!(
            "spec has {} points but a depth-{depth} network outputs {}",
            spec.n,
            output_len(depth)
        )));
    }
    if depth == 1 {
        // no hidden layers: G = B_1 c_d + a_d = c_d + a_d
        let target = spec.evaluate();
        let cfg = construction_config(1, spec.segment_count());
        let mut p = GeneratorParams::zeros(&cfg)?;
        let out = p.block_mut(BlockKind::Output).expect("output block");
        out[0] = target[0] - spec.initial_value;
        out[1] = target[1] - spec.initial_value;
        p.block_mut(BlockKind::OutputBias).expect("bias block")[0] = spec.initial_value;
        return Ok(SparseParams::new(p));
    }
    let factor = calibrate_slope(depth, 1.0)?;
    let channels: Vec<(usize, f64, f64)> = spec
        .segments
        .iter()
        .map(|&(p, s)| (p, s.abs() * factor, s.signum()))
        .collect();
    let mut params = ramp_params(depth, &channels, spec.initial_value)?;
    let last_hidden = depth - 2;
    let bias = params.block_mut(BlockKind::Bias(last_hidden)).expect("bias block");
    for (j, &(p, s)) in spec.segments.iter().enumerate() {
        bias[j] -= s.abs() * p as f64;
    }
    Ok(SparseParams::new(params))
}

/// Ramp channels `(p, c_1 entry, output sign)`; zero entries leave the channel
/// fully disconnected.
fn ramp_params(depth: usize, channels: &[(usize, f64, f64)], offset: f64) -> Result<GeneratorParams> {
    let k = channels.len();
    let cfg = construction_config(depth, k);
    let mut p = GeneratorParams::zeros(&cfg)?;
    if depth == 1 {
        let out = p.block_mut(BlockKind::Output).expect("output block");
        out[1] = channels.iter().map(|c| c.1 * c.2).sum();
        p.block_mut(BlockKind::OutputBias).expect("bias block")[0] = offset;
        return Ok(p);
    }
    for (j, &(_, input_slope, sign)) in channels.iter().enumerate() {
        if input_slope == 0.0 {
            continue;
        }
        // C_1 is [2, k]; row 1 picks the second basis vector of B_1
        p.block_mut(BlockKind::Coeffs(0)).expect("coeffs")[k + j] = input_slope;
        for layer in 1..depth - 1 {
            p.block_mut(BlockKind::Coeffs(layer)).expect("coeffs")[j * k + j] = 1.0;
        }
        p.block_mut(BlockKind::Output).expect("output")[j] = sign;
    }
    p.block_mut(BlockKind::OutputBias).expect("bias block")[0] = offset;
    Ok(p)
}

/// Pre-ReLU values `M_i B_i C_i + 1 a_iᵀ` of every hidden layer, evaluated
/// directly from the parameter blocks.
pub fn pre_activations(sparse: &SparseParams) -> Result<Vec<Tensor>> {
    let cfg = &sparse.config;
    let p = &sparse.params;
    let k = cfg.channels;
    let mut x = generator::InputVolume::for_config(cfg).tensor;
    let mut out = Vec::new();
    for layer in 0..cfg.depth.saturating_sub(1) {
        let kin = x.shape()[0];
        let n = x.shape()[1];
        let coeffs = p.block(BlockKind::Coeffs(layer)).expect("coeffs");
        let mixed = ops::channel_mix(x.data(), kin, n, coeffs, k);
        let mut up = ops::interp_truncated(&mixed, k, n);
        let bias = p.block(BlockKind::Bias(layer)).expect("bias");
        let m = 2 * n - 1;
        for (c, b) in bias.iter().enumerate() {
            up[c * m..(c + 1) * m].iter_mut().for_each(|v| *v += b);
        }
        let pre = Tensor::new(&[k, m], up)?;
        x = relu(&pre);
        out.push(pre);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_slope(3, 0.0).unwrap(), 0.0);
        assert_eq!(calibrate_slope(1, 2.5).unwrap(), 2.5);
        // one-shot evaluation agrees with the halving per layer
        for d in 1..8 {
            let c = calibrate_slope(d, 1.0).unwrap();
            assert!((c - 2f64.powi(d as i32 - 1)).abs() < 1e-12, "d={d}: {c}");
        }
    }

    #[test]
    fn zero_slope_is_zero_function_with_no_parameters() {
        let s = build_rectangular(4, 3, 0.0).unwrap();
        assert_eq!(s.nonzero_count, 0);
        assert!(s.forward().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_from_origin() {
        let s = build_rectangular(5, 0, 0.75).unwrap();
        let out = s.forward().unwrap();
        for (i, v) in out.iter().enumerate() {
            assert!((v - 0.75 * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn nine_point_staircase() {
        // d = 4 layers, n_4 = 9 points, kink after index 2
        let s = build_rectangular(4, 2, 0.5).unwrap();
        let out = s.forward().unwrap();
        let expected = [0.0, 0.0, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        assert_eq!(out.len(), 9);
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s.nonzero_count <= 4 + 1);
    }

    #[test]
    fn constant_uses_only_output_bias() {
        let spec = PiecewiseLinearSpec::new(9, vec![(0, 0.0)], 1.25).unwrap();
        let s = build_piecewise(&spec, 4).unwrap();
        assert_eq!(s.nonzero_count, 1);
        assert_eq!(s.params.block(BlockKind::OutputBias).unwrap(), &[1.25]);
        assert!(s.forward().unwrap().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn negative_slope_keeps_preactivations_nonnegative() {
        let spec = PiecewiseLinearSpec::new(17, vec![(0, -1.0), (6, 3.0), (11, -4.5)], 2.0).unwrap();
        let s = build_piecewise(&spec, 5).unwrap();
        let pre = pre_activations(&s).unwrap();
        for layer in &pre[..pre.len() - 1] {
            assert!(layer.data().iter().all(|&v| v >= -1e-12));
        }
        let out = s.forward().unwrap();
        for (a, b) in out.iter().zip(spec.evaluate()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn spec_errors() {
        assert!(build_rectangular(3, 5, 1.0).is_err());
        let spec = PiecewiseLinearSpec::new(9, vec![(1, 1.0)], 0.0).unwrap();
        assert!(build_piecewise(&spec, 3).is_err());
        assert!(PiecewiseLinearSpec::new(9, vec![(3, 1.0), (3, 2.0)], 0.0).is_err());
        assert!(PiecewiseLinearSpec::from_text("1 2 3\n", 9).is_err());
        let parsed = PiecewiseLinearSpec::from_text("# kinks\ninitial = 0.5\n0 1.0\n4 -2\n", 9).unwrap();
        assert_eq!(parsed.segments, vec![(0, 1.0), (4, -2.0)]);
    }
}
