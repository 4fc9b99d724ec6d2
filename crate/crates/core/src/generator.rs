//! Convolutional generator architectures.
//!
//! A generator maps a fixed random input volume `B_1` (`k` channels of
//! extent `n_1` per spatial dimension) through `d − 1` blocks to an image.
//! Each block mixes channels with learnable coefficients (or learnable
//! filters), optionally upsamples by zero insertion, convolves, applies a
//! ReLU and optionally a channel normalization. A final linear layer maps the
//! `k` channels to `k_out` output channels, optionally followed by a sigmoid.
//!
//! | arch           | upsampling       | convolution                       |
//! |----------------|------------------|-----------------------------------|
//! | `I`            | zero insertion   | fixed 4-tap interpolation kernel  |
//! | `II`           | zero insertion   | learned `ℓ`-tap filters           |
//! | `III`          | none             | fixed 4-tap interpolation kernel  |
//! | `IV`           | none             | learned `ℓ`-tap filters           |
//! | `Plain`        | zero insertion   | fixed kernel at unit operator norm, no normalization or sigmoid |
//! | `Construction` | truncated linear `R^n → R^{2n−1}` | biases instead of normalization (1D only) |

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::autodiff::{ops, Graph, NodeId, Padding, CHANNEL_NORM_EPS};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    I,
    II,
    III,
    IV,
    Construction,
    Plain,
}

impl Arch {
    pub const ALL: [Arch; 6] = [Arch::I, Arch::II, Arch::III, Arch::IV, Arch::Construction, Arch::Plain];

    pub fn name(self) -> &'static str {
        match self {
            Arch::I => "i",
            Arch::II => "ii",
            Arch::III => "iii",
            Arch::IV => "iv",
            Arch::Construction => "construction",
            Arch::Plain => "plain",
        }
    }

    /// Whether the hidden layers double the spatial extent.
    pub fn upsamples(self) -> bool {
        matches!(self, Arch::I | Arch::II | Arch::Plain)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown architecture `{s}`")))
    }
}

/// Architecture description. Shapes of [`GeneratorParams`] follow from it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub arch: Arch,
    /// Number of layers `d`: `d − 1` blocks plus the linear output layer.
    pub depth: usize,
    pub channels: usize,
    pub out_channels: usize,
    /// `n_1`, per spatial dimension.
    pub input_extent: usize,
    pub spatial_rank: usize,
    pub kernel_extent: usize,
    pub use_sigmoid: bool,
    pub use_channel_norm: bool,
    pub input_seed: u64,
}

pub const FIXED_KERNEL_TAPS: [f64; 4] = [1.0, 3.0, 3.0, 1.0];

impl GeneratorConfig {
    /// Configuration with the defaults of `arch`.
    pub fn new(arch: Arch, depth: usize, channels: usize) -> Self {
        let mut cfg = GeneratorConfig {
            arch,
            depth,
            channels,
            out_channels: 1,
            input_extent: 4,
            spatial_rank: 2,
            kernel_extent: 4,
            use_sigmoid: true,
            use_channel_norm: true,
            input_seed: 0,
        };
        match arch {
            Arch::Plain => {
                cfg.use_sigmoid = false;
                cfg.use_channel_norm = false;
            }
            Arch::Construction => {
                cfg.use_sigmoid = false;
                cfg.use_channel_norm = false;
                cfg.spatial_rank = 1;
                cfg.input_extent = 2;
                cfg.kernel_extent = 3;
            }
            _ => {}
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.channels == 0 {
            return bad("channels must be at least 1".into());
        }
        if !matches!(self.out_channels, 1 | 3) {
            return bad(format!("out_channels must be 1 or 3, got {}", self.out_channels));
        }
        if !matches!(self.spatial_rank, 1 | 2) {
            return bad(format!("spatial_rank must be 1 or 2, got {}", self.spatial_rank));
        }
        if self.input_extent == 0 || self.kernel_extent == 0 {
            return bad("input_extent and kernel_extent must be positive".into());
        }
        match self.arch {
            Arch::I | Arch::III | Arch::Plain if self.kernel_extent != 4 => {
                return bad(format!("arch {} uses the fixed 4-tap kernel", self.arch));
            }
            Arch::Plain if self.use_channel_norm || self.use_sigmoid => {
                return bad("arch plain has no channel normalization and no sigmoid".into());
            }
            Arch::Construction => {
                if self.spatial_rank != 1 || self.input_extent != 2 || self.out_channels != 1 {
                    return bad("arch construction is 1D with n_1 = 2 and one output channel".into());
                }
                if self.use_channel_norm || self.use_sigmoid {
                    return bad("arch construction has no channel normalization and no sigmoid".into());
                }
            }
            _ => {}
        }
        if self.depth > 1 && !matches!(self.arch, Arch::Construction) {
            let first = self.input_extent * if self.arch.upsamples() { 2 } else { 1 };
            if self.kernel_extent > first {
                return bad(format!(
                    "kernel extent {} exceeds first-layer extent {}",
                    self.kernel_extent, first
                ));
            }
        }
        Ok(())
    }

    /// Output extent `n_d` per spatial dimension.
    pub fn output_extent(&self) -> usize {
        match self.arch {
            Arch::Construction => (1usize << (self.depth - 1)) + 1,
            a if a.upsamples() => self.input_extent << (self.depth - 1),
            _ => self.input_extent,
        }
    }

    /// Shape `[k_out, *spatial]` of the generated image.
    pub fn output_shape(&self) -> Vec<usize> {
        let n = self.output_extent();
        let mut s = vec![self.out_channels];
        s.extend(std::iter::repeat_n(n, self.spatial_rank));
        s
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    /// Input channels of the construction arch (`B_1 = I_2`).
    fn input_channels(&self) -> usize {
        match self.arch {
            Arch::Construction => 2,
            _ => self.channels,
        }
    }

    /// Sets one field from its text form; used by the config file parsers.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "arch" => {
                let arch: Arch = v.parse()?;
                if arch != self.arch {
                    let keep = self.clone();
                    *self = GeneratorConfig::new(arch, keep.depth, keep.channels);
                    self.out_channels = keep.out_channels;
                    self.input_seed = keep.input_seed;
                }
            }
            "depth" => self.depth = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "out_channels" => self.out_channels = parse(key, v)?,
            "input_extent" => self.input_extent = parse(key, v)?,
            "spatial_rank" => self.spatial_rank = parse(key, v)?,
            "kernel_extent" => self.kernel_extent = parse(key, v)?,
            "use_sigmoid" => self.use_sigmoid = parse(key, v)?,
            "use_channel_norm" => self.use_channel_norm = parse(key, v)?,
            "input_seed" => self.input_seed = parse(key, v)?,
            other => return Err(Error::invalid(format!("unknown generator key `{other}`"))),
        }
        Ok(())
    }

    /// `key = value` lines, one per field.
    pub fn to_text(&self) -> String {
        format!(
            "arch = {}\ndepth = {}\nchannels = {}\nout_channels = {}\ninput_extent = {}\n\
             spatial_rank = {}\nkernel_extent = {}\nuse_sigmoid = {}\nuse_channel_norm = {}\ninput_seed = {}\n",
            self.arch,
            self.depth,
            self.channels,
            self.out_channels,
            self.input_extent,
            self.spatial_rank,
            self.kernel_extent,
            self.use_sigmoid,
            self.use_channel_norm,
            self.input_seed
        )
    }

    /// Parses the output of [`to_text`](Self::to_text). `arch` must come first
    /// when present since it resets architecture-dependent defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = GeneratorConfig::new(Arch::I, 1, 1);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("bad value `{v}` for `{}`", key.trim())))
}

/// Closed-form number of trainable scalars.
pub fn param_count(config: &GeneratorConfig) -> usize {
    let d = config.depth;
    let k = config.channels;
    let ko = config.out_channels;
    let blocks = d - 1;
    let betas = if config.use_channel_norm { blocks * k } else { 0 };
    match config.arch {
        Arch::I | Arch::III | Arch::Plain => blocks * k * k + betas + k * ko,
        Arch::II | Arch::IV => blocks * k * k * config.kernel_extent.pow(config.spatial_rank as u32) + betas + k * ko,
        Arch::Construction if d == 1 => 2 * ko + ko,
        Arch::Construction => 2 * k + (d - 2) * k * k + blocks * k + k * ko + ko,
    }
}

/// What a block of the flat parameter vector holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Channel coefficients `C_i`, shape `[k_in, k]`.
    Coeffs(usize),
    /// Learned filters, shape `[k, k, *ℓ]`.
    Filters(usize),
    Beta(usize),
    Bias(usize),
    /// Output weights `C_d`, shape `[k, k_out]`.
    Output,
    OutputBias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Enumerates the parameter blocks of `config` in storage order.
pub fn layout(config: &GeneratorConfig) -> Vec<Block> {
    let k = config.channels;
    let mut blocks = Vec::new();
    let mut offset = 0;
    let mut add = |kind, shape: Vec<usize>| {
        let b = Block { kind, offset, shape };
        offset += b.len();
        blocks.push(b);
    };
    for layer in 0..config.depth - 1 {
        match config.arch {
            Arch::II | Arch::IV => {
                let mut shape = vec![k, k];
                shape.extend(std::iter::repeat_n(config.kernel_extent, config.spatial_rank));
                add(BlockKind::Filters(layer), shape);
            }
            Arch::Construction => {
                let kin = if layer == 0 { config.input_channels() } else { k };
                add(BlockKind::Coeffs(layer), vec![kin, k]);
                add(BlockKind::Bias(layer), vec![k]);
            }
            _ => add(BlockKind::Coeffs(layer), vec![k, k]),
        }
        if config.use_channel_norm {
            add(BlockKind::Beta(layer), vec![k]);
        }
    }
    let last = if config.depth == 1 { config.input_channels() } else { k };
    add(BlockKind::Output, vec![last, config.out_channels]);
    if config.arch == Arch::Construction {
        add(BlockKind::OutputBias, vec![config.out_channels]);
    }
    blocks
}

/// Trainable coefficients of a generator, stored flat in [`layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    config: GeneratorConfig,
    blocks: Vec<Block>,
    values: Vec<f64>,
}

impl GeneratorParams {
    pub fn zeros(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let blocks = layout(config);
        let len = blocks.last().map(|b| b.offset + b.len()).unwrap_or(0);
        Ok(GeneratorParams {
            config: config.clone(),
            blocks,
            values: vec![0.0; len],
        })
    }

    pub fn from_values(config: &GeneratorConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = GeneratorParams::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::shape(format!(
                "{} values for a generator with {} parameters",
                values.len(),
                p.values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "in generator parameters".into(),
            });
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, kind: BlockKind) -> Option<&[f64]> {
        self.blocks.iter().find(|b| b.kind == kind).map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, kind: BlockKind) -> Option<&mut [f64]> {
        let range = self.blocks.iter().find(|b| b.kind == kind)?.range();
        Some(&mut self.values[range])
    }

    /// Frobenius norms of the coefficient matrices `C_1 … C_d` (filters count as
    /// coefficients; betas and biases are excluded).
    pub fn coefficient_norms(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .filter(|b| matches!(b.kind, BlockKind::Coeffs(_) | BlockKind::Filters(_) | BlockKind::Output))
            .map(|b| crate::tensor::norm(&self.values[b.range()]))
            .collect()
    }

    /// Serialized form: a text header with the config, then the values as
    /// little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAMS_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(self.config.to_text().as_bytes());
        out.extend_from_slice(format!("count = {}\ndata\n", self.values.len()).as_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format("unterminated header line in params blob"))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| Error::format("params header is not UTF-8"))?
                .to_string();
            *pos += end + 1;
            Ok(line)
        };
        if next_line(&mut pos)? != PARAMS_MAGIC {
            return Err(Error::format("params blob has a bad magic line"));
        }
        let mut config_text = String::new();
        let mut count = None;
        loop {
            let line = next_line(&mut pos)?;
            if line == "data" {
                break;
            }
            if let Some(c) = line.strip_prefix("count = ") {
                count = Some(c.parse::<usize>().map_err(|_| Error::format("bad count in params blob"))?);
            } else {
                config_text.push_str(&line);
                config_text.push('\n');
            }
        }
        let config = GeneratorConfig::from_text(&config_text)?;
        let count = count.ok_or_else(|| Error::format("params blob lacks a count"))?;
        let payload = &bytes[pos..];
        if payload.len() != count * 8 {
            return Err(Error::format(format!(
                "params payload has {} bytes, expected {}",
                payload.len(),
                count * 8
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        GeneratorParams::from_values(&config, values)
    }
}

const PARAMS_MAGIC: &str = "undec-params v1";

/// Deterministic initialization with entries iid uniform on `[−scale, scale]`.
pub fn init_params(config: &GeneratorConfig, seed: u64, scale: f64) -> Result<GeneratorParams> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::invalid(format!("init scale must be non-negative, got {scale}")));
    }
    let mut p = GeneratorParams::zeros(config)?;
    if scale > 0.0 {
        let mut r = rng::seeded(seed);
        for v in p.values_mut() {
            *v = r.random_range(-scale..=scale);
        }
    }
    Ok(p)
}

/// The fixed input tensor `B_1`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputVolume {
    pub tensor: Tensor,
    /// Frobenius norm `‖B_1‖`.
    pub norm: f64,
}

impl InputVolume {
    /// Uniform `[0, 0.1)` entries from `config.input_seed`; the construction
    /// arch uses the 2×2 identity.
    pub fn for_config(config: &GeneratorConfig) -> Self {
        let tensor = if config.arch == Arch::Construction {
            Tensor::from_parts(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0])
        } else {
            let mut shape = vec![config.channels];
            shape.extend(std::iter::repeat_n(config.input_extent, config.spatial_rank));
            let len = shape.iter().product();
            let mut r = rng::seeded(config.input_seed);
            let data = (0..len).map(|_| r.random_range(0.0..0.1)).collect();
            Tensor::from_parts(shape, data)
        };
        let norm = tensor.norm();
        InputVolume { tensor, norm }
    }
}

/// The fixed interpolation kernel: `(1/16)·[1 3 3 1]ᵀ[1 3 3 1]` in 2D,
/// `(1/4)·[1 3 3 1]` in 1D.
pub fn fixed_kernel(spatial_rank: usize) -> Tensor {
    let v: Vec<f64> = FIXED_KERNEL_TAPS.iter().map(|t| t / 4.0).collect();
    if spatial_rank == 1 {
        Tensor::from_parts(vec![4], v)
    } else {
        let data = v.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        Tensor::from_parts(vec![4, 4], data)
    }
}

/// A configuration with its input volume and per-layer fixed kernels resolved.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    input: InputVolume,
    kernels: Vec<Tensor>,
}

/// Graph of one forward evaluation, with the node of every parameter block.
pub struct ForwardGraph {
    pub graph: Graph,
    pub output: NodeId,
    pub param_nodes: Vec<NodeId>,
}

impl Generator {
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let input = InputVolume::for_config(config);
        let mut kernels = Vec::new();
        if matches!(config.arch, Arch::I | Arch::III | Arch::Plain) {
            let base = fixed_kernel(config.spatial_rank);
            let mut extent = config.input_extent;
            for _ in 0..config.depth.saturating_sub(1) {
                if config.arch == Arch::Plain {
                    let norm = interpolation_operator_norm(&base, config.spatial_rank, extent)?;
                    kernels.push(base.map(|v| v / norm));
                } else {
                    kernels.push(base.clone());
                }
                if config.arch.upsamples() {
                    extent *= 2;
                }
            }
        }
        Ok(Generator {
            config: config.clone(),
            input,
            kernels,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn input(&self) -> &InputVolume {
        &self.input
    }

    /// Kernel used by block `layer` for the fixed-kernel architectures.
    pub fn layer_kernel(&self, layer: usize) -> Option<&Tensor> {
        self.kernels.get(layer)
    }

    pub fn build_graph(&self, params: &GeneratorParams) -> Result<ForwardGraph> {
        if params.config() != &self.config {
            return Err(Error::shape("parameters were built for a different configuration"));
        }
        let cfg = &self.config;
        let mut g = Graph::new();
        let param_nodes: Vec<NodeId> = params
            .blocks()
            .iter()
            .map(|b| g.parameter(Tensor::from_parts(b.shape.clone(), params.values()[b.range()].to_vec())))
            .collect();
        let node_of = |kind: BlockKind| -> NodeId {
            let idx = params.blocks().iter().position(|b| b.kind == kind).expect("block present");
            param_nodes[idx]
        };
        let mut x = g.constant(self.input.tensor.clone());
        for layer in 0..cfg.depth - 1 {
            let mut h = match cfg.arch {
                Arch::I | Arch::III | Arch::Plain => {
                    let mixed = g.channel_mix(x, node_of(BlockKind::Coeffs(layer)))?;
                    let up = if cfg.arch.upsamples() { g.upsample2x(mixed)? } else { mixed };
                    let kernel = g.constant(self.kernels[layer].clone());
                    g.conv_depthwise(up, kernel, Padding::ZeroSame)?
                }
                Arch::II | Arch::IV => {
                    let up = if cfg.arch.upsamples() { g.upsample2x(x)? } else { x };
                    g.conv(up, node_of(BlockKind::Filters(layer)), Padding::ZeroSame)?
                }
                Arch::Construction => {
                    let mixed = g.channel_mix(x, node_of(BlockKind::Coeffs(layer)))?;
                    let up = g.interp_truncated(mixed)?;
                    g.bias_add(up, node_of(BlockKind::Bias(layer)))?
                }
            };
            h = g.relu(h);
            if cfg.use_channel_norm {
                h = g.channel_norm(h, node_of(BlockKind::Beta(layer)), CHANNEL_NORM_EPS)?;
            }
            x = h;
        }
        let mut out = g.channel_mix(x, node_of(BlockKind::Output))?;
        if cfg.arch == Arch::Construction {
            out = g.bias_add(out, node_of(BlockKind::OutputBias))?;
        }
        if cfg.use_sigmoid {
            out = g.sigmoid(out);
        }
        if !g.value(out).is_finite() {
            return Err(Error::NonFinite {
                what: "in generator output".into(),
            });
        }
        Ok(ForwardGraph {
            graph: g,
            output: out,
            param_nodes,
        })
    }

    /// The image `G(C)`, shape [`GeneratorConfig::output_shape`].
    pub fn forward(&self, params: &GeneratorParams) -> Result<Tensor> {
        let fg = self.build_graph(params)?;
        Ok(fg.graph.value(fg.output).clone())
    }

    /// Output and the gradient of a loss given its gradient `∂L/∂G` at the output.
    ///
    /// `loss_fn` receives the output and returns `(loss, ∂loss/∂output)`.
    pub fn value_and_grad(
        &self,
        params: &GeneratorParams,
        loss_fn: impl FnOnce(&Tensor) -> Result<(f64, Tensor)>,
    ) -> Result<(f64, Tensor, Vec<f64>)> {
        let fg = self.build_graph(params)?;
        let output = fg.graph.value(fg.output).clone();
        let (loss, seed) = loss_fn(&output)?;
        let grads = fg.graph.backward_with_seed(fg.output, seed)?;
        let mut flat = vec![0.0; params.len()];
        for (block, node) in params.blocks().iter().zip(&fg.param_nodes) {
            if let Some(g) = grads.get(*node) {
                flat[block.range()].copy_from_slice(g.data());
            }
        }
        Ok((loss, output, flat))
    }
}

/// `forward(config, params)` without keeping the resolved generator around.
pub fn forward(config: &GeneratorConfig, params: &GeneratorParams) -> Result<Tensor> {
    Generator::new(config)?.forward(params)
}

/// Spectral norm of `x ↦ conv_zero_same(U x, kernel)` on an `extent`-sized
/// single-channel signal, by power iteration.
pub fn interpolation_operator_norm(kernel: &Tensor, spatial_rank: usize, extent: usize) -> Result<f64> {
    let planes = ops::Planes {
        channels: 1,
        h: if spatial_rank == 2 { extent } else { 1 },
        w: extent,
        spatial_rank,
    };
    let up_planes = ops::Planes {
        channels: 1,
        h: if spatial_rank == 2 { 2 * extent } else { 1 },
        w: 2 * extent,
        spatial_rank,
    };
    let taps = if spatial_rank == 2 {
        ops::Taps {
            kh: kernel.shape()[0],
            kw: kernel.shape()[1],
        }
    } else {
        ops::Taps {
            kh: 1,
            kw: kernel.shape()[0],
        }
    };
    let segs = ops::segments(up_planes.h, up_planes.w, taps, Padding::ZeroSame);
    let apply = |v: &[f64]| {
        let up = ops::upsample2x(v, planes);
        let mut out = vec![0.0; up.len()];
        ops::correlate_plane(&mut out, &up, kernel.data(), &segs);
        out
    };
    let adjoint = |y: &[f64]| {
        let mut dx = vec![0.0; y.len()];
        ops::correlate_plane_adjoint(&mut dx, y, kernel.data(), &segs);
        ops::upsample2x_adjoint(&dx, planes)
    };
    let n = planes.plane_len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut sigma2 = 0.0;
    for _ in 0..10_000 {
        let w = adjoint(&apply(&v));
        let lambda = crate::tensor::dot(&v, &w);
        let norm = crate::tensor::norm(&w);
        if norm == 0.0 {
            return Err(Error::invalid("interpolation operator is zero"));
        }
        v = w.into_iter().map(|x| x / norm).collect();
        if (lambda - sigma2).abs() <= 1e-14 * lambda {
            sigma2 = lambda;
            break;
        }
        sigma2 = lambda;
    }
    Ok(sigma2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_kernel_matches_displayed_matrix() {
        let k = fixed_kernel(2);
        #[rustfmt::skip]
        let expected = [
            1.0, 3.0, 3.0, 1.0,
            3.0, 9.0, 9.0, 3.0,
            3.0, 9.0, 9.0, 3.0,
            1.0, 3.0, 3.0, 1.0,
        ];
        for (a, b) in k.data().iter().zip(expected) {
            assert_eq!(*a, b / 16.0);
        }
    }

    #[test]
    fn param_count_examples() {
        let mut cfg = GeneratorConfig::new(Arch::I, 6, 64);
        cfg.out_channels = 3;
        assert_eq!(param_count(&cfg), 5 * 64 * 64 + 5 * 64 + 64 * 3);
        let mut one = GeneratorConfig::new(Arch::I, 1, 1);
        one.out_channels = 3;
        assert_eq!(param_count(&one), 3);
        let ii = GeneratorConfig::new(Arch::II, 3, 5);
        let i = GeneratorConfig::new(Arch::I, 3, 5);
        assert_eq!(param_count(&ii) - param_count(&i), 2 * 25 * (16 - 1));
    }

    #[test]
    fn zero_output_weights_give_half() {
        let cfg = GeneratorConfig::new(Arch::I, 3, 4);
        let mut p = init_params(&cfg, 1, 0.1).unwrap();
        p.block_mut(BlockKind::Output).unwrap().fill(0.0);
        let out = forward(&cfg, &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn plain_single_layer_equals_relu_of_input() {
        let mut cfg = GeneratorConfig::new(Arch::Plain, 1, 1);
        cfg.spatial_rank = 1;
        cfg.input_extent = 4;
        cfg.input_seed = 11;
        let p = GeneratorParams::from_values(&cfg, vec![1.0]).unwrap();
        let out = forward(&cfg, &p).unwrap();
        let b1 = InputVolume::for_config(&cfg).tensor;
        assert_eq!(out.data(), crate::autodiff::relu(&b1).data());
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let cfg = GeneratorConfig::new(Arch::II, 3, 3);
        assert_eq!(init_params(&cfg, 5, 0.1).unwrap(), init_params(&cfg, 5, 0.1).unwrap());
        assert_ne!(init_params(&cfg, 5, 0.1).unwrap(), init_params(&cfg, 6, 0.1).unwrap());
        let z = init_params(&cfg, 5, 0.0).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert!(forward(&cfg, &z).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn config_text_roundtrip_and_unknown_key() {
        let mut cfg = GeneratorConfig::new(Arch::IV, 4, 7);
        cfg.kernel_extent = 3;
        cfg.input_seed = 99;
        assert_eq!(GeneratorConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let err = GeneratorConfig::from_text("arch = i\nwidth = 3\n").unwrap_err();
        assert!(err.to_string().contains("width"));
    }

    #[test]
    fn params_blob_roundtrip_and_trailing_garbage() {
        let cfg = GeneratorConfig::new(Arch::I, 3, 2);
        let p = init_params(&cfg, 3, 0.1).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(GeneratorParams::from_bytes(&bytes).unwrap(), p);
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(GeneratorParams::from_bytes(&extra).is_err());
        assert!(GeneratorParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = GeneratorConfig::new(Arch::I, 3, 2);
        c.kernel_extent = 3;
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::new(Arch::Construction, 3, 2);
        c.spatial_rank = 2;
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::new(Arch::I, 3, 2);
        c.out_channels = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn plain_kernels_have_unit_operator_norm() {
        let cfg = GeneratorConfig::new(Arch::Plain, 4, 2);
        let g = Generator::new(&cfg).unwrap();
        let mut extent = cfg.input_extent;
        for layer in 0..3 {
            let k = g.layer_kernel(layer).unwrap();
            let n = interpolation_operator_norm(k, 2, extent).unwrap();
            assert!((n - 1.0).abs() < 1e-9, "layer {layer}: {n}");
            extent *= 2;
        }
    }
}
