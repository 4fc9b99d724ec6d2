//! Run configuration. Files are flat `key = value` lines grouped under
//! `[section]` headers; flags are applied afterwards as `section.key` overrides.
//! `to_text` writes every field, so a written manifest reproduces the run.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use undec::generator::{Arch, GeneratorConfig};
use undec::recovery::{Method, OptimizerSettings};
use undec::theory::TargetKind;

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl FromStr for $name {
            type Err = anyhow::Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(anyhow!(
                        "unknown {} `{s}` (expected one of: {})",
                        stringify!($name).to_lowercase(),
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($name::$variant => $text),+
                })
            }
        }
    };
}

text_enum!(Command {
    Compress => "compress",
    Cs => "cs",
    Mri => "mri",
    Construct => "construct",
    Theory => "theory",
});

text_enum!(Measurement {
    Gaussian => "gaussian",
    Rademacher => "rademacher",
    Fourier => "fourier",
});

text_enum!(Phantom {
    Shepp => "shepp",
    Smooth => "smooth",
});

text_enum!(Check {
    Lipschitz => "lipschitz",
    Hankel => "hankel",
    Rank => "rank",
    Sweep => "sweep",
});

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSection {
    pub kind: Measurement,
    /// `None` means `⌈n/3⌉`.
    pub measurements: Option<usize>,
    pub acceleration: usize,
    pub center_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IoSection {
    pub image: Option<PathBuf>,
    pub kspace: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Piecewise-linear spec file for `construct`.
    pub spec: Option<PathBuf>,
    /// Built-in image used when no input file is given.
    pub phantom: Phantom,
    pub size: usize,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSection {
    /// `None` tunes λ over the built-in grid against the reference.
    pub lambda: Option<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheorySection {
    pub check: Check,
    pub n: usize,
    pub ell: usize,
    pub k: usize,
    pub trials: usize,
    pub samples: usize,
    pub mu: Vec<f64>,
    pub n_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub target: TargetKind,
    pub target_iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstructSection {
    /// Pulse start used when no spec file is given.
    pub p: usize,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub jobs: usize,
    pub generator: GeneratorConfig,
    /// Derive `input_extent` from the image size at run time.
    pub input_extent_auto: bool,
    /// Derive `out_channels` from the image at run time.
    pub out_channels_auto: bool,
    pub operator: OperatorSection,
    pub optimizer: OptimizerSettings,
    pub io: IoSection,
    pub baseline: BaselineSection,
    pub theory: TheorySection,
    pub construct: ConstructSection,
}

const SECTIONS: [&str; 7] = ["generator", "operator", "optimizer", "io", "baseline", "theory", "construct"];

impl RunConfig {
    pub fn new(command: Command) -> Self {
        let defaults = OptimizerSettings::default();
        RunConfig {
            command,
            seed: 0,
            jobs: 1,
            generator: GeneratorConfig::new(Arch::I, 5, 32),
            input_extent_auto: true,
            out_channels_auto: true,
            operator: OperatorSection {
                kind: Measurement::Gaussian,
                measurements: None,
                acceleration: 4,
                center_fraction: 0.08,
            },
            optimizer: OptimizerSettings {
                iterations: 3000,
                ..defaults
            },
            io: IoSection {
                image: None,
                kspace: None,
                mask: None,
                spec: None,
                phantom: Phantom::Shepp,
                size: 64,
                out_dir: PathBuf::from("undec-out"),
            },
            baseline: BaselineSection {
                lambda: None,
                iterations: 300,
            },
            theory: TheorySection {
                check: Check::Hankel,
                n: 32,
                ell: 3,
                k: 2,
                trials: 100,
                samples: 2000,
                mu: vec![0.5, 1.0, 2.0],
                n_values: vec![200, 800],
                m_values: vec![100, 400, 1600],
                seeds: vec![0, 1, 2],
                target: TargetKind::InRangeNoiseFit,
                target_iterations: 2000,
            },
            construct: ConstructSection { p: 2, slope: 1.0 },
        }
    }

    /// Applies a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = || format!("line {}", i + 1);
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(anyhow!("unknown section `[{name}]`")).with_context(ctx);
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("expected `key = value`, got `{line}`"))
                .with_context(ctx)?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            self.set(&key, v.trim()).with_context(ctx)?;
        }
        Ok(())
    }

    /// Sets one field by its qualified name, e.g. `optimizer.lr` or `seed`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        let bad = || anyhow!("bad value `{v}` for `{key}`");
        match (section, field) {
            ("", "command") => self.command = v.parse()?,
            ("", "seed") => self.seed = v.parse().map_err(|_| bad())?,
            ("", "jobs") => self.jobs = v.parse().map_err(|_| bad())?,
            ("generator", "input_extent") if v == "auto" => self.input_extent_auto = true,
            ("generator", "out_channels") if v == "auto" => self.out_channels_auto = true,
            ("generator", f) => {
                self.generator.set(f, v).map_err(|e| anyhow!("`{key}`: {e}"))?;
                match f {
                    "input_extent" => self.input_extent_auto = false,
                    "out_channels" => self.out_channels_auto = false,
                    _ => {}
                }
            }
            ("operator", "kind") => self.operator.kind = v.parse()?,
            ("operator", "measurements") => self.operator.measurements = parse_auto(v).map_err(|_| bad())?,
            ("operator", "acceleration") => self.operator.acceleration = v.parse().map_err(|_| bad())?,
            ("operator", "center_fraction") => self.operator.center_fraction = v.parse().map_err(|_| bad())?,
            ("optimizer", "method") => self.optimizer.method = v.parse::<Method>()?,
            ("optimizer", "lr") => self.optimizer.step_size = v.parse().map_err(|_| bad())?,
            ("optimizer", "iterations") => self.optimizer.iterations = v.parse().map_err(|_| bad())?,
            ("optimizer", "beta1") => self.optimizer.beta1 = v.parse().map_err(|_| bad())?,
            ("optimizer", "beta2") => self.optimizer.beta2 = v.parse().map_err(|_| bad())?,
            ("optimizer", "eps") => self.optimizer.eps = v.parse().map_err(|_| bad())?,
            ("optimizer", "restarts") => self.optimizer.restarts = v.parse().map_err(|_| bad())?,
            ("optimizer", "init_scale") => self.optimizer.init_scale = v.parse().map_err(|_| bad())?,
            ("io", "image") => self.io.image = parse_path(v),
            ("io", "kspace") => self.io.kspace = parse_path(v),
            ("io", "mask") => self.io.mask = parse_path(v),
            ("io", "spec") => self.io.spec = parse_path(v),
            ("io", "phantom") => self.io.phantom = v.parse()?,
            ("io", "size") => self.io.size = v.parse().map_err(|_| bad())?,
            ("io", "out_dir") => self.io.out_dir = PathBuf::from(v),
            ("baseline", "lambda") => self.baseline.lambda = parse_auto(v).map_err(|_| bad())?,
            ("baseline", "iterations") => self.baseline.iterations = v.parse().map_err(|_| bad())?,
            ("theory", "check") => self.theory.check = v.parse()?,
            ("theory", "n") => self.theory.n = v.parse().map_err(|_| bad())?,
            ("theory", "ell") => self.theory.ell = v.parse().map_err(|_| bad())?,
            ("theory", "k") => self.theory.k = v.parse().map_err(|_| bad())?,
            ("theory", "trials") => self.theory.trials = v.parse().map_err(|_| bad())?,
            ("theory", "samples") => self.theory.samples = v.parse().map_err(|_| bad())?,
            ("theory", "mu") => self.theory.mu = parse_list(v).map_err(|_| bad())?,
            ("theory", "n_values") => self.theory.n_values = parse_list(v).map_err(|_| bad())?,
            ("theory", "m_values") => self.theory.m_values = parse_list(v).map_err(|_| bad())?,
            ("theory", "seeds") => self.theory.seeds = parse_list(v).map_err(|_| bad())?,
            ("theory", "target") => self.theory.target = v.parse()?,
            ("theory", "target_iterations") => self.theory.target_iterations = v.parse().map_err(|_| bad())?,
            ("construct", "p") => self.construct.p = v.parse().map_err(|_| bad())?,
            ("construct", "slope") => self.construct.slope = v.parse().map_err(|_| bad())?,
            _ => bail!("unknown key `{key}`"),
        }
        Ok(())
    }

    /// Every field, in a form [`apply_text`](Self::apply_text) reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let list = |v: Vec<String>| v.join(",");
        writeln!(s, "command = {}\nseed = {}\njobs = {}\n", self.command, self.seed, self.jobs).unwrap();

        s.push_str("[generator]\n");
        for line in self.generator.to_text().lines() {
            let key = line.split('=').next().unwrap_or("").trim();
            match key {
                "input_extent" if self.input_extent_auto => s.push_str("input_extent = auto\n"),
                "out_channels" if self.out_channels_auto => s.push_str("out_channels = auto\n"),
                _ => writeln!(s, "{line}").unwrap(),
            }
        }

        let op = &self.operator;
        writeln!(
            s,
            "\n[operator]\nkind = {}\nmeasurements = {}\nacceleration = {}\ncenter_fraction = {}",
            op.kind,
            opt(op.measurements.map(|m| m.to_string())),
            op.acceleration,
            op.center_fraction
        )
        .unwrap();

        let o = &self.optimizer;
        writeln!(
            s,
            "\n[optimizer]\nmethod = {}\nlr = {}\niterations = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\nrestarts = {}\ninit_scale = {}",
            o.method, o.step_size, o.iterations, o.beta1, o.beta2, o.eps, o.restarts, o.init_scale
        )
        .unwrap();

        let io = &self.io;
        writeln!(
            s,
            "\n[io]\nimage = {}\nkspace = {}\nmask = {}\nspec = {}\nphantom = {}\nsize = {}\nout_dir = {}",
            path(&io.image),
            path(&io.kspace),
            path(&io.mask),
            path(&io.spec),
            io.phantom,
            io.size,
            io.out_dir.display()
        )
        .unwrap();

        writeln!(
            s,
            "\n[baseline]\nlambda = {}\niterations = {}",
            opt(self.baseline.lambda.map(|l| l.to_string())),
            self.baseline.iterations
        )
        .unwrap();

        let t = &self.theory;
        writeln!(
            s,
            "\n[theory]\ncheck = {}\nn = {}\nell = {}\nk = {}\ntrials = {}\nsamples = {}\nmu = {}\n\
             n_values = {}\nm_values = {}\nseeds = {}\ntarget = {}\ntarget_iterations = {}",
            t.check,
            t.n,
            t.ell,
            t.k,
            t.trials,
            t.samples,
            list(t.mu.iter().map(|v| v.to_string()).collect()),
            list(t.n_values.iter().map(|v| v.to_string()).collect()),
            list(t.m_values.iter().map(|v| v.to_string()).collect()),
            list(t.seeds.iter().map(|v| v.to_string()).collect()),
            target_name(t.target),
            t.target_iterations
        )
        .unwrap();

        writeln!(s, "\n[construct]\np = {}\nslope = {}", self.construct.p, self.construct.slope).unwrap();
        s
    }

    /// Optimizer settings with the initialization keyed to the global seed.
    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            init_seed: self.seed,
            ..self.optimizer.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            bail!("`jobs` must be at least 1");
        }
        if self.io.size == 0 {
            bail!("`io.size` must be positive");
        }
        if self.baseline.lambda.is_some_and(|l| !(l > 0.0)) {
            bail!("`baseline.lambda` must be positive");
        }
        self.optimizer.validate().context("optimizer")?;
        Ok(())
    }
}

fn target_name(t: TargetKind) -> &'static str {
    match t {
        TargetKind::InRangeNoiseFit => "in_range_noise_fit",
        TargetKind::InRangeRandom => "in_range_random",
        TargetKind::NaturalImage => "natural_image",
    }
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn parse_auto<T: FromStr>(v: &str) -> std::result::Result<Option<T>, T::Err> {
    if v == "auto" {
        Ok(None)
    } else {
        v.parse().map(Some)
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, T::Err> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}
