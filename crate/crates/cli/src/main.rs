use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use undec_cli::{resolve, run, Command};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "undec", version, about = "Un-trained convolutional generators for inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Fit a generator to an image (A = I) and compare with wavelet thresholding.
    Compress(Flags),
    /// Recover an image from random or Fourier measurements.
    Cs(Flags),
    /// Reconstruct from undersampled k-space (file or built-in phantom).
    Mri(Flags),
    /// Build the sparse generator reproducing a piecewise-linear function.
    Construct(Flags),
    /// Run one of the numerical checks.
    Theory(Flags),
}

#[derive(Args)]
struct Flags {
    /// `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: Option<String>,
    #[arg(long)]
    kspace: Option<String>,
    #[arg(long)]
    mask: Option<String>,
    /// Piecewise-linear spec file (`p slope` per line) for `construct`.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long, value_parser = ["i", "ii", "iii", "iv"])]
    arch: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    channels: Option<String>,
    /// Number of measurements, or `auto` for ⌈n/3⌉.
    #[arg(long)]
    measurements: Option<String>,
    #[arg(long, value_parser = ["gaussian", "rademacher", "fourier"])]
    operator: Option<String>,
    #[arg(long)]
    acceleration: Option<String>,
    #[arg(long)]
    center_fraction: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    /// Built-in image used when no input file is given.
    #[arg(long, value_parser = ["shepp", "smooth"])]
    phantom: Option<String>,
    /// Side length of the built-in image.
    #[arg(long)]
    size: Option<String>,
    #[arg(long, value_parser = ["lipschitz", "hankel", "rank", "sweep"])]
    check: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    /// Signal length for the hankel and rank checks.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    ell: Option<String>,
    /// Channels of the one-layer decoder in the rank check.
    #[arg(long)]
    k: Option<String>,
    /// Comma-separated ball radii for the lipschitz check.
    #[arg(long)]
    mu: Option<String>,
    /// Comma-separated parameter counts for the sweep.
    #[arg(long)]
    n_values: Option<String>,
    /// Comma-separated measurement counts for the sweep.
    #[arg(long)]
    m_values: Option<String>,
    /// Comma-separated seeds for the sweep.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, value_parser = ["in_range_noise_fit", "in_range_random", "natural_image"])]
    target: Option<String>,
    /// Any config key, e.g. `--set optimizer.restarts=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Flags {
    fn overrides(self) -> Result<Vec<(String, String)>, String> {
        let pairs = [
            ("io.image", self.image),
            ("io.kspace", self.kspace),
            ("io.mask", self.mask),
            ("io.spec", self.spec),
            ("generator.arch", self.arch),
            ("generator.depth", self.depth),
            ("generator.channels", self.channels),
            ("operator.measurements", self.measurements),
            ("operator.kind", self.operator),
            ("operator.acceleration", self.acceleration),
            ("operator.center_fraction", self.center_fraction),
            ("optimizer.iterations", self.iterations),
            ("optimizer.lr", self.lr),
            ("seed", self.seed),
            ("jobs", self.jobs),
            ("io.out_dir", self.out_dir),
            ("io.phantom", self.phantom),
            ("io.size", self.size),
            ("theory.check", self.check),
            ("theory.trials", self.trials),
            ("theory.samples", self.samples),
            ("theory.n", self.n),
            ("theory.ell", self.ell),
            ("theory.k", self.k),
            ("theory.mu", self.mu),
            ("theory.n_values", self.n_values),
            ("theory.m_values", self.m_values),
            ("theory.seeds", self.seeds),
            ("theory.target", self.target),
        ];
        let mut out: Vec<(String, String)> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect();
        for s in self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Sub::Compress(f) => (Command::Compress, f),
        Sub::Cs(f) => (Command::Cs, f),
        Sub::Mri(f) => (Command::Mri, f),
        Sub::Construct(f) => (Command::Construct, f),
        Sub::Theory(f) => (Command::Theory, f),
    };
    let file = flags.config.clone();
    let overrides = match flags.overrides() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = resolve(command, file.as_deref(), &overrides).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(o) => {
            for line in &o.report {
                println!("{line}");
            }
            println!("artifacts written to {}", o.resolved.io.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
