//! Library side of the `undec` command: configuration resolution and the
//! subcommand implementations.

pub mod commands;
pub mod config;

use std::path::Path;

use anyhow::{Context, Result};

pub use commands::{run, Outcome};
pub use config::{Command, RunConfig};

/// Defaults for `command`, then the config file, then `(key, value)` overrides.
/// The subcommand always wins over a `command` key in the file.
pub fn resolve(command: Command, file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(command);
    if let Some(path) = file {
        commands::apply_config_file(&mut cfg, path)?;
    }
    cfg.command = command;
    for (key, value) in overrides {
        cfg.set(key, value).with_context(|| format!("override `{key} = {value}`"))?;
    }
    Ok(cfg)
}
