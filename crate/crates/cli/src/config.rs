//! Strict TOML configuration loading.

use std::fs;
use std::path::{Path, PathBuf};

use wdunet_al::ExperimentConfig;

use crate::error::CliError;

/// File name of the resolved configuration a run writes into its output.
pub const RESOLVED_CONFIG: &str = "config.json";

/// Parses `text`, rejecting unknown keys (all of them are reported together)
/// and then every semantic problem found by validation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    let mut unknown = Vec::new();
    let parsed: Result<ExperimentConfig, _> =
        serde_ignored::deserialize(toml::Value::Table(table), |path| {
            unknown.push(path.to_string())
        });
    let mut errs: Vec<String> = unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect();
    match parsed {
        Ok(cfg) => {
            errs.extend(cfg.validate());
            if errs.is_empty() {
                Ok(cfg)
            } else {
                Err(CliError::Config(errs.join("\n")))
            }
        }
        Err(e) => {
            errs.push(e.to_string());
            Err(CliError::Config(errs.join("\n")))
        }
    }
}

/// Loads a config file; a relative `data.dir` is resolved against the
/// file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}:\n{m}", path.display())),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    cfg.data.dir = absolute(&base.join(&cfg.data.dir));
    Ok(cfg)
}

/// The configuration a run saved next to its results.
pub fn load_resolved(out: &Path) -> Result<ExperimentConfig, CliError> {
    let path = out.join(RESOLVED_CONFIG);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(CliError::Config(errs.join("\n")));
    }
    Ok(cfg)
}

pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
