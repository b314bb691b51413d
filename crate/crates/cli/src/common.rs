//! Shared plumbing for the subcommands: config loading with CLI semantics,
//! output directory resolution, and overwrite protection.

use std::path::{Path, PathBuf};

use pfl_core::config::{DatasetKind, RunConfig};
use pfl_core::{Error, Result};

/// Loads and validates a config. Malformed JSON counts as a validation
/// failure here (exit 1), not an I/O failure: the file was readable, its
/// content is wrong. Dataset paths must exist up front.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::from_path(path).map_err(|e| match e {
        Error::Parse(msg) => Error::Config(msg),
        other => other,
    })?;
    if matches!(cfg.dataset.kind, DatasetKind::Mnist | DatasetKind::FashionMnist) {
        for (field, p) in [
            ("dataset.images", cfg.dataset.images.as_ref()),
            ("dataset.labels", cfg.dataset.labels.as_ref()),
        ] {
            let p = p.expect("validated");
            if !p.exists() {
                return Err(Error::Config(format!(
                    "{field}: no such file: {}",
                    p.display()
                )));
            }
        }
    }
    Ok(cfg)
}

pub fn resolve_out(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Refuses to touch existing outputs unless --overwrite was passed.
pub fn guard_overwrite(targets: &[PathBuf], overwrite: bool) -> Result<()> {
    if overwrite {
        return Ok(());
    }
    for t in targets {
        if t.exists() {
            return Err(Error::Config(format!(
                "{} exists; pass --overwrite to replace it",
                t.display()
            )));
        }
    }
    Ok(())
}

/// Creates the output directory and proves it is writable before any run
/// starts, so an unwritable target fails fast with no partial outputs.
pub fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"probe").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))?;
    Ok(())
}

pub fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}
