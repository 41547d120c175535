pub mod compare;
pub mod eval;
pub mod gen_demos;
pub mod learn;
pub mod solve;

use std::path::PathBuf;

use crate::config::RunConfig;
use crate::manifest::Outputs;
use crate::CliError;

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Output directory, relative to the config file.
fn outputs(cfg: &RunConfig, dir: &std::path::Path) -> Result<Outputs, CliError> {
    Outputs::new(cfg.resolve(dir))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> reachsafe_core::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}
