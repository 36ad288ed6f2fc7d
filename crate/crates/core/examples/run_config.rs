//! Validates and runs an experiment file the way the command line does.
//!
//! `cargo run --example run_config -- crates/core/configs/effective_constant.toml`

use std::path::PathBuf;

use convhom::config::{render, ExperimentConfig};
use convhom::runner::{self, RunOptions};

fn main() -> convhom::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/effective_constant.toml"));
    let (cfg, text) = ExperimentConfig::load(&path)?;
    let diags = cfg.validate(&text);
    if !diags.is_empty() {
        eprintln!("{}", render(&path, &diags));
        std::process::exit(1);
    }
    let out = std::env::temp_dir().join("convhom-example");
    let outcome = runner::run(&path, &RunOptions { output: Some(out.clone()), ..RunOptions::default() })?;
    print!("{}", runner::report(&outcome.dir)?);
    Ok(())
}
