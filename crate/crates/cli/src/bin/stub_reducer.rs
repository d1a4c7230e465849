//! Minimal external reducer for hybrid mode: deletes functions nothing can
//! reach, keeps the result only if the oracle still accepts it.

use std::path::PathBuf;
use std::process::Command;

use anyhow::{Context, Result};
use clap::Parser;
use rr_reduce_core::wasm;

#[derive(Parser, Debug)]
#[command(name = "rr-stub-reducer", version)]
struct Cli {
    input: PathBuf,
    output: PathBuf,
    /// Oracle script; exit 0 means interesting.
    oracle: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let bytes = std::fs::read(&cli.input).with_context(|| format!("reading {}", cli.input.display()))?;
    let m = wasm::parse_module(&bytes)?;
    let smaller = wasm::encode_module(&wasm::remove_unreachable_functions(&m)?);
    std::fs::write(&cli.output, &smaller)?;
    let ok = Command::new(&cli.oracle)
        .arg(&cli.output)
        .status()
        .with_context(|| format!("running {}", cli.oracle.display()))?
        .success();
    if !ok {
        std::fs::write(&cli.output, &bytes)?;
    }
    Ok(())
}
