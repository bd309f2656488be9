//! Runs a TOML configuration through the same driver as the `hslag` binary.
//!
//! `cargo run --example run_config -- configs/cp2_rigidity.toml /tmp/out`

use hslag::run::run;
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/cp2_rigidity.toml"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("hslag-example"));
    let report = run(&config, &out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("artifacts in {}", out.display());
    Ok(())
}
