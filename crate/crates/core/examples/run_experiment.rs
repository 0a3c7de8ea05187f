//! Runs an experiment config through the library, as the command-line tool does.
//!
//! cargo run --release --example run_experiment -- crates/core/configs/toy-verify.json

use std::path::PathBuf;

use bds_core::experiment::{load_config, run_config, RunOptions};

fn main() -> bds_core::Result<()> {
    let path: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "crates/core/configs/toy-verify.json".into()).into();
    let cfg = load_config(&path)?;
    let out = std::env::temp_dir().join(format!("bds-example-{}", std::process::id()));
    let report = run_config(&cfg, &RunOptions { out: Some(out.clone()), threads: Some(1), ..Default::default() })?;
    for row in &report.rows {
        println!("{:<40} {:>12.4e}  threshold {:>10.3e}  {}", row.statistic, row.value, row.threshold, if row.pass { "pass" } else { "FAIL" });
    }
    println!("{} in {}", if report.passed() { "passed" } else { "failed" }, out.display());
    Ok(())
}
