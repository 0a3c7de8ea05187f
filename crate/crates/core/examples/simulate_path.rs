//! One path of the two-patch model, printed event by event.
//!
//! cargo run --example simulate_path -- [seed]
//! Set DUMP_CSV=1 to also print the skeleton with acceptance flags.

use bds_core::engine::{simulate_bds, write_path_csv, EngineOptions};
use bds_core::environment::EnvironmentPath;
use bds_core::rng::RandomSource;
use bds_core::toy::{ToyModel, ToyParams};
use bds_core::Population;

fn main() -> bds_core::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let params = ToyParams { d1: 0.5, d2: 1.5, b: 0.4, lambda: 0.3, k12: 1.0, k21: 1.0 };
    let env = EnvironmentPath::constant(params.regime());
    let source = RandomSource::new(seed);

    let path = simulate_bds(&ToyModel, &env, &Population(vec![2, 1]), 3.0, &source, 0, &EngineOptions::default())?;
    let skeleton = path.skeleton.as_ref().expect("kept by simulate_bds");
    println!("{} skeleton records, {} accepted", skeleton.len(), path.events.len());
    for ((t, z), e) in path.trajectory().iter().skip(1).zip(&path.events) {
        println!("t = {t:8.4}  {:<12} z = {:?}", e.event.to_string(), z.counts());
    }
    let (b, d, s) = path.totals_at(path.horizon);
    println!("births {b}, deaths {d}, swaps {s}");

    if std::env::var_os("DUMP_CSV").is_some() {
        write_path_csv(&mut std::io::stdout().lock(), 0, &path, true)?;
    }
    Ok(())
}
