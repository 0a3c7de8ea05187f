//! The dominating skeleton and what thinning keeps of it.
//!
//! Skeleton births run at `k g_j(n_b)` with `n_b` the number of individuals
//! ever present; deaths and swaps at their suprema over sizes `<= n_b`. Each
//! record carries a mark in `(0, rate]`, and thinning keeps it iff the mark
//! is at most the model's rate just before the record.

use std::collections::HashSet;

use bds_core::engine::{audit_path, check_strong_domination, simulate_bds, simulate_dominating, thin_to_bds, EngineOptions};
use bds_core::environment::EnvironmentPath;
use bds_core::rng::RandomSource;
use bds_core::toy::{ToyModel, ToyParams};
use bds_core::Population;

fn main() -> bds_core::Result<()> {
    let params = ToyParams { d1: 0.5, d2: 1.5, b: 0.4, lambda: 0.3, k12: 1.0, k21: 1.0 };
    let env = EnvironmentPath::constant(params.regime());
    let z0 = Population(vec![1, 1]);
    let source = RandomSource::new(2024);
    let opts = EngineOptions::default();

    let skeleton = simulate_dominating(&ToyModel, &env, &z0, 2.0, &source, 0, &opts)?;
    let path = thin_to_bds(&skeleton, &ToyModel, &env, &opts)?;
    let kept: HashSet<usize> = path.events.iter().filter_map(|e| e.record).collect();
    println!("    time  event         mark /  rate  kept");
    for (k, r) in skeleton.records.iter().enumerate().take(15) {
        println!("{:8.4}  {:<12} {:6.3} / {:5.3}  {}", r.time, r.event.to_string(), r.mark, r.rate, kept.contains(&k));
    }
    println!("path inside skeleton: {}", check_strong_domination(&path, &skeleton).holds);
    println!("skeleton inside path: {}", check_strong_domination(&skeleton, &path).holds);

    let failures = (0..1000)
        .map(|rep| simulate_bds(&ToyModel, &env, &z0, 2.0, &source, rep, &opts).map(|p| !audit_path(&p).ok()))
        .filter(|r| !matches!(r, Ok(false)))
        .count();
    println!("audit failures over 1000 replicates: {failures}");
    Ok(())
}
