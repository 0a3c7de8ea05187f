//! The averaged birth-death process against the fast-swap model at small `eps`.
//!
//! Both are thinned from the same demographic skeleton, so the laws of the
//! aggregate size at the horizon can be compared with little noise.

use bds_core::averaging::{simulate_limit_process, KernelCache};
use bds_core::engine::{replicate_map, EngineOptions};
use bds_core::environment::EnvironmentPath;
use bds_core::multiscale::{simulate_two_timescale, TwoTimescaleConfig};
use bds_core::rng::RandomSource;
use bds_core::stats::{tv_distance, EmpiricalLaw};
use bds_core::toy::{ToyModel, ToyParams};
use bds_core::Population;

fn main() -> bds_core::Result<()> {
    let params = ToyParams { d1: 0.1, d2: 3.0, b: 0.5, lambda: 0.3, k12: 0.5, k21: 0.5 };
    let env = EnvironmentPath::constant(params.regime());
    let z0 = Population(vec![1, 1]);
    let source = RandomSource::new(11);
    let horizon = 2.0;
    let reps = 5000;
    let opts = EngineOptions::default();
    let cache = KernelCache::new();

    let limit = replicate_map(reps, |rep| simulate_limit_process(&ToyModel, &env, z0.size(), horizon, &source, rep, &opts, &cache).map(|p| p.size_at(horizon) as i64));
    let limit = EmpiricalLaw::new("limit", limit.into_iter().collect::<bds_core::Result<Vec<_>>>()?);
    println!("limit process: mean size {:.3}, {} kernels cached", limit.samples.iter().sum::<i64>() as f64 / reps as f64, cache.len());

    for eps in [0.3, 0.1, 0.01] {
        let cfg = TwoTimescaleConfig::new(&ToyModel, eps, horizon, reps)?;
        let sizes = replicate_map(reps, |rep| simulate_two_timescale(&cfg, &env, &z0, &source, rep, &opts).map(|p| p.state_at(horizon).size() as i64));
        let law = EmpiricalLaw::new(format!("eps={eps}"), sizes.into_iter().collect::<bds_core::Result<Vec<_>>>()?);
        println!("eps = {eps:4}: tv to limit {:.4}", tv_distance(&law, &limit)?);
    }
    Ok(())
}
