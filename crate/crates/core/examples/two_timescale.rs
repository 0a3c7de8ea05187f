//! Fast swaps: occupation of each level set between demographic events
//! approaches the invariant law of the frozen swap chain as `eps` shrinks.

use std::collections::BTreeMap;

use bds_core::averaging::{build_swap_generator, stationary_distribution};
use bds_core::engine::{replicate_map, EngineOptions};
use bds_core::environment::EnvironmentPath;
use bds_core::multiscale::{
    averaging_residual, occupation_between_demographic_events, simulate_two_timescale, OccupationKernel,
    TwoTimescaleConfig, Weighting, DEFAULT_BURN_IN_FACTOR,
};
use bds_core::rng::RandomSource;
use bds_core::toy::{ToyModel, ToyParams};
use bds_core::Population;

fn main() -> bds_core::Result<()> {
    let params = ToyParams { d1: 0.05, d2: 0.5, b: 0.0, lambda: 0.0, k12: 1.0, k21: 1.0 };
    let regime = params.regime();
    let env = EnvironmentPath::constant(regime.clone());
    let z0 = Population(vec![1, 1]);
    let source = RandomSource::new(7);
    let n = 2;
    let generator = build_swap_generator(&ToyModel, &regime, 0.0, n)?;
    let pi = stationary_distribution(&generator)?;

    println!("  eps   swaps/path  tv at n = {n}  max |gamma L|");
    for eps in [1.0, 0.1, 0.01] {
        let cfg = TwoTimescaleConfig::new(&ToyModel, eps, 10.0, 500)?;
        let burn_in = cfg.burn_in(DEFAULT_BURN_IN_FACTOR);
        let per_path = replicate_map(cfg.replicates, |rep| -> bds_core::Result<_> {
            let path = simulate_two_timescale(&cfg, &env, &z0, &source, rep, &EngineOptions::default())?;
            let swaps = path.totals_at(cfg.horizon).2;
            Ok((swaps, occupation_between_demographic_events(&path, (0.0, cfg.horizon), Weighting::Uniform, burn_in)?))
        });
        let mut pooled: BTreeMap<u64, OccupationKernel> = BTreeMap::new();
        let mut swaps = 0;
        for r in per_path {
            let (s, kernels) = r?;
            swaps += s;
            for (m, k) in kernels {
                match pooled.get_mut(&m) {
                    Some(acc) => acc.merge(&k)?,
                    None => {
                        pooled.insert(m, k);
                    }
                }
            }
        }
        let kernel = &pooled[&n];
        let residual = averaging_residual(kernel, &generator)?.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        println!("{eps:5}  {:11.1}  {:11.4}  {residual:13.4}", swaps as f64 / cfg.replicates as f64, kernel.tv_to(pi.probabilities())?);
    }
    Ok(())
}
