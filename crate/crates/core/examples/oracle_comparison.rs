//! Thinning against direct next-event simulation, compared by two-sample
//! chi-square tests on the final event counts.

use bds_core::engine::{replicate_map, simulate_bds, EngineOptions};
use bds_core::environment::EnvironmentPath;
use bds_core::rng::RandomSource;
use bds_core::stats::{oracle_simulate, tv_distance, two_sample_test, EmpiricalLaw};
use bds_core::toy::{ToyModel, ToyParams};
use bds_core::Population;

fn main() -> bds_core::Result<()> {
    let params = ToyParams { d1: 0.5, d2: 1.5, b: 0.4, lambda: 0.3, k12: 1.0, k21: 1.0 };
    let env = EnvironmentPath::constant(params.regime());
    let z0 = Population(vec![2, 1]);
    let source = RandomSource::new(31337);
    let n = 20_000;

    let thinned = replicate_map(n, |rep| simulate_bds(&ToyModel, &env, &z0, 2.0, &source, rep, &EngineOptions::default()).map(|p| p.totals_at(2.0)));
    let oracle = replicate_map(n, |rep| oracle_simulate(&ToyModel, &env, &z0, 2.0, &source, rep, 1_000_000).map(|p| p.totals_at(2.0)));
    let thinned = thinned.into_iter().collect::<bds_core::Result<Vec<_>>>()?;
    let oracle = oracle.into_iter().collect::<bds_core::Result<Vec<_>>>()?;

    for (k, name) in ["births", "deaths", "swaps"].into_iter().enumerate() {
        let pick = |t: &(u64, u64, u64)| [t.0, t.1, t.2][k] as i64;
        let a = EmpiricalLaw::new(name, thinned.iter().map(pick).collect());
        let b = EmpiricalLaw::new(name, oracle.iter().map(pick).collect());
        println!("{name:<7} p = {:.3}  tv = {:.4}", two_sample_test(&a, &b)?, tv_distance(&a, &b)?);
    }
    Ok(())
}
