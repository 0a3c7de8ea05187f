//! Counts minus compensators: `N_t - int_0^t mu(s, Z_s-) ds` has mean zero.

use bds_core::engine::{compensator_residual, replicate_map, simulate_bds, EngineOptions};
use bds_core::environment::EnvironmentPath;
use bds_core::model::event_types;
use bds_core::rng::RandomSource;
use bds_core::stats::residual_zero_test;
use bds_core::toy::{ToyModel, ToyParams};
use bds_core::Population;

fn main() -> bds_core::Result<()> {
    let params = ToyParams { d1: 0.5, d2: 1.5, b: 0.4, lambda: 0.3, k12: 1.0, k21: 1.0 };
    let env = EnvironmentPath::constant(params.regime());
    let z0 = Population(vec![2, 1]);
    let source = RandomSource::new(4242);
    let checkpoints = [0.5, 1.0, 2.0];

    let residuals = replicate_map(20_000, |rep| {
        let path = simulate_bds(&ToyModel, &env, &z0, 2.0, &source, rep, &EngineOptions::default())?;
        compensator_residual(&path, &ToyModel, &env, &checkpoints)
    })
    .into_iter()
    .collect::<bds_core::Result<Vec<_>>>()?;

    for (c, t) in checkpoints.iter().enumerate() {
        for (k, event) in event_types(2).enumerate() {
            let sample: Vec<f64> = residuals.iter().map(|r| r[c][k]).collect();
            let z = residual_zero_test(&sample)?;
            println!("t = {t:3}  {:<10} mean {:+.4}  se {:.4}  z {:+.2}{}", event.to_string(), z.mean, z.standard_error, z.z, if z.flagged { "  FLAG" } else { "" });
        }
    }
    Ok(())
}
