//! Monotone coupling: two models thinned from the skeleton of the larger one.

use bds_core::engine::{check_strong_domination, coupled_pair, EngineOptions};
use bds_core::environment::EnvironmentPath;
use bds_core::intensity::Scaled;
use bds_core::rng::RandomSource;
use bds_core::toy::{ToyModel, ToyParams};
use bds_core::{BdsError, Population};

fn main() -> bds_core::Result<()> {
    let source = RandomSource::new(3);
    let z0 = Population(vec![1, 1]);
    let opts = EngineOptions { verify: true, ..Default::default() };

    // Pure birth and immigration: rates only grow along the counting vector,
    // so a uniformly slower copy is strongly dominated.
    let growth = ToyParams { d1: 0.0, d2: 0.0, b: 0.3, lambda: 0.5, k12: 0.0, k21: 0.0 };
    let env = EnvironmentPath::constant(growth.regime());
    let slow = Scaled { inner: &ToyModel, swap: 1.0, demographic: 0.2 };
    let mut inside = 0;
    let mut sizes = (0, 0);
    for rep in 0..2000 {
        let (lo, hi) = coupled_pair(&slow, &ToyModel, &env, &z0, 2.0, &source, rep, &opts)?;
        inside += usize::from(check_strong_domination(&lo, &hi).holds);
        sizes.0 += lo.events.len();
        sizes.1 += hi.events.len();
    }
    println!("low jumps inside high jumps on {inside} of 2000 replicates");
    println!("mean jumps: low {:.2}, high {:.2}", sizes.0 as f64 / 2000.0, sizes.1 as f64 / 2000.0);

    let (zero, _) = coupled_pair(&Scaled::zero(&ToyModel), &ToyModel, &env, &z0, 2.0, &source, 0, &opts)?;
    println!("zero model accepted {} events", zero.events.len());

    // Once deaths or swaps are possible, a path with more events can sit at a
    // state with lower rates, so the toy model is not strongly ordered with
    // itself. Verification finds a counterexample and refuses the pair.
    let full = EnvironmentPath::constant(ToyParams { d1: 0.5, d2: 1.0, b: 0.3, lambda: 0.5, k12: 1.0, k21: 1.0 }.regime());
    match coupled_pair(&ToyModel, &ToyModel, &full, &z0, 2.0, &source, 0, &opts) {
        Err(e @ BdsError::StrongOrderViolation { .. }) => println!("refused: {e}"),
        other => println!("unexpected: {:?}", other.map(|_| ())),
    }
    Ok(())
}
