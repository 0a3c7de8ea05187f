//! Frozen swap chains on a level set and their invariant laws.
//!
//! For the two-patch model the invariant law is binomial, which gives an
//! exact check of the sparse solver.

use bds_core::averaging::{averaged_intensity, build_swap_generator, closed_classes, stationary_distribution};
use bds_core::intensity::LinearModel;
use bds_core::environment::RegimeParams;
use bds_core::toy::{toy_averaged_death, toy_invariant, ToyModel, ToyParams};

fn main() -> bds_core::Result<()> {
    let params = ToyParams { d1: 0.1, d2: 3.0, b: 0.5, lambda: 0.3, k12: 0.5, k21: 1.0 };
    let regime = params.regime();
    println!(" n  states  max |pi - binomial|  averaged death  closed form");
    for n in [1, 2, 5, 10, 20] {
        let generator = build_swap_generator(&ToyModel, &regime, 0.0, n)?;
        let pi = stationary_distribution(&generator)?;
        let exact = toy_invariant(params.alpha(), n)?;
        let err = pi.probabilities().iter().zip(exact.probabilities()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let avg = averaged_intensity(&pi, &ToyModel, &regime, 0.0);
        println!("{n:2}  {:6}  {err:19.2e}  {:14.6}  {:11.6}", generator.dim(), avg.total_death(), toy_averaged_death(&params, n));
    }

    // Three patches on a ring, one direction only: still irreducible.
    let ring = RegimeParams {
        death: vec![1.0, 2.0, 3.0],
        swap: vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 2.0], vec![3.0, 0.0, 0.0]],
        ..ToyParams { d1: 0.0, d2: 0.0, b: 0.0, lambda: 0.0, k12: 0.0, k21: 0.0 }.regime()
    };
    let model = LinearModel { p: 3 };
    let generator = build_swap_generator(&model, &ring, 0.0, 4)?;
    println!("ring, n = 4: {} states, {} closed class(es)", generator.dim(), closed_classes(&generator).len());
    let pi = stationary_distribution(&generator)?;
    println!("mean occupancy: {:?}", (0..3).map(|i| pi.expectation(|z| z[i] as f64)).collect::<Vec<_>>());
    println!("solver residual {:.1e}", pi.residual());

    // Nothing leaves patch 3, so the chain is absorbed there: one closed
    // class and a point mass. With no swaps at all every state is closed and
    // the solver refuses.
    let leaky = RegimeParams { swap: vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]], ..ring.clone() };
    let trap = RegimeParams { swap: vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]], ..ring };
    println!("absorbing chain: {:?}", stationary_distribution(&build_swap_generator(&model, &leaky, 0.0, 2)?).map(|k| k.probabilities().to_vec()));
    println!("frozen chain: {:?}", stationary_distribution(&build_swap_generator(&model, &trap, 0.0, 2)?).map(|_| ()));
    Ok(())
}
