//! A user-defined intensity model: logistic births with crowding deaths.
//!
//! The model declares its birth dominator and growth class, and closed-form
//! death and swap suprema. Without them the engine enumerates every level
//! set up to the current size at each refresh, which is correct but slow.

use bds_core::engine::{simulate_bds, EngineOptions};
use bds_core::environment::{EnvironmentPath, RegimeParams};
use bds_core::intensity::{feller_diagnostic, sup_by_enumeration, GrowthClass, IntensityModel};
use bds_core::rng::RandomSource;
use bds_core::{EventType, Population};

/// Births `b z_j (1 + 1/(1 + n))`, deaths `d_i z_i (1 + n / K)`, swaps `k_ij z_i`.
struct Crowding {
    capacity: f64,
}

impl IntensityModel for Crowding {
    fn subgroups(&self) -> usize {
        2
    }

    fn rate(&self, r: &RegimeParams, _t: f64, z: &[u64], event: EventType) -> f64 {
        let n = (z[0] + z[1]) as f64;
        match event {
            EventType::Birth(j) => r.birth * z[j] as f64 * (1.0 + 1.0 / (1.0 + n)) + r.immigration,
            EventType::Death(i) => r.death_rate(i) * z[i] as f64 * (1.0 + n / self.capacity),
            EventType::Swap { from, to } => r.swap_rate(from, to) * z[from] as f64,
        }
    }

    fn birth_dominator(&self, r: &RegimeParams, _t: f64, n: u64, out: &mut [f64]) {
        out.fill(r.k * (2.0 * r.birth * n as f64 + r.immigration));
    }

    fn growth_class(&self) -> GrowthClass {
        GrowthClass::Affine
    }

    // both rates grow with z_i and n, so the sup sits at z_i = n
    fn sup_by_size(&self, r: &RegimeParams, _t: f64, event: EventType, n: u64) -> bds_core::Result<f64> {
        let n = n as f64;
        Ok(match event {
            EventType::Death(i) => r.death_rate(i) * n * (1.0 + n / self.capacity),
            EventType::Swap { from, to } => r.swap_rate(from, to) * n,
            EventType::Birth(_) => 0.0,
        })
    }
}

fn main() -> bds_core::Result<()> {
    let regime = RegimeParams {
        k: 1.0,
        death: vec![0.1, 0.3],
        birth: 0.4,
        immigration: 0.1,
        swap: vec![vec![0.0, 0.5], vec![0.5, 0.0]],
        extras: Default::default(),
    };
    let model = Crowding { capacity: 20.0 };
    let brute = sup_by_enumeration(&model, &regime, 0.0, EventType::Death(1), 10, 1_000_000)?;
    let closed = model.sup_by_size(&regime, 0.0, EventType::Death(1), 10)?;
    println!("sup of death(2) over sizes <= 10: {brute:.3} by enumeration, {closed:.3} closed form");
    let feller = feller_diagnostic(|n| 2.0 * (2.0 * regime.birth * n as f64 + regime.immigration), 100_000)?;
    println!("feller partial sum {:.3}, suspicious: {}", feller.partial_sum, feller.suspicious);

    let env = EnvironmentPath::constant(regime);
    let source = RandomSource::new(17);
    for rep in 0..5 {
        let path = simulate_bds(&model, &env, &Population(vec![2, 2]), 3.0, &source, rep, &EngineOptions::default())?;
        let kept = path.events.len();
        let offered = path.skeleton.as_ref().map_or(0, |s| s.len());
        println!("replicate {rep}: final {:?}, kept {kept} of {offered} skeleton records", path.state_at(3.0).counts());
    }
    Ok(())
}
