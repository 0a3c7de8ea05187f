//! Two-patch habitat model with closed-form averaging.
//!
//! Patch 1 is favorable (`d1 <= d2`). Individuals die at rate `d_i` and give
//! birth at rate `b` in either patch, immigrants arrive at rate `lambda` per
//! patch. Moves from patch 1 to patch 2 happen at rate `k12 * n` per
//! individual (crowding pushes individuals out), moves back at rate `k21`.
//!
//! With the environment frozen, each individual flips independently between
//! the patches, so the invariant law of the swap chain on `U_n` is binomial in
//! the patch-1 count with success probability `1 / (alpha n + 1)`,
//! `alpha = k12 / k21`. Averaging the death rates against that law gives a
//! density-dependent aggregate mortality.

use serde::{Deserialize, Serialize};

use crate::averaging::InvariantKernel;
use crate::environment::RegimeParams;
use crate::error::{BdsError, Result};
use crate::intensity::{GrowthClass, IntensityModel};
use crate::model::{enumerate_level_set, EventType, DEFAULT_LEVEL_SET_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyParams {
    pub d1: f64,
    pub d2: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub lambda: f64,
    pub k12: f64,
    pub k21: f64,
}

impl ToyParams {
    pub fn alpha(&self) -> f64 {
        self.k12 / self.k21
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.d1, self.d2, self.b, self.lambda, self.k12, self.k21] {
            if !v.is_finite() || v < 0.0 {
                return Err(BdsError::InvalidArgument(format!("toy rate {v} must be finite and >= 0")));
            }
        }
        if self.d1 > self.d2 {
            return Err(BdsError::InvalidArgument("toy model expects d1 <= d2 (patch 1 favorable)".into()));
        }
        Ok(())
    }

    /// The same rates as a generic regime record.
    pub fn regime(&self) -> RegimeParams {
        RegimeParams {
            k: 1.0,
            death: vec![self.d1, self.d2],
            birth: self.b,
            immigration: self.lambda,
            swap: vec![vec![0.0, self.k12], vec![self.k21, 0.0]],
            extras: Default::default(),
        }
    }

    pub fn from_regime(r: &RegimeParams) -> Self {
        ToyParams {
            d1: r.death_rate(0),
            d2: r.death_rate(1),
            b: r.birth,
            lambda: r.immigration,
            k12: r.swap_rate(0, 1),
            k21: r.swap_rate(1, 0),
        }
    }
}

/// The toy model as an intensity functional over regime records.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyModel;

impl IntensityModel for ToyModel {
    fn subgroups(&self) -> usize {
        2
    }

    fn rate(&self, r: &RegimeParams, _t: f64, z: &[u64], event: EventType) -> f64 {
        let n = (z[0] + z[1]) as f64;
        match event {
            EventType::Death(i) => r.death_rate(i) * z[i] as f64,
            EventType::Birth(j) => r.birth * z[j] as f64 + r.immigration,
            EventType::Swap { from: 0, .. } => r.swap_rate(0, 1) * n * z[0] as f64,
            EventType::Swap { .. } => r.swap_rate(1, 0) * z[1] as f64,
        }
    }

    fn rates(&self, r: &RegimeParams, _t: f64, z: &[u64], out: &mut [f64]) {
        let (z1, z2) = (z[0] as f64, z[1] as f64);
        let n = z1 + z2;
        out[0] = r.swap_rate(0, 1) * n * z1;
        out[1] = r.swap_rate(1, 0) * z2;
        out[2] = r.birth * z1 + r.immigration;
        out[3] = r.birth * z2 + r.immigration;
        out[4] = r.death_rate(0) * z1;
        out[5] = r.death_rate(1) * z2;
    }

    fn birth_dominator(&self, r: &RegimeParams, _t: f64, n: u64, out: &mut [f64]) {
        out.fill(r.k * (r.birth * n as f64 + r.immigration));
    }

    fn growth_class(&self) -> GrowthClass {
        GrowthClass::Affine
    }

    fn sup_by_size(&self, r: &RegimeParams, _t: f64, event: EventType, n: u64) -> Result<f64> {
        let n = n as f64;
        Ok(match event {
            EventType::Death(i) => r.death_rate(i) * n,
            EventType::Swap { from: 0, .. } => r.swap_rate(0, 1) * n * n,
            EventType::Swap { .. } => r.swap_rate(1, 0) * n,
            EventType::Birth(_) => {
                return Err(BdsError::InvalidArgument("births are bounded by the birth dominator".into()))
            }
        })
    }

    fn is_builtin(&self) -> bool {
        true
    }
}

/// Invariant probability of patch 1 for a single individual in a population of size `n`.
pub fn toy_p1(alpha: f64, n: u64) -> f64 {
    1.0 / (alpha * n as f64 + 1.0)
}

/// `Binomial(n, toy_p1(alpha, n))` in the patch-1 count, laid out on the
/// lexicographic ordering of `U_n` (state `(z1, n - z1)` sits at index `z1`).
pub fn toy_invariant(alpha: f64, n: u64) -> Result<InvariantKernel> {
    let set = enumerate_level_set(n, 2, DEFAULT_LEVEL_SET_CAP)?;
    let q = toy_p1(alpha, n);
    let probabilities = set.states().iter().map(|z| binomial_pmf(n, z.counts()[0], q)).collect();
    Ok(InvariantKernel::new(set, probabilities, 0.0))
}

/// Averaged aggregate death rate `(d1 p1(n) + d2 p2(n)) n`.
pub fn toy_averaged_death(params: &ToyParams, n: u64) -> f64 {
    let p1 = toy_p1(params.alpha(), n);
    (params.d1 * p1 + params.d2 * (1.0 - p1)) * n as f64
}

fn binomial_pmf(n: u64, k: u64, q: f64) -> f64 {
    if q == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if q == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln_choose = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
    (ln_choose + k as f64 * q.ln() + (n - k) as f64 * (1.0 - q).ln()).exp()
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{evaluate, sup_by_enumeration};
    use crate::model::event_types;

    fn params() -> ToyParams {
        ToyParams { d1: 1.0, d2: 2.0, b: 0.0, lambda: 0.0, k12: 1.0, k21: 1.0 }
    }

    #[test]
    fn rates_at_one_one() {
        let r = params().regime();
        let rates = evaluate(&ToyModel, &r, 0.0, &[1, 1], true).unwrap();
        assert_eq!(rates[EventType::Death(0).index(2)], 1.0);
        assert_eq!(rates[EventType::Death(1).index(2)], 2.0);
        assert_eq!(rates[EventType::Swap { from: 0, to: 1 }.index(2)], 2.0);
        assert_eq!(rates[EventType::Swap { from: 1, to: 0 }.index(2)], 1.0);
    }

    #[test]
    fn rates_slice_agrees_with_rate() {
        let mut p = params();
        p.b = 0.7;
        p.lambda = 0.2;
        let r = p.regime();
        for z in [[0u64, 0], [3, 1], [0, 4], [5, 0]] {
            let mut fast = [0.0; 6];
            ToyModel.rates(&r, 0.0, &z, &mut fast);
            for e in event_types(2) {
                assert_eq!(fast[e.index(2)], ToyModel.rate(&r, 0.0, &z, e));
            }
        }
    }

    #[test]
    fn closed_form_sups() {
        let r = params().regime();
        assert_eq!(ToyModel.sup_by_size(&r, 0.0, EventType::Swap { from: 0, to: 1 }, 3).unwrap(), 9.0);
        for n in 0..8 {
            for e in event_types(2).filter(|e| !matches!(e, EventType::Birth(_))) {
                assert_eq!(
                    ToyModel.sup_by_size(&r, 0.0, e, n).unwrap(),
                    sup_by_enumeration(&ToyModel, &r, 0.0, e, n, 1000).unwrap()
                );
            }
        }
    }

    #[test]
    fn birth_dominator_values() {
        let mut p = params();
        p.b = 0.5;
        p.lambda = 0.1;
        let r = p.regime();
        let mut out = [0.0; 2];
        ToyModel.birth_dominator(&r, 0.0, 4, &mut out);
        assert!((out[0] - 2.1).abs() < 1e-12 && out[0] == out[1]);
        ToyModel.birth_dominator(&r, 0.0, 0, &mut out);
        assert!((out[0] - 0.1).abs() < 1e-15);
        let mut off = r.clone();
        off.k = 0.0;
        for n in 0..5 {
            ToyModel.birth_dominator(&off, 0.0, n, &mut out);
            assert_eq!(out, [0.0, 0.0]);
        }
    }

    #[test]
    fn p1_values() {
        assert_eq!(toy_p1(1.0, 1), 0.5);
        assert_eq!(toy_p1(0.0, 17), 1.0);
        assert!((toy_p1(0.5, 3) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn invariant_values() {
        let k = toy_invariant(1.0, 2).unwrap();
        let probs = k.probabilities();
        // states (0,2), (1,1), (2,0)
        assert!((probs[0] - 4.0 / 9.0).abs() < 1e-15);
        assert!((probs[1] - 4.0 / 9.0).abs() < 1e-15);
        assert!((probs[2] - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(toy_invariant(3.0, 0).unwrap().probabilities(), &[1.0]);
    }

    #[test]
    fn averaged_death_values() {
        assert!((toy_averaged_death(&params(), 2) - 10.0 / 3.0).abs() < 1e-14);
        assert_eq!(toy_averaged_death(&params(), 0), 0.0);
        let flat = ToyParams { d1: 0.7, d2: 0.7, ..params() };
        for n in 0..20 {
            assert!((toy_averaged_death(&flat, n) - 0.7 * n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn averaged_death_equivalent_form() {
        let p = ToyParams { d1: 0.4, d2: 1.3, b: 0.0, lambda: 0.0, k12: 0.6, k21: 1.7 };
        let (a, w) = (p.alpha(), p.d2 / p.d1);
        for n in 0..30u64 {
            let nf = n as f64;
            let other = p.d1 * nf * (1.0 + a * w * nf) / (1.0 + a * nf);
            assert!((toy_averaged_death(&p, n) - other).abs() < 1e-12 * (1.0 + other));
        }
    }

    #[test]
    fn averaged_death_bounds_and_limits() {
        for &(d1, d2) in &[(0.1, 0.1), (0.2, 3.0), (1.0, 1.5)] {
            for &k12 in &[0.01, 0.5, 1.0, 7.0] {
                let p = ToyParams { d1, d2, b: 0.0, lambda: 0.0, k12, k21: 1.0 };
                let mut prev = 0.0;
                for n in 0..50u64 {
                    let v = toy_averaged_death(&p, n);
                    assert!(v >= prev - 1e-12);
                    assert!(v >= d1 * n as f64 - 1e-12 && v <= d2 * n as f64 + 1e-12);
                    prev = v;
                }
            }
        }
        let p = ToyParams { d1: 0.3, d2: 2.0, b: 0.0, lambda: 0.0, k12: 1.0, k21: 1.0 };
        for n in 1..=10u64 {
            let low = toy_averaged_death(&ToyParams { k12: 1e-6, ..p }, n);
            let high = toy_averaged_death(&ToyParams { k12: 1e6, ..p }, n);
            assert!((low - 0.3 * n as f64).abs() / (0.3 * n as f64) < 1e-4);
            assert!((high - 2.0 * n as f64).abs() / (2.0 * n as f64) < 1e-4);
        }
    }
}
