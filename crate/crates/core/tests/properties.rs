//! Invariants checked over random inputs.

use std::collections::BTreeMap;

use bds_core::averaging::{stationary_distribution, SwapGenerator};
use bds_core::engine::{audit_path, check_strong_domination, simulate_bds, EngineOptions};
use bds_core::environment::EnvironmentPath;
use bds_core::intensity::{dominating_birth_bound, sup_by_enumeration, IntensityModel};
use bds_core::model::{apply_counts, enumerate_level_set, event_count, event_types, level_set_size, CountingVector};
use bds_core::multiscale::{occupation_between_demographic_events, Weighting};
use bds_core::rng::RandomSource;
use bds_core::stats::{tv_distance, EmpiricalLaw};
use bds_core::toy::{ToyModel, ToyParams};
use bds_core::{EventType, Population};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn toy_params() -> impl Strategy<Value = ToyParams> {
    (0.0..2.0f64, 0.0..2.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.05..5.0f64, 0.05..5.0f64).prop_map(|(d1, extra, b, lambda, k12, k21)| {
        ToyParams { d1, d2: d1 + extra, b, lambda, k12, k21 }
    })
}

fn counting(p: usize, max: u64) -> impl Strategy<Value = CountingVector> {
    prop::collection::vec(0..=max, event_count(p)).prop_map(move |v| CountingVector::from_counts(p, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn apply_counts_is_additive((p, a, b) in (1usize..4).prop_flat_map(|p| (Just(p), counting(p, 3), counting(p, 3)))) {
        let z0: Vec<i64> = (0..p as i64).map(|i| 5 - i).collect();
        let once = apply_counts(&z0, &(&a + &b)).unwrap();
        let twice = apply_counts(&apply_counts(&z0, &a).unwrap(), &b).unwrap();
        prop_assert_eq!(&once, &twice);
        // swaps never change the aggregate
        let delta = (a.births() as i64) - (a.deaths() as i64);
        prop_assert_eq!(apply_counts(&z0, &a).unwrap().iter().sum::<i64>(), z0.iter().sum::<i64>() + delta);
    }

    #[test]
    fn level_set_is_a_bijection(n in 0u64..12, p in 1usize..5) {
        let set = enumerate_level_set(n, p, 1_000_000).unwrap();
        prop_assert_eq!(set.len() as u128, level_set_size(n, p));
        for (k, z) in set.states().iter().enumerate() {
            prop_assert_eq!(z.size(), n);
            prop_assert_eq!(set.index_of(z.counts()), Some(k));
        }
        prop_assert!(set.states().windows(2).all(|w| w[0].counts() < w[1].counts()));
    }

    #[test]
    fn rates_stay_below_their_bounds(params in toy_params(), z1 in 0u64..15, z2 in 0u64..15, slack in 0u64..5) {
        let regime = params.regime();
        let z = [z1, z2];
        let n = z1 + z2 + slack;
        let births = dominating_birth_bound(&ToyModel, &regime, 0.0, n);
        for event in event_types(2) {
            let rate = ToyModel.rate(&regime, 0.0, &z, event);
            let bound = match event {
                EventType::Birth(j) => births[j],
                _ => ToyModel.sup_by_size(&regime, 0.0, event, n).unwrap(),
            };
            prop_assert!(rate <= bound * (1.0 + 1e-12), "{event} at {z:?}: {rate} > {bound}");
            if let Some(i) = event.source() {
                prop_assert!(z[i] > 0 || rate == 0.0);
            }
        }
    }

    #[test]
    fn sups_are_monotone_and_exact(params in toy_params(), n in 0u64..20) {
        let regime = params.regime();
        for event in event_types(2).filter(|e| !matches!(e, EventType::Birth(_))) {
            let here = ToyModel.sup_by_size(&regime, 0.0, event, n).unwrap();
            let next = ToyModel.sup_by_size(&regime, 0.0, event, n + 1).unwrap();
            prop_assert!(here <= next);
            let brute = sup_by_enumeration(&ToyModel, &regime, 0.0, event, n, 1_000_000).unwrap();
            prop_assert!((here - brute).abs() <= 1e-12 * brute.max(1.0), "{event}: {here} vs {brute}");
        }
    }

    #[test]
    fn tv_is_a_metric(
        a in prop::collection::vec(0i64..6, 1..60),
        b in prop::collection::vec(0i64..6, 1..60),
        c in prop::collection::vec(0i64..6, 1..60),
    ) {
        let (a, b, c) = (EmpiricalLaw::new("a", a), EmpiricalLaw::new("b", b), EmpiricalLaw::new("c", c));
        let ab = tv_distance(&a, &b).unwrap();
        prop_assert!((ab - tv_distance(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!((0.0..=1.0 + 1e-15).contains(&ab));
        prop_assert!(tv_distance(&a, &a).unwrap() == 0.0);
        prop_assert!(ab <= tv_distance(&a, &c).unwrap() + tv_distance(&c, &b).unwrap() + 1e-12);
    }

    #[test]
    fn paths_respect_their_skeleton(params in toy_params(), seed in any::<u64>(), z1 in 0u64..4, z2 in 0u64..4) {
        let env = EnvironmentPath::constant(params.regime());
        let source = RandomSource::new(seed);
        let z0 = Population(vec![z1, z2]);
        let path = simulate_bds(&ToyModel, &env, &z0, 1.0, &source, 0, &EngineOptions::default()).unwrap();
        prop_assert!(audit_path(&path).ok());
        prop_assert!(check_strong_domination(&path, path.skeleton.as_ref().unwrap()).holds);
        let again = simulate_bds(&ToyModel, &env, &z0, 1.0, &source, 0, &EngineOptions::default()).unwrap();
        prop_assert_eq!(path.events, again.events);
    }

    #[test]
    fn kernel_merge_commutes(params in toy_params(), seed in any::<u64>()) {
        let env = EnvironmentPath::constant(params.regime());
        let source = RandomSource::new(seed);
        let z0 = Population(vec![2, 1]);
        let occ = |rep| {
            let path = simulate_bds(&ToyModel, &env, &z0, 3.0, &source, rep, &EngineOptions::default()).unwrap();
            occupation_between_demographic_events(&path, (0.0, 3.0), Weighting::Uniform, 0.0).unwrap()
        };
        let (a, b) = (occ(0), occ(1));
        for (n, ka) in &a {
            let Some(kb) = b.get(n) else { continue };
            let mut ab = ka.clone();
            ab.merge(kb).unwrap();
            let mut ba = kb.clone();
            ba.merge(ka).unwrap();
            prop_assert!((ab.total() - ba.total()).abs() <= 1e-12 * ab.total());
            for (x, y) in ab.probabilities().iter().zip(ba.probabilities()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
        // total occupied time is the horizon
        let total: f64 = a.values().map(|k| k.total()).sum();
        prop_assert!((total - 3.0).abs() < 1e-9);
    }

    #[test]
    fn stationary_solve_matches_dense_null_space(
        n in 1u64..6,
        p in 2usize..4,
        rates in prop::collection::vec(0.01..10.0f64, 64),
        mask in prop::collection::vec(any::<bool>(), 64),
    ) {
        let set = enumerate_level_set(n, p, 1_000_000).unwrap();
        let m = set.len();
        prop_assume!(m >= 2);
        // a ring through all states keeps the chain irreducible
        let mut entries: Vec<(usize, usize, f64)> = (0..m).map(|i| (i, (i + 1) % m, rates[i % 64])).collect();
        for i in 0..m {
            for j in 0..m {
                let k = (i * m + j) % 64;
                if i != j && mask[k] {
                    entries.push((i, j, rates[(k * 7 + 3) % 64]));
                }
            }
        }
        let gen = SwapGenerator::from_entries(set, entries).unwrap();
        let pi = stationary_distribution(&gen).unwrap();
        let dense = gen.to_dense();
        let lt = DMatrix::from_fn(m, m, |i, j| dense[j][i]);
        let svd = lt.svd(false, true);
        let k = svd.singular_values.imin();
        let v: Vec<f64> = svd.v_t.unwrap().row(k).iter().copied().collect();
        let s: f64 = v.iter().sum();
        for (a, b) in pi.probabilities().iter().zip(v.iter().map(|x| x / s)) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn empirical_frequencies_sum_to_one() {
    let law = EmpiricalLaw::new("x", vec![1i64, 1, 2, 5, 5, 5]);
    let f: BTreeMap<i64, f64> = law.frequencies();
    assert!((f.values().sum::<f64>() - 1.0).abs() < 1e-15);
    assert_eq!(law.counts()[&5], 3);
}
