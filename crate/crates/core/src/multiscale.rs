//! Fast swaps: the two-timescale model and occupation kernels.
//!
//! Multiplying swap intensities by `1/eps` makes the swap chain relax between
//! demographic events. The time a path spends in each state of `U_n` while the
//! aggregate equals `n` estimates the occupation kernel, which should approach
//! the invariant law of the frozen swap chain as `eps -> 0`.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::averaging::SwapGenerator;
use crate::engine::{simulate_bds, BdsPath, EngineOptions};
use crate::environment::EnvironmentPath;
use crate::error::{BdsError, Result};
use crate::intensity::{IntensityModel, Scaled};
use crate::model::{enumerate_level_set, LevelSet, Population, DEFAULT_LEVEL_SET_CAP};
use crate::rng::RandomSource;

/// Default burn-in after each demographic event, in units of `eps`.
pub const DEFAULT_BURN_IN_FACTOR: f64 = 5.0;

#[derive(Clone, Copy)]
pub struct TwoTimescaleConfig<'a> {
    pub model: &'a dyn IntensityModel,
    pub epsilon: f64,
    pub horizon: f64,
    pub replicates: u64,
}

impl<'a> TwoTimescaleConfig<'a> {
    pub fn new(model: &'a dyn IntensityModel, epsilon: f64, horizon: f64, replicates: u64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(BdsError::InvalidArgument(format!("eps = {epsilon} must be positive")));
        }
        Ok(TwoTimescaleConfig { model, epsilon, horizon, replicates })
    }

    pub fn scaled(&self) -> Scaled<'a> {
        Scaled::two_timescale(self.model, self.epsilon)
    }

    /// Burn-in of `factor * eps` time units, a few swap relaxation times.
    pub fn burn_in(&self, factor: f64) -> f64 {
        factor * self.epsilon
    }
}

/// One replicate of the fast-swap model. The demographic part of the
/// dominating skeleton does not depend on `eps`.
pub fn simulate_two_timescale(
    cfg: &TwoTimescaleConfig<'_>,
    env: &EnvironmentPath,
    z0: &Population,
    source: &RandomSource,
    replicate: u64,
    opts: &EngineOptions,
) -> Result<BdsPath> {
    if !(cfg.epsilon > 0.0) {
        return Err(BdsError::InvalidArgument(format!("eps = {} must be positive", cfg.epsilon)));
    }
    simulate_bds(&cfg.scaled(), env, z0, cfg.horizon, source, replicate, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Raw dwell times.
    #[default]
    Uniform,
    /// Dwell times weighted by `e^{-s} ds`.
    Exponential,
}

impl Weighting {
    fn weight(self, a: f64, b: f64) -> f64 {
        match self {
            Weighting::Uniform => b - a,
            Weighting::Exponential => (-a).exp() - (-b).exp(),
        }
    }
}

/// Weighted time spent in each state of `U_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationKernel {
    set: Arc<LevelSet>,
    mass: Vec<f64>,
    total: f64,
    weighting: Weighting,
}

impl OccupationKernel {
    pub fn new(n: u64, p: usize, weighting: Weighting) -> Result<Self> {
        let set = enumerate_level_set(n, p, DEFAULT_LEVEL_SET_CAP)?;
        let mass = vec![0.0; set.len()];
        Ok(OccupationKernel { set, mass, total: 0.0, weighting })
    }

    pub fn n(&self) -> u64 {
        self.set.n()
    }

    pub fn level_set(&self) -> &Arc<LevelSet> {
        &self.set
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    fn add(&mut self, z: &[u64], w: f64) {
        let k = self.set.index_of(z).expect("occupation stays in its level set");
        self.mass[k] += w;
        self.total += w;
    }

    /// Pools another kernel on the same level set.
    pub fn merge(&mut self, other: &OccupationKernel) -> Result<()> {
        if other.set.n() != self.set.n() || other.set.p() != self.set.p() {
            return Err(BdsError::DimensionMismatch { expected: self.mass.len(), got: other.mass.len() });
        }
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Normalized weights; all zero when no time was recorded.
    pub fn probabilities(&self) -> Vec<f64> {
        if self.total > 0.0 {
            self.mass.iter().map(|m| m / self.total).collect()
        } else {
            vec![0.0; self.mass.len()]
        }
    }

    /// Total variation distance to a law on the same level set.
    pub fn tv_to(&self, law: &[f64]) -> Result<f64> {
        if law.len() != self.mass.len() {
            return Err(BdsError::DimensionMismatch { expected: self.mass.len(), got: law.len() });
        }
        if self.total <= 0.0 {
            return Err(BdsError::Empty(format!("no occupation recorded at n = {}", self.n())));
        }
        Ok(0.5 * self.probabilities().iter().zip(law).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

/// Occupation of `U_n` per aggregate size `n`, over the part of each segment of
/// constant `n` that lies in `window` and more than `burn_in` after the
/// segment started.
pub fn occupation_between_demographic_events(
    path: &BdsPath,
    window: (f64, f64),
    weighting: Weighting,
    burn_in: f64,
) -> Result<BTreeMap<u64, OccupationKernel>> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(BdsError::Empty(format!("window ({t0}, {t1})")));
    }
    if t0 < 0.0 || t1 > path.horizon {
        return Err(BdsError::InvalidArgument(format!("window ({t0}, {t1}) outside [0, {}]", path.horizon)));
    }
    let p = path.p();
    let mut out: BTreeMap<u64, OccupationKernel> = BTreeMap::new();
    let mut z = path.z0.clone();
    let mut segment_start = 0.0;
    let mut since = 0.0;
    let mut record = |z: &Population, a: f64, b: f64, segment_start: f64| -> Result<()> {
        let a = a.max(t0).max(segment_start + burn_in);
        let b = b.min(t1);
        if b > a {
            let n = z.size();
            let kernel = match out.entry(n) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => e.insert(OccupationKernel::new(n, p, weighting)?),
            };
            kernel.add(z.counts(), weighting.weight(a, b));
        }
        Ok(())
    };
    for e in &path.events {
        if e.time > t1 {
            break;
        }
        record(&z, since, e.time, segment_start)?;
        z.apply(e.event)?;
        since = e.time;
        if e.event.is_demographic() {
            segment_start = e.time;
        }
    }
    record(&z, since, path.horizon, segment_start)?;
    Ok(out)
}

/// `Gamma L` on the indicator basis, i.e. the row vector `gamma L`.
pub fn averaging_residual(kernel: &OccupationKernel, generator: &SwapGenerator) -> Result<Vec<f64>> {
    if kernel.n() != generator.n() || kernel.mass.len() != generator.dim() {
        return Err(BdsError::DimensionMismatch { expected: generator.dim(), got: kernel.mass.len() });
    }
    generator.left_apply(&kernel.probabilities())
}

/// `n,state_index,z_1..z_p,weight`
pub fn write_kernel_csv<'a, W: Write>(
    out: &mut W,
    kernels: impl IntoIterator<Item = &'a OccupationKernel>,
    header: bool,
    prefix: &[(&str, String)],
) -> std::io::Result<()> {
    let mut kernels = kernels.into_iter().peekable();
    if header {
        let p = kernels.peek().map_or(0, |k| k.set.p());
        for (name, _) in prefix {
            write!(out, "{name},")?;
        }
        write!(out, "n,state_index")?;
        for i in 1..=p {
            write!(out, ",z_{i}")?;
        }
        writeln!(out, ",weight")?;
    }
    for kernel in kernels {
        for (k, (z, w)) in kernel.set.states().iter().zip(kernel.probabilities()).enumerate() {
            for (_, value) in prefix {
                write!(out, "{value},")?;
            }
            write!(out, "{},{k}", kernel.n())?;
            for v in z.counts() {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{w}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{build_swap_generator, stationary_distribution};
    use crate::engine::AcceptedEvent;
    use crate::model::EventType;
    use crate::toy::{ToyModel, ToyParams};

    fn params() -> ToyParams {
        ToyParams { d1: 0.1, d2: 0.5, b: 0.0, lambda: 0.0, k12: 1.0, k21: 1.0 }
    }

    #[test]
    fn eps_one_is_plain_simulation() {
        let env = EnvironmentPath::constant(params().regime());
        let cfg = TwoTimescaleConfig::new(&ToyModel, 1.0, 3.0, 1).unwrap();
        let src = RandomSource::new(5);
        let z0 = Population(vec![2, 1]);
        let a = simulate_two_timescale(&cfg, &env, &z0, &src, 0, &Default::default()).unwrap();
        let b = simulate_bds(&ToyModel, &env, &z0, 3.0, &src, 0, &Default::default()).unwrap();
        assert_eq!(a, b);
        assert!(TwoTimescaleConfig::new(&ToyModel, 0.0, 3.0, 1).is_err());
    }

    #[test]
    fn demographic_skeleton_is_shared_across_eps() {
        let env = EnvironmentPath::constant(ToyParams { b: 0.3, lambda: 0.2, ..params() }.regime());
        let src = RandomSource::new(12);
        let z0 = Population(vec![1, 2]);
        let demo = |eps: f64| {
            let cfg = TwoTimescaleConfig::new(&ToyModel, eps, 4.0, 1).unwrap();
            let path = simulate_two_timescale(&cfg, &env, &z0, &src, 3, &Default::default()).unwrap();
            path.skeleton.unwrap().records.into_iter().filter(|r| !r.event.is_swap()).collect::<Vec<_>>()
        };
        let slow = demo(1.0);
        assert!(!slow.is_empty());
        assert_eq!(slow, demo(0.1));
    }

    #[test]
    fn no_swaps_gives_point_mass() {
        let path = BdsPath::empty(Population(vec![2, 1]), 4.0);
        let kernels = occupation_between_demographic_events(&path, (0.0, 4.0), Weighting::Uniform, 0.0).unwrap();
        let k = &kernels[&3];
        assert_eq!(k.total(), 4.0);
        let set = k.level_set();
        let idx = set.index_of(&[2, 1]).unwrap();
        let probs = k.probabilities();
        assert_eq!(probs[idx], 1.0);
        assert_eq!(probs.iter().sum::<f64>(), 1.0);
        assert!(occupation_between_demographic_events(&path, (1.0, 1.0), Weighting::Uniform, 0.0).is_err());
    }

    #[test]
    fn segments_and_burn_in() {
        let ev = |time, event| AcceptedEvent { time, event, record: None };
        let path = BdsPath {
            z0: Population(vec![2, 0]),
            horizon: 10.0,
            events: vec![
                ev(1.0, EventType::Swap { from: 0, to: 1 }),
                ev(3.0, EventType::Death(0)),
                ev(4.0, EventType::Swap { from: 1, to: 0 }),
                ev(8.0, EventType::Birth(1)),
            ],
            skeleton: None,
            provenance: None,
        };
        let k = occupation_between_demographic_events(&path, (0.0, 10.0), Weighting::Uniform, 0.5).unwrap();
        // n = 2: (2,0) on (0.5, 1], (1,1) on (1, 3]; then (1,1) again on (8.5, 10]
        let two = &k[&2];
        assert_eq!(two.mass()[two.level_set().index_of(&[2, 0]).unwrap()], 0.5);
        assert_eq!(two.mass()[two.level_set().index_of(&[1, 1]).unwrap()], 2.0 + 1.5);
        // n = 1: (0,1) on (3.5, 4], (1,0) on (4, 8]
        let one = &k[&1];
        assert_eq!(one.mass(), &[0.5, 4.0]);
        // the kernels only charge their own level sets
        for (n, kern) in &k {
            assert!(kern.level_set().states().iter().all(|z| z.size() == *n));
        }
        let e = occupation_between_demographic_events(&path, (0.0, 10.0), Weighting::Exponential, 0.0).unwrap();
        let w = e[&2].mass()[e[&2].level_set().index_of(&[2, 0]).unwrap()];
        assert!((w - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn merge_is_commutative() {
        let path = BdsPath::empty(Population(vec![2, 1]), 4.0);
        let other = BdsPath::empty(Population(vec![0, 3]), 2.0);
        let a = occupation_between_demographic_events(&path, (0.0, 4.0), Weighting::Uniform, 0.0).unwrap();
        let b = occupation_between_demographic_events(&other, (0.0, 2.0), Weighting::Uniform, 0.0).unwrap();
        let mut ab = a[&3].clone();
        ab.merge(&b[&3]).unwrap();
        let mut ba = b[&3].clone();
        ba.merge(&a[&3]).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.total(), 6.0);
    }

    #[test]
    fn residual_of_exact_law_vanishes() {
        let r = params().regime();
        let gen = build_swap_generator(&ToyModel, &r, 0.0, 2).unwrap();
        let pi = stationary_distribution(&gen).unwrap();
        let mut k = OccupationKernel::new(2, 2, Weighting::Uniform).unwrap();
        for (z, w) in k.level_set().clone().states().iter().zip(pi.probabilities()) {
            k.add(z.counts(), *w);
        }
        let res = averaging_residual(&k, &gen).unwrap();
        assert!(res.iter().all(|v| v.abs() < 1e-12));
        assert!(k.tv_to(pi.probabilities()).unwrap() < 1e-12);
    }

    #[test]
    fn kernel_csv_layout() {
        let path = BdsPath::empty(Population(vec![1, 1]), 1.0);
        let k = occupation_between_demographic_events(&path, (0.0, 1.0), Weighting::Uniform, 0.0).unwrap();
        let mut buf = Vec::new();
        write_kernel_csv(&mut buf, k.values(), true, &[("epsilon", "0.1".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "epsilon,n,state_index,z_1,z_2,weight");
        assert_eq!(lines[2], "0.1,2,1,1,1,1");
    }
}
