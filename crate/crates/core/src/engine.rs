//! Exact pathwise simulation by thinning a dominating process.
//!
//! The construction has two steps:
//!
//! 1. [`simulate_dominating`] builds a jump skeleton `G`. Its birth components
//!    jump at rate `k g_j(n_b)` where `n_b = Z_0 + G^b` is the number of
//!    individuals ever present; death and swap components jump at the
//!    size-supremum rates `sup_{|z| <= n_b} mu(z)`. All these rates are
//!    constant between birth jumps and regime switches, so each component is a
//!    piecewise homogeneous Poisson stream. Every record carries a mark drawn
//!    uniformly on `(0, rate]`.
//! 2. [`thin_to_bds`] walks the skeleton in time order and accepts a record iff
//!    its mark is at most the model's rate at the current state. Accepted
//!    records form the events counting process; by construction every accepted
//!    jump is a skeleton jump.
//!
//! Because marks are absolute levels, any model dominated by the same
//! skeleton can be thinned from it without rescaling, which is how
//! [`coupled_pair`] produces monotone couplings.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::environment::EnvironmentPath;
use crate::error::{BdsError, Result};
use crate::intensity::IntensityModel;
use crate::model::{apply_counts, event_count, event_types, CountingVector, EventType, Population};
use crate::rng::{exponential, open_closed_unit, open_unit, role, RandomSource, Stream};

pub const DEFAULT_SKELETON_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    /// Maximum number of skeleton records before giving up.
    pub cap: usize,
    /// Check model rates against their dominators while thinning, and sample
    /// the strong order in [`coupled_pair`].
    pub verify: bool,
    /// Number of sampled counting-vector pairs per regime for the strong-order check.
    pub order_samples: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { cap: DEFAULT_SKELETON_CAP, verify: false, order_samples: 2_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonRecord {
    pub time: f64,
    pub event: EventType,
    /// Mark level in `(0, rate]`.
    pub mark: f64,
    /// Dominating rate of this component just before `time`.
    pub rate: f64,
}

#[derive(Clone, PartialEq)]
pub struct JumpSkeleton {
    pub z0: Population,
    pub horizon: f64,
    pub records: Vec<SkeletonRecord>,
}

// skeletons can hold millions of records; print a summary
impl std::fmt::Debug for JumpSkeleton {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JumpSkeleton")
            .field("z0", &self.z0)
            .field("horizon", &self.horizon)
            .field("records", &self.records.len())
            .field("last", &self.records.last())
            .finish()
    }
}

impl JumpSkeleton {
    pub fn p(&self) -> usize {
        self.z0.dim()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of dominating birth jumps up to and including `t`.
    pub fn births_until(&self, t: f64) -> u64 {
        self.records.iter().filter(|r| r.time <= t && matches!(r.event, EventType::Birth(_))).count() as u64
    }

    /// Jumps with their dominating rates, for [`reconstruct_by_ratio`].
    pub fn rated_jumps(&self) -> Vec<RatedJump> {
        self.records.iter().map(|r| RatedJump { time: r.time, event: r.event, rate: r.rate }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedEvent {
    pub time: f64,
    pub event: EventType,
    /// Index of the skeleton record this event was accepted from, if any.
    pub record: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub replicate: u64,
}

/// Accepted events of one BDS path, with the skeleton they were thinned from.
#[derive(Debug, Clone, PartialEq)]
pub struct BdsPath {
    pub z0: Population,
    pub horizon: f64,
    pub events: Vec<AcceptedEvent>,
    pub skeleton: Option<JumpSkeleton>,
    pub provenance: Option<Provenance>,
}

impl BdsPath {
    pub fn empty(z0: Population, horizon: f64) -> Self {
        BdsPath { z0, horizon, events: Vec::new(), skeleton: None, provenance: None }
    }

    pub fn p(&self) -> usize {
        self.z0.dim()
    }

    /// Counting vector `N_t` (right-continuous).
    pub fn counts_at(&self, t: f64) -> CountingVector {
        let mut nu = CountingVector::zeros(self.p());
        for e in self.events.iter().take_while(|e| e.time <= t) {
            nu.increment(e.event);
        }
        nu
    }

    pub fn final_counts(&self) -> CountingVector {
        self.counts_at(f64::INFINITY)
    }

    /// `Z_t = Z_0 + phi (.) N_t`.
    pub fn state_at(&self, t: f64) -> Population {
        let z0: Vec<i64> = self.z0.counts().iter().map(|&v| v as i64).collect();
        let z = apply_counts(&z0, &self.counts_at(t)).expect("dimensions agree");
        Population(z.into_iter().map(|v| v as u64).collect())
    }

    /// `(0, Z_0)` followed by `(T_k, Z_{T_k})` for every accepted event.
    pub fn trajectory(&self) -> Vec<(f64, Population)> {
        let mut z = self.z0.clone();
        let mut out = Vec::with_capacity(self.events.len() + 1);
        out.push((0.0, z.clone()));
        for e in &self.events {
            z.apply(e.event).expect("accepted events respect the support condition");
            out.push((e.time, z.clone()));
        }
        out
    }

    /// `(births, deaths, swaps)` up to and including `t`.
    pub fn totals_at(&self, t: f64) -> (u64, u64, u64) {
        let nu = self.counts_at(t);
        (nu.births(), nu.deaths(), nu.swaps())
    }
}

/// A jump of a dominating process with its intensity just before the jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatedJump {
    pub time: f64,
    pub event: EventType,
    pub rate: f64,
}

/// Anything with an ordered list of marked jump times.
pub trait Jumps {
    fn jump_list(&self) -> Vec<(f64, EventType)>;
}

impl Jumps for BdsPath {
    fn jump_list(&self) -> Vec<(f64, EventType)> {
        self.events.iter().map(|e| (e.time, e.event)).collect()
    }
}

impl Jumps for JumpSkeleton {
    fn jump_list(&self) -> Vec<(f64, EventType)> {
        self.records.iter().map(|r| (r.time, r.event)).collect()
    }
}

impl Jumps for [RatedJump] {
    fn jump_list(&self) -> Vec<(f64, EventType)> {
        self.iter().map(|r| (r.time, r.event)).collect()
    }
}

fn exploded(cap: usize, time: f64, z0: &Population, horizon: f64, mut records: Vec<SkeletonRecord>) -> BdsError {
    records.sort_by(|a, b| a.time.total_cmp(&b.time));
    BdsError::Explosion { cap, time, partial: Box::new(JumpSkeleton { z0: z0.clone(), horizon, records }) }
}

/// Picks a component proportionally to `rates` (all finite, total > 0).
fn pick<R: Rng>(rng: &mut R, rates: &[f64], total: f64) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &r) in rates.iter().enumerate() {
        if r > 0.0 {
            last = k;
            if u < r {
                return k;
            }
            u -= r;
        }
    }
    last
}

/// Generates the dominating skeleton on `(0, horizon]`.
///
/// Birth, death and swap components use separate random streams, so the
/// birth and death parts of the skeleton do not depend on the swap rates.
pub fn simulate_dominating<M: IntensityModel + ?Sized>(
    model: &M,
    env: &EnvironmentPath,
    z0: &Population,
    horizon: f64,
    source: &RandomSource,
    replicate: u64,
    opts: &EngineOptions,
) -> Result<JumpSkeleton> {
    let p = model.subgroups();
    if z0.dim() != p {
        return Err(BdsError::DimensionMismatch { expected: p, got: z0.dim() });
    }
    if !model.growth_class().is_certified() {
        return Err(BdsError::InvalidArgument(
            "birth dominator has no certified growth class; assert one explicitly".into(),
        ));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(BdsError::InvalidArgument(format!("horizon {horizon} must be finite and >= 0")));
    }
    let n0 = z0.size();
    let mut records = Vec::new();

    // births: rate k g_j(n_b), refreshed at every birth and regime switch
    let mut rng = source.stream(role::SKELETON_BIRTH, replicate);
    let mut birth_times = Vec::new();
    let mut rates = vec![0.0; p];
    let mut t = 0.0;
    let mut n_b = n0;
    while t < horizon {
        let regime = env.regime_after(t);
        let boundary = env.next_switch_after(t).min(horizon);
        model.birth_dominator(regime.params, t, n_b, &mut rates);
        let total: f64 = rates.iter().sum();
        let next = t + exponential(&mut rng, total);
        if next > boundary {
            t = boundary;
            continue;
        }
        t = next;
        let j = pick(&mut rng, &rates, total);
        let mark = open_closed_unit(&mut rng) * rates[j];
        records.push(SkeletonRecord { time: t, event: EventType::Birth(j), mark, rate: rates[j] });
        birth_times.push(t);
        n_b += 1;
        if records.len() > opts.cap {
            return Err(exploded(opts.cap, t, z0, horizon, records));
        }
    }

    // deaths and swaps: size-supremum rates at n_b, constant between
    // consecutive birth jumps and regime switches
    let mut breakpoints: Vec<f64> =
        birth_times.iter().copied().chain(env.switch_times().iter().copied().filter(|&s| s > 0.0 && s < horizon)).collect();
    breakpoints.push(horizon);
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    let deaths: Vec<EventType> = (0..p).map(EventType::Death).collect();
    let swaps: Vec<EventType> = event_types(p).filter(|e| e.is_swap()).collect();
    let mut sup_cache: HashMap<(usize, u64), Vec<f64>> = HashMap::new();
    for (stream_role, events) in [(role::SKELETON_DEATH, &deaths), (role::SKELETON_SWAP, &swaps)] {
        if events.is_empty() {
            continue;
        }
        let mut rng = source.stream(stream_role, replicate);
        let mut a = 0.0;
        let mut births_so_far = 0u64;
        for &b in &breakpoints {
            let regime = env.regime_after(a);
            let n = n0 + births_so_far;
            let sups = match sup_cache.get(&(regime.id, n)) {
                Some(v) => v,
                None => {
                    let v = event_types(p)
                        .map(|e| if matches!(e, EventType::Birth(_)) { Ok(0.0) } else { model.sup_by_size(regime.params, a, e, n) })
                        .collect::<Result<Vec<f64>>>()?;
                    sup_cache.entry((regime.id, n)).or_insert(v)
                }
            };
            let rates: Vec<f64> = events.iter().map(|e| sups[e.index(p)]).collect();
            let total: f64 = rates.iter().sum();
            let mut s = a;
            loop {
                s += exponential(&mut rng, total);
                if s > b {
                    break;
                }
                let k = pick(&mut rng, &rates, total);
                let mark = open_closed_unit(&mut rng) * rates[k];
                records.push(SkeletonRecord { time: s, event: events[k], mark, rate: rates[k] });
                if records.len() > opts.cap {
                    return Err(exploded(opts.cap, s, z0, horizon, records));
                }
            }
            if birth_times.binary_search_by(|x| x.total_cmp(&b)).is_ok() {
                births_so_far += 1;
            }
            a = b;
        }
    }

    records.sort_by(|x, y| x.time.total_cmp(&y.time));
    Ok(JumpSkeleton { z0: z0.clone(), horizon, records })
}

/// Thins a skeleton against `model`: record `j` is accepted iff
/// `mark_j <= mu(T_j, Z_{T_j-})`.
pub fn thin_to_bds<M: IntensityModel + ?Sized>(
    skeleton: &JumpSkeleton,
    model: &M,
    env: &EnvironmentPath,
    opts: &EngineOptions,
) -> Result<BdsPath> {
    let p = model.subgroups();
    if skeleton.p() != p {
        return Err(BdsError::DimensionMismatch { expected: p, got: skeleton.p() });
    }
    let mut z = skeleton.z0.clone();
    let mut events = Vec::new();
    for (index, rec) in skeleton.records.iter().enumerate() {
        if !(rec.mark > 0.0 && rec.mark <= rec.rate) {
            return Err(BdsError::CorruptedSkeleton { index, mark: rec.mark, rate: rec.rate });
        }
        let regime = env.regime_before(rec.time);
        let mu = model.rate(regime.params, rec.time, z.counts(), rec.event);
        if !mu.is_finite() || mu < 0.0 {
            return Err(BdsError::ModelViolation { event: rec.event, state: z.0.clone(), rate: mu });
        }
        if mu > rec.rate {
            return Err(BdsError::DominationViolation { event: rec.event, state: z.0.clone(), rate: mu, bound: rec.rate });
        }
        if opts.verify {
            crate::intensity::evaluate(model, regime.params, rec.time, z.counts(), true)?;
        }
        if rec.mark <= mu {
            if let Some(i) = rec.event.source() {
                if z.counts()[i] == 0 {
                    return Err(BdsError::SupportViolation { event: rec.event, state: z.0.clone(), rate: mu });
                }
            }
            z.apply(rec.event)?;
            events.push(AcceptedEvent { time: rec.time, event: rec.event, record: Some(index) });
        }
    }
    Ok(BdsPath { z0: skeleton.z0.clone(), horizon: skeleton.horizon, events, skeleton: None, provenance: None })
}

/// Dominating skeleton followed by thinning; the skeleton is kept on the path.
pub fn simulate_bds<M: IntensityModel + ?Sized>(
    model: &M,
    env: &EnvironmentPath,
    z0: &Population,
    horizon: f64,
    source: &RandomSource,
    replicate: u64,
    opts: &EngineOptions,
) -> Result<BdsPath> {
    let skeleton = simulate_dominating(model, env, z0, horizon, source, replicate, opts)?;
    let mut path = thin_to_bds(&skeleton, model, env, opts)?;
    path.skeleton = Some(skeleton);
    path.provenance = Some(Provenance { seed: source.seed(), replicate });
    Ok(path)
}

/// Samples `sup_{nu1 <= nu2} low(nu1) <= high(nu2)` over random counting
/// vectors, for every regime of `env`. Returns the first counterexample.
pub fn verify_strong_order<L, H>(
    low: &L,
    high: &H,
    env: &EnvironmentPath,
    z0: &Population,
    samples: usize,
    rng: &mut Stream,
) -> Result<()>
where
    L: IntensityModel + ?Sized,
    H: IntensityModel + ?Sized,
{
    let p = high.subgroups();
    if low.subgroups() != p {
        return Err(BdsError::DimensionMismatch { expected: p, got: low.subgroups() });
    }
    let base: Vec<i64> = z0.counts().iter().map(|&v| v as i64).collect();
    let m = event_count(p);
    let mut lo = vec![0.0; m];
    let mut hi = vec![0.0; m];
    // deaths and swaps that neither model can ever fire are left out of the
    // counting vectors: they are unreachable and would only add false alarms
    let reach = z0.size() + 4 * m as u64;
    for regime in env.regimes() {
        let mut active = vec![true; m];
        for (k, event) in event_types(p).enumerate() {
            if !matches!(event, EventType::Birth(_)) {
                active[k] = high.sup_by_size(regime, 0.0, event, reach)? > 0.0 || low.sup_by_size(regime, 0.0, event, reach)? > 0.0;
            }
        }
        for s in 0..samples {
            let width = 1 + (s % 4) as u64;
            let nu2: Vec<u64> = active.iter().map(|&a| if a { rng.random_range(0..=width) } else { 0 }).collect();
            let nu1: Vec<u64> = nu2.iter().map(|&v| rng.random_range(0..=v)).collect();
            let nu1 = CountingVector::from_counts(p, nu1)?;
            let nu2 = CountingVector::from_counts(p, nu2)?;
            let z1 = apply_counts(&base, &nu1)?;
            let z2 = apply_counts(&base, &nu2)?;
            if z1.iter().chain(&z2).any(|&v| v < 0) {
                continue;
            }
            let z1: Vec<u64> = z1.into_iter().map(|v| v as u64).collect();
            let z2: Vec<u64> = z2.into_iter().map(|v| v as u64).collect();
            low.rates(regime, 0.0, &z1, &mut lo);
            high.rates(regime, 0.0, &z2, &mut hi);
            for (k, event) in event_types(p).enumerate() {
                if lo[k] > hi[k] {
                    return Err(BdsError::StrongOrderViolation {
                        event,
                        low_state: z1,
                        high_state: z2,
                        low: lo[k],
                        high: hi[k],
                    });
                }
            }
        }
    }
    Ok(())
}

/// Two paths thinned from one skeleton built from `high`'s dominators.
///
/// When `low <=_s high`, every accepted event of the low path is an accepted
/// event of the high path. With `opts.verify`, the order is sampled first and a
/// counterexample is returned as an error.
#[allow(clippy::too_many_arguments)]
pub fn coupled_pair<L, H>(
    low: &L,
    high: &H,
    env: &EnvironmentPath,
    z0: &Population,
    horizon: f64,
    source: &RandomSource,
    replicate: u64,
    opts: &EngineOptions,
) -> Result<(BdsPath, BdsPath)>
where
    L: IntensityModel + ?Sized,
    H: IntensityModel + ?Sized,
{
    if opts.verify {
        let mut rng = source.stream("verify/strong-order", replicate);
        verify_strong_order(low, high, env, z0, opts.order_samples, &mut rng)?;
    }
    let skeleton = simulate_dominating(high, env, z0, horizon, source, replicate, opts)?;
    let mut low_path = thin_to_bds(&skeleton, low, env, opts)?;
    let mut high_path = thin_to_bds(&skeleton, high, env, opts)?;
    let provenance = Some(Provenance { seed: source.seed(), replicate });
    low_path.provenance = provenance;
    high_path.provenance = provenance;
    high_path.skeleton = Some(skeleton);
    Ok((low_path, high_path))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominationCheck {
    pub holds: bool,
    /// First jump of `a` that is not a jump of `b`.
    pub first_violation: Option<(f64, EventType)>,
}

/// True iff every jump of `a` (time and component) is a jump of `b`.
pub fn check_strong_domination<A: Jumps + ?Sized, B: Jumps + ?Sized>(a: &A, b: &B) -> DominationCheck {
    let a = a.jump_list();
    let b = b.jump_list();
    let mut k = 0;
    for &(t, e) in &a {
        while k < b.len() && b[k].0 < t {
            k += 1;
        }
        let mut found = false;
        let mut m = k;
        while m < b.len() && b[m].0 == t {
            if b[m].1 == e {
                found = true;
                break;
            }
            m += 1;
        }
        if !found {
            return DominationCheck { holds: false, first_violation: Some((t, e)) };
        }
    }
    DominationCheck { holds: true, first_violation: None }
}

/// Pathwise checks of one simulated path against its own skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathAudit {
    /// Every accepted event is a skeleton jump.
    pub dominated: bool,
    /// No event consumed from an empty subgroup.
    pub support: bool,
    /// `|Z_t| <= |Z_0| + G^b_t` at every event time.
    pub aggregate_bound: bool,
}

impl PathAudit {
    pub fn ok(&self) -> bool {
        self.dominated && self.support && self.aggregate_bound
    }
}

/// Audits a path produced by [`simulate_bds`]; paths without a skeleton fail
/// the domination and aggregate checks.
pub fn audit_path(path: &BdsPath) -> PathAudit {
    let Some(skeleton) = &path.skeleton else {
        return PathAudit { dominated: false, support: true, aggregate_bound: false };
    };
    let dominated = check_strong_domination(path, skeleton).holds;
    // dominating births up to and including each record
    let mut births = Vec::with_capacity(skeleton.len());
    let mut acc = 0u64;
    for r in &skeleton.records {
        if matches!(r.event, EventType::Birth(_)) {
            acc += 1;
        }
        births.push(acc);
    }
    let n0 = path.z0.size();
    let mut z: Vec<i64> = path.z0.counts().iter().map(|&v| v as i64).collect();
    let mut support = true;
    let mut aggregate_bound = true;
    for e in &path.events {
        if let Some(i) = e.event.source() {
            if z[i] <= 0 {
                support = false;
            }
            z[i] -= 1;
        }
        if let Some(j) = e.event.destination() {
            z[j] += 1;
        }
        let bound = match e.record {
            Some(k) if k < births.len() && skeleton.records[k].time == e.time => n0 + births[k],
            _ => {
                let k = skeleton.records.partition_point(|r| r.time <= e.time);
                n0 + if k == 0 { 0 } else { births[k - 1] }
            }
        };
        if z.iter().sum::<i64>() > bound as i64 {
            aggregate_bound = false;
        }
    }
    PathAudit { dominated, support, aggregate_bound }
}

/// Rates of `model` along the jumps of path `y`, evaluated at `Z^y` just
/// before each jump.
pub fn rated_jumps<M: IntensityModel + ?Sized>(y: &BdsPath, model: &M, env: &EnvironmentPath) -> Vec<RatedJump> {
    let mut z = y.z0.clone();
    y.events
        .iter()
        .map(|e| {
            let rate = model.rate(env.regime_before(e.time).params, e.time, z.counts(), e.event);
            z.apply(e.event).expect("valid path");
            RatedJump { time: e.time, event: e.event, rate }
        })
        .collect()
}

/// Rebuilds `x` from the jumps of a dominating process `y` by re-thinning at
/// the ratio `phi = lambda_x / lambda_y`.
///
/// Jumps of `x` get marks `U phi`, the other jumps of `y` get
/// `phi + (1 - phi) V`, with `U`, `V` fresh uniforms; a jump is kept iff its
/// mark lies in `(0, phi]`. The intensity of `x` is evaluated along the
/// reconstruction itself.
pub fn reconstruct_by_ratio<M: IntensityModel + ?Sized>(
    x: &BdsPath,
    y: &[RatedJump],
    x_model: &M,
    env: &EnvironmentPath,
    source: &RandomSource,
    replicate: u64,
) -> Result<BdsPath> {
    let mut u_stream = source.stream("reconstruction/u", replicate);
    let mut v_stream = source.stream("reconstruction/v", replicate);
    let mut z = x.z0.clone();
    let mut xi = 0;
    let mut events = Vec::new();
    for (index, jump) in y.iter().enumerate() {
        if let Some(next) = x.events.get(xi) {
            if next.time < jump.time {
                return Err(BdsError::NotDominated {
                    time: next.time,
                    reason: format!("{} is not a jump of the dominating path", next.event),
                });
            }
        }
        let x_jumps = x.events.get(xi).is_some_and(|e| e.time == jump.time && e.event == jump.event);
        if !(jump.rate > 0.0) {
            return Err(BdsError::NotDominated {
                time: jump.time,
                reason: format!("dominating intensity {} must be positive at its jumps", jump.rate),
            });
        }
        let regime = env.regime_before(jump.time);
        let lambda_x = x_model.rate(regime.params, jump.time, z.counts(), jump.event);
        let mut phi = lambda_x / jump.rate;
        if phi > 1.0 + 1e-12 {
            return Err(BdsError::NotDominated {
                time: jump.time,
                reason: format!("thinning ratio {phi} exceeds 1 for {}", jump.event),
            });
        }
        phi = phi.min(1.0);
        let mark = if x_jumps {
            xi += 1;
            open_closed_unit(&mut u_stream) * phi
        } else {
            phi + (1.0 - phi) * open_unit(&mut v_stream)
        };
        if mark > 0.0 && mark <= phi {
            z.apply(jump.event)?;
            events.push(AcceptedEvent { time: jump.time, event: jump.event, record: Some(index) });
        }
    }
    if let Some(e) = x.events.get(xi) {
        return Err(BdsError::NotDominated {
            time: e.time,
            reason: format!("{} is not a jump of the dominating path", e.event),
        });
    }
    Ok(BdsPath { z0: x.z0.clone(), horizon: x.horizon, events, skeleton: None, provenance: x.provenance })
}

/// `N_t - int_0^t mu(s, Z_{s-}) ds` per event type at each checkpoint.
///
/// Exact for piecewise-constant regimes: the integrand only changes at
/// events and switches.
pub fn compensator_residual<M: IntensityModel + ?Sized>(
    path: &BdsPath,
    model: &M,
    env: &EnvironmentPath,
    checkpoints: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let p = model.subgroups();
    let m = event_count(p);
    if let Some(&c) = checkpoints.iter().find(|&&c| c > path.horizon || c < 0.0) {
        return Err(BdsError::CheckpointBeyondHorizon { checkpoint: c, horizon: path.horizon });
    }
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by(|&a, &b| checkpoints[a].total_cmp(&checkpoints[b]));

    let mut out = vec![Vec::new(); checkpoints.len()];
    let mut z = path.z0.clone();
    let mut counts = vec![0.0; m];
    let mut integral = vec![0.0; m];
    let mut rates = vec![0.0; m];
    let mut t = 0.0;
    let mut next_cp = 0;

    let mut integrate = |from: f64, to: f64, z: &Population, integral: &mut [f64]| {
        for (a, b, regime) in env.pieces(from, to) {
            model.rates(regime.params, a, z.counts(), &mut rates);
            for (acc, r) in integral.iter_mut().zip(&rates) {
                *acc += r * (b - a);
            }
        }
    };

    for e in &path.events {
        while next_cp < order.len() && checkpoints[order[next_cp]] < e.time {
            let c = checkpoints[order[next_cp]];
            integrate(t, c, &z, &mut integral);
            t = c;
            out[order[next_cp]] = counts.iter().zip(&integral).map(|(n, i)| n - i).collect();
            next_cp += 1;
        }
        integrate(t, e.time, &z, &mut integral);
        t = e.time;
        counts[e.event.index(p)] += 1.0;
        z.apply(e.event)?;
    }
    while next_cp < order.len() {
        let c = checkpoints[order[next_cp]];
        integrate(t, c, &z, &mut integral);
        t = c;
        out[order[next_cp]] = counts.iter().zip(&integral).map(|(n, i)| n - i).collect();
        next_cp += 1;
    }
    Ok(out)
}

/// Runs `f` for replicates `0..count` in parallel and returns results in
/// replicate order, so downstream folds do not depend on the thread count.
pub fn replicate_map<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Writes skeleton records with acceptance flags and the state after each
/// record: `replicate,time,event_kind,src,dst,accepted,z_1..z_p`.
pub fn write_path_csv<W: Write>(out: &mut W, replicate: u64, path: &BdsPath, header: bool) -> std::io::Result<()> {
    let p = path.p();
    if header {
        write!(out, "replicate,time,event_kind,src,dst,accepted")?;
        for i in 1..=p {
            write!(out, ",z_{i}")?;
        }
        writeln!(out)?;
    }
    let fmt_idx = |i: Option<usize>| i.map(|v| (v + 1).to_string()).unwrap_or_default();
    let mut z = path.z0.clone();
    let write_row = |out: &mut W, time: f64, event: EventType, accepted: bool, z: &Population| {
        write!(
            out,
            "{replicate},{time},{},{},{},{}",
            event.kind(),
            fmt_idx(event.source()),
            fmt_idx(event.destination()),
            u8::from(accepted)
        )?;
        for v in z.counts() {
            write!(out, ",{v}")?;
        }
        writeln!(out)
    };
    match &path.skeleton {
        Some(skeleton) => {
            let mut next = path.events.iter().peekable();
            for (k, rec) in skeleton.records.iter().enumerate() {
                let accepted = next.peek().is_some_and(|e| e.record == Some(k));
                if accepted {
                    next.next();
                    z.apply(rec.event).expect("valid path");
                }
                write_row(out, rec.time, rec.event, accepted, &z)?;
            }
        }
        None => {
            for e in &path.events {
                z.apply(e.event).expect("valid path");
                write_row(out, e.time, e.event, true, &z)?;
            }
        }
    }
    Ok(())
}
