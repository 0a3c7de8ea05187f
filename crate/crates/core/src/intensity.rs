//! Intensity functionals and their domination bounds.
//!
//! An [`IntensityModel`] maps (regime, time, population) to one nonnegative rate
//! per event type. Besides the rates, a model declares the bounds the engine
//! needs to build a dominating process:
//!
//! * a birth dominator `k g_j(n)`, nondecreasing in the aggregate size `n`,
//!   with a growth class certifying non-explosion;
//! * for deaths and swaps, the supremum of the rate over all populations of
//!   size at most `n` ([`IntensityModel::sup_by_size`]). The default
//!   implementation enumerates the level sets; built-in models override it
//!   with closed forms.

use crate::environment::RegimeParams;
use crate::error::{BdsError, Result};
use crate::model::{enumerate_level_set, event_count, event_types, EventType, DEFAULT_LEVEL_SET_CAP};

/// How fast the birth dominator `g_j` may grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthClass {
    /// `g(n) <= a n + c`.
    Affine,
    /// `g(n) <= a n log(n + 2) + c`.
    LinearTimesLog,
    /// Any other growth the caller vouches satisfies the Feller condition.
    UserAsserted,
    /// Not certified; the engine refuses to simulate.
    Unspecified,
}

impl GrowthClass {
    pub fn is_certified(self) -> bool {
        !matches!(self, GrowthClass::Unspecified)
    }
}

pub trait IntensityModel: Send + Sync {
    fn subgroups(&self) -> usize;

    /// Rate of one event type at `z` under `regime`.
    fn rate(&self, regime: &RegimeParams, t: f64, z: &[u64], event: EventType) -> f64;

    /// All rates, written in dense event order.
    fn rates(&self, regime: &RegimeParams, t: f64, z: &[u64], out: &mut [f64]) {
        let p = self.subgroups();
        for (slot, event) in out.iter_mut().zip(event_types(p)) {
            *slot = self.rate(regime, t, z, event);
        }
    }

    /// `k g_j(n)` for each subgroup `j`.
    fn birth_dominator(&self, regime: &RegimeParams, t: f64, n: u64, out: &mut [f64]);

    fn growth_class(&self) -> GrowthClass;

    /// Supremum of a death or swap rate over all populations of size `<= n`.
    fn sup_by_size(&self, regime: &RegimeParams, t: f64, event: EventType, n: u64) -> Result<f64> {
        sup_by_enumeration(self, regime, t, event, n, DEFAULT_LEVEL_SET_CAP)
    }

    /// Whether the model is one of the built-ins whose bounds are exact by
    /// construction (used to decide how much verification to run).
    fn is_builtin(&self) -> bool {
        false
    }
}

/// Brute-force `sup` over `U_0 .. U_n`.
pub fn sup_by_enumeration<M: IntensityModel + ?Sized>(
    model: &M,
    regime: &RegimeParams,
    t: f64,
    event: EventType,
    n: u64,
    cap: usize,
) -> Result<f64> {
    if event.is_demographic() && matches!(event, EventType::Birth(_)) {
        return Err(BdsError::InvalidArgument("sup_by_size is defined for deaths and swaps only".into()));
    }
    let p = model.subgroups();
    let mut best = 0.0f64;
    for m in 0..=n {
        let set = enumerate_level_set(m, p, cap)?;
        for z in set.states() {
            best = best.max(model.rate(regime, t, z.counts(), event));
        }
    }
    Ok(best)
}

/// Rates at `z`, checked for finiteness, sign and the support condition.
/// With `verify`, each rate is also compared against its declared dominator
/// at the population's own size.
pub fn evaluate<M: IntensityModel + ?Sized>(
    model: &M,
    regime: &RegimeParams,
    t: f64,
    z: &[u64],
    verify: bool,
) -> Result<Vec<f64>> {
    let p = model.subgroups();
    if z.len() != p {
        return Err(BdsError::DimensionMismatch { expected: p, got: z.len() });
    }
    let mut out = vec![0.0; event_count(p)];
    model.rates(regime, t, z, &mut out);
    for (event, &rate) in event_types(p).zip(&out) {
        if !rate.is_finite() || rate < 0.0 {
            return Err(BdsError::ModelViolation { event, state: z.to_vec(), rate });
        }
        if let Some(i) = event.source() {
            if z[i] == 0 && rate != 0.0 {
                return Err(BdsError::SupportViolation { event, state: z.to_vec(), rate });
            }
        }
    }
    if verify {
        let n: u64 = z.iter().sum();
        let mut births = vec![0.0; p];
        model.birth_dominator(regime, t, n, &mut births);
        for (event, &rate) in event_types(p).zip(&out) {
            let bound = match event {
                EventType::Birth(j) => births[j],
                _ => model.sup_by_size(regime, t, event, n)?,
            };
            if rate > bound {
                return Err(BdsError::DominationViolation { event, state: z.to_vec(), rate, bound });
            }
        }
    }
    Ok(out)
}

/// `sup_by_size` with argument checking.
pub fn sup_by_size<M: IntensityModel + ?Sized>(
    model: &M,
    regime: &RegimeParams,
    t: f64,
    event: EventType,
    n: u64,
) -> Result<f64> {
    event.check(model.subgroups())?;
    if matches!(event, EventType::Birth(_)) {
        return Err(BdsError::InvalidArgument("births are bounded by the birth dominator".into()));
    }
    model.sup_by_size(regime, t, event, n)
}

pub fn dominating_birth_bound<M: IntensityModel + ?Sized>(
    model: &M,
    regime: &RegimeParams,
    t: f64,
    n: u64,
) -> Vec<f64> {
    let mut out = vec![0.0; model.subgroups()];
    model.birth_dominator(regime, t, n, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerDiagnostic {
    pub partial_sum: f64,
    /// `S(N) - S(N/2)`: stays away from zero for divergent series of
    /// near-linear growth, vanishes like a power of `N` for convergent ones.
    pub last_half_increment: f64,
    /// True when the increment looks like a convergent tail.
    pub suspicious: bool,
}

/// Partial sum of `1 / sum_j g_j(z)` for `z = 1..=horizon`.
///
/// This is a diagnostic only: no finite computation decides divergence.
pub fn feller_diagnostic(total_growth: impl Fn(u64) -> f64, horizon: u64) -> Result<FellerDiagnostic> {
    let mut sum = 0.0;
    let mut half_sum = 0.0;
    for z in 1..=horizon {
        let g = total_growth(z);
        if g == 0.0 || !g.is_finite() {
            return Err(BdsError::ZeroDenominator(z));
        }
        sum += 1.0 / g;
        if z == horizon / 2 {
            half_sum = sum;
        }
    }
    let inc = sum - half_sum;
    // n log n growth gives inc ~ ln2 / ln N; flag anything well below that
    let scale = (horizon.max(2) as f64).ln();
    Ok(FellerDiagnostic { partial_sum: sum, last_half_increment: inc, suspicious: inc * scale < 0.1 })
}

/// Linear intensities: deaths `d_i z_i`, births `b z_j + lambda`, swaps `k_ij z_i`.
#[derive(Debug, Clone, Copy)]
pub struct LinearModel {
    pub p: usize,
}

impl IntensityModel for LinearModel {
    fn subgroups(&self) -> usize {
        self.p
    }

    fn rate(&self, r: &RegimeParams, _t: f64, z: &[u64], event: EventType) -> f64 {
        match event {
            EventType::Death(i) => r.death_rate(i) * z[i] as f64,
            EventType::Birth(j) => r.birth * z[j] as f64 + r.immigration,
            EventType::Swap { from, to } => r.swap_rate(from, to) * z[from] as f64,
        }
    }

    fn birth_dominator(&self, r: &RegimeParams, _t: f64, n: u64, out: &mut [f64]) {
        out.fill(r.k * (r.birth * n as f64 + r.immigration));
    }

    fn growth_class(&self) -> GrowthClass {
        GrowthClass::Affine
    }

    fn sup_by_size(&self, r: &RegimeParams, _t: f64, event: EventType, n: u64) -> Result<f64> {
        Ok(match event {
            EventType::Death(i) => r.death_rate(i) * n as f64,
            EventType::Swap { from, to } => r.swap_rate(from, to) * n as f64,
            EventType::Birth(_) => {
                return Err(BdsError::InvalidArgument("births are bounded by the birth dominator".into()))
            }
        })
    }

    fn is_builtin(&self) -> bool {
        true
    }
}

/// Rescales a model: swaps by `swap`, demographic events by `demographic`.
///
/// `Scaled::two_timescale(m, eps)` gives the fast-swap model with swap
/// intensities multiplied by `1/eps`.
#[derive(Clone, Copy)]
pub struct Scaled<'a> {
    pub inner: &'a dyn IntensityModel,
    pub swap: f64,
    pub demographic: f64,
}

impl<'a> Scaled<'a> {
    pub fn two_timescale(inner: &'a dyn IntensityModel, epsilon: f64) -> Self {
        Scaled { inner, swap: 1.0 / epsilon, demographic: 1.0 }
    }

    pub fn zero(inner: &'a dyn IntensityModel) -> Self {
        Scaled { inner, swap: 0.0, demographic: 0.0 }
    }

    fn factor(&self, event: EventType) -> f64 {
        if event.is_swap() {
            self.swap
        } else {
            self.demographic
        }
    }
}

impl IntensityModel for Scaled<'_> {
    fn subgroups(&self) -> usize {
        self.inner.subgroups()
    }

    fn rate(&self, r: &RegimeParams, t: f64, z: &[u64], event: EventType) -> f64 {
        let f = self.factor(event);
        if f == 0.0 {
            0.0
        } else {
            f * self.inner.rate(r, t, z, event)
        }
    }

    fn birth_dominator(&self, r: &RegimeParams, t: f64, n: u64, out: &mut [f64]) {
        self.inner.birth_dominator(r, t, n, out);
        if self.demographic != 1.0 {
            out.iter_mut().for_each(|v| *v *= self.demographic);
        }
    }

    fn growth_class(&self) -> GrowthClass {
        self.inner.growth_class()
    }

    fn sup_by_size(&self, r: &RegimeParams, t: f64, event: EventType, n: u64) -> Result<f64> {
        let f = self.factor(event);
        if f == 0.0 {
            return Ok(0.0);
        }
        Ok(f * self.inner.sup_by_size(r, t, event, n)?)
    }

    fn is_builtin(&self) -> bool {
        self.inner.is_builtin()
    }
}
