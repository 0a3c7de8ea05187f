//! Piecewise-constant random environments.
//!
//! An environment path is a list of switch times `0 = t_0 < t_1 < ...` and the
//! regime in force on each `[t_m, t_{m+1})`. Intensities evaluated at `t` read
//! the regime in force strictly before `t` (the left limit), which is what makes
//! them predictable.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BdsError, Result};
use crate::rng::{exponential, role, RandomSource};

/// Rates in force during one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeParams {
    /// Scale `k` of the birth dominator `k g_j(n)`.
    #[serde(default = "one")]
    pub k: f64,
    /// Per-subgroup individual death rates.
    #[serde(default)]
    pub death: Vec<f64>,
    /// Individual birth rate.
    #[serde(default)]
    pub birth: f64,
    /// Immigration rate per subgroup.
    #[serde(default)]
    pub immigration: f64,
    /// Swap coefficients, `swap[i][j]` for a move from `i` to `j`.
    #[serde(default)]
    pub swap: Vec<Vec<f64>>,
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

fn one() -> f64 {
    1.0
}

impl RegimeParams {
    pub fn swap_rate(&self, from: usize, to: usize) -> f64 {
        self.swap.get(from).and_then(|row| row.get(to)).copied().unwrap_or(0.0)
    }

    pub fn death_rate(&self, i: usize) -> f64 {
        self.death.get(i).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.k)
            .chain(self.death.iter().copied())
            .chain([self.birth, self.immigration])
            .chain(self.swap.iter().flatten().copied())
            .chain(self.extras.values().copied());
        for v in all {
            if !v.is_finite() || v < 0.0 {
                return Err(BdsError::InvalidArgument(format!("regime rate {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// A regime together with a stable identity used as a cache key.
#[derive(Debug, Clone, Copy)]
pub struct RegimeRef<'a> {
    pub id: usize,
    pub params: &'a RegimeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentPath {
    regimes: Vec<RegimeParams>,
    switch_times: Vec<f64>,
    sequence: Vec<usize>,
}

impl EnvironmentPath {
    /// Frozen environment: one regime forever.
    pub fn constant(params: RegimeParams) -> Self {
        EnvironmentPath { regimes: vec![params], switch_times: vec![0.0], sequence: vec![0] }
    }

    /// `switch_times[m]` starts the interval on which `regimes[sequence[m]]` is in force.
    pub fn new(regimes: Vec<RegimeParams>, switch_times: Vec<f64>, sequence: Vec<usize>) -> Result<Self> {
        if switch_times.is_empty() || switch_times[0] != 0.0 {
            return Err(BdsError::InvalidArgument("switch times must start at 0".into()));
        }
        if switch_times.len() != sequence.len() {
            return Err(BdsError::DimensionMismatch { expected: switch_times.len(), got: sequence.len() });
        }
        if switch_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BdsError::InvalidArgument("switch times must be strictly increasing".into()));
        }
        if let Some(&bad) = sequence.iter().find(|&&r| r >= regimes.len()) {
            return Err(BdsError::IndexOutOfRange { index: bad, p: regimes.len() });
        }
        for r in &regimes {
            r.validate()?;
        }
        Ok(EnvironmentPath { regimes, switch_times, sequence })
    }

    pub fn regimes(&self) -> &[RegimeParams] {
        &self.regimes
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    /// Position in the switch list of the regime in force just before `t`.
    fn segment_before(&self, t: f64) -> usize {
        // last m with t_m < t; t = 0 maps to the first segment
        self.switch_times.partition_point(|&s| s < t).saturating_sub(1)
    }

    /// Regime in force just before `t`.
    pub fn regime_before(&self, t: f64) -> RegimeRef<'_> {
        let id = self.sequence[self.segment_before(t)];
        RegimeRef { id, params: &self.regimes[id] }
    }

    /// Regime in force on `(t, next_switch_after(t)]`.
    pub fn regime_after(&self, t: f64) -> RegimeRef<'_> {
        let id = self.sequence[self.switch_times.partition_point(|&s| s <= t).saturating_sub(1)];
        RegimeRef { id, params: &self.regimes[id] }
    }

    /// First switch time strictly after `t`, or `inf`.
    pub fn next_switch_after(&self, t: f64) -> f64 {
        let k = self.switch_times.partition_point(|&s| s <= t);
        self.switch_times.get(k).copied().unwrap_or(f64::INFINITY)
    }

    /// Intervals `(a, b]` covering `(start, end]` on which the regime is fixed.
    pub fn pieces(&self, start: f64, end: f64) -> Vec<(f64, f64, RegimeRef<'_>)> {
        let mut out = Vec::new();
        let mut a = start;
        while a < end {
            let b = self.next_switch_after(a).min(end);
            out.push((a, b, self.regime_after(a)));
            a = b;
        }
        out
    }
}

/// Finite-state Markov regime switcher.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovSwitcher {
    pub regimes: Vec<RegimeParams>,
    /// Generator matrix; off-diagonal entries are switching rates.
    pub generator: Vec<Vec<f64>>,
    #[serde(default)]
    pub initial: usize,
}

impl MarkovSwitcher {
    pub fn sample(&self, horizon: f64, source: &RandomSource, replicate: u64) -> Result<EnvironmentPath> {
        let m = self.regimes.len();
        if self.generator.len() != m || self.generator.iter().any(|row| row.len() != m) {
            return Err(BdsError::DimensionMismatch { expected: m, got: self.generator.len() });
        }
        let mut rng = source.stream(role::ENVIRONMENT, replicate);
        let mut times = vec![0.0];
        let mut seq = vec![self.initial];
        let mut t = 0.0;
        let mut current = self.initial;
        loop {
            let rates: Vec<f64> =
                (0..m).map(|j| if j == current { 0.0 } else { self.generator[current][j].max(0.0) }).collect();
            let total: f64 = rates.iter().sum();
            t += exponential(&mut rng, total);
            if t >= horizon {
                break;
            }
            let mut u = rng.random::<f64>() * total;
            let mut next = current;
            for (j, &r) in rates.iter().enumerate() {
                if r > 0.0 {
                    next = j;
                    if u < r {
                        break;
                    }
                    u -= r;
                }
            }
            current = next;
            times.push(t);
            seq.push(current);
        }
        EnvironmentPath::new(self.regimes.clone(), times, seq)
    }
}
