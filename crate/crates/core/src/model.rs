//! Event algebra and state spaces of a Birth-Death-Swap population.
//!
//! A population with `p` subgroups is a vector of counts in `N^p`. It moves
//! through three kinds of events: a swap moves one individual from subgroup
//! `i` to subgroup `j`, a birth adds one individual to `j`, and a death
//! removes one from `i`. Subgroup indices are zero-based in code and printed
//! one-based.
//!
//! Event types are densely indexed `0..p(p+1)`: the `p(p-1)` swaps in
//! row-major `(from, to)` order, then the `p` births, then the `p` deaths.
//! Counting vectors are flat arrays over that index.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{BdsError, Result};

/// Default bound on the number of states enumerated for a single level set.
pub const DEFAULT_LEVEL_SET_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventType {
    Swap { from: usize, to: usize },
    Birth(usize),
    Death(usize),
}

impl EventType {
    pub fn swap(from: usize, to: usize) -> Result<Self> {
        if from == to {
            return Err(BdsError::DegenerateSwap(from));
        }
        Ok(EventType::Swap { from, to })
    }

    pub fn is_swap(self) -> bool {
        matches!(self, EventType::Swap { .. })
    }

    pub fn is_demographic(self) -> bool {
        !self.is_swap()
    }

    /// Subgroup an individual is removed from, if any.
    pub fn source(self) -> Option<usize> {
        match self {
            EventType::Swap { from, .. } => Some(from),
            EventType::Death(i) => Some(i),
            EventType::Birth(_) => None,
        }
    }

    /// Subgroup an individual is added to, if any.
    pub fn destination(self) -> Option<usize> {
        match self {
            EventType::Swap { to, .. } => Some(to),
            EventType::Birth(j) => Some(j),
            EventType::Death(_) => None,
        }
    }

    /// Change of the aggregate size: +1 for births, -1 for deaths, 0 for swaps.
    pub fn size_change(self) -> i64 {
        match self {
            EventType::Swap { .. } => 0,
            EventType::Birth(_) => 1,
            EventType::Death(_) => -1,
        }
    }

    pub fn check(self, p: usize) -> Result<()> {
        let check = |index: usize| {
            if index < p {
                Ok(())
            } else {
                Err(BdsError::IndexOutOfRange { index, p })
            }
        };
        match self {
            EventType::Swap { from, to } => {
                check(from)?;
                check(to)?;
                if from == to {
                    return Err(BdsError::DegenerateSwap(from));
                }
                Ok(())
            }
            EventType::Birth(j) => check(j),
            EventType::Death(i) => check(i),
        }
    }

    /// Dense index in `0..p(p+1)`.
    pub fn index(self, p: usize) -> usize {
        match self {
            EventType::Swap { from, to } => from * (p - 1) + if to < from { to } else { to - 1 },
            EventType::Birth(j) => p * (p - 1) + j,
            EventType::Death(i) => p * p + i,
        }
    }

    pub fn from_index(index: usize, p: usize) -> Result<Self> {
        let swaps = p * (p - 1);
        if index < swaps {
            let from = index / (p - 1);
            let r = index % (p - 1);
            let to = if r < from { r } else { r + 1 };
            Ok(EventType::Swap { from, to })
        } else if index < swaps + p {
            Ok(EventType::Birth(index - swaps))
        } else if index < swaps + 2 * p {
            Ok(EventType::Death(index - swaps - p))
        } else {
            Err(BdsError::IndexOutOfRange { index, p: event_count(p) })
        }
    }

    /// Short label used in CSV output.
    pub fn kind(self) -> &'static str {
        match self {
            EventType::Swap { .. } => "swap",
            EventType::Birth(_) => "birth",
            EventType::Death(_) => "death",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventType::Swap { from, to } => write!(f, "swap({},{})", from + 1, to + 1),
            EventType::Birth(j) => write!(f, "birth({})", j + 1),
            EventType::Death(i) => write!(f, "death({})", i + 1),
        }
    }
}

/// Number of distinct event types for `p` subgroups.
pub fn event_count(p: usize) -> usize {
    p * (p + 1)
}

/// All event types in dense-index order.
pub fn event_types(p: usize) -> impl Iterator<Item = EventType> {
    (0..event_count(p)).map(move |k| EventType::from_index(k, p).expect("index in range"))
}

/// Counts per subgroup.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Population(pub Vec<u64>);

impl Population {
    pub fn new(counts: Vec<u64>) -> Self {
        Population(counts)
    }

    pub fn empty(p: usize) -> Self {
        Population(vec![0; p])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    pub fn size(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Applies one event in place. Fails if it would empty a subgroup below zero.
    pub fn apply(&mut self, event: EventType) -> Result<()> {
        if let Some(i) = event.source() {
            if self.0[i] == 0 {
                return Err(BdsError::SupportViolation {
                    event,
                    state: self.0.clone(),
                    rate: f64::NAN,
                });
            }
            self.0[i] -= 1;
        }
        if let Some(j) = event.destination() {
            self.0[j] += 1;
        }
        Ok(())
    }
}

impl From<Vec<u64>> for Population {
    fn from(v: Vec<u64>) -> Self {
        Population(v)
    }
}

/// Per-event-type counts, indexed densely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingVector {
    p: usize,
    counts: Vec<u64>,
}

impl CountingVector {
    pub fn zeros(p: usize) -> Self {
        CountingVector { p, counts: vec![0; event_count(p)] }
    }

    pub fn from_counts(p: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != event_count(p) {
            return Err(BdsError::DimensionMismatch { expected: event_count(p), got: counts.len() });
        }
        Ok(CountingVector { p, counts })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, event: EventType) -> u64 {
        self.counts[event.index(self.p)]
    }

    pub fn increment(&mut self, event: EventType) {
        self.counts[event.index(self.p)] += 1;
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.counts
    }

    pub fn births(&self) -> u64 {
        (0..self.p).map(|j| self.get(EventType::Birth(j))).sum()
    }

    pub fn deaths(&self) -> u64 {
        (0..self.p).map(|i| self.get(EventType::Death(i))).sum()
    }

    pub fn swaps(&self) -> u64 {
        self.counts[..self.p * (self.p - 1)].iter().sum()
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &CountingVector) -> bool {
        self.counts.iter().zip(&other.counts).all(|(a, b)| a <= b)
    }
}

impl std::ops::Add for &CountingVector {
    type Output = CountingVector;

    fn add(self, rhs: &CountingVector) -> CountingVector {
        CountingVector {
            p: self.p,
            counts: self.counts.iter().zip(&rhs.counts).map(|(a, b)| a + b).collect(),
        }
    }
}

/// `e_dest - e_source`, with the fictitious "unborn/dead" subgroup mapped to zero.
pub fn effect_vector(event: EventType, p: usize) -> Result<Vec<i64>> {
    event.check(p)?;
    let mut phi = vec![0i64; p];
    if let Some(i) = event.source() {
        phi[i] -= 1;
    }
    if let Some(j) = event.destination() {
        phi[j] += 1;
    }
    Ok(phi)
}

/// `z0 + phi (.) nu`. Components may be negative for arbitrary `nu`; callers
/// decide whether that is an error.
pub fn apply_counts(z0: &[i64], nu: &CountingVector) -> Result<Vec<i64>> {
    let p = nu.p();
    if z0.len() != p {
        return Err(BdsError::DimensionMismatch { expected: p, got: z0.len() });
    }
    let mut z = z0.to_vec();
    for (k, &count) in nu.as_slice().iter().enumerate() {
        if count == 0 {
            continue;
        }
        let event = EventType::from_index(k, p)?;
        let count = count as i64;
        if let Some(i) = event.source() {
            z[i] -= count;
        }
        if let Some(j) = event.destination() {
            z[j] += count;
        }
    }
    Ok(z)
}

/// Sum of coordinates.
pub fn aggregate<T: Copy + std::iter::Sum<T>>(x: &[T]) -> T {
    x.iter().copied().sum()
}

/// The states of total size `n`, in lexicographic order, with a reverse index.
#[derive(Debug)]
pub struct LevelSet {
    n: u64,
    p: usize,
    states: Vec<Population>,
    index: HashMap<Vec<u64>, usize>,
}

impl LevelSet {
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Population] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &Population {
        &self.states[k]
    }

    pub fn index_of(&self, z: &[u64]) -> Option<usize> {
        self.index.get(z).copied()
    }
}

// the states are determined by (n, p)
impl PartialEq for LevelSet {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.p == other.p
    }
}

/// `C(n + p - 1, p - 1)`, saturating.
pub fn level_set_size(n: u64, p: usize) -> u128 {
    if p == 0 {
        return 0;
    }
    let k = (p - 1) as u128;
    let top = n as u128 + k;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(top - i) / (i + 1);
    }
    acc
}

type LevelSetCache = Mutex<HashMap<(u64, usize), Arc<LevelSet>>>;

fn level_set_cache() -> &'static LevelSetCache {
    static CACHE: OnceLock<LevelSetCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// All compositions of `n` into `p` nonnegative parts, lexicographically
/// ordered. Memoized per `(n, p)`; the order is the indexing contract shared by
/// generators and kernels.
pub fn enumerate_level_set(n: u64, p: usize, cap: usize) -> Result<Arc<LevelSet>> {
    if p == 0 {
        return Err(BdsError::InvalidArgument("p must be at least 1".into()));
    }
    if let Some(set) = level_set_cache().lock().expect("level set cache").get(&(n, p)) {
        return Ok(Arc::clone(set));
    }
    let size = level_set_size(n, p);
    if size > cap as u128 {
        return Err(BdsError::EnumerationCap { n, p, size, cap });
    }
    let mut states = Vec::with_capacity(size as usize);
    let mut current = vec![0u64; p];
    compositions(n, 0, &mut current, &mut states);
    let index = states.iter().enumerate().map(|(k, z)| (z.0.clone(), k)).collect();
    let set = Arc::new(LevelSet { n, p, states, index });
    level_set_cache()
        .lock()
        .expect("level set cache")
        .insert((n, p), Arc::clone(&set));
    Ok(set)
}

fn compositions(remaining: u64, slot: usize, current: &mut Vec<u64>, out: &mut Vec<Population>) {
    let p = current.len();
    if slot == p - 1 {
        current[slot] = remaining;
        out.push(Population(current.clone()));
        return;
    }
    for v in 0..=remaining {
        current[slot] = v;
        compositions(remaining - v, slot + 1, current, out);
    }
}
