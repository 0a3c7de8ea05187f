//! Frozen-environment swap chains, their invariant laws, and the averaged
//! limit Birth-Death process.
//!
//! With the regime and the population size `n` held fixed, swaps alone form a
//! finite CTMC on the level set `U_n`. [`stationary_distribution`] solves for
//! its unique invariant law; [`averaged_intensity`] integrates demographic
//! rates against it; [`simulate_limit_process`] runs the aggregate process
//! whose rates are those averages.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::{Arc, RwLock};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::engine::{simulate_dominating, AcceptedEvent, EngineOptions, JumpSkeleton};
use crate::environment::{EnvironmentPath, RegimeParams, RegimeRef};
use crate::error::{BdsError, Result};
use crate::intensity::IntensityModel;
use crate::model::{enumerate_level_set, EventType, LevelSet, Population, DEFAULT_LEVEL_SET_CAP};
use crate::rng::RandomSource;

/// Residual tolerance for `pi L`, relative to the largest generator entry.
pub const STATIONARY_TOLERANCE: f64 = 1e-10;

/// Swap generator on `U_n` in compressed-row form.
#[derive(Debug, Clone)]
pub struct SwapGenerator {
    set: Arc<LevelSet>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    /// Off-diagonal rates; every entry is positive.
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SwapGenerator {
    /// Assembles a generator from off-diagonal `(from, to, rate)` triples.
    /// Zero rates are dropped and repeated pairs are summed.
    pub fn from_entries(set: Arc<LevelSet>, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let m = set.len();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for (i, j, r) in entries {
            if i >= m || j >= m {
                return Err(BdsError::IndexOutOfRange { index: i.max(j), p: m });
            }
            if !r.is_finite() || r < 0.0 {
                return Err(BdsError::InvalidArgument(format!("generator rate {r} must be finite and >= 0")));
            }
            if i != j && r > 0.0 {
                rows[i].push((j, r));
            }
        }
        let mut row_start = Vec::with_capacity(m + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = Vec::with_capacity(m);
        row_start.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut total = 0.0;
            for (j, r) in row {
                total += r;
                if cols.len() > *row_start.last().unwrap() && *cols.last().unwrap() == j {
                    *vals.last_mut().unwrap() += r;
                } else {
                    cols.push(j);
                    vals.push(r);
                }
            }
            diag.push(-total);
            row_start.push(cols.len());
        }
        Ok(SwapGenerator { set, row_start, cols, vals, diag })
    }

    pub fn n(&self) -> u64 {
        self.set.n()
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn level_set(&self) -> &Arc<LevelSet> {
        &self.set
    }

    /// Off-diagonal entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_start[i]..self.row_start[i + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub fn max_abs(&self) -> f64 {
        self.diag.iter().map(|d| d.abs()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        let mut out = vec![vec![0.0; m]; m];
        for (i, row) in out.iter_mut().enumerate() {
            row[i] = self.diag[i];
            for (j, r) in self.row(i) {
                row[j] += r;
            }
        }
        out
    }

    /// Row vector times generator, `pi L`.
    pub fn left_apply(&self, pi: &[f64]) -> Result<Vec<f64>> {
        let m = self.dim();
        if pi.len() != m {
            return Err(BdsError::DimensionMismatch { expected: m, got: pi.len() });
        }
        let mut out: Vec<f64> = pi.iter().zip(&self.diag).map(|(p, d)| p * d).collect();
        for (i, &w) in pi.iter().enumerate() {
            if w != 0.0 {
                for (j, r) in self.row(i) {
                    out[j] += w * r;
                }
            }
        }
        Ok(out)
    }
}

/// Frozen swap generator of `model` under `regime` at time `t` on `U_n`.
pub fn build_swap_generator<M: IntensityModel + ?Sized>(
    model: &M,
    regime: &RegimeParams,
    t: f64,
    n: u64,
) -> Result<SwapGenerator> {
    let p = model.subgroups();
    let set = enumerate_level_set(n, p, DEFAULT_LEVEL_SET_CAP)?;
    let mut entries = Vec::new();
    let mut target = vec![0u64; p];
    for (k, z) in set.states().iter().enumerate() {
        let z = z.counts();
        for from in 0..p {
            if z[from] == 0 {
                continue;
            }
            for to in (0..p).filter(|&to| to != from) {
                let event = EventType::Swap { from, to };
                let r = model.rate(regime, t, z, event);
                if !r.is_finite() || r < 0.0 {
                    return Err(BdsError::ModelViolation { event, state: z.to_vec(), rate: r });
                }
                if r > 0.0 {
                    target.copy_from_slice(z);
                    target[from] -= 1;
                    target[to] += 1;
                    let j = set.index_of(&target).expect("swaps stay in the level set");
                    entries.push((k, j, r));
                }
            }
        }
    }
    SwapGenerator::from_entries(set, entries)
}

/// Invariant law of a swap chain on `U_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantKernel {
    set: Arc<LevelSet>,
    probabilities: Vec<f64>,
    residual: f64,
}

impl InvariantKernel {
    pub fn new(set: Arc<LevelSet>, probabilities: Vec<f64>, residual: f64) -> Self {
        assert_eq!(set.len(), probabilities.len(), "kernel must cover the level set");
        InvariantKernel { set, probabilities, residual }
    }

    pub fn point_mass(set: Arc<LevelSet>, index: usize) -> Self {
        let mut probabilities = vec![0.0; set.len()];
        probabilities[index] = 1.0;
        InvariantKernel { set, probabilities, residual: 0.0 }
    }

    pub fn n(&self) -> u64 {
        self.set.n()
    }

    pub fn level_set(&self) -> &Arc<LevelSet> {
        &self.set
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// `max |pi L|` reported by the solver.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn expectation(&self, f: impl Fn(&[u64]) -> f64) -> f64 {
        self.set
            .states()
            .iter()
            .zip(&self.probabilities)
            .filter(|(_, &w)| w > 0.0)
            .map(|(z, w)| w * f(z.counts()))
            .sum()
    }
}

/// Closed communicating classes of the positive-rate graph.
pub fn closed_classes(gen: &SwapGenerator) -> Vec<Vec<usize>> {
    let m = gen.dim();
    let mut graph = DiGraph::<(), ()>::with_capacity(m, gen.cols.len());
    let nodes: Vec<_> = (0..m).map(|_| graph.add_node(())).collect();
    for i in 0..m {
        for (j, _) in gen.row(i) {
            graph.add_edge(nodes[i], nodes[j], ());
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0usize; m];
    for (c, scc) in sccs.iter().enumerate() {
        for node in scc {
            component[node.index()] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, scc)| scc.iter().all(|v| gen.row(v.index()).all(|(j, _)| component[j] == *c)))
        .map(|(_, scc)| {
            let mut states: Vec<usize> = scc.iter().map(|v| v.index()).collect();
            states.sort_unstable();
            states
        })
        .collect();
    closed.sort();
    closed
}

/// Solves `pi L = 0`, `sum pi = 1`.
///
/// The chain must have exactly one closed communicating class; `pi` is zero
/// off that class. On the class, the transposed balance system with its last
/// equation replaced by the normalization is solved by sparse Gaussian
/// elimination with partial pivoting.
pub fn stationary_distribution(gen: &SwapGenerator) -> Result<InvariantKernel> {
    let m = gen.dim();
    let n = gen.n();
    if m == 1 {
        return Ok(InvariantKernel::point_mass(Arc::clone(&gen.set), 0));
    }
    let classes = closed_classes(gen);
    if classes.len() != 1 {
        return Err(BdsError::UniquenessFailure { n, classes: classes.len() });
    }
    let class = &classes[0];
    let mut probabilities = vec![0.0; m];
    if class.len() == 1 {
        probabilities[class[0]] = 1.0;
    } else {
        let local: HashMap<usize, usize> = class.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let size = class.len();
        // row j of L^T restricted to the class
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); size];
        for (k, &i) in class.iter().enumerate() {
            *rows[k].entry(k).or_default() += gen.diagonal(i);
            for (j, r) in gen.row(i) {
                // closed class: every target is inside
                let l = local[&j];
                *rows[l].entry(k).or_default() += r;
            }
        }
        rows[size - 1] = (0..size).map(|k| (k, 1.0)).collect();
        let mut rhs = vec![0.0; size];
        rhs[size - 1] = 1.0;
        let x = sparse_solve(rows, rhs).ok_or(BdsError::IllConditioned { n, residual: f64::INFINITY })?;
        for (k, &i) in class.iter().enumerate() {
            probabilities[i] = x[k];
        }
    }
    for v in probabilities.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = probabilities.iter().sum();
    probabilities.iter_mut().for_each(|v| *v /= total);
    let residual = gen.left_apply(&probabilities)?.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(residual <= STATIONARY_TOLERANCE * gen.max_abs().max(1.0)) {
        return Err(BdsError::IllConditioned { n, residual });
    }
    Ok(InvariantKernel { set: Arc::clone(&gen.set), probabilities, residual })
}

/// Gaussian elimination on sparse rows with partial pivoting. Rows are ordered
/// maps so that summation order, and hence every bit of the result, is fixed.
fn sparse_solve(mut rows: Vec<BTreeMap<usize, f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let size = rows.len();
    let scale = rows.iter().flat_map(|r| r.values()).fold(0.0f64, |a, v| a.max(v.abs()));
    let mut pivot_row = vec![usize::MAX; size];
    let mut used = vec![false; size];
    // rows with a nonzero in each column, kept in sync with fill-in
    let mut in_col: Vec<Vec<usize>> = vec![Vec::new(); size];
    for (r, row) in rows.iter().enumerate() {
        for &c in row.keys() {
            in_col[c].push(r);
        }
    }
    for col in 0..size {
        let mut best = usize::MAX;
        let mut best_abs = 0.0;
        for &r in &in_col[col] {
            if used[r] {
                continue;
            }
            let v = rows[r].get(&col).map_or(0.0, |v| v.abs());
            if v > best_abs {
                best_abs = v;
                best = r;
            }
        }
        if best == usize::MAX || best_abs <= 1e-300 * scale.max(1.0) {
            return None;
        }
        used[best] = true;
        pivot_row[col] = best;
        let pivot: Vec<(usize, f64)> = rows[best].iter().map(|(&c, &v)| (c, v)).collect();
        let pivot_val = rows[best][&col];
        let pivot_rhs = rhs[best];
        let targets: Vec<usize> = in_col[col].iter().copied().filter(|&r| !used[r]).collect();
        for r in targets {
            let Some(&a) = rows[r].get(&col) else { continue };
            if a == 0.0 {
                continue;
            }
            let factor = a / pivot_val;
            for &(c, v) in &pivot {
                let entry = rows[r].entry(c).or_insert_with(|| {
                    in_col[c].push(r);
                    0.0
                });
                *entry -= factor * v;
            }
            rows[r].remove(&col);
            rhs[r] -= factor * pivot_rhs;
        }
    }
    let mut x = vec![0.0; size];
    for col in (0..size).rev() {
        let r = pivot_row[col];
        let mut acc = rhs[r];
        for (&c, &v) in &rows[r] {
            if c > col {
                acc -= v * x[c];
            }
        }
        x[col] = acc / rows[r][&col];
    }
    Some(x)
}

/// Expected demographic rates under an invariant kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedIntensity {
    pub birth: Vec<f64>,
    pub death: Vec<f64>,
}

impl AveragedIntensity {
    pub fn total_birth(&self) -> f64 {
        self.birth.iter().sum()
    }

    pub fn total_death(&self) -> f64 {
        self.death.iter().sum()
    }

    pub fn rate(&self, event: EventType) -> f64 {
        match event {
            EventType::Birth(j) => self.birth[j],
            EventType::Death(i) => self.death[i],
            EventType::Swap { .. } => 0.0,
        }
    }
}

pub fn averaged_intensity<M: IntensityModel + ?Sized>(
    kernel: &InvariantKernel,
    model: &M,
    regime: &RegimeParams,
    t: f64,
) -> AveragedIntensity {
    let p = model.subgroups();
    let birth = (0..p).map(|j| kernel.expectation(|z| model.rate(regime, t, z, EventType::Birth(j)))).collect();
    let death = (0..p).map(|i| kernel.expectation(|z| model.rate(regime, t, z, EventType::Death(i)))).collect();
    AveragedIntensity { birth, death }
}

/// Invariant kernels keyed by `(regime id, n)`. Entries never go stale because
/// regimes are immutable.
#[derive(Debug, Default)]
pub struct KernelCache {
    inner: RwLock<HashMap<(usize, u64), Arc<InvariantKernel>>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute<M: IntensityModel + ?Sized>(
        &self,
        model: &M,
        regime: RegimeRef<'_>,
        n: u64,
    ) -> Result<Arc<InvariantKernel>> {
        if let Some(k) = self.inner.read().expect("kernel cache").get(&(regime.id, n)) {
            return Ok(Arc::clone(k));
        }
        let kernel = Arc::new(stationary_distribution(&build_swap_generator(model, regime.params, 0.0, n)?)?);
        let mut guard = self.inner.write().expect("kernel cache");
        Ok(Arc::clone(guard.entry((regime.id, n)).or_insert(kernel)))
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("kernel cache").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries sorted by `(regime id, n)`.
    pub fn entries(&self) -> Vec<((usize, u64), Arc<InvariantKernel>)> {
        let mut out: Vec<_> = self.inner.read().expect("kernel cache").iter().map(|(k, v)| (*k, Arc::clone(v))).collect();
        out.sort_by_key(|e| e.0);
        out
    }

    /// `regime_id,n,state_index,z_1..z_p,probability`
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let entries = self.entries();
        let p = entries.first().map_or(0, |(_, k)| k.level_set().p());
        write!(out, "regime_id,n,state_index")?;
        for i in 1..=p {
            write!(out, ",z_{i}")?;
        }
        writeln!(out, ",probability")?;
        for ((regime, n), kernel) in entries {
            for (k, (z, w)) in kernel.level_set().states().iter().zip(kernel.probabilities()).enumerate() {
                write!(out, "{regime},{n},{k}")?;
                for v in z.counts() {
                    write!(out, ",{v}")?;
                }
                writeln!(out, ",{w}")?;
            }
        }
        Ok(())
    }
}

/// Path of the aggregate limit process: births and deaths only.
#[derive(Debug, Clone, PartialEq)]
pub struct DemographicPath {
    pub x0: u64,
    pub horizon: f64,
    pub events: Vec<AcceptedEvent>,
}

impl DemographicPath {
    /// `(births, deaths)` up to and including `t`.
    pub fn totals_at(&self, t: f64) -> (u64, u64) {
        let mut b = 0;
        let mut d = 0;
        for e in self.events.iter().take_while(|e| e.time <= t) {
            match e.event {
                EventType::Birth(_) => b += 1,
                EventType::Death(_) => d += 1,
                EventType::Swap { .. } => {}
            }
        }
        (b, d)
    }

    pub fn size_at(&self, t: f64) -> u64 {
        let (b, d) = self.totals_at(t);
        self.x0 + b - d
    }

    /// `(entry time, size, holding time, exited)` for each visit; the last
    /// visit is censored at the horizon.
    pub fn holding_times(&self) -> Vec<(f64, u64, f64, bool)> {
        let mut out = Vec::with_capacity(self.events.len() + 1);
        let mut x = self.x0;
        let mut since = 0.0;
        for e in &self.events {
            out.push((since, x, e.time - since, true));
            x = (x as i64 + e.event.size_change()) as u64;
            since = e.time;
        }
        out.push((since, x, self.horizon - since, false));
        out
    }
}

/// Limit process: births and deaths at the averaged rates `pi(X_{t-}, mu^dem)`.
///
/// Built by thinning the demographic part of the dominating skeleton of
/// `model` (same random streams as [`crate::engine::simulate_bds`]), which is
/// valid because averaged rates at size `m` never exceed the dominators at any
/// `n >= m`. The initial aggregate is split as `(x0, 0, ..., 0)` only to size the
/// skeleton; the skeleton itself depends on `x0` alone.
#[allow(clippy::too_many_arguments)]
pub fn simulate_limit_process<M: IntensityModel + ?Sized>(
    model: &M,
    env: &EnvironmentPath,
    x0: u64,
    horizon: f64,
    source: &RandomSource,
    replicate: u64,
    opts: &EngineOptions,
    cache: &KernelCache,
) -> Result<DemographicPath> {
    let p = model.subgroups();
    let mut z0 = vec![0u64; p];
    z0[0] = x0;
    let skeleton = demographic_skeleton(model, env, &Population(z0), horizon, source, replicate, opts)?;
    thin_limit(&skeleton, model, env, x0, cache)
}

/// Births and deaths of the dominating skeleton of `model`; swaps are left out.
pub fn demographic_skeleton<M: IntensityModel + ?Sized>(
    model: &M,
    env: &EnvironmentPath,
    z0: &Population,
    horizon: f64,
    source: &RandomSource,
    replicate: u64,
    opts: &EngineOptions,
) -> Result<JumpSkeleton> {
    let frozen = SwapFree(model);
    simulate_dominating(&frozen, env, z0, horizon, source, replicate, opts)
}

/// Thins a demographic skeleton at the averaged rates.
pub fn thin_limit<M: IntensityModel + ?Sized>(
    skeleton: &JumpSkeleton,
    model: &M,
    env: &EnvironmentPath,
    x0: u64,
    cache: &KernelCache,
) -> Result<DemographicPath> {
    let mut x = x0;
    let mut events = Vec::new();
    for (index, rec) in skeleton.records.iter().enumerate() {
        if rec.event.is_swap() {
            continue;
        }
        if !(rec.mark > 0.0 && rec.mark <= rec.rate) {
            return Err(BdsError::CorruptedSkeleton { index, mark: rec.mark, rate: rec.rate });
        }
        let regime = env.regime_before(rec.time);
        let kernel = cache.get_or_compute(model, regime, x)?;
        let rate = averaged_intensity(&kernel, model, regime.params, rec.time).rate(rec.event);
        if rate > rec.rate * (1.0 + 1e-12) {
            return Err(BdsError::DominationViolation {
                event: rec.event,
                state: vec![x],
                rate,
                bound: rec.rate,
            });
        }
        if rec.mark <= rate {
            x = (x as i64 + rec.event.size_change()) as u64;
            events.push(AcceptedEvent { time: rec.time, event: rec.event, record: Some(index) });
        }
    }
    Ok(DemographicPath { x0, horizon: skeleton.horizon, events })
}

/// A model with its swaps switched off but its demographic bounds intact.
struct SwapFree<'a, M: ?Sized>(&'a M);

impl<M: IntensityModel + ?Sized> IntensityModel for SwapFree<'_, M> {
    fn subgroups(&self) -> usize {
        self.0.subgroups()
    }

    fn rate(&self, r: &RegimeParams, t: f64, z: &[u64], event: EventType) -> f64 {
        if event.is_swap() {
            0.0
        } else {
            self.0.rate(r, t, z, event)
        }
    }

    fn birth_dominator(&self, r: &RegimeParams, t: f64, n: u64, out: &mut [f64]) {
        self.0.birth_dominator(r, t, n, out)
    }

    fn growth_class(&self) -> crate::intensity::GrowthClass {
        self.0.growth_class()
    }

    fn sup_by_size(&self, r: &RegimeParams, t: f64, event: EventType, n: u64) -> Result<f64> {
        if event.is_swap() {
            Ok(0.0)
        } else {
            self.0.sup_by_size(r, t, event, n)
        }
    }
}
