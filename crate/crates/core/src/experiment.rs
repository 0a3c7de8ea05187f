//! Config-driven experiments.
//!
//! A JSON config names one experiment from a closed set, the model, the
//! environment and the Monte Carlo budget. Running it writes CSV tables (and a
//! few SVG plots) to the output directory and a `report.csv` with one
//! `experiment,statistic,value,threshold,pass` row per check.
//!
//! Every replicate draws from streams keyed by `(seed, role, replicate)` and
//! results are folded in replicate order, so outputs do not depend on the
//! number of worker threads.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::averaging::{build_swap_generator, stationary_distribution, simulate_limit_process, averaged_intensity, KernelCache};
use crate::engine::{audit_path, compensator_residual, replicate_map, simulate_bds, write_path_csv, EngineOptions};
use crate::environment::{EnvironmentPath, MarkovSwitcher, RegimeParams};
use crate::error::{BdsError, Result};
use crate::intensity::{IntensityModel, LinearModel};
use crate::model::{event_types, Population};
use crate::multiscale::{
    averaging_residual, occupation_between_demographic_events, simulate_two_timescale, write_kernel_csv, OccupationKernel,
    TwoTimescaleConfig, Weighting, DEFAULT_BURN_IN_FACTOR,
};
use crate::plot::{emit_plot, emit_timeline, PlotOptions, Series};
use crate::rng::RandomSource;
use crate::stats::{
    oracle_simulate, residual_zero_test, tv_distance, two_sample_test, write_results_csv, EmpiricalLaw, ResultRow,
};
use crate::toy::{toy_averaged_death, toy_invariant, ToyModel, ToyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    DominationDemo,
    ThinningVsOracle,
    MartingaleCheck,
    TwoTimescaleSweep,
    OccupationVsInvariant,
    LimitProcessConvergence,
    ToyVerify,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::DominationDemo => "domination-demo",
            ExperimentKind::ThinningVsOracle => "thinning-vs-oracle",
            ExperimentKind::MartingaleCheck => "martingale-check",
            ExperimentKind::TwoTimescaleSweep => "two-timescale-sweep",
            ExperimentKind::OccupationVsInvariant => "occupation-vs-invariant",
            ExperimentKind::LimitProcessConvergence => "limit-process-convergence",
            ExperimentKind::ToyVerify => "toy-verify",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    #[default]
    Toy,
    Linear { p: usize },
}

impl ModelSpec {
    pub fn build(&self) -> Box<dyn IntensityModel> {
        match self {
            ModelSpec::Toy => Box::new(ToyModel),
            ModelSpec::Linear { p } => Box::new(LinearModel { p: *p }),
        }
    }
}

/// Regime rates, either in toy notation or as a generic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum RegimeSpec {
    Toy(ToyParams),
    Rates(RegimeParams),
}

impl RegimeSpec {
    pub fn params(&self) -> RegimeParams {
        match self {
            RegimeSpec::Toy(t) => t.regime(),
            RegimeSpec::Rates(r) => r.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    Constant {
        regime: RegimeSpec,
    },
    MarkovSwitching {
        regimes: Vec<RegimeSpec>,
        generator: Vec<Vec<f64>>,
        #[serde(default)]
        initial: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Equivalence accepted when the chi-square p-value exceeds this.
    pub p_value: f64,
    /// Largest acceptable `|z|` for residual means.
    pub z_score: f64,
    /// Target total variation distance.
    pub tv: f64,
    /// Largest acceptable `max |gamma L|`.
    pub averaging_residual: f64,
    /// Absolute tolerance for solver checks.
    pub solver: f64,
    /// Allowed increase between consecutive points of a decreasing trend.
    pub trend_slack: f64,
    /// Relative tolerance of the `1/eps` swap-count scaling.
    pub swap_scaling: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            p_value: 0.01,
            z_score: 3.0,
            tv: 0.05,
            averaging_residual: 0.1,
            solver: 1e-10,
            trend_slack: 0.01,
            swap_scaling: 0.1,
        }
    }
}

fn default_epsilons() -> Vec<f64> {
    vec![1.0]
}

fn default_replicates() -> u64 {
    1000
}

fn default_burn_in() -> f64 {
    DEFAULT_BURN_IN_FACTOR
}

fn default_checkpoints() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

fn default_alphas() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 2.0, 10.0]
}

fn default_max_size() -> u64 {
    30
}

fn default_level() -> u64 {
    2
}

fn default_path_dumps() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub environment: Option<EnvironmentSpec>,
    #[serde(default)]
    pub z0: Vec<u64>,
    #[serde(default)]
    pub horizon: f64,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    /// Master seed; there is no clock-based fallback.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Martingale checkpoints.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<f64>,
    /// Aggregate size whose occupation kernel is compared.
    #[serde(default = "default_level")]
    pub level: u64,
    #[serde(default)]
    pub weighting: Weighting,
    /// Burn-in after each demographic event, in units of `eps`.
    #[serde(default = "default_burn_in")]
    pub burn_in_factor: f64,
    /// Swap-rate ratios checked by `toy-verify`.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Largest population size checked by `toy-verify`.
    #[serde(default = "default_max_size")]
    pub max_size: u64,
    /// Number of replicates written to the path dump.
    #[serde(default = "default_path_dumps")]
    pub path_dumps: u64,
    #[serde(default)]
    pub skeleton_cap: Option<usize>,
}

fn config_error(pointer: &str, message: impl Into<String>) -> BdsError {
    BdsError::Config { pointer: pointer.into(), message: message.into() }
}

/// Parses a config, reporting failures with a JSON pointer.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer: String = e
            .path()
            .iter()
            .filter_map(|seg| match seg {
                serde_path_to_error::Segment::Seq { index } => Some(format!("/{index}")),
                serde_path_to_error::Segment::Map { key } => Some(format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
                serde_path_to_error::Segment::Enum { .. } | serde_path_to_error::Segment::Unknown => None,
            })
            .collect();
        config_error(&pointer, e.inner().to_string())
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

impl ExperimentConfig {
    fn needs_paths(&self) -> bool {
        self.experiment != ExperimentKind::ToyVerify
    }

    /// Checks constraints the schema cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(config_error("/seed", "a master seed is required"));
        }
        if self.epsilons.is_empty() {
            return Err(config_error("/epsilons", "at least one eps is required"));
        }
        if let Some(k) = self.epsilons.iter().position(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(config_error(&format!("/epsilons/{k}"), "eps must be positive and finite"));
        }
        if let ModelSpec::Linear { p } = self.model {
            if p == 0 {
                return Err(config_error("/model/p", "p must be at least 1"));
            }
        }
        let p = self.model.build().subgroups();
        if !self.needs_paths() {
            if self.model != ModelSpec::Toy {
                return Err(config_error("/model", "toy-verify runs on the toy model"));
            }
            if let Some(k) = self.alphas.iter().position(|a| !(*a >= 0.0 && a.is_finite())) {
                return Err(config_error(&format!("/alphas/{k}"), "alpha must be finite and >= 0"));
            }
            return Ok(());
        }
        let Some(env) = &self.environment else {
            return Err(config_error("/environment", "this experiment needs an environment"));
        };
        let check_regime = |spec: &RegimeSpec, pointer: &str| -> Result<()> {
            if let RegimeSpec::Toy(t) = spec {
                t.validate().map_err(|e| config_error(pointer, e.to_string()))?;
                if p != 2 {
                    return Err(config_error(pointer, "toy regimes need a two-subgroup model"));
                }
            }
            spec.params().validate().map_err(|e| config_error(pointer, e.to_string()))
        };
        match env {
            EnvironmentSpec::Constant { regime } => check_regime(regime, "/environment/regime")?,
            EnvironmentSpec::MarkovSwitching { regimes, generator, initial } => {
                if regimes.is_empty() {
                    return Err(config_error("/environment/regimes", "at least one regime is required"));
                }
                for (k, r) in regimes.iter().enumerate() {
                    check_regime(r, &format!("/environment/regimes/{k}"))?;
                }
                if generator.len() != regimes.len() {
                    return Err(config_error("/environment/generator", "generator must be square over the regimes"));
                }
                for (i, row) in generator.iter().enumerate() {
                    if row.len() != regimes.len() {
                        return Err(config_error(&format!("/environment/generator/{i}"), "row length must match regimes"));
                    }
                    for (j, v) in row.iter().enumerate() {
                        if i != j && !(*v >= 0.0 && v.is_finite()) {
                            return Err(config_error(
                                &format!("/environment/generator/{i}/{j}"),
                                "switching rates must be finite and >= 0",
                            ));
                        }
                    }
                }
                if *initial >= regimes.len() {
                    return Err(config_error("/environment/initial", "initial regime out of range"));
                }
            }
        }
        if self.z0.len() != p {
            return Err(config_error("/z0", format!("expected {p} subgroup counts, got {}", self.z0.len())));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(config_error("/horizon", "horizon must be positive and finite"));
        }
        if self.replicates == 0 {
            return Err(config_error("/replicates", "at least one replicate is required"));
        }
        if let Some(k) = self.checkpoints.iter().position(|c| !(*c >= 0.0)) {
            return Err(config_error(&format!("/checkpoints/{k}"), "checkpoints must be >= 0"));
        }
        if !(self.burn_in_factor >= 0.0) {
            return Err(config_error("/burn_in_factor", "burn-in must be >= 0"));
        }
        let frozen_only = matches!(self.experiment, ExperimentKind::OccupationVsInvariant);
        if frozen_only && !matches!(env, EnvironmentSpec::Constant { .. }) {
            return Err(config_error("/environment", "occupation kernels are compared in a frozen environment"));
        }
        Ok(())
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub verify: bool,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub experiment: ExperimentKind,
    pub rows: Vec<ResultRow>,
    pub out_dir: PathBuf,
    pub elapsed: std::time::Duration,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, statistic: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.statistic == statistic)
    }
}

enum Environment {
    Fixed(EnvironmentPath),
    Switching { switcher: MarkovSwitcher, horizon: f64 },
}

impl Environment {
    fn from_spec(spec: &EnvironmentSpec, horizon: f64) -> Result<Self> {
        Ok(match spec {
            EnvironmentSpec::Constant { regime } => Environment::Fixed(EnvironmentPath::constant(regime.params())),
            EnvironmentSpec::MarkovSwitching { regimes, generator, initial } => Environment::Switching {
                switcher: MarkovSwitcher {
                    regimes: regimes.iter().map(RegimeSpec::params).collect(),
                    generator: generator.clone(),
                    initial: *initial,
                },
                horizon,
            },
        })
    }

    fn path(&self, source: &RandomSource, replicate: u64) -> Result<EnvironmentPath> {
        match self {
            Environment::Fixed(p) => Ok(p.clone()),
            Environment::Switching { switcher, horizon } => switcher.sample(*horizon, source, replicate),
        }
    }

    fn frozen(&self) -> Option<&RegimeParams> {
        match self {
            Environment::Fixed(p) => Some(&p.regimes()[0]),
            Environment::Switching { .. } => None,
        }
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    name: &'static str,
    model: Box<dyn IntensityModel>,
    env: Option<Environment>,
    z0: Population,
    source: RandomSource,
    engine: EngineOptions,
    out: PathBuf,
    rows: Vec<ResultRow>,
}

impl Context<'_> {
    fn create(&self, file: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(file))?))
    }

    fn env(&self) -> &Environment {
        self.env.as_ref().expect("validated")
    }

    fn eps_sorted(&self) -> Vec<f64> {
        let mut eps = self.cfg.epsilons.clone();
        eps.sort_by(|a, b| b.total_cmp(a));
        eps.dedup();
        eps
    }
}

/// Runs an experiment on a dedicated thread pool.
pub fn run_config(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let mut cfg = cfg.clone();
    if opts.seed.is_some() {
        cfg.seed = opts.seed;
    }
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(BdsError::InvalidArgument("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| BdsError::InvalidArgument(e.to_string()))?;
    let out = opts.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()));
    std::fs::create_dir_all(&out)?;
    let env = match &cfg.environment {
        Some(spec) if cfg.needs_paths() => Some(Environment::from_spec(spec, cfg.horizon)?),
        _ => None,
    };
    let mut ctx = Context {
        cfg: &cfg,
        name: cfg.experiment.name(),
        model: cfg.model.build(),
        env,
        z0: Population(cfg.z0.clone()),
        source: RandomSource::new(cfg.seed.expect("validated")),
        engine: EngineOptions {
            cap: cfg.skeleton_cap.unwrap_or(crate::engine::DEFAULT_SKELETON_CAP),
            verify: opts.verify,
            ..Default::default()
        },
        out: out.clone(),
        rows: Vec::new(),
    };
    let started = Instant::now();
    pool.install(|| match cfg.experiment {
        ExperimentKind::DominationDemo => domination_demo(&mut ctx),
        ExperimentKind::ThinningVsOracle => thinning_vs_oracle(&mut ctx),
        ExperimentKind::MartingaleCheck => martingale_check(&mut ctx),
        ExperimentKind::TwoTimescaleSweep => two_timescale_sweep(&mut ctx),
        ExperimentKind::OccupationVsInvariant => occupation_vs_invariant(&mut ctx),
        ExperimentKind::LimitProcessConvergence => limit_process_convergence(&mut ctx),
        ExperimentKind::ToyVerify => toy_verify(&mut ctx),
    })?;
    let mut report = ctx.create("report.csv")?;
    write_results_csv(&mut report, &ctx.rows)?;
    report.flush()?;
    Ok(Report { experiment: cfg.experiment, rows: ctx.rows, out_dir: out, elapsed: started.elapsed() })
}

/// Loads, runs and reports. Exit code: 0 if every check passed, 2 if a
/// threshold failed, 1 on config or runtime errors.
pub fn run(config: &Path, opts: &RunOptions) -> i32 {
    let result = load_config(config).and_then(|cfg| run_config(&cfg, opts));
    match result {
        Ok(report) => {
            for r in &report.rows {
                println!(
                    "{} {} = {:.6e} (threshold {:.3e}) {}",
                    r.experiment,
                    r.statistic,
                    r.value,
                    r.threshold,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            println!("{} finished in {:.2?}, outputs in {}", report.experiment.name(), report.elapsed, report.out_dir.display());
            if report.passed() {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn fmt_eps(eps: f64) -> String {
    format!("{eps}")
}

fn domination_demo(ctx: &mut Context<'_>) -> Result<()> {
    let mut dumps = ctx.create("paths.csv")?;
    writeln!(dumps, "epsilon,{}", path_header(ctx.z0.dim()))?;
    let mut sweep = ctx.create("domination.csv")?;
    writeln!(sweep, "epsilon,replicates,dominated,support,aggregate_bound,mean_skeleton,mean_accepted")?;
    let eps_list = ctx.eps_sorted();
    for &eps in &eps_list {
        let cfg = TwoTimescaleConfig::new(ctx.model.as_ref(), eps, ctx.cfg.horizon, ctx.cfg.replicates)?;
        let env = ctx.env();
        let results = replicate_map(ctx.cfg.replicates, |rep| -> Result<_> {
            let e = env.path(&ctx.source, rep)?;
            let path = simulate_two_timescale(&cfg, &e, &ctx.z0, &ctx.source, rep, &ctx.engine)?;
            let audit = audit_path(&path);
            let sizes = (path.skeleton.as_ref().map_or(0, |s| s.len()), path.events.len());
            let dump = if rep < ctx.cfg.path_dumps { Some(path) } else { None };
            Ok((audit, sizes, dump))
        });
        let mut counts = [0u64; 3];
        let (mut sk_total, mut acc_total) = (0usize, 0usize);
        for r in results {
            let (audit, (sk, accepted), dump) = r?;
            counts[0] += u64::from(!audit.dominated);
            counts[1] += u64::from(!audit.support);
            counts[2] += u64::from(!audit.aggregate_bound);
            sk_total += sk;
            acc_total += accepted;
            if let Some(path) = dump {
                let mut buf = Vec::new();
                write_path_csv(&mut buf, path.provenance.map_or(0, |p| p.replicate), &path, false)?;
                for line in String::from_utf8_lossy(&buf).lines() {
                    writeln!(dumps, "{},{line}", fmt_eps(eps))?;
                }
                if path.provenance.map(|p| p.replicate) == Some(0) && eps == *eps_list.last().unwrap() {
                    emit_timeline(&path, &format!("event timeline, eps = {eps}"), &ctx.out.join("timeline.svg"))?;
                }
            }
        }
        let n = ctx.cfg.replicates as f64;
        writeln!(
            sweep,
            "{},{},{},{},{},{},{}",
            fmt_eps(eps),
            ctx.cfg.replicates,
            ctx.cfg.replicates - counts[0],
            ctx.cfg.replicates - counts[1],
            ctx.cfg.replicates - counts[2],
            sk_total as f64 / n,
            acc_total as f64 / n
        )?;
        for (k, label) in ["domination_violations", "support_violations", "aggregate_bound_violations"].iter().enumerate() {
            ctx.rows.push(ResultRow::at_most(ctx.name, format!("{label}[eps={eps}]"), counts[k] as f64, 0.0));
        }
    }
    Ok(())
}

fn path_header(p: usize) -> String {
    let mut h = String::from("replicate,time,event_kind,src,dst,accepted");
    for i in 1..=p {
        h.push_str(&format!(",z_{i}"));
    }
    h
}

/// `(births, deaths, swaps)` at the horizon of each replicate, for both
/// constructions.
fn thinning_vs_oracle(ctx: &mut Context<'_>) -> Result<()> {
    let eps = ctx.eps_sorted()[0];
    let cfg = TwoTimescaleConfig::new(ctx.model.as_ref(), eps, ctx.cfg.horizon, ctx.cfg.replicates)?;
    let scaled = cfg.scaled();
    let env = ctx.env();
    let oracle_source = ctx.source.derive("oracle");
    let thinned = replicate_map(ctx.cfg.replicates, |rep| -> Result<(u64, u64, u64)> {
        let e = env.path(&ctx.source, rep)?;
        let path = simulate_bds(&scaled, &e, &ctx.z0, cfg.horizon, &ctx.source, rep, &ctx.engine)?;
        Ok(path.totals_at(cfg.horizon))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let oracle = replicate_map(ctx.cfg.replicates, |rep| -> Result<(u64, u64, u64)> {
        // the environment keeps the main seed: only the event randomness differs
        let e = env.path(&ctx.source, rep)?;
        let path = oracle_simulate(&scaled, &e, &ctx.z0, cfg.horizon, &oracle_source, rep, ctx.engine.cap)?;
        Ok(path.totals_at(cfg.horizon))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut hist = ctx.create("counts.csv")?;
    writeln!(hist, "coordinate,value,thinning,oracle")?;
    for (k, coord) in ["births", "deaths", "swaps"].iter().enumerate() {
        let pick = |v: &(u64, u64, u64)| [v.0, v.1, v.2][k] as i64;
        let a = EmpiricalLaw::new(format!("thinning {coord}"), thinned.iter().map(pick).collect());
        let b = EmpiricalLaw::new(format!("oracle {coord}"), oracle.iter().map(pick).collect());
        let (ca, cb) = (a.counts(), b.counts());
        let keys: std::collections::BTreeSet<i64> = ca.keys().chain(cb.keys()).copied().collect();
        for key in keys {
            writeln!(hist, "{coord},{key},{},{}", ca.get(&key).unwrap_or(&0), cb.get(&key).unwrap_or(&0))?;
        }
        let p = two_sample_test(&a, &b)?;
        ctx.rows.push(ResultRow::above(ctx.name, format!("p_value[{coord}]"), p, ctx.cfg.thresholds.p_value));
    }
    Ok(())
}

fn martingale_check(ctx: &mut Context<'_>) -> Result<()> {
    let eps = ctx.eps_sorted()[0];
    let cfg = TwoTimescaleConfig::new(ctx.model.as_ref(), eps, ctx.cfg.horizon, ctx.cfg.replicates)?;
    let scaled = cfg.scaled();
    let checkpoints: Vec<f64> = ctx.cfg.checkpoints.iter().copied().filter(|&c| c <= cfg.horizon).collect();
    if checkpoints.is_empty() {
        return Err(config_error("/checkpoints", "no checkpoint lies within the horizon"));
    }
    let env = ctx.env();
    let residuals = replicate_map(ctx.cfg.replicates, |rep| -> Result<Vec<Vec<f64>>> {
        let e = env.path(&ctx.source, rep)?;
        let path = simulate_bds(&scaled, &e, &ctx.z0, cfg.horizon, &ctx.source, rep, &ctx.engine)?;
        compensator_residual(&path, &scaled, &e, &checkpoints)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let p = ctx.z0.dim();
    let mut out = ctx.create("residuals.csv")?;
    writeln!(out, "checkpoint,event,mean,standard_error,z")?;
    for (c, &t) in checkpoints.iter().enumerate() {
        for (k, event) in event_types(p).enumerate() {
            let sample: Vec<f64> = residuals.iter().map(|r| r[c][k]).collect();
            let test = residual_zero_test(&sample)?;
            writeln!(out, "{t},{event},{},{},{}", test.mean, test.standard_error, test.z)?;
            ctx.rows.push(ResultRow::at_most(ctx.name, format!("abs_z[{event}@{t}]"), test.z.abs(), ctx.cfg.thresholds.z_score));
        }
    }
    Ok(())
}

fn demographic_fingerprint(path: &crate::engine::BdsPath) -> DemographicRecords {
    let p = path.p();
    path.skeleton
        .as_ref()
        .map(|s| {
            s.records
                .iter()
                .filter(|r| !r.event.is_swap())
                .map(|r| (r.time.to_bits(), r.event.index(p), r.mark.to_bits()))
                .collect()
        })
        .unwrap_or_default()
}

type DemographicRecords = Vec<(u64, usize, u64)>;

fn two_timescale_sweep(ctx: &mut Context<'_>) -> Result<()> {
    let eps_list = ctx.eps_sorted();
    let env = ctx.env();
    let mut table = ctx.create("sweep.csv")?;
    writeln!(table, "epsilon,mean_births,mean_deaths,mean_swaps,swap_ratio")?;
    // (eps, demographic records per replicate, mean swaps)
    let mut reference: Option<(f64, Vec<DemographicRecords>, f64)> = None;
    let mut mismatches = 0u64;
    let mut rows = Vec::new();
    let mut swaps_series = Vec::new();
    let mut timeline = None;
    for &eps in &eps_list {
        let cfg = TwoTimescaleConfig::new(ctx.model.as_ref(), eps, ctx.cfg.horizon, ctx.cfg.replicates)?;
        let results = replicate_map(ctx.cfg.replicates, |rep| -> Result<_> {
            let e = env.path(&ctx.source, rep)?;
            let path = simulate_two_timescale(&cfg, &e, &ctx.z0, &ctx.source, rep, &ctx.engine)?;
            let totals = path.totals_at(cfg.horizon);
            let fp = demographic_fingerprint(&path);
            let keep = if rep == 0 { Some(path) } else { None };
            Ok((totals, fp, keep))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let n = results.len() as f64;
        let mb = results.iter().map(|r| r.0 .0 as f64).sum::<f64>() / n;
        let md = results.iter().map(|r| r.0 .1 as f64).sum::<f64>() / n;
        let ms = results.iter().map(|r| r.0 .2 as f64).sum::<f64>() / n;
        let mut prints = Vec::with_capacity(results.len());
        for (_, fp, keep) in results {
            prints.push(fp);
            if keep.is_some() {
                timeline = keep;
            }
        }
        let ratio = match &reference {
            None => {
                reference = Some((eps, prints, ms));
                1.0
            }
            Some((eps0, base, ms0)) => {
                mismatches += base.iter().zip(&prints).filter(|(a, b)| a != b).count() as u64;
                let ratio = ms / ms0;
                let expected = eps0 / eps;
                let rel = (ratio / expected - 1.0).abs();
                rows.push(ResultRow::at_most(
                    ctx.name,
                    format!("swap_scaling_error[eps={eps}]"),
                    rel,
                    ctx.cfg.thresholds.swap_scaling,
                ));
                ratio
            }
        };
        writeln!(table, "{},{mb},{md},{ms},{ratio}", fmt_eps(eps))?;
        swaps_series.push((eps, ms));
    }
    rows.push(ResultRow::at_most(ctx.name, "demographic_skeleton_mismatches", mismatches as f64, 0.0));
    ctx.rows.extend(rows);
    emit_plot(
        &[Series::new("mean swap count", swaps_series)],
        &PlotOptions {
            title: "swap count against eps".into(),
            x_label: "eps".into(),
            y_label: "mean swaps".into(),
            log_x: true,
        },
        &ctx.out.join("swaps_vs_eps.svg"),
    )?;
    if let Some(path) = timeline {
        let eps = eps_list.last().copied().unwrap_or(1.0);
        emit_timeline(&path, &format!("event timeline, eps = {eps}"), &ctx.out.join("timeline.svg"))?;
    }
    Ok(())
}

/// Occupation kernel at `level` pooled over all replicates at one `eps`.
#[allow(clippy::too_many_arguments)]
pub fn pooled_occupation(
    model: &dyn IntensityModel,
    env: &EnvironmentPath,
    z0: &Population,
    horizon: f64,
    eps: f64,
    replicates: u64,
    level: u64,
    weighting: Weighting,
    burn_in_factor: f64,
    source: &RandomSource,
    engine: &EngineOptions,
) -> Result<OccupationKernel> {
    let cfg = TwoTimescaleConfig::new(model, eps, horizon, replicates)?;
    let burn_in = cfg.burn_in(burn_in_factor);
    let kernels = replicate_map(replicates, |rep| -> Result<Option<OccupationKernel>> {
        let path = simulate_two_timescale(&cfg, env, z0, source, rep, engine)?;
        let mut k = occupation_between_demographic_events(&path, (0.0, horizon), weighting, burn_in)?;
        Ok(k.remove(&level))
    });
    let mut pooled = OccupationKernel::new(level, z0.dim(), weighting)?;
    for k in kernels {
        if let Some(k) = k? {
            pooled.merge(&k)?;
        }
    }
    Ok(pooled)
}

/// True when `values` never rises by more than `slack` from one point to the next.
pub fn decreasing_up_to(values: &[f64], slack: f64) -> (bool, f64) {
    let worst = values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    (values.len() < 2 || worst <= slack, if values.len() < 2 { 0.0 } else { worst })
}

fn occupation_vs_invariant(ctx: &mut Context<'_>) -> Result<()> {
    let eps_list = ctx.eps_sorted();
    let regime = ctx.env().frozen().expect("validated").clone();
    let env = EnvironmentPath::constant(regime.clone());
    let level = ctx.cfg.level;
    let generator = build_swap_generator(ctx.model.as_ref(), &regime, 0.0, level)?;
    let exact = stationary_distribution(&generator)?;
    let mut kernels = Vec::new();
    let mut table = ctx.create("tv.csv")?;
    writeln!(table, "epsilon,total_time,tv,max_abs_residual")?;
    let mut tvs = Vec::new();
    let mut residual = 0.0;
    for &eps in &eps_list {
        let pooled = pooled_occupation(
            ctx.model.as_ref(),
            &env,
            &ctx.z0,
            ctx.cfg.horizon,
            eps,
            ctx.cfg.replicates,
            level,
            ctx.cfg.weighting,
            ctx.cfg.burn_in_factor,
            &ctx.source,
            &ctx.engine,
        )?;
        let tv = pooled.tv_to(exact.probabilities())?;
        residual = averaging_residual(&pooled, &generator)?.iter().map(|v| v.abs()).fold(0.0, f64::max);
        writeln!(table, "{},{},{tv},{residual}", fmt_eps(eps), pooled.total())?;
        tvs.push((eps, tv));
        kernels.push((eps, pooled));
    }
    let mut out = ctx.create("kernels.csv")?;
    let mut first = true;
    for (eps, k) in &kernels {
        write_kernel_csv(&mut out, [k], first, &[("epsilon", fmt_eps(*eps))])?;
        first = false;
    }
    let mut exact_out = ctx.create("invariant.csv")?;
    writeln!(exact_out, "n,state_index,probability")?;
    for (k, w) in exact.probabilities().iter().enumerate() {
        writeln!(exact_out, "{level},{k},{w}")?;
    }
    let smallest = *tvs.last().expect("nonempty");
    let t = ctx.cfg.thresholds;
    ctx.rows.push(ResultRow::below(ctx.name, format!("tv[eps={}]", smallest.0), smallest.1, t.tv));
    let (ok, worst) = decreasing_up_to(&tvs.iter().map(|v| v.1).collect::<Vec<_>>(), t.trend_slack);
    ctx.rows.push(ResultRow { experiment: ctx.name.into(), statistic: "tv_trend_worst_increase".into(), value: worst, threshold: t.trend_slack, pass: ok });
    ctx.rows.push(ResultRow::below(ctx.name, format!("averaging_residual[eps={}]", smallest.0), residual, t.averaging_residual));
    emit_plot(
        &[Series::new("TV to invariant law", tvs)],
        &PlotOptions {
            title: format!("occupation kernel at n = {level}"),
            x_label: "eps".into(),
            y_label: "total variation".into(),
            log_x: true,
        },
        &ctx.out.join("tv_vs_eps.svg"),
    )?;
    Ok(())
}

/// Joint law of `(births, deaths)` at the horizon, fast-swap model against the
/// averaged limit process. Both are thinned from the same demographic skeleton.
fn limit_process_convergence(ctx: &mut Context<'_>) -> Result<()> {
    let eps_list = ctx.eps_sorted();
    let env = ctx.env();
    let horizon = ctx.cfg.horizon;
    let cache = KernelCache::new();
    let x0 = ctx.z0.size();
    let limit = replicate_map(ctx.cfg.replicates, |rep| -> Result<(u64, u64)> {
        let e = env.path(&ctx.source, rep)?;
        let path = simulate_limit_process(ctx.model.as_ref(), &e, x0, horizon, &ctx.source, rep, &ctx.engine, &cache)?;
        Ok(path.totals_at(horizon))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let limit_law = EmpiricalLaw::new("limit", limit.clone());
    let mut table = ctx.create("limit.csv")?;
    writeln!(table, "epsilon,tv,mean_births,mean_deaths")?;
    let n = limit.len() as f64;
    writeln!(
        table,
        "0,0,{},{}",
        limit.iter().map(|v| v.0 as f64).sum::<f64>() / n,
        limit.iter().map(|v| v.1 as f64).sum::<f64>() / n
    )?;
    let mut tvs = Vec::new();
    let mut joint: BTreeMap<(u64, u64), Vec<u64>> = BTreeMap::new();
    for (k, v) in limit_law.counts() {
        joint.entry(k).or_insert_with(|| vec![0; eps_list.len() + 1])[0] = v;
    }
    for (col, &eps) in eps_list.iter().enumerate() {
        let cfg = TwoTimescaleConfig::new(ctx.model.as_ref(), eps, horizon, ctx.cfg.replicates)?;
        let samples = replicate_map(ctx.cfg.replicates, |rep| -> Result<(u64, u64)> {
            let e = env.path(&ctx.source, rep)?;
            let path = simulate_two_timescale(&cfg, &e, &ctx.z0, &ctx.source, rep, &ctx.engine)?;
            let (b, d, _) = path.totals_at(horizon);
            Ok((b, d))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let law = EmpiricalLaw::new(format!("eps={eps}"), samples.clone());
        let tv = tv_distance(&law, &limit_law)?;
        for (k, v) in law.counts() {
            joint.entry(k).or_insert_with(|| vec![0; eps_list.len() + 1])[col + 1] = v;
        }
        writeln!(
            table,
            "{},{tv},{},{}",
            fmt_eps(eps),
            samples.iter().map(|v| v.0 as f64).sum::<f64>() / n,
            samples.iter().map(|v| v.1 as f64).sum::<f64>() / n
        )?;
        tvs.push((eps, tv));
    }
    let mut joint_out = ctx.create("joint_law.csv")?;
    write!(joint_out, "births,deaths,limit")?;
    for eps in &eps_list {
        write!(joint_out, ",eps={}", fmt_eps(*eps))?;
    }
    writeln!(joint_out)?;
    for ((b, d), counts) in &joint {
        let cells: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
        writeln!(joint_out, "{b},{d},{}", cells.join(","))?;
    }
    let mut kernels = ctx.create("kernels.csv")?;
    cache.write_csv(&mut kernels)?;

    let t = ctx.cfg.thresholds;
    let (eps_min, tv_min) = *tvs.last().expect("nonempty");
    ctx.rows.push(ResultRow::below(ctx.name, format!("tv[eps={eps_min}]"), tv_min, t.tv));
    // the smallest eps must beat every coarser one strictly
    for &(eps, tv) in &tvs[..tvs.len() - 1] {
        ctx.rows.push(ResultRow::below(ctx.name, format!("tv[eps={eps_min}]-tv[eps={eps}]"), tv_min - tv, 0.0));
    }
    emit_plot(
        &[Series::new("TV to limit process", tvs)],
        &PlotOptions {
            title: "fast-swap model against the averaged limit".into(),
            x_label: "eps".into(),
            y_label: "total variation".into(),
            log_x: true,
        },
        &ctx.out.join("tv_vs_eps.svg"),
    )?;
    Ok(())
}

/// Solver output against the closed-form binomial law, and the averaged
/// death rate against its formula, over a grid of sizes and ratios.
fn toy_verify(ctx: &mut Context<'_>) -> Result<()> {
    let base = match &ctx.cfg.environment {
        Some(EnvironmentSpec::Constant { regime }) => ToyParams::from_regime(&regime.params()),
        _ => ToyParams { d1: 1.0, d2: 2.0, b: 0.0, lambda: 0.0, k12: 1.0, k21: 1.0 },
    };
    let mut kernels = ctx.create("kernels.csv")?;
    writeln!(kernels, "alpha,n,state_index,z_1,z_2,solver,closed_form")?;
    let mut worst_law = 0.0f64;
    let mut worst_death = 0.0f64;
    let mut worst_residual = 0.0f64;
    for &alpha in &ctx.cfg.alphas {
        let params = ToyParams { k12: alpha, k21: 1.0, ..base };
        let regime = params.regime();
        for n in 1..=ctx.cfg.max_size {
            let solved = stationary_distribution(&build_swap_generator(&ToyModel, &regime, 0.0, n)?)?;
            let closed = toy_invariant(alpha, n)?;
            for (k, (a, b)) in solved.probabilities().iter().zip(closed.probabilities()).enumerate() {
                worst_law = worst_law.max((a - b).abs());
                let z = solved.level_set().state(k).counts();
                writeln!(kernels, "{alpha},{n},{k},{},{},{a},{b}", z[0], z[1])?;
            }
            worst_residual = worst_residual.max(solved.residual());
            let avg = averaged_intensity(&solved, &ToyModel, &regime, 0.0).total_death();
            let formula = toy_averaged_death(&params, n);
            worst_death = worst_death.max((avg - formula).abs() / formula.abs().max(1.0));
        }
    }
    let tol = ctx.cfg.thresholds.solver;
    ctx.rows.push(ResultRow::at_most(ctx.name, "max_abs_error_invariant_law", worst_law, tol));
    ctx.rows.push(ResultRow::at_most(ctx.name, "max_rel_error_averaged_death", worst_death, tol));
    ctx.rows.push(ResultRow::at_most(ctx.name, "max_stationary_residual", worst_residual, tol));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_carry_pointers() {
        let err = parse_config(r#"{"experiment": "toy-verify", "thresholds": {"tv": "x"}}"#).unwrap_err();
        match err {
            BdsError::Config { pointer, .. } => assert_eq!(pointer, "/thresholds/tv"),
            other => panic!("{other}"),
        }
        let err = parse_config(r#"{"experiment": "nope"}"#).unwrap_err();
        assert!(matches!(err, BdsError::Config { ref pointer, .. } if pointer == "/experiment"));
        let cfg = parse_config(r#"{"experiment": "toy-verify"}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(BdsError::Config { ref pointer, .. }) if pointer == "/seed"));
    }

    #[test]
    fn environment_specs_parse() {
        let cfg = parse_config(
            r#"{"experiment": "domination-demo", "seed": 1, "z0": [1, 1], "horizon": 1,
                "environment": {"kind": "markov-switching",
                  "regimes": [{"toy": {"d1": 1, "d2": 2, "k12": 1, "k21": 1}},
                              {"rates": {"death": [1, 1], "swap": [[0, 1], [1, 0]]}}],
                  "generator": [[-1, 1], [1, -1]]}}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        let bad = parse_config(
            r#"{"experiment": "domination-demo", "seed": 1, "z0": [1], "horizon": 1,
                "environment": {"kind": "constant", "regime": {"toy": {"d1": 1, "d2": 2, "k12": 1, "k21": 1}}}}"#,
        )
        .unwrap();
        assert!(matches!(bad.validate(), Err(BdsError::Config { ref pointer, .. }) if pointer == "/z0"));
    }

    #[test]
    fn decreasing_trend() {
        assert!(decreasing_up_to(&[0.3, 0.2, 0.21, 0.1], 0.02).0);
        assert!(!decreasing_up_to(&[0.3, 0.2, 0.25], 0.02).0);
        assert!(decreasing_up_to(&[0.3], 0.0).0);
    }
}
