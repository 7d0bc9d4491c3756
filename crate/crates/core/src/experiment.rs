//! Flat key-value configuration, scenario presets, multi-seed replication
//! and CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::demand::{Heterogeneity, TadOverride};
use crate::error::{Error, Result};
use crate::exec::{map_jobs, Execution};
use crate::federation::{Omega1Mode, RhoRule};
use crate::metrics::{bin_series, mean_std, reactivity, records_to_csv, EpochRecord, ReactivityReport};
use crate::oracle::{BoundBreakdown, Segment2Partition};
use crate::sim::{availability_bounds, run_simulation, DemandShift, Policy, SimConfig, SimOutput};

/// Share of the final epochs treated as converged.
pub const CONVERGED_FRACTION: f64 = 0.2;

/// Swap passes applied to the base ranking by a default preference shift.
pub const DEFAULT_SHIFT_PASSES: usize = 40;

/// Recognised configuration keys, in the order they are applied.
pub const CONFIG_KEYS: &[&str] = &[
    "catalog_size",
    "n_anchor",
    "n_ferry",
    "ferry_group_size",
    "anchor_capacity",
    "ferry_capacity",
    "request_rate",
    "hover_ratio",
    "transit_ratio",
    "trajectory_period",
    "zipf_alpha",
    "policy",
    "learn_rate",
    "zeta_ucb",
    "epsilon_initial",
    "epsilon_decay",
    "epsilon_floor",
    "beta_decay",
    "beta_scale",
    "latency_threshold",
    "omega1",
    "rho_rule",
    "tad_ratio",
    "tad_overrides",
    "swap_probability",
    "min_distance",
    "comm_overlap",
    "duration",
    "seed",
    "lambda",
    "kappa",
    "segment2",
    "shift_time",
    "shift_passes",
    "shift_alpha",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("{key} = `{value}`: {e}")))
}

fn shift_mut(cfg: &mut SimConfig) -> &mut DemandShift {
    let time = cfg.duration / 2.0;
    cfg.demand_shift.get_or_insert(DemandShift {
        time,
        passes: DEFAULT_SHIFT_PASSES,
        alpha: None,
    })
}

fn parse_tad_overrides(value: &str) -> Result<Vec<TadOverride>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            let [start, end, ratio] = parts[..] else {
                return Err(Error::config(format!(
                    "tad override `{item}` is not start:end:ratio"
                )));
            };
            Ok(TadOverride {
                start: parse_value("tad_overrides", start)?,
                end: parse_value("tad_overrides", end)?,
                ratio: parse_value("tad_overrides", ratio)?,
            })
        })
        .collect()
}

/// Sets one configuration key from its textual value.
pub fn apply_setting(cfg: &mut SimConfig, key: &str, value: &str) -> Result<()> {
    let v = value.trim();
    match key {
        "catalog_size" => cfg.catalog_size = parse_value(key, v)?,
        "n_anchor" => cfg.n_anchor = parse_value(key, v)?,
        "n_ferry" => cfg.n_ferry = parse_value(key, v)?,
        "ferry_group_size" => cfg.ferry_group_size = parse_value(key, v)?,
        "anchor_capacity" => cfg.anchor_capacity = parse_value(key, v)?,
        "ferry_capacity" => cfg.ferry_capacity = parse_value(key, v)?,
        "request_rate" => cfg.request_rate = parse_value(key, v)?,
        "hover_ratio" => cfg.hover_ratio = parse_value(key, v)?,
        "transit_ratio" => cfg.transit_ratio = parse_value(key, v)?,
        "trajectory_period" => cfg.trajectory_period = parse_value(key, v)?,
        "zipf_alpha" => cfg.zipf_alpha = parse_value(key, v)?,
        "policy" => cfg.policy = v.parse()?,
        "learn_rate" => cfg.agent.learn_rate = parse_value(key, v)?,
        "zeta_ucb" => cfg.agent.zeta_ucb = parse_value(key, v)?,
        "epsilon_initial" => cfg.agent.epsilon.initial = parse_value(key, v)?,
        "epsilon_decay" => cfg.agent.epsilon.decay = parse_value(key, v)?,
        "epsilon_floor" => cfg.agent.epsilon.floor = parse_value(key, v)?,
        "beta_decay" => cfg.federation.beta_decay = parse_value(key, v)?,
        "beta_scale" => cfg.federation.beta_scale = parse_value(key, v)?,
        "latency_threshold" => cfg.federation.latency_threshold = parse_value(key, v)?,
        "omega1" => {
            cfg.federation.omega1_mode = match v {
                "adaptive" => Omega1Mode::Adaptive,
                _ => Omega1Mode::Fixed(parse_value(key, v)?),
            }
        }
        "rho_rule" => {
            cfg.federation.rho_rule = match v {
                "max_pairwise" => RhoRule::MaxPairwise,
                "sum_pairwise" => RhoRule::SumPairwise,
                _ => return Err(Error::config(format!("unknown rho_rule `{v}`"))),
            }
        }
        "tad_ratio" => cfg.tad_ratio = parse_value(key, v)?,
        "tad_overrides" => cfg.tad_overrides = parse_tad_overrides(v)?,
        "swap_probability" => cfg.heterogeneity.swap_probability = parse_value(key, v)?,
        "min_distance" => cfg.heterogeneity.min_distance = parse_value(key, v)?,
        "comm_overlap" => cfg.comm_overlap = parse_value(key, v)?,
        "duration" => cfg.duration = parse_value(key, v)?,
        "seed" => cfg.seed = parse_value(key, v)?,
        "lambda" => cfg.lambda = parse_value(key, v)?,
        "kappa" => cfg.kappa = parse_value(key, v)?,
        "segment2" => {
            cfg.segment2 = match v {
                "round_robin" => Segment2Partition::RoundRobin,
                _ => match v.strip_prefix("shuffled:") {
                    Some(seed) => Segment2Partition::Shuffled {
                        seed: parse_value(key, seed)?,
                    },
                    None => return Err(Error::config(format!("unknown segment2 `{v}`"))),
                },
            }
        }
        "shift_time" => shift_mut(cfg).time = parse_value(key, v)?,
        "shift_passes" => shift_mut(cfg).passes = parse_value(key, v)?,
        "shift_alpha" => shift_mut(cfg).alpha = Some(parse_value(key, v)?),
        _ => return Err(Error::UnknownKey(key.to_string())),
    }
    Ok(())
}

/// Where a setting came from, for error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Line(usize),
    Override,
}

/// Settings collected from several layers; later layers win.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, Origin)>,
}

impl Settings {
    /// Adds the `key = value` lines of a configuration file.
    pub fn add_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(Error::Parse {
                    line,
                    message: format!("expected `key = value`, found `{content}`"),
                });
            };
            let k = k.trim();
            if !CONFIG_KEYS.contains(&k) {
                return Err(Error::UnknownKey(k.to_string()));
            }
            self.values
                .insert(k.to_string(), (v.trim().to_string(), Origin::Line(line)));
        }
        Ok(())
    }

    /// Adds a `key=value` command-line override.
    pub fn add_override(&mut self, setting: &str) -> Result<()> {
        let (k, v) = setting
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{setting}` is not key=value")))?;
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::UnknownKey(k.to_string()));
        }
        self.values
            .insert(k.to_string(), (v.trim().to_string(), Origin::Override));
        Ok(())
    }

    /// Applies every setting on top of `base` and validates the result.
    pub fn apply(&self, mut base: SimConfig) -> Result<SimConfig> {
        for key in CONFIG_KEYS {
            if let Some((value, origin)) = self.values.get(*key) {
                apply_setting(&mut base, key, value).map_err(|e| match origin {
                    Origin::Line(line) => Error::Parse {
                        line: *line,
                        message: e.to_string(),
                    },
                    Origin::Override => e,
                })?;
            }
        }
        base.validate()?;
        Ok(base)
    }
}

/// Named starting points for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
}

impl Preset {
    pub fn config(self) -> SimConfig {
        match self {
            Preset::Desk => SimConfig::desk(),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::config(format!("unknown preset `{s}`"))),
        }
    }
}

/// Layers defaults, an optional preset, an optional file and overrides.
pub fn load_config(path: Option<&Path>, preset: Option<Preset>, overrides: &[String]) -> Result<SimConfig> {
    let mut settings = Settings::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        settings.add_text(&text)?;
    }
    for o in overrides {
        settings.add_override(o)?;
    }
    settings.apply(preset.map_or_else(SimConfig::default, Preset::config))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Custom,
    PolicyEvolution,
    LatencySweep,
    PreferenceShift,
    AccessDelay,
    CdoConvergence,
    BoundOnly,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Custom,
        Scenario::PolicyEvolution,
        Scenario::LatencySweep,
        Scenario::PreferenceShift,
        Scenario::AccessDelay,
        Scenario::CdoConvergence,
        Scenario::BoundOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Custom => "custom",
            Scenario::PolicyEvolution => "policy_evolution",
            Scenario::LatencySweep => "latency_sweep",
            Scenario::PreferenceShift => "preference_shift",
            Scenario::AccessDelay => "access_delay",
            Scenario::CdoConvergence => "cdo_convergence",
            Scenario::BoundOnly => "bound_only",
        }
    }

    /// Configurations compared by the scenario, each under a variant name.
    pub fn variants(self, base: &SimConfig) -> Vec<Variant> {
        let with_policy = |p: Policy| Variant {
            name: p.name().to_string(),
            config: SimConfig {
                policy: p,
                ..base.clone()
            },
        };
        match self {
            Scenario::Custom => vec![with_policy(base.policy)],
            Scenario::PolicyEvolution | Scenario::AccessDelay => {
                Policy::ALL.into_iter().map(with_policy).collect()
            }
            Scenario::CdoConvergence => Policy::ALL
                .into_iter()
                .filter(|p| p.learns())
                .map(with_policy)
                .collect(),
            Scenario::LatencySweep => [0, 2, 10]
                .into_iter()
                .map(|tl| {
                    let mut config = base.clone();
                    if !config.policy.federated() {
                        config.policy = Policy::FedMabSelective;
                    }
                    config.federation.latency_threshold = tl;
                    Variant {
                        name: format!("tl{tl}"),
                        config,
                    }
                })
                .collect(),
            Scenario::PreferenceShift => {
                let mut shifted = base.clone();
                shifted.demand_shift.get_or_insert(DemandShift {
                    time: base.duration / 2.0,
                    passes: DEFAULT_SHIFT_PASSES,
                    alpha: None,
                });
                [Policy::FedMabSelective, Policy::TopkMab]
                    .into_iter()
                    .map(|p| Variant {
                        name: p.name().to_string(),
                        config: SimConfig {
                            policy: p,
                            ..shifted.clone()
                        },
                    })
                    .collect()
            }
            Scenario::BoundOnly => Vec::new(),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: SimConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub base: SimConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub execution: Execution,
}

/// One finished simulation of one variant under one seed.
#[derive(Debug, Clone)]
pub struct Run {
    pub variant: String,
    pub seed: u64,
    pub config: SimConfig,
    pub output: SimOutput,
}

/// Averages of a run over a range of epochs, pooled across communities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunStats {
    pub availability: f64,
    pub relative_availability: f64,
    pub cdo: f64,
    pub mean_access_delay: f64,
    pub downloads: f64,
}

/// Stats over epochs `e` with `lo * E < e <= hi * E`, `E` the last epoch.
pub fn window_stats(records: &[EpochRecord], lo: f64, hi: f64) -> RunStats {
    let last = records.iter().map(|r| r.epoch).max().unwrap_or(0) as f64;
    let sel: Vec<&EpochRecord> = records
        .iter()
        .filter(|r| {
            let e = r.epoch as f64;
            e > lo * last && e <= hi * last
        })
        .collect();
    let mean = |f: fn(&EpochRecord) -> f64| mean_std(&sel.iter().map(|r| f(r)).collect::<Vec<_>>()).0;
    RunStats {
        availability: mean(|r| r.availability),
        relative_availability: mean(|r| r.relative_availability),
        cdo: mean(|r| r.cdo),
        mean_access_delay: mean(|r| r.mean_access_delay),
        downloads: mean(|r| r.downloads as f64),
    }
}

pub fn converged_stats(records: &[EpochRecord]) -> RunStats {
    window_stats(records, 1.0 - CONVERGED_FRACTION, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub seeds: usize,
    pub availability_mean: f64,
    pub availability_std: f64,
    pub relative_mean: f64,
    pub relative_std: f64,
    pub cdo_mean: f64,
    pub cdo_std: f64,
    pub delay_mean: f64,
    pub downloads_mean: f64,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "variant,seeds,availability_mean,availability_std,\
relative_mean,relative_std,cdo_mean,cdo_std,delay_mean,downloads_mean";
}

/// Converged means and deviations across seeds, one row per variant in
/// first-seen order.
pub fn summarize(runs: &[Run]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.variant.as_str()) {
            order.push(&r.variant);
        }
    }
    order
        .into_iter()
        .map(|name| {
            let stats: Vec<RunStats> = runs
                .iter()
                .filter(|r| r.variant == name)
                .map(|r| converged_stats(&r.output.records))
                .collect();
            let col = |f: fn(&RunStats) -> f64| mean_std(&stats.iter().map(f).collect::<Vec<_>>());
            let (availability_mean, availability_std) = col(|s| s.availability);
            let (relative_mean, relative_std) = col(|s| s.relative_availability);
            let (cdo_mean, cdo_std) = col(|s| s.cdo);
            SummaryRow {
                variant: name.to_string(),
                seeds: stats.len(),
                availability_mean,
                availability_std,
                relative_mean,
                relative_std,
                cdo_mean,
                cdo_std,
                delay_mean: col(|s| s.mean_access_delay).0,
                downloads_mean: col(|s| s.downloads).0,
            }
        })
        .collect()
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SummaryRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.variant,
            r.seeds,
            r.availability_mean,
            r.availability_std,
            r.relative_mean,
            r.relative_std,
            r.cdo_mean,
            r.cdo_std,
            r.delay_mean,
            r.downloads_mean
        );
    }
    out
}

/// Availability pooled over communities in bins of one trajectory period.
pub fn availability_series(run: &Run) -> Result<Vec<(f64, f64)>> {
    let points: Vec<(f64, f64)> = run
        .output
        .records
        .iter()
        .map(|r| (r.time, r.availability))
        .collect();
    bin_series(&points, 0.0, run.config.trajectory_period)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactivityRow {
    pub variant: String,
    pub seed: u64,
    pub report: ReactivityReport,
}

/// Reactivity of every variant against the `topk_mab` run of the same seed.
pub fn reactivity_rows(runs: &[Run]) -> Result<Vec<ReactivityRow>> {
    let baseline = Policy::TopkMab.name();
    let mut rows = Vec::new();
    for run in runs {
        let Some(shift) = run.config.demand_shift else {
            continue;
        };
        let Some(base) = runs
            .iter()
            .find(|r| r.seed == run.seed && r.variant == baseline)
        else {
            continue;
        };
        let series = availability_series(run)?;
        let base_series = availability_series(base)?;
        let tau = run.config.duration - shift.time;
        let report = reactivity(&series, shift.time, &base_series, tau)
            .map_err(|e| replication_error(run.seed, e))?;
        rows.push(ReactivityRow {
            variant: run.variant.clone(),
            seed: run.seed,
            report,
        });
    }
    Ok(rows)
}

pub fn reactivity_to_csv(rows: &[ReactivityRow]) -> String {
    let mut out = String::from("variant,seed,psi,chi,zeta_cross,tau,tau_c\n");
    for r in rows {
        let p = &r.report;
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.variant, r.seed, p.psi, p.chi, p.zeta_cross, p.tau, p.tau_c
        );
    }
    out
}

/// Per-epoch mean and deviation across seeds of a metric pooled over
/// communities.
pub fn metric_series(runs: &[Run], metric: fn(&EpochRecord) -> f64) -> String {
    let mut out = String::from("variant,epoch,mean,std\n");
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.variant.as_str()) {
            order.push(&r.variant);
        }
    }
    for name in order {
        let mut per_epoch: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for run in runs.iter().filter(|r| r.variant == name) {
            let mut by_epoch: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for rec in &run.output.records {
                by_epoch.entry(rec.epoch).or_default().push(metric(rec));
            }
            for (e, vals) in by_epoch {
                per_epoch.entry(e).or_default().push(mean_std(&vals).0);
            }
        }
        for (e, vals) in per_epoch {
            let (m, s) = mean_std(&vals);
            let _ = writeln!(out, "{name},{e},{m:.6},{s:.6}");
        }
    }
    out
}

pub fn bounds_to_csv(bounds: &[BoundBreakdown]) -> String {
    let mut out = String::from("community,p_a,p_mf,p_access,bound\n");
    for (n, b) in bounds.iter().enumerate() {
        let _ = writeln!(
            out,
            "{n},{:.6},{:.6},{:.6},{:.6}",
            b.p_a, b.p_mf, b.p_access, b.bound
        );
    }
    out
}

fn replication_error(seed: u64, e: Error) -> Error {
    Error::Replication {
        seed,
        source: Box::new(e),
    }
}

/// Runs every (variant, seed) pair of a scenario without writing files.
/// Runs are ordered by variant, then by seed.
pub fn execute(spec: &ExperimentSpec) -> Result<Vec<Run>> {
    if spec.seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let jobs: Vec<(Variant, u64)> = spec
        .scenario
        .variants(&spec.base)
        .into_iter()
        .flat_map(|v| spec.seeds.iter().map(move |&s| (v.clone(), s)))
        .collect();
    map_jobs(&jobs, spec.execution, |(variant, seed)| {
        let config = SimConfig {
            seed: *seed,
            ..variant.config.clone()
        };
        let output = run_simulation(config.clone()).map_err(|e| replication_error(*seed, e))?;
        Ok(Run {
            variant: variant.name.clone(),
            seed: *seed,
            config,
            output,
        })
    })
    .into_iter()
    .collect()
}

/// What an experiment wrote.
#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub files: Vec<PathBuf>,
    pub summary: Vec<SummaryRow>,
    pub reactivity: Vec<ReactivityRow>,
    pub bounds: Vec<BoundBreakdown>,
}

fn write_file(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(())
}

/// Runs a scenario and writes its CSV files into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    fs::create_dir_all(&spec.output_dir).map_err(|e| Error::io(&spec.output_dir, e))?;
    let dir = spec.output_dir.as_path();
    let mut report = ExperimentReport::default();

    if spec.scenario == Scenario::BoundOnly {
        let seed = *spec
            .seeds
            .first()
            .ok_or_else(|| Error::config("at least one seed is required"))?;
        report.bounds = availability_bounds(&SimConfig {
            seed,
            ..spec.base.clone()
        })?;
        write_file(dir, "bound.csv", &bounds_to_csv(&report.bounds), &mut report.files)?;
        return Ok(report);
    }

    let runs = execute(spec)?;
    for run in &runs {
        let name = format!("{}_seed{}.csv", run.variant, run.seed);
        write_file(dir, &name, &records_to_csv(&run.output.records), &mut report.files)?;
    }
    report.summary = summarize(&runs);
    write_file(dir, "summary.csv", &summary_to_csv(&report.summary), &mut report.files)?;
    match spec.scenario {
        Scenario::PreferenceShift => {
            report.reactivity = reactivity_rows(&runs)?;
            write_file(
                dir,
                "reactivity.csv",
                &reactivity_to_csv(&report.reactivity),
                &mut report.files,
            )?;
        }
        Scenario::AccessDelay => write_file(
            dir,
            "delay_series.csv",
            &metric_series(&runs, |r| r.mean_access_delay),
            &mut report.files,
        )?,
        Scenario::CdoConvergence => write_file(
            dir,
            "cdo_series.csv",
            &metric_series(&runs, |r| r.cdo),
            &mut report.files,
        )?,
        _ => {}
    }
    Ok(report)
}

/// Homogeneous demand: every community shares the base ranking.
pub fn homogeneous(mut cfg: SimConfig) -> SimConfig {
    cfg.heterogeneity = Heterogeneity::HOMOGENEOUS;
    cfg
}
