use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Config, Experiment, ResolvedTarget};
use crate::diagnostics::{
    audit_lemma_recursion, fit_rate_until_zero, mc_aggregate, summability_from_records, LemmaAudit, Metric, Record,
    RateOutcome, SummabilityReport, TrajectoryLog, MIN_SEEDS,
};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::noise::{NoiseModel, RngStream};
use crate::optimizers::{run, CheckedSchedule, GateOptions, Method, RunSpec, Target};
use crate::problems::Family;
use crate::schedules::{Schedule, ScheduleReport};

/// Command-line adjustments applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<usize>,
    pub master_seed: Option<u64>,
    pub override_schedule: bool,
    pub asymptotic: bool,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut Config) {
        if let Some(k) = self.seeds {
            config.run.seeds = Some(k);
            config.run.streams = None;
        }
        if let Some(s) = self.master_seed {
            config.run.master_seed = s;
        }
        config.run.override_schedule |= self.override_schedule;
        config.run.asymptotic |= self.asymptotic;
        if let Some(out) = &self.out {
            config.run.out = Some(out.clone());
        }
    }
}

/// Worker pool size; `None` uses every logical core.
pub fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("--parallel must be ≥ 1".into()));
        }
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

pub fn output_dir(config: &Config) -> PathBuf {
    config.run.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Applies the precondition gate to the experiment's own method.
pub fn gate(exp: &Experiment, method: Method) -> Result<CheckedSchedule> {
    CheckedSchedule::check(
        method,
        exp.schedule,
        exp.lipschitz,
        GateOptions { override_schedule: exp.override_schedule, mode: exp.mode },
    )
}

fn target(exp: &Experiment) -> Target<'_> {
    match &exp.target {
        ResolvedTarget::Problem(p) => Target::Problem(p),
        ResolvedTarget::Operator(o) => Target::Operator(o),
    }
}

fn spec<'a>(
    exp: &'a Experiment,
    method: Method,
    schedule: &'a CheckedSchedule,
    noise: &'a NoiseModel,
    stream: u64,
    dense: bool,
) -> RunSpec<'a> {
    RunSpec {
        target: target(exp),
        method,
        schedule,
        noise,
        anchor: exp.anchor.clone(),
        x0: exp.start(),
        horizon: exp.horizon,
        rng: RngStream::new(exp.master_seed, stream),
        relaxation: exp.relaxation,
        dense_log: dense,
    }
}

/// Runs every stream of `exp`, in stream order regardless of scheduling.
pub fn run_streams(
    exp: &Experiment,
    schedule: &CheckedSchedule,
    workers: Option<usize>,
) -> Result<Vec<(u64, Result<TrajectoryLog>)>> {
    let pool = pool(workers)?;
    Ok(pool.install(|| {
        exp.streams
            .par_iter()
            .map(|&s| (s, run(&spec(exp, exp.method, schedule, &exp.noise, s, false))))
            .collect()
    }))
}

pub fn csv_name(stream: u64) -> String {
    format!("run_{stream:06}.csv")
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFinal {
    pub stream: u64,
    pub record: Record,
    pub iterate: Vec<f64>,
    pub csv: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Divergence {
    pub stream: u64,
    pub n: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub final_mean: BTreeMap<&'static str, Option<f64>>,
    pub final_se: BTreeMap<&'static str, Option<f64>>,
    /// `â_0` and `â_N`
    pub a_hat_start: Option<f64>,
    pub a_hat_final: Option<f64>,
    /// Fitted on the seed-averaged metrics; informational.
    pub rates: BTreeMap<&'static str, RateOutcome>,
    pub lemma_audit: Option<LemmaAudit>,
    pub summability: Option<SummabilityReport>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub method: String,
    pub target: String,
    pub schedule: String,
    pub schedule_report: Option<ScheduleReport>,
    pub schedule_overridden: bool,
    pub noise: String,
    pub horizon: u64,
    pub master_seed: u64,
    pub streams: Vec<u64>,
    pub runs: Vec<RunFinal>,
    /// Mean of the final iterates over the completed runs.
    pub final_iterate_mean: Vec<f64>,
    pub divergence: Option<Divergence>,
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone, Serialize)]
struct RunMeta {
    config_digest: String,
    wall_clock_secs: f64,
    workers: usize,
}

fn aggregate(exp: &Experiment, logs: &[TrajectoryLog]) -> Option<Aggregate> {
    if logs.len() < MIN_SEEDS {
        return None;
    }
    let summary = mc_aggregate(logs).ok()?;
    let last = summary.n.len() - 1;
    let mut notes = Vec::new();
    let final_mean = Metric::ALL.iter().map(|m| (m.name(), summary.series(*m).mean[last])).collect();
    let final_se = Metric::ALL.iter().map(|m| (m.name(), summary.series(*m).se[last])).collect();
    let mean_log = TrajectoryLog { meta: summary.meta.clone(), records: summary.mean_records(), iterates: Vec::new() };
    let window = exp.rates_window;
    let mut rates = BTreeMap::new();
    for m in [Metric::DistXstar, Metric::Fgap, Metric::Gradnorm, Metric::StepDisp, Metric::Residual] {
        if mean_log.records.iter().any(|r| m.get(r).is_some()) {
            match fit_rate_until_zero(&mean_log, m, window) {
                Ok(r) => {
                    rates.insert(m.name(), r);
                }
                Err(e) => notes.push(format!("rate {m}: {e}")),
            }
        }
    }
    let lemma_audit = match (&exp.target, exp.method, exp.schedule) {
        (ResolvedTarget::Problem(p), Method::HalpernSgd | Method::HalpernGd, Schedule::PowerLaw(_))
            if p.is_convex() =>
        {
            match audit_lemma_recursion(logs, p, &exp.schedule, &exp.noise) {
                Ok(a) => Some(a),
                Err(e) => {
                    notes.push(format!("lemma audit: {e}"));
                    None
                }
            }
        }
        _ => None,
    };
    let summability = exp.method.is_stochastic().then(|| summability_from_records(&mean_log.records));
    Some(Aggregate {
        seeds: summary.seeds(),
        final_mean,
        final_se,
        a_hat_start: summary.dist_sq.mean[0],
        a_hat_final: summary.dist_sq.mean[last],
        rates,
        lemma_audit,
        summability,
        notes,
    })
}

pub struct RunResult {
    pub summary: RunSummary,
    pub logs: Vec<TrajectoryLog>,
}

/// The `run` subcommand: gate, run every stream, write one CSV per run plus
/// `summary.json` (deterministic) and `meta.json` (timing).
///
/// A divergent run still produces the summary, then surfaces as
/// [`Error::Divergence`].
pub fn run_experiment(config: &Config, base: &Path, workers: Option<usize>) -> Result<RunResult> {
    let started = Instant::now();
    let exp = config.resolve(base)?;
    let checked = gate(&exp, exp.method)?;
    let out = output_dir(config);
    fs::create_dir_all(&out)?;
    let results = run_streams(&exp, &checked, workers)?;

    let mut logs = Vec::new();
    let mut runs = Vec::new();
    let mut divergence = None;
    for (stream, res) in results {
        match res {
            Ok(log) => {
                let name = csv_name(stream);
                log.write_csv(fs::File::create(out.join(&name))?)?;
                runs.push(RunFinal {
                    stream,
                    record: *log.last().expect("a run logs at least x0"),
                    iterate: log.iterates.last().expect("a run logs at least x0").iter().copied().collect(),
                    csv: name,
                });
                logs.push(log);
            }
            Err(Error::Divergence { n, reason }) => {
                if divergence.is_none() {
                    divergence = Some(Divergence { stream, n, reason });
                }
            }
            Err(e) => return Err(e),
        }
    }
    let d = exp.anchor.len();
    let final_iterate_mean = if runs.is_empty() {
        Vec::new()
    } else {
        let mut acc = Vector::zeros(d);
        for r in &runs {
            acc += Vector::from_row_slice(&r.iterate);
        }
        (acc / runs.len() as f64).iter().copied().collect()
    };
    let summary = RunSummary {
        config_digest: config.digest(),
        method: exp.method.name().into(),
        target: target(&exp).id(),
        schedule: exp.schedule.describe(),
        schedule_report: checked.report().cloned(),
        schedule_overridden: checked.overridden(),
        noise: exp.noise.name().into(),
        horizon: exp.horizon,
        master_seed: exp.master_seed,
        streams: exp.streams.clone(),
        runs,
        final_iterate_mean,
        aggregate: if divergence.is_none() { aggregate(&exp, &logs) } else { None },
        divergence,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let meta = RunMeta {
        config_digest: summary.config_digest.clone(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        workers: workers.unwrap_or_else(rayon::current_num_threads),
    };
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    if let Some(d) = &summary.divergence {
        return Err(Error::Divergence { n: d.n, reason: format!("stream {}: {}", d.stream, d.reason) });
    }
    Ok(RunResult { summary, logs })
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodRate {
    pub method: String,
    pub outcome: RateOutcome,
    /// `sup_{n≥1} n · ‖x_n − T x_n‖` over the logged iterations.
    pub sup_n_residual: f64,
    pub final_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatesReport {
    pub window: [u64; 2],
    pub anchor_dist: f64,
    pub halpern: MethodRate,
    pub km: MethodRate,
}

impl RatesReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<18}  {:>10}  {:>10}  {:>10}  {:>14}\n",
            "method", "slope", "r2", "points", "sup n*res"
        );
        for m in [&self.halpern, &self.km] {
            match &m.outcome {
                RateOutcome::Fitted(e) => s.push_str(&format!(
                    "{:<18}  {:>10.4}  {:>10.6}  {:>10}  {:>14.6}{}\n",
                    m.method,
                    e.slope,
                    e.r_squared,
                    e.points,
                    m.sup_n_residual,
                    if e.truncated { format!("  (window ends at n = {}, exact zero)", e.window[1]) } else { String::new() }
                )),
                RateOutcome::Degenerate { reason } => {
                    s.push_str(&format!("{:<18}  {reason}\n", m.method));
                }
            }
        }
        s
    }
}

fn method_rate(log: &TrajectoryLog, method: Method, window: (u64, u64)) -> Result<MethodRate> {
    let outcome = fit_rate_until_zero(log, Metric::Residual, window)?;
    let sup_n_residual = log
        .records
        .iter()
        .filter(|r| r.n >= 1)
        .filter_map(|r| r.residual.map(|res| r.n as f64 * res))
        .fold(0.0, f64::max);
    Ok(MethodRate {
        method: method.name().into(),
        outcome,
        sup_n_residual,
        final_residual: log.last().and_then(|r| r.residual).unwrap_or(0.0),
    })
}

/// The `rates` subcommand: Halpern and KM residual slopes on the configured operator.
pub fn run_rates(config: &Config, base: &Path) -> Result<RatesReport> {
    let exp = config.resolve(base)?;
    if !matches!(exp.target, ResolvedTarget::Operator(_)) {
        return Err(Error::Config("rates needs an [operator] section".into()));
    }
    let out = output_dir(config);
    fs::create_dir_all(&out)?;
    let stream = exp.streams[0];
    let mut rates = Vec::new();
    for method in [Method::HalpernOperator, Method::KmOperator] {
        let checked = gate(&exp, method)?;
        let log = run(&spec(&exp, method, &checked, &NoiseModel::Zero, stream, false))?;
        log.write_csv(fs::File::create(out.join(format!("rates_{}.csv", method.name())))?)?;
        rates.push(method_rate(&log, method, exp.rates_window)?);
    }
    let km = rates.pop().expect("two methods");
    let halpern = rates.pop().expect("two methods");
    let report = RatesReport {
        window: [exp.rates_window.0, exp.rates_window.1],
        anchor_dist: (exp.start() - &exp.anchor).norm(),
        halpern,
        km,
    };
    fs::write(out.join("rates.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRow {
    pub method: String,
    pub n: u64,
    pub x1: f64,
    pub x2: f64,
    pub f: f64,
}

/// The `trajectories` subcommand: per-iteration `(x₁, x₂, f)` for each configured method
/// on a planar nonconvex benchmark.
pub fn run_trajectories(config: &Config, base: &Path) -> Result<Vec<TrajectoryRow>> {
    let exp = config.resolve(base)?;
    let problem = match &exp.target {
        ResolvedTarget::Problem(p) if matches!(p.family(), Family::Rastrigin | Family::Rosenbrock) => p.clone(),
        _ => return Err(Error::Config("trajectories needs a rastrigin or rosenbrock [problem]".into())),
    };
    if problem.dim() != 2 {
        return Err(Error::Config(format!("trajectories needs problem.dim = 2, got {}", problem.dim())));
    }
    let out = output_dir(config);
    fs::create_dir_all(&out)?;
    let mut rows = Vec::new();
    for &method in &exp.trajectory_methods {
        let checked = gate(&exp, method)?;
        let noise = if method.is_stochastic() { exp.noise.clone() } else { NoiseModel::Zero };
        let log = run(&spec(&exp, method, &checked, &noise, exp.streams[0], true))?;
        for (r, x) in log.records.iter().zip(&log.iterates) {
            rows.push(TrajectoryRow { method: method.name().into(), n: r.n, x1: x[0], x2: x[1], f: problem.value(x)? });
        }
    }
    let mut w = csv::Writer::from_path(out.join("trajectories.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub out: String,
    pub seeds: usize,
    pub final_dist_xstar: Option<f64>,
    pub a_hat_final: Option<f64>,
    pub final_iterate_mean: Vec<f64>,
}

fn mean_final_dist(runs: &[RunFinal]) -> Option<f64> {
    let d: Option<Vec<f64>> = runs.iter().map(|r| r.record.dist_xstar).collect();
    d.filter(|d| !d.is_empty()).map(|d| d.iter().sum::<f64>() / d.len() as f64)
}

/// The `sweep` subcommand: one run per value of the dotted config key `axis`.
pub fn run_sweep(
    template: &toml::Value,
    base: &Path,
    axis: &str,
    values: &[toml::Value],
    overrides: &Overrides,
    workers: Option<usize>,
) -> Result<Vec<SweepRow>> {
    let mut root = template.clone();
    let mut probe = root.clone();
    super::config::set_dotted(&mut probe, axis, values.first().cloned().unwrap_or(toml::Value::Integer(0)))?;
    let mut top = Config::from_value(template.clone())?;
    overrides.apply(&mut top);
    let out = output_dir(&top);
    let mut rows = Vec::new();
    for (i, v) in values.iter().enumerate() {
        super::config::set_dotted(&mut root, axis, v.clone())?;
        let mut config = Config::from_value(root.clone())?;
        overrides.apply(&mut config);
        let dir = out.join(format!("sweep_{i:03}"));
        config.run.out = Some(dir.clone());
        let res = run_experiment(&config, base, workers)?;
        let s = &res.summary;
        rows.push(SweepRow {
            value: v.to_string(),
            out: dir.display().to_string(),
            seeds: s.runs.len(),
            final_dist_xstar: mean_final_dist(&s.runs),
            a_hat_final: s.aggregate.as_ref().and_then(|a| a.a_hat_final),
            final_iterate_mean: s.final_iterate_mean.clone(),
        });
    }
    fs::create_dir_all(&out)?;
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok(rows)
}
