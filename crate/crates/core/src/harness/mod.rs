//! Seeded multi-run experiments, CSV traces and cross-seed statistics.

mod config;
mod report;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agents::{run_agent, RunOptions};
use crate::envs::NonstationaryEnv;
use crate::error::{Error, Result};
use crate::inventory::PseudoRewardMap;
use crate::model::RunTrace;
use crate::oracle::{dynamic_regret, RegretSeries};

pub use config::{
    AgentConfig, AgentKind, EnvConfig, ExperimentConfig, RunSection, DEFAULT_EPOCH_LEN,
};
pub use report::{budget_report, regret_report};

pub const TRACE_SCHEMA: &str = "# nsrl-trace v1";
pub const AGGREGATE_SCHEMA: &str = "# nsrl-aggregate v1";
/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "NSRL_WORKERS";

/// One seed's trace plus its exact regret when policies were recorded.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub run_id: usize,
    pub trace: RunTrace,
    pub regret: Option<RegretSeries>,
}

/// Runs seed `base_seed + run_id` of the experiment.
pub fn run_seed(cfg: &ExperimentConfig, env: &dyn NonstationaryEnv, run_id: usize) -> Result<SeedRun> {
    let seed = cfg.run.base_seed + run_id as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = cfg.build_agent(env)?;
    let opts = RunOptions {
        record_policy: cfg.run.record_policy,
        record_steps: matches!(cfg.env, EnvConfig::Inventory(_)),
    };
    let mut trace = run_agent(env, agent.as_mut(), &mut rng, seed, opts)?;
    let regret = if cfg.run.record_policy {
        let policies = trace
            .policies()
            .ok_or_else(|| Error::contract("policy recording left gaps in the trace"))?;
        Some(dynamic_regret(env, &policies, &trace.initial_states())?)
    } else {
        None
    };
    if !cfg.run.record_policy {
        for r in &mut trace.records {
            r.policy = None;
        }
    }
    Ok(SeedRun {
        run_id,
        trace,
        regret,
    })
}

/// Number of workers requested through `NSRL_WORKERS`, if set.
pub fn worker_count() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| Error::config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Every seed of the experiment, in run-id order.
pub fn run_seeds(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.check()?;
    let env = cfg.build_env()?;
    let job = || {
        (0..cfg.run.seeds)
            .into_par_iter()
            .map(|i| run_seed(cfg, env.as_ref(), i))
            .collect::<Result<Vec<_>>>()
    };
    let mut runs = match worker_count()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("cannot start {n} workers: {e}")))?
            .install(job)?,
        None => job()?,
    };
    runs.sort_by_key(|r| r.run_id);
    Ok(runs)
}

/// Per-episode cross-seed statistics of cumulative reward and regret.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub mean_reward: Vec<f64>,
    pub std_reward: Vec<f64>,
    pub mean_regret: Option<Vec<f64>>,
    pub std_regret: Option<Vec<f64>>,
}

impl AggregateStats {
    pub fn episodes(&self) -> usize {
        self.mean_reward.len()
    }
}

/// Cumulative series of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSeries {
    pub cumulative_reward: Vec<f64>,
    pub cumulative_regret: Option<Vec<f64>>,
}

impl From<&SeedRun> for SeedSeries {
    fn from(run: &SeedRun) -> Self {
        Self {
            cumulative_reward: run.trace.records.iter().map(|r| r.cumulative_reward).collect(),
            cumulative_regret: run.regret.as_ref().map(|r| r.cumulative.clone()),
        }
    }
}

/// Mean and population std of each column. Values are shifted by the first
/// series before summing, so identical inputs give their own value and 0.
fn column_stats(columns: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = columns.len() as f64;
    let len = columns[0].len();
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    for i in 0..len {
        let base = columns[0][i];
        let shift: f64 = columns.iter().map(|c| c[i] - base).sum::<f64>() / n;
        let var = columns
            .iter()
            .map(|c| {
                let d = c[i] - base - shift;
                d * d
            })
            .sum::<f64>()
            / n;
        let m = base + shift;
        mean.push(m);
        std.push(var.max(0.0).sqrt());
    }
    (mean, std)
}

pub fn aggregate(series: &[SeedSeries]) -> Result<AggregateStats> {
    let first = series
        .first()
        .ok_or_else(|| Error::contract("aggregate needs at least one trace"))?;
    let len = first.cumulative_reward.len();
    if series.iter().any(|s| s.cumulative_reward.len() != len) {
        return Err(Error::contract("traces disagree on the number of episodes"));
    }
    let has_regret = first.cumulative_regret.is_some();
    if series.iter().any(|s| {
        s.cumulative_regret.is_some() != has_regret
            || s.cumulative_regret.as_ref().is_some_and(|r| r.len() != len)
    }) {
        return Err(Error::contract("traces disagree on regret recording"));
    }
    if len == 0 {
        return Ok(AggregateStats {
            mean_reward: Vec::new(),
            std_reward: Vec::new(),
            mean_regret: has_regret.then(Vec::new),
            std_regret: has_regret.then(Vec::new),
        });
    }
    let rewards: Vec<&[f64]> = series.iter().map(|s| s.cumulative_reward.as_slice()).collect();
    let (mean_reward, std_reward) = column_stats(&rewards);
    let (mean_regret, std_regret) = if has_regret {
        let regrets: Vec<&[f64]> = series
            .iter()
            .map(|s| s.cumulative_regret.as_deref().expect("checked above"))
            .collect();
        let (m, s) = column_stats(&regrets);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(AggregateStats {
        mean_reward,
        std_reward,
        mean_regret,
        std_regret,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

/// Serializes one seed's trace, schema comment first.
pub fn trace_csv(run: &SeedRun, reward_map: Option<PseudoRewardMap>) -> Result<Vec<u8>> {
    let trace = &run.trace;
    let mut out = Vec::new();
    write!(out, "{TRACE_SCHEMA} agent={} env={} seed={}", trace.agent, trace.env, trace.seed)
        .expect("writing to a Vec");
    if let Some(map) = reward_map {
        write!(out, " reward_scale={} reward_offset={}", map.scale, map.offset).expect("writing to a Vec");
    }
    out.push(b'\n');
    let with_phase = trace.records.iter().any(|r| r.phase_reward.is_some());
    let with_steps = trace.records.iter().any(|r| r.sales.is_some());
    let mut header = vec![
        "run_id",
        "seed",
        "episode",
        "episode_reward",
        "cumulative_reward",
        "cumulative_regret",
        "epoch_index",
        "arm",
    ];
    if with_phase {
        header.push("phase_reward");
    }
    if with_steps {
        header.extend(["sales", "next_state"]);
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let path = Path::new("<memory>");
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, r) in trace.records.iter().enumerate() {
        let mut row = vec![
            run.run_id.to_string(),
            trace.seed.to_string(),
            r.episode.to_string(),
            r.reward.to_string(),
            r.cumulative_reward.to_string(),
            run.regret.as_ref().map_or(String::new(), |g| g.cumulative[i].to_string()),
            r.epoch.to_string(),
            r.arm.map_or(String::new(), |a| a.to_string()),
        ];
        if with_phase {
            row.push(r.phase_reward.map_or(String::new(), |p| p.to_string()));
        }
        if with_steps {
            row.push(r.sales.as_deref().map_or(String::new(), join));
            row.push(r.next_states.as_deref().map_or(String::new(), join));
        }
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.into_inner()
        .map_err(|e| Error::contract(format!("flushing trace csv: {e}")))
}

pub fn aggregate_csv(stats: &AggregateStats) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "{AGGREGATE_SCHEMA}").expect("writing to a Vec");
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let path = Path::new("<memory>");
    w.write_record([
        "episode",
        "mean_cum_reward",
        "std_cum_reward",
        "mean_cum_regret",
        "std_cum_regret",
    ])
    .map_err(csv_err(path))?;
    let cell = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map_or(String::new(), |x| x[i].to_string());
    for i in 0..stats.episodes() {
        w.write_record([
            (i + 1).to_string(),
            stats.mean_reward[i].to_string(),
            stats.std_reward[i].to_string(),
            cell(&stats.mean_regret, i),
            cell(&stats.std_regret, i),
        ])
        .map_err(csv_err(path))?;
    }
    w.into_inner()
        .map_err(|e| Error::contract(format!("flushing aggregate csv: {e}")))
}

fn parse_optional(field: &str, path: &Path) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::config(format!("{}: bad number {field:?}", path.display())))
}

fn data_reader(path: &Path, schema: &str) -> Result<csv::Reader<std::io::Cursor<Vec<u8>>>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let newline = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    let first = String::from_utf8_lossy(&bytes[..newline]);
    if !first.starts_with(schema) {
        return Err(Error::config(format!(
            "{}: expected a `{schema}` first line",
            path.display()
        )));
    }
    let body = bytes[(newline + 1).min(bytes.len())..].to_vec();
    Ok(csv::Reader::from_reader(std::io::Cursor::new(body)))
}

pub fn read_aggregate_csv(path: &Path) -> Result<AggregateStats> {
    let mut rdr = data_reader(path, AGGREGATE_SCHEMA)?;
    let mut stats = AggregateStats {
        mean_reward: Vec::new(),
        std_reward: Vec::new(),
        mean_regret: Some(Vec::new()),
        std_regret: Some(Vec::new()),
    };
    let mut any_missing = false;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let get = |i: usize| parse_optional(rec.get(i).unwrap_or(""), path);
        stats.mean_reward.push(get(1)?.unwrap_or(f64::NAN));
        stats.std_reward.push(get(2)?.unwrap_or(f64::NAN));
        match (get(3)?, get(4)?) {
            (Some(m), Some(s)) => {
                stats.mean_regret.as_mut().expect("set above").push(m);
                stats.std_regret.as_mut().expect("set above").push(s);
            }
            _ => any_missing = true,
        }
    }
    if any_missing {
        stats.mean_regret = None;
        stats.std_regret = None;
    }
    Ok(stats)
}

/// Seed and per-episode rewards stored in a trace CSV.
pub fn read_trace_csv(path: &Path) -> Result<(u64, Vec<f64>)> {
    let mut rdr = data_reader(path, TRACE_SCHEMA)?;
    let mut seed = None;
    let mut rewards = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let s: u64 = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::config(format!("{}: bad seed column", path.display())))?;
        if *seed.get_or_insert(s) != s {
            return Err(Error::config(format!("{}: mixed seeds in one trace", path.display())));
        }
        rewards.push(parse_optional(rec.get(3).unwrap_or(""), path)?.unwrap_or(f64::NAN));
    }
    let seed = seed.ok_or_else(|| Error::config(format!("{}: empty trace", path.display())))?;
    Ok((seed, rewards))
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub traces: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub stats: AggregateStats,
    pub runs: Vec<SeedRun>,
}

pub fn trace_path(cfg: &ExperimentConfig, run_id: usize) -> PathBuf {
    cfg.run.out.join(format!("{}-run{run_id:03}.csv", cfg.run.name))
}

pub fn aggregate_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.run.out.join(format!("{}-aggregate.csv", cfg.run.name))
}

/// Runs every seed, writes one trace CSV per seed and the aggregate CSV.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let runs = run_seeds(cfg)?;
    let out = &cfg.run.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let map = match &cfg.env {
        EnvConfig::Inventory(p) => Some(PseudoRewardMap::for_params(p)),
        _ => None,
    };
    let mut traces = Vec::with_capacity(runs.len());
    for run in &runs {
        let path = trace_path(cfg, run.run_id);
        let bytes = trace_csv(run, map)?;
        fs::write(&path, bytes).map_err(io_err(&path))?;
        traces.push(path);
    }
    let series: Vec<SeedSeries> = runs.iter().map(SeedSeries::from).collect();
    let stats = aggregate(&series)?;
    let aggregate = aggregate_path(cfg);
    fs::write(&aggregate, aggregate_csv(&stats)?).map_err(io_err(&aggregate))?;
    log::info!(
        "{}: {} seeds, final mean cumulative reward {:.3}",
        cfg.run.name,
        runs.len(),
        stats.mean_reward.last().copied().unwrap_or(0.0)
    );
    Ok(ExperimentOutput {
        traces,
        aggregate,
        stats,
        runs,
    })
}
