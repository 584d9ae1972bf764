use std::fmt::Write as _;
use std::path::Path;

use super::{read_trace_csv, run_seed, AgentKind, EnvConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::inventory::PseudoRewardMap;
use crate::oracle::variation_budgets;

/// Variation budgets of the configured env, split by the agent's epochs.
pub fn budget_report(cfg: &ExperimentConfig) -> Result<String> {
    let env = cfg.build_env()?;
    let m = env.episodes();
    let plan = match cfg.agent.kind {
        AgentKind::DoubleRestart => None,
        _ => Some(cfg.epoch_plan(env.as_ref())?),
    };
    let rep = variation_budgets(env.as_ref(), 1..=m, plan.as_ref())?;
    let mut out = String::new();
    let _ = writeln!(out, "env = {}", env.name());
    let _ = writeln!(out, "episodes = {m}");
    let _ = writeln!(out, "horizon = {}", env.horizon());
    let _ = writeln!(out, "delta_r = {}", rep.delta_r);
    let _ = writeln!(out, "delta_p = {}", rep.delta_p);
    let _ = writeln!(out, "delta = {}", rep.total());
    for l in &rep.local {
        let _ = writeln!(
            out,
            "epoch {} episodes {}..={} delta_r = {} delta_p = {} b_delta = {}",
            l.epoch,
            l.first_episode,
            l.last_episode,
            l.delta_r,
            l.delta_p,
            l.drift_bonus(env.horizon())
        );
    }
    if let Some(n) = cfg.switching_cost()? {
        let _ = writeln!(out, "switching_cost = {n}");
    }
    if let EnvConfig::Inventory(p) = &cfg.env {
        let map = PseudoRewardMap::for_params(p);
        let _ = writeln!(out, "reward_scale = {}", map.scale);
        let _ = writeln!(out, "reward_offset = {}", map.offset);
    }
    Ok(out)
}

/// Exact dynamic regret, by replaying seeds with policy recording on.
///
/// With a trace file only that trace's seed is replayed, and its rewards must
/// match the file exactly.
pub fn regret_report(cfg: &ExperimentConfig, trace: Option<&Path>) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.run.record_policy = true;
    let env = cfg.build_env()?;
    let run_ids: Vec<usize> = match trace {
        Some(path) => {
            let (seed, _) = read_trace_csv(path)?;
            let id = seed
                .checked_sub(cfg.run.base_seed)
                .ok_or_else(|| Error::config(format!("trace seed {seed} is below base_seed")))?;
            vec![id as usize]
        }
        None => (0..cfg.run.seeds).collect(),
    };
    let mut out = String::new();
    for id in run_ids {
        let run = run_seed(&cfg, env.as_ref(), id)?;
        if let Some(path) = trace {
            let (_, rewards) = read_trace_csv(path)?;
            let replayed: Vec<f64> = run.trace.records.iter().map(|r| r.reward).collect();
            if rewards != replayed {
                return Err(Error::config(format!(
                    "{}: trace does not match a replay of seed {} under this config",
                    path.display(),
                    run.trace.seed
                )));
            }
        }
        let regret = run.regret.as_ref().expect("policy recording is on");
        let _ = writeln!(
            out,
            "run {} seed {} cumulative_reward = {} dynamic_regret = {}",
            run.run_id,
            run.trace.seed,
            run.trace.final_cumulative_reward(),
            regret.total()
        );
    }
    Ok(out)
}
