use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{
    epochs_freedman, epochs_hoeffding, Agent, BonusKind, EpochPlan, QUcbConfig, RestartQUcb,
};
use crate::envs::{CombinationLock, JaoChain, JaoChainConfig, LockConfig, NonstationaryEnv};
use crate::error::{Error, Result};
use crate::inventory::{InventoryEnv, InventoryParams};
use crate::meta_bandit::{DoubleRestart, DoubleRestartConfig};
use crate::multiagent::{switching_cost, wrap_team, TeamScenario};
use crate::oracle::variation_budgets;

/// A complete experiment: what to run, with which learner, how many times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunSection,
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub seeds: usize,
    pub base_seed: u64,
    pub out: PathBuf,
    /// Snapshot the greedy policy every episode and report exact regret.
    pub record_policy: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "experiment".to_string(),
            seeds: 30,
            base_seed: 0,
            out: PathBuf::from("runs"),
            record_policy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Lock(LockConfig),
    Jao(JaoChainConfig),
    Inventory(InventoryParams),
    Team(TeamScenario),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    RestartqUcb,
    QUcb,
    EpsilonGreedy,
    DoubleRestart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub bonus: BonusKind,
    pub delta: f64,
    /// Random-action probability (epsilon-greedy only).
    pub epsilon: f64,
    /// Fixed epoch length K; takes precedence over `epochs` and `budget`.
    pub epoch_len: Option<usize>,
    /// Number of epochs D.
    pub epochs: Option<usize>,
    /// Total variation budget used to pick D from the rate-optimal formula.
    pub budget: Option<f64>,
    /// Feed the oracle's per-epoch local budgets to the update rule.
    pub known_budgets: bool,
    pub ref_threshold: Option<f64>,
    /// Inner-agent confidence parameter for Double-Restart.
    pub agent_delta: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::RestartqUcb,
            bonus: BonusKind::Hoeffding,
            delta: 0.1,
            epsilon: 0.05,
            epoch_len: None,
            epochs: None,
            budget: None,
            known_budgets: false,
            ref_threshold: None,
            agent_delta: None,
        }
    }
}

/// Restart period used when an experiment names none.
pub const DEFAULT_EPOCH_LEN: usize = 1000;

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn check(&self) -> Result<()> {
        if self.run.seeds == 0 {
            return Err(Error::config("run.seeds must be at least 1"));
        }
        match &self.env {
            EnvConfig::Lock(c) => c.check(),
            EnvConfig::Jao(c) => c.check(),
            EnvConfig::Inventory(p) => p.check(),
            EnvConfig::Team(t) => t.build().map(|_| ()),
        }?;
        let a = &self.agent;
        if a.kind == AgentKind::EpsilonGreedy && !(a.epsilon > 0.0 && a.epsilon <= 1.0) {
            return Err(Error::config("agent.epsilon must lie in (0, 1]"));
        }
        if a.kind == AgentKind::DoubleRestart && !(a.delta > 0.0 && a.delta < 1.0) {
            return Err(Error::config("double-restart agent.delta must lie in (0, 1)"));
        }
        if a.epoch_len == Some(0) || a.epochs == Some(0) {
            return Err(Error::config("agent.epoch_len and agent.epochs must be at least 1"));
        }
        if a.budget.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::config("agent.budget must be positive"));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<Arc<dyn NonstationaryEnv>> {
        Ok(match &self.env {
            EnvConfig::Lock(c) => Arc::new(CombinationLock::new(c.clone())?),
            EnvConfig::Jao(c) => Arc::new(JaoChain::new(c.clone())?),
            EnvConfig::Inventory(p) => Arc::new(InventoryEnv::new(p.clone())?),
            EnvConfig::Team(t) => {
                let (team, schedule) = t.build()?;
                Arc::new(wrap_team(team, &schedule)?)
            }
        })
    }

    /// Opponent switching cost, for team scenarios.
    pub fn switching_cost(&self) -> Result<Option<usize>> {
        match &self.env {
            EnvConfig::Team(t) => Ok(Some(switching_cost(&t.build()?.1))),
            _ => Ok(None),
        }
    }

    /// Restart schedule of the restart-based agents.
    pub fn epoch_plan(&self, env: &dyn NonstationaryEnv) -> Result<EpochPlan> {
        let a = &self.agent;
        let m = env.episodes();
        if a.kind == AgentKind::QUcb {
            return Ok(EpochPlan::single(m));
        }
        if let Some(k) = a.epoch_len {
            return EpochPlan::with_epoch_len(m, k);
        }
        if let Some(d) = a.epochs {
            return EpochPlan::new(m, d);
        }
        if let Some(budget) = a.budget {
            let t = m * env.horizon();
            let d = match a.bonus {
                BonusKind::Freedman => epochs_freedman(env.states(), env.actions(), budget, t, m)?,
                _ => epochs_hoeffding(env.states(), env.actions(), budget, env.horizon(), t)?,
            };
            return EpochPlan::new(m, d);
        }
        EpochPlan::with_epoch_len(m, DEFAULT_EPOCH_LEN.min(m))
    }

    /// A fresh learner for one seed.
    pub fn build_agent(&self, env: &dyn NonstationaryEnv) -> Result<Box<dyn Agent>> {
        let a = &self.agent;
        if a.kind == AgentKind::DoubleRestart {
            let cfg = DoubleRestartConfig {
                delta: a.delta,
                agent_delta: a.agent_delta,
                ref_threshold: a.ref_threshold,
            };
            return Ok(Box::new(DoubleRestart::new(
                env.states(),
                env.actions(),
                env.horizon(),
                env.episodes(),
                &cfg,
            )?));
        }
        let plan = self.epoch_plan(env)?;
        let drift_bonus = if a.known_budgets {
            let report = variation_budgets(env, 1..=env.episodes(), Some(&plan))?;
            Some(
                report
                    .local
                    .iter()
                    .map(|l| l.drift_bonus(env.horizon()))
                    .collect(),
            )
        } else {
            None
        };
        let greedy = a.kind == AgentKind::EpsilonGreedy;
        let cfg = QUcbConfig {
            bonus: if greedy { BonusKind::None } else { a.bonus },
            delta: a.delta,
            exploration: if greedy { a.epsilon } else { 0.0 },
            ref_threshold: a.ref_threshold,
            drift_bonus,
            ..Default::default()
        };
        let agent = RestartQUcb::new(env.states(), env.actions(), env.horizon(), plan, cfg)?
            .with_mask(env.action_mask())?;
        Ok(Box::new(agent))
    }
}
