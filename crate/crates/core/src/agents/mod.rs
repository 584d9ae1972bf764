//! Learners and the episode loop that drives them.

mod bonus;
mod qucb;
mod schedule;

use rand::RngCore;

use crate::envs::NonstationaryEnv;
use crate::error::{Error, Result};
use crate::model::{RunTrace, TabularPolicy};

pub use bonus::{freedman_bonus, hoeffding_bonus, FreedmanSums};
pub use qucb::{BonusKind, QTables, QUcbConfig, RestartQUcb, UpdateStats};
pub use schedule::{epochs_freedman, epochs_hoeffding, EpochPlan, StageSchedule};

/// An episodic learner. The runner calls `begin_episode`, then `act` and
/// `observe` once per step, then `end_episode`.
pub trait Agent: Send {
    fn name(&self) -> String;

    fn begin_episode(&mut self, m: usize, rng: &mut dyn RngCore);

    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize;

    fn observe(&mut self, h: usize, s: usize, a: usize, reward: f64, next_state: usize);

    fn end_episode(&mut self, _m: usize, _episode_reward: f64) {}

    /// Deterministic policy the agent would follow from the current tables.
    fn greedy_policy(&self) -> TabularPolicy;

    /// 1-based epoch counter, cumulative across phases for meta-agents.
    fn epoch(&self) -> usize;

    /// Bandit arm of the current phase, for meta-agents.
    fn arm(&self) -> Option<usize> {
        None
    }

    /// Reward of the meta-bandit phase closed by the last `end_episode`.
    fn closed_phase_reward(&self) -> Option<f64> {
        None
    }

    fn q_tables(&self) -> Option<&QTables> {
        None
    }

    fn update_stats(&self) -> Option<UpdateStats> {
        None
    }

    /// A failure recorded inside `end_episode`, handed out once.
    fn take_error(&mut self) -> Option<Error> {
        None
    }
}

impl<T: Agent + ?Sized> Agent for Box<T> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn begin_episode(&mut self, m: usize, rng: &mut dyn RngCore) {
        (**self).begin_episode(m, rng)
    }

    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize {
        (**self).act(h, s, rng)
    }

    fn observe(&mut self, h: usize, s: usize, a: usize, reward: f64, next_state: usize) {
        (**self).observe(h, s, a, reward, next_state)
    }

    fn end_episode(&mut self, m: usize, episode_reward: f64) {
        (**self).end_episode(m, episode_reward)
    }

    fn greedy_policy(&self) -> TabularPolicy {
        (**self).greedy_policy()
    }

    fn epoch(&self) -> usize {
        (**self).epoch()
    }

    fn arm(&self) -> Option<usize> {
        (**self).arm()
    }

    fn closed_phase_reward(&self) -> Option<f64> {
        (**self).closed_phase_reward()
    }

    fn q_tables(&self) -> Option<&QTables> {
        (**self).q_tables()
    }

    fn update_stats(&self) -> Option<UpdateStats> {
        (**self).update_stats()
    }

    fn take_error(&mut self) -> Option<Error> {
        (**self).take_error()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Store the greedy policy at the start of every episode so that exact
    /// regret can be computed afterwards.
    pub record_policy: bool,
    /// Store per-step sales and next states (inventory audit columns).
    pub record_steps: bool,
}

/// Plays every episode of `env` with `agent`, drawing all randomness from `rng`.
pub fn run_agent(
    env: &dyn NonstationaryEnv,
    agent: &mut dyn Agent,
    rng: &mut dyn RngCore,
    seed: u64,
    opts: RunOptions,
) -> Result<RunTrace> {
    let horizon = env.horizon();
    let mut trace = RunTrace::new(seed, agent.name(), env.name());
    for m in 1..=env.episodes() {
        agent.begin_episode(m, rng);
        let policy = opts.record_policy.then(|| agent.greedy_policy());
        let snap = env.snapshot(m);
        let s1 = env.initial_state(m);
        let mut s = s1;
        let mut total = 0.0;
        let mut sales = opts.record_steps.then(|| Vec::with_capacity(horizon));
        let mut nexts = opts.record_steps.then(|| Vec::with_capacity(horizon));
        for h in 0..horizon {
            let a = agent.act(h, s, rng);
            let tr = env.step(&snap, m, h, s, a, rng)?;
            agent.observe(h, s, a, tr.reward, tr.next_state);
            total += tr.reward;
            if let Some(v) = sales.as_mut() {
                v.push(tr.sales.unwrap_or(0));
            }
            if let Some(v) = nexts.as_mut() {
                v.push(tr.next_state);
            }
            s = tr.next_state;
        }
        agent.end_episode(m, total);
        if let Some(e) = agent.take_error() {
            return Err(e);
        }
        let rec = trace.push(s1, total, agent.epoch());
        rec.arm = agent.arm();
        rec.phase_reward = agent.closed_phase_reward();
        rec.policy = policy;
        rec.sales = sales;
        rec.next_states = nexts;
    }
    Ok(trace)
}
