//! Exp3.P over a grid of restart schedules (Double-Restart Q-UCB).

use rand::{Rng, RngCore};

use crate::agents::{
    run_agent, Agent, BonusKind, EpochPlan, QTables, QUcbConfig, RestartQUcb, RunOptions, UpdateStats,
};
use crate::envs::NonstationaryEnv;
use crate::error::{Error, Result};
use crate::model::{RunTrace, TabularPolicy};

/// Phase length `W`, index bound `J` and the `J + 1` candidate epoch counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateGrid {
    pub phase_len: usize,
    pub j_max: usize,
    pub values: Vec<usize>,
}

/// `W = floor(sqrt(H T))`, `J = ceil(ln W)` and
/// `values[j] = max(1, floor(T W^(j/J) / (S A H^2 W)))`.
pub fn candidate_grid(
    total_steps: usize,
    states: usize,
    actions: usize,
    horizon: usize,
) -> Result<CandidateGrid> {
    if total_steps == 0 || states == 0 || actions == 0 || horizon == 0 {
        return Err(Error::contract("candidate grid needs T, S, A, H >= 1"));
    }
    let t = total_steps as f64;
    let h = horizon as f64;
    let phase_len = ((h * t).sqrt().floor() as usize).max(1);
    let w = phase_len as f64;
    let j_max = w.ln().ceil().max(0.0) as usize;
    let denom = states as f64 * actions as f64 * h * h * w;
    let values = (0..=j_max)
        .map(|j| {
            let exponent = if j_max == 0 {
                0.0
            } else {
                j as f64 / j_max as f64
            };
            // the tiny slack keeps exact integers from flooring one below
            let raw = (t * w.powf(exponent) / denom * (1.0 + 1e-12)).floor();
            (raw as usize).max(1)
        })
        .collect();
    Ok(CandidateGrid {
        phase_len,
        j_max,
        values,
    })
}

/// Number of bandit rounds `ceil(M / W)`.
pub fn bandit_rounds(episodes: usize, phase_len: usize) -> usize {
    episodes.div_ceil(phase_len.max(1))
}

/// `alpha = 2 sqrt(ln(ceil(M/W) (J+1) / delta))` and
/// `gamma = min(3/5, 2 sqrt(3/5 (J+1) ln(J+1) / ceil(M/W)))`.
pub fn exp3p_params(episodes: usize, phase_len: usize, j_max: usize, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!(
            "Exp3.P delta must lie in (0, 1), got {delta}"
        )));
    }
    if episodes == 0 || phase_len == 0 {
        return Err(Error::contract("Exp3.P needs M >= 1 and W >= 1"));
    }
    let rounds = bandit_rounds(episodes, phase_len) as f64;
    let arms = (j_max + 1) as f64;
    let alpha = 2.0 * (rounds * arms / delta).ln().sqrt();
    let gamma = (2.0 * (0.6 * arms * arms.ln() / rounds).sqrt()).min(0.6);
    Ok((alpha, gamma))
}

/// Exp3.P state with weights kept as logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp3PState {
    log_weights: Vec<f64>,
    alpha: f64,
    gamma: f64,
    rounds: usize,
    round: usize,
}

impl Exp3PState {
    /// Every weight starts at `exp(alpha gamma / 3 * sqrt(rounds / arms))`.
    pub fn new(arms: usize, alpha: f64, gamma: f64, rounds: usize) -> Result<Self> {
        if arms == 0 || rounds == 0 {
            return Err(Error::contract("Exp3.P needs at least one arm and one round"));
        }
        if !(0.0..=1.0).contains(&gamma) || !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::contract(format!(
                "Exp3.P parameters out of range: alpha={alpha}, gamma={gamma}"
            )));
        }
        let init = alpha * gamma / 3.0 * (rounds as f64 / arms as f64).sqrt();
        Ok(Self {
            log_weights: vec![init; arms],
            alpha,
            gamma,
            rounds,
            round: 0,
        })
    }

    pub fn arms(&self) -> usize {
        self.log_weights.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Completed rounds.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Overwrites the log-weights, e.g. to probe the mixture formula.
    pub fn set_log_weights(&mut self, log_weights: Vec<f64>) -> Result<()> {
        if log_weights.len() != self.arms() || log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::contract("log-weights must be finite, one per arm"));
        }
        self.log_weights = log_weights;
        Ok(())
    }

    /// `p(j) = (1 - gamma) s(j) / sum s + gamma / (J + 1)`.
    pub fn arm_probabilities(&self) -> Vec<f64> {
        let k = self.arms() as f64;
        let top = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = self.log_weights.iter().map(|w| (w - top).exp()).collect();
        let total: f64 = shifted.iter().sum();
        shifted
            .iter()
            .map(|s| (1.0 - self.gamma) * s / total + self.gamma / k)
            .collect()
    }

    /// Samples an arm; always consumes exactly one uniform draw.
    pub fn draw(&self, rng: &mut (impl RngCore + ?Sized)) -> usize {
        let probs = self.arm_probabilities();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        probs.len() - 1
    }

    /// Importance-weighted update with the phase reward `reward` in
    /// `[0, reward_scale]`, where `reward_scale = W H`.
    pub fn update_weights(&mut self, chosen: usize, reward: f64, reward_scale: f64) -> Result<()> {
        if chosen >= self.arms() {
            return Err(Error::contract(format!("arm {chosen} out of range")));
        }
        if !(reward_scale > 0.0) || !(-1e-9..=reward_scale + 1e-9).contains(&reward) {
            return Err(Error::contract(format!(
                "phase reward {reward} outside [0, {reward_scale}]"
            )));
        }
        let probs = self.arm_probabilities();
        let k = self.arms() as f64;
        let rate = self.gamma / (3.0 * k);
        let bonus_denom = (k * self.rounds as f64).sqrt();
        for (j, lw) in self.log_weights.iter_mut().enumerate() {
            let estimate = if j == chosen {
                reward / (reward_scale * probs[j])
            } else {
                0.0
            };
            *lw += rate * (estimate + self.alpha / (probs[j] * bonus_denom));
        }
        self.round += 1;
        Ok(())
    }

    /// Number of broken invariants: a probability under the floor
    /// `gamma / (J + 1)`, a sum off 1 by more than 1e-9, or a non-finite weight.
    pub fn invariant_violations(&self) -> usize {
        let probs = self.arm_probabilities();
        let floor = self.gamma / self.arms() as f64;
        let mut bad = probs.iter().filter(|&&p| p < floor - 1e-12).count();
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            bad += 1;
        }
        bad + self.log_weights.iter().filter(|w| !w.is_finite()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleRestartConfig {
    /// Exp3.P failure probability, in (0, 1).
    pub delta: f64,
    /// Confidence parameter of the inner agents; defaults to `delta`.
    pub agent_delta: Option<f64>,
    pub ref_threshold: Option<f64>,
}

impl Default for DoubleRestartConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            agent_delta: None,
            ref_threshold: None,
        }
    }
}

/// One completed bandit round.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub phase: usize,
    pub first_episode: usize,
    pub last_episode: usize,
    pub arm: usize,
    pub epochs: usize,
    pub epoch_len: usize,
    pub reward: f64,
    /// Arm distribution the arm was drawn from.
    pub probabilities: Vec<f64>,
}

struct ActivePhase {
    agent: RestartQUcb,
    arm: usize,
    first_episode: usize,
    last_episode: usize,
    reward: f64,
    probabilities: Vec<f64>,
}

/// Runs a fresh Freedman RestartQ-UCB (no local budgets) per phase of `W`
/// episodes, with an epoch count chosen by Exp3.P.
pub struct DoubleRestart {
    states: usize,
    actions: usize,
    horizon: usize,
    episodes: usize,
    grid: CandidateGrid,
    bandit: Exp3PState,
    agent_cfg: QUcbConfig,
    active: Option<ActivePhase>,
    last_arm: Option<usize>,
    closed_reward: Option<f64>,
    epoch_offset: usize,
    phases: Vec<PhaseRecord>,
    violations: usize,
    finished_stats: UpdateStats,
    error: Option<Error>,
}

impl DoubleRestart {
    pub fn new(
        states: usize,
        actions: usize,
        horizon: usize,
        episodes: usize,
        cfg: &DoubleRestartConfig,
    ) -> Result<Self> {
        let grid = candidate_grid(episodes * horizon, states, actions, horizon)?;
        Self::with_grid(states, actions, horizon, episodes, grid, cfg)
    }

    /// Uses an explicit grid instead of the default candidate values.
    pub fn with_grid(
        states: usize,
        actions: usize,
        horizon: usize,
        episodes: usize,
        grid: CandidateGrid,
        cfg: &DoubleRestartConfig,
    ) -> Result<Self> {
        if grid.values.len() != grid.j_max + 1 || grid.values.contains(&0) || grid.phase_len == 0 {
            return Err(Error::contract("malformed candidate grid"));
        }
        let (alpha, gamma) = exp3p_params(episodes, grid.phase_len, grid.j_max, cfg.delta)?;
        let bandit = Exp3PState::new(
            grid.j_max + 1,
            alpha,
            gamma,
            bandit_rounds(episodes, grid.phase_len),
        )?;
        let agent_cfg = QUcbConfig {
            bonus: BonusKind::Freedman,
            delta: cfg.agent_delta.unwrap_or(cfg.delta),
            ref_threshold: cfg.ref_threshold,
            ..Default::default()
        };
        // fail early on a bad inner configuration
        RestartQUcb::new(states, actions, horizon, EpochPlan::single(1), agent_cfg.clone())?;
        Ok(Self {
            states,
            actions,
            horizon,
            episodes,
            grid,
            bandit,
            agent_cfg,
            active: None,
            last_arm: None,
            closed_reward: None,
            epoch_offset: 0,
            phases: Vec::new(),
            violations: 0,
            finished_stats: UpdateStats::default(),
            error: None,
        })
    }

    pub fn grid(&self) -> &CandidateGrid {
        &self.grid
    }

    pub fn bandit(&self) -> &Exp3PState {
        &self.bandit
    }

    pub fn phases(&self) -> &[PhaseRecord] {
        &self.phases
    }

    /// Probability-floor and normalization violations seen before every draw
    /// and after every update.
    pub fn invariant_violations(&self) -> usize {
        self.violations
    }

    fn start_phase(&mut self, m: usize, rng: &mut dyn RngCore) -> Result<()> {
        self.violations += self.bandit.invariant_violations();
        let probabilities = self.bandit.arm_probabilities();
        let arm = self.bandit.draw(rng);
        let d = self.grid.values[arm];
        let epoch_len = (self.episodes / d).max(1);
        let last_episode = (m + self.grid.phase_len - 1).min(self.episodes);
        let plan = EpochPlan::with_epoch_len(last_episode - m + 1, epoch_len)?;
        let agent = RestartQUcb::new(
            self.states,
            self.actions,
            self.horizon,
            plan,
            self.agent_cfg.clone(),
        )?;
        self.active = Some(ActivePhase {
            agent,
            arm,
            first_episode: m,
            last_episode,
            reward: 0.0,
            probabilities,
        });
        self.last_arm = Some(arm);
        Ok(())
    }

    fn finish_phase(&mut self) -> Result<()> {
        let Some(phase) = self.active.take() else {
            return Ok(());
        };
        let scale = (self.grid.phase_len * self.horizon) as f64;
        self.bandit.update_weights(phase.arm, phase.reward, scale)?;
        self.violations += self.bandit.invariant_violations();
        let st = phase.agent.stats();
        self.finished_stats.stage_updates += st.stage_updates;
        self.finished_stats.q_increases += st.q_increases;
        self.finished_stats.stage_len_mismatches += st.stage_len_mismatches;
        self.finished_stats.references_learned += st.references_learned;
        let plan = phase.agent.plan();
        self.epoch_offset += plan.num_epochs();
        self.closed_reward = Some(phase.reward);
        self.phases.push(PhaseRecord {
            phase: self.phases.len() + 1,
            first_episode: phase.first_episode,
            last_episode: phase.last_episode,
            arm: phase.arm,
            epochs: plan.num_epochs(),
            epoch_len: plan.epoch_len(),
            reward: phase.reward,
            probabilities: phase.probabilities,
        });
        Ok(())
    }

    fn record_error(&mut self, e: Error) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }
}

impl Agent for DoubleRestart {
    fn name(&self) -> String {
        "double-restart-q-ucb".to_string()
    }

    fn begin_episode(&mut self, m: usize, rng: &mut dyn RngCore) {
        self.closed_reward = None;
        if self.active.is_none() {
            if let Err(e) = self.start_phase(m, rng) {
                self.record_error(e);
                return;
            }
        }
        if let Some(phase) = self.active.as_mut() {
            let local = m - phase.first_episode + 1;
            phase.agent.begin_episode(local, rng);
        }
    }

    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize {
        match self.active.as_mut() {
            Some(phase) => phase.agent.act(h, s, rng),
            None => 0,
        }
    }

    fn observe(&mut self, h: usize, s: usize, a: usize, reward: f64, next_state: usize) {
        if let Some(phase) = self.active.as_mut() {
            phase.agent.observe(h, s, a, reward, next_state);
        }
    }

    fn end_episode(&mut self, m: usize, episode_reward: f64) {
        let done = match self.active.as_mut() {
            Some(phase) => {
                phase.reward += episode_reward;
                m >= phase.last_episode
            }
            None => false,
        };
        if done {
            if let Err(e) = self.finish_phase() {
                self.record_error(e);
            }
        }
    }

    fn greedy_policy(&self) -> TabularPolicy {
        match &self.active {
            Some(phase) => phase.agent.greedy_policy(),
            None => TabularPolicy::constant(self.states, self.horizon, 0),
        }
    }

    fn epoch(&self) -> usize {
        match &self.active {
            Some(phase) => self.epoch_offset + phase.agent.epoch(),
            None => self.epoch_offset.max(1),
        }
    }

    fn arm(&self) -> Option<usize> {
        self.last_arm
    }

    fn closed_phase_reward(&self) -> Option<f64> {
        self.closed_reward
    }

    fn q_tables(&self) -> Option<&QTables> {
        self.active.as_ref().map(|p| p.agent.tables())
    }

    /// First contract violation raised inside the episode loop.
    fn take_error(&mut self) -> Option<Error> {
        self.error.take()
    }

    /// Counters summed over every phase so far.
    fn update_stats(&self) -> Option<UpdateStats> {
        let mut st = self.finished_stats;
        if let Some(p) = &self.active {
            let a = p.agent.stats();
            st.stage_updates += a.stage_updates;
            st.q_increases += a.q_increases;
            st.stage_len_mismatches += a.stage_len_mismatches;
            st.references_learned += a.references_learned;
        }
        Some(st)
    }
}

/// Double-Restart Q-UCB over all episodes of `env`.
pub fn run_double_restart(
    env: &dyn NonstationaryEnv,
    cfg: &DoubleRestartConfig,
    rng: &mut dyn RngCore,
    seed: u64,
    opts: RunOptions,
) -> Result<(RunTrace, DoubleRestart)> {
    let mut agent = DoubleRestart::new(env.states(), env.actions(), env.horizon(), env.episodes(), cfg)?;
    let trace = run_agent(env, &mut agent, rng, seed, opts)?;
    Ok((trace, agent))
}
