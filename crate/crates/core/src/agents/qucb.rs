//! RestartQ-UCB: stage-based optimistic Q-learning restarted every epoch.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::bonus::{freedman_unchecked, hoeffding_unchecked, FreedmanSums};
use super::schedule::{EpochPlan, StageSchedule};
use super::Agent;
use crate::error::{Error, Result};
use crate::model::TabularPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BonusKind {
    Hoeffding,
    Freedman,
    /// No optimism bonus: plain stage averages (epsilon-greedy baseline).
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QUcbConfig {
    pub bonus: BonusKind,
    /// Confidence parameter; `iota = ln(2 / delta)`. Values in `[1, 2)` are
    /// accepted as a tuning knob that shrinks the bonus.
    pub delta: f64,
    /// Probability of a uniformly random valid action.
    pub exploration: f64,
    /// Reference-learning threshold `N0`; defaults to `S A H^6 iota`.
    pub ref_threshold: Option<f64>,
    /// Known local drift `b_Delta = Delta_r^(d) + H Delta_p^(d)` per epoch `d`
    /// (index `d - 1`). `None` selects the update rule that needs no local
    /// budgets.
    pub drift_bonus: Option<Vec<f64>>,
    /// Epsilon-greedy baseline only: replace Q by the stage average instead
    /// of taking the running minimum.
    pub overwrite: bool,
    /// Start Q at `H - h + 1` (optimistic) or at 0.
    pub optimistic_init: bool,
}

impl Default for QUcbConfig {
    fn default() -> Self {
        Self {
            bonus: BonusKind::Hoeffding,
            delta: 0.1,
            exploration: 0.0,
            ref_threshold: None,
            drift_bonus: None,
            overwrite: false,
            optimistic_init: true,
        }
    }
}

/// Counters checked by the property suites.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub stage_updates: u64,
    /// Stage updates that raised a Q value.
    pub q_increases: u64,
    /// Stage updates that used a sample count other than the stage length.
    pub stage_len_mismatches: u64,
    pub references_learned: u64,
}

/// Optimistic value tables and the per-triple accumulators of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct QTables {
    states: usize,
    actions: usize,
    horizon: usize,
    q: Vec<f64>,
    /// `(H+1) x S`, last row fixed at 0.
    v: Vec<f64>,
    visits: Vec<usize>,
    stage_visits: Vec<usize>,
    stage_reward: Vec<f64>,
    stage_next_value: Vec<f64>,
    stage_adv: Vec<f64>,
    stage_adv_sq: Vec<f64>,
    ref_sum: Vec<f64>,
    ref_sq_sum: Vec<f64>,
    /// `(H+1) x S`, last row fixed at 0.
    v_ref: Vec<f64>,
    state_visits: Vec<usize>,
    ref_learned: Vec<bool>,
    optimistic: bool,
}

impl QTables {
    fn new(states: usize, actions: usize, horizon: usize, optimistic: bool) -> Self {
        let sa = horizon * states * actions;
        let mut t = Self {
            states,
            actions,
            horizon,
            q: vec![0.0; sa],
            v: vec![0.0; (horizon + 1) * states],
            visits: vec![0; sa],
            stage_visits: vec![0; sa],
            stage_reward: vec![0.0; sa],
            stage_next_value: vec![0.0; sa],
            stage_adv: vec![0.0; sa],
            stage_adv_sq: vec![0.0; sa],
            ref_sum: vec![0.0; sa],
            ref_sq_sum: vec![0.0; sa],
            v_ref: vec![0.0; (horizon + 1) * states],
            state_visits: vec![0; horizon * states],
            ref_learned: vec![false; horizon * states],
            optimistic,
        };
        t.reset();
        t
    }

    fn reset(&mut self) {
        let (s_len, a_len, h_len) = (self.states, self.actions, self.horizon);
        for h in 0..h_len {
            let init = if self.optimistic { (h_len - h) as f64 } else { 0.0 };
            self.q[h * s_len * a_len..(h + 1) * s_len * a_len].fill(init);
            self.v[h * s_len..(h + 1) * s_len].fill(init);
            self.v_ref[h * s_len..(h + 1) * s_len].fill(h_len as f64);
        }
        self.v[h_len * s_len..].fill(0.0);
        self.v_ref[h_len * s_len..].fill(0.0);
        self.visits.fill(0);
        self.stage_visits.fill(0);
        self.stage_reward.fill(0.0);
        self.stage_next_value.fill(0.0);
        self.stage_adv.fill(0.0);
        self.stage_adv_sq.fill(0.0);
        self.ref_sum.fill(0.0);
        self.ref_sq_sum.fill(0.0);
        self.state_visits.fill(0);
        self.ref_learned.fill(false);
    }

    #[inline]
    fn idx(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[self.idx(h, s, a)]
    }

    #[inline]
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.states + s]
    }

    #[inline]
    pub fn v_ref(&self, h: usize, s: usize) -> f64 {
        self.v_ref[h * self.states + s]
    }

    pub fn visits(&self, h: usize, s: usize, a: usize) -> usize {
        self.visits[self.idx(h, s, a)]
    }

    pub fn stage_visits(&self, h: usize, s: usize, a: usize) -> usize {
        self.stage_visits[self.idx(h, s, a)]
    }

    /// Empirical stage variance of the advantage `V(s') - V_ref(s')`.
    pub fn stage_advantage_variance(&self, h: usize, s: usize, a: usize) -> Option<f64> {
        let i = self.idx(h, s, a);
        let n = self.stage_visits[i];
        (n > 0).then(|| {
            let mean = self.stage_adv[i] / n as f64;
            self.stage_adv_sq[i] / n as f64 - mean * mean
        })
    }

    /// Flat `[h][s][a]` Q table.
    pub fn q_values(&self) -> &[f64] {
        &self.q
    }
}

/// RestartQ-UCB with Hoeffding or Freedman bonuses. Also serves as the
/// no-restart Q-UCB baseline (single epoch) and, with `BonusKind::None` and
/// `exploration > 0`, as the epsilon-greedy baseline.
#[derive(Debug, Clone)]
pub struct RestartQUcb {
    name: String,
    cfg: QUcbConfig,
    plan: EpochPlan,
    mask: Option<Vec<bool>>,
    iota: f64,
    ref_threshold: f64,
    schedule: StageSchedule,
    tables: QTables,
    epoch: usize,
    stats: UpdateStats,
}

impl RestartQUcb {
    pub fn new(
        states: usize,
        actions: usize,
        horizon: usize,
        plan: EpochPlan,
        cfg: QUcbConfig,
    ) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(Error::contract("agent dimensions must be positive"));
        }
        if !(cfg.delta > 0.0 && cfg.delta < 2.0) {
            return Err(Error::config(format!(
                "delta must lie in (0, 2), got {}",
                cfg.delta
            )));
        }
        if !(0.0..=1.0).contains(&cfg.exploration) {
            return Err(Error::config(format!(
                "exploration probability must lie in [0, 1], got {}",
                cfg.exploration
            )));
        }
        let iota = (2.0 / cfg.delta).ln();
        let ref_threshold = cfg.ref_threshold.unwrap_or_else(|| {
            states as f64 * actions as f64 * (horizon as f64).powi(6) * iota
        });
        let name = match (cfg.bonus, cfg.exploration > 0.0) {
            (BonusKind::None, _) => "epsilon-greedy".to_string(),
            (BonusKind::Hoeffding, _) if plan.num_epochs() == 1 => "q-ucb".to_string(),
            (BonusKind::Freedman, _) if plan.num_epochs() == 1 => "q-ucb-freedman".to_string(),
            (BonusKind::Hoeffding, _) => "restartq-ucb".to_string(),
            (BonusKind::Freedman, _) => "restartq-ucb-freedman".to_string(),
        };
        Ok(Self {
            name,
            schedule: StageSchedule::new(horizon, plan.epoch_len()),
            tables: QTables::new(states, actions, horizon, cfg.optimistic_init),
            cfg,
            plan,
            mask: None,
            iota,
            ref_threshold,
            epoch: 1,
            stats: UpdateStats::default(),
        })
    }

    /// Restricts action choice and maximization to a `[h][s][a]` mask.
    pub fn with_mask(mut self, mask: Option<Vec<bool>>) -> Result<Self> {
        if let Some(m) = &mask {
            let t = &self.tables;
            if m.len() != t.horizon * t.states * t.actions {
                return Err(Error::contract("agent mask shape mismatch"));
            }
        }
        self.mask = mask;
        self.refresh_all_v();
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn tables(&self) -> &QTables {
        &self.tables
    }

    pub fn stats(&self) -> UpdateStats {
        self.stats
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn plan(&self) -> &EpochPlan {
        &self.plan
    }

    pub fn config(&self) -> &QUcbConfig {
        &self.cfg
    }

    #[inline]
    fn valid(&self, h: usize, s: usize, a: usize) -> bool {
        match &self.mask {
            Some(m) => m[self.tables.idx(h, s, a)],
            None => true,
        }
    }

    /// Lowest-indexed valid action maximizing `Q[h][s][.]`.
    pub fn argmax(&self, h: usize, s: usize) -> usize {
        let mut best = None::<(usize, f64)>;
        for a in 0..self.tables.actions {
            if !self.valid(h, s, a) {
                continue;
            }
            let q = self.tables.q(h, s, a);
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((a, q));
            }
        }
        best.map_or(0, |(a, _)| a)
    }

    fn max_q(&self, h: usize, s: usize) -> f64 {
        (0..self.tables.actions)
            .filter(|&a| self.valid(h, s, a))
            .map(|a| self.tables.q(h, s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn refresh_all_v(&mut self) {
        for h in 0..self.tables.horizon {
            for s in 0..self.tables.states {
                let m = self.max_q(h, s);
                self.tables.v[h * self.tables.states + s] = if m.is_finite() { m } else { 0.0 };
            }
        }
    }

    /// Re-initializes every table and accumulator.
    pub fn restart(&mut self) {
        self.tables.reset();
        self.refresh_all_v();
    }

    fn drift(&self) -> Option<f64> {
        self.cfg
            .drift_bonus
            .as_ref()
            .map(|d| d.get(self.epoch - 1).copied().unwrap_or(0.0))
    }

    /// Records one transition; fires the stage update when the visit count
    /// reaches a stage ending time.
    pub fn record(&mut self, h: usize, s: usize, a: usize, reward: f64, s_next: usize) {
        let t = &mut self.tables;
        let i = t.idx(h, s, a);
        let next = (h + 1) * t.states + s_next;
        let v_next = t.v[next];
        t.stage_reward[i] += reward;
        t.stage_next_value[i] += v_next;
        let freedman = self.cfg.bonus == BonusKind::Freedman;
        if freedman {
            let ref_next = t.v_ref[next];
            let adv = v_next - ref_next;
            t.stage_adv[i] += adv;
            t.stage_adv_sq[i] += adv * adv;
            t.ref_sum[i] += ref_next;
            t.ref_sq_sum[i] += ref_next * ref_next;
        }
        t.visits[i] += 1;
        t.stage_visits[i] += 1;
        if self.schedule.is_end(t.visits[i]) {
            self.stage_update(h, s, a);
        }
        if freedman {
            let t = &mut self.tables;
            let hs = h * t.states + s;
            t.state_visits[hs] += 1;
            if !t.ref_learned[hs] && t.state_visits[hs] as f64 >= self.ref_threshold {
                t.v_ref[hs] = t.v[hs];
                t.ref_learned[hs] = true;
                self.stats.references_learned += 1;
            }
        }
    }

    fn stage_update(&mut self, h: usize, s: usize, a: usize) {
        let horizon = self.tables.horizon as f64;
        let iota = self.iota;
        let drift = self.drift();
        let t = &self.tables;
        let i = t.idx(h, s, a);
        let n_stage = t.stage_visits[i];
        let ns = n_stage as f64;
        let mean_reward = t.stage_reward[i] / ns;
        let mean_next = t.stage_next_value[i] / ns;
        let old = t.q[i];

        let candidate = match self.cfg.bonus {
            BonusKind::None => mean_reward + mean_next,
            BonusKind::Hoeffding => {
                mean_reward
                    + mean_next
                    + hoeffding_unchecked(ns, horizon, iota)
                    + 2.0 * drift.unwrap_or(0.0)
            }
            BonusKind::Freedman => {
                let hoeffding = mean_reward
                    + mean_next
                    + hoeffding_unchecked(ns, horizon, iota)
                    + 2.0 * drift.unwrap_or(0.0);
                let sums = FreedmanSums {
                    visits: t.visits[i],
                    stage_visits: n_stage,
                    ref_sum: t.ref_sum[i],
                    ref_sq_sum: t.ref_sq_sum[i],
                    adv_sum: t.stage_adv[i],
                    adv_sq_sum: t.stage_adv_sq[i],
                };
                let n = t.visits[i] as f64;
                let reference = mean_reward
                    + t.ref_sum[i] / n
                    + t.stage_adv[i] / ns
                    + 2.0 * freedman_unchecked(&sums, horizon, iota)
                    + 4.0 * drift.unwrap_or(0.0);
                hoeffding.min(reference)
            }
        };
        let new = if self.cfg.overwrite {
            candidate
        } else {
            candidate.min(old)
        };

        self.stats.stage_updates += 1;
        if new > old {
            self.stats.q_increases += 1;
        }
        if self.schedule.length_ending_at(t.visits[i]) != Some(n_stage) {
            self.stats.stage_len_mismatches += 1;
        }

        let t = &mut self.tables;
        t.q[i] = new;
        t.stage_visits[i] = 0;
        t.stage_reward[i] = 0.0;
        t.stage_next_value[i] = 0.0;
        t.stage_adv[i] = 0.0;
        t.stage_adv_sq[i] = 0.0;
        let best = self.max_q(h, s);
        let states = self.tables.states;
        self.tables.v[h * states + s] = best;
    }
}

impl Agent for RestartQUcb {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn begin_episode(&mut self, m: usize, _rng: &mut dyn RngCore) {
        let epoch = self.plan.epoch_of(m);
        if epoch != self.epoch {
            // a partially filled stage is discarded here
            self.restart();
            self.epoch = epoch;
        }
    }

    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize {
        if self.cfg.exploration > 0.0 && rng.gen::<f64>() < self.cfg.exploration {
            let valid: Vec<usize> = (0..self.tables.actions)
                .filter(|&a| self.valid(h, s, a))
                .collect();
            return valid[rng.gen_range(0..valid.len())];
        }
        self.argmax(h, s)
    }

    fn observe(&mut self, h: usize, s: usize, a: usize, reward: f64, next_state: usize) {
        self.record(h, s, a, reward, next_state);
    }

    fn greedy_policy(&self) -> TabularPolicy {
        let (s_len, h_len) = (self.tables.states, self.tables.horizon);
        let mut pi = TabularPolicy::constant(s_len, h_len, 0);
        for h in 0..h_len {
            for s in 0..s_len {
                pi.set_action(h, s, self.argmax(h, s));
            }
        }
        pi
    }

    fn epoch(&self) -> usize {
        self.epoch
    }

    fn q_tables(&self) -> Option<&QTables> {
        Some(&self.tables)
    }

    fn update_stats(&self) -> Option<UpdateStats> {
        Some(self.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(s: usize, a: usize, h: usize, m: usize, cfg: QUcbConfig) -> RestartQUcb {
        RestartQUcb::new(s, a, h, EpochPlan::single(m), cfg).unwrap()
    }

    #[test]
    fn first_boundary_hand_trace() {
        // iota = ln(2 / delta) = 1
        let cfg = QUcbConfig {
            delta: 2.0 / std::f64::consts::E,
            ..Default::default()
        };
        let mut ag = agent(1, 1, 1, 10, cfg);
        assert!((ag.iota() - 1.0).abs() < 1e-12);
        ag.record(0, 0, 0, 0.5, 0);
        // candidate 0.5 + 0 + 2 = 2.5 exceeds the initial value
        assert_eq!(ag.tables().q(0, 0, 0), 1.0);
        assert_eq!(ag.stats().stage_updates, 1);
        assert_eq!(ag.tables().stage_visits(0, 0, 0), 0);
    }

    #[test]
    fn no_update_before_boundary() {
        let mut ag = agent(2, 2, 3, 100, QUcbConfig::default());
        let before = ag.tables().clone();
        // first stage at H = 3 ends at visit 3
        ag.record(0, 0, 1, 0.0, 1);
        ag.record(0, 0, 1, 0.0, 0);
        assert_eq!(ag.tables().q_values(), before.q_values());
        assert_eq!(ag.stats().stage_updates, 0);
    }

    #[test]
    fn fresh_agent_picks_lowest_action() {
        let mut ag = agent(1, 3, 2, 10, QUcbConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ag.act(0, 0, &mut rng), 0);
        ag.tables.q[0] = 0.2;
        ag.tables.q[1] = 0.7;
        ag.tables.q[2] = 0.1;
        assert_eq!(ag.act(0, 0, &mut rng), 1);
    }

    #[test]
    fn masked_actions_are_skipped() {
        let ag = agent(1, 3, 1, 10, QUcbConfig::default())
            .with_mask(Some(vec![false, true, true]))
            .unwrap();
        assert_eq!(ag.argmax(0, 0), 1);
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let cfg = QUcbConfig {
            bonus: BonusKind::None,
            exploration: 1.0,
            ..Default::default()
        };
        let mut ag = agent(1, 4, 1, 10, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[ag.act(0, 0, &mut rng)] += 1;
        }
        let sd = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn restart_restores_fresh_state() {
        let mut ag = agent(2, 2, 2, 50, QUcbConfig { bonus: BonusKind::Freedman, ..Default::default() });
        let fresh = ag.tables().clone();
        ag.restart();
        assert_eq!(*ag.tables(), fresh);
        for k in 0..40 {
            ag.record(0, k % 2, k % 2, 0.3, (k / 2) % 2);
            ag.record(1, (k / 3) % 2, 1, 0.9, 0);
        }
        assert_ne!(*ag.tables(), fresh);
        ag.restart();
        assert_eq!(*ag.tables(), fresh);
    }

    #[test]
    fn begin_episode_restarts_on_plan() {
        let plan = EpochPlan::new(10, 2).unwrap();
        let mut ag = RestartQUcb::new(1, 1, 1, plan, QUcbConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in 1..=5 {
            ag.begin_episode(m, &mut rng);
            ag.record(0, 0, 0, 0.0, 0);
        }
        assert_eq!(ag.epoch(), 1);
        assert_eq!(ag.tables().visits(0, 0, 0), 5);
        ag.begin_episode(6, &mut rng);
        assert_eq!(ag.epoch(), 2);
        assert_eq!(ag.tables().visits(0, 0, 0), 0);
    }

    #[test]
    fn zero_drift_matches_unknown_budget_rule() {
        let known = QUcbConfig {
            drift_bonus: Some(vec![0.0]),
            ..Default::default()
        };
        let mut a = agent(2, 2, 2, 100, known);
        let mut b = agent(2, 2, 2, 100, QUcbConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let (h, s, act) = (rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..2));
            let r: f64 = rng.gen();
            let nx = rng.gen_range(0..2);
            a.record(h, s, act, r, nx);
            b.record(h, s, act, r, nx);
        }
        assert_eq!(a.tables(), b.tables());
    }

    #[test]
    fn reference_is_learned_at_threshold() {
        let cfg = QUcbConfig {
            bonus: BonusKind::Freedman,
            ref_threshold: Some(4.0),
            ..Default::default()
        };
        let mut ag = agent(1, 2, 1, 100, cfg);
        for k in 0..3 {
            ag.record(0, 0, k % 2, 1.0, 0);
        }
        assert_eq!(ag.tables().v_ref(0, 0), 1.0);
        ag.record(0, 0, 1, 1.0, 0);
        assert_eq!(ag.stats().references_learned, 1);
        assert_eq!(ag.tables().v_ref(0, 0), ag.tables().v(0, 0));
    }

    #[test]
    fn default_reference_threshold() {
        let ag = agent(3, 2, 2, 10, QUcbConfig { delta: 0.5, ..Default::default() });
        let expected = 3.0 * 2.0 * 64.0 * 4f64.ln();
        assert!((ag.ref_threshold - expected).abs() < 1e-9);
    }
}
