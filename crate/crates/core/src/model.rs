//! Shared data model: episode grids, per-episode MDP snapshots, deterministic
//! tabular policies and run records.
//!
//! Indexing conventions used throughout the crate: episodes are 1-based
//! (`1..=M`), steps are 0-based (`0..H`), states and actions are 0-based.

use std::fmt;

use crate::error::{Error, Result};

/// Row-sum tolerance for transition probabilities.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeGrid {
    pub episodes: usize,
    pub horizon: usize,
}

impl EpisodeGrid {
    pub fn new(episodes: usize, horizon: usize) -> Result<Self> {
        if episodes == 0 || horizon == 0 {
            return Err(Error::contract(format!(
                "episode grid needs M >= 1 and H >= 1, got M={episodes}, H={horizon}"
            )));
        }
        Ok(Self { episodes, horizon })
    }

    /// Total number of steps `T = M * H`.
    pub fn total_steps(&self) -> usize {
        self.episodes * self.horizon
    }
}

/// One episode's full model.
///
/// `transitions` is laid out as `[h][s][a][s']`, `rewards` and `mask` as
/// `[h][s][a]`. A `None` mask means every action is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSnapshot {
    states: usize,
    actions: usize,
    horizon: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl MdpSnapshot {
    /// Builds a snapshot from flat tables. Only shapes are checked here; use
    /// [`validate_snapshot`] for the probabilistic invariants.
    pub fn new(
        states: usize,
        actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(Error::contract("snapshot dimensions must be positive"));
        }
        let sa = horizon * states * actions;
        if transitions.len() != sa * states {
            return Err(Error::contract(format!(
                "transition table has {} entries, expected {}",
                transitions.len(),
                sa * states
            )));
        }
        if rewards.len() != sa {
            return Err(Error::contract(format!(
                "reward table has {} entries, expected {sa}",
                rewards.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != sa {
                return Err(Error::contract(format!(
                    "mask has {} entries, expected {sa}",
                    m.len()
                )));
            }
        }
        Ok(Self {
            states,
            actions,
            horizon,
            transitions,
            rewards,
            mask,
        })
    }

    /// A snapshot with all-zero rewards and every row a point mass on state 0.
    pub fn zeros(states: usize, actions: usize, horizon: usize) -> Self {
        let sa = horizon * states * actions;
        let mut transitions = vec![0.0; sa * states];
        for row in transitions.chunks_mut(states) {
            row[0] = 1.0;
        }
        Self {
            states,
            actions,
            horizon,
            transitions,
            rewards: vec![0.0; sa],
            mask: None,
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub(crate) fn sa_index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    /// Next-state distribution `P[h][s][a][.]`.
    #[inline]
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.sa_index(h, s, a) * self.states;
        &self.transitions[start..start + self.states]
    }

    #[inline]
    pub fn row_mut(&mut self, h: usize, s: usize, a: usize) -> &mut [f64] {
        let start = self.sa_index(h, s, a) * self.states;
        &mut self.transitions[start..start + self.states]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.sa_index(h, s, a)]
    }

    pub fn set_reward(&mut self, h: usize, s: usize, a: usize, value: f64) {
        let i = self.sa_index(h, s, a);
        self.rewards[i] = value;
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn set_mask(&mut self, mask: Option<Vec<bool>>) -> Result<()> {
        if let Some(m) = &mask {
            if m.len() != self.rewards.len() {
                return Err(Error::contract("mask shape mismatch"));
            }
        }
        self.mask = mask;
        Ok(())
    }

    #[inline]
    pub fn is_valid(&self, h: usize, s: usize, a: usize) -> bool {
        match &self.mask {
            Some(m) => m[self.sa_index(h, s, a)],
            None => true,
        }
    }

    pub fn valid_actions(&self, h: usize, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.actions).filter(move |&a| self.is_valid(h, s, a))
    }

    /// Rescales every valid row to sum to one. Rows with zero mass are left
    /// alone so that validation still reports them.
    pub fn renormalize_rows(&mut self) {
        for h in 0..self.horizon {
            for s in 0..self.states {
                for a in 0..self.actions {
                    let row = self.row_mut(h, s, a);
                    let total: f64 = row.iter().sum();
                    if total > 0.0 && total.is_finite() {
                        row.iter_mut().for_each(|p| *p /= total);
                    }
                }
            }
        }
    }

    /// Same shape and support, checks only numeric closeness.
    pub fn approx_eq(&self, other: &MdpSnapshot, tol: f64) -> bool {
        self.states == other.states
            && self.actions == other.actions
            && self.horizon == other.horizon
            && self.mask == other.mask
            && self
                .transitions
                .iter()
                .zip(&other.transitions)
                .all(|(x, y)| (x - y).abs() <= tol)
            && self
                .rewards
                .iter()
                .zip(&other.rewards)
                .all(|(x, y)| (x - y).abs() <= tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    RowSum(f64),
    NegativeProbability(f64),
    RewardRange(f64),
    NonFinite,
    NoValidAction,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::RowSum(sum) => write!(f, "row-sum ({sum})"),
            ViolationKind::NegativeProbability(p) => write!(f, "negative-probability ({p})"),
            ViolationKind::RewardRange(r) => write!(f, "reward-range ({r})"),
            ViolationKind::NonFinite => write!(f, "non-finite"),
            ViolationKind::NoValidAction => write!(f, "no-valid-action"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub step: usize,
    pub state: usize,
    /// `None` for per-state violations such as an empty action set.
    pub action: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.action {
            Some(a) => write!(f, "(h={}, s={}, a={}): {}", self.step, self.state, a, self.kind),
            None => write!(f, "(h={}, s={}): {}", self.step, self.state, self.kind),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every snapshot invariant and lists each violation found.
pub fn validate_snapshot(snap: &MdpSnapshot) -> ValidationReport {
    let mut violations = Vec::new();
    for h in 0..snap.horizon {
        for s in 0..snap.states {
            let mut any_valid = false;
            for a in 0..snap.actions {
                if !snap.is_valid(h, s, a) {
                    continue;
                }
                any_valid = true;
                let mut push = |kind| {
                    violations.push(Violation {
                        step: h,
                        state: s,
                        action: Some(a),
                        kind,
                    })
                };
                let r = snap.reward(h, s, a);
                if !r.is_finite() {
                    push(ViolationKind::NonFinite);
                } else if !(0.0..=1.0).contains(&r) {
                    push(ViolationKind::RewardRange(r));
                }
                let row = snap.row(h, s, a);
                if row.iter().any(|p| !p.is_finite()) {
                    push(ViolationKind::NonFinite);
                    continue;
                }
                if let Some(&p) = row.iter().find(|&&p| p < 0.0) {
                    push(ViolationKind::NegativeProbability(p));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    push(ViolationKind::RowSum(sum));
                }
            }
            if !any_valid {
                violations.push(Violation {
                    step: h,
                    state: s,
                    action: None,
                    kind: ViolationKind::NoValidAction,
                });
            }
        }
    }
    ValidationReport { violations }
}

/// Deterministic policy `pi[h][s]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TabularPolicy {
    states: usize,
    horizon: usize,
    actions: Vec<usize>,
}

impl TabularPolicy {
    pub fn new(states: usize, horizon: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != states * horizon {
            return Err(Error::contract(format!(
                "policy has {} entries, expected {}",
                actions.len(),
                states * horizon
            )));
        }
        Ok(Self {
            states,
            horizon,
            actions,
        })
    }

    pub fn constant(states: usize, horizon: usize, action: usize) -> Self {
        Self {
            states,
            horizon,
            actions: vec![action; states * horizon],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.states + s]
    }

    pub fn set_action(&mut self, h: usize, s: usize, a: usize) {
        self.actions[h * self.states + s] = a;
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.actions
    }

    /// Fails if the policy's shape differs from `snap` or it picks a masked action.
    pub fn check_against(&self, snap: &MdpSnapshot) -> Result<()> {
        if self.states != snap.states() || self.horizon != snap.horizon() {
            return Err(Error::contract("policy shape does not match snapshot"));
        }
        for h in 0..self.horizon {
            for s in 0..self.states {
                let a = self.action(h, s);
                if a >= snap.actions() || !snap.is_valid(h, s, a) {
                    return Err(Error::contract(format!(
                        "policy picks invalid action {a} at (h={h}, s={s})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub initial_state: usize,
    pub reward: f64,
    pub cumulative_reward: f64,
    pub epoch: usize,
    /// Meta-bandit arm in force during the episode (Double-Restart runs only).
    pub arm: Option<usize>,
    /// Summed reward of the meta-bandit phase that ended with this episode.
    pub phase_reward: Option<f64>,
    /// Greedy policy the agent held at the start of the episode.
    pub policy: Option<TabularPolicy>,
    /// Per-step observed sales (censored demand), inventory envs only.
    pub sales: Option<Vec<usize>>,
    /// Per-step next states, recorded alongside `sales`.
    pub next_states: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    pub agent: String,
    pub env: String,
    pub records: Vec<EpisodeRecord>,
}

impl RunTrace {
    pub fn new(seed: u64, agent: impl Into<String>, env: impl Into<String>) -> Self {
        Self {
            seed,
            agent: agent.into(),
            env: env.into(),
            records: Vec::new(),
        }
    }

    /// Appends an episode; the episode index and cumulative reward are derived.
    pub fn push(&mut self, initial_state: usize, reward: f64, epoch: usize) -> &mut EpisodeRecord {
        let cumulative = self.records.last().map_or(0.0, |r| r.cumulative_reward) + reward;
        let episode = self.records.len() + 1;
        self.records.push(EpisodeRecord {
            episode,
            initial_state,
            reward,
            cumulative_reward: cumulative,
            epoch,
            arm: None,
            phase_reward: None,
            policy: None,
            sales: None,
            next_states: None,
        });
        self.records.last_mut().expect("just pushed")
    }

    pub fn final_cumulative_reward(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_reward)
    }

    /// All recorded policies, if every episode has one.
    pub fn policies(&self) -> Option<Vec<&TabularPolicy>> {
        self.records.iter().map(|r| r.policy.as_ref()).collect()
    }

    pub fn initial_states(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.initial_state).collect()
    }
}
