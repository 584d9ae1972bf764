//! Two-player team games seen from agent 1 while agent 2 follows a fixed
//! per-episode schedule of deterministic policies.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::NonstationaryEnv;
use crate::error::{Error, Result};
use crate::model::{MdpSnapshot, TabularPolicy, ROW_SUM_TOL};

/// Largest `|Pi_1| * |Pi_2|` that `verify_smoothness` will enumerate.
pub const SMOOTHNESS_PAIR_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TeamModel {
    states: usize,
    actions1: usize,
    actions2: usize,
    horizon: usize,
    /// `[h][s][a1][a2]`
    rewards: Vec<f64>,
    /// `[h][s][a1][a2][s']`
    transitions: Vec<f64>,
}

impl TeamModel {
    pub fn new(
        states: usize,
        actions1: usize,
        actions2: usize,
        horizon: usize,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
    ) -> Result<Self> {
        if states == 0 || actions1 == 0 || actions2 == 0 || horizon == 0 {
            return Err(Error::contract("team dimensions must be positive"));
        }
        let joint = horizon * states * actions1 * actions2;
        if rewards.len() != joint || transitions.len() != joint * states {
            return Err(Error::contract("team table shapes do not match (S, A1, A2, H)"));
        }
        if rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::contract("team rewards must lie in [0, 1]"));
        }
        for row in transitions.chunks(states) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::contract(format!(
                    "team transition row sums to {sum}"
                )));
            }
        }
        Ok(Self {
            states,
            actions1,
            actions2,
            horizon,
            rewards,
            transitions,
        })
    }

    /// Every joint action pays `value` and every row is uniform.
    pub fn constant(states: usize, actions1: usize, actions2: usize, horizon: usize, value: f64) -> Result<Self> {
        let joint = horizon * states * actions1 * actions2;
        Self::new(
            states,
            actions1,
            actions2,
            horizon,
            vec![value; joint],
            vec![1.0 / states as f64; joint * states],
        )
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions1(&self) -> usize {
        self.actions1
    }

    pub fn actions2(&self) -> usize {
        self.actions2
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    fn joint(&self, h: usize, s: usize, a1: usize, a2: usize) -> usize {
        ((h * self.states + s) * self.actions1 + a1) * self.actions2 + a2
    }

    pub fn reward(&self, h: usize, s: usize, a1: usize, a2: usize) -> f64 {
        self.rewards[self.joint(h, s, a1, a2)]
    }

    pub fn row(&self, h: usize, s: usize, a1: usize, a2: usize) -> &[f64] {
        let i = self.joint(h, s, a1, a2) * self.states;
        &self.transitions[i..i + self.states]
    }

    /// Agent 1's MDP when agent 2 plays `pi2`.
    pub fn marginal(&self, pi2: &TabularPolicy) -> MdpSnapshot {
        let mut snap = MdpSnapshot::zeros(self.states, self.actions1, self.horizon);
        for h in 0..self.horizon {
            for s in 0..self.states {
                let a2 = pi2.action(h, s);
                for a1 in 0..self.actions1 {
                    snap.set_reward(h, s, a1, self.reward(h, s, a1, a2));
                    snap.row_mut(h, s, a1).copy_from_slice(self.row(h, s, a1, a2));
                }
            }
        }
        snap
    }

    /// `V^{(pi1, pi2)}` as an `(H+1) x S` table, last row 0.
    pub fn joint_value(&self, pi1: &TabularPolicy, pi2: &TabularPolicy) -> Vec<f64> {
        let s_len = self.states;
        let mut v = vec![0.0; (self.horizon + 1) * s_len];
        for h in (0..self.horizon).rev() {
            for s in 0..s_len {
                let (a1, a2) = (pi1.action(h, s), pi2.action(h, s));
                let next = &v[(h + 1) * s_len..(h + 2) * s_len];
                let ev: f64 = self.row(h, s, a1, a2).iter().zip(next).map(|(p, x)| p * x).sum();
                v[h * s_len + s] = self.reward(h, s, a1, a2) + ev;
            }
        }
        v
    }
}

/// Agent 2's deterministic policy in every episode.
#[derive(Debug, Clone, PartialEq)]
pub struct OpponentSchedule {
    policies: Vec<TabularPolicy>,
}

impl OpponentSchedule {
    pub fn new(policies: Vec<TabularPolicy>) -> Result<Self> {
        let first = policies
            .first()
            .ok_or_else(|| Error::contract("opponent schedule needs at least one episode"))?;
        let (s, h) = (first.states(), first.horizon());
        if policies.iter().any(|p| p.states() != s || p.horizon() != h) {
            return Err(Error::contract("opponent policies must share (S, H)"));
        }
        Ok(Self { policies })
    }

    pub fn constant(policy: TabularPolicy, episodes: usize) -> Result<Self> {
        Self::new(vec![policy; episodes])
    }

    pub fn episodes(&self) -> usize {
        self.policies.len()
    }

    /// Policy of episode `m` (1-based).
    pub fn policy(&self, m: usize) -> &TabularPolicy {
        &self.policies[m - 1]
    }

    pub fn policies(&self) -> &[TabularPolicy] {
        &self.policies
    }
}

/// Number of `(h, s)` pairs on which two policies disagree.
pub fn policy_switches(a: &TabularPolicy, b: &TabularPolicy) -> usize {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .filter(|(x, y)| x != y)
        .count()
}

/// Total switches between consecutive episodes.
pub fn switching_cost(schedule: &OpponentSchedule) -> usize {
    schedule
        .policies
        .windows(2)
        .map(|w| policy_switches(&w[0], &w[1]))
        .sum()
}

/// Agent 1's view of the team game; agent 2's actions are never exposed.
pub struct TeamEnv {
    team: TeamModel,
    /// Snapshot per run of identical consecutive opponent policies.
    snapshots: Vec<Arc<MdpSnapshot>>,
    index: Vec<usize>,
}

pub fn wrap_team(team: TeamModel, schedule: &OpponentSchedule) -> Result<TeamEnv> {
    let first = schedule.policy(1);
    if first.states() != team.states || first.horizon() != team.horizon {
        return Err(Error::contract("opponent schedule does not match the team's (S, H)"));
    }
    if schedule
        .policies
        .iter()
        .any(|p| p.as_slice().iter().any(|&a| a >= team.actions2))
    {
        return Err(Error::contract("opponent schedule uses an invalid action"));
    }
    let mut snapshots = Vec::new();
    let mut index = Vec::with_capacity(schedule.episodes());
    for (m, pi2) in schedule.policies.iter().enumerate() {
        if m == 0 || pi2 != &schedule.policies[m - 1] {
            snapshots.push(Arc::new(team.marginal(pi2)));
        }
        index.push(snapshots.len() - 1);
    }
    Ok(TeamEnv {
        team,
        snapshots,
        index,
    })
}

impl TeamEnv {
    pub fn team(&self) -> &TeamModel {
        &self.team
    }
}

impl NonstationaryEnv for TeamEnv {
    fn name(&self) -> String {
        "team".to_string()
    }

    fn states(&self) -> usize {
        self.team.states
    }

    fn actions(&self) -> usize {
        self.team.actions1
    }

    fn horizon(&self) -> usize {
        self.team.horizon
    }

    fn episodes(&self) -> usize {
        self.index.len()
    }

    fn snapshot(&self, m: usize) -> Arc<MdpSnapshot> {
        Arc::clone(&self.snapshots[self.index[m - 1]])
    }
}

/// A random team game plus an opponent that re-randomizes a few of its
/// `(h, s)` choices every `switch_period` episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeamScenario {
    pub states: usize,
    pub actions1: usize,
    pub actions2: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub switch_period: usize,
    /// `(h, s)` cells changed at every switch.
    pub switch_cells: usize,
    pub seed: u64,
}

impl Default for TeamScenario {
    fn default() -> Self {
        Self {
            states: 3,
            actions1: 2,
            actions2: 2,
            horizon: 3,
            episodes: 2000,
            switch_period: 500,
            switch_cells: 1,
            seed: 0,
        }
    }
}

impl TeamScenario {
    pub fn build(&self) -> Result<(TeamModel, OpponentSchedule)> {
        if self.switch_period == 0 || self.episodes == 0 {
            return Err(Error::config("team scenario needs episodes and switch_period >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let joint = self.horizon * self.states * self.actions1 * self.actions2;
        let rewards: Vec<f64> = (0..joint).map(|_| rng.gen()).collect();
        let mut transitions = Vec::with_capacity(joint * self.states);
        for _ in 0..joint {
            let raw: Vec<f64> = (0..self.states).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            transitions.extend(raw.iter().map(|x| x / total));
        }
        let team = TeamModel::new(
            self.states,
            self.actions1,
            self.actions2,
            self.horizon,
            rewards,
            transitions,
        )?;
        let cells = self.states * self.horizon;
        let actions: Vec<usize> = (0..cells).map(|_| rng.gen_range(0..self.actions2)).collect();
        let mut current = TabularPolicy::new(self.states, self.horizon, actions)?;
        let mut policies = Vec::with_capacity(self.episodes);
        for m in 0..self.episodes {
            if m > 0 && m % self.switch_period == 0 && self.actions2 > 1 {
                for _ in 0..self.switch_cells.min(cells) {
                    let (h, s) = (rng.gen_range(0..self.horizon), rng.gen_range(0..self.states));
                    let shift = rng.gen_range(1..self.actions2);
                    let a = (current.action(h, s) + shift) % self.actions2;
                    current.set_action(h, s, a);
                }
            }
            policies.push(current.clone());
        }
        Ok((team, OpponentSchedule::new(policies)?))
    }
}

/// A `(pi1, pi2, h, s)` that breaks one of the two smoothness inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessWitness {
    pub pi1: TabularPolicy,
    pub pi2: TabularPolicy,
    pub h: usize,
    pub s: usize,
    /// Left- and right-hand side of the broken inequality.
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessReport {
    pub smooth: bool,
    /// The team-optimal pair that certified smoothness, or the one examined
    /// when it failed.
    pub optimal: Option<(TabularPolicy, TabularPolicy)>,
    pub witness: Option<SmoothnessWitness>,
}

fn policy_count(actions: usize, cells: usize) -> Option<u128> {
    (actions as u128).checked_pow(u32::try_from(cells).ok()?)
}

fn decode_policy(mut index: u128, actions: usize, states: usize, horizon: usize) -> TabularPolicy {
    let mut pi = TabularPolicy::constant(states, horizon, 0);
    for h in 0..horizon {
        for s in 0..states {
            pi.set_action(h, s, (index % actions as u128) as usize);
            index /= actions as u128;
        }
    }
    pi
}

/// Exhaustive check over deterministic policies: is there a team-optimal
/// `(pi1*, pi2*)` with `V^{(pi1*, pi2)} >= lambda V^* - mu V^{(pi1, pi2)}` at every
/// `(pi1, pi2, h, s)`? Values are compared with a 1e-9 slack.
pub fn verify_smoothness(team: &TeamModel, lambda: f64, mu: f64) -> Result<SmoothnessReport> {
    const TOL: f64 = 1e-9;
    let cells = team.states * team.horizon;
    let n1 = policy_count(team.actions1, cells);
    let n2 = policy_count(team.actions2, cells);
    let (n1, n2) = match (n1, n2) {
        (Some(a), Some(b)) if a.saturating_mul(b) <= SMOOTHNESS_PAIR_LIMIT => (a, b),
        _ => {
            return Err(Error::contract(format!(
                "smoothness check refused: more than {SMOOTHNESS_PAIR_LIMIT} deterministic policy pairs"
            )))
        }
    };
    let pi1s: Vec<TabularPolicy> = (0..n1)
        .map(|i| decode_policy(i, team.actions1, team.states, team.horizon))
        .collect();
    let pi2s: Vec<TabularPolicy> = (0..n2)
        .map(|i| decode_policy(i, team.actions2, team.states, team.horizon))
        .collect();
    let s_len = team.states;
    let table = |v: &[f64]| v[..team.horizon * s_len].to_vec();

    // pointwise team optimum over all joint deterministic policies
    let mut best = vec![f64::NEG_INFINITY; team.horizon * s_len];
    let mut values = Vec::with_capacity(pi1s.len() * pi2s.len());
    for p2 in &pi2s {
        for p1 in &pi1s {
            let v = table(&team.joint_value(p1, p2));
            for (b, x) in best.iter_mut().zip(&v) {
                *b = b.max(*x);
            }
            values.push(v);
        }
    }
    let at = |i1: usize, i2: usize| &values[i2 * pi1s.len() + i1];

    let mut candidates = Vec::new();
    for i2 in 0..pi2s.len() {
        for i1 in 0..pi1s.len() {
            if at(i1, i2).iter().zip(&best).all(|(v, b)| *v >= b - TOL) {
                candidates.push((i1, i2));
            }
        }
    }

    let mut first_witness = None;
    for &(c1, c2) in &candidates {
        let v_star = at(c1, c2);
        let mut witness = None;
        'outer: for i2 in 0..pi2s.len() {
            let deviation = at(c1, i2);
            for i1 in 0..pi1s.len() {
                let v = at(i1, i2);
                for k in 0..v.len() {
                    let rhs = lambda * v_star[k] - mu * v[k];
                    if deviation[k] < rhs - TOL {
                        witness = Some(SmoothnessWitness {
                            pi1: pi1s[i1].clone(),
                            pi2: pi2s[i2].clone(),
                            h: k / s_len,
                            s: k % s_len,
                            lhs: deviation[k],
                            rhs,
                        });
                        break 'outer;
                    }
                }
            }
        }
        match witness {
            None => {
                return Ok(SmoothnessReport {
                    smooth: true,
                    optimal: Some((pi1s[c1].clone(), pi2s[c2].clone())),
                    witness: None,
                })
            }
            Some(w) => {
                if first_witness.is_none() {
                    first_witness = Some(((c1, c2), w));
                }
            }
        }
    }
    let (optimal, witness) = match first_witness {
        Some(((c1, c2), w)) => (Some((pi1s[c1].clone(), pi2s[c2].clone())), Some(w)),
        None => (None, None),
    };
    Ok(SmoothnessReport {
        smooth: false,
        optimal,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::variation_budgets;

    fn policy(states: usize, horizon: usize, actions: &[usize]) -> TabularPolicy {
        TabularPolicy::new(states, horizon, actions.to_vec()).unwrap()
    }

    /// One state, agent 2's action 0 pays 1 and action 1 pays 0.
    fn spoiler(horizon: usize) -> TeamModel {
        let mut r = Vec::new();
        for _ in 0..horizon {
            for _a1 in 0..2 {
                r.extend([1.0, 0.0]);
            }
        }
        TeamModel::new(1, 2, 2, horizon, r, vec![1.0; horizon * 4]).unwrap()
    }

    #[test]
    fn switching_cost_counts() {
        let a = policy(2, 2, &[0, 0, 0, 0]);
        let b = policy(2, 2, &[1, 0, 0, 1]);
        assert_eq!(switching_cost(&OpponentSchedule::constant(a.clone(), 5).unwrap()), 0);
        assert_eq!(switching_cost(&OpponentSchedule::new(vec![a.clone(), b.clone()]).unwrap()), 2);
        let c = policy(2, 2, &[1, 0, 0, 0]);
        let flipping: Vec<_> = (0..7).map(|m| if m % 2 == 0 { a.clone() } else { c.clone() }).collect();
        assert_eq!(switching_cost(&OpponentSchedule::new(flipping).unwrap()), 6);
    }

    #[test]
    fn constant_opponent_is_stationary() {
        let team = spoiler(2);
        let sched = OpponentSchedule::constant(policy(1, 2, &[0, 1]), 4).unwrap();
        let env = wrap_team(team, &sched).unwrap();
        let rep = variation_budgets(&env, 1..=4, None).unwrap();
        assert_eq!(rep.total(), 0.0);
        assert_eq!(env.snapshot(1).reward(1, 0, 0), 0.0);
    }

    #[test]
    fn single_switch_budget() {
        let team = spoiler(2);
        let sched = OpponentSchedule::new(vec![
            policy(1, 2, &[0, 0]),
            policy(1, 2, &[0, 0]),
            policy(1, 2, &[1, 0]),
        ])
        .unwrap();
        let env = wrap_team(team, &sched).unwrap();
        let rep = variation_budgets(&env, 1..=3, None).unwrap();
        // the flip at step 0 moves every reward at (0, 0) by 1; rows are point masses
        assert_eq!(rep.delta_r, 1.0);
        assert_eq!(rep.delta_p, 0.0);
    }

    #[test]
    fn opponent_free_team_ignores_schedule() {
        let team = TeamModel::constant(2, 2, 3, 2, 0.4).unwrap();
        let a = wrap_team(team.clone(), &OpponentSchedule::constant(policy(2, 2, &[0; 4]), 2).unwrap()).unwrap();
        let b = wrap_team(
            team,
            &OpponentSchedule::new(vec![policy(2, 2, &[2, 1, 0, 2]), policy(2, 2, &[1; 4])]).unwrap(),
        )
        .unwrap();
        for m in 1..=2 {
            assert_eq!(*a.snapshot(m), *b.snapshot(m));
        }
    }

    #[test]
    fn smoothness_examples() {
        let flat = TeamModel::constant(2, 2, 2, 2, 0.5).unwrap();
        assert!(verify_smoothness(&flat, 1.0, 0.0).unwrap().smooth);
        assert!(verify_smoothness(&spoiler(2), 0.0, 0.0).unwrap().smooth);
        let rep = verify_smoothness(&spoiler(2), 1.0, 0.0).unwrap();
        assert!(!rep.smooth);
        let w = rep.witness.unwrap();
        assert!(w.lhs < w.rhs);
        assert_eq!(w.rhs, 2.0);
    }

    #[test]
    fn scenario_is_seeded() {
        let sc = TeamScenario {
            episodes: 40,
            switch_period: 10,
            ..Default::default()
        };
        let (t1, s1) = sc.build().unwrap();
        let (t2, s2) = sc.build().unwrap();
        assert_eq!((t1, &s1), (t2, &s2));
        // the same cell can be hit twice in one switch, so at most one per switch
        assert!(switching_cost(&s1) <= 3);
        let env = wrap_team(TeamScenario::default().build().unwrap().0, &s1).unwrap();
        assert!(crate::model::validate_snapshot(&env.snapshot(1)).is_empty());
    }

    #[test]
    fn smoothness_guard() {
        // 2^(3*4) policies each, 2^24 pairs
        let big = TeamModel::constant(4, 2, 2, 3, 0.1).unwrap();
        assert!(matches!(verify_smoothness(&big, 1.0, 0.0), Err(Error::Contract(_))));
    }
}
