//! Exact dynamic programming on snapshots: optimal values, policy evaluation,
//! variation budgets and dynamic-regret accounting.

use std::ops::RangeInclusive;

use rand::RngCore;

use crate::agents::EpochPlan;
use crate::envs::{draw_index, NonstationaryEnv};
use crate::error::{Error, Result};
use crate::model::{MdpSnapshot, TabularPolicy};

/// Optimal values of one snapshot. `V[H] = 0`; masked `Q` entries are 0 and
/// must be skipped via the snapshot mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    states: usize,
    actions: usize,
    horizon: usize,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl ValueTables {
    #[inline]
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.states + s]
    }

    #[inline]
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.states + s) * self.actions + a]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Greedy policy w.r.t. `Q*`, ties broken toward the lowest action index.
    pub fn greedy_policy(&self, snap: &MdpSnapshot) -> TabularPolicy {
        let mut policy = TabularPolicy::constant(self.states, self.horizon, 0);
        for h in 0..self.horizon {
            for s in 0..self.states {
                let mut best: Option<(usize, f64)> = None;
                for a in snap.valid_actions(h, s) {
                    let q = self.q(h, s, a);
                    if best.is_none_or(|(_, b)| q > b) {
                        best = Some((a, q));
                    }
                }
                policy.set_action(h, s, best.map_or(0, |(a, _)| a));
            }
        }
        policy
    }
}

/// Backward induction from `h = H-1` down to 0.
pub fn optimal_values(snap: &MdpSnapshot) -> ValueTables {
    let (s_len, a_len, h_len) = (snap.states(), snap.actions(), snap.horizon());
    let mut v = vec![0.0; (h_len + 1) * s_len];
    let mut q = vec![0.0; h_len * s_len * a_len];
    for h in (0..h_len).rev() {
        let (cur, next) = v.split_at_mut((h + 1) * s_len);
        let next = &next[..s_len];
        for s in 0..s_len {
            let mut best = f64::NEG_INFINITY;
            for a in 0..a_len {
                if !snap.is_valid(h, s, a) {
                    continue;
                }
                let value = snap.reward(h, s, a) + dot(snap.row(h, s, a), next);
                q[(h * s_len + s) * a_len + a] = value;
                best = best.max(value);
            }
            cur[h * s_len + s] = if best.is_finite() { best } else { 0.0 };
        }
    }
    ValueTables {
        states: s_len,
        actions: a_len,
        horizon: h_len,
        v,
        q,
    }
}

/// `V^pi` as an `(H+1) x S` table (row `H` is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValues {
    states: usize,
    v: Vec<f64>,
}

impl PolicyValues {
    #[inline]
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.states + s]
    }
}

pub fn policy_value(snap: &MdpSnapshot, policy: &TabularPolicy) -> Result<PolicyValues> {
    policy.check_against(snap)?;
    let (s_len, h_len) = (snap.states(), snap.horizon());
    let mut v = vec![0.0; (h_len + 1) * s_len];
    for h in (0..h_len).rev() {
        let (cur, next) = v.split_at_mut((h + 1) * s_len);
        let next = &next[..s_len];
        for s in 0..s_len {
            let a = policy.action(h, s);
            cur[h * s_len + s] = snap.reward(h, s, a) + dot(snap.row(h, s, a), next);
        }
    }
    Ok(PolicyValues { states: s_len, v })
}

/// One simulated episode of `policy` from `s1`, returning the reward sum.
pub fn rollout(
    snap: &MdpSnapshot,
    policy: &TabularPolicy,
    s1: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> f64 {
    let mut s = s1;
    let mut total = 0.0;
    for h in 0..snap.horizon() {
        let a = policy.action(h, s);
        total += snap.reward(h, s, a);
        s = draw_index(snap.row(h, s, a), rng);
    }
    total
}

#[inline]
fn dot(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretSeries {
    pub per_episode: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretSeries {
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Exact dynamic regret of one policy per episode, episodes `1..=len`.
pub fn dynamic_regret(
    env: &dyn NonstationaryEnv,
    policies: &[&TabularPolicy],
    initial_states: &[usize],
) -> Result<RegretSeries> {
    if policies.len() != initial_states.len() {
        return Err(Error::contract(format!(
            "{} policies but {} initial states",
            policies.len(),
            initial_states.len()
        )));
    }
    if policies.len() > env.episodes() {
        return Err(Error::contract("more policies than episodes"));
    }
    let mut per_episode = Vec::with_capacity(policies.len());
    let mut cumulative = Vec::with_capacity(policies.len());
    let mut acc = 0.0;
    let mut last: Option<(std::sync::Arc<MdpSnapshot>, ValueTables)> = None;
    for (i, (policy, &s1)) in policies.iter().zip(initial_states).enumerate() {
        let snap = env.snapshot(i + 1);
        // reuse the optimal values while the snapshot is unchanged
        let reuse = matches!(&last, Some((prev, _)) if std::sync::Arc::ptr_eq(prev, &snap));
        if !reuse {
            let values = optimal_values(&snap);
            last = Some((snap.clone(), values));
        }
        let optimal = last.as_ref().expect("set above").1.v(0, s1);
        let achieved = policy_value(&snap, policy)?.v(0, s1);
        let gap = (optimal - achieved).max(0.0);
        acc += gap;
        per_episode.push(gap);
        cumulative.push(acc);
    }
    Ok(RegretSeries {
        per_episode,
        cumulative,
    })
}

/// Per-step sup reward difference and sup L1 transition distance between two
/// snapshots, over `(s, a)` valid in both.
pub fn snapshot_distance(a: &MdpSnapshot, b: &MdpSnapshot) -> (Vec<f64>, Vec<f64>) {
    let h_len = a.horizon();
    let mut dr = vec![0.0; h_len];
    let mut dp = vec![0.0; h_len];
    for h in 0..h_len {
        for s in 0..a.states() {
            for act in 0..a.actions() {
                if !(a.is_valid(h, s, act) && b.is_valid(h, s, act)) {
                    continue;
                }
                dr[h] = f64::max(dr[h], (a.reward(h, s, act) - b.reward(h, s, act)).abs());
                let l1: f64 = a
                    .row(h, s, act)
                    .iter()
                    .zip(b.row(h, s, act))
                    .map(|(x, y)| (x - y).abs())
                    .sum();
                dp[h] = f64::max(dp[h], l1);
            }
        }
    }
    (dr, dp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalBudget {
    pub epoch: usize,
    pub first_episode: usize,
    pub last_episode: usize,
    pub delta_r: f64,
    pub delta_p: f64,
}

impl LocalBudget {
    /// `b_Delta = Delta_r + H * Delta_p` for this epoch.
    pub fn drift_bonus(&self, horizon: usize) -> f64 {
        self.delta_r + horizon as f64 * self.delta_p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub delta_r: f64,
    pub delta_p: f64,
    pub per_step_r: Vec<f64>,
    pub per_step_p: Vec<f64>,
    pub local: Vec<LocalBudget>,
}

impl BudgetReport {
    pub fn total(&self) -> f64 {
        self.delta_r + self.delta_p
    }
}

/// Reward and transition variation over adjacent episode pairs in `range`.
/// With an epoch plan, also reports the per-epoch local budgets (pairs that
/// straddle a restart are left out of the locals).
pub fn variation_budgets(
    env: &dyn NonstationaryEnv,
    range: RangeInclusive<usize>,
    plan: Option<&EpochPlan>,
) -> Result<BudgetReport> {
    let (first, last) = (*range.start(), *range.end());
    if first == 0 || last > env.episodes() || first > last {
        return Err(Error::contract(format!(
            "episode range {first}..={last} outside 1..={}",
            env.episodes()
        )));
    }
    let h_len = env.horizon();
    let mut per_step_r = vec![0.0; h_len];
    let mut per_step_p = vec![0.0; h_len];
    // per-pair totals, indexed by the first episode of the pair
    let mut pair_r = Vec::with_capacity(last - first);
    let mut pair_p = Vec::with_capacity(last - first);
    let mut prev = env.snapshot(first);
    for m in first..last {
        let next = env.snapshot(m + 1);
        let (dr, dp) = if std::sync::Arc::ptr_eq(&prev, &next) {
            (vec![0.0; h_len], vec![0.0; h_len])
        } else {
            snapshot_distance(&prev, &next)
        };
        for h in 0..h_len {
            per_step_r[h] += dr[h];
            per_step_p[h] += dp[h];
        }
        pair_r.push(dr.iter().sum::<f64>());
        pair_p.push(dp.iter().sum::<f64>());
        prev = next;
    }

    let mut local = Vec::new();
    if let Some(plan) = plan {
        for (d, epoch_range) in plan.epochs().enumerate() {
            let lo = (*epoch_range.start()).max(first);
            let hi = (*epoch_range.end()).min(last);
            if lo > hi {
                continue;
            }
            let (mut lr, mut lp) = (0.0, 0.0);
            for m in lo..hi {
                lr += pair_r[m - first];
                lp += pair_p[m - first];
            }
            local.push(LocalBudget {
                epoch: d + 1,
                first_episode: lo,
                last_episode: hi,
                delta_r: lr,
                delta_p: lp,
            });
        }
    }

    Ok(BudgetReport {
        delta_r: per_step_r.iter().sum(),
        delta_p: per_step_p.iter().sum(),
        per_step_r,
        per_step_p,
        local,
    })
}
