#![allow(dead_code)]

use rand::{Rng, RngCore};

use nsrl::agents::{Agent, QTables, UpdateStats};
use nsrl::model::{MdpSnapshot, TabularPolicy};

/// Uniform rewards in [0, 1] and normalized uniform transition rows.
pub fn random_snapshot(rng: &mut impl Rng, states: usize, actions: usize, horizon: usize) -> MdpSnapshot {
    let mut snap = MdpSnapshot::zeros(states, actions, horizon);
    for h in 0..horizon {
        for s in 0..states {
            for a in 0..actions {
                snap.set_reward(h, s, a, rng.gen());
                let row = snap.row_mut(h, s, a);
                for p in row.iter_mut() {
                    *p = rng.gen::<f64>() + 1e-3;
                }
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
            }
        }
    }
    snap
}

/// Moves every reward by at most `scale` (clipped to [0, 1]) and mixes each
/// transition row with a random row using weight `scale`.
pub fn perturb(snap: &MdpSnapshot, scale: f64, rng: &mut impl Rng) -> MdpSnapshot {
    let mut out = snap.clone();
    let noise = random_snapshot(rng, snap.states(), snap.actions(), snap.horizon());
    for h in 0..snap.horizon() {
        for s in 0..snap.states() {
            for a in 0..snap.actions() {
                let r = snap.reward(h, s, a) + scale * (2.0 * rng.gen::<f64>() - 1.0);
                out.set_reward(h, s, a, r.clamp(0.0, 1.0));
                let mix: Vec<f64> = snap
                    .row(h, s, a)
                    .iter()
                    .zip(noise.row(h, s, a))
                    .map(|(p, q)| (1.0 - scale) * p + scale * q)
                    .collect();
                out.row_mut(h, s, a).copy_from_slice(&mix);
            }
        }
    }
    out.renormalize_rows();
    out
}

/// A drifting sequence of `episodes` snapshots. Each instance either random
/// walks every episode or jumps at a few random change points.
pub fn random_drift(
    rng: &mut impl Rng,
    states: usize,
    actions: usize,
    horizon: usize,
    episodes: usize,
    scale: f64,
) -> Vec<MdpSnapshot> {
    let mut cur = random_snapshot(rng, states, actions, horizon);
    let gradual = rng.gen_bool(0.5);
    let jumps: Vec<usize> = (0..3).map(|_| rng.gen_range(2..=episodes.max(2))).collect();
    let mut out = Vec::with_capacity(episodes);
    for m in 1..=episodes {
        if m > 1 && gradual {
            cur = perturb(&cur, scale / episodes as f64, rng);
        } else if jumps.contains(&m) {
            cur = perturb(&cur, scale, rng);
        }
        out.push(cur.clone());
    }
    out
}

pub fn random_policy(rng: &mut impl Rng, snap: &MdpSnapshot) -> TabularPolicy {
    let mut pi = TabularPolicy::constant(snap.states(), snap.horizon(), 0);
    for h in 0..snap.horizon() {
        for s in 0..snap.states() {
            let valid: Vec<usize> = snap.valid_actions(h, s).collect();
            pi.set_action(h, s, valid[rng.gen_range(0..valid.len())]);
        }
    }
    pi
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Wraps an agent and counts stored Q entries that grow within an epoch,
/// by comparing full table copies after every update.
pub struct MonotoneAudit<A = Box<dyn Agent>> {
    pub inner: A,
    last: Option<(usize, Vec<f64>)>,
    pub checks: usize,
    pub violations: usize,
}

impl<A: Agent> MonotoneAudit<A> {
    pub fn new(inner: A) -> Self {
        Self {
            inner,
            last: None,
            checks: 0,
            violations: 0,
        }
    }

    fn audit(&mut self) {
        let epoch = self.inner.epoch();
        let Some(q) = self.inner.q_tables().map(|t| t.q_values().to_vec()) else {
            return;
        };
        if let Some((e, prev)) = &self.last {
            if *e == epoch && prev.len() == q.len() {
                self.checks += 1;
                self.violations += prev.iter().zip(&q).filter(|(p, n)| n > p).count();
            }
        }
        self.last = Some((epoch, q));
    }
}

impl<A: Agent> Agent for MonotoneAudit<A> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn begin_episode(&mut self, m: usize, rng: &mut dyn RngCore) {
        self.inner.begin_episode(m, rng);
        self.audit();
    }

    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize {
        self.inner.act(h, s, rng)
    }

    fn observe(&mut self, h: usize, s: usize, a: usize, reward: f64, next_state: usize) {
        self.inner.observe(h, s, a, reward, next_state);
        self.audit();
    }

    fn end_episode(&mut self, m: usize, episode_reward: f64) {
        self.inner.end_episode(m, episode_reward);
    }

    fn greedy_policy(&self) -> TabularPolicy {
        self.inner.greedy_policy()
    }

    fn epoch(&self) -> usize {
        self.inner.epoch()
    }

    fn arm(&self) -> Option<usize> {
        self.inner.arm()
    }

    fn closed_phase_reward(&self) -> Option<f64> {
        self.inner.closed_phase_reward()
    }

    fn q_tables(&self) -> Option<&QTables> {
        self.inner.q_tables()
    }

    fn update_stats(&self) -> Option<UpdateStats> {
        self.inner.update_stats()
    }

    fn take_error(&mut self) -> Option<nsrl::Error> {
        self.inner.take_error()
    }
}
