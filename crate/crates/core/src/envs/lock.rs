//! Bidirectional diabolical combination lock with abrupt or gradual drift.
//!
//! Layout for horizon `H`: state 0 is the start state (only occupied at step
//! 0), states `1..H` are path 0 at depths `1..H-1`, states `H..2H-1` are path 1,
//! and the last state is the sink. `S = 2(H-1) + 2`.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_step_with, NonstationaryEnv, RewardNoise, Transition};
use crate::error::{Error, Result};
use crate::model::MdpSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LockVariation {
    None,
    /// Swap the two endpoint rewards every `period` episodes.
    Abrupt { period: usize },
    /// Linearly move the start-state routing from `(p, 1-p)` to `(1-p, p)`.
    Gradual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LockConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub actions: usize,
    pub success_prob: f64,
    /// Per-step sink reward; defaults to `1 / (8H)` when not set.
    pub sink_reward: Option<f64>,
    pub good_reward: f64,
    pub bad_reward: f64,
    pub variation: LockVariation,
    pub seed: u64,
    pub bernoulli_rewards: bool,
}

impl Default for LockConfig {
    fn default() -> Self {
        Self {
            episodes: 5000,
            horizon: 5,
            actions: 2,
            success_prob: 0.98,
            sink_reward: None,
            good_reward: 1.0,
            bad_reward: 0.25,
            variation: LockVariation::Abrupt { period: 1000 },
            seed: 0,
            bernoulli_rewards: false,
        }
    }
}

impl LockConfig {
    pub fn sink_reward(&self) -> f64 {
        self.sink_reward
            .unwrap_or_else(|| 1.0 / (8.0 * self.horizon as f64))
    }

    pub fn check(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::config(format!(
                "combination lock needs H >= 2, got {}",
                self.horizon
            )));
        }
        if self.episodes == 0 || self.actions == 0 {
            return Err(Error::config("combination lock needs M >= 1 and A >= 1"));
        }
        if !(self.success_prob > 0.0 && self.success_prob <= 1.0) {
            return Err(Error::config(format!(
                "success_prob must be in (0, 1], got {}",
                self.success_prob
            )));
        }
        let sink = self.sink_reward();
        if !(0.0..=self.good_reward).contains(&sink)
            || !(0.0..=self.good_reward).contains(&self.bad_reward)
            || self.good_reward > 1.0
        {
            return Err(Error::config(
                "lock rewards must satisfy 0 <= sink, bad <= good <= 1",
            ));
        }
        if let LockVariation::Abrupt { period } = self.variation {
            if period == 0 || period > self.episodes {
                return Err(Error::config(format!(
                    "abrupt period must lie in [1, M], got {period}"
                )));
            }
        }
        Ok(())
    }
}

/// State indices of a lock with horizon `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockLayout {
    pub horizon: usize,
}

impl LockLayout {
    pub fn states(&self) -> usize {
        2 * (self.horizon - 1) + 2
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn sink(&self) -> usize {
        self.states() - 1
    }

    /// State of `path` (0 or 1) at `depth` in `1..H`.
    pub fn path_state(&self, path: usize, depth: usize) -> usize {
        debug_assert!(path < 2 && depth >= 1 && depth < self.horizon);
        1 + path * (self.horizon - 1) + (depth - 1)
    }

    /// Inverse of [`path_state`](Self::path_state).
    pub fn locate(&self, s: usize) -> Option<(usize, usize)> {
        if s == 0 || s >= self.sink() {
            return None;
        }
        let k = s - 1;
        Some((k / (self.horizon - 1), k % (self.horizon - 1) + 1))
    }
}

#[derive(Debug)]
pub struct CombinationLock {
    cfg: LockConfig,
    layout: LockLayout,
    /// `correct[path][depth]`, entry 0 unused.
    correct: [Vec<usize>; 2],
    noise: RewardNoise,
    /// Pre-built snapshots for the piecewise-constant variations.
    cached: Vec<Arc<MdpSnapshot>>,
}

impl CombinationLock {
    pub fn new(cfg: LockConfig) -> Result<Self> {
        cfg.check()?;
        let layout = LockLayout {
            horizon: cfg.horizon,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut draw_path = || {
            let mut v = vec![0; cfg.horizon];
            for d in v.iter_mut().skip(1) {
                *d = rng.gen_range(0..cfg.actions);
            }
            v
        };
        let correct = [draw_path(), draw_path()];
        let noise = if cfg.bernoulli_rewards {
            RewardNoise::Bernoulli
        } else {
            RewardNoise::Deterministic
        };
        let mut lock = Self {
            cfg,
            layout,
            correct,
            noise,
            cached: Vec::new(),
        };
        lock.cached = match lock.cfg.variation {
            LockVariation::None => vec![Arc::new(lock.build(false, lock.cfg.success_prob))],
            LockVariation::Abrupt { .. } => vec![
                Arc::new(lock.build(false, lock.cfg.success_prob)),
                Arc::new(lock.build(true, lock.cfg.success_prob)),
            ],
            LockVariation::Gradual => Vec::new(),
        };
        Ok(lock)
    }

    pub fn config(&self) -> &LockConfig {
        &self.cfg
    }

    pub fn layout(&self) -> LockLayout {
        self.layout
    }

    /// The action that advances along `path` at `depth` (`1..H-1`).
    pub fn correct_action(&self, path: usize, depth: usize) -> usize {
        self.correct[path][depth]
    }

    /// Whether the endpoint rewards are swapped in episode `m`.
    pub fn swapped(&self, m: usize) -> bool {
        match self.cfg.variation {
            LockVariation::Abrupt { period } => ((m - 1) / period) % 2 == 1,
            _ => false,
        }
    }

    /// Probability that an action at the start state reaches its own path.
    pub fn routing_prob(&self, m: usize) -> f64 {
        let p = self.cfg.success_prob;
        match self.cfg.variation {
            LockVariation::Gradual if self.cfg.episodes > 1 => {
                let frac = (m - 1) as f64 / (self.cfg.episodes - 1) as f64;
                p - (2.0 * p - 1.0) * frac
            }
            _ => p,
        }
    }

    fn build(&self, swapped: bool, routing: f64) -> MdpSnapshot {
        let h_len = self.cfg.horizon;
        let a_len = self.cfg.actions;
        let layout = self.layout;
        let s_len = layout.states();
        let sink = layout.sink();
        let sink_reward = self.cfg.sink_reward();
        let p = self.cfg.success_prob;
        let (end0, end1) = if swapped {
            (self.cfg.bad_reward, self.cfg.good_reward)
        } else {
            (self.cfg.good_reward, self.cfg.bad_reward)
        };

        let mut snap = MdpSnapshot::zeros(s_len, a_len, h_len);
        for h in 0..h_len {
            for s in 0..s_len {
                for a in 0..a_len {
                    let row = snap.row_mut(h, s, a);
                    row.fill(0.0);
                    let mut reward = 0.0;
                    if s == sink {
                        row[sink] = 1.0;
                        reward = sink_reward;
                    } else if s == layout.start() {
                        if h == 0 && h_len > 1 {
                            let own = a % 2;
                            row[layout.path_state(own, 1)] = routing;
                            row[layout.path_state(1 - own, 1)] += 1.0 - routing;
                        } else {
                            row[sink] = 1.0;
                        }
                    } else {
                        let (path, depth) = layout.locate(s).expect("path state");
                        if depth != h {
                            // off-schedule, never reached
                            row[sink] = 1.0;
                        } else if depth == h_len - 1 {
                            row[sink] = 1.0;
                            reward = if path == 0 { end0 } else { end1 };
                        } else if a == self.correct[path][depth] {
                            row[layout.path_state(path, depth + 1)] = p;
                            row[sink] += 1.0 - p;
                        } else {
                            row[sink] = 1.0;
                            reward = sink_reward;
                        }
                    }
                    snap.set_reward(h, s, a, reward);
                }
            }
        }
        snap.renormalize_rows();
        snap
    }
}

impl NonstationaryEnv for CombinationLock {
    fn name(&self) -> String {
        let kind = match self.cfg.variation {
            LockVariation::None => "stationary",
            LockVariation::Abrupt { .. } => "abrupt",
            LockVariation::Gradual => "gradual",
        };
        format!("lock-{kind}")
    }

    fn states(&self) -> usize {
        self.layout.states()
    }

    fn actions(&self) -> usize {
        self.cfg.actions
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn episodes(&self) -> usize {
        self.cfg.episodes
    }

    fn snapshot(&self, m: usize) -> Arc<MdpSnapshot> {
        match self.cfg.variation {
            LockVariation::None => self.cached[0].clone(),
            LockVariation::Abrupt { .. } => self.cached[usize::from(self.swapped(m))].clone(),
            LockVariation::Gradual => Arc::new(self.build(false, self.routing_prob(m))),
        }
    }

    fn step(
        &self,
        snap: &MdpSnapshot,
        _m: usize,
        h: usize,
        s: usize,
        a: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Transition> {
        let (reward, next_state) = sample_step_with(snap, h, s, a, self.noise, rng)?;
        Ok(Transition {
            reward,
            next_state,
            sales: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::sample_step;
    use crate::model::validate_snapshot;

    fn appendix_cfg(variation: LockVariation) -> LockConfig {
        LockConfig {
            variation,
            ..LockConfig::default()
        }
    }

    #[test]
    fn layout_has_ten_states_at_h5() {
        let lock = CombinationLock::new(appendix_cfg(LockVariation::Abrupt { period: 1000 })).unwrap();
        assert_eq!(lock.states(), 10);
        assert_eq!(lock.layout().sink(), 9);
        for s in 1..9 {
            let (p, d) = lock.layout().locate(s).unwrap();
            assert_eq!(lock.layout().path_state(p, d), s);
        }
    }

    #[test]
    fn abrupt_swaps_at_block_starts() {
        let lock = CombinationLock::new(appendix_cfg(LockVariation::Abrupt { period: 1000 })).unwrap();
        let swaps: Vec<usize> = (2..=5000)
            .filter(|&m| lock.swapped(m) != lock.swapped(m - 1))
            .collect();
        assert_eq!(swaps, vec![1001, 2001, 3001, 4001]);
        let end0 = lock.layout().path_state(0, 4);
        assert_eq!(lock.snapshot(1).reward(4, end0, 0), 1.0);
        assert_eq!(lock.snapshot(1001).reward(4, end0, 0), 0.25);
        // same block, same snapshot
        assert_eq!(*lock.snapshot(1001), *lock.snapshot(2000));
    }

    #[test]
    fn stationary_lock_is_constant() {
        let lock = CombinationLock::new(appendix_cfg(LockVariation::None)).unwrap();
        assert_eq!(*lock.snapshot(1), *lock.snapshot(5000));
    }

    #[test]
    fn gradual_midpoint_routing() {
        let lock = CombinationLock::new(appendix_cfg(LockVariation::Gradual)).unwrap();
        let expected = 0.98 - 0.96 * 2500.0 / 4999.0;
        assert!((lock.routing_prob(2501) - expected).abs() < 1e-15);
        assert!((lock.routing_prob(2501) - 0.5).abs() < 1e-3);
        assert!((lock.routing_prob(1) - 0.98).abs() < 1e-15);
        assert!((lock.routing_prob(5000) - 0.02).abs() < 1e-12);
        let snap = lock.snapshot(2501);
        let p1 = lock.layout().path_state(0, 1);
        assert!((snap.row(0, 0, 0)[p1] - expected).abs() < 1e-12);
    }

    #[test]
    fn gradual_only_moves_start_rows() {
        let lock = CombinationLock::new(appendix_cfg(LockVariation::Gradual)).unwrap();
        let (a, b) = (lock.snapshot(1), lock.snapshot(3777));
        for h in 0..5 {
            for s in 0..10 {
                for act in 0..2 {
                    let same = a.row(h, s, act) == b.row(h, s, act);
                    assert_eq!(same, !(h == 0 && s == 0), "h={h} s={s} a={act}");
                    assert_eq!(a.reward(h, s, act), b.reward(h, s, act));
                }
            }
        }
    }

    #[test]
    fn snapshots_validate() {
        for variation in [
            LockVariation::None,
            LockVariation::Abrupt { period: 1000 },
            LockVariation::Gradual,
        ] {
            let lock = CombinationLock::new(appendix_cfg(variation)).unwrap();
            for m in [1, 1000, 1001, 2500, 5000] {
                let report = validate_snapshot(&lock.snapshot(m));
                assert!(report.is_empty(), "{report}");
            }
        }
    }

    #[test]
    fn sink_pays_small_reward() {
        let lock = CombinationLock::new(appendix_cfg(LockVariation::None)).unwrap();
        let snap = lock.snapshot(1);
        let sink = lock.layout().sink();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for h in 1..5 {
            let (r, next) = sample_step(&snap, h, sink, 1, &mut rng).unwrap();
            assert_eq!(next, sink);
            assert_eq!(r, 1.0 / 40.0);
        }
    }

    #[test]
    fn wrong_action_sinks_correct_action_advances() {
        let lock = CombinationLock::new(appendix_cfg(LockVariation::None)).unwrap();
        let snap = lock.snapshot(1);
        let l = lock.layout();
        let s = l.path_state(1, 2);
        let good = lock.correct_action(1, 2);
        let bad = 1 - good;
        assert_eq!(snap.row(2, s, bad)[l.sink()], 1.0);
        assert_eq!(snap.reward(2, s, bad), 1.0 / 40.0);
        assert!((snap.row(2, s, good)[l.path_state(1, 3)] - 0.98).abs() < 1e-12);
        assert_eq!(snap.reward(2, s, good), 0.0);
    }

    #[test]
    fn rejects_short_horizon() {
        let cfg = LockConfig {
            horizon: 1,
            ..LockConfig::default()
        };
        assert!(CombinationLock::new(cfg).is_err());
    }
}
