//! Chain of `H` two-state JAO blocks whose hidden good action is redrawn at
//! the start of every stationary segment.
//!
//! State 0 is the zero-reward state, state 1 pays reward 1 under any action.
//! Every episode starts in state 0, so state 1 is never occupied at step 0.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_step_with, NonstationaryEnv, RewardNoise, Transition};
use crate::error::{Error, Result};
use crate::model::MdpSnapshot;

pub const JAO_LOW: usize = 0;
pub const JAO_HIGH: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JaoChainConfig {
    /// Must be 2: the block is the two-state JAO MDP.
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub segment_length: usize,
    pub seed: u64,
    pub bernoulli_rewards: bool,
}

impl Default for JaoChainConfig {
    fn default() -> Self {
        Self {
            states: 2,
            actions: 2,
            horizon: 5,
            episodes: 1000,
            delta: 0.2,
            epsilon: 0.1,
            segment_length: 250,
            seed: 0,
            bernoulli_rewards: false,
        }
    }
}

impl JaoChainConfig {
    pub fn check(&self) -> Result<()> {
        if self.states != 2 {
            return Err(Error::config(format!(
                "JAO chain blocks have exactly 2 states, got {}",
                self.states
            )));
        }
        if self.actions == 0 || self.horizon == 0 || self.episodes == 0 || self.segment_length == 0 {
            return Err(Error::config("JAO chain needs A, H, M, segment_length >= 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(Error::config(format!("delta must be in (0, 1/2], got {}", self.delta)));
        }
        if self.epsilon < 0.0 || self.epsilon >= self.delta {
            return Err(Error::config(format!(
                "epsilon must satisfy 0 <= epsilon < delta, got epsilon={} delta={}",
                self.epsilon, self.delta
            )));
        }
        if self.delta + self.epsilon > 1.0 {
            return Err(Error::config("delta + epsilon must be at most 1"));
        }
        Ok(())
    }
}

/// Long-run average reward of one JAO block under its good action.
pub fn jao_average_reward(delta: f64, epsilon: f64) -> f64 {
    (delta + epsilon) / (2.0 * delta + epsilon)
}

#[derive(Debug)]
pub struct JaoChain {
    cfg: JaoChainConfig,
    good: Vec<usize>,
    noise: RewardNoise,
    segments: Vec<Arc<MdpSnapshot>>,
}

impl JaoChain {
    pub fn new(cfg: JaoChainConfig) -> Result<Self> {
        cfg.check()?;
        let n_segments = cfg.episodes.div_ceil(cfg.segment_length);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let good: Vec<usize> = (0..n_segments)
            .map(|_| rng.gen_range(0..cfg.actions))
            .collect();
        let segments = good
            .iter()
            .map(|&g| Arc::new(build_block_chain(&cfg, g)))
            .collect();
        let noise = if cfg.bernoulli_rewards {
            RewardNoise::Bernoulli
        } else {
            RewardNoise::Deterministic
        };
        Ok(Self {
            cfg,
            good,
            noise,
            segments,
        })
    }

    pub fn config(&self) -> &JaoChainConfig {
        &self.cfg
    }

    pub fn segment_of(&self, m: usize) -> usize {
        (m - 1) / self.cfg.segment_length
    }

    /// Good action of each segment, in order.
    pub fn good_actions(&self) -> &[usize] {
        &self.good
    }

    /// Number of segment boundaries at which the good action actually changes.
    pub fn switches(&self) -> usize {
        self.good.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

fn build_block_chain(cfg: &JaoChainConfig, good: usize) -> MdpSnapshot {
    let mut snap = MdpSnapshot::zeros(2, cfg.actions, cfg.horizon);
    for h in 0..cfg.horizon {
        for a in 0..cfg.actions {
            let up = if a == good {
                cfg.delta + cfg.epsilon
            } else {
                cfg.delta
            };
            snap.row_mut(h, JAO_LOW, a).copy_from_slice(&[1.0 - up, up]);
            snap.row_mut(h, JAO_HIGH, a)
                .copy_from_slice(&[cfg.delta, 1.0 - cfg.delta]);
            snap.set_reward(h, JAO_LOW, a, 0.0);
            snap.set_reward(h, JAO_HIGH, a, 1.0);
        }
    }
    snap
}

impl NonstationaryEnv for JaoChain {
    fn name(&self) -> String {
        "jao-chain".to_string()
    }

    fn states(&self) -> usize {
        2
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
        self.segments[self.segment_of(m)].clone()
    }

    fn step(
        &self,
        snap: &MdpSnapshot,
        _m: usize,
        h: usize,
        s: usize,
        a: usize,
        rng: &mut dyn rand::RngCore,
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

    /// Stationary distribution of the two-state chain by power iteration.
    fn stationary_high_mass(delta: f64, eps: f64) -> f64 {
        let up = delta + eps;
        let mut pi = [1.0, 0.0];
        for _ in 0..10_000 {
            pi = [
                pi[0] * (1.0 - up) + pi[1] * delta,
                pi[0] * up + pi[1] * (1.0 - delta),
            ];
        }
        pi[1]
    }

    #[test]
    fn average_reward_formula() {
        assert!((jao_average_reward(0.2, 0.1) - 0.6).abs() < 1e-15);
        assert!((stationary_high_mass(0.2, 0.1) - 0.6).abs() < 1e-12);
        assert!((stationary_high_mass(0.3, 0.05) - jao_average_reward(0.3, 0.05)).abs() < 1e-12);
    }

    #[test]
    fn zero_epsilon_has_identical_columns() {
        let cfg = JaoChainConfig {
            actions: 4,
            epsilon: 0.0,
            ..Default::default()
        };
        let env = JaoChain::new(cfg).unwrap();
        let snap = env.snapshot(1);
        for h in 0..snap.horizon() {
            for s in 0..2 {
                for a in 1..4 {
                    assert_eq!(snap.row(h, s, a), snap.row(h, s, 0));
                }
            }
        }
    }

    #[test]
    fn single_segment_is_stationary() {
        let cfg = JaoChainConfig {
            segment_length: 1000,
            ..Default::default()
        };
        let env = JaoChain::new(cfg).unwrap();
        assert_eq!(env.good_actions().len(), 1);
        assert_eq!(*env.snapshot(1), *env.snapshot(1000));
    }

    #[test]
    fn rejects_bad_parameters() {
        let bad = |delta, epsilon| {
            JaoChain::new(JaoChainConfig {
                delta,
                epsilon,
                ..Default::default()
            })
            .is_err()
        };
        assert!(bad(0.2, 0.2));
        assert!(bad(0.2, 0.3));
        assert!(bad(0.6, 0.1));
        assert!(!bad(0.2, 0.1));
    }

    #[test]
    fn snapshots_validate_and_segments_hold() {
        let env = JaoChain::new(JaoChainConfig {
            actions: 3,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        for m in [1, 250, 251, 1000] {
            assert!(validate_snapshot(&env.snapshot(m)).is_empty());
        }
        assert_eq!(*env.snapshot(1), *env.snapshot(250));
        assert_eq!(env.segment_of(251), 1);
    }

    #[test]
    fn good_action_frequency_matches() {
        let env = JaoChain::new(JaoChainConfig::default()).unwrap();
        let snap = env.snapshot(1);
        let good = env.good_actions()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_step(&snap, 0, JAO_LOW, good, &mut rng).unwrap().1 == JAO_HIGH)
            .count();
        let sd = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.3).abs() < 3.0 * sd);
    }
}
