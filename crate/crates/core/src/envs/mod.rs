//! Non-stationary environments and the step sampler.

mod jao;
mod lock;
mod scheduled;

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::model::MdpSnapshot;

pub use jao::{jao_average_reward, JaoChain, JaoChainConfig, JAO_HIGH, JAO_LOW};
pub use lock::{CombinationLock, LockConfig, LockLayout, LockVariation};
pub use scheduled::ScheduledMdp;

/// Outcome of one environment step as seen by the agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub next_state: usize,
    /// Observed sales for inventory envs.
    pub sales: Option<usize>,
}

/// How realized rewards are drawn from the stored means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardNoise {
    /// The realized reward equals the mean.
    #[default]
    Deterministic,
    /// Bernoulli draw with the stored mean.
    Bernoulli,
}

/// An episode-indexed family of MDP snapshots plus a sampling interface.
///
/// `snapshot(m)` must be a pure function of `m` and every snapshot must share
/// the env's `(S, A, H)`. Agents only ever see `step` outcomes.
pub trait NonstationaryEnv: Send + Sync {
    fn name(&self) -> String;

    fn states(&self) -> usize;

    fn actions(&self) -> usize;

    fn horizon(&self) -> usize;

    fn episodes(&self) -> usize;

    /// Full model of episode `m` (1-based).
    fn snapshot(&self, m: usize) -> Arc<MdpSnapshot>;

    fn initial_state(&self, _m: usize) -> usize {
        0
    }

    /// Valid-action table `[h][s][a]`, identical across episodes. `None` means
    /// every action is valid.
    fn action_mask(&self) -> Option<Vec<bool>> {
        None
    }

    /// Samples one step of episode `m` from the given snapshot of that episode.
    fn step(
        &self,
        snap: &MdpSnapshot,
        _m: usize,
        h: usize,
        s: usize,
        a: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Transition> {
        let (reward, next_state) = sample_step(snap, h, s, a, rng)?;
        Ok(Transition {
            reward,
            next_state,
            sales: None,
        })
    }
}

/// Draws the next state from `P[h][s][a][.]`; the reward is the stored mean.
pub fn sample_step(
    snap: &MdpSnapshot,
    h: usize,
    s: usize,
    a: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<(f64, usize)> {
    sample_step_with(snap, h, s, a, RewardNoise::Deterministic, rng)
}

pub fn sample_step_with(
    snap: &MdpSnapshot,
    h: usize,
    s: usize,
    a: usize,
    noise: RewardNoise,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<(f64, usize)> {
    if h >= snap.horizon() || s >= snap.states() || a >= snap.actions() {
        return Err(Error::contract(format!(
            "step index (h={h}, s={s}, a={a}) out of range"
        )));
    }
    if !snap.is_valid(h, s, a) {
        return Err(Error::contract(format!(
            "action {a} is masked at (h={h}, s={s})"
        )));
    }
    let next = draw_index(snap.row(h, s, a), rng);
    let mean = snap.reward(h, s, a);
    let reward = match noise {
        RewardNoise::Deterministic => mean,
        RewardNoise::Bernoulli => {
            if rng.gen::<f64>() < mean {
                1.0
            } else {
                0.0
            }
        }
    };
    Ok((reward, next))
}

/// Inverse-CDF draw from a probability row. Point masses consume one draw as
/// well so that rng streams stay aligned across envs.
pub(crate) fn draw_index(row: &[f64], rng: &mut (impl RngCore + ?Sized)) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // rounding left u above the accumulated mass
    last_positive
}
