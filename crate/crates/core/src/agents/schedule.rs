use std::ops::RangeInclusive;

use crate::error::{Error, Result};

/// Per-triple stage lengths `e_1 = H`, `e_{i+1} = floor((1 + 1/H) e_i)` and
/// their partial sums, the stage ending times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSchedule {
    lengths: Vec<usize>,
    ends: Vec<usize>,
    /// `is_end[n]` is true iff `n` is a stage ending time.
    is_end: Vec<bool>,
}

impl StageSchedule {
    /// All stages whose ending time is at most `n_max`.
    pub fn new(horizon: usize, n_max: usize) -> Self {
        assert!(horizon >= 1, "stage schedule needs H >= 1");
        let mut lengths = Vec::new();
        let mut ends = Vec::new();
        let mut len = horizon;
        let mut end = 0usize;
        loop {
            end += len;
            if end > n_max {
                break;
            }
            lengths.push(len);
            ends.push(end);
            // floor((1 + 1/H) e) in integer arithmetic
            len = len * (horizon + 1) / horizon;
        }
        let mut is_end = vec![false; n_max + 1];
        for &e in &ends {
            is_end[e] = true;
        }
        Self {
            lengths,
            ends,
            is_end,
        }
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    #[inline]
    pub fn is_end(&self, n: usize) -> bool {
        self.is_end.get(n).copied().unwrap_or(false)
    }

    /// Length of the stage that ends at visit count `n`.
    pub fn length_ending_at(&self, n: usize) -> Option<usize> {
        self.ends
            .binary_search(&n)
            .ok()
            .map(|i| self.lengths[i])
    }
}

/// Splits `M` episodes into epochs of `K` episodes, restarting at episodes
/// `1, K+1, 2K+1, ...`. The last epoch may be shorter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochPlan {
    episodes: usize,
    epoch_len: usize,
}

impl EpochPlan {
    /// `D` epochs over `M` episodes, `K = ceil(M / D)`.
    pub fn new(episodes: usize, epochs: usize) -> Result<Self> {
        if episodes == 0 || epochs == 0 {
            return Err(Error::contract(format!(
                "epoch plan needs M >= 1 and D >= 1, got M={episodes}, D={epochs}"
            )));
        }
        Ok(Self {
            episodes,
            epoch_len: episodes.div_ceil(epochs),
        })
    }

    /// Epochs of a fixed length `K`.
    pub fn with_epoch_len(episodes: usize, epoch_len: usize) -> Result<Self> {
        if episodes == 0 || epoch_len == 0 {
            return Err(Error::contract("epoch plan needs M >= 1 and K >= 1"));
        }
        Ok(Self {
            episodes,
            epoch_len,
        })
    }

    /// Never restarts.
    pub fn single(episodes: usize) -> Self {
        Self {
            episodes,
            epoch_len: episodes.max(1),
        }
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn epoch_len(&self) -> usize {
        self.epoch_len
    }

    pub fn num_epochs(&self) -> usize {
        self.episodes.div_ceil(self.epoch_len)
    }

    /// 1-based epoch of episode `m`.
    pub fn epoch_of(&self, m: usize) -> usize {
        (m - 1) / self.epoch_len + 1
    }

    pub fn is_restart(&self, m: usize) -> bool {
        (m - 1).is_multiple_of(self.epoch_len)
    }

    pub fn restart_episodes(&self) -> Vec<usize> {
        (1..=self.episodes).step_by(self.epoch_len).collect()
    }

    /// Episode ranges of every epoch.
    pub fn epochs(&self) -> impl Iterator<Item = RangeInclusive<usize>> + '_ {
        (1..=self.episodes)
            .step_by(self.epoch_len)
            .map(move |start| start..=(start + self.epoch_len - 1).min(self.episodes))
    }
}

fn clamp_epochs(value: f64, episodes: usize) -> usize {
    let rounded = value.round();
    if !rounded.is_finite() || rounded < 1.0 {
        1
    } else {
        (rounded as usize).clamp(1, episodes.max(1))
    }
}

/// `D = S^{-1/3} A^{-1/3} Delta^{2/3} H^{-2/3} T^{1/3}`, rounded and clamped to `[1, M]`.
pub fn epochs_hoeffding(
    states: usize,
    actions: usize,
    budget: f64,
    horizon: usize,
    total_steps: usize,
) -> Result<usize> {
    if !(budget > 0.0) || total_steps == 0 || horizon == 0 {
        return Err(Error::contract(format!(
            "epoch count needs Delta > 0 and T >= 1 (got Delta={budget}, T={total_steps}); use D = 1 for stationary runs"
        )));
    }
    let value = raw_epochs(states, actions, budget, total_steps) * (horizon as f64).powf(-2.0 / 3.0);
    Ok(clamp_epochs(value, total_steps / horizon))
}

/// `D* = S^{-1/3} A^{-1/3} Delta^{2/3} T^{1/3}`, rounded and clamped to `[1, M]`.
pub fn epochs_freedman(
    states: usize,
    actions: usize,
    budget: f64,
    total_steps: usize,
    episodes: usize,
) -> Result<usize> {
    if !(budget > 0.0) || total_steps == 0 {
        return Err(Error::contract(format!(
            "epoch count needs Delta > 0 and T >= 1 (got Delta={budget}, T={total_steps}); use D = 1 for stationary runs"
        )));
    }
    Ok(clamp_epochs(
        raw_epochs(states, actions, budget, total_steps),
        episodes,
    ))
}

fn raw_epochs(states: usize, actions: usize, budget: f64, total_steps: usize) -> f64 {
    let third = 1.0 / 3.0;
    (states as f64).powf(-third)
        * (actions as f64).powf(-third)
        * budget.powf(2.0 * third)
        * (total_steps as f64).powf(third)
}
