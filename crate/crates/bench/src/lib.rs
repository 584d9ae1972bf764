//! Fixtures shared by the benchmarks.

use nsrl::agents::{EpochPlan, QUcbConfig, RestartQUcb};
use nsrl::envs::{CombinationLock, LockConfig, LockVariation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The 10-state lock at the usual scale, with `episodes` episodes.
pub fn lock(episodes: usize) -> CombinationLock {
    CombinationLock::new(LockConfig {
        episodes,
        variation: LockVariation::Abrupt {
            period: (episodes / 5).max(1),
        },
        ..Default::default()
    })
    .expect("valid lock config")
}

pub fn restart_agent(env: &CombinationLock, epoch_len: usize) -> RestartQUcb {
    let m = env.config().episodes;
    let plan = EpochPlan::with_epoch_len(m, epoch_len.min(m)).expect("valid plan");
    let cfg = QUcbConfig {
        delta: 1.9,
        ..Default::default()
    };
    RestartQUcb::new(10, 2, 5, plan, cfg).expect("valid agent")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
