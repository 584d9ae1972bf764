//! Tabular reinforcement learning in non-stationary episodic MDPs: restarted
//! optimistic Q-learning, a bandit-tuned restart schedule, exact regret
//! oracles, and the benchmark environments they are evaluated on.

pub mod agents;
pub mod envs;
pub mod meta_bandit;
pub mod error;
pub mod harness;
pub mod inventory;
pub mod model;
pub mod multiagent;
pub mod oracle;

pub use agents::{Agent, EpochPlan, RestartQUcb, RunOptions};
pub use envs::NonstationaryEnv;
pub use error::{Error, Result};
pub use model::{EpisodeGrid, MdpSnapshot, RunTrace, TabularPolicy};
