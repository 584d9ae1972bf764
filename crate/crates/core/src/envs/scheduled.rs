use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::MdpSnapshot;

use super::NonstationaryEnv;

/// An env given directly by one snapshot per episode. Consecutive episodes
/// may share a snapshot.
#[derive(Debug, Clone)]
pub struct ScheduledMdp {
    name: String,
    snapshots: Vec<Arc<MdpSnapshot>>,
    /// `index[m - 1]` selects the snapshot of episode `m`.
    index: Vec<usize>,
}

impl ScheduledMdp {
    pub fn new(name: impl Into<String>, snapshots: Vec<Arc<MdpSnapshot>>, index: Vec<usize>) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::contract("scheduled env needs at least one snapshot"))?;
        let dims = (first.states(), first.actions(), first.horizon());
        if snapshots
            .iter()
            .any(|s| (s.states(), s.actions(), s.horizon()) != dims || s.mask() != first.mask())
        {
            return Err(Error::contract("scheduled snapshots must share (S, A, H) and masks"));
        }
        if index.is_empty() || index.iter().any(|&i| i >= snapshots.len()) {
            return Err(Error::contract("episode index must be non-empty and in range"));
        }
        Ok(Self {
            name: name.into(),
            snapshots,
            index,
        })
    }

    /// One snapshot per episode.
    pub fn per_episode(name: impl Into<String>, snapshots: Vec<MdpSnapshot>) -> Result<Self> {
        let index = (0..snapshots.len()).collect();
        Self::new(name, snapshots.into_iter().map(Arc::new).collect(), index)
    }
}

impl NonstationaryEnv for ScheduledMdp {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn states(&self) -> usize {
        self.snapshots[0].states()
    }

    fn actions(&self) -> usize {
        self.snapshots[0].actions()
    }

    fn horizon(&self) -> usize {
        self.snapshots[0].horizon()
    }

    fn episodes(&self) -> usize {
        self.index.len()
    }

    fn snapshot(&self, m: usize) -> Arc<MdpSnapshot> {
        Arc::clone(&self.snapshots[self.index[m - 1]])
    }

    fn action_mask(&self) -> Option<Vec<bool>> {
        self.snapshots[0].mask().map(<[bool]>::to_vec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_snapshots_by_index() {
        let a = Arc::new(MdpSnapshot::zeros(2, 2, 1));
        let mut b = MdpSnapshot::zeros(2, 2, 1);
        b.set_reward(0, 0, 0, 1.0);
        let env = ScheduledMdp::new("toy", vec![a, Arc::new(b)], vec![0, 0, 1]).unwrap();
        assert_eq!(env.episodes(), 3);
        assert!(Arc::ptr_eq(&env.snapshot(1), &env.snapshot(2)));
        assert_eq!(env.snapshot(3).reward(0, 0, 0), 1.0);
        assert!(ScheduledMdp::new("bad", vec![Arc::new(MdpSnapshot::zeros(2, 2, 1))], vec![1]).is_err());
        assert!(ScheduledMdp::new(
            "bad",
            vec![Arc::new(MdpSnapshot::zeros(2, 2, 1)), Arc::new(MdpSnapshot::zeros(3, 2, 1))],
            vec![0]
        )
        .is_err());
    }
}
