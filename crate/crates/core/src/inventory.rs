//! Single-product inventory control with lost sales and censored demand.
//!
//! The learner only sees sales `Y = min(X, s + a)`, never the demand `X`, so
//! it is trained on the observable pseudo-reward
//! `-f 1[a > 0] - c a - q (s + a - Y) + p Y`, which differs from the true
//! reward by `p X`, a term no action can influence.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::envs::{draw_index, NonstationaryEnv, Transition};
use crate::error::{Error, Result};
use crate::model::MdpSnapshot;

/// A finite-support demand distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DemandSpec {
    Point { value: usize },
    /// Uniform on `low..=high`.
    Uniform { low: usize, high: usize },
    /// `probs[x]` is the probability of demand `x`.
    Pmf { probs: Vec<f64> },
}

impl DemandSpec {
    pub fn pmf(&self) -> Result<Vec<f64>> {
        let pmf = match self {
            DemandSpec::Point { value } => {
                let mut p = vec![0.0; value + 1];
                p[*value] = 1.0;
                p
            }
            DemandSpec::Uniform { low, high } => {
                if low > high {
                    return Err(Error::config(format!(
                        "uniform demand needs low <= high, got {low} > {high}"
                    )));
                }
                let w = 1.0 / (high - low + 1) as f64;
                let mut p = vec![0.0; high + 1];
                p[*low..=*high].fill(w);
                p
            }
            DemandSpec::Pmf { probs } => probs.clone(),
        };
        let total: f64 = pmf.iter().sum();
        if pmf.is_empty() || pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "demand pmf must be non-negative and sum to 1, got {pmf:?}"
            )));
        }
        Ok(pmf)
    }
}

/// Demand of every step in an episode, or one spec per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepDemand {
    Same(DemandSpec),
    PerStep(Vec<DemandSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandBlock {
    /// Number of consecutive episodes covered by this block.
    pub episodes: usize,
    pub demand: StepDemand,
}

/// How demand distributions change across episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "lowercase", deny_unknown_fields)]
pub enum DemandSchedule {
    Stationary { demand: StepDemand },
    /// Consecutive blocks; the last block extends to the final episode.
    Blocks { blocks: Vec<DemandBlock> },
    /// Pointwise linear interpolation of the pmfs from episode 1 to M.
    Interpolate { start: DemandSpec, end: DemandSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InventoryParams {
    /// Number of stock levels `S`; stock ranges over `0..S`.
    pub capacity: usize,
    pub fixed_cost: f64,
    pub unit_cost: f64,
    pub lost_sales_cost: f64,
    pub holding_cost: f64,
    pub episodes: usize,
    pub horizon: usize,
    pub demand: DemandSchedule,
}

impl Default for InventoryParams {
    fn default() -> Self {
        Self {
            capacity: 4,
            fixed_cost: 0.5,
            unit_cost: 0.2,
            lost_sales_cost: 1.0,
            holding_cost: 0.1,
            episodes: 1000,
            horizon: 3,
            demand: DemandSchedule::Stationary {
                demand: StepDemand::Same(DemandSpec::Uniform { low: 0, high: 2 }),
            },
        }
    }
}

impl InventoryParams {
    pub fn check(&self) -> Result<()> {
        if self.capacity < 1 || self.episodes < 1 || self.horizon < 1 {
            return Err(Error::config("inventory needs capacity, episodes and horizon >= 1"));
        }
        let costs = [
            self.fixed_cost,
            self.unit_cost,
            self.lost_sales_cost,
            self.holding_cost,
        ];
        if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::config(format!(
                "inventory costs must be finite and non-negative, got {costs:?}"
            )));
        }
        let check_step = |d: &StepDemand| -> Result<()> {
            match d {
                StepDemand::Same(spec) => spec.pmf().map(|_| ()),
                StepDemand::PerStep(specs) => {
                    if specs.len() != self.horizon {
                        return Err(Error::config(format!(
                            "per-step demand lists need {} entries, got {}",
                            self.horizon,
                            specs.len()
                        )));
                    }
                    specs.iter().try_for_each(|s| s.pmf().map(|_| ()))
                }
            }
        };
        match &self.demand {
            DemandSchedule::Stationary { demand } => check_step(demand),
            DemandSchedule::Blocks { blocks } => {
                if blocks.is_empty() || blocks.iter().any(|b| b.episodes == 0) {
                    return Err(Error::config("demand blocks must be non-empty and cover >= 1 episode"));
                }
                blocks.iter().try_for_each(|b| check_step(&b.demand))
            }
            DemandSchedule::Interpolate { start, end } => {
                start.pmf()?;
                end.pmf().map(|_| ())
            }
        }
    }

    fn check_action(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.capacity || a > self.capacity - 1 - s {
            return Err(Error::contract(format!(
                "order {a} from stock {s} exceeds capacity {}",
                self.capacity - 1
            )));
        }
        Ok(())
    }

    /// Demand pmf at episode `m` (1-based) and step `h`.
    pub fn demand_pmf(&self, m: usize, h: usize) -> Result<Vec<f64>> {
        let from_step = |d: &StepDemand| match d {
            StepDemand::Same(spec) => spec.pmf(),
            StepDemand::PerStep(specs) => specs[h].pmf(),
        };
        match &self.demand {
            DemandSchedule::Stationary { demand } => from_step(demand),
            DemandSchedule::Blocks { blocks } => from_step(&blocks[self.block_of(m, blocks)].demand),
            DemandSchedule::Interpolate { start, end } => {
                let (a, b) = (start.pmf()?, end.pmf()?);
                let w = if self.episodes > 1 {
                    (m - 1) as f64 / (self.episodes - 1) as f64
                } else {
                    0.0
                };
                let n = a.len().max(b.len());
                Ok((0..n)
                    .map(|x| {
                        let pa = a.get(x).copied().unwrap_or(0.0);
                        let pb = b.get(x).copied().unwrap_or(0.0);
                        (1.0 - w) * pa + w * pb
                    })
                    .collect())
            }
        }
    }

    fn block_of(&self, m: usize, blocks: &[DemandBlock]) -> usize {
        let mut end = 0;
        for (i, b) in blocks.iter().enumerate() {
            end += b.episodes;
            if m <= end {
                return i;
            }
        }
        blocks.len() - 1
    }

    pub fn expected_demand(&self, m: usize, h: usize) -> Result<f64> {
        Ok(self
            .demand_pmf(m, h)?
            .iter()
            .enumerate()
            .map(|(x, p)| x as f64 * p)
            .sum())
    }
}

/// Raw observable pseudo-reward `-f 1[a > 0] - c a - q [s + a - Y]^+ + p Y`.
pub fn pseudo_reward(params: &InventoryParams, s: usize, a: usize, sales: usize) -> Result<f64> {
    params.check_action(s, a)?;
    if sales > s + a {
        return Err(Error::contract(format!(
            "sales {sales} exceed available stock {}",
            s + a
        )));
    }
    Ok(pseudo_unchecked(params, s, a, sales))
}

fn pseudo_unchecked(params: &InventoryParams, s: usize, a: usize, sales: usize) -> f64 {
    let order = if a > 0 { params.fixed_cost } else { 0.0 };
    -order - params.unit_cost * a as f64 - params.holding_cost * (s + a - sales) as f64
        + params.lost_sales_cost * sales as f64
}

/// True (unobservable) reward: minus ordering, lost-sales and holding costs.
pub fn true_reward(params: &InventoryParams, s: usize, a: usize, demand: usize) -> Result<f64> {
    params.check_action(s, a)?;
    Ok(true_unchecked(params, s, a, demand))
}

fn true_unchecked(params: &InventoryParams, s: usize, a: usize, demand: usize) -> f64 {
    let stock = s + a;
    let order = if a > 0 { params.fixed_cost } else { 0.0 };
    -(order
        + params.unit_cost * a as f64
        + params.lost_sales_cost * demand.saturating_sub(stock) as f64
        + params.holding_cost * stock.saturating_sub(demand) as f64)
}

/// Affine map `x -> scale x + offset` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoRewardMap {
    pub scale: f64,
    pub offset: f64,
}

impl PseudoRewardMap {
    /// Built from the exact min and max of the raw pseudo-reward over every
    /// feasible `(s, a, Y)`.
    pub fn for_params(params: &InventoryParams) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..params.capacity {
            for a in 0..params.capacity - s {
                for y in 0..=s + a {
                    let r = pseudo_unchecked(params, s, a, y);
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
        }
        if hi > lo {
            let scale = 1.0 / (hi - lo);
            Self {
                scale,
                offset: -lo * scale,
            }
        } else {
            Self {
                scale: 1.0,
                offset: -lo,
            }
        }
    }

    #[inline]
    pub fn apply(&self, raw: f64) -> f64 {
        (self.scale * raw + self.offset).clamp(0.0, 1.0)
    }
}

/// Outcome of one censored step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensoredStep {
    pub sales: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Draws demand for `(m, h)`, returns sales, the normalized pseudo-reward and
/// the carried-over stock. The drawn demand itself is not returned.
pub fn censored_step(
    params: &InventoryParams,
    map: &PseudoRewardMap,
    m: usize,
    h: usize,
    s: usize,
    a: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<CensoredStep> {
    params.check_action(s, a)?;
    let pmf = params.demand_pmf(m, h)?;
    let demand = draw_index(&pmf, rng);
    Ok(censored_from_demand(params, map, s, a, demand))
}

fn censored_from_demand(
    params: &InventoryParams,
    map: &PseudoRewardMap,
    s: usize,
    a: usize,
    demand: usize,
) -> CensoredStep {
    let stock = s + a;
    let sales = demand.min(stock);
    CensoredStep {
        sales,
        reward: map.apply(pseudo_unchecked(params, s, a, sales)),
        next_state: stock - sales,
    }
}

/// Which reward table a snapshot carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardView {
    /// Normalized mean pseudo-reward (what agents learn from).
    Normalized,
    /// Unnormalized mean pseudo-reward.
    RawPseudo,
    /// Mean true reward, including lost-sales costs.
    True,
}

pub struct InventoryEnv {
    params: InventoryParams,
    map: PseudoRewardMap,
    mask: Vec<bool>,
    /// Precomputed snapshots per demand block; `None` for interpolated demand.
    blocks: Option<Vec<Arc<MdpSnapshot>>>,
}

impl InventoryEnv {
    pub fn new(params: InventoryParams) -> Result<Self> {
        params.check()?;
        let map = PseudoRewardMap::for_params(&params);
        let (s_len, h_len) = (params.capacity, params.horizon);
        let mut mask = vec![false; h_len * s_len * s_len];
        for h in 0..h_len {
            for s in 0..s_len {
                for a in 0..s_len - s {
                    mask[(h * s_len + s) * s_len + a] = true;
                }
            }
        }
        let mut env = Self {
            params,
            map,
            mask,
            blocks: None,
        };
        let firsts: Option<Vec<usize>> = match &env.params.demand {
            DemandSchedule::Stationary { .. } => Some(vec![1]),
            DemandSchedule::Blocks { blocks } => {
                let mut start = 1;
                Some(
                    blocks
                        .iter()
                        .map(|b| {
                            let m = start;
                            start += b.episodes;
                            m
                        })
                        .collect(),
                )
            }
            DemandSchedule::Interpolate { .. } => None,
        };
        if let Some(firsts) = firsts {
            let snaps = firsts
                .into_iter()
                .map(|m| env.build(m.min(env.params.episodes), RewardView::Normalized).map(Arc::new))
                .collect::<Result<Vec<_>>>()?;
            env.blocks = Some(snaps);
        }
        Ok(env)
    }

    pub fn params(&self) -> &InventoryParams {
        &self.params
    }

    pub fn reward_map(&self) -> PseudoRewardMap {
        self.map
    }

    /// Exact model of episode `m` under the requested reward view.
    pub fn build(&self, m: usize, view: RewardView) -> Result<MdpSnapshot> {
        let p = &self.params;
        let (s_len, h_len) = (p.capacity, p.horizon);
        let mut snap = MdpSnapshot::zeros(s_len, s_len, h_len);
        for h in 0..h_len {
            let pmf = p.demand_pmf(m, h)?;
            for s in 0..s_len {
                for a in 0..s_len - s {
                    let stock = s + a;
                    let row = snap.row_mut(h, s, a);
                    row.fill(0.0);
                    let mut mean = 0.0;
                    for (x, &px) in pmf.iter().enumerate() {
                        if px == 0.0 {
                            continue;
                        }
                        row[stock.saturating_sub(x)] += px;
                        let sales = x.min(stock);
                        mean += px
                            * match view {
                                RewardView::Normalized => self.map.apply(pseudo_unchecked(p, s, a, sales)),
                                RewardView::RawPseudo => pseudo_unchecked(p, s, a, sales),
                                RewardView::True => true_unchecked(p, s, a, x),
                            };
                    }
                    snap.set_reward(h, s, a, mean);
                }
            }
        }
        snap.renormalize_rows();
        snap.set_mask(Some(self.mask.clone()))?;
        Ok(snap)
    }

    fn block_index(&self, m: usize) -> usize {
        match &self.params.demand {
            DemandSchedule::Blocks { blocks } => self.params.block_of(m, blocks),
            _ => 0,
        }
    }
}

impl NonstationaryEnv for InventoryEnv {
    fn name(&self) -> String {
        "inventory".to_string()
    }

    fn states(&self) -> usize {
        self.params.capacity
    }

    fn actions(&self) -> usize {
        self.params.capacity
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn episodes(&self) -> usize {
        self.params.episodes
    }

    fn snapshot(&self, m: usize) -> Arc<MdpSnapshot> {
        match &self.blocks {
            Some(snaps) => Arc::clone(&snaps[self.block_index(m)]),
            None => Arc::new(
                self.build(m, RewardView::Normalized)
                    .expect("demand validated at construction"),
            ),
        }
    }

    /// The store is emptied between episodes.
    fn initial_state(&self, _m: usize) -> usize {
        0
    }

    fn action_mask(&self) -> Option<Vec<bool>> {
        Some(self.mask.clone())
    }

    fn step(
        &self,
        _snap: &MdpSnapshot,
        m: usize,
        h: usize,
        s: usize,
        a: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Transition> {
        let out = censored_step(&self.params, &self.map, m, h, s, a, rng)?;
        Ok(Transition {
            reward: out.reward,
            next_state: out.next_state,
            sales: Some(out.sales),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_snapshot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(capacity: usize, demand: DemandSpec) -> InventoryParams {
        InventoryParams {
            capacity,
            fixed_cost: 2.0,
            unit_cost: 1.0,
            lost_sales_cost: 3.0,
            holding_cost: 1.0,
            episodes: 3,
            horizon: 2,
            demand: DemandSchedule::Stationary {
                demand: StepDemand::Same(demand),
            },
        }
    }

    #[test]
    fn pseudo_reward_examples() {
        let p = params(6, DemandSpec::Point { value: 5 });
        // X = 5 from s = 1, a = 2 sells Y = 3
        assert_eq!(pseudo_reward(&p, 1, 2, 3).unwrap(), 5.0);
        assert_eq!(true_reward(&p, 1, 2, 5).unwrap(), -10.0);
        assert_eq!(true_reward(&p, 1, 2, 5).unwrap() + 3.0 * 5.0, 5.0);
        assert_eq!(pseudo_reward(&p, 2, 0, 1).unwrap(), 2.0);
        assert_eq!(pseudo_reward(&p, 0, 0, 0).unwrap(), 0.0);
        assert!(pseudo_reward(&p, 3, 3, 0).is_err());
        assert!(pseudo_reward(&p, 1, 1, 3).is_err());
    }

    #[test]
    fn pseudo_equals_true_plus_lost_sales_shift() {
        let p = params(5, DemandSpec::Point { value: 0 });
        for s in 0..5 {
            for a in 0..5 - s {
                for x in 0..9 {
                    let y = x.min(s + a);
                    let lhs = pseudo_reward(&p, s, a, y).unwrap();
                    let rhs = true_reward(&p, s, a, x).unwrap() + p.lost_sales_cost * x as f64;
                    assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn censored_step_examples() {
        let p = params(3, DemandSpec::Point { value: 1 });
        let map = PseudoRewardMap::for_params(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = censored_step(&p, &map, 1, 0, 0, 1, &mut rng).unwrap();
        assert_eq!((out.sales, out.next_state), (1, 0));
        let empty = censored_step(&p, &map, 1, 0, 0, 0, &mut rng).unwrap();
        assert_eq!((empty.sales, empty.next_state), (0, 0));
        assert!((empty.reward - map.apply(0.0)).abs() < 1e-12);
        let big = params(3, DemandSpec::Point { value: 7 });
        for s in 0..3 {
            for a in 0..3 - s {
                let o = censored_step(&big, &map, 1, 0, s, a, &mut rng).unwrap();
                assert_eq!(o.next_state, 0);
            }
        }
    }

    #[test]
    fn normalization_spans_unit_interval() {
        let p = params(4, DemandSpec::Uniform { low: 0, high: 3 });
        let map = PseudoRewardMap::for_params(&p);
        assert!(map.scale > 0.0);
        let mut seen = Vec::new();
        for s in 0..4 {
            for a in 0..4 - s {
                for y in 0..=s + a {
                    let v = map.scale * pseudo_reward(&p, s, a, y).unwrap() + map.offset;
                    assert!((-1e-12..=1.0 + 1e-12).contains(&v));
                    seen.push(v);
                }
            }
        }
        assert!(seen.iter().any(|v| v.abs() < 1e-12));
        assert!(seen.iter().any(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn snapshot_rows_and_masks() {
        let env = InventoryEnv::new(params(3, DemandSpec::Point { value: 1 })).unwrap();
        let snap = env.snapshot(1);
        assert_eq!(snap.row(0, 0, 1), &[1.0, 0.0, 0.0]);
        assert!(validate_snapshot(&snap).is_empty());
        let valid: Vec<usize> = snap.valid_actions(0, 2).collect();
        assert_eq!(valid, vec![0]);

        let coin = InventoryEnv::new(params(3, DemandSpec::Uniform { low: 0, high: 1 })).unwrap();
        let row = coin.snapshot(2).row(1, 0, 1).to_vec();
        assert_eq!(row, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn snapshot_matches_sampled_frequencies() {
        let p = InventoryParams {
            demand: DemandSchedule::Stationary {
                demand: StepDemand::Same(DemandSpec::Pmf {
                    probs: vec![0.2, 0.5, 0.3],
                }),
            },
            ..params(4, DemandSpec::Point { value: 0 })
        };
        let env = InventoryEnv::new(p).unwrap();
        let snap = env.snapshot(1);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let (s, a) = (1, 2);
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let t = env.step(&snap, 1, 0, s, a, &mut rng).unwrap();
            counts[t.next_state] += 1;
        }
        for (k, c) in counts.iter().enumerate() {
            let p = snap.row(0, s, a)[k];
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() <= 3.0 * sd + 1e-12, "state {k}");
        }
    }

    #[test]
    fn blocks_and_interpolation() {
        let mut p = params(3, DemandSpec::Point { value: 0 });
        p.episodes = 4;
        p.demand = DemandSchedule::Blocks {
            blocks: vec![
                DemandBlock {
                    episodes: 2,
                    demand: StepDemand::Same(DemandSpec::Point { value: 0 }),
                },
                DemandBlock {
                    episodes: 2,
                    demand: StepDemand::PerStep(vec![
                        DemandSpec::Point { value: 1 },
                        DemandSpec::Point { value: 2 },
                    ]),
                },
            ],
        };
        assert_eq!(p.expected_demand(2, 0).unwrap(), 0.0);
        assert_eq!(p.expected_demand(3, 1).unwrap(), 2.0);
        let env = InventoryEnv::new(p.clone()).unwrap();
        assert!(Arc::ptr_eq(&env.snapshot(3), &env.snapshot(4)));

        p.demand = DemandSchedule::Interpolate {
            start: DemandSpec::Point { value: 0 },
            end: DemandSpec::Point { value: 2 },
        };
        let mid = p.demand_pmf(3, 0).unwrap();
        assert!((mid[0] - 1.0 / 3.0).abs() < 1e-12 && (mid[2] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = params(3, DemandSpec::Pmf { probs: vec![0.5, 0.4] });
        assert!(p.check().is_err());
        p.demand = DemandSchedule::Stationary {
            demand: StepDemand::Same(DemandSpec::Point { value: 1 }),
        };
        p.holding_cost = -1.0;
        assert!(p.check().is_err());
    }
}
