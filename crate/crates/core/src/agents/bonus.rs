use crate::error::{Error, Result};

/// Hoeffding-style optimism `sqrt(H^2 iota / n) + sqrt(iota / n)` for a stage
/// of `stage_visits` samples.
pub fn hoeffding_bonus(stage_visits: usize, horizon: usize, iota: f64) -> Result<f64> {
    if stage_visits == 0 {
        return Err(Error::contract("hoeffding bonus needs at least one stage visit"));
    }
    Ok(hoeffding_unchecked(stage_visits as f64, horizon as f64, iota))
}

#[inline]
pub(crate) fn hoeffding_unchecked(stage_visits: f64, horizon: f64, iota: f64) -> f64 {
    (horizon * horizon * iota / stage_visits).sqrt() + (iota / stage_visits).sqrt()
}

/// Running sums feeding the Freedman bonus.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FreedmanSums {
    /// Lifetime visits `n` and stage visits `n_stage`.
    pub visits: usize,
    pub stage_visits: usize,
    /// Sums of `V_ref(s')` and `V_ref(s')^2` over the lifetime.
    pub ref_sum: f64,
    pub ref_sq_sum: f64,
    /// Sums of `V(s') - V_ref(s')` and its square over the stage.
    pub adv_sum: f64,
    pub adv_sq_sum: f64,
}

/// Freedman-style optimism with the reference-advantage variances. Negative
/// empirical variances from rounding are clipped to zero.
pub fn freedman_bonus(sums: &FreedmanSums, horizon: usize, iota: f64) -> Result<f64> {
    if sums.visits == 0 || sums.stage_visits == 0 {
        return Err(Error::contract(
            "freedman bonus needs at least one lifetime and one stage visit",
        ));
    }
    Ok(freedman_unchecked(sums, horizon as f64, iota))
}

pub(crate) fn freedman_unchecked(sums: &FreedmanSums, horizon: f64, iota: f64) -> f64 {
    let n = sums.visits as f64;
    let ns = sums.stage_visits as f64;
    let ref_mean = sums.ref_sum / n;
    let ref_var = (sums.ref_sq_sum / n - ref_mean * ref_mean).max(0.0);
    let adv_mean = sums.adv_sum / ns;
    let adv_var = (sums.adv_sq_sum / ns - adv_mean * adv_mean).max(0.0);
    let iota34 = iota.powf(0.75);
    2.0 * (ref_var * iota / n).sqrt()
        + 2.0 * (adv_var * iota / ns).sqrt()
        + 5.0
            * (horizon * iota / n
                + horizon * iota / ns
                + horizon * iota34 / n.powf(0.75)
                + horizon * iota34 / ns.powf(0.75))
        + (iota / ns).sqrt()
}
