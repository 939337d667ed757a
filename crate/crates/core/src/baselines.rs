//! Reference power-control policies: full reuse and ITLinQ scheduling.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmError};
use crate::rate::PowerAllocation;

/// Every transmitter at full power.
pub fn full_reuse(m: usize, p_max: f64) -> Result<PowerAllocation> {
    if m == 0 {
        return Err(RrmError::Domain("full reuse needs at least one user".into()));
    }
    Ok(PowerAllocation(vec![p_max; m]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    /// Links considered in decreasing order of direct-link SNR.
    #[default]
    BySnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ItlinqConfig {
    /// Threshold offset `M` in dB.
    pub margin_db: f64,
    /// SNR exponent `eta` in (0, 1].
    pub eta: f64,
    pub priority: Priority,
    /// Reschedule on every instantaneous channel instead of once on the
    /// long-term gains.
    pub per_step: bool,
}

impl Default for ItlinqConfig {
    fn default() -> Self {
        ItlinqConfig {
            margin_db: 25.0,
            eta: 0.7,
            priority: Priority::BySnr,
            per_step: false,
        }
    }
}

impl ItlinqConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.margin_db.is_finite() {
            return Err(RrmError::config("itlinq.margin_db", "must be finite"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(RrmError::config("itlinq.eta", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Greedy ITLinQ schedule. Links are visited by decreasing SNR; link `j`
/// joins the active set `S` iff for every `i` in `S`
/// `INR_ij <= M SNR_j^eta` and `INR_ji <= M SNR_i^eta`. Active links
/// transmit at `p_max`, the rest are silent.
pub fn itlinq_schedule(gain: &Array2<f64>, noise: f64, p_max: f64, cfg: &ItlinqConfig) -> Result<PowerAllocation> {
    cfg.validate()?;
    let (m, cols) = gain.dim();
    if m == 0 || m != cols {
        return Err(RrmError::Domain(format!("gain matrix is {m}x{cols}")));
    }
    if let Some(((i, j), g)) = gain
        .indexed_iter()
        .find(|((i, j), g)| !(g.is_finite() && if i == j { **g > 0.0 } else { **g >= 0.0 }))
    {
        return Err(RrmError::Domain(format!("gain ({i}, {j}) = {g} is not a valid gain")));
    }
    if !(noise.is_finite() && noise > 0.0) {
        return Err(RrmError::Domain(format!("noise power {noise} must be positive")));
    }
    let margin = 10f64.powf(cfg.margin_db / 10.0);
    let snr: Vec<f64> = (0..m).map(|i| p_max * gain[[i, i]] / noise).collect();
    let inr = |from: usize, to: usize| p_max * gain[[from, to]] / noise;
    let mut order: Vec<usize> = (0..m).collect();
    match cfg.priority {
        // Stable sort: ties keep index order.
        Priority::BySnr => order.sort_by(|&a, &b| snr[b].total_cmp(&snr[a])),
    }
    let mut active: Vec<usize> = Vec::with_capacity(m);
    for &j in &order {
        let admissible = active.iter().all(|&i| {
            inr(i, j) <= margin * snr[j].powf(cfg.eta) && inr(j, i) <= margin * snr[i].powf(cfg.eta)
        });
        if admissible {
            active.push(j);
        }
    }
    let mut p = vec![0.0; m];
    for i in active {
        p[i] = p_max;
    }
    Ok(PowerAllocation(p))
}
