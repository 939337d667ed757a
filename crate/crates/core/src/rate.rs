//! Per-user rates under treat-interference-as-noise, the sum-rate utility
//! and the minimum-rate constraints.

use std::f64::consts::LN_2;
use std::ops::Deref;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmError};

/// Converts dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

macro_rules! vector_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                $name(v)
            }
        }
    };
}

vector_newtype!(
    /// Transmit powers in watts.
    PowerAllocation
);
vector_newtype!(
    /// Rates in bits/s/Hz.
    RateVector
);
vector_newtype!(
    /// Signed constraint values `x_i - f_min`.
    ConstraintSlack
);

impl PowerAllocation {
    pub fn validate(&self, p_max: f64) -> Result<()> {
        match self.iter().position(|p| !(p.is_finite() && *p >= 0.0 && *p <= p_max)) {
            Some(i) => Err(RrmError::Domain(format!(
                "power {i} = {} outside [0, {p_max}]",
                self[i]
            ))),
            None => Ok(()),
        }
    }
}

fn check_inputs(gain: &Array2<f64>, p: &[f64], noise: f64) -> Result<usize> {
    let m = p.len();
    if gain.dim() != (m, m) {
        return Err(RrmError::Domain(format!(
            "gain matrix is {:?} but there are {m} powers",
            gain.dim()
        )));
    }
    if !(noise.is_finite() && noise > 0.0) {
        return Err(RrmError::numeric("rates", format!("noise power {noise}")));
    }
    if let Some(i) = p.iter().position(|v| !v.is_finite()) {
        return Err(RrmError::numeric("rates", format!("power entry {i} = {}", p[i])));
    }
    if let Some(((i, j), g)) = gain.indexed_iter().find(|(_, g)| !g.is_finite()) {
        return Err(RrmError::numeric("rates", format!("gain entry ({i}, {j}) = {g}")));
    }
    Ok(m)
}

/// Received signal `p_i G_ii` and interference-plus-noise at every receiver.
fn signal_and_interference(gain: &Array2<f64>, p: &[f64], noise: f64) -> (Vec<f64>, Vec<f64>) {
    let m = p.len();
    let mut signal = vec![0.0; m];
    let mut interference = vec![noise; m];
    for j in 0..m {
        for (i, &pi) in p.iter().enumerate() {
            let rx = pi * gain[[i, j]];
            if i == j {
                signal[j] = rx;
            } else {
                interference[j] += rx;
            }
        }
    }
    (signal, interference)
}

/// `f_i = log2(1 + p_i G_ii / (N + sum_{j != i} p_j G_ji))`.
pub fn rates(gain: &Array2<f64>, p: &[f64], noise: f64) -> Result<RateVector> {
    check_inputs(gain, p, noise)?;
    let (signal, interference) = signal_and_interference(gain, p, noise);
    Ok(RateVector(
        signal
            .iter()
            .zip(&interference)
            .map(|(s, i)| (s / i).ln_1p() / LN_2)
            .collect(),
    ))
}

/// Rates together with the vector-Jacobian product `w^T (df/dp)`.
///
/// With `S_i` the signal and `I_i` the interference-plus-noise at receiver
/// `i`, `df_i/dp_i = G_ii / ((S_i + I_i) ln 2)` and, for `j != i`,
/// `df_i/dp_j = -G_ji S_i / (I_i (S_i + I_i) ln 2)`.
pub fn rates_vjp(gain: &Array2<f64>, p: &[f64], noise: f64, w: &[f64]) -> Result<(RateVector, Vec<f64>)> {
    let m = check_inputs(gain, p, noise)?;
    if w.len() != m {
        return Err(RrmError::Domain(format!("cotangent has {} entries, expected {m}", w.len())));
    }
    let (signal, interference) = signal_and_interference(gain, p, noise);
    let f: Vec<f64> = signal
        .iter()
        .zip(&interference)
        .map(|(s, i)| (s / i).ln_1p() / LN_2)
        .collect();
    let mut grad = vec![0.0; m];
    for i in 0..m {
        let total = signal[i] + interference[i];
        let direct = w[i] / (total * LN_2);
        let cross = -w[i] * signal[i] / (interference[i] * total * LN_2);
        for (j, g) in grad.iter_mut().enumerate() {
            *g += if j == i { direct * gain[[i, i]] } else { cross * gain[[j, i]] };
        }
    }
    Ok((RateVector(f), grad))
}

/// Sum-rate utility.
pub fn utility(x: &[f64]) -> f64 {
    x.iter().sum()
}

pub fn constraints(x: &[f64], f_min: f64) -> ConstraintSlack {
    ConstraintSlack(x.iter().map(|v| v - f_min).collect())
}

/// Elementwise mean over a window of rate vectors.
pub fn ergodic_average<R: AsRef<[f64]>>(window: &[R]) -> Result<RateVector> {
    let first = window
        .first()
        .ok_or_else(|| RrmError::Domain("ergodic average over an empty window".into()))?;
    let m = first.as_ref().len();
    let mut acc = vec![0.0; m];
    for r in window {
        let r = r.as_ref();
        if r.len() != m {
            return Err(RrmError::Domain("rate vectors in window differ in length".into()));
        }
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    let n = window.len() as f64;
    Ok(RateVector(acc.into_iter().map(|a| a / n).collect()))
}

impl AsRef<[f64]> for RateVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}
