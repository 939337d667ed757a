//! Rate metrics pooled over users and networks.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmError};
use crate::lagrangian::EpisodeTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateMetrics {
    pub mean: f64,
    pub min: f64,
    pub p5: f64,
}

/// Inclusive linear-interpolation percentile of a sorted slice, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, minimum and 5th percentile of a pool of per-user ergodic rates.
pub fn rate_metrics(pool: &[f64]) -> Result<RateMetrics> {
    if pool.is_empty() {
        return Err(RrmError::Domain("rate metrics of an empty pool".into()));
    }
    if let Some(v) = pool.iter().find(|v| !v.is_finite()) {
        return Err(RrmError::numeric("rate_metrics", format!("pool entry {v}")));
    }
    let mut sorted = pool.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Summing in sorted order makes the result independent of pool order.
    let mean = sorted.iter().sum::<f64>() / pool.len() as f64;
    Ok(RateMetrics {
        mean,
        min: sorted[0],
        p5: percentile_sorted(&sorted, 0.05),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Number of steps averaged.
    pub t: usize,
    pub metrics: RateMetrics,
}

/// Metrics of the running ergodic averages `(1/t) sum_{tau < t} f_tau`,
/// pooled over users of all traces, at `t = stride, 2 stride, ...` and at
/// the final step.
pub fn evolution_curves(traces: &[&EpisodeTrace], stride: usize) -> Result<Vec<CurvePoint>> {
    let first = traces
        .first()
        .ok_or_else(|| RrmError::Domain("no traces to summarize".into()))?;
    if stride == 0 {
        return Err(RrmError::Domain("stride must be positive".into()));
    }
    let steps = first.steps();
    if steps == 0 || traces.iter().any(|t| t.steps() != steps) {
        return Err(RrmError::Domain("traces must be non-empty and equally long".into()));
    }
    let mut sums: Vec<Vec<f64>> = traces.iter().map(|t| vec![0.0; t.users()]).collect();
    let mut out = Vec::new();
    for t in 1..=steps {
        for (sum, trace) in sums.iter_mut().zip(traces) {
            sum.iter_mut().zip(trace.rates[t - 1].iter()).for_each(|(s, f)| *s += f);
        }
        if t % stride == 0 || t == steps {
            let pool: Vec<f64> = sums.iter().flatten().map(|s| s / t as f64).collect();
            out.push(CurvePoint {
                t,
                metrics: rate_metrics(&pool)?,
            });
        }
    }
    Ok(out)
}

/// Pools the full-episode ergodic rates of every user in every trace.
pub fn pooled_ergodic_rates(traces: &[&EpisodeTrace]) -> Result<Vec<f64>> {
    let mut pool = Vec::new();
    for t in traces {
        pool.extend(t.ergodic_rates()?.0);
    }
    Ok(pool)
}

/// Settling time of the running minimum rate: the first `t` after which the
/// minimum over users of the running ergodic average stays at or above
/// `fraction` of its final value.
pub fn transient_length(trace: &EpisodeTrace, fraction: f64) -> Result<usize> {
    let steps = trace.steps();
    if steps == 0 {
        return Err(RrmError::Domain("empty trace".into()));
    }
    let mut sums = vec![0.0; trace.users()];
    let running_min: Vec<f64> = trace
        .rates
        .iter()
        .enumerate()
        .map(|(t, r)| {
            sums.iter_mut().zip(r.iter()).for_each(|(s, f)| *s += f);
            sums.iter().map(|s| s / (t + 1) as f64).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let target = fraction * running_min[steps - 1];
    let settled = running_min.iter().rposition(|&v| v < target).map_or(0, |i| i + 1);
    Ok(settled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{DualVariables, LagrangianParts};
    use crate::rate::RateVector;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn trace_from(rates: Vec<Vec<f64>>) -> EpisodeTrace {
        let m = rates[0].len();
        EpisodeTrace {
            window: 1,
            f_min: 0.0,
            powers: vec![],
            rates: rates.into_iter().map(RateVector).collect(),
            duals: vec![DualVariables::zeros(m)],
            window_rates: vec![],
            slacks: vec![],
            parts: LagrangianParts {
                utility: 0.0,
                penalty: 0.0,
            },
        }
    }

    #[test]
    fn constant_pool() {
        let m = rate_metrics(&[0.7; 9]).unwrap();
        assert_relative_eq!(m.mean, 0.7, max_relative = 1e-15);
        assert_eq!((m.min, m.p5), (0.7, 0.7));
    }

    #[test]
    fn grid_percentile() {
        let pool: Vec<f64> = (1..=100).map(f64::from).collect();
        let m = rate_metrics(&pool).unwrap();
        assert_relative_eq!(m.p5, 5.95, epsilon = 1e-12);
        assert_relative_eq!(m.mean, 50.5);
        assert_eq!(m.min, 1.0);
    }

    #[test]
    fn two_point_pool() {
        let m = rate_metrics(&[0.8, 0.2]).unwrap();
        assert_relative_eq!(m.mean, 0.5);
        assert_eq!(m.min, 0.2);
        assert_relative_eq!(m.p5, 0.23, epsilon = 1e-12);
        assert!(matches!(rate_metrics(&[]), Err(RrmError::Domain(_))));
    }

    #[test]
    fn flat_curves_for_constant_rates() {
        let tr = trace_from(vec![vec![1.0, 2.0]; 10]);
        for p in evolution_curves(&[&tr], 3).unwrap() {
            assert_relative_eq!(p.metrics.mean, 1.5);
            assert_relative_eq!(p.metrics.min, 1.0);
        }
    }

    #[test]
    fn alternating_rates_converge_with_inverse_t_envelope() {
        let rates: Vec<Vec<f64>> = (0..200).map(|t| vec![if t % 2 == 0 { 0.0 } else { 2.0 }]).collect();
        let tr = trace_from(rates);
        for p in evolution_curves(&[&tr], 1).unwrap() {
            assert!((p.metrics.mean - 1.0).abs() <= 1.0 / p.t as f64 + 1e-12);
        }
    }

    #[test]
    fn three_trace_fixture() {
        // Per-step rates chosen so running means are easy by hand.
        let a = trace_from((0..10).map(|t| vec![t as f64]).collect());
        let b = trace_from(vec![vec![1.0]; 10]);
        let c = trace_from((0..10).map(|t| vec![if t < 5 { 0.0 } else { 4.0 }]).collect());
        let pts = evolution_curves(&[&a, &b, &c], 5).unwrap();
        assert_eq!(pts.iter().map(|p| p.t).collect::<Vec<_>>(), vec![5, 10]);
        // t = 5: a -> (0+1+2+3+4)/5 = 2, b -> 1, c -> 0.
        assert_relative_eq!(pts[0].metrics.mean, 1.0);
        assert_relative_eq!(pts[0].metrics.min, 0.0);
        assert_relative_eq!(pts[0].metrics.p5, 0.1, epsilon = 1e-12);
        // t = 10: a -> 4.5, b -> 1, c -> 2.
        assert_relative_eq!(pts[1].metrics.mean, 7.5 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(pts[1].metrics.min, 1.0);
        assert_relative_eq!(pts[1].metrics.p5, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn misaligned_traces_rejected() {
        let a = trace_from(vec![vec![1.0]; 4]);
        let b = trace_from(vec![vec![1.0]; 5]);
        assert!(matches!(evolution_curves(&[&a, &b], 2), Err(RrmError::Domain(_))));
    }

    #[test]
    fn transient_settles() {
        // Running min: 0, 0, 0, then climbs toward 1.
        let mut rates = vec![vec![0.0, 1.0]; 3];
        rates.extend(vec![vec![1.0, 1.0]; 97]);
        let tr = trace_from(rates);
        let n = transient_length(&tr, 0.9).unwrap();
        // Final running min is 0.97; need (t-3)/t >= 0.873, i.e. t >= 23.6.
        assert_eq!(n, 23);
    }

    #[test]
    fn p5_can_exceed_mean_with_a_low_outlier() {
        // The 5th percentile sits above a single extreme low value.
        let mut pool = vec![10.0; 99];
        pool.push(0.0);
        let m = rate_metrics(&pool).unwrap();
        assert!(m.p5 > m.mean);
    }

    proptest! {
        #[test]
        fn ordering_and_permutation_invariance(mut pool in prop::collection::vec(0.0f64..10.0, 1..60), seed in any::<u64>()) {
            let m = rate_metrics(&pool).unwrap();
            prop_assert!(m.min <= m.p5);
            prop_assert!(m.min <= m.mean);
            use rand::seq::SliceRandom;
            pool.shuffle(&mut crate::rng::stream(seed));
            prop_assert_eq!(rate_metrics(&pool).unwrap(), m);
        }

        #[test]
        fn curve_endpoint_matches_full_metrics(rates in prop::collection::vec(prop::collection::vec(0.0f64..5.0, 3), 1..40)) {
            let tr = trace_from(rates);
            let last = *evolution_curves(&[&tr], 7).unwrap().last().unwrap();
            let full = rate_metrics(&pooled_ergodic_rates(&[&tr]).unwrap()).unwrap();
            prop_assert!((last.metrics.mean - full.mean).abs() <= 1e-12);
            prop_assert!((last.metrics.min - full.min).abs() <= 1e-12);
            prop_assert!((last.metrics.p5 - full.p5).abs() <= 1e-12);
        }
    }
}
