//! The augmented Lagrangian over an episode and the projected dual-descent
//! dynamics that run alongside it.

use std::ops::Deref;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::NetworkState;
use crate::error::{Result, RrmError};
use crate::gnn::{EpisodeLoss, GradientVector, PolicyNet};
use crate::rate::{self, ConstraintSlack, PowerAllocation, RateVector};

/// Nonnegative multipliers, one per minimum-rate constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DualVariables(Vec<f64>);

impl DualVariables {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if let Some(i) = mu.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(RrmError::Domain(format!("dual variable {i} = {} is not >= 0", mu[i])));
        }
        Ok(DualVariables(mu))
    }

    pub fn zeros(m: usize) -> Self {
        DualVariables(vec![0.0; m])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DualVariables {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `mu_{k+1} = max(mu_k - eta * slack, 0)`.
pub fn dual_update(mu: &DualVariables, slack: &ConstraintSlack, eta: f64) -> Result<DualVariables> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(RrmError::config("eta_mu", "must be >= 0"));
    }
    if slack.len() != mu.len() {
        return Err(RrmError::Domain(format!(
            "{} slacks for {} dual variables",
            slack.len(),
            mu.len()
        )));
    }
    if let Some(i) = slack.iter().position(|s| !s.is_finite()) {
        return Err(RrmError::numeric("dual_update", format!("slack {i} = {}", slack[i])));
    }
    Ok(DualVariables(
        mu.iter().zip(slack.iter()).map(|(m, s)| (m - eta * s).max(0.0)).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangianParts {
    pub utility: f64,
    pub penalty: f64,
}

impl LagrangianParts {
    pub fn value(&self) -> f64 {
        self.utility + self.penalty
    }

    /// `U(x) + mu^T g(x)` for sum-rate utility and `g_i = x_i - f_min`.
    pub fn evaluate(mean_rates: &[f64], mu: &[f64], f_min: f64) -> Self {
        let slack = rate::constraints(mean_rates, f_min);
        LagrangianParts {
            utility: rate::utility(mean_rates),
            penalty: mu.iter().zip(slack.iter()).map(|(m, g)| m * g).sum(),
        }
    }
}

/// Episode objective with the dual variables held fixed over all steps.
/// The network outputs are the per-step powers.
pub struct LagrangianLoss<'a> {
    pub states: &'a [NetworkState],
    pub mu: &'a [f64],
    pub f_min: f64,
    pub noise: f64,
}

impl EpisodeLoss for LagrangianLoss<'_> {
    fn value_and_grad(&self, outputs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        if outputs.len() != self.states.len() || outputs.is_empty() {
            return Err(RrmError::Domain("one power vector per state is required".into()));
        }
        let steps = outputs.len() as f64;
        // dL/df_{t,i} = (1 + mu_i) / T for every step.
        let weight: Vec<f64> = self.mu.iter().map(|m| (1.0 + m) / steps).collect();
        let mut per_step = Vec::with_capacity(outputs.len());
        let mut grads = Vec::with_capacity(outputs.len());
        for (p, s) in outputs.iter().zip(self.states) {
            let (f, g) = rate::rates_vjp(&s.gain, p, self.noise, &weight)?;
            per_step.push(f);
            grads.push(g);
        }
        let mean = rate::ergodic_average(&per_step)?;
        Ok((LagrangianParts::evaluate(&mean, self.mu, self.f_min).value(), grads))
    }
}

/// Result of evaluating the Lagrangian (and optionally its gradient) on one
/// episode with fixed duals.
#[derive(Debug, Clone)]
pub struct EpisodeEvaluation {
    pub parts: LagrangianParts,
    pub mean_rates: RateVector,
    pub powers: Vec<PowerAllocation>,
    pub rates: Vec<RateVector>,
    pub grad: Option<GradientVector>,
}

impl EpisodeEvaluation {
    pub fn lagrangian(&self) -> f64 {
        self.parts.value()
    }
}

fn check_episode(mu: &[f64], states: &[NetworkState]) -> Result<()> {
    if states.is_empty() {
        return Err(RrmError::Domain("episode has no states".into()));
    }
    if let Some(i) = mu.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(RrmError::Domain(format!("dual variable {i} = {} is not >= 0", mu[i])));
    }
    let m = states[0].gain.nrows();
    if mu.len() != m {
        return Err(RrmError::config("duals", format!("{} duals for {m} users", mu.len())));
    }
    Ok(())
}

/// `L = U(x) + mu^T g(x)` with `x` the episode-average rates under powers
/// `p(H_t, mu)`.
pub fn lagrangian(
    policy: &PolicyNet,
    mu: &[f64],
    states: &[NetworkState],
    f_min: f64,
    noise: f64,
) -> Result<EpisodeEvaluation> {
    check_episode(mu, states)?;
    let mut powers = Vec::with_capacity(states.len());
    let mut rates = Vec::with_capacity(states.len());
    for s in states {
        let p = policy.forward(&s.gain, mu)?;
        rates.push(rate::rates(&s.gain, &p, noise)?);
        powers.push(PowerAllocation(p));
    }
    let mean_rates = rate::ergodic_average(&rates)?;
    Ok(EpisodeEvaluation {
        parts: LagrangianParts::evaluate(&mean_rates, mu, f_min),
        mean_rates,
        powers,
        rates,
        grad: None,
    })
}

/// [`lagrangian`] plus its exact gradient with respect to the policy
/// parameters.
pub fn lagrangian_with_grad(
    policy: &PolicyNet,
    mu: &[f64],
    states: &[NetworkState],
    f_min: f64,
    noise: f64,
) -> Result<EpisodeEvaluation> {
    check_episode(mu, states)?;
    let graphs = states
        .iter()
        .map(|s| policy.graph(&s.gain, mu))
        .collect::<Result<Vec<_>>>()?;
    let loss = LagrangianLoss {
        states,
        mu,
        f_min,
        noise,
    };
    let (_, outputs, grad) = crate::gnn::loss_and_grad_with_outputs(&policy.gnn, &graphs, &loss)?;
    let rates = outputs
        .iter()
        .zip(states)
        .map(|(p, s)| rate::rates(&s.gain, p, noise))
        .collect::<Result<Vec<_>>>()?;
    let mean_rates = rate::ergodic_average(&rates)?;
    Ok(EpisodeEvaluation {
        parts: LagrangianParts::evaluate(&mean_rates, mu, f_min),
        mean_rates,
        powers: outputs.into_iter().map(PowerAllocation).collect(),
        rates,
        grad: Some(grad),
    })
}

/// Slack of the window-average rates when the policy runs with `mu_k`.
pub fn window_constraint(
    policy: &PolicyNet,
    mu_k: &[f64],
    window: &[NetworkState],
    f_min: f64,
    noise: f64,
) -> Result<ConstraintSlack> {
    let eval = lagrangian(policy, mu_k, window, f_min, noise)?;
    Ok(rate::constraints(&eval.mean_rates, f_min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualDynamics {
    /// Steps between dual updates (`T_0`).
    pub window: usize,
    pub eta_mu: f64,
    pub f_min: f64,
}

/// Time-indexed record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub window: usize,
    pub f_min: f64,
    pub powers: Vec<PowerAllocation>,
    pub rates: Vec<RateVector>,
    /// Dual iterates `mu_0 .. mu_K`; `mu_k` is in force during window `k`.
    pub duals: Vec<DualVariables>,
    pub window_rates: Vec<RateVector>,
    pub slacks: Vec<ConstraintSlack>,
    /// Lagrangian of the full-episode average rates at the final iterate.
    pub parts: LagrangianParts,
}

impl EpisodeTrace {
    pub fn steps(&self) -> usize {
        self.rates.len()
    }

    pub fn users(&self) -> usize {
        self.rates.first().map_or(0, |r| r.len())
    }

    pub fn ergodic_rates(&self) -> Result<RateVector> {
        rate::ergodic_average(&self.rates)
    }

    /// Dual iterates after each update, `mu_1 .. mu_K`.
    pub fn updated_duals(&self) -> &[DualVariables] {
        &self.duals[1..]
    }
}

/// Runs `steps = states.len()` decisions with dual updates every
/// `dynamics.window` steps. `decide(t, gain, mu_k)` produces the powers.
pub fn run_episode<F>(
    states: &[NetworkState],
    mu0: DualVariables,
    dynamics: &DualDynamics,
    noise: f64,
    mut decide: F,
) -> Result<EpisodeTrace>
where
    F: FnMut(usize, &Array2<f64>, &DualVariables) -> Result<Vec<f64>>,
{
    let window = dynamics.window;
    if window == 0 || states.is_empty() || !states.len().is_multiple_of(window) {
        return Err(RrmError::config(
            "t0",
            format!("episode length {} must be a positive multiple of T0 = {window}", states.len()),
        ));
    }
    let mut powers = Vec::with_capacity(states.len());
    let mut rates = Vec::with_capacity(states.len());
    let mut duals = vec![mu0];
    let mut window_rates = Vec::new();
    let mut slacks = Vec::new();
    for (t, s) in states.iter().enumerate() {
        let mu = duals.last().unwrap();
        let p = decide(t, &s.gain, mu)?;
        rates.push(rate::rates(&s.gain, &p, noise)?);
        powers.push(PowerAllocation(p));
        if (t + 1) % window == 0 {
            let avg = rate::ergodic_average(&rates[t + 1 - window..=t])?;
            let slack = rate::constraints(&avg, dynamics.f_min);
            let next = dual_update(mu, &slack, dynamics.eta_mu)?;
            window_rates.push(avg);
            slacks.push(slack);
            duals.push(next);
        }
    }
    let mean = rate::ergodic_average(&rates)?;
    let parts = LagrangianParts::evaluate(&mean, duals.last().unwrap(), dynamics.f_min);
    Ok(EpisodeTrace {
        window,
        f_min: dynamics.f_min,
        powers,
        rates,
        duals,
        window_rates,
        slacks,
        parts,
    })
}

/// Replays dual dynamics over already-computed per-step rates. Used when
/// decisions did not depend on the evolving duals. Returns the iterates
/// `mu_0 .. mu_K` and the window slacks.
pub fn replay_dual_dynamics(
    rates: &[RateVector],
    mu0: DualVariables,
    dynamics: &DualDynamics,
) -> Result<(Vec<DualVariables>, Vec<ConstraintSlack>)> {
    let window = dynamics.window;
    if window == 0 || rates.is_empty() || !rates.len().is_multiple_of(window) {
        return Err(RrmError::config("t0", "episode length must be a positive multiple of T0"));
    }
    let mut duals = vec![mu0];
    let mut slacks = Vec::with_capacity(rates.len() / window);
    for chunk in rates.chunks(window) {
        let slack = rate::constraints(&rate::ergodic_average(chunk)?, dynamics.f_min);
        let next = dual_update(duals.last().unwrap(), &slack, dynamics.eta_mu)?;
        duals.push(next);
        slacks.push(slack);
    }
    Ok((duals, slacks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{layer_dims, EdgeNormalization, GnnParams};
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn states(gains: &[Array2<f64>]) -> Vec<NetworkState> {
        gains
            .iter()
            .enumerate()
            .map(|(t, g)| NetworkState { t, gain: g.clone() })
            .collect()
    }

    fn policy(seed: u64) -> PolicyNet {
        let params = GnnParams::init(&layer_dims(1, &[8, 8]), seed).unwrap();
        PolicyNet::new(params, 0.01, 1.0, EdgeNormalization::new(1e-4, 3.0).unwrap()).unwrap()
    }

    fn gains(seed: u64, m: usize, steps: usize) -> Vec<NetworkState> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed);
        let g: Vec<Array2<f64>> = (0..steps)
            .map(|_| {
                Array2::from_shape_fn((m, m), |(i, j)| {
                    let e: f64 = if i == j { rng.random_range(-5.0..-2.0) } else { rng.random_range(-10.0..-6.0) };
                    10f64.powf(e)
                })
            })
            .collect();
        states(&g)
    }

    #[test]
    fn dual_update_fixtures() {
        let mu = DualVariables::new(vec![0.4, 1.0]).unwrap();
        assert_eq!(dual_update(&mu, &ConstraintSlack(vec![0.0, 0.0]), 2.0).unwrap(), mu);
        let small = DualVariables::new(vec![0.1]).unwrap();
        assert_eq!(dual_update(&small, &ConstraintSlack(vec![1.0]), 2.0).unwrap().0, vec![0.0]);
        let mu = DualVariables::new(vec![1.0, 0.0]).unwrap();
        let next = dual_update(&mu, &ConstraintSlack(vec![-0.2, -0.2]), 2.0).unwrap();
        assert_relative_eq!(next[0], 1.4, epsilon = 1e-15);
        assert_relative_eq!(next[1], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn negative_duals_are_rejected() {
        assert!(matches!(DualVariables::new(vec![0.1, -1e-9]), Err(RrmError::Domain(_))));
        let st = gains(1, 2, 2);
        assert!(matches!(lagrangian(&policy(1), &[-0.5, 0.0], &st, 0.1, 1e-12), Err(RrmError::Domain(_))));
    }

    #[test]
    fn parts_fixture() {
        // x = (0.7, 0.3), f_min = 0.5, mu = (1, 2): 1.0 + (0.2 - 0.4) = 0.8.
        let parts = LagrangianParts::evaluate(&[0.7, 0.3], &[1.0, 2.0], 0.5);
        assert_relative_eq!(parts.utility, 1.0, epsilon = 1e-15);
        assert_relative_eq!(parts.penalty, -0.2, epsilon = 1e-15);
        assert_relative_eq!(parts.value(), 0.8, epsilon = 1e-15);
        // Zero slack kills the penalty for any mu.
        let parts = LagrangianParts::evaluate(&[0.5, 0.5], &[3.0, 7.0], 0.5);
        assert_eq!(parts.penalty, 0.0);
    }

    #[test]
    fn zero_duals_give_pure_utility() {
        let st = gains(2, 3, 4);
        let eval = lagrangian(&policy(4), &[0.0; 3], &st, 0.8, 1e-12).unwrap();
        assert_eq!(eval.parts.penalty, 0.0);
        assert_eq!(eval.lagrangian(), rate::utility(&eval.mean_rates));
    }

    #[test]
    fn gradient_path_matches_plain_evaluation() {
        let st = gains(3, 3, 5);
        let pol = policy(5);
        let mu = [0.2, 1.1, 0.0];
        let a = lagrangian(&pol, &mu, &st, 0.5, 1e-12).unwrap();
        let b = lagrangian_with_grad(&pol, &mu, &st, 0.5, 1e-12).unwrap();
        assert_eq!(a.parts, b.parts);
        assert_eq!(a.rates, b.rates);
        assert!(b.grad.is_some());
    }

    #[test]
    fn single_window_consistency() {
        let st = gains(6, 3, 5);
        let pol = policy(6);
        let mu = [0.7, 0.1, 0.4];
        let eval = lagrangian(&pol, &mu, &st, 0.5, 1e-12).unwrap();
        let slack = window_constraint(&pol, &mu, &st, 0.5, 1e-12).unwrap();
        let expected = rate::utility(&eval.mean_rates) + mu.iter().zip(slack.iter()).map(|(m, g)| m * g).sum::<f64>();
        assert!((eval.lagrangian() - expected).abs() <= 1e-12);
        assert!((eval.lagrangian() - (eval.parts.utility + eval.parts.penalty)).abs() <= 1e-12);
    }

    #[test]
    fn window_slack_fixtures() {
        // Powers fixed so rates are known: an isolated link with SNR 1 gives 1 bit.
        let g = array![[1.0, 0.0], [0.0, 3.0]];
        let st = states(&vec![g; 5]);
        let dynamics = DualDynamics {
            window: 5,
            eta_mu: 2.0,
            f_min: 1.0,
        };
        let trace = run_episode(&st, DualVariables::zeros(2), &dynamics, 1.0, |_, _, _| Ok(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(trace.slacks[0][0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(trace.slacks[0][1], 1.0, epsilon = 1e-15);
        // T0 = 1: slack of each step's own rates.
        let dynamics = DualDynamics { window: 1, ..dynamics };
        let trace = run_episode(&st[..2], DualVariables::zeros(2), &dynamics, 1.0, |t, _, _| {
            Ok(vec![1.0, if t == 0 { 0.0 } else { 1.0 }])
        })
        .unwrap();
        assert_eq!(trace.slacks[0].0, vec![0.0, -1.0]);
        assert_eq!(trace.duals[1].0, vec![0.0, 2.0]);
        assert_relative_eq!(trace.slacks[1][1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn five_step_window_hand_average() {
        // Rates per step for user 0: log2(1 + p) with p = 0, 1, 3, 7, 15 → 0,1,2,3,4.
        let g = array![[1.0]];
        let st = states(&vec![g; 5]);
        let p = [0.0, 1.0, 3.0, 7.0, 15.0];
        let dynamics = DualDynamics {
            window: 5,
            eta_mu: 0.5,
            f_min: 2.5,
        };
        let trace = run_episode(&st, DualVariables::zeros(1), &dynamics, 1.0, |t, _, _| Ok(vec![p[t]])).unwrap();
        assert_relative_eq!(trace.window_rates[0][0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(trace.slacks[0][0], -0.5, epsilon = 1e-14);
        assert_relative_eq!(trace.duals[1][0], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn ragged_episode_is_rejected() {
        let st = gains(1, 2, 7);
        let dynamics = DualDynamics {
            window: 5,
            eta_mu: 1.0,
            f_min: 0.1,
        };
        assert!(run_episode(&st, DualVariables::zeros(2), &dynamics, 1e-12, |_, _, _| Ok(vec![0.0; 2])).is_err());
    }

    #[test]
    fn replay_matches_run_episode() {
        let st = gains(9, 3, 10);
        let pol = policy(2);
        let mu0 = DualVariables::new(vec![0.3, 0.0, 0.9]).unwrap();
        let dynamics = DualDynamics {
            window: 5,
            eta_mu: 2.0,
            f_min: 1.5,
        };
        let fixed = mu0.clone();
        let trace = run_episode(&st, mu0.clone(), &dynamics, 1e-12, |_, g, _| pol.forward(g, &fixed)).unwrap();
        let (duals, slacks) = replay_dual_dynamics(&trace.rates, mu0, &dynamics).unwrap();
        assert_eq!(trace.duals, duals);
        assert_eq!(trace.slacks, slacks);
    }

    proptest! {
        #[test]
        fn projection_and_direction(mu in prop::collection::vec(0.0f64..5.0, 4), slack in prop::collection::vec(-2.0f64..2.0, 4), eta in 0.01f64..4.0) {
            let mu = DualVariables::new(mu).unwrap();
            let slack = ConstraintSlack(slack);
            let next = dual_update(&mu, &slack, eta).unwrap();
            for i in 0..4 {
                prop_assert!(next[i] >= 0.0);
                if slack[i] < 0.0 {
                    prop_assert!(next[i] > mu[i]);
                    prop_assert!((next[i] - (mu[i] + eta * slack[i].abs())).abs() <= 1e-12);
                } else {
                    prop_assert!(next[i] <= mu[i]);
                }
            }
        }

        #[test]
        fn decomposition_holds(seed in 0u64..1000, mu in prop::collection::vec(0.0f64..3.0, 3), f_min in 0.0f64..3.0) {
            let st = gains(seed, 3, 3);
            let eval = lagrangian(&policy(seed), &mu, &st, f_min, 1e-12).unwrap();
            let lhs = eval.lagrangian();
            prop_assert!((lhs - (eval.parts.utility + eval.parts.penalty)).abs() <= 1e-12);
        }
    }
}
