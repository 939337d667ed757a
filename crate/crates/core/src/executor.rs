//! Online execution of trained models and of the baseline policies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{full_reuse, itlinq_schedule, ItlinqConfig};
use crate::channel::{sample_fading_sequence, FadingModel, NetworkRealization};
use crate::error::{Result, RrmError};
use crate::gnn::{PolicyNet, RegressorNet};
use crate::lagrangian::{run_episode, DualDynamics, DualVariables, EpisodeTrace};
use crate::rng;
use crate::trainer::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Regressor,
    Zeros,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub steps: usize,
    pub window: usize,
    pub eta_mu: f64,
    pub init: InitMode,
    /// Fraction of the episode discarded before feasibility is judged.
    pub burn_in_fraction: f64,
    /// Running-min level that ends the transient.
    pub transient_fraction: f64,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            steps: 200,
            window: 5,
            eta_mu: 2.0,
            init: InitMode::Regressor,
            burn_in_fraction: 0.25,
            transient_fraction: 0.9,
        }
    }
}

impl ExecutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.steps == 0 || !self.steps.is_multiple_of(self.window) {
            return Err(RrmError::config(
                "execution.steps",
                format!("T_exec = {} must be a positive multiple of T0 = {}", self.steps, self.window),
            ));
        }
        if !(self.eta_mu.is_finite() && self.eta_mu >= 0.0) {
            return Err(RrmError::config("execution.eta_mu", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(RrmError::config("execution.burn_in_fraction", "must lie in [0, 1)"));
        }
        if !(self.transient_fraction > 0.0 && self.transient_fraction <= 1.0) {
            return Err(RrmError::config("execution.transient_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        (self.burn_in_fraction * self.steps as f64).floor() as usize
    }
}

/// Initial duals for one execution.
pub fn initial_duals(
    init: InitMode,
    regressor: Option<&RegressorNet>,
    real: &NetworkRealization,
    seed: u64,
) -> Result<DualVariables> {
    let m = real.users();
    match init {
        InitMode::Zeros => Ok(DualVariables::zeros(m)),
        InitMode::Uniform => {
            let mut r = rng::substream(seed, &[rng::EXEC_INIT]);
            DualVariables::new((0..m).map(|_| r.random::<f64>()).collect())
        }
        InitMode::Regressor => {
            let reg = regressor.ok_or_else(|| {
                RrmError::config("execution.init", "regressor initialization requested without a regressor")
            })?;
            DualVariables::new(reg.forward(&real.long_term_gain)?)
        }
    }
}

/// Runs the state-augmented policy on one network: powers come from
/// `policy(H_t, mu_k)` and the duals follow projected dual descent.
pub fn execute(
    policy: &PolicyNet,
    regressor: Option<&RegressorNet>,
    real: &NetworkRealization,
    cfg: &ExecutionConfig,
    problem: &Problem,
    fading: FadingModel,
    seed: u64,
) -> Result<EpisodeTrace> {
    cfg.validate()?;
    let mu0 = initial_duals(cfg.init, regressor, real, seed)?;
    let states = sample_fading_sequence(real, cfg.steps, fading, seed)?;
    run_episode(&states, mu0, &dynamics(cfg, problem), problem.noise, |_, g, mu| policy.forward(g, mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    FullReuse,
    Itlinq,
}

/// Runs a baseline on the same fading states that [`execute`] would see
/// for `seed`. Dual dynamics run alongside so traces share one format; they
/// never influence the baseline's decisions.
pub fn execute_baseline(
    baseline: Baseline,
    itlinq: &ItlinqConfig,
    real: &NetworkRealization,
    cfg: &ExecutionConfig,
    problem: &Problem,
    fading: FadingModel,
    seed: u64,
) -> Result<EpisodeTrace> {
    cfg.validate()?;
    itlinq.validate()?;
    let states = sample_fading_sequence(real, cfg.steps, fading, seed)?;
    let m = real.users();
    let fixed = match baseline {
        Baseline::FullReuse => Some(full_reuse(m, problem.p_max)?.0),
        Baseline::Itlinq if !itlinq.per_step => {
            Some(itlinq_schedule(&real.long_term_gain, problem.noise, problem.p_max, itlinq)?.0)
        }
        Baseline::Itlinq => None,
    };
    run_episode(&states, DualVariables::zeros(m), &dynamics(cfg, problem), problem.noise, |_, g, _| match &fixed {
        Some(p) => Ok(p.clone()),
        None => Ok(itlinq_schedule(g, problem.noise, problem.p_max, itlinq)?.0),
    })
}

fn dynamics(cfg: &ExecutionConfig, problem: &Problem) -> DualDynamics {
    DualDynamics {
        window: cfg.window,
        eta_mu: cfg.eta_mu,
        f_min: problem.f_min,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub burn_in: usize,
    pub average_rates: Vec<f64>,
    /// `average - f_min` per user.
    pub margins: Vec<f64>,
    pub feasible: Vec<bool>,
}

impl FeasibilityReport {
    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|&f| f)
    }
}

/// Per-user average rate over `[burn_in, T)` against `f_min`.
pub fn feasibility_report(trace: &EpisodeTrace, f_min: f64, burn_in: usize) -> Result<FeasibilityReport> {
    if burn_in >= trace.steps() {
        return Err(RrmError::Domain(format!(
            "burn-in {burn_in} leaves no steps of a {}-step trace",
            trace.steps()
        )));
    }
    let average_rates = crate::rate::ergodic_average(&trace.rates[burn_in..])?.0;
    let margins: Vec<f64> = average_rates.iter().map(|x| x - f_min).collect();
    let feasible = margins.iter().map(|&d| d >= 0.0).collect();
    Ok(FeasibilityReport {
        burn_in,
        average_rates,
        margins,
        feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{layer_dims, EdgeNormalization, GnnParams};
    use crate::lagrangian::LagrangianParts;
    use crate::rate::{dbm_to_watts, PowerAllocation, RateVector};
    use ndarray::array;

    fn problem() -> Problem {
        Problem {
            p_max: dbm_to_watts(10.0),
            noise: dbm_to_watts(-104.0),
            f_min: 0.5,
        }
    }

    fn network() -> NetworkRealization {
        NetworkRealization::from_gains(array![[1e-7, 2e-9, 1e-10], [3e-9, 5e-8, 4e-9], [1e-9, 1e-9, 2e-7]]).unwrap()
    }

    fn models() -> (PolicyNet, RegressorNet) {
        let norm = EdgeNormalization::new(1e-7, 3.0).unwrap();
        let dims = layer_dims(1, &[8, 8]);
        (
            PolicyNet::new(GnnParams::init(&dims, 1).unwrap(), problem().p_max, 1.0, norm).unwrap(),
            RegressorNet::new(GnnParams::init(&dims, 2).unwrap(), norm).unwrap(),
        )
    }

    fn trace_with_rates(rates: Vec<Vec<f64>>, f_min: f64) -> EpisodeTrace {
        let m = rates[0].len();
        EpisodeTrace {
            window: 1,
            f_min,
            powers: rates.iter().map(|_| PowerAllocation(vec![0.0; m])).collect(),
            rates: rates.into_iter().map(RateVector).collect(),
            duals: vec![],
            window_rates: vec![],
            slacks: vec![],
            parts: LagrangianParts { utility: 0.0, penalty: 0.0 },
        }
    }

    #[test]
    fn zero_duals_with_frozen_dynamics_are_unconstrained() {
        let (policy, _) = models();
        let cfg = ExecutionConfig { init: InitMode::Zeros, eta_mu: 0.0, steps: 20, ..Default::default() };
        let trace = execute(&policy, None, &network(), &cfg, &problem(), FadingModel::Rayleigh, 3).unwrap();
        assert!(trace.duals.iter().all(|mu| mu.iter().all(|&v| v == 0.0)));
        let states = sample_fading_sequence(&network(), 20, FadingModel::Rayleigh, 3).unwrap();
        for (s, p) in states.iter().zip(&trace.powers) {
            assert_eq!(policy.forward(&s.gain, &[0.0; 3]).unwrap(), p.0);
        }
    }

    #[test]
    fn single_window_has_one_update() {
        let (policy, reg) = models();
        let cfg = ExecutionConfig { steps: 5, window: 5, ..Default::default() };
        let trace = execute(&policy, Some(&reg), &network(), &cfg, &problem(), FadingModel::Rayleigh, 3).unwrap();
        assert_eq!(trace.duals.len(), 2);
        assert_eq!(trace.slacks.len(), 1);
    }

    #[test]
    fn execution_is_deterministic() {
        let (policy, reg) = models();
        let cfg = ExecutionConfig { steps: 50, ..Default::default() };
        let a = execute(&policy, Some(&reg), &network(), &cfg, &problem(), FadingModel::Rayleigh, 11).unwrap();
        let b = execute(&policy, Some(&reg), &network(), &cfg, &problem(), FadingModel::Rayleigh, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regressor_init_uses_regressor_output() {
        let (_, reg) = models();
        let mu = initial_duals(InitMode::Regressor, Some(&reg), &network(), 0).unwrap();
        assert_eq!(mu.to_vec(), reg.forward(&network().long_term_gain).unwrap());
        assert!(matches!(
            initial_duals(InitMode::Regressor, None, &network(), 0),
            Err(RrmError::Config { .. })
        ));
        let u = initial_duals(InitMode::Uniform, None, &network(), 0).unwrap();
        assert!(u.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (policy, _) = models();
        let big = NetworkRealization::from_gains(ndarray::Array2::from_elem((4, 4), 1e-8)).unwrap();
        let (_, reg) = models();
        let cfg = ExecutionConfig::default();
        // A GNN is size-agnostic; a mismatched dual vector is what must fail.
        assert!(execute(&policy, Some(&reg), &big, &cfg, &problem(), FadingModel::None, 0).is_ok());
        let bad = ExecutionConfig { steps: 7, ..Default::default() };
        assert!(matches!(
            execute(&policy, Some(&reg), &network(), &bad, &problem(), FadingModel::None, 0),
            Err(RrmError::Config { .. })
        ));
    }

    #[test]
    fn recomputed_rates_match_trace() {
        let (policy, reg) = models();
        let cfg = ExecutionConfig { steps: 40, ..Default::default() };
        let trace = execute(&policy, Some(&reg), &network(), &cfg, &problem(), FadingModel::Rayleigh, 21).unwrap();
        let states = sample_fading_sequence(&network(), 40, FadingModel::Rayleigh, 21).unwrap();
        for ((s, p), r) in states.iter().zip(&trace.powers).zip(&trace.rates) {
            let again = crate::rate::rates(&s.gain, p, problem().noise).unwrap();
            for (a, b) in again.iter().zip(r.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn duals_rise_on_violated_windows() {
        let (policy, reg) = models();
        let problem = Problem { f_min: 3.0, ..problem() };
        let cfg = ExecutionConfig { steps: 100, ..Default::default() };
        let trace = execute(&policy, Some(&reg), &network(), &cfg, &problem, FadingModel::Rayleigh, 2).unwrap();
        for (k, slack) in trace.slacks.iter().enumerate() {
            for i in 0..3 {
                if slack[i] < 0.0 {
                    let expected = trace.duals[k][i] - cfg.eta_mu * slack[i];
                    assert_eq!(trace.duals[k + 1][i], expected);
                    assert!(trace.duals[k + 1][i] > trace.duals[k][i]);
                }
            }
        }
    }

    #[test]
    fn feasibility_fixtures() {
        let rep = feasibility_report(&trace_with_rates(vec![vec![0.6, 0.6]; 8], 0.5), 0.5, 2).unwrap();
        assert!(rep.all_feasible());
        assert!(rep.margins.iter().all(|m| (m - 0.1).abs() < 1e-12));
        let rep = feasibility_report(&trace_with_rates(vec![vec![0.6, 0.4]; 8], 0.5), 0.5, 0).unwrap();
        assert_eq!(rep.feasible, vec![true, false]);
        assert!((rep.margins[1] + 0.1).abs() < 1e-12);
        assert!(feasibility_report(&trace_with_rates(vec![vec![0.6]; 4], 0.5), 0.5, 4).is_err());
    }

    #[test]
    fn feasibility_margins_are_post_burn_in_means() {
        // Rates (0, 2, 0.3, 0.9, 1.2, 0.6) for one user and burn-in 2:
        // mean of the last four is 3.0 / 4 = 0.75.
        let rates = vec![vec![0.0], vec![2.0], vec![0.3], vec![0.9], vec![1.2], vec![0.6]];
        let rep = feasibility_report(&trace_with_rates(rates, 0.5), 0.5, 2).unwrap();
        assert!((rep.average_rates[0] - 0.75).abs() < 1e-12);
        assert!((rep.margins[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn baselines_run_on_shared_states() {
        let cfg = ExecutionConfig { steps: 10, ..Default::default() };
        let fr = execute_baseline(Baseline::FullReuse, &ItlinqConfig::default(), &network(), &cfg, &problem(), FadingModel::Rayleigh, 4).unwrap();
        assert!(fr.powers.iter().all(|p| p.iter().all(|&v| v == problem().p_max)));
        let it = execute_baseline(Baseline::Itlinq, &ItlinqConfig::default(), &network(), &cfg, &problem(), FadingModel::Rayleigh, 4).unwrap();
        assert!(it.powers.windows(2).all(|w| w[0] == w[1]));
        let per_step = ItlinqConfig { per_step: true, ..Default::default() };
        let ps = execute_baseline(Baseline::Itlinq, &per_step, &network(), &cfg, &problem(), FadingModel::Rayleigh, 4).unwrap();
        assert!(ps.powers.iter().flat_map(|p| p.iter()).all(|&v| v == 0.0 || v == problem().p_max));
    }
}
