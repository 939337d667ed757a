#![allow(dead_code)]

use rand::Rng;
use stateaug_rrm::channel::{generate_realization, sample_fading_sequence, FadingModel, GeometryConfig, NetworkState};
use stateaug_rrm::gnn::{layer_dims, EdgeNormalization, GnnParams, PolicyNet};
use stateaug_rrm::lagrangian::{lagrangian, lagrangian_with_grad};
use stateaug_rrm::rate::dbm_to_watts;
use stateaug_rrm::rng;

pub const P_MAX_DBM: f64 = 10.0;
pub const NOISE_DBM: f64 = -104.0;

/// One random Lagrangian instance.
pub struct Instance {
    pub policy: PolicyNet,
    pub mu: Vec<f64>,
    pub states: Vec<NetworkState>,
    pub f_min: f64,
    pub noise: f64,
}

pub fn random_instance(seed: u64, max_users: usize, max_steps: usize, hidden: &[usize]) -> Instance {
    let mut r = rng::substream(seed, &[0]);
    let m = r.random_range(2..=max_users);
    let t = r.random_range(1..=max_steps);
    let geo = GeometryConfig { users: m, ..Default::default() };
    let real = generate_realization(&geo, seed).unwrap();
    let states = sample_fading_sequence(&real, t, FadingModel::Rayleigh, seed).unwrap();
    let norm = EdgeNormalization::from_direct_links([&real.long_term_gain], 3.0).unwrap();
    let params = GnnParams::init(&layer_dims(1, hidden), seed).unwrap();
    let policy = PolicyNet::new(params, dbm_to_watts(P_MAX_DBM), 1.0, norm).unwrap();
    let mu = (0..m).map(|_| r.random_range(0.0..2.0)).collect();
    Instance { policy, mu, states, f_min: 0.5, noise: dbm_to_watts(NOISE_DBM) }
}

impl Instance {
    pub fn value(&self, policy: &PolicyNet) -> f64 {
        lagrangian(policy, &self.mu, &self.states, self.f_min, self.noise).unwrap().lagrangian()
    }

    pub fn analytic(&self) -> Vec<f64> {
        lagrangian_with_grad(&self.policy, &self.mu, &self.states, self.f_min, self.noise)
            .unwrap()
            .grad
            .unwrap()
            .0
    }

    fn patterns(&self, policy: &PolicyNet) -> Vec<Vec<bool>> {
        self.states
            .iter()
            .map(|s| policy.gnn.activation_pattern(&policy.graph(&s.gain, &self.mu).unwrap()).unwrap())
            .collect()
    }
}

/// Result of a central-difference comparison.
pub struct FdReport {
    /// Largest relative error over checked coordinates.
    pub worst: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates whose +-h probes change a leaky-ReLU activation.
    pub skipped_kinks: usize,
    /// Coordinates smaller than the difference quotient can resolve.
    pub below_resolution: usize,
    /// Rounding error of one difference quotient, `eps * |L| / h`.
    pub resolution: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences against the analytic gradient. Coordinates whose
/// magnitude is under `10 * resolution / tol` are compared on that scale,
/// since the quotient cannot resolve them more finely.
pub fn finite_difference_check(inst: &Instance, h: f64, tol: f64) -> FdReport {
    let analytic = inst.analytic();
    let base = inst.patterns(&inst.policy);
    let resolution = f64::EPSILON * inst.value(&inst.policy).abs().max(1.0) / h;
    let floor = 10.0 * resolution / tol;
    let mut rep = FdReport { worst: 0.0, worst_index: 0, checked: 0, skipped_kinks: 0, below_resolution: 0, resolution };
    for k in 0..analytic.len() {
        let mut plus = inst.policy.clone();
        plus.gnn.params.as_mut_slice()[k] += h;
        let mut minus = inst.policy.clone();
        minus.gnn.params.as_mut_slice()[k] -= h;
        if inst.patterns(&plus) != base || inst.patterns(&minus) != base {
            rep.skipped_kinks += 1;
            continue;
        }
        let numeric = (inst.value(&plus) - inst.value(&minus)) / (2.0 * h);
        let e = rel_err(analytic[k], numeric, floor);
        rep.checked += 1;
        if analytic[k].abs().max(numeric.abs()) < floor {
            rep.below_resolution += 1;
        }
        if e > rep.worst {
            rep.worst = e;
            rep.worst_index = k;
        }
    }
    rep
}
