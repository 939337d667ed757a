//! Network geometry, large-scale path loss and small-scale fading.
//!
//! Gains are linear power gains `|h|^2`; entry `(i, j)` of every gain matrix
//! is the gain from transmitter `i` to receiver `j`, so the diagonal holds
//! the direct links.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmError};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// Area grows with the user count: `R = sqrt(m / 20) km`.
    Fixed,
    /// Area is fixed at `R = 500 m`.
    Variable,
}

/// Dual-slope path loss with log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossModel {
    /// Reference distance in meters.
    pub reference_distance: f64,
    /// Linear gain at the reference distance.
    pub reference_gain: f64,
    pub near_exponent: f64,
    pub far_exponent: f64,
    /// Distance in meters where the slope switches from near to far.
    pub breakpoint: f64,
    /// Standard deviation of log-normal shadowing, in dB.
    pub shadowing_db: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel {
            reference_distance: 1.0,
            reference_gain: 1.0,
            near_exponent: 2.0,
            far_exponent: 4.0,
            breakpoint: 50.0,
            shadowing_db: 7.0,
        }
    }
}

impl PathLossModel {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.reference_distance) {
            return Err(RrmError::config("channel.reference_distance", "must be > 0"));
        }
        if !pos(self.reference_gain) {
            return Err(RrmError::config("channel.reference_gain", "must be > 0"));
        }
        if !(self.near_exponent.is_finite() && self.near_exponent >= 0.0) {
            return Err(RrmError::config("channel.near_exponent", "must be >= 0"));
        }
        if !(self.far_exponent.is_finite() && self.far_exponent >= 0.0) {
            return Err(RrmError::config("channel.far_exponent", "must be >= 0"));
        }
        if !pos(self.breakpoint) {
            return Err(RrmError::config("channel.breakpoint", "must be > 0"));
        }
        if !(self.shadowing_db.is_finite() && self.shadowing_db >= 0.0) {
            return Err(RrmError::config("channel.shadowing_db", "must be >= 0"));
        }
        Ok(())
    }

    /// Linear path gain at distance `d` meters, without shadowing.
    pub fn pathloss(&self, d: f64) -> Result<f64> {
        if !(d.is_finite() && d > 0.0) {
            return Err(RrmError::Domain(format!(
                "path loss distance must be positive and finite, got {d}"
            )));
        }
        let d0 = self.reference_distance;
        let gain = if d <= self.breakpoint {
            self.reference_gain * (d / d0).powf(-self.near_exponent)
        } else {
            self.reference_gain
                * (self.breakpoint / d0).powf(-self.near_exponent)
                * (d / self.breakpoint).powf(-self.far_exponent)
        };
        Ok(gain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Number of transmitter/receiver pairs.
    pub users: usize,
    pub density: DensityMode,
    /// Receiver distance range `[d_min, d_max]` around its transmitter, meters.
    pub rx_distance: [f64; 2],
    pub pathloss: PathLossModel,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            users: 12,
            density: DensityMode::Fixed,
            rx_distance: [10.0, 100.0],
            pathloss: PathLossModel::default(),
        }
    }
}

impl GeometryConfig {
    pub fn area_radius(&self) -> f64 {
        match self.density {
            DensityMode::Fixed => (self.users as f64 / 20.0).sqrt() * 1000.0,
            DensityMode::Variable => 500.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(RrmError::config("geometry.users", "must be at least 1"));
        }
        let radius = self.area_radius();
        let [d_min, d_max] = self.rx_distance;
        if !(d_min.is_finite() && d_min > 0.0) {
            return Err(RrmError::config("geometry.rx_distance", "d_min must be > 0"));
        }
        if !(d_max.is_finite() && d_max > d_min) {
            return Err(RrmError::config("geometry.rx_distance", "d_max must exceed d_min"));
        }
        if d_max >= radius {
            return Err(RrmError::config(
                "geometry.rx_distance",
                format!("d_max = {d_max} m must be below the area radius {radius:.1} m"),
            ));
        }
        self.pathloss.validate()
    }
}

pub type Point = [f64; 2];

fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// One draw of the network layout and its long-term channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRealization {
    pub tx_positions: Vec<Point>,
    pub rx_positions: Vec<Point>,
    pub long_term_gain: Array2<f64>,
    pub seed: u64,
}

impl NetworkRealization {
    pub fn users(&self) -> usize {
        self.tx_positions.len()
    }

    /// Builds the long-term gains for explicit positions. Shadowing draws
    /// come from a substream of `seed`.
    pub fn from_positions(
        tx_positions: Vec<Point>,
        rx_positions: Vec<Point>,
        model: &PathLossModel,
        seed: u64,
    ) -> Result<Self> {
        let m = tx_positions.len();
        if m == 0 || rx_positions.len() != m {
            return Err(RrmError::Domain(format!(
                "need the same non-zero number of transmitters and receivers, got {m} and {}",
                rx_positions.len()
            )));
        }
        model.validate()?;
        let mut shadow_rng = rng::substream(seed, &[rng::SHADOWING]);
        let shadow = Normal::new(0.0, model.shadowing_db)
            .map_err(|e| RrmError::config("channel.shadowing_db", e.to_string()))?;
        let mut gain = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                let d = distance(tx_positions[i], rx_positions[j]);
                let x_db: f64 = shadow.sample(&mut shadow_rng);
                let g = model.pathloss(d)? * 10f64.powf(x_db / 10.0);
                if !(g.is_finite() && g > 0.0) {
                    return Err(RrmError::numeric(
                        "generate_realization",
                        format!("gain ({i}, {j}) = {g} at distance {d} m"),
                    ));
                }
                gain[[i, j]] = g;
            }
        }
        Ok(NetworkRealization {
            tx_positions,
            rx_positions,
            long_term_gain: gain,
            seed,
        })
    }

    /// Wraps a hand-made gain matrix (positions left at the origin).
    pub fn from_gains(long_term_gain: Array2<f64>) -> Result<Self> {
        let (rows, cols) = long_term_gain.dim();
        if rows == 0 || rows != cols {
            return Err(RrmError::Domain(format!(
                "gain matrix must be square and non-empty, got {rows}x{cols}"
            )));
        }
        if let Some(((i, j), g)) = long_term_gain
            .indexed_iter()
            .find(|(_, g)| !(g.is_finite() && **g >= 0.0))
        {
            return Err(RrmError::Domain(format!("gain ({i}, {j}) = {g} is not a valid power gain")));
        }
        Ok(NetworkRealization {
            tx_positions: vec![[0.0, 0.0]; rows],
            rx_positions: vec![[0.0, 0.0]; rows],
            long_term_gain,
            seed: 0,
        })
    }
}

pub fn generate_realization(cfg: &GeometryConfig, seed: u64) -> Result<NetworkRealization> {
    cfg.validate()?;
    let mut rng = rng::substream(seed, &[rng::GEOMETRY]);
    let radius = cfg.area_radius();
    let [d_min, d_max] = cfg.rx_distance;
    let mut tx = Vec::with_capacity(cfg.users);
    let mut rx = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        let r = radius * rng.random::<f64>().sqrt();
        let theta = 2.0 * PI * rng.random::<f64>();
        let t = [r * theta.cos(), r * theta.sin()];
        // Area-uniform within the annulus.
        let u: f64 = rng.random();
        let rr = (d_min * d_min + u * (d_max * d_max - d_min * d_min)).sqrt();
        let phi = 2.0 * PI * rng.random::<f64>();
        tx.push(t);
        rx.push([t[0] + rr * phi.cos(), t[1] + rr * phi.sin()]);
    }
    NetworkRealization::from_positions(tx, rx, &cfg.pathloss, seed)
}

/// Instantaneous channel at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub t: usize,
    pub gain: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingModel {
    /// i.i.d. unit-mean exponential power per link and step.
    #[default]
    Rayleigh,
    /// No small-scale fading: every state equals the long-term channel.
    None,
}

pub fn sample_fading_sequence(
    real: &NetworkRealization,
    steps: usize,
    fading: FadingModel,
    seed: u64,
) -> Result<Vec<NetworkState>> {
    if steps == 0 {
        return Err(RrmError::Domain("fading sequence needs at least one step".into()));
    }
    let mut rng = rng::substream(seed, &[rng::FADING]);
    let states = (0..steps)
        .map(|t| {
            let gain = match fading {
                FadingModel::None => real.long_term_gain.clone(),
                FadingModel::Rayleigh => real.long_term_gain.mapv(|g| {
                    let s: f64 = Exp1.sample(&mut rng);
                    g * s
                }),
            };
            NetworkState { t, gain }
        })
        .collect();
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(users: usize) -> GeometryConfig {
        GeometryConfig {
            users,
            ..Default::default()
        }
    }

    #[test]
    fn reference_distance_gives_reference_gain() {
        let model = PathLossModel {
            shadowing_db: 0.0,
            reference_gain: 0.25,
            ..Default::default()
        };
        let real =
            NetworkRealization::from_positions(vec![[0.0, 0.0]], vec![[0.6, 0.8]], &model, 9).unwrap();
        assert_relative_eq!(real.long_term_gain[[0, 0]], 0.25, max_relative = 1e-15);
    }

    #[test]
    fn fixed_density_radius() {
        assert_relative_eq!(cfg(12).area_radius(), 774.596_669_241_483_4, max_relative = 1e-12);
        for m in [1, 5, 20, 37, 80] {
            assert_relative_eq!(cfg(m).area_radius(), (m as f64 / 20.0).sqrt() * 1000.0);
        }
        let v = GeometryConfig {
            density: DensityMode::Variable,
            ..cfg(3)
        };
        assert_eq!(v.area_radius(), 500.0);
    }

    #[test]
    fn pathloss_two_segments() {
        let model = PathLossModel::default();
        assert_relative_eq!(model.pathloss(100.0).unwrap(), 2.5e-5, max_relative = 1e-12);
        let bp = model.breakpoint;
        let below = model.pathloss(bp * (1.0 - 1e-12)).unwrap();
        let above = model.pathloss(bp * (1.0 + 1e-12)).unwrap();
        assert_relative_eq!(below, above, max_relative = 1e-9);
        // Doubling below the breakpoint scales by 2^-near_exponent.
        let g10 = model.pathloss(10.0).unwrap();
        let g20 = model.pathloss(20.0).unwrap();
        assert_relative_eq!(g20 / g10, 0.25, max_relative = 1e-12);
    }

    #[test]
    fn pathloss_rejects_non_positive_distance() {
        let model = PathLossModel::default();
        assert!(matches!(model.pathloss(0.0), Err(RrmError::Domain(_))));
        assert!(matches!(model.pathloss(-3.0), Err(RrmError::Domain(_))));
    }

    #[test]
    fn realization_is_deterministic_and_positive() {
        let a = generate_realization(&cfg(8), 77).unwrap();
        let b = generate_realization(&cfg(8), 77).unwrap();
        assert_eq!(a, b);
        assert!(a.long_term_gain.iter().all(|g| g.is_finite() && *g > 0.0));
        let c = generate_realization(&cfg(8), 78).unwrap();
        assert_ne!(a.long_term_gain, c.long_term_gain);
    }

    #[test]
    fn receivers_stay_in_annulus_and_transmitters_in_disk() {
        let c = cfg(30);
        let real = generate_realization(&c, 3).unwrap();
        for (t, r) in real.tx_positions.iter().zip(&real.rx_positions) {
            assert!(distance(*t, [0.0, 0.0]) <= c.area_radius());
            let d = distance(*t, *r);
            assert!(d >= c.rx_distance[0] - 1e-9 && d <= c.rx_distance[1] + 1e-9);
        }
    }

    #[test]
    fn invalid_geometry_names_field() {
        let bad = GeometryConfig {
            rx_distance: [50.0, 20.0],
            ..cfg(4)
        };
        match generate_realization(&bad, 1) {
            Err(RrmError::Config { field, .. }) => assert_eq!(field, "geometry.rx_distance"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            generate_realization(&cfg(0), 1),
            Err(RrmError::Config { .. })
        ));
    }

    #[test]
    fn unit_fading_reproduces_long_term_gain() {
        let real = generate_realization(&cfg(4), 5).unwrap();
        let states = sample_fading_sequence(&real, 1, FadingModel::None, 1).unwrap();
        assert_eq!(states[0].gain, real.long_term_gain);
    }

    #[test]
    fn exponential_fading_has_unit_mean() {
        let real = NetworkRealization::from_gains(Array2::ones((1, 1))).unwrap();
        let steps = 100_000;
        let states = sample_fading_sequence(&real, steps, FadingModel::Rayleigh, 11).unwrap();
        let mean = states.iter().map(|s| s.gain[[0, 0]]).sum::<f64>() / steps as f64;
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn fading_mean_within_three_sigma_per_link() {
        let real = generate_realization(&cfg(3), 21).unwrap();
        let steps = 20_000;
        let states = sample_fading_sequence(&real, steps, FadingModel::Rayleigh, 4).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let g = real.long_term_gain[[i, j]];
                let mean = states.iter().map(|s| s.gain[[i, j]] / g).sum::<f64>() / steps as f64;
                // Exp(1) has unit standard deviation.
                assert!((mean - 1.0).abs() <= 3.0 / (steps as f64).sqrt(), "({i},{j}) mean {mean}");
            }
        }
    }

    #[test]
    fn fading_sequence_is_deterministic() {
        let real = generate_realization(&cfg(4), 5).unwrap();
        let a = sample_fading_sequence(&real, 10, FadingModel::Rayleigh, 8).unwrap();
        let b = sample_fading_sequence(&real, 10, FadingModel::Rayleigh, 8).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sample_fading_sequence(&real, 0, FadingModel::Rayleigh, 8),
            Err(RrmError::Domain(_))
        ));
    }
}
