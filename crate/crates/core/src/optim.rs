//! Parameter update rules.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `theta += lr * direction`.
    #[default]
    Plain,
    /// Adaptive moments with bias correction.
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Optimizer with its running state; serializable so training can resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let moments = if matches!(kind, OptimizerKind::Adam { .. }) { len } else { 0 };
        Optimizer {
            kind,
            step: 0,
            first: vec![0.0; moments],
            second: vec![0.0; moments],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Moves `params` along `direction` (already signed for ascent or
    /// descent) with learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], direction: &[f64], lr: f64) {
        assert_eq!(params.len(), direction.len(), "direction length mismatch");
        self.step += 1;
        match self.kind {
            OptimizerKind::Plain => {
                for (p, d) in params.iter_mut().zip(direction) {
                    *p += lr * d;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                assert_eq!(self.first.len(), params.len(), "optimizer built for another shape");
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, d), m), v) in params
                    .iter_mut()
                    .zip(direction)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * d;
                    *v = beta2 * *v + (1.0 - beta2) * d * d;
                    *p += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}
