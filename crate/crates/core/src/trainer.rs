//! Offline primal-dual training of the state-augmented policy and the dual
//! regressor.
//!
//! Every epoch, each training network gets a dual vector drawn from the
//! current sampling distribution and a fresh fast-fading episode. The
//! policy parameters move along the batch-averaged Lagrangian gradient,
//! while dual descent runs in the background on the same episodes. Inside
//! the update window `[dist_start, dist_end)` the sampling distribution is
//! replaced by the averaged tails of those background trajectories. After
//! the last epoch the regressor is fit to the averaged duals.

use std::collections::VecDeque;

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_fading_sequence, FadingModel, NetworkRealization};
use crate::error::{Result, RrmError};
use crate::gnn::{layer_dims, loss_and_grad, EdgeNormalization, GnnParams, GradientVector, PolicyNet, RegressorNet, SquaredError};
use crate::lagrangian::{lagrangian_with_grad, replay_dual_dynamics, run_episode, DualDynamics, DualVariables};
use crate::metrics::rate_metrics;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rate::ConstraintSlack;
use crate::rng;

/// Physical constants of the power-control problem, in linear units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    /// Watts.
    pub p_max: f64,
    /// Watts.
    pub noise: f64,
    /// Bits/s/Hz.
    pub f_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Draw uniformly from the pooled averaged duals of all networks.
    #[default]
    Pooled,
    /// Network `b` always receives its own averaged duals.
    Pinned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    /// Decisions use the sampled duals; the background trajectory only
    /// integrates the observed window slacks.
    #[default]
    Literal,
    /// Decisions use the background iterate itself, as during execution.
    SelfConsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub hidden: Vec<usize>,
    pub edge_scale_decades: f64,
    pub mu_scale: f64,
    pub negative_slope: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            hidden: vec![64, 64],
            edge_scale_decades: 3.0,
            mu_scale: 1.0,
            negative_slope: crate::gnn::DEFAULT_NEGATIVE_SLOPE,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(RrmError::config("gnn.hidden", "need at least one positive hidden width"));
        }
        if !(self.negative_slope.is_finite() && self.negative_slope >= 0.0 && self.negative_slope < 1.0) {
            return Err(RrmError::config("gnn.negative_slope", "must lie in [0, 1)"));
        }
        if !(self.mu_scale.is_finite() && self.mu_scale > 0.0) {
            return Err(RrmError::config("gnn.mu_scale", "must be > 0"));
        }
        if !(self.edge_scale_decades.is_finite() && self.edge_scale_decades > 0.0) {
            return Err(RrmError::config("gnn.edge_scale_decades", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Training epochs `N`.
    pub epochs: usize,
    /// Networks per gradient step `B`.
    pub batch_size: usize,
    /// Episode length `T`.
    pub steps: usize,
    /// Steps per dual update `T_0`.
    pub window: usize,
    /// Trailing dual iterates averaged per episode `K_0`.
    pub tail_iterates: usize,
    /// Epochs averaged `N_0`.
    pub tail_epochs: usize,
    pub dist_start: usize,
    pub dist_end: usize,
    /// Policy learning rate; `None` means `0.1 / m`.
    pub lr_policy: Option<f64>,
    pub lr_regressor: f64,
    pub eta_mu: f64,
    pub regressor_epochs: usize,
    pub optimizer: OptimizerKind,
    pub regressor_optimizer: OptimizerKind,
    /// Sample duals from background trajectories inside the update window.
    /// Off reproduces the ablated training.
    pub dual_sampling: bool,
    pub sampling: SamplingMode,
    pub background: BackgroundMode,
    /// Epochs between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 128,
            steps: 200,
            window: 5,
            tail_iterates: 5,
            tail_epochs: 10,
            dist_start: 15,
            dist_end: 60,
            lr_policy: None,
            lr_regressor: 1e-3,
            eta_mu: 2.0,
            regressor_epochs: 50,
            optimizer: OptimizerKind::Plain,
            regressor_optimizer: OptimizerKind::adam(),
            dual_sampling: true,
            sampling: SamplingMode::Pooled,
            background: BackgroundMode::Literal,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn err(field: &str, reason: impl Into<String>) -> RrmError {
            RrmError::config(field, reason)
        }
        if self.epochs == 0 {
            return Err(err("train.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(err("train.batch_size", "must be >= 1"));
        }
        if self.window == 0 || self.steps == 0 || !self.steps.is_multiple_of(self.window) {
            return Err(err("train.steps", format!("T = {} must be a positive multiple of T0 = {}", self.steps, self.window)));
        }
        let windows = self.steps / self.window;
        if self.tail_iterates == 0 || self.tail_iterates > windows {
            return Err(err("train.tail_iterates", format!("K0 must lie in [1, K = {windows}]")));
        }
        if self.tail_epochs == 0 {
            return Err(err("train.tail_epochs", "N0 must be >= 1"));
        }
        if self.dual_sampling {
            if self.dist_start >= self.dist_end {
                return Err(err("train.dist_start", "N_start must be below N_end"));
            }
            if self.dist_end > self.epochs {
                return Err(err("train.dist_end", "N_end must not exceed N"));
            }
            if self.dist_start + 1 < self.tail_epochs {
                return Err(err("train.dist_start", "N_start + 1 must be >= N0 so the first update sees N0 epochs"));
            }
            if self.tail_epochs > self.dist_end - self.dist_start {
                return Err(err("train.tail_epochs", "N0 must not exceed N_end - N_start"));
            }
            if self.epochs < self.dist_end + self.tail_epochs {
                return Err(err("train.epochs", "N must be >= N_end + N0"));
            }
        } else if self.tail_epochs > self.epochs {
            return Err(err("train.tail_epochs", "N0 must not exceed N"));
        }
        for (field, v) in [("train.lr_regressor", self.lr_regressor), ("train.eta_mu", self.eta_mu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(err(field, "must be > 0"));
            }
        }
        if let Some(lr) = self.lr_policy {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(err("train.lr_policy", "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn policy_lr(&self, users: usize) -> f64 {
        self.lr_policy.unwrap_or(0.1 / users as f64)
    }

    /// Epoch whose buffer averages become regressor targets.
    pub fn target_epoch(&self) -> usize {
        if self.dual_sampling {
            (self.dist_end + self.tail_epochs).min(self.epochs - 1)
        } else {
            self.epochs - 1
        }
    }

    fn dynamics(&self, f_min: f64) -> DualDynamics {
        DualDynamics {
            window: self.window,
            eta_mu: self.eta_mu,
            f_min,
        }
    }
}

/// Sampling distribution of the policy's dual inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DualDistribution {
    /// i.i.d. `U(0, 1)` per coordinate.
    Initial { users: usize },
    /// Finite support of averaged dual vectors.
    Empirical { support: Vec<DualVariables> },
}

impl DualDistribution {
    pub fn users(&self) -> usize {
        match self {
            DualDistribution::Initial { users } => *users,
            DualDistribution::Empirical { support } => support.first().map_or(0, |v| v.len()),
        }
    }
}

/// Draws `count` dual vectors. Draw `b` comes from its own substream of
/// `seed`, so draws do not depend on each other. In pinned mode draw `b`
/// is support entry `b`.
pub fn sample_duals(dist: &DualDistribution, count: usize, mode: SamplingMode, seed: u64) -> Result<Vec<DualVariables>> {
    (0..count)
        .map(|b| {
            let mut rng = rng::substream(seed, &[b as u64]);
            match dist {
                DualDistribution::Initial { users } => {
                    DualVariables::new((0..*users).map(|_| rng.random::<f64>()).collect())
                }
                DualDistribution::Empirical { support } => {
                    if support.is_empty() {
                        return Err(RrmError::State("empirical dual distribution is empty".into()));
                    }
                    let idx = match mode {
                        SamplingMode::Pooled => rng.random_range(0..support.len()),
                        SamplingMode::Pinned => {
                            if support.len() != count {
                                return Err(RrmError::State(format!(
                                    "pinned sampling needs one support vector per network ({} vs {count})",
                                    support.len()
                                )));
                            }
                            b
                        }
                    };
                    Ok(support[idx].clone())
                }
            }
        })
        .collect()
}

/// The last `K_0` background iterates of every network over the most
/// recent `N_0` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTrajectoryBuffer {
    capacity: usize,
    epochs: VecDeque<(usize, Vec<Vec<DualVariables>>)>,
}

impl DualTrajectoryBuffer {
    pub fn new(tail_epochs: usize) -> Self {
        DualTrajectoryBuffer {
            capacity: tail_epochs,
            epochs: VecDeque::with_capacity(tail_epochs + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Stores one epoch's tails (indexed by network), evicting the oldest
    /// epoch when full.
    pub fn push(&mut self, epoch: usize, tails: Vec<Vec<DualVariables>>) {
        self.epochs.push_back((epoch, tails));
        while self.epochs.len() > self.capacity {
            self.epochs.pop_front();
        }
    }

    /// Per-network mean over every stored iterate. Sums run in epoch-index
    /// order regardless of insertion order.
    pub fn averages(&self) -> Result<Vec<DualVariables>> {
        let mut stored: Vec<&(usize, Vec<Vec<DualVariables>>)> = self.epochs.iter().collect();
        stored.sort_by_key(|(e, _)| *e);
        let first = stored
            .first()
            .ok_or_else(|| RrmError::State("dual trajectory buffer is empty".into()))?;
        let networks = first.1.len();
        let users = first.1.first().and_then(|t| t.first()).map_or(0, |v| v.len());
        let mut out = Vec::with_capacity(networks);
        for b in 0..networks {
            let mut acc = vec![0.0; users];
            let mut count = 0usize;
            for (_, tails) in &stored {
                let tail = tails
                    .get(b)
                    .ok_or_else(|| RrmError::State("buffered epochs disagree on network count".into()))?;
                for mu in tail {
                    acc.iter_mut().zip(mu.iter()).for_each(|(a, v)| *a += v);
                    count += 1;
                }
            }
            if count == 0 {
                return Err(RrmError::State(format!("no iterates stored for network {b}")));
            }
            out.push(DualVariables::new(acc.into_iter().map(|a| a / count as f64).collect())?);
        }
        Ok(out)
    }
}

/// `p_{n+1}` from the buffer: the empirical distribution over per-network
/// averages of the last `K_0` iterates across the last `N_0` epochs.
pub fn update_dual_distribution(buffer: &DualTrajectoryBuffer, tail_epochs: usize) -> Result<DualDistribution> {
    if buffer.len() < tail_epochs {
        return Err(RrmError::State(format!(
            "dual distribution update needs {tail_epochs} epochs of history, buffer has {}",
            buffer.len()
        )));
    }
    Ok(DualDistribution::Empirical {
        support: buffer.averages()?,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lagrangian: f64,
    pub utility: f64,
    pub penalty: f64,
    /// Mean and minimum of the averaged background duals.
    pub dual_mean: f64,
    pub dual_min: f64,
    pub grad_norm: f64,
    /// Metrics of the episode-average rates of every user this epoch.
    pub rate_mean: f64,
    pub rate_min: f64,
    pub rate_p5: f64,
    pub distribution_updated: bool,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub next_epoch: usize,
    pub policy: PolicyNet,
    pub optimizer: Optimizer,
    pub distribution: DualDistribution,
    pub buffer: DualTrajectoryBuffer,
    pub regressor_targets: Option<Vec<DualVariables>>,
    pub log: Vec<EpochLog>,
}

/// Per-network outcome of one training episode.
pub struct EpisodeOutcome {
    pub lagrangian: f64,
    pub utility: f64,
    pub penalty: f64,
    pub mean_rates: Vec<f64>,
    pub grad: GradientVector,
    /// Background iterates `mu~_0 .. mu~_K`.
    pub duals: Vec<DualVariables>,
    pub slacks: Vec<ConstraintSlack>,
    pub tail: Vec<DualVariables>,
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub problem: Problem,
    pub fading: FadingModel,
    pub seed: u64,
    dataset: &'a [NetworkRealization],
    pub state: TrainerState,
}

/// Trained models and the training log.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: PolicyNet,
    pub regressor: RegressorNet,
    pub log: Vec<EpochLog>,
    pub regressor_log: RegressorLog,
}

fn check_dataset(dataset: &[NetworkRealization]) -> Result<usize> {
    let first = dataset
        .first()
        .ok_or_else(|| RrmError::config("dataset.train_size", "training set is empty"))?;
    let m = first.users();
    if dataset.iter().any(|r| r.users() != m) {
        return Err(RrmError::config("dataset", "all training networks must have the same user count"));
    }
    Ok(m)
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        gnn: &GnnConfig,
        problem: Problem,
        fading: FadingModel,
        dataset: &'a [NetworkRealization],
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        gnn.validate()?;
        let m = check_dataset(dataset)?;
        let edge_norm = EdgeNormalization::from_direct_links(dataset.iter().map(|r| &r.long_term_gain), gnn.edge_scale_decades)?;
        let params = GnnParams::init(&layer_dims(1, &gnn.hidden), rng::derive_seed(seed, &[rng::PARAM_INIT, 0]))?;
        let mut policy = PolicyNet::new(params, problem.p_max, gnn.mu_scale, edge_norm)?;
        policy.gnn.negative_slope = gnn.negative_slope;
        let optimizer = Optimizer::new(cfg.optimizer, policy.gnn.params.len());
        let buffer = DualTrajectoryBuffer::new(cfg.tail_epochs);
        Ok(Trainer {
            state: TrainerState {
                next_epoch: 0,
                policy,
                optimizer,
                distribution: DualDistribution::Initial { users: m },
                buffer,
                regressor_targets: None,
                log: Vec::new(),
            },
            cfg,
            problem,
            fading,
            seed,
            dataset,
        })
    }

    /// Continues from a checkpointed state.
    pub fn resume(
        cfg: TrainConfig,
        problem: Problem,
        fading: FadingModel,
        dataset: &'a [NetworkRealization],
        seed: u64,
        state: TrainerState,
    ) -> Result<Self> {
        cfg.validate()?;
        let m = check_dataset(dataset)?;
        if state.distribution.users() != m {
            return Err(RrmError::State("checkpoint was trained for a different user count".into()));
        }
        Ok(Trainer {
            cfg,
            problem,
            fading,
            seed,
            dataset,
            state,
        })
    }

    pub fn is_done(&self) -> bool {
        self.state.next_epoch >= self.cfg.epochs
    }

    /// Runs one training episode for network `b` with duals `mu`.
    pub fn episode(&self, policy: &PolicyNet, epoch: usize, b: usize, mu: &DualVariables) -> Result<EpisodeOutcome> {
        let real = &self.dataset[b];
        let fading_seed = rng::derive_seed(self.seed, &[rng::FADING, epoch as u64, b as u64]);
        let states = sample_fading_sequence(real, self.cfg.steps, self.fading, fading_seed)?;
        let (p, dynamics) = (&self.problem, self.cfg.dynamics(self.problem.f_min));
        let eval = lagrangian_with_grad(policy, mu, &states, p.f_min, p.noise)?;
        let (duals, slacks) = match self.cfg.background {
            BackgroundMode::Literal => replay_dual_dynamics(&eval.rates, mu.clone(), &dynamics)?,
            BackgroundMode::SelfConsistent => {
                let trace = run_episode(&states, mu.clone(), &dynamics, p.noise, |_, g, mu_k| policy.forward(g, mu_k))?;
                (trace.duals, trace.slacks)
            }
        };
        let k = duals.len() - 1;
        let tail = duals[k + 1 - self.cfg.tail_iterates..].to_vec();
        Ok(EpisodeOutcome {
            lagrangian: eval.lagrangian(),
            utility: eval.parts.utility,
            penalty: eval.parts.penalty,
            mean_rates: eval.mean_rates.0,
            grad: eval.grad.expect("gradient requested"),
            duals,
            slacks,
            tail,
        })
    }

    /// Runs epoch `state.next_epoch`.
    pub fn run_epoch(&mut self) -> Result<&EpochLog> {
        self.run_epoch_with(&mut |_, _| {})
    }

    /// [`Trainer::run_epoch`], showing every episode to `observe(b, outcome)`.
    pub fn run_epoch_with(&mut self, observe: &mut dyn FnMut(usize, &EpisodeOutcome)) -> Result<&EpochLog> {
        let n = self.state.next_epoch;
        if n >= self.cfg.epochs {
            return Err(RrmError::State(format!("training already finished after {} epochs", self.cfg.epochs)));
        }
        let count = self.dataset.len();
        let draws = sample_duals(
            &self.state.distribution,
            count,
            self.cfg.sampling,
            rng::derive_seed(self.seed, &[rng::DUAL_SAMPLE, n as u64]),
        )?;
        let lr = self.cfg.policy_lr(self.state.distribution.users());
        let mut tails = Vec::with_capacity(count);
        let mut sums = [0.0f64; 3];
        let mut pooled_rates = Vec::new();
        let mut grad_norm = 0.0;
        let mut batches = 0;
        for start in (0..count).step_by(self.cfg.batch_size) {
            let end = (start + self.cfg.batch_size).min(count);
            let mut batch_grad = GradientVector::zeros(self.state.policy.gnn.params.len());
            for b in start..end {
                let out = self.episode(&self.state.policy, n, b, &draws[b]).map_err(|e| match e {
                    RrmError::Numeric { op, detail } => RrmError::Numeric {
                        op,
                        detail: format!("epoch {n}, network {b}: {detail}"),
                    },
                    other => other,
                })?;
                observe(b, &out);
                batch_grad.add_scaled(&out.grad, 1.0 / (end - start) as f64);
                sums[0] += out.lagrangian;
                sums[1] += out.utility;
                sums[2] += out.penalty;
                pooled_rates.extend_from_slice(&out.mean_rates);
                tails.push(out.tail);
            }
            grad_norm += batch_grad.norm();
            batches += 1;
            apply_gradient_step(&mut self.state.policy, &mut self.state.optimizer, &batch_grad, lr);
        }
        self.state.buffer.push(n, tails);
        let in_window = self.cfg.dual_sampling && n >= self.cfg.dist_start && n < self.cfg.dist_end;
        if in_window {
            self.state.distribution = update_dual_distribution(&self.state.buffer, self.cfg.tail_epochs)?;
        }
        if n == self.cfg.target_epoch() {
            self.state.regressor_targets = Some(self.state.buffer.averages()?);
        }
        let averages = self.state.buffer.averages()?;
        let flat: Vec<f64> = averages.iter().flat_map(|v| v.iter().copied()).collect();
        let rates = rate_metrics(&pooled_rates)?;
        let c = count as f64;
        self.state.log.push(EpochLog {
            epoch: n,
            lagrangian: sums[0] / c,
            utility: sums[1] / c,
            penalty: sums[2] / c,
            dual_mean: flat.iter().sum::<f64>() / flat.len() as f64,
            dual_min: flat.iter().copied().fold(f64::INFINITY, f64::min),
            grad_norm: grad_norm / batches as f64,
            rate_mean: rates.mean,
            rate_min: rates.min,
            rate_p5: rates.p5,
            distribution_updated: in_window,
        });
        self.state.next_epoch += 1;
        let rec = self.state.log.last().unwrap();
        info!(
            "epoch {n}: L = {:.4}, U = {:.4}, rate mean/min/p5 = {:.3}/{:.3}/{:.3}, mean dual {:.3}",
            rec.lagrangian, rec.utility, rec.rate_mean, rec.rate_min, rec.rate_p5, rec.dual_mean
        );
        Ok(rec)
    }

    /// Fits the regressor on `(long-term gains, averaged duals)` pairs.
    pub fn train_regressor(&self, gnn: &GnnConfig) -> Result<(RegressorNet, RegressorLog)> {
        let targets = self
            .state
            .regressor_targets
            .as_ref()
            .ok_or_else(|| RrmError::State("regressor targets are not available yet".into()))?;
        let params = GnnParams::init(&layer_dims(1, &gnn.hidden), rng::derive_seed(self.seed, &[rng::PARAM_INIT, 1]))?;
        let mut reg = RegressorNet::new(params, self.state.policy.edge_norm)?;
        reg.gnn.negative_slope = gnn.negative_slope;
        let pairs: Vec<(&NetworkRealization, &DualVariables)> = self.dataset.iter().zip(targets).collect();
        let log = train_regressor(&mut reg, &pairs, self.cfg.lr_regressor, self.cfg.regressor_epochs, self.cfg.regressor_optimizer)?;
        Ok((reg, log))
    }

    pub fn run(mut self, gnn: &GnnConfig) -> Result<TrainOutput> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        let (regressor, regressor_log) = self.train_regressor(gnn)?;
        Ok(TrainOutput {
            policy: self.state.policy,
            regressor,
            log: self.state.log,
            regressor_log,
        })
    }
}

/// `phi += lr * grad` for plain ascent, or one adaptive-moment ascent step.
pub fn apply_gradient_step(policy: &mut PolicyNet, optimizer: &mut Optimizer, grad: &GradientVector, lr: f64) {
    optimizer.step(policy.gnn.params.as_mut_slice(), &grad.0, lr);
}

/// Mean of per-network gradients in index order, `(1/B) sum_b g_b`.
pub fn batch_mean(grads: &[GradientVector]) -> GradientVector {
    let mut acc = GradientVector::zeros(grads.first().map_or(0, |g| g.0.len()));
    for g in grads {
        acc.add_scaled(g, 1.0 / grads.len() as f64);
    }
    acc
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressorLog {
    /// Loss before training followed by the loss after every epoch.
    pub losses: Vec<f64>,
    /// `(epoch, new learning rate)` for every halving.
    pub backoffs: Vec<(usize, f64)>,
}

fn regressor_loss(reg: &RegressorNet, pairs: &[(&NetworkRealization, &DualVariables)], with_grad: bool) -> Result<(f64, GradientVector)> {
    let scale = 1.0 / (pairs.len() * pairs[0].1.len()) as f64;
    let mut total = 0.0;
    let mut grad = GradientVector::zeros(reg.gnn.params.len());
    for (real, target) in pairs {
        let graph = reg.graph(&real.long_term_gain)?;
        let targets = [target.to_vec()];
        let loss = SquaredError { targets: &targets, scale };
        if with_grad {
            let (v, g) = loss_and_grad(&reg.gnn, std::slice::from_ref(&graph), &loss)?;
            total += v;
            grad.add_scaled(&g, 1.0);
        } else {
            let out = reg.gnn.forward(&graph)?;
            total += scale * out.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok((total, grad))
}

/// Full-batch descent on `(1/(B m)) sum_b ||d(G_b) - mu_b||^2`. A step that
/// would raise the loss is undone and retried with half the learning rate.
pub fn train_regressor(
    reg: &mut RegressorNet,
    pairs: &[(&NetworkRealization, &DualVariables)],
    lr: f64,
    epochs: usize,
    kind: OptimizerKind,
) -> Result<RegressorLog> {
    if pairs.is_empty() {
        return Err(RrmError::Domain("regressor needs at least one training pair".into()));
    }
    let mut opt = Optimizer::new(kind, reg.gnn.params.len());
    let mut lr = lr;
    let mut log = RegressorLog::default();
    let (mut loss, mut grad) = regressor_loss(reg, pairs, true)?;
    log.losses.push(loss);
    for epoch in 0..epochs {
        let descent: Vec<f64> = grad.0.iter().map(|g| -g).collect();
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = reg.clone();
            let mut trial_opt = opt.clone();
            trial_opt.step(trial.gnn.params.as_mut_slice(), &descent, lr);
            let (trial_loss, _) = regressor_loss(&trial, pairs, false)?;
            if trial_loss <= loss {
                *reg = trial;
                opt = trial_opt;
                loss = trial_loss;
                accepted = true;
                break;
            }
            lr *= 0.5;
            log.backoffs.push((epoch, lr));
            debug!("regressor epoch {epoch}: loss would rise, learning rate halved to {lr:e}");
        }
        if !accepted {
            info!("regressor stopped at epoch {epoch}: no decreasing step found");
            log.losses.push(loss);
            break;
        }
        grad = regressor_loss(reg, pairs, true)?.1;
        log.losses.push(loss);
    }
    Ok(log)
}
