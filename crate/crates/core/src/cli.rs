//! The `rrm` command line: `generate`, `train`, `eval` and `plot`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Result, RrmError};
use crate::executor::{execute, execute_baseline, feasibility_report, Baseline, ExecutionConfig, InitMode};
use crate::io::{self, Checkpoint, CurveRow, GenerateOutcome, MetricsRow};
use crate::lagrangian::EpisodeTrace;
use crate::metrics::{evolution_curves, pooled_ergodic_rates, rate_metrics, transient_length};
use crate::rng;
use crate::trainer::Trainer;

#[derive(Debug, Parser)]
#[command(name = "rrm", version, about = "State-augmented radio resource management")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the training and test networks into a dataset directory.
    Generate(GenerateArgs),
    /// Train the policy and the dual regressor.
    Train(TrainArgs),
    /// Execute trained models and baselines on the test networks.
    Eval(EvalArgs),
    /// Render SVG charts from a curves CSV or a training log.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Defaults to the configuration stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Model for `state-aug-ablated`; defaults to `--checkpoint`.
    #[arg(long)]
    pub ablated_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of state-aug, state-aug-ablated, fr, itlinq.
    #[arg(long, value_delimiter = ',', default_value = "state-aug,state-aug-ablated,fr,itlinq")]
    pub method: Vec<Method>,
    /// Also write one per-step CSV per test network.
    #[arg(long)]
    pub traces: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// `curves.csv` from `eval` or `train_log.csv` from `train`.
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Method {
    StateAug,
    StateAugAblated,
    FullReuse,
    Itlinq,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::StateAug => "state-aug",
            Method::StateAugAblated => "state-aug-ablated",
            Method::FullReuse => "fr",
            Method::Itlinq => "itlinq",
        }
    }

    fn needs_model(self) -> bool {
        matches!(self, Method::StateAug | Method::StateAugAblated)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Method::StateAug, Method::StateAugAblated, Method::FullReuse, Method::Itlinq]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected state-aug, state-aug-ablated, fr or itlinq)"))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Plot(a) => cmd_plot(&a).map(|_| ()),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_resolved(out: &Path, name: &str, cfg: &RunConfig) -> Result<()> {
    io::write_json(&out.join(name), cfg)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    match io::generate_dataset(&cfg, &a.out)? {
        GenerateOutcome::Written(n) => info!("wrote {n} realizations to {}", a.out.display()),
        GenerateOutcome::Unchanged => info!("{} already holds this dataset", a.out.display()),
    }
    Ok(())
}

fn check_dataset_matches(cfg: &RunConfig, ds: &io::Dataset) -> Result<()> {
    if ds.manifest.geometry.users != cfg.geometry.users {
        return Err(RrmError::config(
            "geometry.users",
            format!("config has {} users but the dataset has {}", cfg.geometry.users, ds.manifest.geometry.users),
        ));
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let ds = io::load_dataset(&a.dataset)?;
    let (cfg, resumed) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.is_complete() {
                return Err(RrmError::State(format!("{} is from a finished run", path.display())));
            }
            if let Some(p) = &a.config {
                let given = load_config(Some(p), a.seed.or(Some(ck.config.seed)))?;
                if given != ck.config {
                    return Err(RrmError::config("config", "differs from the configuration stored in the checkpoint"));
                }
            }
            (ck.config, Some(ck.trainer))
        }
        None => (load_config(a.config.as_deref(), a.seed)?, None),
    };
    check_dataset_matches(&cfg, &ds)?;
    std::fs::create_dir_all(&a.out).map_err(|e| RrmError::io(&a.out, e))?;
    write_resolved(&a.out, "config.json", &cfg)?;
    let problem = cfg.problem();
    let mut trainer = match resumed {
        Some(state) => Trainer::resume(cfg.train.clone(), problem, cfg.fading, &ds.train, cfg.seed, state)?,
        None => Trainer::new(cfg.train.clone(), &cfg.gnn, problem, cfg.fading, &ds.train, cfg.seed)?,
    };
    let every = cfg.train.checkpoint_every;
    while !trainer.is_done() {
        trainer.run_epoch()?;
        let n = trainer.state.next_epoch;
        if every > 0 && n % every == 0 && n < cfg.train.epochs {
            let path = a.out.join("checkpoints").join(format!("epoch_{n:04}.json"));
            Checkpoint::new(cfg.clone(), trainer.state.clone()).save(&path)?;
        }
    }
    let (regressor, reg_log) = trainer.train_regressor(&cfg.gnn)?;
    if !reg_log.backoffs.is_empty() {
        warn!("regressor learning rate was halved {} times", reg_log.backoffs.len());
    }
    io::write_train_log(&a.out.join("train_log.csv"), &trainer.state.log)?;
    #[derive(Serialize)]
    struct LossRow {
        epoch: usize,
        loss: f64,
    }
    let rows: Vec<LossRow> = reg_log.losses.iter().enumerate().map(|(epoch, &loss)| LossRow { epoch, loss }).collect();
    io::write_csv(&a.out.join("regressor_log.csv"), &rows)?;
    let mut ck = Checkpoint::new(cfg, trainer.state);
    ck.regressor = Some(regressor);
    ck.regressor_log = Some(reg_log);
    ck.save(&a.out.join("checkpoint.json"))
}

/// Per-network record in the evaluation summary.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkSummary {
    pub network: usize,
    pub ergodic_rates: Vec<f64>,
    pub margins: Vec<f64>,
    pub transient_length: usize,
    pub duals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub method: String,
    pub burn_in: usize,
    pub networks: Vec<NetworkSummary>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Seed of the execution on test network `b`, shared by every method so all
/// methods see the same fading.
pub fn execution_seed(root: u64, b: usize) -> u64 {
    rng::derive_seed(root, &[rng::EXEC_INIT, b as u64])
}

/// Evaluates one method on every test network.
pub fn evaluate_method(
    method: Method,
    cfg: &RunConfig,
    ck: Option<&Checkpoint>,
    test: &[crate::channel::NetworkRealization],
) -> Result<Vec<EpisodeTrace>> {
    let problem = cfg.problem();
    let mut exec: ExecutionConfig = cfg.execution.clone();
    test.iter()
        .enumerate()
        .map(|(b, real)| {
            let seed = execution_seed(cfg.seed, b);
            match method {
                Method::FullReuse => execute_baseline(Baseline::FullReuse, &cfg.itlinq, real, &exec, &problem, cfg.fading, seed),
                Method::Itlinq => execute_baseline(Baseline::Itlinq, &cfg.itlinq, real, &exec, &problem, cfg.fading, seed),
                Method::StateAug | Method::StateAugAblated => {
                    let ck = ck.ok_or_else(|| RrmError::config("checkpoint", format!("method {method} needs a checkpoint")))?;
                    let regressor = if method == Method::StateAug {
                        ck.regressor.as_ref()
                    } else {
                        exec.init = InitMode::Uniform;
                        None
                    };
                    execute(&ck.trainer.policy, regressor, real, &exec, &problem, cfg.fading, seed)
                }
            }
        })
        .collect()
}

/// Metrics row, curves and summary of one method's traces.
pub fn summarize(method: Method, cfg: &RunConfig, traces: &[EpisodeTrace]) -> Result<(MetricsRow, Vec<CurveRow>, EvalSummary)> {
    let refs: Vec<&EpisodeTrace> = traces.iter().collect();
    let pool = pooled_ergodic_rates(&refs)?;
    let metrics = rate_metrics(&pool)?;
    let stride = (cfg.execution.steps / 100).max(1);
    let curves = evolution_curves(&refs, stride)?
        .iter()
        .map(|p| CurveRow::from_point(method.name(), p))
        .collect();
    let burn_in = cfg.execution.burn_in();
    let mut networks = Vec::with_capacity(traces.len());
    let (mut feasible, mut users) = (0usize, 0usize);
    for (b, tr) in traces.iter().enumerate() {
        let rep = feasibility_report(tr, cfg.power.f_min, burn_in)?;
        feasible += rep.feasible.iter().filter(|&&f| f).count();
        users += rep.feasible.len();
        networks.push(NetworkSummary {
            network: b,
            ergodic_rates: tr.ergodic_rates()?.0,
            margins: rep.margins,
            transient_length: transient_length(tr, cfg.execution.transient_fraction)?,
            duals: tr.duals.iter().map(|d| d.to_vec()).collect(),
        });
    }
    let row = MetricsRow {
        method: method.name().into(),
        m: cfg.geometry.users,
        f_min: cfg.power.f_min,
        mean: metrics.mean,
        min: metrics.min,
        p5: metrics.p5,
        transient_length: median(networks.iter().map(|n| n.transient_length as f64).collect()),
        feasible_fraction: feasible as f64 / users as f64,
    };
    let summary = EvalSummary {
        method: method.name().into(),
        burn_in,
        networks,
    };
    Ok((row, curves, summary))
}

fn method_rank(name: &str) -> usize {
    Method::from_str(name).map_or(usize::MAX, |m| m as usize)
}

/// Replaces rows of the re-evaluated methods in an existing CSV and keeps
/// the rest, ordered by method.
fn merge_rows<T, F>(path: &Path, fresh: Vec<T>, method_of: F) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned + Clone,
    F: Fn(&T) -> &str,
{
    let mut rows: Vec<T> = if path.exists() { io::read_csv(path)? } else { Vec::new() };
    rows.retain(|r| !fresh.iter().any(|f| method_of(f) == method_of(r)));
    rows.extend(fresh);
    rows.sort_by_key(|r| method_rank(method_of(r)));
    Ok(rows)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    if let Some(ck) = &ck {
        if !ck.is_complete() {
            return Err(RrmError::State("checkpoint has no trained regressor; finish training first".into()));
        }
    }
    let ablated = match &a.ablated_checkpoint {
        Some(p) => Some(Checkpoint::load(p)?),
        None => ck.clone(),
    };
    let cfg = match (&a.config, &ck) {
        (Some(p), _) => load_config(Some(p), a.seed)?,
        (None, Some(ck)) => {
            let mut c = ck.config.clone();
            if let Some(s) = a.seed {
                c.seed = s;
            }
            c
        }
        (None, None) => load_config(None, a.seed)?,
    };
    let ds = io::load_dataset(&a.dataset)?;
    check_dataset_matches(&cfg, &ds)?;
    if ds.test.is_empty() {
        return Err(RrmError::config("dataset.test_size", "dataset has no test networks"));
    }
    let mut methods = a.method.clone();
    methods.sort();
    methods.dedup();
    if let Some(m) = methods.iter().find(|m| m.needs_model() && ck.is_none()) {
        return Err(RrmError::config("checkpoint", format!("method {m} needs --checkpoint")));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| RrmError::io(&a.out, e))?;
    write_resolved(&a.out, "eval_config.json", &cfg)?;
    let (mut rows, mut curves) = (Vec::new(), Vec::new());
    for method in methods {
        let model = if method == Method::StateAugAblated { ablated.as_ref() } else { ck.as_ref() };
        let traces = evaluate_method(method, &cfg, model, &ds.test)?;
        let (row, c, summary) = summarize(method, &cfg, &traces)?;
        info!(
            "{method}: mean {:.3}, min {:.3}, p5 {:.3}, feasible {:.1}%",
            row.mean,
            row.min,
            row.p5,
            100.0 * row.feasible_fraction
        );
        io::write_json(&a.out.join(format!("summary_{}.json", method.name())), &summary)?;
        if a.traces {
            for (b, tr) in traces.iter().enumerate() {
                io::write_trace(&a.out.join("traces").join(method.name()).join(format!("net_{b:05}.csv")), tr)?;
            }
        }
        rows.push(row);
        curves.extend(c);
    }
    let metrics_path = a.out.join("metrics.csv");
    let rows = merge_rows(&metrics_path, rows, |r: &MetricsRow| r.method.as_str())?;
    io::write_csv(&metrics_path, &rows)?;
    let curves_path = a.out.join("curves.csv");
    let curves = merge_rows(&curves_path, curves, |r: &CurveRow| r.method.as_str())?;
    io::write_csv(&curves_path, &curves)
}

pub fn cmd_plot(a: &PlotArgs) -> Result<Vec<PathBuf>> {
    let files = io::plot_csv(&a.csv, &a.out)?;
    for f in &files {
        info!("wrote {}", f.display());
    }
    Ok(files)
}
