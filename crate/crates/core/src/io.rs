//! On-disk formats: checkpoints, dataset directories, CSV logs and SVG
//! charts.
//!
//! Checkpoints are JSON. Network parameters are stored as a `dims` shape
//! header plus one flat row-major `f64` array per network; floats are
//! written in shortest round-trip form so a reload is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_realization, GeometryConfig, NetworkRealization};
use crate::config::RunConfig;
use crate::error::{Result, RrmError};
use crate::gnn::RegressorNet;
use crate::lagrangian::EpisodeTrace;
use crate::metrics::CurvePoint;
use crate::rng;
use crate::trainer::{EpochLog, RegressorLog, TrainerState};

pub const CHECKPOINT_FORMAT: &str = "stateaug-rrm-checkpoint/1";
pub const MANIFEST_FORMAT: &str = "stateaug-rrm-dataset/1";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| RrmError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| RrmError::format(path, e))
}

/// Writes through a temporary file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| RrmError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| RrmError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RrmError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RrmError::format(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: RunConfig,
    pub trainer: TrainerState,
    pub regressor: Option<RegressorNet>,
    pub regressor_log: Option<RegressorLog>,
}

impl Checkpoint {
    pub fn new(config: RunConfig, trainer: TrainerState) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config,
            trainer,
            regressor: None,
            regressor_log: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(RrmError::format(path, format!("unsupported checkpoint format `{}`", ck.format)));
        }
        let params = &ck.trainer.policy.gnn.params;
        if params.dims().first() != Some(&1) || params.dims().last() != Some(&1) {
            return Err(RrmError::format(path, "policy must map one feature to one output per node"));
        }
        Ok(ck)
    }

    pub fn is_complete(&self) -> bool {
        self.regressor.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: String,
    pub index: usize,
    pub seed: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

/// Seed of realization `index` of `split` under root seed `root`.
pub fn realization_seed(root: u64, split: Split, index: usize) -> u64 {
    rng::derive_seed(root, &[rng::DATASET, split.tag(), index as u64])
}

impl Manifest {
    pub fn plan(cfg: &RunConfig) -> Self {
        let mut entries = Vec::new();
        for (split, count) in [(Split::Train, cfg.dataset.train_size), (Split::Test, cfg.dataset.test_size)] {
            for index in 0..count {
                entries.push(ManifestEntry {
                    split: split.name().into(),
                    index,
                    seed: realization_seed(cfg.seed, split, index),
                    file: format!("{}/{index:05}.json", split.name()),
                });
            }
        }
        Manifest {
            format: MANIFEST_FORMAT.into(),
            seed: cfg.seed,
            geometry: cfg.geometry.clone(),
            train_size: cfg.dataset.train_size,
            test_size: cfg.dataset.test_size,
            entries,
        }
    }
}

/// What [`generate_dataset`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerateOutcome {
    Written(usize),
    /// The directory already holds this exact manifest.
    Unchanged,
}

/// Writes every planned realization plus `manifest.json` into `dir`, which
/// must be empty or hold the identical manifest.
pub fn generate_dataset(cfg: &RunConfig, dir: &Path) -> Result<GenerateOutcome> {
    let manifest = Manifest::plan(cfg);
    let manifest_path = dir.join("manifest.json");
    if dir.exists() {
        if manifest_path.exists() {
            let existing: Manifest = read_json(&manifest_path)?;
            if existing == manifest {
                return Ok(GenerateOutcome::Unchanged);
            }
            return Err(RrmError::State(format!(
                "{} already holds a different dataset",
                dir.display()
            )));
        }
        let mut listing = fs::read_dir(dir).map_err(|e| RrmError::io(dir, e))?;
        if listing.next().is_some() {
            return Err(RrmError::State(format!("output directory {} is not empty", dir.display())));
        }
    }
    for entry in &manifest.entries {
        let real = generate_realization(&cfg.geometry, entry.seed)?;
        write_json(&dir.join(&entry.file), &real)?;
    }
    write_json(&manifest_path, &manifest)?;
    Ok(GenerateOutcome::Written(manifest.entries.len()))
}

pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<NetworkRealization>,
    pub test: Vec<NetworkRealization>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(RrmError::format(dir.join("manifest.json"), "unsupported dataset format"));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for e in &manifest.entries {
        let path = dir.join(&e.file);
        let real: NetworkRealization = read_json(&path)?;
        if real.users() != manifest.geometry.users || real.long_term_gain.dim() != (real.users(), real.users()) {
            return Err(RrmError::format(&path, "realization shape disagrees with the manifest"));
        }
        match e.split.as_str() {
            "train" => train.push(real),
            "test" => test.push(real),
            other => return Err(RrmError::format(&path, format!("unknown split `{other}`"))),
        }
    }
    Ok(Dataset { manifest, train, test })
}

fn csv_error(path: &Path, e: csv::Error) -> RrmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => RrmError::io(path, io),
        other => RrmError::format(path, format!("{other:?}")),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| RrmError::format(path, e))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    write_csv(path, log)
}

/// One evaluation summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub m: usize,
    pub f_min: f64,
    pub mean: f64,
    pub min: f64,
    pub p5: f64,
    /// Median over test networks, in steps.
    pub transient_length: f64,
    /// Fraction of users meeting `f_min` after burn-in.
    pub feasible_fraction: f64,
}

/// One point of an execution-time evolution curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub t: usize,
    pub mean: f64,
    pub min: f64,
    pub p5: f64,
}

impl CurveRow {
    pub fn from_point(method: &str, p: &CurvePoint) -> Self {
        CurveRow {
            method: method.into(),
            t: p.t,
            mean: p.metrics.mean,
            min: p.metrics.min,
            p5: p.metrics.p5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceRow {
    t: usize,
    user: usize,
    power: f64,
    rate: f64,
    mu: f64,
}

/// Per-step, per-user CSV of one execution.
pub fn write_trace(path: &Path, trace: &EpisodeTrace) -> Result<()> {
    let mut rows = Vec::with_capacity(trace.steps() * trace.users());
    for t in 0..trace.steps() {
        let mu = &trace.duals[t / trace.window];
        for i in 0..trace.users() {
            rows.push(TraceRow {
                t,
                user: i,
                power: trace.powers[t][i],
                rate: trace.rates[t][i],
                mu: mu[i],
            });
        }
    }
    write_csv(path, &rows)
}

/// A named polyline for [`line_chart_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Plot-area geometry of the SVG charts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartFrame {
    pub width: f64,
    pub height: f64,
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl Default for ChartFrame {
    fn default() -> Self {
        ChartFrame {
            width: 640.0,
            height: 400.0,
            left: 60.0,
            right: 150.0,
            top: 30.0,
            bottom: 40.0,
        }
    }
}

/// Data bounds of a set of series, padded when degenerate.
pub fn data_bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() || !y0.is_finite() {
        return None;
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    Some((x0, x1, y0, y1))
}

impl ChartFrame {
    /// Pixel position of a data point.
    pub fn project(&self, bounds: (f64, f64, f64, f64), x: f64, y: f64) -> (f64, f64) {
        let (x0, x1, y0, y1) = bounds;
        let w = self.width - self.left - self.right;
        let h = self.height - self.top - self.bottom;
        (
            self.left + (x - x0) / (x1 - x0) * w,
            self.top + (1.0 - (y - y0) / (y1 - y0)) * h,
        )
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal line chart: axes with end ticks, one polyline per series and a
/// legend. Coordinates are rounded to 0.01 px.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], frame: &ChartFrame) -> Result<String> {
    let bounds = data_bounds(series).ok_or_else(|| RrmError::Domain("nothing to plot".into()))?;
    let f = frame;
    let (x0, x1, y0, y1) = bounds;
    let (ax, ay) = (f.left, f.height - f.bottom);
    let (bx, by) = (f.width - f.right, f.top);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        w = f.width,
        h = f.height
    );
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += &format!("<text x=\"{:.2}\" y=\"18\" text-anchor=\"middle\">{}</text>\n", (ax + bx) / 2.0, escape(title));
    out += &format!("<line class=\"axis\" x1=\"{ax}\" y1=\"{ay}\" x2=\"{bx}\" y2=\"{ay}\" stroke=\"black\"/>\n");
    out += &format!("<line class=\"axis\" x1=\"{ax}\" y1=\"{ay}\" x2=\"{ax}\" y2=\"{by}\" stroke=\"black\"/>\n");
    for (v, x) in [(x0, ax), (x1, bx)] {
        out += &format!("<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n", ay + 16.0, fmt_tick(v));
    }
    for (v, y) in [(y0, ay), (y1, by)] {
        out += &format!("<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n", ax - 6.0, y + 4.0, fmt_tick(v));
    }
    out += &format!("<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n", (ax + bx) / 2.0, f.height - 6.0, escape(x_label));
    out += &format!(
        "<text x=\"14\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">{}</text>\n",
        (ay + by) / 2.0,
        (ay + by) / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (px, py) = f.project(bounds, x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        out += &format!(
            "<polyline data-label=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            escape(&s.label),
            pts.join(" ")
        );
        let ly = f.top + 16.0 * k as f64 + 8.0;
        out += &format!("<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n", bx + 10.0, bx + 30.0);
        out += &format!("<text class=\"legend\" x=\"{:.2}\" y=\"{:.2}\">{}</text>\n", bx + 36.0, ly + 4.0, escape(&s.label));
    }
    out += "</svg>\n";
    Ok(out)
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Groups curve rows by method, in order of first appearance.
pub fn curve_series(rows: &[CurveRow], metric: &str) -> Result<Vec<Series>> {
    let pick = |r: &CurveRow| match metric {
        "mean" => Ok(r.mean),
        "min" => Ok(r.min),
        "p5" => Ok(r.p5),
        other => Err(RrmError::Domain(format!("unknown metric `{other}`"))),
    };
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        let y = pick(r)?;
        match series.iter_mut().find(|s| s.label == r.method) {
            Some(s) => s.points.push((r.t as f64, y)),
            None => series.push(Series {
                label: r.method.clone(),
                points: vec![(r.t as f64, y)],
            }),
        }
    }
    Ok(series)
}

/// Renders `<stem>_{mean,min,p5}.svg` from a curves CSV, or the training
/// curves from a training log CSV, into `out_dir`.
pub fn plot_csv(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let header = {
        let mut r = csv::Reader::from_path(csv_path).map_err(|e| csv_error(csv_path, e))?;
        r.headers().map_err(|e| csv_error(csv_path, e))?.clone()
    };
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let frame = ChartFrame::default();
    let mut written = Vec::new();
    let mut emit = |name: String, svg: String| -> Result<()> {
        let path = out_dir.join(name);
        write_atomic(&path, svg.as_bytes())?;
        written.push(path);
        Ok(())
    };
    if header.iter().any(|h| h == "epoch") {
        let log: Vec<EpochLog> = read_csv(csv_path)?;
        if log.is_empty() {
            return Err(RrmError::format(csv_path, "no rows to plot"));
        }
        let rates = ["rate_mean", "rate_min", "rate_p5"].map(|name| Series {
            label: name.trim_start_matches("rate_").into(),
            points: log
                .iter()
                .map(|l| {
                    let v = match name {
                        "rate_mean" => l.rate_mean,
                        "rate_min" => l.rate_min,
                        _ => l.rate_p5,
                    };
                    (l.epoch as f64, v)
                })
                .collect(),
        });
        emit(format!("{stem}_rates.svg"), line_chart_svg("Training rates", "epoch", "bits/s/Hz", &rates, &frame)?)?;
        let lag = [
            Series { label: "lagrangian".into(), points: log.iter().map(|l| (l.epoch as f64, l.lagrangian)).collect() },
            Series { label: "utility".into(), points: log.iter().map(|l| (l.epoch as f64, l.utility)).collect() },
        ];
        emit(format!("{stem}_objective.svg"), line_chart_svg("Training objective", "epoch", "value", &lag, &frame)?)?;
        return Ok(written);
    }
    let rows: Vec<CurveRow> = read_csv(csv_path)?;
    if rows.is_empty() {
        return Err(RrmError::format(csv_path, "no rows to plot"));
    }
    for metric in ["mean", "min", "p5"] {
        let series = curve_series(&rows, metric)?;
        let svg = line_chart_svg(&format!("{metric} rate"), "time step", "bits/s/Hz", &series, &frame)?;
        emit(format!("{stem}_{metric}.svg"), svg)?;
    }
    Ok(written)
}
