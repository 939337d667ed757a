//! Message-passing networks over the interference graph, with hand-written
//! reverse-mode gradients.
//!
//! Nodes are users. A layer maps node features `Y` (m x d_in) to
//!
//! ```text
//! Z_i = W_self^T y_i + e_ii W_dir^T y_i + sum_{j != i} e_ji W_nbr^T y_j + b
//! ```
//!
//! followed by a leaky ReLU on every layer but the last. `e_ji` is the
//! normalized gain from transmitter `j` to receiver `i`, so node `i`
//! aggregates the interference it receives. The last layer emits one
//! scalar per node that goes through the output head.
//!
//! Parameters live in one flat `Vec<f64>`; per layer the layout is
//! `W_self | W_dir | W_nbr` (each d_in x d_out, row-major) then `b`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmError};
use crate::rng;

/// Log-domain squashing of power gains into edge weights:
/// `tanh((log10 g - log10 g_ref) / scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeNormalization {
    pub reference_gain: f64,
    pub scale_decades: f64,
}

impl EdgeNormalization {
    pub fn new(reference_gain: f64, scale_decades: f64) -> Result<Self> {
        if !(reference_gain.is_finite() && reference_gain > 0.0) {
            return Err(RrmError::config("gnn.reference_gain", "must be > 0"));
        }
        if !(scale_decades.is_finite() && scale_decades > 0.0) {
            return Err(RrmError::config("gnn.edge_scale_decades", "must be > 0"));
        }
        Ok(EdgeNormalization {
            reference_gain,
            scale_decades,
        })
    }

    /// Midpoint set to the median direct-link gain of `gains`.
    pub fn from_direct_links<'a>(
        gains: impl IntoIterator<Item = &'a Array2<f64>>,
        scale_decades: f64,
    ) -> Result<Self> {
        let mut direct: Vec<f64> = gains.into_iter().flat_map(|g| g.diag().to_vec()).collect();
        if direct.is_empty() {
            return Err(RrmError::Domain("no direct links to normalize against".into()));
        }
        direct.sort_by(f64::total_cmp);
        let n = direct.len();
        let median = if n % 2 == 1 {
            direct[n / 2]
        } else {
            // Geometric midpoint; gains are compared in the log domain.
            (direct[n / 2 - 1] * direct[n / 2]).sqrt()
        };
        Self::new(median, scale_decades)
    }

    pub fn apply(&self, gain: f64) -> f64 {
        ((gain.log10() - self.reference_gain.log10()) / self.scale_decades).tanh()
    }
}

/// A graph ready for a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub edge_weight: Array2<f64>,
    pub node_feature: Array2<f64>,
}

impl GraphInput {
    pub fn users(&self) -> usize {
        self.edge_weight.nrows()
    }
}

pub fn build_graph(gain: &Array2<f64>, node_feature: Array2<f64>, norm: &EdgeNormalization) -> Result<GraphInput> {
    let (m, cols) = gain.dim();
    if m != cols {
        return Err(RrmError::Domain(format!("gain matrix is {m}x{cols}")));
    }
    if node_feature.nrows() != m {
        return Err(RrmError::Domain(format!(
            "{} node feature rows for {m} users",
            node_feature.nrows()
        )));
    }
    if let Some(((i, j), g)) = gain.indexed_iter().find(|(_, g)| !(g.is_finite() && **g > 0.0)) {
        return Err(RrmError::Domain(format!("gain ({i}, {j}) = {g} must be positive")));
    }
    Ok(GraphInput {
        edge_weight: gain.mapv(|g| norm.apply(g)),
        node_feature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputHead {
    /// `scale * sigmoid(z)`, used for powers in `(0, scale)`.
    Sigmoid { scale: f64 },
    /// `ln(1 + e^z)`, used for dual estimates.
    Softplus,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl OutputHead {
    fn apply(&self, z: f64) -> f64 {
        match *self {
            OutputHead::Sigmoid { scale } => scale * sigmoid(z),
            OutputHead::Softplus => softplus(z),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match *self {
            OutputHead::Sigmoid { scale } => {
                let s = sigmoid(z);
                scale * s * (1.0 - s)
            }
            OutputHead::Softplus => sigmoid(z),
        }
    }
}

/// Flat parameter storage with a fixed layer layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    dims: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    d_in: usize,
    d_out: usize,
    w_self: usize,
    w_dir: usize,
    w_nbr: usize,
    bias: usize,
    end: usize,
}

fn layout(dims: &[usize]) -> Vec<LayerSlots> {
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0], w[1]);
            let block = d_in * d_out;
            let slots = LayerSlots {
                d_in,
                d_out,
                w_self: offset,
                w_dir: offset + block,
                w_nbr: offset + 2 * block,
                bias: offset + 3 * block,
                end: offset + 3 * block + d_out,
            };
            offset = slots.end;
            slots
        })
        .collect()
}

impl GnnParams {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(RrmError::config("gnn.dims", format!("need >= 2 positive widths, got {dims:?}")));
        }
        if *dims.last().unwrap() != 1 {
            return Err(RrmError::config("gnn.dims", "output width must be 1"));
        }
        let len = layout(dims).last().map_or(0, |l| l.end);
        Ok(GnnParams {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Uniform `(-1/sqrt(d_in), 1/sqrt(d_in))` initialization.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        let mut rng = rng::substream(seed, &[rng::PARAM_INIT]);
        for slot in layout(dims) {
            let bound = 1.0 / (slot.d_in as f64).sqrt();
            for v in &mut params.data[slot.w_self..slot.end] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn from_flat(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        if data.len() != params.data.len() {
            return Err(RrmError::config(
                "gnn.params",
                format!("expected {} values for dims {dims:?}, got {}", params.data.len(), data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(RrmError::numeric("gnn params", "non-finite parameter"));
        }
        params.data = data;
        Ok(params)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn block(&self, start: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.data[start..start + rows * cols]).unwrap()
    }

    fn vector(&self, start: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[start..start + len])
    }
}

/// Flat gradient aligned with [`GnnParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn add_scaled(&mut self, other: &GradientVector, scale: f64) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a += scale * b);
    }
}

/// A message-passing network with an output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gnn {
    pub params: GnnParams,
    pub head: OutputHead,
    pub negative_slope: f64,
}

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.01;

struct LayerCache {
    input: Array2<f64>,
    dir_in: Array2<f64>,
    nbr_in: Array2<f64>,
    pre: Array2<f64>,
}

pub struct ForwardCache {
    layers: Vec<LayerCache>,
    aggregation: Array2<f64>,
    direct: Array1<f64>,
    logits: Vec<f64>,
}

impl Gnn {
    pub fn new(params: GnnParams, head: OutputHead) -> Self {
        Gnn {
            params,
            head,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
        }
    }

    pub fn input_width(&self) -> usize {
        self.params.dims[0]
    }

    fn check_graph(&self, graph: &GraphInput) -> Result<()> {
        let m = graph.users();
        if graph.edge_weight.ncols() != m || graph.node_feature.nrows() != m {
            return Err(RrmError::config(
                "graph",
                format!(
                    "edge weights {:?} and node features {:?} disagree",
                    graph.edge_weight.dim(),
                    graph.node_feature.dim()
                ),
            ));
        }
        if graph.node_feature.ncols() != self.input_width() {
            return Err(RrmError::config(
                "gnn.dims",
                format!(
                    "network expects {} node features, graph has {}",
                    self.input_width(),
                    graph.node_feature.ncols()
                ),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, graph: &GraphInput) -> Result<Vec<f64>> {
        Ok(self.forward_cached(graph)?.0)
    }

    pub fn forward_cached(&self, graph: &GraphInput) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_graph(graph)?;
        let m = graph.users();
        // aggregation[i, j] = e_ji for j != i.
        let mut aggregation = graph.edge_weight.t().to_owned();
        aggregation.diag_mut().fill(0.0);
        let direct = graph.edge_weight.diag().to_owned();
        let slots = layout(&self.params.dims);
        let mut layers = Vec::with_capacity(slots.len());
        let mut h = graph.node_feature.clone();
        for (l, slot) in slots.iter().enumerate() {
            let w_self = self.params.block(slot.w_self, slot.d_in, slot.d_out);
            let w_dir = self.params.block(slot.w_dir, slot.d_in, slot.d_out);
            let w_nbr = self.params.block(slot.w_nbr, slot.d_in, slot.d_out);
            let bias = self.params.vector(slot.bias, slot.d_out);
            let dir_in = &h * &direct.view().insert_axis(Axis(1));
            let nbr_in = aggregation.dot(&h);
            let mut pre = h.dot(&w_self) + dir_in.dot(&w_dir) + nbr_in.dot(&w_nbr);
            pre += &bias;
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(RrmError::numeric("gnn forward", format!("non-finite activation in layer {l}")));
            }
            let next = if l + 1 < slots.len() {
                let slope = self.negative_slope;
                pre.mapv(|z| if z > 0.0 { z } else { slope * z })
            } else {
                pre.clone()
            };
            layers.push(LayerCache {
                input: std::mem::replace(&mut h, next),
                dir_in,
                nbr_in,
                pre,
            });
        }
        debug_assert_eq!(h.dim(), (m, 1));
        let logits: Vec<f64> = h.column(0).to_vec();
        let out = logits.iter().map(|&z| self.head.apply(z)).collect();
        Ok((
            out,
            ForwardCache {
                layers,
                aggregation,
                direct,
                logits,
            },
        ))
    }

    /// Accumulates `d_out^T (d out / d params)` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut GradientVector) -> Result<()> {
        if grad.0.len() != self.params.len() {
            return Err(RrmError::Domain("gradient length does not match parameters".into()));
        }
        if d_out.len() != cache.logits.len() {
            return Err(RrmError::Domain("output cotangent has the wrong length".into()));
        }
        let m = d_out.len();
        let slots = layout(&self.params.dims);
        let mut d_pre = Array2::from_shape_fn((m, 1), |(i, _)| d_out[i] * self.head.derivative(cache.logits[i]));
        for (l, slot) in slots.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            let g = &mut grad.0;
            accumulate(&mut g[slot.w_self..slot.w_dir], &lc.input.t().dot(&d_pre));
            accumulate(&mut g[slot.w_dir..slot.w_nbr], &lc.dir_in.t().dot(&d_pre));
            accumulate(&mut g[slot.w_nbr..slot.bias], &lc.nbr_in.t().dot(&d_pre));
            for (b, d) in g[slot.bias..slot.end].iter_mut().zip(d_pre.sum_axis(Axis(0))) {
                *b += d;
            }
            if l == 0 {
                break;
            }
            let w_self = self.params.block(slot.w_self, slot.d_in, slot.d_out);
            let w_dir = self.params.block(slot.w_dir, slot.d_in, slot.d_out);
            let w_nbr = self.params.block(slot.w_nbr, slot.d_in, slot.d_out);
            let mut d_h = d_pre.dot(&w_self.t());
            d_h += &(&d_pre.dot(&w_dir.t()) * &cache.direct.view().insert_axis(Axis(1)));
            d_h += &cache.aggregation.t().dot(&d_pre.dot(&w_nbr.t()));
            let prev = &cache.layers[l - 1].pre;
            let slope = self.negative_slope;
            d_h.zip_mut_with(prev, |d, &z| {
                if z <= 0.0 {
                    *d *= slope
                }
            });
            d_pre = d_h;
        }
        if grad.0.iter().any(|v| !v.is_finite()) {
            return Err(RrmError::numeric("gnn backward", "non-finite gradient"));
        }
        Ok(())
    }

    /// Pre-activation sign pattern of every hidden unit; used by gradient
    /// checks to detect when a perturbation crosses a kink.
    pub fn activation_pattern(&self, graph: &GraphInput) -> Result<Vec<bool>> {
        let (_, cache) = self.forward_cached(graph)?;
        let hidden = cache.layers.len().saturating_sub(1);
        Ok(cache.layers[..hidden]
            .iter()
            .flat_map(|lc| lc.pre.iter().map(|&z| z > 0.0).collect::<Vec<_>>())
            .collect())
    }
}

fn accumulate(dst: &mut [f64], src: &Array2<f64>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

/// A scalar objective over the per-step outputs of one episode.
pub trait EpisodeLoss {
    /// Returns the value and its gradient with respect to every output.
    fn value_and_grad(&self, outputs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)>;
}

/// A constant objective; its parameter gradient is zero.
pub struct ConstantLoss(pub f64);

impl EpisodeLoss for ConstantLoss {
    fn value_and_grad(&self, outputs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        Ok((self.0, outputs.iter().map(|o| vec![0.0; o.len()]).collect()))
    }
}

/// `scale * sum_t ||out_t - target_t||^2`.
pub struct SquaredError<'a> {
    pub targets: &'a [Vec<f64>],
    pub scale: f64,
}

impl EpisodeLoss for SquaredError<'_> {
    fn value_and_grad(&self, outputs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        if outputs.len() != self.targets.len() {
            return Err(RrmError::Domain("one target per output is required".into()));
        }
        let mut value = 0.0;
        let mut grads = Vec::with_capacity(outputs.len());
        for (o, t) in outputs.iter().zip(self.targets) {
            if o.len() != t.len() {
                return Err(RrmError::Domain("target width differs from output width".into()));
            }
            let g: Vec<f64> = o.iter().zip(t).map(|(a, b)| 2.0 * self.scale * (a - b)).collect();
            value += o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            grads.push(g);
        }
        Ok((self.scale * value, grads))
    }
}

/// Runs the network on every graph, evaluates `loss` and backpropagates.
pub fn loss_and_grad(gnn: &Gnn, graphs: &[GraphInput], loss: &dyn EpisodeLoss) -> Result<(f64, GradientVector)> {
    let (value, _, grad) = loss_and_grad_with_outputs(gnn, graphs, loss)?;
    Ok((value, grad))
}

/// [`loss_and_grad`] that also hands back the per-graph outputs.
pub fn loss_and_grad_with_outputs(
    gnn: &Gnn,
    graphs: &[GraphInput],
    loss: &dyn EpisodeLoss,
) -> Result<(f64, Vec<Vec<f64>>, GradientVector)> {
    let mut outputs = Vec::with_capacity(graphs.len());
    let mut caches = Vec::with_capacity(graphs.len());
    for g in graphs {
        let (out, cache) = gnn.forward_cached(g)?;
        outputs.push(out);
        caches.push(cache);
    }
    let (value, d_outputs) = loss.value_and_grad(&outputs)?;
    if !value.is_finite() {
        return Err(RrmError::numeric("loss", format!("value {value}")));
    }
    let mut grad = GradientVector::zeros(gnn.params.len());
    // Fixed summation order over steps keeps gradients reproducible.
    for (cache, d_out) in caches.iter().zip(&d_outputs) {
        gnn.backward(cache, d_out, &mut grad)?;
    }
    Ok((value, outputs, grad))
}

/// `||params||^2 / 2` and its gradient (the parameters themselves).
pub fn param_quadratic(params: &GnnParams) -> (f64, GradientVector) {
    let v = params.as_slice().iter().map(|p| p * p).sum::<f64>() / 2.0;
    (v, GradientVector(params.as_slice().to_vec()))
}

/// Policy network: node feature `mu_i / mu_scale`, output powers in `(0, P_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub gnn: Gnn,
    pub p_max: f64,
    pub mu_scale: f64,
    pub edge_norm: EdgeNormalization,
}

/// Dual regressor: constant unit node features, softplus output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorNet {
    pub gnn: Gnn,
    pub edge_norm: EdgeNormalization,
}

/// Layer widths `[d_in, hidden.., 1]`.
pub fn layer_dims(d_in: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(d_in).chain(hidden.iter().copied()).chain(std::iter::once(1)).collect()
}

impl PolicyNet {
    pub fn new(params: GnnParams, p_max: f64, mu_scale: f64, edge_norm: EdgeNormalization) -> Result<Self> {
        if params.dims()[0] != 1 {
            return Err(RrmError::config("gnn.dims", "policy takes a single node feature"));
        }
        if !(p_max.is_finite() && p_max > 0.0) {
            return Err(RrmError::config("power.p_max", "must be > 0"));
        }
        if !(mu_scale.is_finite() && mu_scale > 0.0) {
            return Err(RrmError::config("gnn.mu_scale", "must be > 0"));
        }
        Ok(PolicyNet {
            gnn: Gnn::new(params, OutputHead::Sigmoid { scale: p_max }),
            p_max,
            mu_scale,
            edge_norm,
        })
    }

    pub fn graph(&self, gain: &Array2<f64>, mu: &[f64]) -> Result<GraphInput> {
        if mu.len() != gain.nrows() {
            return Err(RrmError::config(
                "duals",
                format!("{} dual variables for {} users", mu.len(), gain.nrows()),
            ));
        }
        let features = Array2::from_shape_fn((mu.len(), 1), |(i, _)| mu[i] / self.mu_scale);
        build_graph(gain, features, &self.edge_norm)
    }

    pub fn forward(&self, gain: &Array2<f64>, mu: &[f64]) -> Result<Vec<f64>> {
        self.gnn.forward(&self.graph(gain, mu)?)
    }
}

impl RegressorNet {
    pub fn new(params: GnnParams, edge_norm: EdgeNormalization) -> Result<Self> {
        if params.dims()[0] != 1 {
            return Err(RrmError::config("gnn.dims", "regressor takes a single dummy feature"));
        }
        Ok(RegressorNet {
            gnn: Gnn::new(params, OutputHead::Softplus),
            edge_norm,
        })
    }

    pub fn graph(&self, long_term_gain: &Array2<f64>) -> Result<GraphInput> {
        let m = long_term_gain.nrows();
        build_graph(long_term_gain, Array2::ones((m, 1)), &self.edge_norm)
    }

    pub fn forward(&self, long_term_gain: &Array2<f64>) -> Result<Vec<f64>> {
        self.gnn.forward(&self.graph(long_term_gain)?)
    }
}

/// Applies `out = pi(in)` to the rows of `x`.
pub fn permute_rows(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = x.clone();
    for (new, &old) in perm.iter().enumerate() {
        out.row_mut(new).assign(&x.row(old));
    }
    out
}

/// `P G P^T` for the permutation taking index `perm[k]` to `k`.
pub fn permute_matrix(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(x.dim(), |(i, j)| x[[perm[i], perm[j]]])
}
