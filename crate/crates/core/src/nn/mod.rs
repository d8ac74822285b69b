//! Small dense and graph-convolutional networks with hand-written
//! backpropagation, trained in double precision.
//!
//! Parameters live in one flat vector in a fixed canonical order: for every
//! layer the weight matrix (row-major, `fan_in × fan_out`) followed by its
//! bias. That vector is what the federated aggregator averages.

mod adam;
mod gradcheck;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{
    check_coordinates, compare_gradients, grad_check, random_batch, GradCheckReport, GRAD_CHECK_COORDS,
    GRAD_CHECK_FLOOR, GRAD_CHECK_STEP,
};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::BeamGraph;
use crate::error::{Error, Result};
use crate::seed::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Gnn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Gnn => "gnn",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "gnn" => Ok(ModelKind::Gnn),
            other => Err(Error::validation(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Arch {
    /// Link features → hidden layers → one logit per beam.
    Mlp {
        input: usize,
        hidden: Vec<usize>,
        n_beams: usize,
    },
    /// Per-beam node features → graph convolutions over the beam grid →
    /// per-node scalar readout.
    Gnn {
        node_features: usize,
        hidden: Vec<usize>,
        n_az: usize,
        n_el: usize,
    },
}

/// `(fan_in, fan_out)` of one dense block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

impl Arch {
    pub fn default_mlp(n_beams: usize) -> Self {
        Arch::Mlp {
            input: crate::dataset::NUM_FEATURES,
            hidden: vec![64, 64],
            n_beams,
        }
    }

    pub fn default_gnn(n_az: usize, n_el: usize) -> Self {
        Arch::Gnn {
            node_features: crate::dataset::GNN_NODE_FEATURES,
            hidden: vec![32, 32],
            n_az,
            n_el,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Arch::Mlp { .. } => ModelKind::Mlp,
            Arch::Gnn { .. } => ModelKind::Gnn,
        }
    }

    pub fn n_beams(&self) -> usize {
        match self {
            Arch::Mlp { n_beams, .. } => *n_beams,
            Arch::Gnn { n_az, n_el, .. } => n_az * n_el,
        }
    }

    /// Width of one input row.
    pub fn input_width(&self) -> usize {
        match self {
            Arch::Mlp { input, .. } => *input,
            Arch::Gnn { node_features, .. } => node_features * self.n_beams(),
        }
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let (first, hidden, last) = match self {
            Arch::Mlp { input, hidden, n_beams } => (*input, hidden, *n_beams),
            Arch::Gnn {
                node_features, hidden, ..
            } => (*node_features, hidden, 1),
        };
        let mut widths = vec![first];
        widths.extend(hidden);
        widths.push(last);
        widths
            .windows(2)
            .map(|w| LayerShape {
                fan_in: w[0],
                fan_out: w[1],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::param_count).sum()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let widths_ok = match self {
            Arch::Mlp { input, hidden, n_beams } => *input > 0 && *n_beams > 0 && hidden.iter().all(|&h| h > 0),
            Arch::Gnn {
                node_features,
                hidden,
                n_az,
                n_el,
            } => *node_features > 0 && *n_az > 0 && *n_el > 0 && !hidden.is_empty() && hidden.iter().all(|&h| h > 0),
        };
        if !widths_ok {
            errs.push(format!(
                "model architecture has a zero width or no graph layer: {self:?}"
            ));
        }
        errs
    }

    /// Canonical text form used in checkpoints.
    pub fn descriptor(&self) -> String {
        toml::to_string(self).expect("arch serializes")
    }
}

/// Weight matrix and bias of one layer, copied out of the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub flat: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Arch) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            flat: vec![0.0; n],
        }
    }

    pub fn from_flat(arch: Arch, flat: Vec<f64>) -> Result<Self> {
        let expected = arch.param_count();
        if flat.len() != expected {
            return Err(Error::Dimension {
                layer: "parameter vector".into(),
                expected,
                actual: flat.len(),
            });
        }
        Ok(Self { arch, flat })
    }

    pub fn param_count(&self) -> usize {
        self.flat.len()
    }

    pub fn to_layers(&self) -> Vec<DenseLayer> {
        let mut off = 0;
        self.arch
            .layers()
            .iter()
            .map(|l| {
                let (w, b, next) = split_layer(&self.flat, off, l);
                off = next;
                DenseLayer {
                    weight: w.to_owned(),
                    bias: b.to_owned(),
                }
            })
            .collect()
    }

    pub fn from_layers(arch: Arch, layers: &[DenseLayer]) -> Result<Self> {
        let mut flat = Vec::with_capacity(arch.param_count());
        for l in layers {
            flat.extend(l.weight.iter());
            flat.extend(l.bias.iter());
        }
        Self::from_flat(arch, flat)
    }

    /// FNV-1a over the little-endian parameter bytes.
    pub fn digest(&self) -> u64 {
        let bytes: Vec<u8> = self.flat.iter().flat_map(|x| x.to_le_bytes()).collect();
        crate::seed::fnv1a64(&bytes)
    }
}

fn split_layer<'a>(flat: &'a [f64], off: usize, l: &LayerShape) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>, usize) {
    let nw = l.fan_in * l.fan_out;
    let w = ArrayView2::from_shape((l.fan_in, l.fan_out), &flat[off..off + nw]).expect("layer shape");
    let b = ArrayView1::from(&flat[off + nw..off + nw + l.fan_out]);
    (w, b, off + nw + l.fan_out)
}

/// Glorot-uniform weights, zero biases.
pub fn init(arch: &Arch, seed: u64) -> ModelParams {
    let mut rng = substream(seed, "init", &[]);
    let mut flat = Vec::with_capacity(arch.param_count());
    for l in arch.layers() {
        let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        flat.extend((0..l.fan_in * l.fan_out).map(|_| rng.random_range(-limit..limit)));
        flat.extend(std::iter::repeat_n(0.0, l.fan_out));
    }
    ModelParams {
        arch: arch.clone(),
        flat,
    }
}

/// Sparse rows of the normalized beam adjacency.
type Propagation = Vec<Vec<(usize, f64)>>;

fn graph_rows(arch: &Arch) -> Option<Propagation> {
    match arch {
        Arch::Gnn { n_az, n_el, .. } => Some(BeamGraph::for_grid(*n_az, *n_el).sparse_rows()),
        Arch::Mlp { .. } => None,
    }
}

/// `dst[n, :] = sum_j a[n, j] * src[j, :]` on node-major blocks viewed as
/// `N × (B * width)`.
fn propagate(rows: &Propagation, src: &Array2<f64>, dst: &mut Array2<f64>) {
    let n_nodes = rows.len();
    let width = src.len() / n_nodes;
    let src = src.view().into_shape_with_order((n_nodes, width)).expect("contiguous");
    let mut dst = dst
        .view_mut()
        .into_shape_with_order((n_nodes, width))
        .expect("contiguous");
    for (n, row) in rows.iter().enumerate() {
        let mut out = dst.row_mut(n);
        let (j0, w0) = row[0];
        out.zip_mut_with(&src.row(j0), |o, &s| *o = w0 * s);
        for &(j, w) in &row[1..] {
            out.scaled_add(w, &src.row(j));
        }
    }
}

/// Reallocates `a` only when the requested shape changes.
fn ensure(a: &mut Array2<f64>, rows: usize, cols: usize) {
    if a.dim() != (rows, cols) {
        *a = Array2::zeros((rows, cols));
    }
}

/// `out = input · w + b`, optionally rectified. The rectifier lets NaN
/// through so divergence is not masked.
fn dense(input: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>, out: &mut Array2<f64>, relu: bool) {
    ensure(out, input.nrows(), w.ncols());
    general_mat_mul(1.0, &input, &w, 0.0, out);
    let b = b.as_slice().expect("contiguous bias");
    for mut row in out.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        if relu {
            for (v, &bj) in row.iter_mut().zip(b) {
                let z = *v + bj;
                *v = if z < 0.0 { 0.0 } else { z };
            }
        } else {
            for (v, &bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
    }
}

/// Zeroes gradient entries where the rectifier was inactive.
fn mask_inactive(d: &mut Array2<f64>, act: &Array2<f64>) {
    d.zip_mut_with(act, |d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Offsets of each layer's block in the flat vector.
fn layer_offsets(layers: &[LayerShape]) -> Vec<usize> {
    let mut offs = Vec::with_capacity(layers.len());
    let mut off = 0;
    for l in layers {
        offs.push(off);
        off += l.param_count();
    }
    offs
}

/// Writes the weight and bias gradient of one layer.
fn write_layer_grad(grad: &mut [f64], off: usize, l: &LayerShape, input: ArrayView2<f64>, dz: &Array2<f64>) {
    let nw = l.fan_in * l.fan_out;
    let (gw, gb) = grad[off..off + nw + l.fan_out].split_at_mut(nw);
    let mut gw = ArrayViewMut2::from_shape((l.fan_in, l.fan_out), gw).expect("layer shape");
    general_mat_mul(1.0, &input.t(), dz, 0.0, &mut gw);
    gb.fill(0.0);
    for row in dz.rows() {
        for (g, &v) in gb.iter_mut().zip(row.as_slice().expect("standard layout")) {
            *g += v;
        }
    }
}

/// Buffers for one forward/backward pass, reused across batches.
#[derive(Debug, Default, Clone)]
struct Workspace {
    /// Node-major copy of the graph input.
    x: Array2<f64>,
    /// `Â·H` fed to each graph convolution.
    propagated: Vec<Array2<f64>>,
    /// Post-activation output of each hidden layer.
    hidden: Vec<Array2<f64>>,
    /// Node-major readout scores.
    scores: Array2<f64>,
    logits: Array2<f64>,
    /// Loss gradient with respect to each layer's pre-activation.
    dz: Vec<Array2<f64>>,
    /// Scratch for `dz · Wᵀ` ahead of the adjoint propagation.
    dp: Array2<f64>,
}

/// Forward and backward passes for one architecture with reusable scratch
/// memory. Not shared between threads; each client owns one.
#[derive(Debug, Clone)]
pub struct Engine {
    arch: Arch,
    layers: Vec<LayerShape>,
    offsets: Vec<usize>,
    rows: Option<Propagation>,
    ws: Workspace,
}

impl Engine {
    pub fn new(arch: &Arch) -> Self {
        let layers = arch.layers();
        let offsets = layer_offsets(&layers);
        let n = layers.len();
        let ws = Workspace {
            propagated: vec![Array2::zeros((0, 0)); n - 1],
            hidden: vec![Array2::zeros((0, 0)); n - 1],
            dz: vec![Array2::zeros((0, 0)); n],
            ..Default::default()
        };
        Self {
            arch: arch.clone(),
            layers,
            offsets,
            rows: graph_rows(arch),
            ws,
        }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    fn check(&self, params: &ModelParams, inputs: &ArrayView2<f64>) -> Result<()> {
        if params.arch != self.arch {
            return Err(Error::validation(format!(
                "engine built for {:?}, parameters are {:?}",
                self.arch, params.arch
            )));
        }
        if inputs.ncols() != self.arch.input_width() {
            return Err(Error::Dimension {
                layer: "input".into(),
                expected: self.arch.input_width(),
                actual: inputs.ncols(),
            });
        }
        Ok(())
    }

    /// Logits for `inputs` (`batch × arch.input_width()`).
    pub fn forward(&mut self, params: &ModelParams, inputs: ArrayView2<f64>) -> Result<ArrayView2<'_, f64>> {
        self.check(params, &inputs)?;
        match self.arch {
            Arch::Mlp { .. } => self.mlp_forward(&params.flat, inputs),
            Arch::Gnn { node_features, .. } => self.gnn_forward(&params.flat, node_features, inputs),
        }
        Ok(self.ws.logits.view())
    }

    /// Mean cross-entropy over the batch; the gradient is written to `grad`
    /// in canonical order.
    pub fn loss_and_grad(
        &mut self,
        params: &ModelParams,
        inputs: ArrayView2<f64>,
        labels: &[usize],
        grad: &mut [f64],
    ) -> Result<f64> {
        self.forward(params, inputs)?;
        if grad.len() != params.param_count() {
            return Err(Error::Dimension {
                layer: "gradient".into(),
                expected: params.param_count(),
                actual: grad.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut dlogits = std::mem::take(&mut self.ws.dz[last]);
        let loss = softmax_cross_entropy_into(self.ws.logits.view(), labels, &mut dlogits);
        self.ws.dz[last] = dlogits;
        let loss = loss?;
        match self.arch {
            Arch::Mlp { .. } => self.mlp_backward(&params.flat, inputs, grad),
            Arch::Gnn { .. } => self.gnn_backward(&params.flat, grad),
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("gradient".into()));
        }
        Ok(loss)
    }

    fn mlp_forward(&mut self, flat: &[f64], x: ArrayView2<f64>) {
        let n = self.layers.len();
        for i in 0..n {
            let (w, b, _) = split_layer(flat, self.offsets[i], &self.layers[i]);
            let ws = &mut self.ws;
            let (done, rest) = ws.hidden.split_at_mut(i.min(n - 1));
            let input = if i == 0 { x } else { done[i - 1].view() };
            if i + 1 < n {
                dense(input, w, b, &mut rest[0], true);
            } else {
                dense(input, w, b, &mut ws.logits, false);
            }
        }
    }

    fn mlp_backward(&mut self, flat: &[f64], x: ArrayView2<f64>, grad: &mut [f64]) {
        let ws = &mut self.ws;
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let (lo, hi) = ws.dz.split_at_mut(i);
            let dz = &hi[0];
            let input = if i == 0 { x } else { ws.hidden[i - 1].view() };
            write_layer_grad(grad, self.offsets[i], l, input, dz);
            if i > 0 {
                let (w, _, _) = split_layer(flat, self.offsets[i], l);
                let prev = &mut lo[i - 1];
                ensure(prev, dz.nrows(), l.fan_in);
                general_mat_mul(1.0, dz, &w.t(), 0.0, prev);
                mask_inactive(prev, &ws.hidden[i - 1]);
            }
        }
    }

    fn gnn_forward(&mut self, flat: &[f64], f: usize, inputs: ArrayView2<f64>) {
        let rows = self.rows.as_ref().expect("graph model has propagation rows");
        let n_nodes = rows.len();
        let batch = inputs.nrows();
        let nb = n_nodes * batch;
        let ws = &mut self.ws;

        ensure(&mut ws.x, nb, f);
        for b in 0..batch {
            for n in 0..n_nodes {
                for k in 0..f {
                    ws.x[[n * batch + b, k]] = inputs[[b, n * f + k]];
                }
            }
        }
        let n_conv = self.layers.len() - 1;
        for i in 0..n_conv {
            let l = &self.layers[i];
            let (w, b, _) = split_layer(flat, self.offsets[i], l);
            let (done, rest) = ws.hidden.split_at_mut(i);
            let h = if i == 0 { &ws.x } else { &done[i - 1] };
            let p = &mut ws.propagated[i];
            ensure(p, nb, l.fan_in);
            propagate(rows, h, p);
            dense(p.view(), w, b, &mut rest[0], true);
        }
        let (w, b, _) = split_layer(flat, self.offsets[n_conv], &self.layers[n_conv]);
        dense(ws.hidden[n_conv - 1].view(), w, b, &mut ws.scores, false);
        ensure(&mut ws.logits, batch, n_nodes);
        for n in 0..n_nodes {
            for b in 0..batch {
                ws.logits[[b, n]] = ws.scores[[n * batch + b, 0]];
            }
        }
    }

    fn gnn_backward(&mut self, flat: &[f64], grad: &mut [f64]) {
        let rows = self.rows.as_ref().expect("graph model has propagation rows");
        let n_nodes = rows.len();
        let n_conv = self.layers.len() - 1;
        let ws = &mut self.ws;
        let batch = ws.logits.nrows();
        let nb = n_nodes * batch;

        // the logit gradient sits in dz[n_conv] as batch × N; reorder it to
        // the node-major readout layout
        let dlogits = std::mem::take(&mut ws.dz[n_conv]);
        let mut ds = Array2::zeros((nb, 1));
        for b in 0..batch {
            for n in 0..n_nodes {
                ds[[n * batch + b, 0]] = dlogits[[b, n]];
            }
        }
        ws.dz[n_conv] = dlogits;

        let readout = &self.layers[n_conv];
        write_layer_grad(grad, self.offsets[n_conv], readout, ws.hidden[n_conv - 1].view(), &ds);
        let (r, _, _) = split_layer(flat, self.offsets[n_conv], readout);
        let top = &mut ws.dz[n_conv - 1];
        ensure(top, nb, readout.fan_in);
        general_mat_mul(1.0, &ds, &r.t(), 0.0, top);

        for i in (0..n_conv).rev() {
            let l = &self.layers[i];
            let (lo, hi) = ws.dz.split_at_mut(i);
            let dz = &mut hi[0];
            mask_inactive(dz, &ws.hidden[i]);
            write_layer_grad(grad, self.offsets[i], l, ws.propagated[i].view(), dz);
            if i > 0 {
                // Â is symmetric, so the adjoint of propagation is itself
                let (w, _, _) = split_layer(flat, self.offsets[i], l);
                ensure(&mut ws.dp, nb, l.fan_in);
                general_mat_mul(1.0, &*dz, &w.t(), 0.0, &mut ws.dp);
                let prev = &mut lo[i - 1];
                ensure(prev, nb, l.fan_in);
                propagate(rows, &ws.dp, prev);
            }
        }
    }

    /// Signs of every hidden pre-activation after the last forward pass.
    fn activation_pattern(&self) -> Vec<bool> {
        self.ws.hidden.iter().flat_map(|h| h.iter().map(|&x| x > 0.0)).collect()
    }
}

/// Evaluates the network; `inputs` is `batch × arch.input_width()`.
pub fn forward(params: &ModelParams, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut engine = Engine::new(&params.arch);
    Ok(engine.forward(params, inputs)?.to_owned())
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let mut grad = Array2::zeros(logits.raw_dim());
    let loss = softmax_cross_entropy_into(logits, labels, &mut grad)?;
    Ok((loss, grad))
}

fn softmax_cross_entropy_into(logits: ArrayView2<f64>, labels: &[usize], grad: &mut Array2<f64>) -> Result<f64> {
    let batch = logits.nrows();
    if labels.len() != batch {
        return Err(Error::Dimension {
            layer: "labels".into(),
            expected: batch,
            actual: labels.len(),
        });
    }
    let n = logits.ncols();
    ensure(grad, batch, n);
    let mut loss = 0.0;
    let inv_b = 1.0 / batch as f64;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        if y >= n {
            return Err(Error::Dimension {
                layer: "label".into(),
                expected: n,
                actual: y,
            });
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        let mut g = grad.row_mut(i);
        for (j, &z) in row.iter().enumerate() {
            g[j] = (z - lse).exp() * inv_b;
        }
        g[y] -= inv_b;
    }
    let loss = loss * inv_b;
    if !loss.is_finite() {
        return Err(Error::Numeric("cross-entropy loss".into()));
    }
    Ok(loss)
}

/// Mean cross-entropy over the batch and its gradient in canonical order.
pub fn loss_and_grad(params: &ModelParams, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mut engine = Engine::new(&params.arch);
    let mut grad = vec![0.0; params.param_count()];
    let loss = engine.loss_and_grad(params, inputs, labels, &mut grad)?;
    Ok((loss, grad))
}

/// Signs of every hidden pre-activation; used to detect when a finite
/// difference straddles a rectifier kink.
pub(crate) fn activation_pattern(params: &ModelParams, inputs: ArrayView2<f64>) -> Result<Vec<bool>> {
    let mut engine = Engine::new(&params.arch);
    engine.forward(params, inputs)?;
    Ok(engine.activation_pattern())
}

/// Predicted beam per row (argmax, ties to the lower index).
pub fn predict(logits: ArrayView2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| crate::dataset::argmax_lowest(r.as_slice().unwrap_or(&r.to_vec())))
        .collect()
}
