//! A small fully-connected classifier with explicit backpropagation.
//!
//! Layers compute `z = x W^T + b` followed by an optional relu. Dropout is
//! applied only to the input of the final (classification) layer, inverted
//! so that evaluation is a plain pass-through.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::loss::LossSpec;
use crate::rng::Rng;

pub const DEFAULT_DROPOUT: f64 = 0.3;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Stacks row blocks that share a column count.
    pub fn vstack(blocks: Vec<Matrix>, cols: usize) -> Matrix {
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for b in blocks {
            data.extend(b.data);
        }
        Matrix { rows, cols, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    pub fn keyword(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Relu hidden layers of the given widths followed by a linear head.
pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(classes);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 < dims.len() {
                Activation::Relu
            } else {
                Activation::None
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

/// `D -> 64 -> 32 -> K`.
pub fn default_layers(input: usize, classes: usize) -> Vec<LayerSpec> {
    mlp(input, &[64, 32], classes)
}

pub fn validate_layers(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::config("layers", "at least one layer is required"));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::config("layers", format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::config(
                "layers",
                format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].out_dim,
                    i + 1,
                    w[1].in_dim
                ),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `out_dim x in_dim`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    /// `x W^T + b` for every row of `x`.
    fn affine(&self, x: &Matrix) -> Matrix {
        let (n_in, n_out) = (self.spec.in_dim, self.spec.out_dim);
        let mut z = Matrix::zeros(x.rows, n_out);
        for (xr, zr) in x.data.chunks(n_in).zip(z.data.chunks_mut(n_out)) {
            for (o, zo) in zr.iter_mut().enumerate() {
                let w = &self.weights[o * n_in..(o + 1) * n_in];
                let mut acc = self.biases[o];
                for (a, b) in w.iter().zip(xr) {
                    acc += a * b;
                }
                *zo = acc;
            }
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values of one forward pass, needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of each layer, after dropout for the final layer.
    pub inputs: Vec<Matrix>,
    pub pre_activations: Vec<Matrix>,
    /// Per-element multiplier (0 or 1/(1-rate)) on the final layer's input;
    /// `None` when dropout was inactive.
    pub dropout_mask: Option<Vec<f64>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }
}

/// Network parameters: the layers plus the dropout rate used in training.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub dropout_rate: f64,
}

impl Network {
    /// He-initialised weights, `N(0, 2 / in_dim)`, and zero biases.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_layers(specs)?;
        let mut rng = Rng::new(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let std = (2.0 / spec.in_dim as f64).sqrt();
                let weights = (0..spec.in_dim * spec.out_dim)
                    .map(|_| std * rng.normal())
                    .collect();
                Layer {
                    spec,
                    weights,
                    biases: vec![0.0; spec.out_dim],
                }
            })
            .collect();
        Ok(Network {
            layers,
            dropout_rate: DEFAULT_DROPOUT,
        })
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config("dropout", format!("{rate} is outside [0, 1)")));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().spec.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters in layer order, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return &mut l.biases[index];
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range")
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.cols,
                self.input_dim()
            )));
        }
        if x.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInput("non-finite input feature".into()));
        }
        Ok(())
    }

    /// Forward pass returning logits (`batch x K`) and the trace for backprop.
    ///
    /// In [`Mode::Train`] dropout masks are drawn from `seed`; in
    /// [`Mode::Eval`] the seed is unused and the pass is deterministic.
    pub fn forward(&self, x: &Matrix, mode: Mode, seed: u64) -> Result<(Matrix, ForwardTrace)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut dropout_mask = None;
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last && mode == Mode::Train && self.dropout_rate > 0.0 {
                let mut rng = Rng::new(seed);
                let keep = 1.0 - self.dropout_rate;
                let mask: Vec<f64> = (0..current.data.len())
                    .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                for (v, m) in current.data.iter_mut().zip(&mask) {
                    *v *= m;
                }
                dropout_mask = Some(mask);
            }
            let z = layer.affine(&current);
            let a = match layer.spec.activation {
                Activation::Relu => Matrix {
                    data: z.data.iter().map(|v| v.max(0.0)).collect(),
                    ..z
                },
                Activation::None => z.clone(),
            };
            inputs.push(current);
            pre_activations.push(z);
            current = a;
        }
        Ok((
            current,
            ForwardTrace {
                inputs,
                pre_activations,
                dropout_mask,
            },
        ))
    }

    /// Eval-mode logits without keeping a trace.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut current = x.clone();
        for layer in &self.layers {
            let mut z = layer.affine(&current);
            if layer.spec.activation == Activation::Relu {
                z.data.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            current = z;
        }
        Ok(current)
    }

    /// Eval-mode logits over `x` in fixed row blocks, optionally in parallel.
    /// Rows are independent, so the result does not depend on `exec`.
    pub fn logits_with(&self, x: &Matrix, exec: Execution) -> Result<Matrix> {
        const BLOCK: usize = 256;
        self.check_input(x)?;
        let blocks = x.rows.div_ceil(BLOCK);
        let parts = exec.map_range(blocks, |b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(x.rows);
            let sub = Matrix {
                rows: hi - lo,
                cols: x.cols,
                data: x.data[lo * x.cols..hi * x.cols].to_vec(),
            };
            self.logits(&sub)
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Matrix::vstack(parts, self.output_dim()))
    }

    /// Backpropagates `d_logits` (dLoss/dLogits) through the pass recorded
    /// in `trace`, replaying its dropout mask.
    pub fn backward(&self, trace: &ForwardTrace, d_logits: &Matrix) -> Result<Gradients> {
        if trace.inputs.len() != self.layers.len() || trace.pre_activations.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "trace has {} layers, network has {}",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        let n = trace.batch_size();
        for (i, (layer, (x, z))) in self
            .layers
            .iter()
            .zip(trace.inputs.iter().zip(&trace.pre_activations))
            .enumerate()
        {
            if x.cols != layer.spec.in_dim || z.cols != layer.spec.out_dim || x.rows != n || z.rows != n {
                return Err(Error::Shape(format!("trace does not match layer {i}")));
            }
        }
        if d_logits.rows != n || d_logits.cols != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {n}x{}",
                d_logits.rows,
                d_logits.cols,
                self.output_dim()
            )));
        }
        if let Some(mask) = &trace.dropout_mask {
            if mask.len() != trace.inputs.last().unwrap().data.len() {
                return Err(Error::Shape("dropout mask does not match trace".into()));
            }
        }

        let mut grads = Gradients::zeros_like(self);
        let mut upstream = d_logits.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let (n_in, n_out) = (layer.spec.in_dim, layer.spec.out_dim);
            let z = &trace.pre_activations[i];
            // dL/dz
            let mut dz = upstream;
            if layer.spec.activation == Activation::Relu {
                for (d, &zv) in dz.data.iter_mut().zip(&z.data) {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &trace.inputs[i];
            let g = &mut grads.layers[i];
            for r in 0..n {
                let dzr = dz.row(r);
                let xr = x.row(r);
                for o in 0..n_out {
                    let d = dzr[o];
                    g.biases[o] += d;
                    if d != 0.0 {
                        for (gw, xv) in g.weights[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                            *gw += d * xv;
                        }
                    }
                }
            }
            if i == 0 {
                break;
            }
            let mut dx = Matrix::zeros(n, n_in);
            for r in 0..n {
                let dzr = &dz.data[r * n_out..(r + 1) * n_out];
                let dxr = &mut dx.data[r * n_in..(r + 1) * n_in];
                for (o, &d) in dzr.iter().enumerate() {
                    if d != 0.0 {
                        for (dxv, w) in dxr.iter_mut().zip(&layer.weights[o * n_in..(o + 1) * n_in]) {
                            *dxv += d * w;
                        }
                    }
                }
            }
            if i == self.layers.len() - 1 {
                if let Some(mask) = &trace.dropout_mask {
                    for (d, m) in dx.data.iter_mut().zip(mask) {
                        *d *= m;
                    }
                }
            }
            upstream = dx;
        }
        Ok(grads)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter with the worst relative error, in [`Network::params`] order.
    pub worst_param: usize,
    pub params_checked: usize,
    /// Input draws discarded because a pre-activation sat near a relu kink.
    pub rejected_draws: usize,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub samples: usize,
    pub loss: LossSpec,
    pub step: f64,
    pub tolerance: f64,
    /// Inputs with any |pre-activation| below this are redrawn.
    pub kink_margin: f64,
    pub exec: Execution,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples: 5,
            loss: LossSpec::default(),
            step: 1e-5,
            tolerance: 1e-6,
            kink_margin: 1e-4,
            exec: Execution::default(),
        }
    }
}

/// Relative error with a unit floor on the denominator, so gradients much
/// smaller than one are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn near_kink(net: &Network, x: &Matrix, margin: f64) -> Result<bool> {
    let (_, trace) = net.forward(x, Mode::Eval, 0)?;
    Ok(net
        .layers
        .iter()
        .zip(&trace.pre_activations)
        .filter(|(l, _)| l.spec.activation == Activation::Relu)
        .any(|(_, z)| z.data.iter().any(|v| v.abs() < margin)))
}

/// Builds a random network from `specs` and compares its backpropagated
/// gradients against central finite differences.
pub fn grad_check(specs: &[LayerSpec], seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let net = Network::init(specs, seed)?;
    let mut rng = Rng::derived(seed, &[0x6772_6164]);
    let k = net.output_dim();
    let mut rejected = 0;
    let x = loop {
        let data = (0..opts.samples * net.input_dim()).map(|_| rng.normal()).collect();
        let x = Matrix::from_vec(opts.samples, net.input_dim(), data)?;
        if !near_kink(&net, &x, opts.kink_margin)? {
            break x;
        }
        rejected += 1;
        if rejected > 1000 {
            return Err(Error::NumericInput(
                "could not draw inputs away from relu kinks".into(),
            ));
        }
    };
    let targets: Vec<usize> = (0..opts.samples).map(|_| rng.below(k)).collect();
    let analytic = analytic_gradients(&net, &x, &targets, &opts.loss)?;
    let mut report = compare_gradients(&net, &x, &targets, &analytic, opts)?;
    report.rejected_draws = rejected;
    Ok(report)
}

/// Gradient of `loss` at `(x, targets)` by backpropagation, in eval mode.
pub fn analytic_gradients(net: &Network, x: &Matrix, targets: &[usize], loss: &LossSpec) -> Result<Gradients> {
    let (logits, trace) = net.forward(x, Mode::Eval, 0)?;
    let out = loss.evaluate(&logits, targets)?;
    net.backward(&trace, &out.grad)
}

/// Compares `analytic` against central differences of the eval-mode loss.
pub fn compare_gradients(
    net: &Network,
    x: &Matrix,
    targets: &[usize],
    analytic: &Gradients,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let loss_at = |net: &Network| -> Result<f64> {
        let logits = net.logits(x)?;
        Ok(opts.loss.evaluate(&logits, targets)?.loss)
    };
    let analytic: Vec<f64> = analytic.iter().collect();
    if analytic.len() != net.num_params() {
        return Err(Error::Shape("gradient does not match network".into()));
    }
    let numeric = opts.exec.map_range(analytic.len(), |i| -> Result<f64> {
        let mut probe = net.clone();
        let p = probe.param_mut(i);
        let orig = *p;
        *p = orig + opts.step;
        let plus = loss_at(&probe)?;
        *probe.param_mut(i) = orig - opts.step;
        let minus = loss_at(&probe)?;
        Ok((plus - minus) / (2.0 * opts.step))
    });
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_param: 0,
        params_checked: analytic.len(),
        rejected_draws: 0,
        tolerance: opts.tolerance,
        passed: false,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let n: f64 = n?;
        let rel = relative_error(*a, n);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = i;
        }
        report.max_abs_error = report.max_abs_error.max((a - n).abs());
    }
    report.passed = report.max_rel_error < opts.tolerance;
    Ok(report)
}

/// Writes a checkpoint:
///
/// ```text
/// LAYERS=<n> DROPOUT=<rate>
/// L<i> <in> <out> <relu|none>
/// <w_00>,...,<w_0(in-1)>       one line per output unit
/// <b_0>,...,<b_(out-1)>
/// ```
pub fn format_checkpoint(net: &Network) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "LAYERS={} DROPOUT={:?}", net.layers.len(), net.dropout_rate);
    for (i, l) in net.layers.iter().enumerate() {
        let _ = writeln!(
            s,
            "L{i} {} {} {}",
            l.spec.in_dim,
            l.spec.out_dim,
            l.spec.activation.keyword()
        );
        for row in l.weights.chunks(l.spec.in_dim) {
            write_row(&mut s, row);
        }
        write_row(&mut s, &l.biases);
    }
    s
}

fn write_row(s: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v:?}");
    }
    s.push('\n');
}

pub fn parse_checkpoint(text: &str) -> Result<Network> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header_err = |line: usize, reason: &str| Error::MalformedHeader {
        line,
        reason: reason.to_string(),
    };
    let (_, header) = lines.next().ok_or_else(|| header_err(1, "empty checkpoint"))?;
    let mut parts = header.split(' ');
    let n_layers: usize = parts
        .next()
        .and_then(|t| t.strip_prefix("LAYERS="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| header_err(1, "expected LAYERS=<n>"))?;
    let dropout: f64 = parts
        .next()
        .and_then(|t| t.strip_prefix("DROPOUT="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| header_err(1, "expected DROPOUT=<rate>"))?;
    if parts.next().is_some() || n_layers == 0 {
        return Err(header_err(1, "expected `LAYERS=<n> DROPOUT=<rate>`"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let (n, line) = lines
            .next()
            .ok_or_else(|| header_err(0, &format!("missing layer {i}")))?;
        let f: Vec<&str> = line.split(' ').collect();
        let expected_tag = format!("L{i}");
        if f.len() != 4 || f[0] != expected_tag {
            return Err(header_err(n, &format!("expected `L{i} <in> <out> <activation>`")));
        }
        let in_dim: usize = f[1].parse().map_err(|_| header_err(n, "invalid in_dim"))?;
        let out_dim: usize = f[2].parse().map_err(|_| header_err(n, "invalid out_dim"))?;
        let activation = match f[3] {
            "relu" => Activation::Relu,
            "none" => Activation::None,
            _ => return Err(header_err(n, "activation must be relu or none")),
        };
        let mut weights = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..out_dim {
            weights.extend(read_row(&mut lines, in_dim)?);
        }
        let biases = read_row(&mut lines, out_dim)?;
        layers.push(Layer {
            spec: LayerSpec::new(in_dim, out_dim, activation),
            weights,
            biases,
        });
    }
    if let Some((n, _)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(Error::Parse {
            line: n,
            reason: "trailing content after last layer".into(),
        });
    }
    validate_layers(&layers.iter().map(|l| l.spec).collect::<Vec<_>>())?;
    Network {
        layers,
        dropout_rate: DEFAULT_DROPOUT,
    }
    .with_dropout(dropout)
}

fn read_row<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, len: usize) -> Result<Vec<f64>> {
    let (n, line) = lines.next().ok_or(Error::Parse {
        line: 0,
        reason: "unexpected end of checkpoint".into(),
    })?;
    let vals: Vec<&str> = line.split(',').collect();
    if vals.len() != len {
        return Err(Error::Arity {
            line: n,
            expected: len,
            found: vals.len(),
        });
    }
    vals.iter().map(|v| crate::data::parse_f64(v, n)).collect()
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(&path, format_checkpoint(net)).map_err(|e| Error::file(&path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    parse_checkpoint(&std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?)
}
