//! Two-hidden-layer ReLU perceptron with inverted dropout and softmax
//! cross-entropy, plus the flattened parameter space it lives in.

use std::sync::Arc;

use crate::eigen::SymOperator;
use crate::error::{ensure, Result};
use crate::linalg::{gemm_acc, gemm_tn_acc, norm, transpose_into, Matrix, Vector};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize, dropout_rate: f64) -> Result<Self> {
        let cfg = MlpConfig {
            input_dim,
            hidden_dim,
            num_classes,
            dropout_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 784 inputs, 10 classes.
    pub fn mnist(hidden_dim: usize) -> Self {
        MlpConfig {
            input_dim: 784,
            hidden_dim,
            num_classes: 10,
            dropout_rate: 0.0,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.input_dim >= 1 && self.hidden_dim >= 1 && self.num_classes >= 1,
            "all layer widths must be at least 1"
        );
        ensure!(
            (0.0..1.0).contains(&self.dropout_rate),
            "dropout rate {} outside [0, 1)",
            self.dropout_rate
        );
        Ok(())
    }

    pub fn layout(&self) -> Arc<Layout> {
        let (i, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        Arc::new(Layout::new(vec![
            ("fc1.weight".into(), vec![i, h]),
            ("fc1.bias".into(), vec![h]),
            ("fc2.weight".into(), vec![h, h]),
            ("fc2.bias".into(), vec![h]),
            ("fc3.weight".into(), vec![h, c]),
            ("fc3.bias".into(), vec![c]),
        ]))
    }
}

/// Ordered `(name, shape)` list describing how a flat buffer splits into layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<(String, Vec<usize>)>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(entries: Vec<(String, Vec<usize>)>) -> Self {
        let mut offsets = Vec::with_capacity(entries.len());
        let mut total = 0;
        for (_, shape) in &entries {
            offsets.push(total);
            total += shape.iter().product::<usize>();
        }
        Layout {
            entries,
            offsets,
            total,
        }
    }

    pub fn entries(&self) -> &[(String, Vec<usize>)] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Index range of layer `i` in the flat buffer.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        let len: usize = self.entries[i].1.iter().product();
        self.offsets[i]..self.offsets[i] + len
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }
}

/// Flattened network weights tagged with their layout.
#[derive(Clone, Debug)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vector,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == layout.total(),
            "parameter buffer has {} values, layout expects {}",
            values.len(),
            layout.total()
        );
        Ok(ParamVector {
            layout,
            values: Vector::from(values),
        })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total();
        ParamVector {
            layout,
            values: Vector::zeros(n),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(self.layout.clone())
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(self.layout.clone(), values)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &Vector {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.values.as_mut_slice()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .find(name)
            .map(|i| &self.as_slice()[self.layout.range(i)])
    }

    fn layer_at(&self, i: usize) -> &[f64] {
        &self.as_slice()[self.layout.range(i)]
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        ensure!(
            self.same_layout(other),
            "parameter layouts differ ({} vs {} values)",
            self.len(),
            other.len()
        );
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.dot(&other.values))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other)?;
        Ok(ParamVector {
            layout: self.layout.clone(),
            values: self.values.sub(&other.values),
        })
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other)?;
        Ok(ParamVector {
            layout: self.layout.clone(),
            values: self.values.add(&other.values),
        })
    }

    pub fn scaled(&self, s: f64) -> ParamVector {
        ParamVector {
            layout: self.layout.clone(),
            values: self.values.scaled(s),
        }
    }

    /// `self += s · x`.
    pub fn axpy(&mut self, s: f64, x: &ParamVector) -> Result<()> {
        self.check_layout(x)?;
        self.values.axpy(s, &x.values);
        Ok(())
    }

    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        let d: f64 = self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(d.sqrt())
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Point on the segment from `w1` (α = 0) to `w2` (α = 1), evaluated as
/// `w1 + α(w2 − w1)`. The endpoints are returned exactly.
pub fn interpolate(w1: &ParamVector, w2: &ParamVector, alpha: f64) -> Result<ParamVector> {
    w1.check_layout(w2)?;
    if alpha == 0.0 {
        return Ok(w1.clone());
    }
    if alpha == 1.0 {
        return Ok(w2.clone());
    }
    let values = w1
        .as_slice()
        .iter()
        .zip(w2.as_slice())
        .map(|(a, b)| a + alpha * (b - a))
        .collect();
    w1.with_values(values)
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(cfg: &MlpConfig, rng: &mut Rng) -> ParamVector {
    let layout = cfg.layout();
    let mut values = vec![0.0; layout.total()];
    for (i, (name, shape)) in layout.entries().iter().enumerate() {
        if !name.ends_with(".weight") {
            continue;
        }
        let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
        for v in &mut values[layout.range(i)] {
            *v = rng.uniform_range(-limit, limit);
        }
    }
    ParamVector {
        layout,
        values: Vector::from(values),
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        ensure!(inputs.rows() >= 1, "batch must hold at least one example");
        ensure!(
            inputs.rows() == labels.len(),
            "batch has {} rows but {} labels",
            inputs.rows(),
            labels.len()
        );
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row-wise concatenation.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        ensure!(
            self.inputs.cols() == other.inputs.cols(),
            "cannot concatenate batches of width {} and {}",
            self.inputs.cols(),
            other.inputs.cols()
        );
        let mut data = self.inputs.data().to_vec();
        data.extend_from_slice(other.inputs.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Batch::new(
            Matrix::new(self.len() + other.len(), self.inputs.cols(), data)?,
            labels,
        )
    }
}

/// Bernoulli keep-masks for both hidden layers (1 = keep).
#[derive(Clone, Debug)]
pub struct DropoutMask {
    pub rate: f64,
    pub hidden1: Matrix,
    pub hidden2: Matrix,
}

impl DropoutMask {
    pub fn sample(cfg: &MlpConfig, rows: usize, rng: &mut Rng) -> Self {
        let keep = 1.0 - cfg.dropout_rate;
        let mut draw = || {
            let data = (0..rows * cfg.hidden_dim)
                .map(|_| if rng.bernoulli(keep) { 1.0 } else { 0.0 })
                .collect();
            Matrix::new(rows, cfg.hidden_dim, data).expect("mask shape")
        };
        let hidden1 = draw();
        let hidden2 = draw();
        DropoutMask {
            rate: cfg.dropout_rate,
            hidden1,
            hidden2,
        }
    }

    pub fn ones(cfg: &MlpConfig, rows: usize, rate: f64) -> Self {
        DropoutMask {
            rate,
            hidden1: Matrix::new(rows, cfg.hidden_dim, vec![1.0; rows * cfg.hidden_dim]).unwrap(),
            hidden2: Matrix::new(rows, cfg.hidden_dim, vec![1.0; rows * cfg.hidden_dim]).unwrap(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Mean cross-entropy in nats.
    pub loss: f64,
    pub accuracy: f64,
    /// Post-ReLU (and post-dropout, when masked) hidden outputs, then logits.
    pub activations: Vec<Matrix>,
}

struct Pass {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    probs: Vec<f64>,
    logits: Vec<f64>,
    loss: f64,
    correct: usize,
}

fn check_inputs(params: &ParamVector, batch: &Batch, mask: Option<&DropoutMask>, cfg: &MlpConfig) -> Result<()> {
    ensure!(
        params.len() == cfg.layout().total(),
        "parameter vector has {} values but the configured network needs {}",
        params.len(),
        cfg.layout().total()
    );
    ensure!(
        batch.inputs.cols() == cfg.input_dim,
        "batch width {} does not match input_dim {}",
        batch.inputs.cols(),
        cfg.input_dim
    );
    ensure!(
        batch.labels.iter().all(|&l| l < cfg.num_classes),
        "label out of range for {} classes",
        cfg.num_classes
    );
    if let Some(m) = mask {
        ensure!(
            m.hidden1.rows() == batch.len()
                && m.hidden2.rows() == batch.len()
                && m.hidden1.cols() == cfg.hidden_dim
                && m.hidden2.cols() == cfg.hidden_dim,
            "dropout mask shape does not match the batch"
        );
        ensure!((0.0..1.0).contains(&m.rate), "dropout rate {} outside [0, 1)", m.rate);
    }
    Ok(())
}

fn affine(input: &[f64], weight: &[f64], bias: &[f64], rows: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * fan_out);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm_acc(input, weight, &mut out, rows, fan_in, fan_out);
    out
}

fn relu_dropout(z: &[f64], mask: Option<(&Matrix, f64)>) -> Vec<f64> {
    match mask {
        None => z.iter().map(|&v| v.max(0.0)).collect(),
        Some((m, rate)) => {
            let scale = 1.0 / (1.0 - rate);
            z.iter()
                .zip(m.data())
                .map(|(&v, &k)| v.max(0.0) * (k * scale))
                .collect()
        }
    }
}

fn run_forward(params: &ParamVector, batch: &Batch, mask: Option<&DropoutMask>, cfg: &MlpConfig) -> Pass {
    let (n, d, h, c) = (batch.len(), cfg.input_dim, cfg.hidden_dim, cfg.num_classes);
    let x = batch.inputs.data();
    let z1 = affine(x, params.layer_at(0), params.layer_at(1), n, d, h);
    let a1 = relu_dropout(&z1, mask.map(|m| (&m.hidden1, m.rate)));
    let z2 = affine(&a1, params.layer_at(2), params.layer_at(3), n, h, h);
    let a2 = relu_dropout(&z2, mask.map(|m| (&m.hidden2, m.rate)));
    let logits = affine(&a2, params.layer_at(4), params.layer_at(5), n, h, c);

    let mut probs = vec![0.0; n * c];
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, row) in logits.chunks_exact(c).enumerate() {
        let mut best = 0;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == batch.labels[i] {
            correct += 1;
        }
        let max = row[best];
        let p = &mut probs[i * c..(i + 1) * c];
        let mut sum = 0.0;
        for (pj, &l) in p.iter_mut().zip(row) {
            *pj = (l - max).exp();
            sum += *pj;
        }
        p.iter_mut().for_each(|v| *v /= sum);
        loss += sum.ln() + max - row[batch.labels[i]];
    }
    Pass {
        z1,
        a1,
        z2,
        a2,
        probs,
        logits,
        loss: loss / n as f64,
        correct,
    }
}

pub fn forward(params: &ParamVector, batch: &Batch, mask: Option<&DropoutMask>, cfg: &MlpConfig) -> Result<ForwardOutput> {
    check_inputs(params, batch, mask, cfg)?;
    let pass = run_forward(params, batch, mask, cfg);
    let n = batch.len();
    Ok(ForwardOutput {
        loss: pass.loss,
        accuracy: pass.correct as f64 / n as f64,
        activations: vec![
            Matrix::new(n, cfg.hidden_dim, pass.a1)?,
            Matrix::new(n, cfg.hidden_dim, pass.a2)?,
            Matrix::new(n, cfg.num_classes, pass.logits)?,
        ],
    })
}

/// Mean loss, number of correct predictions.
pub(crate) fn loss_and_correct(params: &ParamVector, batch: &Batch, cfg: &MlpConfig) -> Result<(f64, usize)> {
    check_inputs(params, batch, None, cfg)?;
    let pass = run_forward(params, batch, None, cfg);
    Ok((pass.loss, pass.correct))
}

/// Loss and its exact gradient by reverse-mode differentiation.
pub fn loss_and_grad(
    params: &ParamVector,
    batch: &Batch,
    mask: Option<&DropoutMask>,
    cfg: &MlpConfig,
) -> Result<(f64, ParamVector)> {
    check_inputs(params, batch, mask, cfg)?;
    let (loss, grad, _) = backprop(params, batch, mask, cfg, false);
    Ok((loss, ParamVector::new(params.layout().clone(), grad)?))
}

/// Loss, gradient and, on request, the on/off pattern of every hidden ReLU
/// packed into bits.
fn backprop(
    params: &ParamVector,
    batch: &Batch,
    mask: Option<&DropoutMask>,
    cfg: &MlpConfig,
    want_pattern: bool,
) -> (f64, Vec<f64>, Vec<u64>) {
    let mut grad = vec![0.0; params.len()];
    let (loss, pattern) = backprop_into(params, batch, mask, cfg, want_pattern, 1.0, &mut grad);
    (loss, grad, pattern)
}

/// Dropout-free loss, with `scale ·` its gradient added to `out`.
///
/// Saves the allocation and the extra pass of [`loss_and_grad`] followed by an
/// axpy, which dominate when many small-batch gradients are summed.
pub(crate) fn loss_and_grad_acc(
    params: &ParamVector,
    batch: &Batch,
    cfg: &MlpConfig,
    scale: f64,
    out: &mut ParamVector,
) -> Result<f64> {
    check_inputs(params, batch, None, cfg)?;
    params.check_layout(out)?;
    Ok(backprop_into(params, batch, None, cfg, false, scale, out.as_mut_slice()).0)
}

fn backprop_into(
    params: &ParamVector,
    batch: &Batch,
    mask: Option<&DropoutMask>,
    cfg: &MlpConfig,
    want_pattern: bool,
    scale: f64,
    grad: &mut [f64],
) -> (f64, Vec<u64>) {
    let (n, d, h, c) = (batch.len(), cfg.input_dim, cfg.hidden_dim, cfg.num_classes);
    let pass = run_forward(params, batch, mask, cfg);
    let layout = params.layout();

    let inv_n = scale / n as f64;
    let mut dlogits = pass.probs;
    for (i, row) in dlogits.chunks_exact_mut(c).enumerate() {
        row[batch.labels[i]] -= 1.0;
        row.iter_mut().for_each(|v| *v *= inv_n);
    }

    // fc3
    gemm_tn_acc(&pass.a2, &dlogits, &mut grad[layout.range(4)], n, h, c);
    column_sums(&dlogits, c, &mut grad[layout.range(5)]);
    let mut da2 = back_through(&dlogits, params.layer_at(4), n, h, c);
    gate(&mut da2, &pass.z2, mask.map(|m| (&m.hidden2, m.rate)));

    // fc2
    gemm_tn_acc(&pass.a1, &da2, &mut grad[layout.range(2)], n, h, h);
    column_sums(&da2, h, &mut grad[layout.range(3)]);
    let mut da1 = back_through(&da2, params.layer_at(2), n, h, h);
    gate(&mut da1, &pass.z1, mask.map(|m| (&m.hidden1, m.rate)));

    // fc1
    gemm_tn_acc(batch.inputs.data(), &da1, &mut grad[layout.range(0)], n, d, h);
    column_sums(&da1, h, &mut grad[layout.range(1)]);

    let mut pattern = Vec::new();
    if want_pattern {
        pattern = vec![0u64; (2 * n * h).div_ceil(64)];
        for (k, z) in pass.z1.iter().chain(&pass.z2).enumerate() {
            if *z > 0.0 {
                pattern[k / 64] |= 1 << (k % 64);
            }
        }
    }
    (pass.loss, pattern)
}

pub fn grad(params: &ParamVector, batch: &Batch, mask: Option<&DropoutMask>, cfg: &MlpConfig) -> Result<ParamVector> {
    loss_and_grad(params, batch, mask, cfg).map(|(_, g)| g)
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// `upstream · weightᵀ` where `weight` is `fan_in × fan_out`.
fn back_through(upstream: &[f64], weight: &[f64], rows: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let mut wt = vec![0.0; weight.len()];
    transpose_into(weight, fan_in, fan_out, &mut wt);
    let mut out = vec![0.0; rows * fan_in];
    gemm_acc(upstream, &wt, &mut out, rows, fan_out, fan_in);
    out
}

/// Multiplies by the ReLU derivative and the dropout scaling in place.
fn gate(delta: &mut [f64], pre: &[f64], mask: Option<(&Matrix, f64)>) {
    match mask {
        None => {
            for (g, &z) in delta.iter_mut().zip(pre) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Some((m, rate)) => {
            let scale = 1.0 / (1.0 - rate);
            for ((g, &z), &k) in delta.iter_mut().zip(pre).zip(m.data()) {
                *g = if z > 0.0 { *g * (k * scale) } else { 0.0 };
            }
        }
    }
}

/// Default finite-difference step for Hessian-vector products.
///
/// Kept small on purpose: every ReLU whose pre-activation changes sign
/// inside the step adds a term of order `1/ε` to the difference, which makes
/// the product nonlinear in the probe. On MNIST-sized networks a step of
/// `1e-3` already crosses kinks in a few thousand examples, and even `1e-5`
/// needs a shrink on most probes. Rounding error at `1e-7` is still ~1e-9.
pub fn default_hvp_epsilon(params: &ParamVector) -> f64 {
    1e-7 / (1.0 + params.max_abs())
}

/// Times a Hessian-vector product may shrink its step to avoid a ReLU kink.
pub const HVP_MAX_SHRINKS: usize = 5;

/// Hessian of the dropout-free batch loss, applied by central differences of
/// exact gradients along the normalized probe direction.
///
/// When the two probe points disagree on the sign of any hidden
/// pre-activation the step is cut by 4 and the product recomputed, up to
/// [`HVP_MAX_SHRINKS`] times, so the difference stays inside one linear
/// region of the ReLUs.
pub struct HvpOperator<'a> {
    params: &'a ParamVector,
    batch: &'a Batch,
    cfg: MlpConfig,
    epsilon: f64,
}

pub fn hvp_operator<'a>(
    params: &'a ParamVector,
    batch: &'a Batch,
    cfg: &MlpConfig,
    epsilon: f64,
) -> Result<HvpOperator<'a>> {
    ensure!(epsilon > 0.0, "HVP step must be positive, got {epsilon}");
    check_inputs(params, batch, None, cfg)?;
    Ok(HvpOperator {
        params,
        batch,
        cfg: *cfg,
        epsilon,
    })
}

impl HvpOperator<'_> {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl SymOperator for HvpOperator<'_> {
    fn dim(&self) -> usize {
        self.params.len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let nv = norm(v);
        if nv == 0.0 {
            return vec![0.0; v.len()];
        }
        let shifted = |step: f64| {
            let s = step / nv;
            let vals = self
                .params
                .as_slice()
                .iter()
                .zip(v)
                .map(|(p, d)| p + s * d)
                .collect();
            let p = self.params.with_values(vals).expect("same layout");
            let (_, g, pattern) = backprop(&p, self.batch, None, &self.cfg, true);
            (g, pattern)
        };
        let mut eps = self.epsilon;
        let mut shrinks = 0;
        loop {
            let (plus, p_on) = shifted(eps);
            let (minus, m_on) = shifted(-eps);
            if p_on == m_on || shrinks == HVP_MAX_SHRINKS {
                let scale = nv / (2.0 * eps);
                return plus.iter().zip(&minus).map(|(a, b)| (a - b) * scale).collect();
            }
            eps *= 0.25;
            shrinks += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> MlpConfig {
        // 3*3 + 3 + 3*3 + 3 + 3*2 + 2 = 32 parameters
        MlpConfig::new(3, 3, 2, 0.0).unwrap()
    }

    fn tiny_batch(rng: &mut Rng, n: usize, cfg: &MlpConfig) -> Batch {
        let data = (0..n * cfg.input_dim).map(|_| rng.uniform()).collect();
        let labels = (0..n).map(|_| rng.below(cfg.num_classes)).collect();
        Batch::new(Matrix::new(n, cfg.input_dim, data).unwrap(), labels).unwrap()
    }

    fn loss_at(p: &ParamVector, b: &Batch, cfg: &MlpConfig) -> f64 {
        forward(p, b, None, cfg).unwrap().loss
    }

    #[test]
    fn zero_weights_give_log_classes() {
        let cfg = MlpConfig::mnist(8);
        let p = ParamVector::zeros(cfg.layout());
        let mut rng = Rng::new(0);
        let b = tiny_batch(&mut rng, 5, &cfg);
        let out = forward(&p, &b, None, &cfg).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constructed_weights_classify_correctly() {
        let cfg = MlpConfig::new(2, 2, 2, 0.0).unwrap();
        let layout = cfg.layout();
        // identity through both hidden layers, then identity logits
        let vals = vec![
            1.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 1.0, 0.0, 0.0,
        ];
        let p = ParamVector::new(layout, vals).unwrap();
        let b = Batch::new(Matrix::from_rows(&[vec![0.1, 0.9]]).unwrap(), vec![1]).unwrap();
        assert_eq!(forward(&p, &b, None, &cfg).unwrap().accuracy, 1.0);
    }

    #[test]
    fn ties_break_to_lowest_class() {
        let cfg = MlpConfig::mnist(4);
        let p = ParamVector::zeros(cfg.layout());
        let b = Batch::new(Matrix::zeros(2, 784), vec![0, 3]).unwrap();
        assert_eq!(forward(&p, &b, None, &cfg).unwrap().accuracy, 0.5);
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(1);
        let p = init_params(&cfg, &mut rng);
        let b = tiny_batch(&mut rng, 4, &cfg);
        let mask = DropoutMask::ones(&cfg, 4, 0.0);
        let a = forward(&p, &b, Some(&mask), &cfg).unwrap().loss;
        let c = forward(&p, &b, None, &cfg).unwrap().loss;
        assert_eq!(a, c);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let cfg = tiny_cfg();
        let p = ParamVector::zeros(cfg.layout());
        let b = Batch::new(Matrix::zeros(1, 5), vec![0]).unwrap();
        assert!(forward(&p, &b, None, &cfg).is_err());
        let other = MlpConfig::new(3, 4, 2, 0.0).unwrap();
        let good = Batch::new(Matrix::zeros(1, 3), vec![0]).unwrap();
        assert!(forward(&ParamVector::zeros(other.layout()), &good, None, &cfg).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(2);
        let p = init_params(&cfg, &mut rng);
        // push biases positive so no unit sits on a ReLU kink
        let mut p = p;
        for i in [1usize, 3] {
            let r = p.layout().range(i);
            for v in &mut p.as_mut_slice()[r] {
                *v = 0.3;
            }
        }
        let b = tiny_batch(&mut rng, 6, &cfg);
        let g = grad(&p, &b, None, &cfg).unwrap();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = p.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (loss_at(&plus, &b, &cfg) - loss_at(&minus, &b, &cfg)) / (2.0 * h);
            let an = g.as_slice()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-6, "coord {i}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn gradient_with_dropout_matches_central_differences() {
        let cfg = MlpConfig::new(3, 4, 2, 0.5).unwrap();
        let mut rng = Rng::new(12);
        let mut p = init_params(&cfg, &mut rng);
        for i in [1usize, 3] {
            let r = p.layout().range(i);
            for v in &mut p.as_mut_slice()[r] {
                *v = 0.4;
            }
        }
        let b = tiny_batch(&mut rng, 5, &cfg);
        let mask = DropoutMask::sample(&cfg, 5, &mut rng);
        let g = grad(&p, &b, Some(&mask), &cfg).unwrap();
        let h = 1e-5;
        let f = |q: &ParamVector| forward(q, &b, Some(&mask), &cfg).unwrap().loss;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = p.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let an = g.as_slice()[i];
            assert!((fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1e-4), "coord {i}: {fd} vs {an}");
        }
    }

    #[test]
    fn gradient_vanishes_at_symmetric_point() {
        // zero weights and balanced labels: uniform softmax, zero mean residual
        let cfg = MlpConfig::new(4, 3, 2, 0.0).unwrap();
        let p = ParamVector::zeros(cfg.layout());
        let x = Matrix::new(2, 4, vec![0.5; 8]).unwrap();
        let b = Batch::new(x, vec![0, 1]).unwrap();
        assert!(grad(&p, &b, None, &cfg).unwrap().norm() < 1e-12);
    }

    #[test]
    fn loss_is_batch_order_invariant() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(3);
        let p = init_params(&cfg, &mut rng);
        let b = tiny_batch(&mut rng, 6, &cfg);
        let order = [5usize, 2, 0, 4, 1, 3];
        let mut data = Vec::new();
        for &i in &order {
            data.extend_from_slice(b.inputs.row(i));
        }
        let labels = order.iter().map(|&i| b.labels[i]).collect();
        let shuffled = Batch::new(Matrix::new(6, 3, data).unwrap(), labels).unwrap();
        let a = forward(&p, &b, None, &cfg).unwrap();
        let s = forward(&p, &shuffled, None, &cfg).unwrap();
        assert!((a.loss - s.loss).abs() < 1e-14);
        assert_eq!(a.accuracy, s.accuracy);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = MlpConfig::mnist(16);
        let a = init_params(&cfg, &mut Rng::new(5));
        let b = init_params(&cfg, &mut Rng::new(5));
        assert_eq!(a.as_slice(), b.as_slice());
        for name in ["fc1.bias", "fc2.bias", "fc3.bias"] {
            assert!(a.layer(name).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_weights_have_zero_mean() {
        // fc1 of a 784-128-10 net has 100352 draws
        let cfg = MlpConfig::mnist(128);
        let p = init_params(&cfg, &mut Rng::new(6));
        let w = p.layer("fc1.weight").unwrap();
        let limit = (6.0f64 / (784.0 + 128.0)).sqrt();
        let sigma = limit / 3f64.sqrt();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(w.len() >= 100_000);
        assert!(mean.abs() < 3.0 * sigma / (w.len() as f64).sqrt());
        assert!(w.iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn interpolation_endpoints_and_symmetry() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(7);
        let a = init_params(&cfg, &mut rng);
        let b = init_params(&cfg, &mut rng);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        let neg = a.scaled(-1.0);
        let mid = interpolate(&a, &neg, 0.5).unwrap();
        assert!(mid.as_slice().iter().all(|&v| v == 0.0));
        for alpha in [0.1, 0.37, 0.5, 0.9] {
            let x = interpolate(&a, &b, alpha).unwrap();
            let y = interpolate(&b, &a, 1.0 - alpha).unwrap();
            for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
                assert!((u - v).abs() <= 1e-15 * u.abs().max(v.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn interpolation_rejects_layout_mismatch() {
        let a = ParamVector::zeros(tiny_cfg().layout());
        let b = ParamVector::zeros(MlpConfig::new(3, 4, 2, 0.0).unwrap().layout());
        assert!(interpolate(&a, &b, 0.5).is_err());
    }

    #[test]
    fn hvp_step_avoids_relu_kinks() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(9);
        let mut p = init_params(&cfg, &mut rng);
        let b = tiny_batch(&mut rng, 6, &cfg);
        let layout = p.layout().clone();
        for layer in [1, 3, 5] {
            p.as_mut_slice()[layout.range(layer)].iter_mut().for_each(|v| *v = 0.3);
        }
        // Put unit 0 of the first layer 1e-5 above its kink on example 0.
        let h = cfg.hidden_dim;
        let x0 = b.inputs.row(0);
        let w = p.layer("fc1.weight").unwrap();
        let z: f64 = (0..cfg.input_dim).map(|j| x0[j] * w[j * h]).sum();
        p.as_mut_slice()[layout.range(1).start] = 1e-5 - z;

        let mut v = vec![0.0; p.len()];
        v[layout.range(1).start] = 1.0;
        let wide = hvp_operator(&p, &b, &cfg, 1e-3).unwrap().apply(&v);
        let exact = hvp_operator(&p, &b, &cfg, 1e-8).unwrap().apply(&v);
        for (a, e) in wide.iter().zip(&exact) {
            assert!((a - e).abs() <= 1e-5 * e.abs().max(1e-3), "{a} vs {e}");
        }
    }

    #[test]
    fn hvp_of_zero_is_zero() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(8);
        let p = init_params(&cfg, &mut rng);
        let b = tiny_batch(&mut rng, 4, &cfg);
        let op = hvp_operator(&p, &b, &cfg, 1e-3).unwrap();
        assert!(op.apply(&vec![0.0; p.len()]).iter().all(|&v| v == 0.0));
        assert!(hvp_operator(&p, &b, &cfg, 0.0).is_err());
    }
}
