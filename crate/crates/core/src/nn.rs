//! Feedforward networks, diagonal-Gaussian policy head, input normalization,
//! reverse-mode gradients, and Adam.
//!
//! Layers store their weights input-major (`[input][output]`). Single-sample
//! inference uses a plain multiply-add loop; batches go through a blocked GEMM,
//! so the two paths agree to rounding rather than bit for bit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dynamics::{ActuatorLimits, ControlAction, Vec3};
use crate::error::{invalid, Result};

/// Hidden and output widths of the policy network (input excluded).
pub const POLICY_LAYERS: [usize; 4] = [130, 88, 60, 6];
/// Hidden and output widths of the state-value network (input excluded).
pub const VALUE_LAYERS: [usize; 4] = [130, 25, 5, 1];

/// Row-major dense matrix used for batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    /// `inputs x outputs`, input-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Weight connecting input `i` to output `o`.
    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[i * self.outputs + o]
    }

    pub fn set_weight(&mut self, o: usize, i: usize, value: f64) {
        self.weights[i * self.outputs + o] = value;
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (xi, row) in x.iter().zip(self.weights.chunks_exact(self.outputs)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

/// Multilayer perceptron with tanh hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    pub acts: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("cache holds the input")
    }
}

impl Mlp {
    /// All-zero network with the given widths `[input, hidden..., output]`.
    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { layers }
    }

    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(widths);
        for layer in &mut net.layers {
            let lim = (1.0 / layer.inputs as f64).sqrt();
            let dist = Uniform::new_inclusive(-lim, lim).expect("finite bounds");
            for w in &mut layer.weights {
                *w = dist.sample(rng);
            }
        }
        net
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(invalid("layer widths do not chain"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    fn forward_row(&self, x: &[f64], scratch: &mut [Vec<f64>]) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = scratch.split_at_mut(l + 1);
            let input: &[f64] = if l == 0 { x } else { &prev[l] };
            let out = &mut rest[0];
            layer.affine(input, out);
            if l < last {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
    }

    fn scratch(&self) -> Vec<Vec<f64>> {
        let mut s = vec![Vec::new()];
        s.extend(self.layers.iter().map(|l| vec![0.0; l.outputs]));
        s
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(invalid(format!("expected input of length {}, got {}", self.input_dim(), x.len())));
        }
        let mut scratch = self.scratch();
        self.forward_row(x, &mut scratch);
        Ok(scratch.pop().expect("output layer"))
    }

    /// Batched forward pass. Each output row depends only on its own input row,
    /// independent of batch size and row position.
    pub fn forward_batch(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols != self.input_dim() {
            return Err(invalid(format!("expected {} input columns, got {}", self.input_dim(), x.cols)));
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let mut out = Matrix::zeros(x.rows, layer.outputs);
            gemm(x.rows, layer.inputs, layer.outputs, &input.data, false, &layer.weights, false, &mut out.data, 0.0);
            for row in out.data.chunks_exact_mut(layer.outputs) {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                    if l < last {
                        *v = v.tanh();
                    }
                }
            }
            acts.push(out);
        }
        Ok(ForwardCache { acts })
    }

    /// Gradients of `sum_r grad_out[r] . f(x_r)` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<Mlp> {
        let out = cache.output();
        if grad_out.rows != out.rows || grad_out.cols != out.cols {
            return Err(invalid("output-gradient shape does not match forward output"));
        }
        let mut grads = Mlp::zeros(&self.widths());
        let rows = grad_out.rows;
        let mut delta = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.acts[l];
            let g = &mut grads.layers[l];
            for d in delta.data.chunks_exact(layer.outputs) {
                for (b, dv) in g.bias.iter_mut().zip(d) {
                    *b += dv;
                }
            }
            // dW = H^T * delta
            gemm(layer.inputs, rows, layer.outputs, &input.data, true, &delta.data, false, &mut g.weights, 0.0);
            if l == 0 {
                break;
            }
            // dH = delta * W^T, then through tanh' = 1 - h^2
            let mut prev = Matrix::zeros(rows, layer.inputs);
            gemm(rows, layer.outputs, layer.inputs, &delta.data, false, &layer.weights, true, &mut prev.data, 0.0);
            for (p, h) in prev.data.iter_mut().zip(&input.data) {
                *p *= 1.0 - h * h;
            }
            delta = prev;
        }
        Ok(grads)
    }
}

/// `C = A * B + beta * C` for row-major `A: m x k`, `B: k x n` (either given
/// transposed, i.e. stored as `k x m` / `n x k`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the strides
    // address them as row-major (or transposed row-major) matrices.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Diagonal-Gaussian log density.
pub fn gaussian_logprob(mean: &[f64], log_var: &[f64], action: &[f64]) -> f64 {
    let ln_2pi = (2.0 * PI).ln();
    mean.iter()
        .zip(log_var)
        .zip(action)
        .map(|((m, lv), a)| -0.5 * (ln_2pi + lv + (a - m) * (a - m) / lv.exp()))
        .sum()
}

/// `mean + sqrt(exp(log_var)) * z` with `z` standard normal per component.
pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], log_var: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(log_var)
        .map(|(m, lv)| {
            let z: f64 = StandardNormal.sample(rng);
            m + (0.5 * lv).exp() * z
        })
        .collect()
}

/// Maps a raw 6-vector (±1 = actuator limit) to a clamped control action.
pub fn scale_action(raw: &[f64], limits: &ActuatorLimits) -> ControlAction {
    let f = Vec3::new(raw[0], raw[1], raw[2]).component_mul(&limits.force);
    let l = Vec3::new(raw[3], raw[4], raw[5]).component_mul(&limits.torque);
    ControlAction::clamped(f, l, limits)
}

/// Closed-form `KL(old || new)` between diagonal Gaussians.
pub fn gaussian_kl(mean_old: &[f64], lv_old: &[f64], mean_new: &[f64], lv_new: &[f64]) -> f64 {
    let mut kl = 0.0;
    for d in 0..mean_old.len() {
        let dm = mean_new[d] - mean_old[d];
        kl += 0.5 * (lv_new[d] - lv_old[d] + ((lv_old[d]).exp() + dm * dm) / lv_new[d].exp() - 1.0);
    }
    kl
}

/// Gaussian policy: network mean plus state-independent log-variances.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub log_var: Vec<f64>,
}

impl GaussianPolicy {
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.net.params().chain(self.log_var.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.net.params_mut().chain(self.log_var.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.log_var.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn max_variance(&self) -> f64 {
        self.log_var.iter().map(|lv| lv.exp()).fold(f64::MIN, f64::max)
    }
}

/// Running per-component mean and variance (parallel-merge Welford).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    /// Components passed through unscaled.
    #[serde(default)]
    pub passthrough: Vec<bool>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim], passthrough: vec![false; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standard deviation; one until two samples have been seen, then floored.
    pub fn std(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![1.0; self.dim()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|m2| (m2 / denom).sqrt().max(STD_FLOOR)).collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let std = self.std();
        (0..self.dim())
            .map(|i| if self.passthrough.get(i).copied().unwrap_or(false) { x[i] } else { (x[i] - self.mean[i]) / std[i] })
            .collect()
    }

    /// Moments of a batch on its own.
    pub fn from_batch<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Self {
        let mut n = Self::new(dim);
        if rows.is_empty() {
            return n;
        }
        let count = rows.len() as f64;
        for r in rows {
            for (m, x) in n.mean.iter_mut().zip(r.as_ref()) {
                *m += x;
            }
        }
        for m in &mut n.mean {
            *m /= count;
        }
        for r in rows {
            for ((s, m), x) in n.m2.iter_mut().zip(&n.mean).zip(r.as_ref()) {
                *s += (x - m) * (x - m);
            }
        }
        n.count = rows.len() as u64;
        n
    }

    /// Chan et al. pairwise combination of two sets of moments.
    pub fn merge(&mut self, other: &RunningNormalizer) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean.clone_from(&other.mean);
            self.m2.clone_from(&other.m2);
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.dim() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn update<R: AsRef<[f64]>>(&mut self, rows: &[R]) {
        let batch = Self::from_batch(self.dim(), rows);
        self.merge(&batch);
    }
}

/// Adam moments for a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self { step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params], beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One bias-corrected descent step `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step<'a, 'b>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = &'b f64>,
        lr: f64,
    ) {
        self.step_with(params, grads, |_| lr);
    }

    /// As [`AdamState::step`] with the learning rate chosen per parameter index.
    pub fn step_with<'a, 'b>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = &'b f64>,
        lr: impl Fn(usize) -> f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (((p, g), m), v)) in params.zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()).enumerate() {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr(k) * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Checkpoint form of a layer: `weights[o][i]` flattened row-major, `y = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&Layer> for LayerRecord {
    fn from(l: &Layer) -> Self {
        let mut weights = Vec::with_capacity(l.weights.len());
        for o in 0..l.outputs {
            for i in 0..l.inputs {
                weights.push(l.weight(o, i));
            }
        }
        Self { inputs: l.inputs, outputs: l.outputs, weights, bias: l.bias.clone() }
    }
}

impl TryFrom<&LayerRecord> for Layer {
    type Error = crate::error::Error;

    fn try_from(r: &LayerRecord) -> Result<Self> {
        if r.weights.len() != r.inputs * r.outputs || r.bias.len() != r.outputs {
            return Err(invalid("layer record has inconsistent dimensions"));
        }
        let mut l = Layer::zeros(r.inputs, r.outputs);
        for o in 0..r.outputs {
            for i in 0..r.inputs {
                l.set_weight(o, i, r.weights[o * r.inputs + i]);
            }
        }
        l.bias.clone_from(&r.bias);
        Ok(l)
    }
}

impl Mlp {
    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.layers.iter().map(LayerRecord::from).collect()
    }

    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        let layers = records.iter().map(Layer::try_from).collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }
}
