use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Adam;
use crate::{Error, Result};

const BN_EPS: f64 = 1e-5;

/// `a * b` into a fresh row-major array.
fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ");
    let mut c = Array2::<f64>::zeros((m, n));
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (a_rs, a_cs) = (a.strides()[0], a.strides()[1]);
    let (b_rs, b_cs) = (b.strides()[0], b.strides()[1]);
    // SAFETY: both views are valid for their shapes and strides; `c` is a contiguous m x n buffer.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            n as isize,
            false,
            a.as_ptr(),
            a_cs,
            a_rs,
            b.as_ptr(),
            b_cs,
            b_rs,
            0.0,
            1.0,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
    c
}
/// Weight kept on the old running statistics at every train-mode batch.
const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    /// `pi * tanh(z)`, strictly inside (-pi, pi).
    ScaledTanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_batch_norm: bool,
    pub output_activation: OutputActivation,
}

impl DenseNetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden_batch_norm: bool, output_activation: OutputActivation) -> Result<Self> {
        let spec = Self { layer_sizes, hidden_batch_norm, output_activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid("a network needs at least an input and an output size"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn num_hidden(&self) -> usize {
        self.layer_sizes.len() - 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Fully connected layer `y = x W + b`, with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

/// Parameters plus running statistics; serializes as a self-describing checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: DenseNetworkSpec,
    linears: Vec<Linear>,
    norms: Vec<BatchNorm>,
}

/// Gradients shaped like a [`Network`]'s trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub linears: Vec<Linear>,
    pub norms: Vec<(Array1<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.linears {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        for (g, b) in &self.norms {
            out.push(g.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).fold(0.0f64, |a, &b| a.max(b.abs()))
    }
}

/// Intermediate values of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of every linear layer.
    inputs: Vec<Array2<f64>>,
    /// Normalized pre-activations of hidden layers (empty arrays without batch norm).
    normalized: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    batch_mean: Vec<Array1<f64>>,
    batch_var: Vec<Array1<f64>>,
    /// ReLU inputs of hidden layers.
    relu_in: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Network {
    /// Uniform fan-in initialization: weights and biases in `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(spec: DenseNetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let linears = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Linear {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound)),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound)),
                }
            })
            .collect();
        let norms = if spec.hidden_batch_norm {
            spec.layer_sizes[1..spec.layer_sizes.len() - 1].iter().map(|&w| BatchNorm::new(w)).collect()
        } else {
            Vec::new()
        };
        Ok(Self { spec, linears, norms })
    }

    /// Builds a network from explicit layers (no batch norm unless `norms` is non-empty).
    pub fn from_parts(spec: DenseNetworkSpec, linears: Vec<Linear>, norms: Vec<BatchNorm>) -> Result<Self> {
        spec.validate()?;
        if linears.len() != spec.layer_sizes.len() - 1 {
            return Err(Error::invalid("wrong number of linear layers"));
        }
        for (l, w) in linears.iter().zip(spec.layer_sizes.windows(2)) {
            if l.weight.dim() != (w[0], w[1]) || l.bias.len() != w[1] {
                return Err(Error::invalid("linear layer shape does not match the spec"));
            }
        }
        let expected_norms = if spec.hidden_batch_norm { spec.num_hidden() } else { 0 };
        if norms.len() != expected_norms {
            return Err(Error::invalid("wrong number of batch-norm layers"));
        }
        Ok(Self { spec, linears, norms })
    }

    pub fn spec(&self) -> &DenseNetworkSpec {
        &self.spec
    }

    pub fn linears(&self) -> &[Linear] {
        &self.linears
    }

    pub fn linears_mut(&mut self) -> &mut [Linear] {
        &mut self.linears
    }

    pub fn norms(&self) -> &[BatchNorm] {
        &self.norms
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Trainable tensors in a fixed order (weights and biases, then batch-norm scale and shift).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.linears {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        for n in &self.norms {
            out.push(n.gamma.as_slice().expect("standard layout"));
            out.push(n.beta.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.linears {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        for n in &mut self.norms {
            out.push(n.gamma.as_slice_mut().expect("standard layout"));
            out.push(n.beta.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn check_input(&self, batch: &Array2<f64>) -> Result<()> {
        if batch.ncols() != self.spec.input_size() {
            return Err(Error::invalid(format!(
                "batch has {} features, network expects {}",
                batch.ncols(),
                self.spec.input_size()
            )));
        }
        if batch.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        Ok(())
    }

    fn affine(&self, layer: usize, x: &Array2<f64>) -> Array2<f64> {
        let l = &self.linears[layer];
        let mut z = matmul(x.view(), l.weight.view());
        z += &l.bias;
        z
    }

    fn activate_output(&self, mut z: Array2<f64>) -> Array2<f64> {
        if self.spec.output_activation == OutputActivation::ScaledTanh {
            z.mapv_inplace(|v| PI * v.tanh());
        }
        z
    }

    /// Forward pass; in train mode the running statistics are updated from the batch.
    pub fn forward(&mut self, batch: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Eval => self.forward_eval(batch),
            Mode::Train => {
                let trace = self.forward_train(batch)?;
                self.update_running_stats(&trace);
                Ok(trace.output)
            }
        }
    }

    /// Eval-mode forward pass using running statistics; a pure function of the input.
    pub fn forward_eval(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(batch)?;
        let mut x = batch.to_owned();
        for layer in 0..self.spec.num_hidden() {
            let mut z = self.affine(layer, &x);
            if let Some(n) = self.norms.get(layer) {
                let scale = Zip::from(&n.gamma).and(&n.running_var).map_collect(|g, v| g / (v + BN_EPS).sqrt());
                let shift = Zip::from(&n.beta)
                    .and(&n.running_mean)
                    .and(&scale)
                    .map_collect(|b, m, s| b - m * s);
                z *= &scale;
                z += &shift;
            }
            z.mapv_inplace(|v| v.max(0.0));
            x = z;
        }
        let z = self.affine(self.linears.len() - 1, &x);
        Ok(self.activate_output(z))
    }

    /// Train-mode forward pass (batch statistics) that records what backward needs.
    /// Does not touch the running statistics.
    pub fn forward_train(&self, batch: &Array2<f64>) -> Result<ForwardTrace> {
        self.check_input(batch)?;
        if self.spec.hidden_batch_norm && batch.nrows() < 2 {
            return Err(Error::invalid("train-mode batch norm needs at least two samples"));
        }
        let hidden = self.spec.num_hidden();
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(hidden + 1),
            normalized: Vec::with_capacity(hidden),
            inv_std: Vec::with_capacity(hidden),
            batch_mean: Vec::with_capacity(hidden),
            batch_var: Vec::with_capacity(hidden),
            relu_in: Vec::with_capacity(hidden),
            output: Array2::zeros((0, 0)),
        };
        let mut x = batch.to_owned();
        for layer in 0..hidden {
            let mut z = self.affine(layer, &x);
            trace.inputs.push(x);
            let width = z.ncols();
            if let Some(n) = self.norms.get(layer) {
                let rows = z.nrows() as f64;
                let mut y = Array2::zeros(z.raw_dim());
                let zs = z.as_slice_mut().expect("standard layout");
                let mut mean = vec![0.0; width];
                for row in zs.chunks_exact(width) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows);
                let mut var = vec![0.0; width];
                for row in zs.chunks_exact_mut(width) {
                    for ((v, acc), m) in row.iter_mut().zip(var.iter_mut()).zip(&mean) {
                        *v -= m;
                        *acc += *v * *v;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let gamma = n.gamma.as_slice().expect("standard layout");
                let beta = n.beta.as_slice().expect("standard layout");
                let ys = y.as_slice_mut().expect("standard layout");
                for (zr, yr) in zs.chunks_exact_mut(width).zip(ys.chunks_exact_mut(width)) {
                    for j in 0..width {
                        zr[j] *= inv_std[j];
                        yr[j] = zr[j] * gamma[j] + beta[j];
                    }
                }
                trace.normalized.push(z);
                trace.inv_std.push(Array1::from(inv_std));
                trace.batch_mean.push(Array1::from(mean));
                trace.batch_var.push(Array1::from(var));
                z = y;
            }
            let a = z.mapv(|v| v.max(0.0));
            trace.relu_in.push(z);
            x = a;
        }
        let z = self.affine(hidden, &x);
        trace.inputs.push(x);
        trace.output = self.activate_output(z);
        Ok(trace)
    }

    /// Folds a train-mode batch's statistics into the running estimates.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        let n = trace.inputs.first().map_or(0, |x| x.nrows()) as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (norm, (mean, var)) in self.norms.iter_mut().zip(trace.batch_mean.iter().zip(&trace.batch_var)) {
            Zip::from(&mut norm.running_mean)
                .and(mean)
                .for_each(|r, &m| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m);
            Zip::from(&mut norm.running_var)
                .and(var)
                .for_each(|r, &v| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * unbias);
        }
    }

    /// Backpropagates `d_output` (dL/d output) through a train-mode trace.
    /// Returns parameter gradients and dL/d input.
    pub fn backward(&self, trace: &ForwardTrace, d_output: &Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if d_output.dim() != trace.output.dim() {
            return Err(Error::invalid("output gradient shape does not match the forward pass"));
        }
        let hidden = self.spec.num_hidden();
        let mut linear_grads: Vec<Option<Linear>> = vec![None; hidden + 1];
        let mut norm_grads: Vec<Option<(Array1<f64>, Array1<f64>)>> = vec![None; self.norms.len()];

        let mut dz = d_output.to_owned();
        if self.spec.output_activation == OutputActivation::ScaledTanh {
            Zip::from(&mut dz).and(&trace.output).for_each(|d, &y| {
                let t = y / PI;
                *d *= PI * (1.0 - t * t);
            });
        }
        let mut layer = hidden;
        loop {
            let x = &trace.inputs[layer];
            let weight = &self.linears[layer].weight;
            let d_weight = matmul(x.t(), dz.view());
            linear_grads[layer] = Some(Linear { weight: d_weight, bias: dz.sum_axis(Axis(0)) });
            let dx = matmul(dz.view(), weight.t());
            if layer == 0 {
                let linears = linear_grads.into_iter().map(|g| g.expect("filled")).collect();
                let norms = norm_grads.into_iter().map(|g| g.expect("filled")).collect();
                return Ok((Gradients { linears, norms }, dx));
            }
            layer -= 1;
            // ReLU
            let mut dy = dx;
            let width = dy.ncols();
            {
                let ds = dy.as_slice_mut().expect("standard layout");
                let ys = trace.relu_in[layer].as_slice().expect("standard layout");
                for (d, &y) in ds.iter_mut().zip(ys) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            if let Some(norm) = self.norms.get(layer) {
                let x_hat = trace.normalized[layer].as_slice().expect("standard layout");
                let ds = dy.as_slice_mut().expect("standard layout");
                let mut d_gamma = vec![0.0; width];
                let mut d_beta = vec![0.0; width];
                for (dr, xr) in ds.chunks_exact(width).zip(x_hat.chunks_exact(width)) {
                    for j in 0..width {
                        d_gamma[j] += dr[j] * xr[j];
                        d_beta[j] += dr[j];
                    }
                }
                // with dx_hat = dy * gamma: sum dx_hat = gamma * d_beta, sum dx_hat * x_hat = gamma * d_gamma
                let n = ds.len() as f64 / width as f64;
                let gamma = norm.gamma.as_slice().expect("standard layout");
                let inv_std = trace.inv_std[layer].as_slice().expect("standard layout");
                let scale: Vec<f64> = (0..width).map(|j| inv_std[j] / n).collect();
                let sum_a: Vec<f64> = (0..width).map(|j| gamma[j] * d_beta[j]).collect();
                let sum_b: Vec<f64> = (0..width).map(|j| gamma[j] * d_gamma[j]).collect();
                for (dr, xr) in ds.chunks_exact_mut(width).zip(x_hat.chunks_exact(width)) {
                    for j in 0..width {
                        dr[j] = (n * dr[j] * gamma[j] - sum_a[j] - xr[j] * sum_b[j]) * scale[j];
                    }
                }
                norm_grads[layer] = Some((Array1::from(d_gamma), Array1::from(d_beta)));
            }
            dz = dy;
        }
    }

    /// Mean-squared-error loss and its parameter gradients on a train-mode pass.
    pub fn mse_backward(&self, batch: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Gradients)> {
        let trace = self.forward_train(batch)?;
        if targets.dim() != trace.output.dim() {
            return Err(Error::invalid(format!(
                "targets have shape {:?}, outputs {:?}",
                targets.dim(),
                trace.output.dim()
            )));
        }
        let (loss, d_out) = mse_loss(&trace.output, targets);
        let (grads, _) = self.backward(&trace, &d_out)?;
        Ok((loss, grads))
    }

    /// Applies one Adam update with `grads`.
    pub fn adam_step(&mut self, grads: &Gradients, adam: &mut Adam) {
        let g = grads.tensors();
        adam.step(self.tensors_mut(), g);
    }

    /// `self <- tau * online + (1 - tau) * self`, running statistics included.
    pub fn soft_update_from(&mut self, online: &Network, tau: f64) {
        let blend = |t: &mut [f64], o: &[f64]| {
            for (a, b) in t.iter_mut().zip(o) {
                *a = tau * b + (1.0 - tau) * *a;
            }
        };
        for (t, o) in self.tensors_mut().into_iter().zip(online.tensors()) {
            blend(t, o);
        }
        for (t, o) in self.norms.iter_mut().zip(&online.norms) {
            blend(t.running_mean.as_slice_mut().unwrap(), o.running_mean.as_slice().unwrap());
            blend(t.running_var.as_slice_mut().unwrap(), o.running_var.as_slice().unwrap());
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Network = serde_json::from_str(s)?;
        Network::from_parts(net.spec, net.linears, net.norms)
    }
}

/// Mean over all elements of `(output - target)^2`, and its gradient w.r.t. `output`.
pub fn mse_loss(output: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    let count = output.len() as f64;
    let diff = output - targets;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    (loss, diff * (2.0 / count))
}
