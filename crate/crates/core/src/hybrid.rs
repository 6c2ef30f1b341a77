//! Two-branch detector network.
//!
//! The output is `x·w0 + a_N·w_out`: a frozen linear branch initialized from
//! the least-squares weights, plus a ReLU multilayer branch whose final layer
//! starts at zero so the untrained network reproduces the linear detector.
//! Gradients are computed by hand and the trainable branch is fitted with
//! Adam on the mean squared error.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::iq::{narrow_predictions, WidenedDataset};
use crate::linalg::{axpy, dot, RealMatrix};
use crate::lls::LlsWeights;
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_HIDDEN: [usize; 3] = [64, 64, 64];

/// Dense layer with `outputs×inputs` row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight_row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }

    /// `max(a·Wᵀ + b, 0)` for every row of `a`.
    fn forward_relu(&self, a: &RealMatrix) -> RealMatrix {
        let mut out = RealMatrix::zeros(a.rows(), self.outputs);
        for (r, row) in a.row_iter().enumerate() {
            let o = out.row_mut(r);
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = (self.bias[j] + dot(row, self.weight_row(j))).max(0.0);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridNetParams {
    /// Frozen linear branch, length `2M`.
    pub linear: Vec<f64>,
    pub hidden: Vec<DenseLayer>,
    /// Final layer of the nonlinear branch, no bias.
    pub output: Vec<f64>,
}

impl HybridNetParams {
    /// Layer widths `[2M, L_1, ..., L_N]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.linear.len())
            .chain(self.hidden.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_width(&self) -> usize {
        self.linear.len()
    }

    pub fn max_hidden_width(&self) -> usize {
        self.hidden.iter().map(|l| l.outputs).max().unwrap_or(0)
    }

    pub fn trainable_count(&self) -> usize {
        self.hidden
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum::<usize>()
            + self.output.len()
    }

    /// Checks the dimension chain and that all values are finite.
    pub fn validate(&self) -> Result<()> {
        let mut width = self.linear.len();
        if width == 0 {
            return Err(dim_err("linear branch is empty"));
        }
        for (n, l) in self.hidden.iter().enumerate() {
            if l.inputs != width || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(dim_err(format!("hidden layer {} has inconsistent shape", n + 1)));
            }
            width = l.outputs;
        }
        if self.output.len() != width {
            return Err(dim_err(format!(
                "final layer has {} weights, last hidden width is {width}",
                self.output.len()
            )));
        }
        let finite = self
            .linear
            .iter()
            .chain(&self.output)
            .chain(self.hidden.iter().flat_map(|l| l.weights.iter().chain(&l.bias)))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("network parameters are not finite".into()));
        }
        Ok(())
    }

    /// Mutable views of the trainable parameters in a fixed order.
    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.hidden.len() + 1);
        for l in &mut self.hidden {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out.push(&mut self.output);
        out
    }

    fn check_input(&self, x: &RealMatrix) -> Result<()> {
        if x.cols() != self.linear.len() {
            return Err(dim_err(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.linear.len()
            )));
        }
        Ok(())
    }
}

/// Gradients of the trainable parameters, shaped like them.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<DenseLayer>,
    pub output: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &HybridNetParams) -> Self {
        Self {
            hidden: params
                .hidden
                .iter()
                .map(|l| DenseLayer::zeros(l.inputs, l.outputs))
                .collect(),
            output: vec![0.0; params.output.len()],
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.hidden.len() + 1);
        for l in &self.hidden {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out.push(&self.output);
        out
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds a network whose linear branch is `w0` and whose output starts at
/// exactly the linear prediction.
pub fn init_params(dims: &[usize], w0: &LlsWeights, rng: &mut impl Rng) -> Result<HybridNetParams> {
    let Some(&input) = dims.first() else {
        return Err(dim_err("dims must start with the input width"));
    };
    if input != w0.w.len() {
        return Err(dim_err(format!(
            "dims start with {input} but linear weights have {} entries",
            w0.w.len()
        )));
    }
    if dims.contains(&0) {
        return Err(dim_err("layer widths must be positive"));
    }
    let hidden = dims
        .windows(2)
        .map(|w| {
            let (inputs, outputs) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt())
                .expect("positive standard deviation");
            DenseLayer {
                inputs,
                outputs,
                weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
                bias: vec![0.0; outputs],
            }
        })
        .collect();
    Ok(HybridNetParams {
        linear: w0.w.clone(),
        hidden,
        output: vec![0.0; *dims.last().unwrap()],
    })
}

/// Post-ReLU activations of every hidden layer.
fn hidden_activations(params: &HybridNetParams, x: &RealMatrix) -> Vec<RealMatrix> {
    let mut acts: Vec<RealMatrix> = Vec::with_capacity(params.hidden.len());
    for layer in &params.hidden {
        let next = layer.forward_relu(acts.last().unwrap_or(x));
        acts.push(next);
    }
    acts
}

fn combine(params: &HybridNetParams, x: &RealMatrix, last: &RealMatrix) -> Vec<f64> {
    x.row_iter()
        .zip(last.row_iter())
        .map(|(xr, ar)| dot(xr, &params.linear) + dot(ar, &params.output))
        .collect()
}

pub fn forward(params: &HybridNetParams, x: &RealMatrix) -> Result<Vec<f64>> {
    params.check_input(x)?;
    let acts = hidden_activations(params, x);
    Ok(combine(params, x, acts.last().unwrap_or(x)))
}

/// Mean squared error and its gradient with respect to the trainable
/// parameters. The ReLU derivative at zero is taken as zero.
pub fn loss_and_grad(params: &HybridNetParams, x: &RealMatrix, y: &[f64]) -> Result<(f64, Gradients)> {
    params.check_input(x)?;
    let batch = x.rows();
    if batch == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if y.len() != batch {
        return Err(dim_err(format!("{batch} inputs but {} targets", y.len())));
    }

    let acts = hidden_activations(params, x);
    let last = acts.last().unwrap_or(x);
    let pred = combine(params, x, last);

    let scale = 2.0 / batch as f64;
    let mut loss = 0.0;
    let resid: Vec<f64> = pred
        .iter()
        .zip(y)
        .map(|(p, t)| {
            let e = p - t;
            loss += e * e;
            scale * e
        })
        .collect();
    loss /= batch as f64;

    let mut grads = Gradients::zeros_like(params);
    for (ar, &g) in last.row_iter().zip(&resid) {
        axpy(g, ar, &mut grads.output);
    }

    let Some(top) = params.hidden.len().checked_sub(1) else {
        return Ok((loss, grads));
    };

    // delta for the top hidden layer
    let mut delta = RealMatrix::zeros(batch, params.hidden[top].outputs);
    for r in 0..batch {
        let a = last.row(r);
        for (j, d) in delta.row_mut(r).iter_mut().enumerate() {
            if a[j] > 0.0 {
                *d = resid[r] * params.output[j];
            }
        }
    }

    for n in (0..=top).rev() {
        let layer = &params.hidden[n];
        let input = if n == 0 { x } else { &acts[n - 1] };
        let g = &mut grads.hidden[n];
        for r in 0..batch {
            let dr = delta.row(r);
            let ar = input.row(r);
            for (j, &d) in dr.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, ar, &mut g.weights[j * layer.inputs..(j + 1) * layer.inputs]);
                    g.bias[j] += d;
                }
            }
        }
        if n == 0 {
            break;
        }
        let mut prev = RealMatrix::zeros(batch, layer.inputs);
        for r in 0..batch {
            let dr = delta.row(r);
            let pr = prev.row_mut(r);
            for (j, &d) in dr.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, layer.weight_row(j), pr);
                }
            }
            for (p, &a) in pr.iter_mut().zip(input.row(r)) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        delta = prev;
    }
    Ok((loss, grads))
}

/// Adam optimizer state over the flattened trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &HybridNetParams, lr: f64) -> Self {
        let n = params.trainable_count();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of the trainable branch. The linear
/// branch is never touched.
pub fn adam_step(params: &mut HybridNetParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let n = params.trainable_count();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(dim_err(format!(
            "Adam shapes disagree: {n} parameters, {} gradients, {} moments",
            grads.len(),
            state.m.len()
        )));
    }
    if !(state.lr > 0.0 && state.lr.is_finite()) {
        return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", state.lr)));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut idx = 0;
    for (p, g) in params.trainable_mut().into_iter().zip(grads.slices()) {
        for (pi, &gi) in p.iter_mut().zip(g) {
            let m = &mut state.m[idx];
            let v = &mut state.v[idx];
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *pi -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            idx += 1;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            lr: 0.005,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: HybridNetParams,
    /// Mean training loss of each epoch, averaged over its mini-batches
    /// weighted by batch size.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch Adam over a freshly shuffled order every epoch.
pub fn train(params: HybridNetParams, data: &WidenedDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let targets = data.targets.as_deref().ok_or(Error::EmptyTrainingSet)?;
    let n = data.design.rows();
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    params.check_input(&data.design)?;

    let mut params = params;
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.shuffle_seed, Stream::Shuffle, epoch as u32);
        order.sort_unstable();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = data.design.select_rows(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = loss_and_grad(&params, &xb, &yb)?;
            adam_step(&mut params, &grads, &mut adam)?;
            total += loss * chunk.len() as f64;
        }
        trace.push(total / n as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
    })
}

/// Complex symbol estimates for widened detection-phase rows.
pub fn detect(params: &HybridNetParams, design: &RealMatrix) -> Result<Vec<Complex64>> {
    narrow_predictions(&forward(params, design)?)
}

/// Convenience: seeded initialization from a user's linear weights.
pub fn init_seeded(dims: &[usize], w0: &LlsWeights, seed: u64) -> Result<HybridNetParams> {
    init_params(dims, w0, &mut stream_rng(seed, Stream::NetInit, 0))
}

/// `[2M, hidden...]`.
pub fn full_dims(input_width: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(input_width).chain(hidden.iter().copied()).collect()
}
