//! Dense ReLU networks with folded biases, reverse-mode gradients and SGD.
//!
//! A model is the ordered list `W_1, ..., W_n` and computes
//! `f(x) = W_n relu(W_{n-1} ... relu(W_1 x))`. Biases are not separate
//! parameters: when `input_bias` is set, the model appends a constant `1`
//! to every input, so the last column of `W_1` acts as the bias. Spectral
//! quantities therefore see that column as part of `W_1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, dot, Matrix};
use crate::rng::{self, Phase};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Matrix>,
    input_bias: bool,
}

impl MlpModel {
    /// A bias-free model: inputs are fed to `W_1` as given.
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        Self::build(layers, false)
    }

    /// A model whose first layer has one extra trailing column fed with a
    /// constant `1`.
    pub fn with_input_bias(layers: Vec<Matrix>) -> Result<Self> {
        Self::build(layers, true)
    }

    pub fn build(layers: Vec<Matrix>, input_bias: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for (i, w) in layers.iter().enumerate() {
            if w.rows() == 0 || w.cols() == 0 {
                return Err(Error::Dimension(format!("layer {i} is empty")));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("layer {i}")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::Dimension(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    i + 1,
                    pair[1].cols(),
                    i,
                    pair[0].rows()
                )));
            }
        }
        if input_bias && layers[0].cols() < 2 {
            return Err(Error::Dimension(
                "a bias column needs at least one real input".into(),
            ));
        }
        Ok(Self { layers, input_bias })
    }

    /// Uniform `±1/√fan_in` initialisation for layer widths `dims`
    /// (`dims[0]` is the raw input dimension; the bias column is added when
    /// `input_bias` is set).
    pub fn init(dims: &[usize], input_bias: bool, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must have ≥ 2 positive entries, got {dims:?}"
            )));
        }
        let mut rng = rng::phase_stream(seed, 0, Phase::Init);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let fan_in = w[0] + usize::from(input_bias && i == 0);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Matrix::from_fn(w[1], fan_in, |_, _| rng.random_range(-bound..bound))
            })
            .collect();
        Self::build(layers, input_bias)
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Matrix {
        &self.layers[i]
    }

    pub fn into_layers(self) -> Vec<Matrix> {
        self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_bias(&self) -> bool {
        self.input_bias
    }

    /// Layer widths `[d, h_1, ..., k]`; `d` includes the bias coordinate.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].cols())
            .chain(self.layers.iter().map(Matrix::rows))
            .collect()
    }

    /// Length of the vectors accepted by [`forward`](Self::forward).
    pub fn input_dim(&self) -> usize {
        self.layers[0].cols() - usize::from(self.input_bias)
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, Matrix::rows)
    }

    /// Widest layer output (`h` of the bound formulas).
    pub fn max_width(&self) -> usize {
        self.layers.iter().map(Matrix::rows).max().unwrap_or(0)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|w| w.rows() * w.cols()).sum()
    }

    /// The input as seen by `W_1` (bias coordinate appended if enabled).
    pub fn augment(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        if self.input_bias {
            a.push(1.0);
        }
        a
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "model takes {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Logits `f_w(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(&self.augment(x)))
    }

    /// Forward pass on an already augmented input.
    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> Vec<f64> {
        let mut a = self.layers[0].matvec(input);
        for w in &self.layers[1..] {
            relu_in_place(&mut a);
            a = w.matvec(&a);
        }
        a
    }

    /// Predicted class, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Forward pass that records everything [`backward`](Self::backward)
    /// needs.
    pub fn forward_traced(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut a = self.augment(x);
        for (i, w) in self.layers.iter().enumerate() {
            let z = w.matvec(&a);
            inputs.push(a);
            a = if i + 1 < self.layers.len() {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre_activations.push(z);
        }
        Ok(ForwardTrace {
            inputs,
            pre_activations,
        })
    }

    /// Gradients of `⟨upstream, f_w(x)⟩` with respect to every weight.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(trace, upstream, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Accumulate `scale · ∂⟨upstream, f_w(x)⟩/∂W` into `grads`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        self.check_trace(trace)?;
        if upstream.len() != self.num_classes() {
            return Err(Error::Dimension(format!(
                "upstream has {} entries, model has {} outputs",
                upstream.len(),
                self.num_classes()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Dimension("gradient buffer has wrong layer count".into()));
        }
        let mut delta: Vec<f64> = upstream.iter().map(|g| g * scale).collect();
        for l in (0..self.layers.len()).rev() {
            let input = &trace.inputs[l];
            let g = &mut grads.layers[l];
            for (r, &dr) in delta.iter().enumerate() {
                if dr == 0.0 {
                    continue;
                }
                for (gv, &a) in g.row_mut(r).iter_mut().zip(input) {
                    *gv += dr * a;
                }
            }
            if l > 0 {
                let mut back = self.layers[l].transposed_matvec(&delta);
                // ReLU derivative, 0 at the kink.
                for (b, &z) in back.iter_mut().zip(&trace.pre_activations[l - 1]) {
                    if z <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }
        Ok(())
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.inputs.len() != self.layers.len()
            || trace.pre_activations.len() != self.layers.len()
        {
            return Err(Error::TraceMismatch(format!(
                "trace has {} layers, model has {}",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        for (l, w) in self.layers.iter().enumerate() {
            if trace.inputs[l].len() != w.cols() || trace.pre_activations[l].len() != w.rows() {
                return Err(Error::TraceMismatch(format!("layer {l} shape differs")));
            }
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    /// A copy with every weight shifted by `c · noise[l]`.
    pub fn perturbed(&self, noise: &[Matrix], c: f64) -> Result<MlpModel> {
        if noise.len() != self.layers.len() {
            return Err(Error::Dimension("perturbation has wrong layer count".into()));
        }
        let mut out = self.clone();
        for (w, u) in out.layers.iter_mut().zip(noise) {
            w.add_scaled(u, c)?;
        }
        Ok(out)
    }

    /// A copy with layer `l` multiplied by `c`.
    pub fn with_scaled_layer(&self, l: usize, c: f64) -> MlpModel {
        let mut out = self.clone();
        out.layers[l] = out.layers[l].scaled(c);
        out
    }
}

#[inline]
pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    /// Input of each layer (the augmented input for layer 0).
    inputs: Vec<Vec<f64>>,
    /// `W_l a_{l-1}` for each layer; the last entry is the logits.
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre_activations.last().map_or(&[], Vec::as_slice)
    }
}

/// Per-layer gradient matrices, shape-matched to a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.layers {
            for v in g.entries_mut() {
                *v *= c;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.entries())
            .map(|v| v * v)
            .sum()
    }
}

/// Softmax cross-entropy via log-sum-exp, with gradient `softmax - onehot`.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum buffers, one per layer.
#[derive(Clone, Debug)]
pub struct SgdState {
    velocity: Vec<Matrix>,
}

impl SgdState {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            velocity: Gradients::zeros_like(model).layers,
        }
    }
}

/// Classic momentum SGD: `v ← μ v + g + λ w`, `w ← w − lr v`.
pub fn sgd_step(
    model: &mut MlpModel,
    grads: &Gradients,
    params: &SgdParams,
    state: &mut SgdState,
) -> Result<()> {
    if params.lr < 0.0 || !(0.0..1.0).contains(&params.momentum) || params.weight_decay < 0.0 {
        return Err(Error::InvalidArgument(format!("bad SGD parameters {params:?}")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient passed to sgd_step".into()));
    }
    if grads.layers.len() != model.num_layers() || state.velocity.len() != model.num_layers() {
        return Err(Error::Dimension("gradient / state layer count".into()));
    }
    for ((w, g), v) in model
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.velocity)
    {
        if w.shape() != g.shape() || w.shape() != v.shape() {
            return Err(Error::Dimension("gradient shape differs from layer".into()));
        }
        for ((wv, &gv), vv) in w
            .entries_mut()
            .iter_mut()
            .zip(g.entries())
            .zip(v.entries_mut())
        {
            *vv = params.momentum * *vv + gv + params.weight_decay * *wv;
            *wv -= params.lr * *vv;
        }
    }
    if !model.layers().iter().all(Matrix::is_finite) {
        return Err(Error::NonFinite("weights after sgd_step".into()));
    }
    Ok(())
}

/// Plain gradient step `w ← w − lr · c · g` without touching momentum.
pub fn gradient_step(model: &mut MlpModel, grads: &Gradients, lr: f64) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient passed to gradient_step".into()));
    }
    for (w, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
        w.add_scaled(g, -lr)?;
    }
    Ok(())
}

/// Straight dot-product evaluation used by tests as an independent path.
#[doc(hidden)]
pub fn reference_forward(layers: &[Vec<Vec<f64>>], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for (l, w) in layers.iter().enumerate() {
        let z: Vec<f64> = w.iter().map(|row| dot(row, &a)).collect();
        a = if l + 1 < layers.len() {
            z.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect()
        } else {
            z
        };
    }
    a
}
