//! Small differentiable kernel: dense layers, activations, softmax
//! cross-entropy, SGD and global pooling. Batches are row-major
//! `(batch, features)` matrices; all arithmetic is `f64`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Linear output, used by classifier heads. Not selectable by index.
    Identity,
    Relu,
    Sigmoid,
    LeakyRelu,
}

impl Activation {
    /// Selectable activations in index order (1-based on the wire).
    pub const CHOICES: [Activation; 3] = [Activation::Relu, Activation::Sigmoid, Activation::LeakyRelu];

    pub fn from_index(index: usize) -> Option<Self> {
        index.checked_sub(1).and_then(|i| Self::CHOICES.get(i)).copied()
    }

    /// The first `p` selectable activations.
    pub fn choices(p: usize) -> Result<&'static [Activation]> {
        if p == 0 || p > Self::CHOICES.len() {
            return Err(Error::InvalidArgument(format!(
                "P={p} activation choices requested, {} available",
                Self::CHOICES.len()
            )));
        }
        Ok(&Self::CHOICES[..p])
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::LeakyRelu => "leaky_relu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Activation::Identity,
            Activation::Relu,
            Activation::Sigmoid,
            Activation::LeakyRelu,
        ]
        .into_iter()
        .find(|a| a.name() == name)
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    /// Derivative given the pre-activation and the activation output.
    /// ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
            Activation::LeakyRelu => {
                if pre >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (1.0 / (1.0 + (-x).exp())).min(SIGMOID_MAX)
    } else {
        let e = x.exp();
        (e / (1.0 + e)).max(f64::MIN_POSITIVE)
    }
}

/// Largest `f64` below one; keeps saturated sigmoid outputs off the bound.
const SIGMOID_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Dense tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid tensor shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor value {v}")));
        }
        Ok(Tensor { shape, values })
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![values.len()], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-channel mean over every non-channel position. Vectors pass through
/// unchanged.
pub fn global_pool(feature: &Tensor) -> Result<Vec<f64>> {
    if feature.shape.len() == 1 {
        return Ok(feature.values.clone());
    }
    let channels = feature.shape[0];
    let positions: usize = feature.shape[1..].iter().product();
    if positions == 0 {
        return Err(Error::Shape("global pooling over an empty position set".into()));
    }
    Ok(feature
        .values
        .chunks_exact(positions)
        .take(channels)
        .map(|c| c.iter().sum::<f64>() / positions as f64)
        .collect())
}

/// Gradients of a [`Dense`] layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrads {
    pub fn norm_sq(&self) -> f64 {
        self.weight.iter().chain(self.bias.iter()).map(|g| g * g).sum()
    }

    pub fn add_assign(&mut self, other: &DenseGrads) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }
}

/// Values kept from a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseTrace {
    pub pre: Array2<f64>,
    pub out: Array2<f64>,
}

/// Fully connected layer `activation(W·x + b)`; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Uniform init in `[-a, a]`, `a = sqrt(6 / (in + out))`; zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Dense {
            weight,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.nrows() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weight.nrows()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense parameters".into()));
        }
        Ok(Dense {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weight.dim()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Single-vector forward pass.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "dense input length {} != in_dim {}",
                input.len(),
                self.in_dim()
            )));
        }
        let x = ndarray::ArrayView1::from(input);
        let pre = self.weight.dot(&x) + &self.bias;
        Ok(pre.iter().map(|&v| self.activation.apply(v)).collect())
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<DenseTrace> {
        if input.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "dense input width {} != in_dim {}",
                input.ncols(),
                self.in_dim()
            )));
        }
        let pre = standard(input.dot(&self.weight.t()) + &self.bias);
        let act = self.activation;
        let out = pre.mapv(|v| act.apply(v));
        Ok(DenseTrace { pre, out })
    }

    /// Backward pass for a batch. Returns parameter gradients and the
    /// gradient with respect to `input`.
    pub fn backward(
        &self,
        input: ArrayView2<'_, f64>,
        trace: &DenseTrace,
        d_out: ArrayView2<'_, f64>,
    ) -> (DenseGrads, Array2<f64>) {
        let d_pre = self.pre_gradient(trace, d_out);
        let grads = DenseGrads {
            weight: standard(d_pre.t().dot(&input)),
            bias: d_pre.sum_axis(Axis(0)),
        };
        let d_input = standard(d_pre.dot(&self.weight));
        (grads, d_input)
    }

    /// Parameter gradients only; skips the input gradient.
    pub fn backward_params(
        &self,
        input: ArrayView2<'_, f64>,
        trace: &DenseTrace,
        d_out: ArrayView2<'_, f64>,
    ) -> DenseGrads {
        let d_pre = self.pre_gradient(trace, d_out);
        DenseGrads {
            weight: standard(d_pre.t().dot(&input)),
            bias: d_pre.sum_axis(Axis(0)),
        }
    }

    fn pre_gradient(&self, trace: &DenseTrace, d_out: ArrayView2<'_, f64>) -> Array2<f64> {
        let act = self.activation;
        if act == Activation::Identity {
            return d_out.to_owned();
        }
        let mut d_pre = d_out.to_owned();
        ndarray::Zip::from(&mut d_pre)
            .and(&trace.pre)
            .and(&trace.out)
            .for_each(|d, &p, &o| *d *= act.derivative(p, o));
        d_pre
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn sgd_step(&mut self, grads: &DenseGrads, lr: f64) -> Result<()> {
        if grads.weight.dim() != self.weight.dim() || grads.bias.len() != self.bias.len() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match layer {:?}",
                grads.weight.dim(),
                self.weight.dim()
            )));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        self.weight.scaled_add(-lr, &grads.weight);
        self.bias.scaled_add(-lr, &grads.bias);
        Ok(())
    }

    /// Parameters flattened as weight (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.weight.iter().chain(self.bias.iter()).copied().collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let (w, b) = flat.split_at(self.weight.len());
        self.weight.iter_mut().zip(w).for_each(|(d, &v)| *d = v);
        self.bias.iter_mut().zip(b).for_each(|(d, &v)| *d = v);
        Ok(())
    }
}

/// Mini-batch SGD settings shared by every trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for Sgd {
    fn default() -> Self {
        Sgd {
            lr: 0.1,
            batch_size: 32,
        }
    }
}

impl Sgd {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// A shuffled partition of `0..n` into mini-batches.
    pub fn batches<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<usize>> {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order.chunks(self.batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// Row-major copy unless the array already is.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// `p ← p − lr·g`, elementwise.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - log_z).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean cross-entropy over a batch, with the gradient of that mean.
pub fn softmax_cross_entropy_batch(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let batch = labels.len().max(1) as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (i, (row, &label)) in logits.outer_iter().zip(labels).enumerate() {
        let (loss, g) = softmax_cross_entropy(&row.to_vec(), label)?;
        total += loss;
        for (dst, v) in grad.row_mut(i).iter_mut().zip(g) {
            *dst = v / batch;
        }
    }
    Ok((total / batch, grad))
}

pub fn weighted_multi_loss(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} losses but {} weights",
            losses.len(),
            weights.len()
        )));
    }
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub const FD_STEP: f64 = 1e-5;

/// Largest per-coordinate relative error between `analytic` and central
/// differences of `f` at `point`. The denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, analytic: &[f64], point: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "{} gradient entries for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = f(&probe);
        probe[i] = orig - FD_STEP;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("function value near coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
