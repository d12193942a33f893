//! Dense-network numerics.
//!
//! A projector is a three-layer MLP `W3·relu(W2·relu(W1·f + b1) + b2) + b3`.
//! Everything is `f64` and every matrix is row-major `(out_dim, in_dim)`.
//! Gradients are hand-derived; [`crate::gradcheck`] verifies them against
//! central finite differences.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

/// Norm below which [`l2_normalize`] refuses to divide.
pub const NORM_EPS: f64 = 1e-12;

/// Dense affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights from `uniform(-1/sqrt(in_dim), 1/sqrt(in_dim))`, zero biases.
    pub fn uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new(-limit, limit).expect("finite non-empty range");
        let weight = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    /// Builds a layer from explicit row-major weights.
    pub fn from_parts(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let layer = Self {
            in_dim,
            out_dim,
            weight,
            bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weight[r * self.in_dim..(r + 1) * self.in_dim]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::arg("layer dimensions must be >= 1"));
        }
        if self.weight.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(Error::arg(format!(
                "layer {}x{} has {} weights and {} biases",
                self.out_dim,
                self.in_dim,
                self.weight.len(),
                self.bias.len()
            )));
        }
        if !self.weight.iter().chain(&self.bias).all(|x| x.is_finite()) {
            return Err(Error::arg("layer contains non-finite entries"));
        }
        Ok(())
    }

    /// `out = W x + b`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.bias[r] + dot(self.row(r), x);
        }
    }

    /// `grad.W += dy ⊗ x`, `grad.b += dy`.
    pub(crate) fn accumulate_grad(x: &[f64], dy: &[f64], grad: &mut Linear) {
        for (r, &g) in dy.iter().enumerate() {
            grad.bias[r] += g;
            if g == 0.0 {
                continue;
            }
            let row = &mut grad.weight[r * x.len()..(r + 1) * x.len()];
            for (w, &xi) in row.iter_mut().zip(x) {
                *w += g * xi;
            }
        }
    }

    /// `dx = Wᵀ dy`.
    pub(crate) fn input_grad(&self, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &w) in dx.iter_mut().zip(self.row(r)) {
                *d += g * w;
            }
        }
        dx
    }

    fn add_scaled(&mut self, other: &Linear, scale: f64) {
        for (a, &b) in self.weight.iter_mut().zip(&other.weight) {
            *a += scale * b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }

    fn scaled(&self, scale: f64) -> Linear {
        Linear {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: self.weight.iter().map(|w| scale * w).collect(),
            bias: self.bias.iter().map(|b| scale * b).collect(),
        }
    }

    fn append_rows(&mut self, other: Linear) {
        debug_assert_eq!(self.in_dim, other.in_dim);
        self.out_dim += other.out_dim;
        self.weight.extend(other.weight);
        self.bias.extend(other.bias);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// Layer widths of a projector: input `d`, hidden `h`, output `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl ProjectorDims {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self { input, hidden, output }
    }

    /// All three widths equal to the feature dimension.
    pub fn square(d: usize) -> Self {
        Self::new(d, d, d)
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.output == 0 {
            return Err(Error::arg(format!(
                "projector dimensions must be >= 1, got {}/{}/{}",
                self.input, self.hidden, self.output
            )));
        }
        Ok(())
    }
}

/// Three-layer ReLU MLP mapping an intermediate feature to the embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

/// Gradients share the projector's layout.
pub type ProjectorGrads = Projector;

/// Pre- and post-activation values of one [`Projector::forward`] call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: ProjectorDims,
    input: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
}

impl ForwardCache {
    pub fn dims(&self) -> ProjectorDims {
        self.dims
    }

    /// Which hidden units were active (`z > 0`), layer 1 then layer 2.
    pub fn activation_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.z1.iter().chain(&self.z2).map(|&z| z > 0.0)
    }
}

impl Projector {
    /// Fresh projector: uniform fan-in weights, zero biases. Bit-identical for
    /// identical `(dims, seed)`.
    pub fn init(dims: ProjectorDims, seed: u64) -> Result<Self> {
        Self::init_indexed(dims, seed, 0)
    }

    /// Like [`Projector::init`], drawing from substream `index` of `seed`.
    pub fn init_indexed(dims: ProjectorDims, seed: u64, index: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = substream(seed, Purpose::ProjectorInit, index);
        Ok(Self {
            l1: Linear::uniform(dims.input, dims.hidden, &mut rng),
            l2: Linear::uniform(dims.hidden, dims.hidden, &mut rng),
            l3: Linear::uniform(dims.hidden, dims.output, &mut rng),
        })
    }

    pub fn zeros(dims: ProjectorDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            l1: Linear::zeros(dims.input, dims.hidden),
            l2: Linear::zeros(dims.hidden, dims.hidden),
            l3: Linear::zeros(dims.hidden, dims.output),
        })
    }

    pub fn from_layers(l1: Linear, l2: Linear, l3: Linear) -> Result<Self> {
        let p = Self { l1, l2, l3 };
        p.validate()?;
        Ok(p)
    }

    pub fn dims(&self) -> ProjectorDims {
        ProjectorDims::new(self.l1.in_dim, self.l1.out_dim, self.l3.out_dim)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.l1.validate()?;
        self.l2.validate()?;
        self.l3.validate()?;
        if self.l2.in_dim != self.l1.out_dim || self.l2.out_dim != self.l1.out_dim || self.l3.in_dim != self.l2.out_dim
        {
            return Err(Error::arg("projector layer dimensions do not chain"));
        }
        Ok(())
    }

    pub fn forward(&self, f: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let dims = self.dims();
        if f.len() != dims.input {
            return Err(Error::arg(format!(
                "feature has dimension {}, projector expects {}",
                f.len(),
                dims.input
            )));
        }
        let mut z1 = vec![0.0; dims.hidden];
        self.l1.apply(f, &mut z1);
        let h1 = relu(&z1);
        let mut z2 = vec![0.0; dims.hidden];
        self.l2.apply(&h1, &mut z2);
        let h2 = relu(&z2);
        let mut v = vec![0.0; dims.output];
        self.l3.apply(&h2, &mut v);
        let cache = ForwardCache {
            dims,
            input: f.to_vec(),
            z1,
            h1,
            z2,
            h2,
        };
        Ok((v, cache))
    }

    /// Gradients of `v·dv` w.r.t. every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache, dv: &[f64]) -> Result<(ProjectorGrads, Vec<f64>)> {
        let mut grads = Projector::zeros(self.dims())?;
        let df = self.backward_into(cache, dv, &mut grads)?;
        Ok((grads, df))
    }

    /// Like [`Projector::backward`] but adds into an existing accumulator.
    pub fn backward_into(&self, cache: &ForwardCache, dv: &[f64], grads: &mut ProjectorGrads) -> Result<Vec<f64>> {
        let dims = self.dims();
        if cache.dims != dims {
            return Err(Error::state(format!(
                "forward cache was produced by a {:?} projector, not {:?}",
                cache.dims, dims
            )));
        }
        if grads.dims() != dims {
            return Err(Error::arg("gradient accumulator has the wrong shape"));
        }
        if dv.len() != dims.output {
            return Err(Error::arg(format!(
                "output gradient has dimension {}, expected {}",
                dv.len(),
                dims.output
            )));
        }
        Linear::accumulate_grad(&cache.h2, dv, &mut grads.l3);
        let mut dz2 = self.l3.input_grad(dv);
        mask_relu(&cache.z2, &mut dz2);
        Linear::accumulate_grad(&cache.h1, &dz2, &mut grads.l2);
        let mut dz1 = self.l2.input_grad(&dz2);
        mask_relu(&cache.z1, &mut dz1);
        Linear::accumulate_grad(&cache.input, &dz1, &mut grads.l1);
        Ok(self.l1.input_grad(&dz1))
    }

    /// The six parameter tensors in order `W1, b1, W2, b2, W3, b3`.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.l1.weight,
            &self.l1.bias,
            &self.l2.weight,
            &self.l2.bias,
            &self.l3.weight,
            &self.l3.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.l1.weight,
            &mut self.l1.bias,
            &mut self.l2.weight,
            &mut self.l2.bias,
            &mut self.l3.weight,
            &mut self.l3.bias,
        ]
    }

    pub const TENSOR_NAMES: [&'static str; 6] = ["W1", "b1", "W2", "b2", "W3", "b3"];

    /// `self += scale * other`, elementwise over every parameter.
    pub fn add_scaled(&mut self, other: &Projector, scale: f64) {
        debug_assert_eq!(self.dims(), other.dims());
        self.l1.add_scaled(&other.l1, scale);
        self.l2.add_scaled(&other.l2, scale);
        self.l3.add_scaled(&other.l3, scale);
    }

    pub fn scaled(&self, scale: f64) -> Projector {
        Projector {
            l1: self.l1.scaled(scale),
            l2: self.l2.scaled(scale),
            l3: self.l3.scaled(scale),
        }
    }

    pub fn scale_in_place(&mut self, scale: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= scale);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

fn mask_relu(z: &[f64], dz: &mut [f64]) {
    for (g, &zi) in dz.iter_mut().zip(z) {
        if zi <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Cache for the backward pass of [`l2_normalize`].
#[derive(Debug, Clone)]
pub struct L2Cache {
    norm: f64,
    unit: Vec<f64>,
}

/// `v / ‖v‖₂`. Fails instead of clamping when `‖v‖ <= 1e-12`.
pub fn l2_normalize(v: &[f64]) -> Result<(Vec<f64>, L2Cache)> {
    let norm = dot(v, v).sqrt();
    if !(norm > NORM_EPS) {
        return Err(Error::DegenerateVector { norm, eps: NORM_EPS });
    }
    let unit: Vec<f64> = v.iter().map(|x| x / norm).collect();
    Ok((unit.clone(), L2Cache { norm, unit }))
}

/// `(I/‖v‖ − v vᵀ/‖v‖³) · d_unit`.
pub fn l2_normalize_backward(cache: &L2Cache, d_unit: &[f64]) -> Vec<f64> {
    let proj = dot(&cache.unit, d_unit);
    cache
        .unit
        .iter()
        .zip(d_unit)
        .map(|(u, g)| (g - u * proj) / cache.norm)
        .collect()
}

/// `-log softmax(logits)[y]` and its gradient `softmax(logits) - onehot(y)`.
pub fn softmax_cross_entropy(logits: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    if y >= logits.len() {
        return Err(Error::arg(format!(
            "label {y} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[y] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[y] -= 1.0;
    Ok((loss.max(0.0), grad))
}

/// `η_min + ½(η_max − η_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::arg("cosine schedule needs total >= 1"));
    }
    if step > total {
        return Err(Error::arg(format!("step {step} beyond schedule length {total}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

/// Heavy-ball momentum SGD with a cosine-annealed learning rate.
///
/// Velocity buffers are created (zeroed) on the first step and must keep the
/// same shapes afterwards. A fresh state is built for every session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub momentum: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
    pub step: usize,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(momentum: f64, lr_max: f64, lr_min: f64, total_steps: usize) -> Self {
        Self {
            momentum,
            lr_max,
            lr_min,
            total_steps,
            step: 0,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Learning rate for the next step.
    pub fn current_lr(&self) -> Result<f64> {
        cosine_lr(self.step, self.total_steps, self.lr_max, self.lr_min)
    }

    /// One scheduled step; returns the learning rate used.
    pub fn scheduled_step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<f64> {
        let lr = self.current_lr()?;
        sgd_momentum_step(params, grads, self, lr)?;
        self.step += 1;
        Ok(lr)
    }
}

/// `velocity ← μ·velocity + grad; param ← param − lr·velocity`.
pub fn sgd_momentum_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::arg(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::arg(format!(
                "tensor {i}: {} parameters but {} gradients",
                p.len(),
                g.len()
            )));
        }
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
    } else if state.velocity.len() != params.len()
        || state
            .velocity
            .iter()
            .zip(params.iter())
            .any(|(v, p)| v.len() != p.len())
    {
        return Err(Error::arg(
            "parameter shapes changed since the velocity buffers were created",
        ));
    }
    let mu = state.momentum;
    for (i, ((p, g), v)) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()).enumerate() {
        for ((pj, &gj), vj) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vj = mu * *vj + gj;
            *pj -= lr * *vj;
        }
        if !p.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("parameter tensor {i}")));
        }
    }
    Ok(())
}

/// Linear classifier over normalized embeddings; one row per seen class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    linear: Linear,
}

impl Classifier {
    /// Same init scheme as a projector's output layer.
    pub fn init(classes: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::init_rows(classes, dim, seed, 0)
    }

    fn init_rows(classes: usize, dim: usize, seed: u64, index: u64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::arg("classifier needs at least one class and one input"));
        }
        let mut rng = substream(seed, Purpose::ClassifierInit, index);
        Ok(Self {
            linear: Linear::uniform(dim, classes, &mut rng),
        })
    }

    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            linear: Linear::zeros(dim, classes),
        }
    }

    pub fn from_linear(linear: Linear) -> Result<Self> {
        linear.validate()?;
        Ok(Self { linear })
    }

    pub fn num_classes(&self) -> usize {
        self.linear.out_dim
    }

    pub fn input_dim(&self) -> usize {
        self.linear.in_dim
    }

    pub fn linear(&self) -> &Linear {
        &self.linear
    }

    pub fn linear_mut(&mut self) -> &mut Linear {
        &mut self.linear
    }

    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.linear.in_dim {
            return Err(Error::arg(format!(
                "embedding has dimension {}, classifier expects {}",
                embedding.len(),
                self.linear.in_dim
            )));
        }
        let mut out = vec![0.0; self.linear.out_dim];
        self.linear.apply(embedding, &mut out);
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the embedding gradient.
    pub fn backward_into(&self, embedding: &[f64], dlogits: &[f64], grads: &mut Linear) -> Vec<f64> {
        Linear::accumulate_grad(embedding, dlogits, grads);
        self.linear.input_grad(dlogits)
    }

    /// Appends `new_classes` rows; existing rows and biases are untouched.
    pub fn expand(&self, new_classes: usize, seed: u64) -> Result<Self> {
        if new_classes == 0 {
            return Err(Error::arg("classifier expansion needs at least one new class"));
        }
        let mut rng = substream(seed, Purpose::ClassifierInit, self.num_classes() as u64);
        let fresh = Linear::uniform(self.linear.in_dim, new_classes, &mut rng);
        let mut linear = self.linear.clone();
        linear.append_rows(fresh);
        Ok(Self { linear })
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [&self.linear.weight, &self.linear.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.linear.weight, &mut self.linear.bias]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}
