//! Probabilistic models: prior and likelihood scores, log-densities, prior
//! sampling and ensemble prediction.
//!
//! Parameter layouts:
//! - Gaussian toy: θ is the mean itself.
//! - Logistic regression: θ = [w (f entries), log ξ].
//! - Neural network: θ = [W1 (hidden × input, row-major), b1 (hidden),
//!   W2 (output × hidden, row-major), b2 (output), log γ].
//!
//! Precisions are carried as logs, so the prior densities include the
//! change-of-variables term `+ log ξ` (resp. `+ log γ`).
//! Likelihood gradients are hand-derived; there is no autodiff.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, ParticleSet};
use crate::rng::SimRng;

/// Gamma(shape, rate) prior on a precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        GammaPrior {
            shape: 1.0,
            rate: 0.01,
        }
    }
}

/// Fixed weight-prior precision of the neural network, λ = e.
pub const BNN_WEIGHT_PRECISION: f64 = std::f64::consts::E;

pub const BNN_DEFAULT_HIDDEN: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelVariant {
    /// Prior N(mean, diag(variance)); each likelihood observation x
    /// contributes N(x | θ, I).
    GaussianToy { mean: Vec<f64>, variance: Vec<f64> },
    /// Logistic regression with labels ±1 and p(y|x,w) = σ(y wᵀx).
    Blr {
        feature_dim: usize,
        prior: GammaPrior,
    },
    /// One-hidden-layer ReLU network regressing one-hot targets with
    /// Gaussian noise of precision γ.
    Bnn {
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        weight_precision: f64,
        noise_prior: GammaPrior,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    /// Temperature α; likelihood terms are scaled by 1/α.
    pub temperature: f64,
}

/// Rows of features with one label per row.
///
/// Labels are ±1 for logistic regression and class indices for the network.
/// The Gaussian toy reads only the features (its pseudo-observations).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub features: Matrix,
    pub labels: Vec<f64>,
}

impl LabeledBatch {
    pub fn new(features: Matrix, labels: Vec<f64>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::usage(format!(
                "batch has {} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.rows() == 0 {
            return Err(Error::usage("batch must contain at least one example"));
        }
        Ok(LabeledBatch { features, labels })
    }

    /// Pseudo-observations for the Gaussian toy: one row per observation.
    pub fn observations(rows: &[Vec<f64>]) -> Result<Self> {
        let features = Matrix::from_rows(rows)?;
        let n = features.rows();
        Self::new(features, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> LabeledBatch {
        LabeledBatch {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Row-wise concatenation.
    pub fn concat(&self, other: &LabeledBatch) -> Result<LabeledBatch> {
        if self.features.cols() != other.features.cols() {
            return Err(Error::usage(
                "cannot concatenate batches of different widths",
            ));
        }
        let mut data = self.features.as_slice().to_vec();
        data.extend_from_slice(other.features.as_slice());
        let features = Matrix::from_vec(self.len() + other.len(), self.features.cols(), data)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledBatch::new(features, labels)
    }
}

#[derive(Debug, Clone, Copy)]
struct BnnLayout {
    input: usize,
    hidden: usize,
    output: usize,
}

impl BnnLayout {
    fn w1(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.input
    }
    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.input;
        s..s + self.hidden
    }
    fn w2(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.output * self.hidden
    }
    fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.output
    }
    fn log_gamma(&self) -> usize {
        self.b2().end
    }
    fn dim(&self) -> usize {
        self.log_gamma() + 1
    }

    /// Returns (pre-activations, hidden activations, outputs).
    fn forward(&self, theta: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let w1 = &theta[self.w1()];
        let b1 = &theta[self.b1()];
        let w2 = &theta[self.w2()];
        let b2 = &theta[self.b2()];
        let z: Vec<f64> = (0..self.hidden)
            .map(|j| dot(&w1[j * self.input..(j + 1) * self.input], x) + b1[j])
            .collect();
        let a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        let out: Vec<f64> = (0..self.output)
            .map(|c| dot(&w2[c * self.hidden..(c + 1) * self.hidden], &a) + b2[c])
            .collect();
        (z, a, out)
    }
}

/// log σ(z), computed without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_finite(theta: &[f64]) -> Result<()> {
    if theta.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::usage("parameter vector has nonfinite entries"))
    }
}

impl ModelSpec {
    pub fn gaussian_toy(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let m = ModelSpec {
            variant: ModelVariant::GaussianToy { mean, variance },
            temperature: 1.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn blr(feature_dim: usize) -> Self {
        ModelSpec {
            variant: ModelVariant::Blr {
                feature_dim,
                prior: GammaPrior::default(),
            },
            temperature: 1.0,
        }
    }

    pub fn bnn(input_dim: usize, hidden: usize, output_dim: usize) -> Self {
        ModelSpec {
            variant: ModelVariant::Bnn {
                input_dim,
                hidden,
                output_dim,
                weight_precision: BNN_WEIGHT_PRECISION,
                noise_prior: GammaPrior::default(),
            },
            temperature: 1.0,
        }
    }

    pub fn with_temperature(mut self, alpha: f64) -> Self {
        self.temperature = alpha;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.variant {
            ModelVariant::GaussianToy { .. } => "gaussian_toy",
            ModelVariant::Blr { .. } => "blr",
            ModelVariant::Bnn { .. } => "bnn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::usage("temperature must be positive"));
        }
        match &self.variant {
            ModelVariant::GaussianToy { mean, variance } => {
                if mean.is_empty() || mean.len() != variance.len() {
                    return Err(Error::usage(
                        "toy mean and variance must be nonempty and congruent",
                    ));
                }
                if variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::usage("toy variances must be strictly positive"));
                }
            }
            ModelVariant::Blr { feature_dim, prior } => {
                if *feature_dim == 0 || prior.shape <= 0.0 || prior.rate <= 0.0 {
                    return Err(Error::usage("invalid logistic regression spec"));
                }
            }
            ModelVariant::Bnn {
                input_dim,
                hidden,
                output_dim,
                weight_precision,
                noise_prior,
            } => {
                if *input_dim == 0 || *hidden == 0 || *output_dim == 0 {
                    return Err(Error::usage("network layer widths must be positive"));
                }
                if *weight_precision <= 0.0 || noise_prior.shape <= 0.0 || noise_prior.rate <= 0.0 {
                    return Err(Error::usage("invalid network prior"));
                }
            }
        }
        Ok(())
    }

    fn layout(&self) -> Option<BnnLayout> {
        match self.variant {
            ModelVariant::Bnn {
                input_dim,
                hidden,
                output_dim,
                ..
            } => Some(BnnLayout {
                input: input_dim,
                hidden,
                output: output_dim,
            }),
            _ => None,
        }
    }

    /// Dimension of θ.
    pub fn dim(&self) -> usize {
        match &self.variant {
            ModelVariant::GaussianToy { mean, .. } => mean.len(),
            ModelVariant::Blr { feature_dim, .. } => feature_dim + 1,
            ModelVariant::Bnn { .. } => self.layout().map(|l| l.dim()).unwrap_or(0),
        }
    }

    /// Number of feature columns a batch must have.
    pub fn feature_dim(&self) -> usize {
        match &self.variant {
            ModelVariant::GaussianToy { mean, .. } => mean.len(),
            ModelVariant::Blr { feature_dim, .. } => *feature_dim,
            ModelVariant::Bnn { input_dim, .. } => *input_dim,
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::usage(format!(
                "parameter vector has dimension {}, model expects {}",
                theta.len(),
                self.dim()
            )));
        }
        check_finite(theta)
    }

    fn check_batch(&self, batch: &LabeledBatch) -> Result<()> {
        if batch.features.cols() != self.feature_dim() {
            return Err(Error::usage(format!(
                "batch has {} features, model expects {}",
                batch.features.cols(),
                self.feature_dim()
            )));
        }
        if batch.is_empty() {
            return Err(Error::usage("batch is empty"));
        }
        if let ModelVariant::Bnn { output_dim, .. } = self.variant {
            if batch
                .labels
                .iter()
                .any(|&y| y < 0.0 || y.fract() != 0.0 || y as usize >= output_dim)
            {
                return Err(Error::usage("network labels must be class indices"));
            }
        }
        Ok(())
    }

    /// log p₀(θ), up to an additive constant independent of θ.
    pub fn prior_log_density(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match &self.variant {
            ModelVariant::GaussianToy { mean, variance } => theta
                .iter()
                .zip(mean)
                .zip(variance)
                .map(|((t, m), v)| -0.5 * (t - m) * (t - m) / v)
                .sum(),
            ModelVariant::Blr { feature_dim, prior } => {
                let a = theta[*feature_dim];
                let w = &theta[..*feature_dim];
                let f = *feature_dim as f64;
                (0.5 * f + prior.shape) * a - a.exp() * (0.5 * dot(w, w) + prior.rate)
            }
            ModelVariant::Bnn {
                weight_precision,
                noise_prior,
                ..
            } => {
                let l = self.layout().expect("network layout");
                let a = theta[l.log_gamma()];
                let w = &theta[..l.log_gamma()];
                -0.5 * weight_precision * dot(w, w) + noise_prior.shape * a
                    - noise_prior.rate * a.exp()
            }
        })
    }

    /// ∇_θ log p₀(θ).
    pub fn prior_score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut out = vec![0.0; theta.len()];
        self.prior_score_into(theta, &mut out);
        Ok(out)
    }

    pub(crate) fn prior_score_into(&self, theta: &[f64], out: &mut [f64]) {
        match &self.variant {
            ModelVariant::GaussianToy { mean, variance } => {
                for (((o, t), m), v) in out.iter_mut().zip(theta).zip(mean).zip(variance) {
                    *o = (m - t) / v;
                }
            }
            ModelVariant::Blr { feature_dim, prior } => {
                let f = *feature_dim;
                let a = theta[f];
                let xi = a.exp();
                let w = &theta[..f];
                for (o, wi) in out[..f].iter_mut().zip(w) {
                    *o = -xi * wi;
                }
                out[f] = 0.5 * f as f64 + prior.shape - xi * (0.5 * dot(w, w) + prior.rate);
            }
            ModelVariant::Bnn {
                weight_precision,
                noise_prior,
                ..
            } => {
                let l = self.layout().expect("network layout");
                let g = l.log_gamma();
                for (o, w) in out[..g].iter_mut().zip(&theta[..g]) {
                    *o = -weight_precision * w;
                }
                out[g] = noise_prior.shape - noise_prior.rate * theta[g].exp();
            }
        }
    }

    /// `scale · α⁻¹ · Σ_i log p(y_i | x_i, θ)` with all normalizing constants.
    pub fn log_likelihood(&self, theta: &[f64], batch: &LabeledBatch, scale: f64) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_batch(batch)?;
        let total: f64 = (0..batch.len())
            .map(|i| self.example_log_likelihood(theta, batch.features.row(i), batch.labels[i]))
            .sum();
        Ok(scale * total / self.temperature)
    }

    /// log p(y | x, θ) for one example, untempered.
    pub(crate) fn example_log_likelihood(&self, theta: &[f64], x: &[f64], y: f64) -> f64 {
        match &self.variant {
            ModelVariant::GaussianToy { .. } => {
                let d = x.len() as f64;
                -0.5 * crate::linalg::sq_dist(x, theta) - 0.5 * d * (2.0 * PI).ln()
            }
            ModelVariant::Blr { feature_dim, .. } => {
                log_sigmoid(y * dot(&theta[..*feature_dim], x))
            }
            ModelVariant::Bnn { .. } => {
                let l = self.layout().expect("network layout");
                let a = theta[l.log_gamma()];
                let (_, _, out) = l.forward(theta, x);
                let c = y as usize;
                let resid: f64 = out
                    .iter()
                    .enumerate()
                    .map(|(j, o)| {
                        let t = if j == c { 1.0 } else { 0.0 };
                        (t - o) * (t - o)
                    })
                    .sum();
                let k = l.output as f64;
                0.5 * k * (a - (2.0 * PI).ln()) - 0.5 * a.exp() * resid
            }
        }
    }

    /// `scale · α⁻¹ · Σ_i ∇_θ log p(y_i | x_i, θ)`.
    pub fn likelihood_score(
        &self,
        theta: &[f64],
        batch: &LabeledBatch,
        scale: f64,
    ) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_batch(batch)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::usage("likelihood scale must be positive"));
        }
        let mut out = vec![0.0; theta.len()];
        self.likelihood_score_into(theta, batch, None, scale, &mut out);
        Ok(out)
    }

    /// Accumulates the tempered, scaled likelihood score into `out`
    /// (which is overwritten). `rows` restricts the sum to a minibatch.
    pub(crate) fn likelihood_score_into(
        &self,
        theta: &[f64],
        batch: &LabeledBatch,
        rows: Option<&[usize]>,
        scale: f64,
        out: &mut [f64],
    ) {
        out.fill(0.0);
        let add_example = |i: usize, out: &mut [f64]| {
            let x = batch.features.row(i);
            let y = batch.labels[i];
            match &self.variant {
                ModelVariant::GaussianToy { .. } => {
                    for ((o, xi), t) in out.iter_mut().zip(x).zip(theta) {
                        *o += xi - t;
                    }
                }
                ModelVariant::Blr { feature_dim, .. } => {
                    let f = *feature_dim;
                    let z = y * dot(&theta[..f], x);
                    let c = y * sigmoid(-z);
                    for (o, xi) in out[..f].iter_mut().zip(x) {
                        *o += c * xi;
                    }
                }
                ModelVariant::Bnn { .. } => {
                    let l = self.layout().expect("network layout");
                    bnn_backprop(&l, theta, x, y as usize, out);
                }
            }
        };
        match rows {
            Some(rows) => rows.iter().for_each(|&i| add_example(i, out)),
            None => (0..batch.len()).for_each(|i| add_example(i, out)),
        }
        let c = scale / self.temperature;
        out.iter_mut().for_each(|v| *v *= c);
    }

    /// Draws `n` i.i.d. particles from the prior.
    pub fn sample_prior(&self, n: usize, rng: &mut SimRng) -> Result<ParticleSet> {
        self.validate()?;
        let d = self.dim();
        let mut p = Matrix::zeros(n, d);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        for i in 0..n {
            let row = p.row_mut(i);
            match &self.variant {
                ModelVariant::GaussianToy { mean, variance } => {
                    for ((r, m), v) in row.iter_mut().zip(mean).zip(variance) {
                        *r = m + v.sqrt() * std_normal.sample(rng);
                    }
                }
                ModelVariant::Blr { feature_dim, prior } => {
                    let xi = sample_gamma(prior, rng);
                    let sd = 1.0 / xi.sqrt();
                    for r in row[..*feature_dim].iter_mut() {
                        *r = sd * std_normal.sample(rng);
                    }
                    row[*feature_dim] = xi.ln();
                }
                ModelVariant::Bnn {
                    weight_precision,
                    noise_prior,
                    ..
                } => {
                    let g = d - 1;
                    let sd = 1.0 / weight_precision.sqrt();
                    for r in row[..g].iter_mut() {
                        *r = sd * std_normal.sample(rng);
                    }
                    row[g] = sample_gamma(noise_prior, rng).ln();
                }
            }
        }
        Ok(p)
    }

    /// Bayesian model average over particles.
    ///
    /// Logistic regression returns an n×1 matrix of P(y = +1 | x). The
    /// network returns the n×C mean output vectors.
    pub fn predict_ensemble(&self, particles: &ParticleSet, features: &Matrix) -> Result<Matrix> {
        if particles.cols() != self.dim() {
            return Err(Error::usage("particle dimension does not match the model"));
        }
        if features.cols() != self.feature_dim() {
            return Err(Error::usage("feature dimension does not match the model"));
        }
        if particles.rows() == 0 {
            return Err(Error::usage("ensemble needs at least one particle"));
        }
        let np = particles.rows() as f64;
        match &self.variant {
            ModelVariant::GaussianToy { .. } => Err(Error::UnsupportedModel("gaussian_toy")),
            ModelVariant::Blr { feature_dim, .. } => {
                let probs: Vec<f64> = features
                    .iter_rows()
                    .map(|x| {
                        particles
                            .iter_rows()
                            .map(|t| sigmoid(dot(&t[..*feature_dim], x)))
                            .sum::<f64>()
                            / np
                    })
                    .collect();
                Ok(Matrix::column(&probs))
            }
            ModelVariant::Bnn { .. } => {
                let l = self.layout().expect("network layout");
                let mut out = Matrix::zeros(features.rows(), l.output);
                for (i, x) in features.iter_rows().enumerate() {
                    let row = out.row_mut(i);
                    for t in particles.iter_rows() {
                        let (_, _, f) = l.forward(t, x);
                        for (r, v) in row.iter_mut().zip(&f) {
                            *r += v;
                        }
                    }
                    row.iter_mut().for_each(|v| *v /= np);
                }
                Ok(out)
            }
        }
    }

    /// Turns ensemble scores into predicted labels (±1 or class index).
    pub fn decide(&self, scores: &Matrix) -> Vec<f64> {
        match self.variant {
            ModelVariant::Blr { .. } => scores
                .iter_rows()
                .map(|r| if r[0] >= 0.5 { 1.0 } else { -1.0 })
                .collect(),
            _ => scores
                .iter_rows()
                .map(|r| {
                    let mut best = 0;
                    for (j, v) in r.iter().enumerate() {
                        if *v > r[best] {
                            best = j;
                        }
                    }
                    best as f64
                })
                .collect(),
        }
    }
}

fn sample_gamma(prior: &GammaPrior, rng: &mut SimRng) -> f64 {
    let g = Gamma::new(prior.shape, 1.0 / prior.rate).expect("valid gamma prior");
    // guard against an exact zero draw, whose log would be -inf
    g.sample(rng).max(f64::MIN_POSITIVE)
}

/// Adds ∇_θ log N(onehot(c) | f(x; W), γ⁻¹ I) into `out`.
fn bnn_backprop(l: &BnnLayout, theta: &[f64], x: &[f64], c: usize, out: &mut [f64]) {
    let (z, a, f) = l.forward(theta, x);
    let log_gamma = theta[l.log_gamma()];
    let gamma = log_gamma.exp();
    let resid: Vec<f64> = f
        .iter()
        .enumerate()
        .map(|(j, o)| if j == c { 1.0 - o } else { -o })
        .collect();
    // output layer: δ = γ (y − f)
    let delta: Vec<f64> = resid.iter().map(|r| gamma * r).collect();
    let w2 = &theta[l.w2()];
    let mut delta_hidden = vec![0.0; l.hidden];
    {
        let gw2 = &mut out[l.w2()];
        for (k, dk) in delta.iter().enumerate() {
            let row = &mut gw2[k * l.hidden..(k + 1) * l.hidden];
            for (g, aj) in row.iter_mut().zip(&a) {
                *g += dk * aj;
            }
        }
    }
    for (g, dk) in out[l.b2()].iter_mut().zip(&delta) {
        *g += dk;
    }
    for (j, dh) in delta_hidden.iter_mut().enumerate() {
        if z[j] > 0.0 {
            *dh = (0..l.output).map(|k| w2[k * l.hidden + j] * delta[k]).sum();
        }
    }
    {
        let gw1 = &mut out[l.w1()];
        for (j, dh) in delta_hidden.iter().enumerate() {
            if *dh == 0.0 {
                continue;
            }
            let row = &mut gw1[j * l.input..(j + 1) * l.input];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += dh * xi;
            }
        }
    }
    for (g, dh) in out[l.b1()].iter_mut().zip(&delta_hidden) {
        *g += dh;
    }
    let sq: f64 = resid.iter().map(|r| r * r).sum();
    out[l.log_gamma()] += 0.5 * l.output as f64 - 0.5 * gamma * sq;
}

/// Draws `size` row indices uniformly without replacement.
pub fn sample_minibatch(n: usize, size: usize, rng: &mut SimRng) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Uniform draw in `[lo, hi)`.
pub(crate) fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
