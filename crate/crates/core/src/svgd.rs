//! SVGD particle updates with AdaGrad step sizes, and Gaussian kernel
//! density estimates over particle sets.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::{adaptive_bandwidth, log_gaussian_kde_kernel, rbf};
use crate::linalg::{sq_dist, Matrix, ParticleSet, ScoreMatrix};
use crate::par;
use crate::rng::SimRng;
use crate::score::{score_matrix, ScoreField};

pub const DEFAULT_DECAY: f64 = 0.9;
pub const DEFAULT_FUDGE: f64 = 1e-6;

/// RMS-style AdaGrad state: a decaying average of squared directions per
/// particle coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub master_step: f64,
    pub decay: f64,
    pub fudge: f64,
    accumulator: Option<Matrix>,
}

impl OptimizerState {
    pub fn new(master_step: f64) -> Self {
        OptimizerState {
            master_step,
            decay: DEFAULT_DECAY,
            fudge: DEFAULT_FUDGE,
            accumulator: None,
        }
    }

    pub fn with_decay(mut self, decay: f64) -> Self {
        self.decay = decay;
        self
    }

    pub fn accumulator(&self) -> Option<&Matrix> {
        self.accumulator.as_ref()
    }

    /// Forgets the accumulated history.
    pub fn reset(&mut self) {
        self.accumulator = None;
    }

    fn validate(&self) -> Result<()> {
        if !(self.master_step > 0.0 && self.master_step.is_finite()) {
            return Err(Error::usage("master step must be positive"));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::usage("AdaGrad decay must lie in [0, 1)"));
        }
        if !(self.fudge > 0.0) {
            return Err(Error::usage("AdaGrad fudge must be positive"));
        }
        Ok(())
    }
}

/// SVGD direction from precomputed scores:
/// row n = (1/N) Σ_j [k(θ_j, θ_n) s_j + ∇_{θ_j} k(θ_j, θ_n)].
pub fn svgd_direction_from_scores(
    particles: &ParticleSet,
    scores: &ScoreMatrix,
    h: f64,
) -> Result<Matrix> {
    if !particles.same_shape(scores) {
        return Err(Error::usage(
            "particles and scores must have the same shape",
        ));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::usage(format!("bandwidth must be positive, got {h}")));
    }
    let n = particles.rows();
    let d = particles.cols();
    let inv_n = 1.0 / n as f64;
    let c = 2.0 / h;
    let rows = par::map_indices(n, |i| {
        let ti = particles.row(i);
        let mut acc = vec![0.0; d];
        for j in 0..n {
            let tj = particles.row(j);
            let k = rbf(sq_dist(tj, ti), h);
            let sj = scores.row(j);
            for ((a, s), (xj, xi)) in acc.iter_mut().zip(sj).zip(tj.iter().zip(ti)) {
                *a += k * s - c * (xj - xi) * k;
            }
        }
        acc.iter_mut().for_each(|a| *a *= inv_n);
        acc
    });
    let out = Matrix::from_rows(&rows)?;
    if !out.is_finite() {
        return Err(Error::numerical("SVGD direction", "nonfinite direction"));
    }
    Ok(out)
}

/// SVGD direction for a target score field.
pub fn svgd_direction(particles: &ParticleSet, target: &dyn ScoreField, h: f64) -> Result<Matrix> {
    let scores = score_matrix(target, particles)?;
    svgd_direction_from_scores(particles, &scores, h)
}

/// One AdaGrad step in place. The first call seeds the accumulator with the
/// squared direction; later calls blend with weight `decay`.
pub fn adagrad_step(
    particles: &mut ParticleSet,
    direction: &Matrix,
    opt: &mut OptimizerState,
) -> Result<()> {
    opt.validate()?;
    if !particles.same_shape(direction) {
        return Err(Error::usage("direction shape must match particles"));
    }
    match &mut opt.accumulator {
        Some(acc) if acc.same_shape(direction) => {
            let rho = opt.decay;
            for (a, g) in acc.as_mut_slice().iter_mut().zip(direction.as_slice()) {
                *a = rho * *a + (1.0 - rho) * g * g;
            }
        }
        Some(_) => return Err(Error::usage("optimizer accumulator shape changed")),
        None => {
            let mut acc = direction.clone();
            acc.as_mut_slice().iter_mut().for_each(|g| *g *= *g);
            opt.accumulator = Some(acc);
        }
    }
    let acc = opt.accumulator.as_ref().expect("accumulator set above");
    let eps = opt.master_step;
    for ((p, g), a) in particles
        .as_mut_slice()
        .iter_mut()
        .zip(direction.as_slice())
        .zip(acc.as_slice())
    {
        *p += eps * g / (opt.fudge + a.sqrt());
    }
    Ok(())
}

/// Runs `steps` SVGD iterations, recomputing the median-heuristic bandwidth
/// from the current particles before every step.
pub fn run_svgd(
    particles: &ParticleSet,
    target: &mut dyn ScoreField,
    steps: usize,
    opt: &mut OptimizerState,
    rng: &mut SimRng,
) -> Result<ParticleSet> {
    let mut current = particles.clone();
    for _ in 0..steps {
        target.begin_step(rng);
        let h = adaptive_bandwidth(&current);
        let dir = svgd_direction(&current, &*target, h)?;
        adagrad_step(&mut current, &dir, opt)?;
    }
    Ok(current)
}

fn check_kde(x: &[f64], particles: &ParticleSet, b: f64) -> Result<()> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::usage(format!(
            "KDE bandwidth must be positive, got {b}"
        )));
    }
    if particles.rows() == 0 {
        return Err(Error::usage("KDE needs at least one particle"));
    }
    if x.len() != particles.cols() {
        return Err(Error::usage(
            "query point dimension does not match particles",
        ));
    }
    Ok(())
}

/// log[(1/N) Σ_n N(x | θ_n, b² I)], evaluated with log-sum-exp.
pub fn kde_log_density(x: &[f64], particles: &ParticleSet, b: f64) -> Result<f64> {
    check_kde(x, particles, b)?;
    Ok(kde_log_density_unchecked(x, particles, b))
}

pub(crate) fn kde_log_density_unchecked(x: &[f64], particles: &ParticleSet, b: f64) -> f64 {
    let d = particles.cols();
    let logs: Vec<f64> = particles
        .iter_rows()
        .map(|t| log_gaussian_kde_kernel(sq_dist(x, t), b, d))
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logs.iter().map(|l| (l - m).exp()).sum();
    m + s.ln() - (particles.rows() as f64).ln()
}

/// ∇_x of [`kde_log_density`]: softmax-weighted mean of (θ_n − x)/b².
pub fn kde_score(x: &[f64], particles: &ParticleSet, b: f64) -> Result<Vec<f64>> {
    check_kde(x, particles, b)?;
    let mut out = vec![0.0; x.len()];
    kde_score_into(x, particles, b, 1.0, &mut out);
    Ok(out)
}

/// Adds `sign · ∇_x log KDE(x)` into `out`.
pub(crate) fn kde_score_into(
    x: &[f64],
    particles: &ParticleSet,
    b: f64,
    sign: f64,
    out: &mut [f64],
) {
    let inv = 1.0 / (2.0 * b * b);
    let logs: Vec<f64> = particles
        .iter_rows()
        .map(|t| -sq_dist(x, t) * inv)
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let c = sign / (total * b * b);
    for (w, t) in weights.iter().zip(particles.iter_rows()) {
        let cw = c * w;
        for ((o, ti), xi) in out.iter_mut().zip(t).zip(x) {
            *o += cw * (ti - xi);
        }
    }
}

/// Draws one point from the KDE mixture: a uniformly chosen particle plus
/// Gaussian noise of standard deviation `b`.
pub fn sample_kde(particles: &ParticleSet, b: f64, rng: &mut SimRng) -> Vec<f64> {
    let n = particles.rows();
    let normal = Normal::new(0.0, b).expect("positive bandwidth");
    let c = rng.random_range(0..n);
    particles
        .row(c)
        .iter()
        .map(|m| m + normal.sample(rng))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of KL(KDE(p) ‖ KDE(q)) from `n_samples` draws of
/// the KDE of `particles_p`.
pub fn kde_kl_mc(
    particles_p: &ParticleSet,
    particles_q: &ParticleSet,
    b: f64,
    n_samples: usize,
    rng: &mut SimRng,
) -> Result<MonteCarloEstimate> {
    if n_samples == 0 {
        return Err(Error::usage("n_samples must be at least 1"));
    }
    if particles_p.cols() != particles_q.cols() || particles_q.rows() == 0 {
        return Err(Error::usage(
            "KDE particle sets must be nonempty and congruent",
        ));
    }
    let mut vals = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = sample_kde(particles_p, b, rng);
        check_kde(&x, particles_p, b)?;
        vals.push(
            kde_log_density_unchecked(&x, particles_p, b)
                - kde_log_density_unchecked(&x, particles_q, b),
        );
    }
    let n = n_samples as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if n_samples > 1 {
        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}
