//! The score-field contract: a map θ ↦ ∇_θ log p(θ) for some (possibly
//! unnormalized) density.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, ParticleSet, ScoreMatrix};
use crate::par;
use crate::rng::SimRng;

pub trait ScoreField: Sync {
    /// Dimension of θ.
    fn dim(&self) -> usize;

    /// Writes ∇ log p(θ) into `out`, which has length [`ScoreField::dim`].
    fn score_into(&self, theta: &[f64], out: &mut [f64]);

    /// Called once before every SVGD step. Stochastic fields (minibatched
    /// likelihoods) redraw their batch here.
    fn begin_step(&mut self, _rng: &mut SimRng) {}

    fn score(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(theta, &mut out);
        out
    }
}

/// Evaluates `field` at every particle, one row per particle. Fails if any
/// entry is nonfinite.
pub fn score_matrix(field: &dyn ScoreField, particles: &ParticleSet) -> Result<ScoreMatrix> {
    if field.dim() != particles.cols() {
        return Err(Error::usage(format!(
            "score field has dimension {}, particles have {}",
            field.dim(),
            particles.cols()
        )));
    }
    let rows = par::map_indices(particles.rows(), |n| field.score(particles.row(n)));
    let m = Matrix::from_rows(&rows)?;
    if let Some(pos) = m.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "score evaluation",
            format!("nonfinite score at particle {}", pos / m.cols().max(1)),
        ));
    }
    Ok(m)
}

/// A score field backed by a closure.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnScore { dim, f }
    }
}

impl<F> ScoreField for FnScore<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_into(&self, theta: &[f64], out: &mut [f64]) {
        (self.f)(theta, out)
    }
}

/// The identically-zero field.
pub struct ZeroScore(pub usize);

impl ScoreField for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn score_into(&self, _theta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}
