//! Kernelized Stein discrepancy and Hilbert inner products between SVGD
//! update functions, estimated with the V-statistic
//!
//! ```text
//! ⟨φ₁, φ₂⟩ ≈ (1/N²) Σ_{i,j} h(θ_i, θ_j)
//! h(θ_i, θ_j) = s₁(θ_i)ᵀ k s₂(θ_j) + s₁(θ_i)ᵀ ∇_{θ_j} k + ∇_{θ_i} kᵀ s₂(θ_j) + tr ∇_{θ_i}∇_{θ_j} k
//! ```
//!
//! with the RBF kernel. The diagonal `i = j` is included, which keeps the
//! discrepancy a nonnegative quadratic form.

use crate::error::{Error, Result};
use crate::kernels::{rbf, rbf_cross_trace};
use crate::linalg::{dot, sq_dist, Matrix, ParticleSet, ScoreMatrix};
use crate::par;

fn check_vectors(s_i: &[f64], s_j: &[f64], theta_i: &[f64], theta_j: &[f64], h: f64) -> Result<()> {
    let d = theta_i.len();
    if s_i.len() != d || s_j.len() != d || theta_j.len() != d {
        return Err(Error::usage("h_pair arguments must share one dimension"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::usage(format!("bandwidth must be positive, got {h}")));
    }
    if s_i
        .iter()
        .chain(s_j)
        .chain(theta_i)
        .chain(theta_j)
        .any(|v| !v.is_finite())
    {
        return Err(Error::usage("h_pair arguments must be finite"));
    }
    Ok(())
}

/// The Stein kernel `h_{p1,p2}(θ_i, θ_j)` for the RBF kernel of bandwidth `h`.
pub fn h_pair(s_i: &[f64], s_j: &[f64], theta_i: &[f64], theta_j: &[f64], h: f64) -> Result<f64> {
    check_vectors(s_i, s_j, theta_i, theta_j, h)?;
    Ok(h_pair_unchecked(s_i, s_j, theta_i, theta_j, h))
}

#[inline]
fn h_pair_unchecked(s_i: &[f64], s_j: &[f64], theta_i: &[f64], theta_j: &[f64], h: f64) -> f64 {
    let r2 = sq_dist(theta_i, theta_j);
    let k = rbf(r2, h);
    // ∇_{θ_j} k = (2/h)(θ_i − θ_j) k,  ∇_{θ_i} k = −(2/h)(θ_i − θ_j) k
    let mut si_diff = 0.0;
    let mut sj_diff = 0.0;
    for ((a, b), (ti, tj)) in s_i.iter().zip(s_j).zip(theta_i.iter().zip(theta_j)) {
        let diff = ti - tj;
        si_diff += a * diff;
        sj_diff += b * diff;
    }
    let c = 2.0 / h * k;
    k * dot(s_i, s_j) + c * si_diff - c * sj_diff + rbf_cross_trace(r2, k, h, theta_i.len())
}

fn check_shapes(
    particles: &ParticleSet,
    scores_1: &ScoreMatrix,
    scores_2: &ScoreMatrix,
    h: f64,
) -> Result<()> {
    if particles.rows() == 0 {
        return Err(Error::usage("particle set is empty"));
    }
    if !particles.same_shape(scores_1) || !particles.same_shape(scores_2) {
        return Err(Error::usage(format!(
            "particles are {}×{} but score matrices are {}×{} and {}×{}",
            particles.rows(),
            particles.cols(),
            scores_1.rows(),
            scores_1.cols(),
            scores_2.rows(),
            scores_2.cols()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::usage(format!("bandwidth must be positive, got {h}")));
    }
    Ok(())
}

/// V-statistic estimate of ⟨φ₁, φ₂⟩: rows of `scores_1` pair with the
/// first kernel argument, rows of `scores_2` with the second.
///
/// Row sums are computed independently (in parallel when enabled) and then
/// added in row order, so the result does not depend on the thread count.
pub fn hip_vstat(
    particles: &ParticleSet,
    scores_1: &ScoreMatrix,
    scores_2: &ScoreMatrix,
    h: f64,
) -> Result<f64> {
    check_shapes(particles, scores_1, scores_2, h)?;
    let n = particles.rows();
    let rows = par::map_indices(n, |i| {
        let ti = particles.row(i);
        let si = scores_1.row(i);
        let mut acc = 0.0;
        for j in 0..n {
            acc += h_pair_unchecked(si, scores_2.row(j), ti, particles.row(j), h);
        }
        acc
    });
    if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "Stein V-statistic",
            format!("nonfinite term in row {i}"),
        ));
    }
    let total = par::ordered_sum(&rows);
    Ok(total / (n * n) as f64)
}

/// Kernelized Stein discrepancy, `hip_vstat(p, S, S)`.
pub fn ksd_vstat(particles: &ParticleSet, scores: &ScoreMatrix, h: f64) -> Result<f64> {
    hip_vstat(particles, scores, scores, h)
}

/// Elementwise mean of congruent score matrices: the score of the geometric
/// mean density `(∏ p_m)^{1/K}`.
pub fn averaged_score(score_list: &[ScoreMatrix]) -> Result<ScoreMatrix> {
    let first = score_list
        .first()
        .ok_or_else(|| Error::usage("averaged_score needs at least one matrix"))?;
    if score_list.iter().any(|s| !s.same_shape(first)) {
        return Err(Error::usage("score matrices must share one shape"));
    }
    let k = score_list.len() as f64;
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for s in score_list {
        for (o, v) in out.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *o += v;
        }
    }
    out.as_mut_slice().iter_mut().for_each(|v| *v /= k);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::uniform;
    use crate::rng::{seeded, SimRng};
    use proptest::prelude::*;

    const E1: f64 = 0.367_879_441_171_442_33;

    #[test]
    fn h_pair_examples() {
        assert_eq!(h_pair(&[0.0], &[0.0], &[0.0], &[0.0], 1.0).unwrap(), 2.0);
        assert_eq!(
            h_pair(&[1.5], &[-4.0], &[0.0], &[0.0], 1.0).unwrap(),
            1.5 * -4.0 + 2.0
        );
        let v = h_pair(&[0.0], &[0.0], &[0.0], &[1.0], 1.0).unwrap();
        assert!((v + 2.0 * E1).abs() < 1e-15);
        assert!(h_pair(&[0.0, 1.0], &[0.0], &[0.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn vstat_examples() {
        let p = Matrix::column(&[0.0]);
        let v = hip_vstat(&p, &Matrix::column(&[1.0]), &Matrix::column(&[3.0]), 1.0).unwrap();
        assert_eq!(v, 5.0);
        let z = Matrix::column(&[0.0]);
        assert_eq!(hip_vstat(&p, &z, &z, 1.0).unwrap(), 2.0);
        assert_eq!(ksd_vstat(&p, &z, 1.0).unwrap(), 2.0);
        assert_eq!(ksd_vstat(&p, &Matrix::column(&[2.0]), 1.0).unwrap(), 6.0);
        assert!(hip_vstat(&p, &Matrix::column(&[1.0, 2.0]), &z, 1.0).is_err());
    }

    #[test]
    fn averaged_score_examples() {
        let a = Matrix::column(&[1.0]);
        assert_eq!(averaged_score(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(
            averaged_score(&[a, Matrix::column(&[3.0])]).unwrap(),
            Matrix::column(&[2.0])
        );
        assert!(averaged_score(&[]).is_err());
        assert!(averaged_score(&[Matrix::column(&[1.0]), Matrix::column(&[1.0, 2.0])]).is_err());

        let mut rng = seeded(4);
        let mats: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 4, 2, 3.0)).collect();
        let avg = averaged_score(&mats).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let brute = (mats[0].get(i, j) + mats[1].get(i, j) + mats[2].get(i, j)) / 3.0;
                assert!((avg.get(i, j) - brute).abs() < 1e-15);
            }
        }
    }

    fn random_matrix(rng: &mut SimRng, n: usize, d: usize, s: f64) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| uniform(rng, -s, s)).collect()).unwrap()
    }

    #[test]
    fn ksd_of_exact_gaussian_samples_is_small() {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = seeded(11);
        let mut draw = || {
            let xs: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
            let p = Matrix::column(&xs);
            let s = Matrix::column(&xs.iter().map(|x| -x).collect::<Vec<_>>());
            let h = crate::kernels::median_bandwidth(&p).unwrap();
            ksd_vstat(&p, &s, h).unwrap()
        };
        let a = draw();
        let b = draw();
        assert!(a >= 0.0 && a <= 0.05, "ksd {a}");
        assert!(b >= 0.0 && b <= 0.05, "ksd {b}");
    }

    proptest! {
        #[test]
        fn symmetric_in_score_arguments(seed in 0u64..10_000, n in 1usize..8, d in 1usize..4, h in 0.2..4.0f64) {
            let mut rng = seeded(seed);
            let p = random_matrix(&mut rng, n, d, 2.0);
            let s1 = random_matrix(&mut rng, n, d, 3.0);
            let s2 = random_matrix(&mut rng, n, d, 3.0);
            let a = hip_vstat(&p, &s1, &s2, h).unwrap();
            let b = hip_vstat(&p, &s2, &s1, h).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }

        #[test]
        fn ksd_nonnegative(seed in 0u64..10_000, n in 1usize..10, d in 1usize..5, h in 0.1..4.0f64) {
            let mut rng = seeded(seed);
            let p = random_matrix(&mut rng, n, d, 2.0);
            let s = random_matrix(&mut rng, n, d, 5.0);
            prop_assert!(ksd_vstat(&p, &s, h).unwrap() >= -1e-10);
        }

        #[test]
        fn affine_in_each_score(seed in 0u64..10_000, n in 1usize..6, d in 1usize..4, a in -2.0..2.0f64, b in -2.0..2.0f64) {
            // hip(aS + bS', T) − base = a (hip(S,T) − base) + b (hip(S',T) − base),
            // base = hip(0, T) ... with the zero-score baseline on the first slot
            let mut rng = seeded(seed);
            let h = 1.3;
            let p = random_matrix(&mut rng, n, d, 2.0);
            let s = random_matrix(&mut rng, n, d, 2.0);
            let s_alt = random_matrix(&mut rng, n, d, 2.0);
            let t = random_matrix(&mut rng, n, d, 2.0);
            let zero = Matrix::zeros(n, d);
            let mut comb = Matrix::zeros(n, d);
            for ((c, x), y) in comb.as_mut_slice().iter_mut().zip(s.as_slice()).zip(s_alt.as_slice()) {
                *c = a * x + b * y;
            }
            let base = hip_vstat(&p, &zero, &t, h).unwrap();
            let lhs = hip_vstat(&p, &comb, &t, h).unwrap();
            let rhs = a * hip_vstat(&p, &s, &t, h).unwrap() + b * hip_vstat(&p, &s_alt, &t, h).unwrap()
                - (a + b - 1.0) * base;
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
        }
    }
}
