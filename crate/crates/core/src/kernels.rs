//! RBF kernel with closed-form derivatives, the median-heuristic bandwidth,
//! and the normalized Gaussian kernel used for density estimates.
//!
//! The RBF kernel is `k(x, y) = exp(-‖x − y‖² / h)`. Note the bandwidth
//! divides the squared distance directly; there is no factor of two.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{sq_dist, ParticleSet};

/// Bandwidth returned when the median pairwise distance is zero or the set
/// has fewer than two particles.
pub const FALLBACK_BANDWIDTH: f64 = 1.0;

/// Default bandwidth `b` of the Gaussian density-estimate kernel.
pub const DEFAULT_KDE_BANDWIDTH: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// `exp(-‖x − y‖² / h)`.
    Rbf,
    /// `(2πb²)^(-d/2) exp(-‖x − y‖² / (2b²))`.
    GaussianKde,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthPolicy {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: BandwidthPolicy,
}

impl KernelSpec {
    /// The Stein/SVGD kernel: RBF with the adaptive median bandwidth.
    pub fn stein_default() -> Self {
        KernelSpec {
            family: KernelFamily::Rbf,
            bandwidth: BandwidthPolicy::MedianHeuristic,
        }
    }

    pub fn kde_default() -> Self {
        KernelSpec {
            family: KernelFamily::GaussianKde,
            bandwidth: BandwidthPolicy::Fixed(DEFAULT_KDE_BANDWIDTH),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            BandwidthPolicy::Fixed(h) if !(h > 0.0 && h.is_finite()) => Err(Error::usage(format!(
                "fixed bandwidth must be positive, got {h}"
            ))),
            BandwidthPolicy::MedianHeuristic if self.family == KernelFamily::GaussianKde => Err(
                Error::usage("the median heuristic applies to the RBF kernel only"),
            ),
            _ => Ok(()),
        }
    }

    /// Resolves the bandwidth for a particular particle set.
    pub fn resolve_bandwidth(&self, particles: &ParticleSet) -> Result<f64> {
        self.validate()?;
        Ok(match self.bandwidth {
            BandwidthPolicy::Fixed(h) => h,
            BandwidthPolicy::MedianHeuristic => adaptive_bandwidth(particles),
        })
    }

    pub fn eval(&self, x: &[f64], y: &[f64], h: f64) -> Result<f64> {
        match self.family {
            KernelFamily::Rbf => eval_kernel(x, y, h),
            KernelFamily::GaussianKde => {
                check_pair(x, y, h)?;
                Ok(gaussian_kde_kernel(x, y, h))
            }
        }
    }
}

fn check_pair(x: &[f64], y: &[f64], h: f64) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::usage(format!(
            "kernel arguments have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::usage(format!("bandwidth must be positive, got {h}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::usage("kernel arguments must be finite"));
    }
    Ok(())
}

/// `exp(-‖x − y‖² / h)`.
pub fn eval_kernel(x: &[f64], y: &[f64], h: f64) -> Result<f64> {
    check_pair(x, y, h)?;
    Ok(rbf(sq_dist(x, y), h))
}

/// `∇_x k(x, y) = -(2/h)(x − y) k(x, y)`.
pub fn grad_x_kernel(x: &[f64], y: &[f64], h: f64) -> Result<Vec<f64>> {
    check_pair(x, y, h)?;
    let k = rbf(sq_dist(x, y), h);
    let c = -2.0 / h * k;
    Ok(x.iter().zip(y).map(|(a, b)| c * (a - b)).collect())
}

/// Trace of the cross-derivative matrix `∇_x ∇_y k(x, y)`, equal to
/// `k(x, y) (2d/h − 4‖x − y‖²/h²)` for the RBF kernel.
pub fn trace_grad_xy_kernel(x: &[f64], y: &[f64], h: f64) -> Result<f64> {
    check_pair(x, y, h)?;
    let r2 = sq_dist(x, y);
    Ok(rbf_cross_trace(r2, rbf(r2, h), h, x.len()))
}

#[inline]
pub(crate) fn rbf(r2: f64, h: f64) -> f64 {
    (-r2 / h).exp()
}

#[inline]
pub(crate) fn rbf_cross_trace(r2: f64, k: f64, h: f64, d: usize) -> f64 {
    k * (2.0 * d as f64 / h - 4.0 * r2 / (h * h))
}

/// Normalized Gaussian kernel `(2πb²)^(-d/2) exp(-‖x − y‖² / (2b²))`.
pub fn gaussian_kde_kernel(x: &[f64], y: &[f64], b: f64) -> f64 {
    log_gaussian_kde_kernel(sq_dist(x, y), b, x.len()).exp()
}

#[inline]
pub(crate) fn log_gaussian_kde_kernel(r2: f64, b: f64, d: usize) -> f64 {
    -0.5 * d as f64 * (2.0 * PI * b * b).ln() - r2 / (2.0 * b * b)
}

/// Median heuristic `med² / ln N`, where `med` is the median of all
/// `N(N−1)/2` pairwise Euclidean distances. An even number of distances
/// takes the mean of the two central values. A zero or nonfinite result
/// falls back to [`FALLBACK_BANDWIDTH`].
pub fn median_bandwidth(particles: &ParticleSet) -> Result<f64> {
    let n = particles.rows();
    if n < 2 {
        return Err(Error::usage(format!(
            "median heuristic needs at least two particles, got {n}"
        )));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(particles.row(i), particles.row(j)).sqrt());
        }
    }
    let m = dists.len();
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    let med = if m % 2 == 1 {
        *dists.select_nth_unstable_by(m / 2, cmp).1
    } else {
        let (lower, upper, _) = dists.select_nth_unstable_by(m / 2, cmp);
        let lo = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + *upper)
    };
    let h = med * med / (n as f64).ln();
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Ok(FALLBACK_BANDWIDTH)
    }
}

/// Median heuristic that also accepts a single particle, returning the
/// fallback bandwidth in that case.
pub fn adaptive_bandwidth(particles: &ParticleSet) -> f64 {
    if particles.rows() < 2 {
        FALLBACK_BANDWIDTH
    } else {
        median_bandwidth(particles).unwrap_or(FALLBACK_BANDWIDTH)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use proptest::prelude::*;

    const E1: f64 = 0.367_879_441_171_442_33;

    #[test]
    fn eval_examples() {
        assert_eq!(eval_kernel(&[0.3, -1.0], &[0.3, -1.0], 0.7).unwrap(), 1.0);
        assert!((eval_kernel(&[0.0], &[1.0], 1.0).unwrap() - E1).abs() < 1e-15);
        assert!((eval_kernel(&[1.0, 2.0], &[3.0, 5.0], 13.0).unwrap() - E1).abs() < 1e-15);
    }

    #[test]
    fn eval_rejects_bad_input() {
        assert!(matches!(
            eval_kernel(&[0.0], &[1.0, 2.0], 1.0),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            eval_kernel(&[f64::NAN], &[1.0], 1.0),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            eval_kernel(&[0.0], &[1.0], 0.0),
            Err(Error::Usage(_))
        ));
        assert!(grad_x_kernel(&[0.0], &[1.0], -1.0).is_err());
        assert!(trace_grad_xy_kernel(&[0.0, 1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn grad_examples() {
        assert_eq!(
            grad_x_kernel(&[1.5, 2.0], &[1.5, 2.0], 2.0).unwrap(),
            vec![0.0, 0.0]
        );
        let g = grad_x_kernel(&[1.0], &[0.0], 1.0).unwrap();
        assert!((g[0] + 2.0 * E1).abs() < 1e-15);
        assert!((g[0] + 0.735_758_882).abs() < 1e-9);
    }

    #[test]
    fn trace_examples() {
        assert_eq!(trace_grad_xy_kernel(&[0.4], &[0.4], 1.0).unwrap(), 2.0);
        assert_eq!(
            trace_grad_xy_kernel(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 2.0).unwrap(),
            3.0
        );
        let t = trace_grad_xy_kernel(&[0.0], &[1.0], 1.0).unwrap();
        assert!((t + 0.735_758_882).abs() < 1e-9);
    }

    #[test]
    fn median_examples() {
        let p = Matrix::column(&[0.0, 1.0, 3.0]);
        let h = median_bandwidth(&p).unwrap();
        assert!((h - 4.0 / 3f64.ln()).abs() < 1e-12);
        assert!((h - 3.640_957).abs() < 1e-5);

        let p = Matrix::column(&[0.0, 2.0]);
        assert!((median_bandwidth(&p).unwrap() - 5.770_780).abs() < 1e-5);

        let p = Matrix::column(&[1.5, 1.5, 1.5, 1.5]);
        assert_eq!(median_bandwidth(&p).unwrap(), FALLBACK_BANDWIDTH);

        assert!(median_bandwidth(&Matrix::column(&[1.0])).is_err());
        assert_eq!(
            adaptive_bandwidth(&Matrix::column(&[1.0])),
            FALLBACK_BANDWIDTH
        );
    }

    #[test]
    fn median_even_count_averages_middle_pair() {
        // distances {1,2,3,1,2,1} sorted {1,1,1,2,2,3} -> med = 1.5
        let p = Matrix::column(&[0.0, 1.0, 2.0, 3.0]);
        let h = median_bandwidth(&p).unwrap();
        assert!((h - 2.25 / 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kde_kernel_is_normalized_gaussian() {
        let b: f64 = 0.55;
        let v = gaussian_kde_kernel(&[0.0], &[0.0], b);
        assert!((v - 1.0 / (2.0 * PI * b * b).sqrt()).abs() < 1e-14);
        let spec = KernelSpec::kde_default();
        assert_eq!(spec.eval(&[0.0], &[0.0], b).unwrap(), v);
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::stein_default().validate().is_ok());
        assert!(KernelSpec::kde_default().validate().is_ok());
        let bad = KernelSpec {
            family: KernelFamily::Rbf,
            bandwidth: BandwidthPolicy::Fixed(0.0),
        };
        assert!(bad.validate().is_err());
        let bad = KernelSpec {
            family: KernelFamily::GaussianKde,
            bandwidth: BandwidthPolicy::MedianHeuristic,
        };
        assert!(bad.validate().is_err());
    }

    /// Symmetric Jacobi eigenvalue sweep; test-only oracle for the PSD check.
    fn min_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[p][q] * a[p][q];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
    }

    fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0..2.0f64, d)
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((x, y) in (1usize..5).prop_flat_map(|d| (point(d), point(d))), h in 0.1..5.0f64) {
            let a = eval_kernel(&x, &y, h).unwrap();
            let b = eval_kernel(&y, &x, h).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0 && a <= 1.0);
            if x != y { prop_assert!(a < 1.0 || sq_dist(&x, &y) / h < 1e-15); }
        }

        #[test]
        fn grad_antisymmetric((x, y) in (1usize..5).prop_flat_map(|d| (point(d), point(d))), h in 0.1..5.0f64) {
            let g1 = grad_x_kernel(&x, &y, h).unwrap();
            let g2 = grad_x_kernel(&y, &x, h).unwrap();
            for (a, b) in g1.iter().zip(&g2) {
                prop_assert_eq!(*a, -*b);
            }
        }

        #[test]
        fn grad_matches_central_differences((x, y) in (1usize..5).prop_flat_map(|d| (point(d), point(d))), h in 0.5..5.0f64) {
            let g = grad_x_kernel(&x, &y, h).unwrap();
            let step = 1e-4;
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let fd = (eval_kernel(&xp, &y, h).unwrap() - eval_kernel(&xm, &y, h).unwrap()) / (2.0 * step);
                let scale = g[i].abs().max(1e-3);
                prop_assert!((fd - g[i]).abs() / scale <= 1e-5, "fd {} analytic {}", fd, g[i]);
            }
        }

        #[test]
        fn cross_trace_matches_nested_differences((x, y) in (1usize..4).prop_flat_map(|d| (point(d), point(d))), h in 0.5..5.0f64) {
            let t = trace_grad_xy_kernel(&x, &y, h).unwrap();
            let step = 2e-4;
            let mut fd = 0.0;
            for i in 0..x.len() {
                let f = |dx: f64, dy: f64| {
                    let mut xs = x.clone();
                    let mut ys = y.clone();
                    xs[i] += dx;
                    ys[i] += dy;
                    eval_kernel(&xs, &ys, h).unwrap()
                };
                fd += (f(step, step) - f(step, -step) - f(-step, step) + f(-step, -step)) / (4.0 * step * step);
            }
            let scale = t.abs().max(1e-2);
            prop_assert!((fd - t).abs() / scale <= 1e-4, "fd {} analytic {}", fd, t);
        }

        #[test]
        fn gram_is_psd(pts in (1usize..4).prop_flat_map(|d| prop::collection::vec(point(d), 1..=8)), h in 0.1..5.0f64) {
            let gram: Vec<Vec<f64>> = pts.iter()
                .map(|a| pts.iter().map(|b| eval_kernel(a, b, h).unwrap()).collect())
                .collect();
            prop_assert!(min_eigenvalue(gram) >= -1e-10);
        }
    }
}
