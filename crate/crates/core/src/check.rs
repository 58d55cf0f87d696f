//! Self-check suite run by the `check` subcommand: finite-difference and
//! closed-form oracles on small toy problems.

use std::time::Instant;

use crate::error::Result;
use crate::harness::{run_experiment, ExperimentConfig, ModelKind};
use crate::kernels::{adaptive_bandwidth, eval_kernel, grad_x_kernel};
use crate::linalg::Matrix;
use crate::models::{uniform, ModelSpec};
use crate::rng::{seeded, SimRng};
use crate::score::FnScore;
use crate::selection::{jensen_gap, selection_distribution, SelectionScheme};
use crate::stein::{averaged_score, hip_vstat, ksd_vstat};
use crate::svgd::{run_svgd, OptimizerState};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn random_matrix(rng: &mut SimRng, n: usize, d: usize, s: f64) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| uniform(rng, -s, s)).collect()).expect("shape")
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn kernel_gradient() -> Result<(bool, String)> {
    let mut rng = seeded(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = 3;
        let x: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let h = uniform(&mut rng, 0.5, 2.0);
        let g = grad_x_kernel(&x, &y, h)?;
        for j in 0..d {
            let step = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let fd = (eval_kernel(&xp, &y, h)? - eval_kernel(&xm, &y, h)?) / (2.0 * step);
            worst = worst.max((g[j] - fd).abs() / g[j].abs().max(1e-3));
        }
    }
    Ok((worst <= 1e-5, format!("worst relative error {worst:.2e}")))
}

fn prior_score_fd() -> Result<(bool, String)> {
    let mut rng = seeded(2);
    let m = ModelSpec::blr(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let theta: Vec<f64> = (0..4).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let s = m.prior_score(&theta)?;
        for j in 0..4 {
            let step = 1e-5;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[j] += step;
            tm[j] -= step;
            let fd = (m.prior_log_density(&tp)? - m.prior_log_density(&tm)?) / (2.0 * step);
            worst = worst.max(rel_err(s[j], fd));
        }
    }
    Ok((worst <= 1e-4, format!("worst relative error {worst:.2e}")))
}

fn ksd_nonnegative() -> Result<(bool, String)> {
    let mut rng = seeded(3);
    let mut min = f64::INFINITY;
    for i in 0..200 {
        let n = 1 + i % 10;
        let d = 1 + i % 4;
        let p = random_matrix(&mut rng, n, d, 2.0);
        let s = random_matrix(&mut rng, n, d, 5.0);
        let h = uniform(&mut rng, 0.1, 4.0);
        min = min.min(ksd_vstat(&p, &s, h)?);
    }
    Ok((min >= -1e-10, format!("minimum {min:.3e}")))
}

fn averaged_score_identity() -> Result<(bool, String)> {
    let mut rng = seeded(4);
    let mut worst = 0.0f64;
    for i in 0..60 {
        let n = [1, 5, 20][i % 3];
        let d = [1, 3, 10][(i / 3) % 3];
        let k = [2, 3, 7][(i / 9) % 3];
        let p = random_matrix(&mut rng, n, d, 2.0);
        let scores: Vec<Matrix> = (0..k).map(|_| random_matrix(&mut rng, n, d, 3.0)).collect();
        let h = adaptive_bandwidth(&p);
        let mean = averaged_score(&scores)?;
        let lhs: f64 = scores
            .iter()
            .map(|s| hip_vstat(&p, &scores[0], s, h))
            .sum::<Result<f64>>()?;
        let rhs = k as f64 * hip_vstat(&p, &scores[0], &mean, h)?;
        worst = worst.max(rel_err(lhs, rhs));
    }
    Ok((worst <= 1e-12, format!("worst relative error {worst:.2e}")))
}

fn selection_axioms() -> Result<(bool, String)> {
    let mut rng = seeded(5);
    let mut worst = 0.0f64;
    let mut min_gap = f64::INFINITY;
    for _ in 0..200 {
        let ind: Vec<f64> = (0..7).map(|_| uniform(&mut rng, -1.0, 5.0)).collect();
        let p = selection_distribution(&ind)?;
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
        if p.iter().any(|v| *v < 0.0) {
            return Ok((false, "negative probability".into()));
        }
        min_gap = min_gap.min(jensen_gap(&ind)?);
    }
    Ok((
        worst <= 1e-12 && min_gap >= -1e-12,
        format!("sum error {worst:.1e}, minimum gap {min_gap:.2e}"),
    ))
}

fn svgd_gaussian() -> Result<(bool, String)> {
    let mut rng = seeded(6);
    let init = random_matrix(&mut rng, 100, 1, 1.0);
    let mut target = FnScore::new(1, |t: &[f64], out: &mut [f64]| out[0] = 2.0 - t[0]);
    let mut opt = OptimizerState::new(0.1);
    let p = run_svgd(&init, &mut target, 500, &mut opt, &mut rng)?;
    let mean = p.column_means()[0];
    let var = p.column_variances()[0];
    Ok((
        (mean - 2.0).abs() <= 0.1 && (var - 1.0).abs() <= 0.2,
        format!("mean {mean:.4}, variance {var:.4}"),
    ))
}

/// Two clients observing +1 and −1 under a N(0, 1) prior; the posterior is
/// N(0, 1/3).
pub fn conjugate_config(scheme: SelectionScheme, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelKind::GaussianToy,
        toy_prior_mean: vec![0.0],
        toy_prior_variance: vec![1.0],
        toy_observations: vec![vec![1.0], vec![-1.0]],
        clients: 2,
        rounds: 30,
        global_steps: 10,
        local_steps: 10,
        particles: 50,
        step_size: 0.05,
        local_step_size: 0.05,
        scheme,
        seed,
        ..Default::default()
    }
}

fn conjugate_dsvgd() -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for scheme in SelectionScheme::ALL {
        let run = run_experiment(&conjugate_config(scheme, 0))?;
        if let Some(e) = run.failure {
            return Err(e);
        }
        let mean = run.final_global.column_means()[0];
        let var = run.final_global.column_variances()[0];
        ok &= mean.abs() <= 0.1 && (var - 1.0 / 3.0).abs() <= 0.1;
        parts.push(format!("{scheme}: mean {mean:.3} var {var:.3}"));
    }
    Ok((ok, parts.join("; ")))
}

/// Runs every check in order.
pub fn run_checks() -> Vec<CheckOutcome> {
    let checks: [(&'static str, fn() -> Result<(bool, String)>); 7] = [
        ("rbf gradient vs finite differences", kernel_gradient),
        ("blr prior score vs finite differences", prior_score_fd),
        ("ksd nonnegativity", ksd_nonnegative),
        (
            "averaged-score inner product identity",
            averaged_score_identity,
        ),
        ("selection distribution axioms", selection_axioms),
        ("svgd gaussian fixed point", svgd_gaussian),
        ("dsvgd conjugate posterior", conjugate_dsvgd),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = match f() {
                Ok(v) => v,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckOutcome {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}
