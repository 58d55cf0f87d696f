//! Client-selection schemes: importance indicators, selection
//! distributions, categorical sampling and the Jensen-gap diagnostic.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::federation::{tilted_field, ClientState};
use crate::linalg::{ParticleSet, ScoreMatrix};
use crate::models::ModelSpec;
use crate::par;
use crate::rng::SimRng;
use crate::score::score_matrix;
use crate::stein::{averaged_score, hip_vstat, ksd_vstat};

/// Lower bound below which a KSD estimate is treated as a numerical fault.
pub const KSD_NEGATIVITY_GUARD: f64 = -1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionScheme {
    KsdBased,
    HipBased,
    RoundRobin,
    RandomUniform,
}

impl SelectionScheme {
    pub const ALL: [SelectionScheme; 4] = [
        SelectionScheme::KsdBased,
        SelectionScheme::HipBased,
        SelectionScheme::RoundRobin,
        SelectionScheme::RandomUniform,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionScheme::KsdBased => "ksd",
            SelectionScheme::HipBased => "hip",
            SelectionScheme::RoundRobin => "round_robin",
            SelectionScheme::RandomUniform => "random",
        }
    }

    /// Scalars each round's indicator report costs: one per client for KSD,
    /// a full N×d score matrix per client for HIP, nothing for the baselines.
    pub fn payload_scalars(&self, clients: usize, particles: usize, dim: usize) -> usize {
        match self {
            SelectionScheme::KsdBased => clients,
            SelectionScheme::HipBased => clients * particles * dim,
            SelectionScheme::RoundRobin | SelectionScheme::RandomUniform => 0,
        }
    }
}

impl fmt::Display for SelectionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "ksd" | "ksd_based" => Ok(SelectionScheme::KsdBased),
            "hip" | "hip_based" => Ok(SelectionScheme::HipBased),
            "round_robin" | "rr" => Ok(SelectionScheme::RoundRobin),
            "random" | "random_uniform" => Ok(SelectionScheme::RandomUniform),
            other => Err(Error::Config(format!("unknown selection scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorVector {
    pub values: Vec<f64>,
    pub scheme: SelectionScheme,
}

impl IndicatorVector {
    /// Constant indicators for the baselines, which ignore client state.
    pub fn uniform(k: usize, scheme: SelectionScheme) -> Self {
        IndicatorVector {
            values: vec![1.0; k],
            scheme,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indicators with negative entries replaced by zero.
    pub fn clamped(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.max(0.0)).collect()
    }
}

/// Per-client KSD between the global particles and the client's tilted
/// distribution, with the Stein kernel bandwidth `stein_h`.
pub fn ksd_indicators(
    clients: &[ClientState],
    global: &ParticleSet,
    model: &ModelSpec,
    kde_bandwidth: f64,
    stein_h: f64,
) -> Result<IndicatorVector> {
    if clients.is_empty() {
        return Err(Error::usage("need at least one client"));
    }
    let results = par::map_indices(clients.len(), |k| -> Result<f64> {
        let field = tilted_field(&clients[k], global, model, kde_bandwidth, None)?;
        let scores = score_matrix(&field, global)?;
        ksd_vstat(global, &scores, stein_h)
    });
    let mut values = Vec::with_capacity(clients.len());
    for (k, r) in results.into_iter().enumerate() {
        let v = r?;
        if !v.is_finite() || v < KSD_NEGATIVITY_GUARD {
            return Err(Error::numerical(
                "KSD indicator",
                format!("client {k} produced {v}"),
            ));
        }
        values.push(v);
    }
    Ok(IndicatorVector {
        values,
        scheme: SelectionScheme::KsdBased,
    })
}

/// Per-client HIP ⟨φ_k, φ′⟩ between the update function of each client's
/// likelihood and that of the geometric-mean likelihood, whose score is the
/// average of all clients' scores.
pub fn hip_indicators(
    score_matrices: &[ScoreMatrix],
    global: &ParticleSet,
    stein_h: f64,
) -> Result<IndicatorVector> {
    let avg = averaged_score(score_matrices)?;
    let results = par::map_indices(score_matrices.len(), |k| {
        hip_vstat(global, &score_matrices[k], &avg, stein_h)
    });
    let values = results.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(IndicatorVector {
        values,
        scheme: SelectionScheme::HipBased,
    })
}

/// Σ_m ⟨φ_k, φ_m⟩ computed pairwise; equals `K · hip_indicators[k]`.
pub fn hip_pairwise_sum(
    k: usize,
    score_matrices: &[ScoreMatrix],
    global: &ParticleSet,
    stein_h: f64,
) -> Result<f64> {
    let sk = score_matrices
        .get(k)
        .ok_or_else(|| Error::usage(format!("no score matrix for client {k}")))?;
    let mut total = 0.0;
    for sm in score_matrices {
        total += hip_vstat(global, sk, sm, stein_h)?;
    }
    Ok(total)
}

/// Normalizes clamped indicators into a distribution; uniform when every
/// clamped indicator is zero.
pub fn selection_distribution(indicators: &[f64]) -> Result<Vec<f64>> {
    if indicators.is_empty() {
        return Err(Error::usage("no indicators"));
    }
    if indicators.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "selection distribution",
            "nonfinite indicator",
        ));
    }
    let clamped: Vec<f64> = indicators.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    let k = clamped.len() as f64;
    if total <= 0.0 {
        return Ok(vec![1.0 / k; clamped.len()]);
    }
    Ok(clamped.iter().map(|v| v / total).collect())
}

/// Categorical draw from `probabilities`.
pub fn sample_client(probabilities: &[f64], rng: &mut SimRng) -> Result<usize> {
    if probabilities.is_empty() {
        return Err(Error::usage("empty distribution"));
    }
    if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::usage("probabilities must be finite and nonnegative"));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::usage(format!("probabilities sum to {total}, not 1")));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, p) in probabilities.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

/// Σ_k v_k P_k − (1/K) Σ_k v_k over the clamped indicators, with P from
/// [`selection_distribution`]. Nonnegative by Cauchy–Schwarz; zero when all
/// indicators coincide.
pub fn jensen_gap(indicators: &[f64]) -> Result<f64> {
    let probs = selection_distribution(indicators)?;
    let clamped: Vec<f64> = indicators.iter().map(|v| v.max(0.0)).collect();
    if clamped.windows(2).all(|w| w[0] == w[1]) {
        return Ok(0.0);
    }
    let weighted: f64 = clamped.iter().zip(&probs).map(|(v, p)| v * p).sum();
    let mean = clamped.iter().sum::<f64>() / clamped.len() as f64;
    Ok(weighted - mean)
}

/// Selection-dependent term of the per-step free-energy bound under the
/// KSD scheme: `−ε · S(q, p̃_k)`.
pub fn ksd_bound_term(step: f64, ksd: f64) -> f64 {
    -step * ksd
}

/// Selection-dependent term of the per-step free-energy bound under the
/// HIP scheme: `−ε · K · ⟨φ_k, φ′⟩`.
pub fn hip_bound_term(step: f64, clients: usize, hip: f64) -> f64 {
    -step * clients as f64 * hip
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in SelectionScheme::ALL {
            assert_eq!(s.as_str().parse::<SelectionScheme>().unwrap(), s);
        }
        assert!("best".parse::<SelectionScheme>().is_err());
    }

    #[test]
    fn distribution_examples() {
        assert_eq!(
            selection_distribution(&[1.0, 3.0]).unwrap(),
            vec![0.25, 0.75]
        );
        let p = selection_distribution(&[2.0, -1.0, 1.0]).unwrap();
        assert!(
            (p[0] - 2.0 / 3.0).abs() < 1e-15 && p[1] == 0.0 && (p[2] - 1.0 / 3.0).abs() < 1e-15
        );
        assert_eq!(
            selection_distribution(&[0.0, 0.0, 0.0]).unwrap(),
            vec![1.0 / 3.0; 3]
        );
        assert_eq!(
            selection_distribution(&[-1.0, -2.0]).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(selection_distribution(&[f64::NAN]).is_err());
    }

    #[test]
    fn sampling_examples() {
        let mut rng = seeded(0);
        for _ in 0..100 {
            assert_eq!(sample_client(&[1.0], &mut rng).unwrap(), 0);
            assert_eq!(sample_client(&[0.0, 1.0], &mut rng).unwrap(), 1);
        }
        assert!(sample_client(&[0.5, 0.2], &mut rng).is_err());
        assert!(sample_client(&[1.5, -0.5], &mut rng).is_err());
    }

    #[test]
    fn empirical_frequency_matches() {
        let mut rng = seeded(17);
        let hits = (0..100_000)
            .filter(|_| sample_client(&[0.25, 0.75], &mut rng).unwrap() == 1)
            .count();
        assert!((hits as f64 / 1e5 - 0.75).abs() <= 0.01);
    }

    #[test]
    fn jensen_gap_examples() {
        assert_eq!(jensen_gap(&[0.7, 0.7, 0.7]).unwrap(), 0.0);
        assert!((jensen_gap(&[1.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hip_indicator_examples() {
        let p = Matrix::column(&[0.0]);
        let s = vec![Matrix::column(&[1.0]), Matrix::column(&[3.0])];
        let ind = hip_indicators(&s, &p, 1.0).unwrap();
        assert_eq!(ind.values, vec![4.0, 8.0]);
        assert_eq!(hip_pairwise_sum(0, &s, &p, 1.0).unwrap(), 8.0);
        assert_eq!(
            hip_pairwise_sum(0, &s, &p, 1.0).unwrap(),
            2.0 * ind.values[0]
        );

        let single = vec![Matrix::column(&[1.5])];
        let ind = hip_indicators(&single, &p, 1.0).unwrap();
        assert_eq!(ind.values[0], ksd_vstat(&p, &single[0], 1.0).unwrap());

        let shared = Matrix::column(&[-0.4]);
        let ind = hip_indicators(&[shared.clone(), shared.clone(), shared], &p, 1.0).unwrap();
        assert!(ind.values.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn bound_terms() {
        assert_eq!(ksd_bound_term(0.1, 2.0), -0.2);
        assert_eq!(hip_bound_term(0.1, 3, 2.0), -0.6000000000000001);
    }

    proptest! {
        #[test]
        fn distribution_axioms(v in prop::collection::vec(-1.0..5.0f64, 1..12)) {
            let p = selection_distribution(&v).unwrap();
            prop_assert_eq!(p.len(), v.len());
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn proportional_and_scale_invariant(v in prop::collection::vec(0.01..5.0f64, 2..12), c in 0.001..1000.0f64) {
            let p = selection_distribution(&v).unwrap();
            for k in 1..v.len() {
                prop_assert!((p[k] / p[0] - v[k] / v[0]).abs() <= 1e-12 * (v[k] / v[0]).max(1.0));
            }
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let q = selection_distribution(&scaled).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn jensen_gap_nonnegative(v in prop::collection::vec(-1.0..5.0f64, 1..12)) {
            prop_assert!(jensen_gap(&v).unwrap() >= -1e-12);
        }
    }
}
