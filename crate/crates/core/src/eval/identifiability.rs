use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::linalg::{random_orthogonal, standard_normal_matrix};
use crate::spectra::decompose;
use crate::trainer::{canonicalize_feature_signs, check_canonical};

/// Anchor tolerance used when checking and producing canonical solutions here.
const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub run_i: usize,
    pub run_j: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub method: String,
    pub num_runs: usize,
    pub mean_pairwise_distance: f64,
    /// Population variance of the pairwise distances.
    pub distance_variance: f64,
    pub pairs: Vec<PairDistance>,
    /// Set when fewer than two runs leave no pairs; mean and variance are then 0.
    pub no_pairs: bool,
}

/// Pairwise Frobenius distances between sign-canonicalized feature matrices.
pub fn identifiability_distance(method: &str, models: &[DMatrix<f64>]) -> Result<IdentifiabilityReport> {
    let first = models.first().ok_or_else(|| invalid("no models to compare"))?;
    for (i, m) in models.iter().enumerate() {
        if m.shape() != first.shape() {
            return Err(shape(format!(
                "model {i} is {:?}, model 0 is {:?}",
                m.shape(),
                first.shape()
            )));
        }
        check_canonical(m, TOLERANCE)?;
    }
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            pairs.push(PairDistance {
                run_i: i,
                run_j: j,
                distance: (&models[i] - &models[j]).norm(),
            });
        }
    }
    let (mean, variance) = mean_and_variance(&pairs);
    Ok(IdentifiabilityReport {
        method: method.to_string(),
        num_runs: models.len(),
        mean_pairwise_distance: mean,
        distance_variance: variance,
        no_pairs: pairs.is_empty(),
        pairs,
    })
}

fn mean_and_variance(pairs: &[PairDistance]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.distance).sum::<f64>() / n;
    let variance = pairs.iter().map(|p| (p.distance - mean).powi(2)).sum::<f64>() / n;
    (mean, variance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityExperiment {
    pub bifactor: IdentifiabilityReport,
    pub trifactor: IdentifiabilityReport,
    /// Near-degenerate singular values in the top `k`, from the decomposition.
    pub warnings: Vec<String>,
}

/// Optimal solutions of `‖X - FGᵀ‖²` and `‖X - F S Gᵀ‖²` for one random matrix `X`.
///
/// Two-factor optima are `F = U_k Σ^{1/2} R` with an independent random
/// orthogonal `R` per solution; three-factor optima are `U_k` with random
/// column signs. Both are sign-canonicalized before comparing left factors.
pub fn bifactor_vs_trifactor_experiment(
    rows: usize,
    cols: usize,
    k: usize,
    num_solutions: usize,
    seed: u64,
) -> Result<IdentifiabilityExperiment> {
    if k == 0 || k > rows.min(cols) {
        return Err(invalid(format!("k must be in 1..={}, got {k}", rows.min(cols))));
    }
    if num_solutions == 0 {
        return Err(invalid("num_solutions must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = standard_normal_matrix(&mut rng, rows, cols);
    let reference = decompose(&x, k)?;
    let mut root = reference.left.clone();
    for j in 0..k {
        root.column_mut(j).scale_mut(reference.singular_values[j].sqrt());
    }

    let mut bifactor = Vec::with_capacity(num_solutions);
    let mut trifactor = Vec::with_capacity(num_solutions);
    for _ in 0..num_solutions {
        let mut f = &root * random_orthogonal(&mut rng, k);
        canonicalize_feature_signs(&mut f, TOLERANCE)?;
        bifactor.push(f);

        let mut u = reference.left.clone();
        for j in 0..k {
            if rng.random_bool(0.5) {
                u.column_mut(j).neg_mut();
            }
        }
        canonicalize_feature_signs(&mut u, TOLERANCE)?;
        trifactor.push(u);
    }
    Ok(IdentifiabilityExperiment {
        bifactor: identifiability_distance("bifactor", &bifactor)?,
        trifactor: identifiability_distance("trifactor", &trifactor)?,
        warnings: reference.warnings,
    })
}
