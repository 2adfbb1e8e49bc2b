use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_labels;
use crate::error::{invalid, shape, Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Relative pivot size below which unregularized normal equations count as singular.
const PIVOT_FLOOR: f64 = 1e-12;

/// Weighted 0-1 error of the ridge least-squares probe.
///
/// One-hot labels are regressed on the feature rows without an intercept,
/// weighting sample `x` by `weights[x]`; the prediction is the argmax score
/// (ties to the smaller class id).
pub fn linear_probe(features: &DMatrix<f64>, labels: &[usize], weights: &DVector<f64>, ridge: f64) -> Result<f64> {
    let classes = check_labels(features, labels)?;
    if weights.len() != features.nrows() {
        return Err(shape(format!(
            "{} weights for {} rows",
            weights.len(),
            features.nrows()
        )));
    }
    if features.ncols() == 0 {
        return Err(invalid("probe needs at least one feature"));
    }
    let mut seen = vec![false; classes];
    labels.iter().for_each(|&c| seen[c] = true);
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(invalid("probe needs at least two classes"));
    }
    if !(ridge >= 0.0) {
        return Err(invalid(format!("ridge must be >= 0, got {ridge}")));
    }
    let m = features.ncols();
    let mut gram = DMatrix::zeros(m, m);
    let mut rhs = DMatrix::zeros(m, classes);
    for (x, row) in features.row_iter().enumerate() {
        let w = weights[x];
        gram += row.transpose() * row * w;
        let mut target = rhs.column_mut(labels[x]);
        target += row.transpose() * w;
    }
    let scale = gram.diagonal().max();
    for j in 0..m {
        gram[(j, j)] += ridge;
    }
    let chol = Cholesky::new(gram).ok_or(Error::SingularNormalEquations)?;
    if ridge == 0.0 {
        let l = chol.l_dirty();
        if (0..m).any(|j| l[(j, j)].powi(2) <= PIVOT_FLOOR * scale) {
            return Err(Error::SingularNormalEquations);
        }
    }
    let coef = chol.solve(&rhs);
    let scores = features * coef;
    let total: f64 = weights.iter().sum();
    let wrong: f64 = scores
        .row_iter()
        .enumerate()
        .filter(|(x, r)| {
            let pred = (0..classes).fold(0, |b, c| if r[c] > r[b] { c } else { b });
            pred != labels[*x]
        })
        .fold(0.0, |acc, (x, _)| acc + weights[x]);
    Ok(wrong / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetEval {
    pub m: usize,
    pub mean_error: f64,
    pub errors: Vec<f64>,
}

/// Probe error averaged over `trials` uniformly random `m`-subsets of the
/// feature columns. Trial `t` draws from stream `t` of a generator seeded with `seed`.
pub fn scl_random_subset_eval(
    features: &DMatrix<f64>,
    labels: &[usize],
    weights: &DVector<f64>,
    m: usize,
    trials: usize,
    seed: u64,
    ridge: f64,
) -> Result<SubsetEval> {
    let k = features.ncols();
    if m == 0 || m > k {
        return Err(invalid(format!("m must be in 1..={k}, got {m}")));
    }
    if trials == 0 {
        return Err(invalid("trials must be >= 1"));
    }
    let mut errors = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut cols = sample(&mut rng, k, m).into_vec();
        cols.sort_unstable();
        errors.push(linear_probe(&features.select_columns(&cols), labels, weights, ridge)?);
    }
    Ok(SubsetEval {
        m,
        mean_error: errors.iter().sum::<f64>() / trials as f64,
        errors,
    })
}
