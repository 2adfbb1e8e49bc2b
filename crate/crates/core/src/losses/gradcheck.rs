//! Central-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingModel, Objective};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Step for `(L(θ + ε e_i) - L(θ - ε e_i)) / 2ε`; must lie in `[1e-7, 1e-3]`.
    pub epsilon: f64,
    /// Models with more parameters are checked on a seeded random subset of
    /// this many coordinates (at least 200).
    pub max_coordinates: usize,
    pub seed: u64,
    /// Denominator floor: errors are `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_coordinates: 400,
            seed: 0,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: Option<usize>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    /// Index of the worst coordinate if its error exceeds `tolerance`.
    pub fn failure(&self, tolerance: f64) -> Option<usize> {
        if self.max_relative_error < tolerance {
            None
        } else {
            self.worst_index
        }
    }
}

/// Compare `analytic` against central differences of `value_fn` at `params`.
pub fn check_fn<F>(
    mut value_fn: F,
    params: &[f64],
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        return Err(invalid(format!("epsilon {} outside [1e-7, 1e-3]", opts.epsilon)));
    }
    if analytic.len() != params.len() {
        return Err(invalid("analytic gradient length differs from parameter count"));
    }
    let budget = opts.max_coordinates.max(200);
    let coords: Vec<usize> = if params.len() <= budget {
        (0..params.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picked = sample(&mut rng, params.len(), budget).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates_checked: coords.len(),
    };
    for i in coords {
        let orig = probe[i];
        probe[i] = orig + opts.epsilon;
        let up = value_fn(&probe);
        probe[i] = orig - opts.epsilon;
        let down = value_fn(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * opts.epsilon);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if report.worst_index.is_none() || err > report.max_relative_error || err.is_nan() {
            report.max_relative_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst_index = Some(i);
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

/// Gradient check of an objective at `model`, over every parameter (or a seeded subset).
pub fn finite_difference_check(
    objective: &Objective<'_>,
    model: &EmbeddingModel,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = objective.evaluate(model)?.flatten(model.k());
    let params = model.flatten();
    let mut failure = None;
    let report = check_fn(
        |p| match objective.evaluate(&model.with_flat(p)) {
            Ok(out) => out.value,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &params,
        &analytic,
        opts,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
