//! Downstream metrics, identifiability distances and bound quantities.

mod bounds;
mod identifiability;
mod neighbors;
mod probe;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

pub use bounds::{bound_values, BoundReport, BOUND_C1, BOUND_C2};
pub use identifiability::{
    bifactor_vs_trifactor_experiment, identifiability_distance, IdentifiabilityExperiment, IdentifiabilityReport,
    PairDistance,
};
pub use neighbors::{knn_eval, retrieval_map, DEFAULT_TOP_R};
pub use probe::{linear_probe, scl_random_subset_eval, SubsetEval, DEFAULT_RIDGE};

/// Importance normalized to sum to one.
pub fn importance_distribution(s: &DVector<f64>) -> Result<DVector<f64>> {
    let total: f64 = s.iter().sum();
    if s.iter().any(|v| *v < 0.0 || !v.is_finite()) || !(total > 0.0) {
        return Err(invalid("importance must be nonnegative with a positive sum"));
    }
    Ok(s / total)
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub m_or_block: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(m, weighted 0-1 error)` of the linear probe on the top-`m` features.
    pub probe_errors: Vec<(usize, f64)>,
    /// `(m, mean error)` of the probe on random `m`-subsets of reference features.
    pub random_subset_errors: Vec<(usize, f64)>,
    /// `("start-end", accuracy)` of leave-one-out k-NN on each dimension block.
    pub knn_accuracy: Vec<(String, f64)>,
    /// `(m, mAP)` of cosine retrieval on the top-`m` features.
    pub retrieval_map: Vec<(usize, f64)>,
    pub importance: Vec<f64>,
}

impl EvalReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        let row = |metric: &str, key: String, value: f64| MetricRow {
            metric: metric.to_string(),
            m_or_block: key,
            value,
        };
        let mut out = Vec::new();
        out.extend(
            self.probe_errors
                .iter()
                .map(|(m, v)| row("probe_error", m.to_string(), *v)),
        );
        out.extend(
            self.random_subset_errors
                .iter()
                .map(|(m, v)| row("random_subset_probe_error", m.to_string(), *v)),
        );
        out.extend(
            self.knn_accuracy
                .iter()
                .map(|(b, v)| row("knn_accuracy", b.clone(), *v)),
        );
        out.extend(
            self.retrieval_map
                .iter()
                .map(|(m, v)| row("retrieval_map", m.to_string(), *v)),
        );
        out.extend(
            self.importance
                .iter()
                .enumerate()
                .map(|(j, v)| row("importance", (j + 1).to_string(), *v)),
        );
        out
    }

    pub fn values_in_unit_interval(&self) -> bool {
        self.rows().iter().all(|r| (0.0..=1.0).contains(&r.value))
    }
}

pub(crate) fn check_labels(features: &DMatrix<f64>, labels: &[usize]) -> Result<usize> {
    if labels.len() != features.nrows() {
        return Err(shape(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.nrows()
        )));
    }
    Ok(labels.iter().copied().max().map_or(0, |c| c + 1))
}
