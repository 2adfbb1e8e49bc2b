use nalgebra::{DMatrix, DVector};

use super::{check_features, check_importance, check_penalty, LossValueAndGradient};
use crate::error::{shape, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::{scale_columns, sigmoid, softplus};

use super::dec_penalty;

/// Tri-InfoNCE in exact expectation form:
///
/// ```text
/// -Σ_{x,x⁺} A[x,x⁺] · log( exp(z(x,x⁺)) / Σ_{x⁻} d[x⁻] exp(z(x,x⁻)) ) + λ‖FᵀF - I‖²
/// ```
///
/// with `z(x,y) = f(x)ᵀ S f(y)` and `A[x,y] = Ā[x,y] √(d_x d_y)`. The negative
/// expectation runs over the full marginal, positives included.
pub fn tri_infonce_loss(
    normalized: &NormalizedAdjacency,
    degrees: &DVector<f64>,
    f: &DMatrix<f64>,
    raw_importance: &DVector<f64>,
    penalty_weight: f64,
) -> Result<LossValueAndGradient> {
    let abar = &normalized.matrix;
    check_features(abar, f)?;
    check_importance(f, raw_importance)?;
    check_penalty(penalty_weight)?;
    let n = abar.nrows();
    if degrees.len() != n {
        return Err(shape(format!("{} degrees for {} nodes", degrees.len(), n)));
    }

    let s = raw_importance.map(softplus);
    let root_d = degrees.map(f64::sqrt);
    let adjacency = DMatrix::from_fn(n, n, |x, y| abar[(x, y)] * root_d[x] * root_d[y]);
    // Logits z = D^{-1/2} F S Fᵀ D^{-1/2}.
    let scaled = scale_columns(f, &s) * f.transpose();
    let logits = DMatrix::from_fn(n, n, |x, y| scaled[(x, y)] / (root_d[x] * root_d[y]));

    let mut value = 0.0;
    let mut dlogits = DMatrix::zeros(n, n);
    for x in 0..n {
        let row_max = logits.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = (0..n).map(|y| degrees[y] * (logits[(x, y)] - row_max).exp()).collect();
        let partition: f64 = weights.iter().sum();
        let lse = row_max + partition.ln();
        let row_mass: f64 = adjacency.row(x).iter().sum();
        for y in 0..n {
            let a = adjacency[(x, y)];
            value -= a * (logits[(x, y)] - lse);
            dlogits[(x, y)] = -a + row_mass * weights[y] / partition;
        }
    }

    // Back through z = D^{-1/2} F S Fᵀ D^{-1/2}.
    let w = DMatrix::from_fn(n, n, |x, y| dlogits[(x, y)] / (root_d[x] * root_d[y]));
    let sym = &w + w.transpose();
    let mut grad_features = scale_columns(&(&sym * f), &s);
    let wf = &w * f;
    let grad_raw = DVector::from_fn(s.len(), |j, _| {
        f.column(j).dot(&wf.column(j)) * sigmoid(raw_importance[j])
    });

    let dec = dec_penalty(f)?;
    value += penalty_weight * dec.value;
    grad_features += dec.grad_features * penalty_weight;
    Ok(LossValueAndGradient {
        value,
        grad_features,
        grad_features_b: None,
        grad_raw_importance: Some(grad_raw),
    })
}
