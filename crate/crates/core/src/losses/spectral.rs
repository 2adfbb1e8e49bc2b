use nalgebra::{DMatrix, DVector};

use super::{check_features, check_importance, check_penalty, LossValueAndGradient};
use crate::error::Result;
use crate::graph::NormalizedAdjacency;
use crate::linalg::{frob_sq, gram_minus_identity, scale_columns, sigmoid, softplus};

/// Two-factor spectral contrastive loss, `‖Ā - FFᵀ‖² - ‖Ā‖²`.
pub fn scl_loss(normalized: &NormalizedAdjacency, f: &DMatrix<f64>) -> Result<LossValueAndGradient> {
    let a = &normalized.matrix;
    check_features(a, f)?;
    let residual = a - f * f.transpose();
    let value = frob_sq(&residual) - frob_sq(a);
    let grad_features = (&residual * f) * -4.0;
    Ok(LossValueAndGradient {
        value,
        grad_features,
        grad_features_b: None,
        grad_raw_importance: None,
    })
}

/// Decorrelation penalty `‖FᵀF - I‖²`, i.e. `‖E_x f(x)f(x)ᵀ - I‖²` under the degree weights.
pub fn dec_penalty(f: &DMatrix<f64>) -> Result<LossValueAndGradient> {
    let p = gram_minus_identity(f);
    Ok(LossValueAndGradient {
        value: frob_sq(&p),
        grad_features: (f * &p) * 4.0,
        grad_features_b: None,
        grad_raw_importance: None,
    })
}

/// Tri-factor loss `‖Ā - F diag(s) Fᵀ‖² - ‖Ā‖² + λ‖FᵀF - I‖²`, `s = softplus(raw)`.
pub fn tricl_loss(
    normalized: &NormalizedAdjacency,
    f: &DMatrix<f64>,
    raw_importance: &DVector<f64>,
    penalty_weight: f64,
) -> Result<LossValueAndGradient> {
    let a = &normalized.matrix;
    check_features(a, f)?;
    check_importance(f, raw_importance)?;
    check_penalty(penalty_weight)?;

    let s = raw_importance.map(softplus);
    let fs = scale_columns(f, &s);
    let residual = a - &fs * f.transpose();
    let tri = frob_sq(&residual) - frob_sq(a);

    let rf = &residual * f;
    let mut grad_features = (&rf * DMatrix::from_diagonal(&s)) * -4.0;
    let grad_raw = DVector::from_fn(s.len(), |j, _| {
        let diag: f64 = f.column(j).dot(&rf.column(j));
        -2.0 * diag * sigmoid(raw_importance[j])
    });

    let dec = dec_penalty(f)?;
    grad_features += dec.grad_features * penalty_weight;
    Ok(LossValueAndGradient {
        value: tri + penalty_weight * dec.value,
        grad_features,
        grad_features_b: None,
        grad_raw_importance: Some(grad_raw),
    })
}
