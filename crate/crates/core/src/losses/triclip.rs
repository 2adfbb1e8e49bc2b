use nalgebra::{DMatrix, DVector};

use super::{check_importance, check_penalty, dec_penalty, LossValueAndGradient};
use crate::error::{shape, Result};
use crate::linalg::{frob_sq, scale_columns, sigmoid, softplus};

/// Two-encoder tri-factor loss on a bipartite graph:
///
/// ```text
/// ‖P̄ - F_A diag(s) F_Bᵀ‖² - ‖P̄‖² + λ(‖F_AᵀF_A - I‖² + ‖F_BᵀF_B - I‖²)
/// ```
///
/// `normalized` is the N_A×N_B matrix `P(a,b)/√(P_A(a) P_B(b))`; both feature
/// tables are scaled by the square root of their own marginal.
pub fn triclip_loss(
    normalized: &DMatrix<f64>,
    fa: &DMatrix<f64>,
    fb: &DMatrix<f64>,
    raw_importance: &DVector<f64>,
    penalty_weight: f64,
) -> Result<LossValueAndGradient> {
    if fa.nrows() != normalized.nrows() || fb.nrows() != normalized.ncols() || fa.ncols() != fb.ncols() {
        return Err(shape(format!(
            "feature tables {:?} and {:?} for a {:?} joint",
            fa.shape(),
            fb.shape(),
            normalized.shape()
        )));
    }
    check_importance(fa, raw_importance)?;
    check_penalty(penalty_weight)?;

    let s = raw_importance.map(softplus);
    let fa_s = scale_columns(fa, &s);
    let residual = normalized - &fa_s * fb.transpose();
    let tri = frob_sq(&residual) - frob_sq(normalized);

    let r_fb = &residual * fb;
    let mut grad_a = scale_columns(&r_fb, &s) * -2.0;
    let mut grad_b = scale_columns(&(residual.transpose() * fa), &s) * -2.0;
    let grad_raw = DVector::from_fn(s.len(), |j, _| {
        -2.0 * fa.column(j).dot(&r_fb.column(j)) * sigmoid(raw_importance[j])
    });

    let dec_a = dec_penalty(fa)?;
    let dec_b = dec_penalty(fb)?;
    grad_a += dec_a.grad_features * penalty_weight;
    grad_b += dec_b.grad_features * penalty_weight;
    Ok(LossValueAndGradient {
        value: tri + penalty_weight * (dec_a.value + dec_b.value),
        grad_features: grad_a,
        grad_features_b: Some(grad_b),
        grad_raw_importance: Some(grad_raw),
    })
}
