use nalgebra::{DMatrix, DVector};

use super::{check_features, check_importance, check_penalty, dec_penalty, LossValueAndGradient};
use crate::error::{shape, Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::{sigmoid, softplus};

fn unit_rows(f: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut unit = f.clone();
    let mut norms = Vec::with_capacity(f.nrows());
    for (row, mut r) in unit.row_iter_mut().enumerate() {
        let norm = r.norm();
        if !(norm > 0.0) {
            return Err(Error::ZeroNormRow { row });
        }
        r /= norm;
        norms.push(norm);
    }
    Ok((unit, norms))
}

/// Non-contrastive tri-factor alignment with a stop-gradient target table:
///
/// ```text
/// 2 - 2 Σ_{x,x⁺} A[x,x⁺] · g(x)ᵀ S f(x⁺) / (‖g(x)‖ ‖f(x⁺)‖) + λ‖F_onlineᵀ F_online - I‖²
/// ```
///
/// Only the online table and the importance receive gradients. Row norms are
/// taken on the scaled tables, which point the same way as the unscaled ones.
pub fn trimse_loss(
    normalized: &NormalizedAdjacency,
    degrees: &DVector<f64>,
    online: &DMatrix<f64>,
    target: &DMatrix<f64>,
    raw_importance: &DVector<f64>,
    penalty_weight: f64,
) -> Result<LossValueAndGradient> {
    let abar = &normalized.matrix;
    check_features(abar, online)?;
    check_features(abar, target)?;
    if online.ncols() != target.ncols() {
        return Err(shape(format!(
            "online k = {}, target k = {}",
            online.ncols(),
            target.ncols()
        )));
    }
    check_importance(online, raw_importance)?;
    check_penalty(penalty_weight)?;
    let n = abar.nrows();
    if degrees.len() != n {
        return Err(shape(format!("{} degrees for {} nodes", degrees.len(), n)));
    }

    let s = raw_importance.map(softplus);
    let (g_hat, norms) = unit_rows(online)?;
    let (t_hat, _) = unit_rows(target)?;
    let adjacency = DMatrix::from_fn(n, n, |x, y| abar[(x, y)] * (degrees[x] * degrees[y]).sqrt());
    // pulled[x] = Σ_y A[x,y] f̂(y)
    let pulled = &adjacency * &t_hat;

    let mut alignment = 0.0;
    let mut grad_raw = DVector::zeros(s.len());
    for j in 0..s.len() {
        let c = g_hat.column(j).dot(&pulled.column(j));
        alignment += s[j] * c;
        grad_raw[j] = -2.0 * c * sigmoid(raw_importance[j]);
    }

    let mut grad_features = DMatrix::zeros(n, s.len());
    for x in 0..n {
        let g = g_hat.row(x);
        let upstream = DVector::from_fn(s.len(), |j, _| -2.0 * s[j] * pulled[(x, j)]);
        let radial = g.transpose().dot(&upstream);
        for j in 0..s.len() {
            grad_features[(x, j)] = (upstream[j] - radial * g[j]) / norms[x];
        }
    }

    let dec = dec_penalty(online)?;
    grad_features += dec.grad_features * penalty_weight;
    Ok(LossValueAndGradient {
        value: 2.0 - 2.0 * alignment + penalty_weight * dec.value,
        grad_features,
        grad_features_b: None,
        grad_raw_importance: Some(grad_raw),
    })
}
