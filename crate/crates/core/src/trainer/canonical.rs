use nalgebra::{DMatrix, DVector};

use super::TrainedModel;
use crate::error::{invalid, Error, Result};
use crate::spectra::unscale_rows;

fn anchor(column: impl Iterator<Item = f64>, tolerance: f64) -> Option<(usize, f64)> {
    column.enumerate().find(|(_, v)| v.abs() > tolerance)
}

/// Fixes each column's sign so that its anchor entry, the first with
/// magnitude above `tolerance`, is negative. Returns the anchor rows.
pub fn canonicalize_feature_signs(features: &mut DMatrix<f64>, tolerance: f64) -> Result<Vec<usize>> {
    let mut anchors = Vec::with_capacity(features.ncols());
    for j in 0..features.ncols() {
        let (row, value) =
            anchor(features.column(j).iter().copied(), tolerance).ok_or(Error::DeadDimension { dim: j, tolerance })?;
        if value > 0.0 {
            features.column_mut(j).neg_mut();
        }
        anchors.push(row);
    }
    Ok(anchors)
}

/// Errors unless every column already satisfies the anchor sign rule.
pub fn check_canonical(features: &DMatrix<f64>, tolerance: f64) -> Result<()> {
    for j in 0..features.ncols() {
        match anchor(features.column(j).iter().copied(), tolerance) {
            None => return Err(Error::DeadDimension { dim: j, tolerance }),
            Some((_, v)) if v > 0.0 => return Err(Error::NotCanonical { dim: j }),
            Some(_) => {}
        }
    }
    Ok(())
}

/// Sign-fixes every dimension of a trained model.
///
/// Anchors are chosen on the unscaled features `f(x) = F_x/√d_x` of side A
/// (`degrees` are its sample marginals); side B and the tri-MSE target flip
/// with side A so the bilinear similarity is unchanged. A flipped dimension
/// ends with a negative anchor coordinate.
pub fn canonicalize_signs(trained: &TrainedModel, degrees: &DVector<f64>) -> Result<TrainedModel> {
    if degrees.len() != trained.model.features.nrows() {
        return Err(invalid(format!(
            "{} degrees for {} feature rows",
            degrees.len(),
            trained.model.features.nrows()
        )));
    }
    let tolerance = trained.config.anchor_tolerance;
    let unscaled = unscale_rows(&trained.model.features, degrees);
    let mut out = trained.clone();
    out.anchors.clear();
    for j in 0..unscaled.ncols() {
        let (row, value) =
            anchor(unscaled.column(j).iter().copied(), tolerance).ok_or(Error::DeadDimension { dim: j, tolerance })?;
        if value > 0.0 {
            out.model.features.column_mut(j).neg_mut();
            if let Some(b) = out.model.features_b.as_mut() {
                b.column_mut(j).neg_mut();
            }
            if let Some(t) = out.target.as_mut() {
                t.column_mut(j).neg_mut();
            }
        }
        out.anchors.push(row);
    }
    out.canonicalized = true;
    Ok(out)
}

/// Permutes dimensions so importance is descending, ties kept in original
/// order. Returns the model and the permutation (`new j ← old perm[j]`).
pub fn sort_by_importance(trained: &TrainedModel) -> (TrainedModel, Vec<usize>) {
    let s = trained.model.importance();
    let mut perm: Vec<usize> = (0..s.len()).collect();
    // Stable sort keeps equal importances in index order.
    perm.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let pick = |m: &DMatrix<f64>| m.select_columns(&perm);
    let mut out = trained.clone();
    out.model.features = pick(&trained.model.features);
    out.model.features_b = trained.model.features_b.as_ref().map(pick);
    out.target = trained.target.as_ref().map(pick);
    out.model.raw_importance = trained.model.raw_importance.select_rows(&perm);
    if !trained.anchors.is_empty() {
        out.anchors = perm.iter().map(|&j| trained.anchors[j]).collect();
    }
    out.sorted = true;
    (out, perm)
}

/// The top-`m` unscaled feature columns `f^(m)` of a sorted, canonicalized model.
pub fn select_top_features(trained: &TrainedModel, degrees: &DVector<f64>, m: usize) -> Result<DMatrix<f64>> {
    if !trained.sorted || !trained.canonicalized {
        return Err(invalid("select top features only from a sorted, canonicalized model"));
    }
    let k = trained.model.k();
    if m == 0 || m > k {
        return Err(invalid(format!("m must be in 1..={k}, got {m}")));
    }
    if degrees.len() != trained.model.features.nrows() {
        return Err(invalid("degree vector does not match the feature table"));
    }
    Ok(unscale_rows(
        &trained.model.features.columns(0, m).into_owned(),
        degrees,
    ))
}
