//! Spectral ground truth for the normalized adjacency.
//!
//! [`decompose`] returns a truncated SVD with a deterministic sign
//! convention. For symmetric input it goes through the symmetric
//! eigendecomposition, so `U` holds eigenvectors and `V[:, i] = sign(λ_i) U[:, i]`.
//! The closed forms build the optimal encoders of the two-factor and
//! three-factor objectives from it.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::graph::{
    generate_bipartite_graph, generate_class_graph, normalize, normalize_bipartite, AugmentationGraph, BipartiteGraph,
    BipartiteSpec, ClassGraphSpec,
};
use crate::linalg::{orthogonality_defect, rows};

/// Consecutive singular values closer than this are reported as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-6;

const EIG_EPS: f64 = 1e-15;
const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReference {
    pub singular_values: DVector<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub k: usize,
    /// Full descending spectrum (all min(rows, cols) values), for tail sums.
    pub full_spectrum: DVector<f64>,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SpectralJson {
    sigma: Vec<f64>,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    k: usize,
}

impl SpectralReference {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&SpectralJson {
            sigma: self.singular_values.iter().copied().collect(),
            u: rows::to_rows(&self.left),
            v: rows::to_rows(&self.right),
            k: self.k,
        })?)
    }

    /// Restores the truncated factors; the full spectrum is not part of the
    /// format and is set to the retained values.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpectralJson = serde_json::from_str(text)?;
        let sigma = DVector::from_vec(doc.sigma);
        Ok(Self {
            left: rows::from_rows(&doc.u, doc.k).map_err(invalid)?,
            right: rows::from_rows(&doc.v, doc.k).map_err(invalid)?,
            full_spectrum: sigma.clone(),
            singular_values: sigma,
            k: doc.k,
            warnings: Vec::new(),
        })
    }

    /// Σ_{i>k} σ_i².
    pub fn tail_energy(&self) -> f64 {
        self.full_spectrum.iter().skip(self.k).map(|s| s * s).sum()
    }
}

/// Flip `v` so its largest-magnitude entry (lowest index on ties) is positive.
fn sign_of_largest(v: &[f64]) -> f64 {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).copied().unwrap_or(0.0) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

/// Truncated SVD keeping the top `k` triplets.
pub fn decompose(m: &DMatrix<f64>, k: usize) -> Result<SpectralReference> {
    let (rows_n, cols_n) = m.shape();
    if k > rows_n.min(cols_n) {
        return Err(invalid(format!(
            "rank {k} exceeds min dimension {}",
            rows_n.min(cols_n)
        )));
    }
    if is_symmetric(m) {
        decompose_symmetric(m, k)
    } else {
        decompose_rectangular(m, k)
    }
}

fn residual_of(m: &DMatrix<f64>, u: &DMatrix<f64>, s: &DVector<f64>, v: &DMatrix<f64>) -> f64 {
    let recon = u * DMatrix::from_diagonal(s) * v.transpose();
    (m - recon).abs().max()
}

fn decompose_symmetric(m: &DMatrix<f64>, k: usize) -> Result<SpectralReference> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), EIG_EPS, MAX_ITERATIONS).ok_or_else(|| Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual: f64::NAN,
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .partial_cmp(&eig.eigenvalues[a].abs())
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let full = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i].abs()));
    let mut left = DMatrix::zeros(n, k);
    let mut right = DMatrix::zeros(n, k);
    for (j, &i) in order.iter().take(k).enumerate() {
        let col: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let sign = sign_of_largest(&col);
        let lambda_sign = if eig.eigenvalues[i] < 0.0 { -1.0 } else { 1.0 };
        for x in 0..n {
            left[(x, j)] = sign * col[x];
            right[(x, j)] = lambda_sign * sign * col[x];
        }
    }
    let sigma = full.rows(0, k).into_owned();

    let all_u = DMatrix::from_fn(n, n, |x, j| eig.eigenvectors[(x, order[j])]);
    let all_v = DMatrix::from_fn(n, n, |x, j| {
        let i = order[j];
        let s = if eig.eigenvalues[i] < 0.0 { -1.0 } else { 1.0 };
        s * eig.eigenvectors[(x, i)]
    });
    let residual = residual_of(m, &all_u, &full, &all_v);
    if !(residual <= 1e-8 * (1.0 + m.abs().max())) {
        return Err(Error::NoConvergence {
            iterations: MAX_ITERATIONS,
            residual,
        });
    }
    Ok(with_warnings(sigma, left, right, k, full))
}

fn decompose_rectangular(m: &DMatrix<f64>, k: usize) -> Result<SpectralReference> {
    let (rows_n, cols_n) = m.shape();
    let r = rows_n.min(cols_n);
    let svd = SVD::try_new(m.clone(), true, true, EIG_EPS, MAX_ITERATIONS).ok_or_else(|| Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual: f64::NAN,
    })?;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
            .then(a.cmp(&b))
    });
    let full = DVector::from_iterator(r, order.iter().map(|&i| svd.singular_values[i]));
    let all_u = DMatrix::from_fn(rows_n, r, |x, j| u[(x, order[j])]);
    let all_v = DMatrix::from_fn(cols_n, r, |y, j| vt[(order[j], y)]);
    let residual = residual_of(m, &all_u, &full, &all_v);
    if !(residual <= 1e-8 * (1.0 + m.abs().max())) {
        return Err(Error::NoConvergence {
            iterations: MAX_ITERATIONS,
            residual,
        });
    }
    let mut left = all_u.columns(0, k).into_owned();
    let mut right = all_v.columns(0, k).into_owned();
    for j in 0..k {
        let col: Vec<f64> = left.column(j).iter().copied().collect();
        if sign_of_largest(&col) < 0.0 {
            left.column_mut(j).neg_mut();
            right.column_mut(j).neg_mut();
        }
    }
    let sigma = full.rows(0, k).into_owned();
    Ok(with_warnings(sigma, left, right, k, full))
}

fn with_warnings(
    sigma: DVector<f64>,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    k: usize,
    full: DVector<f64>,
) -> SpectralReference {
    let report = gaps(&full, k);
    let warnings = report
        .iter()
        .filter(|g| g.degenerate)
        .map(|g| format!("degenerate spectrum: σ_{} - σ_{} = {:.3e}", g.index, g.index + 1, g.gap))
        .collect();
    SpectralReference {
        singular_values: sigma,
        left,
        right,
        k,
        full_spectrum: full,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEntry {
    /// One-based index `i` of the gap `σ_i - σ_{i+1}`.
    pub index: usize,
    pub gap: f64,
    pub degenerate: bool,
}

fn gaps(spectrum: &DVector<f64>, k: usize) -> Vec<GapEntry> {
    // Gaps inside the retained block plus the one separating it from the tail.
    let last = k.min(spectrum.len().saturating_sub(1));
    (0..last)
        .map(|i| {
            let gap = spectrum[i] - spectrum[i + 1];
            GapEntry {
                index: i + 1,
                gap,
                degenerate: gap < DEGENERACY_GAP,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub gaps: Vec<GapEntry>,
    pub degenerate: bool,
}

impl GapReport {
    pub fn min_gap(&self) -> f64 {
        self.gaps.iter().map(|g| g.gap).fold(f64::INFINITY, f64::min)
    }
}

/// Consecutive gaps `σ_i - σ_{i+1}` for `i = 1..=k` (bounded by the spectrum length).
pub fn spectral_gap_report(reference: &SpectralReference, k: usize) -> GapReport {
    let gaps = gaps(&reference.full_spectrum, k);
    let degenerate = gaps.iter().any(|g| g.degenerate);
    GapReport { gaps, degenerate }
}

/// Optimal two-factor encoder, `f(x) = (1/√d_x) (U_x diag(√σ) R)ᵀ`.
///
/// Returns the unscaled features `f(x)` as rows.
pub fn scl_closed_form(
    reference: &SpectralReference,
    degrees: &DVector<f64>,
    rotation: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let k = reference.k;
    let n = reference.left.nrows();
    if degrees.len() != n {
        return Err(shape(format!("{} degrees for {} rows", degrees.len(), n)));
    }
    let mut scaled = reference.left.clone();
    for j in 0..k {
        scaled.column_mut(j).scale_mut(reference.singular_values[j].sqrt());
    }
    if let Some(r) = rotation {
        if r.shape() != (k, k) {
            return Err(shape(format!("rotation is {:?}, expected {k}x{k}", r.shape())));
        }
        let deviation = orthogonality_defect(r);
        if deviation > 1e-10 {
            return Err(Error::NotOrthogonal { deviation });
        }
        scaled = scaled * r;
    }
    Ok(unscale_rows(&scaled, degrees))
}

/// `f(x) = F_x / √d_x`.
pub fn unscale_rows(scaled: &DMatrix<f64>, degrees: &DVector<f64>) -> DMatrix<f64> {
    let mut out = scaled.clone();
    for (x, mut row) in out.row_iter_mut().enumerate() {
        row /= degrees[x].sqrt();
    }
    out
}

/// `F_x = √d_x · f(x)`.
pub fn scale_rows(features: &DMatrix<f64>, degrees: &DVector<f64>) -> DMatrix<f64> {
    let mut out = features.clone();
    for (x, mut row) in out.row_iter_mut().enumerate() {
        row *= degrees[x].sqrt();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthModel {
    /// Unscaled features `f*(x)` as rows.
    pub features: DMatrix<f64>,
    pub importance: DVector<f64>,
    pub convention_note: String,
    pub warnings: Vec<String>,
}

/// Optimal three-factor encoder: `f_j(x) = U_{x,j} / √d_x`, `S = diag(σ_1..σ_k)`.
pub fn tricl_closed_form(reference: &SpectralReference, degrees: &DVector<f64>) -> Result<GroundTruthModel> {
    let n = reference.left.nrows();
    if degrees.len() != n {
        return Err(shape(format!("{} degrees for {} rows", degrees.len(), n)));
    }
    Ok(GroundTruthModel {
        features: unscale_rows(&reference.left, degrees),
        importance: reference.singular_values.clone(),
        convention_note: "columns signed so the largest-magnitude entry of each singular vector is positive"
            .to_string(),
        warnings: reference.warnings.clone(),
    })
}

/// Generates class graphs at seeds `template.seed, template.seed + 1, …` and
/// keeps the first `count` whose top-`k` consecutive singular-value gaps of `Ā`
/// are all at least `min_gap`.
pub fn search_gapped_class_graphs(
    template: &ClassGraphSpec,
    k: usize,
    min_gap: f64,
    count: usize,
    max_attempts: usize,
) -> Result<Vec<AugmentationGraph>> {
    let mut found = Vec::with_capacity(count);
    for offset in 0..max_attempts as u64 {
        if found.len() == count {
            break;
        }
        let spec = ClassGraphSpec {
            seed: template.seed.wrapping_add(offset),
            ..template.clone()
        };
        let g = generate_class_graph(&spec)?;
        let reference = decompose(&normalize(&g)?.matrix, k)?;
        if spectral_gap_report(&reference, k).min_gap() >= min_gap {
            found.push(g);
        }
    }
    if found.len() < count {
        return Err(invalid(format!(
            "only {} of {count} graphs with gap >= {min_gap} in {max_attempts} seeds",
            found.len()
        )));
    }
    Ok(found)
}

/// Bipartite analogue of [`search_gapped_class_graphs`], on the singular values of `P̄`.
pub fn search_gapped_bipartite_graphs(
    template: &BipartiteSpec,
    k: usize,
    min_gap: f64,
    count: usize,
    max_attempts: usize,
) -> Result<Vec<BipartiteGraph>> {
    let mut found = Vec::with_capacity(count);
    for offset in 0..max_attempts as u64 {
        if found.len() == count {
            break;
        }
        let spec = BipartiteSpec {
            seed: template.seed.wrapping_add(offset),
            ..template.clone()
        };
        let g = generate_bipartite_graph(&spec)?;
        let reference = decompose(&normalize_bipartite(&g)?, k)?;
        if spectral_gap_report(&reference, k).min_gap() >= min_gap {
            found.push(g);
        }
    }
    if found.len() < count {
        return Err(invalid(format!(
            "only {} of {count} bipartite graphs with gap >= {min_gap} in {max_attempts} seeds",
            found.len()
        )));
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::linalg::{random_orthogonal, standard_normal_matrix};

    fn two_node() -> DMatrix<f64> {
        dmatrix![0.6, 0.4; 0.4, 0.6]
    }

    #[test]
    fn two_node_eigendecomposition() {
        let r = decompose(&two_node(), 2).unwrap();
        assert!((r.singular_values[0] - 1.0).abs() < 1e-12);
        assert!((r.singular_values[1] - 0.2).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // Largest-magnitude entry positive, ties to the lowest index.
        assert!((r.left[(0, 0)] - h).abs() < 1e-12 && (r.left[(1, 0)] - h).abs() < 1e-12);
        assert!((r.left[(0, 1)] - h).abs() < 1e-12 && (r.left[(1, 1)] + h).abs() < 1e-12);
        assert!(r.warnings.is_empty());
        assert_eq!(r.left, r.right);
    }

    #[test]
    fn identity_is_flagged_degenerate() {
        let r = decompose(&DMatrix::identity(5, 5), 3).unwrap();
        assert!(r.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-14));
        assert!(!r.warnings.is_empty());
        let report = spectral_gap_report(&r, 3);
        assert!(report.degenerate);
        assert!(report.gaps.iter().all(|g| g.gap.abs() < 1e-14));
    }

    #[test]
    fn gap_report_two_node() {
        let r = decompose(&two_node(), 1).unwrap();
        let report = spectral_gap_report(&r, 1);
        assert_eq!(report.gaps.len(), 1);
        assert_eq!(report.gaps[0].index, 1);
        assert!((report.gaps[0].gap - 0.8).abs() < 1e-12);
        assert!(!report.degenerate);
    }

    #[test]
    fn gap_report_well_separated() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, 0.7, 0.5, 0.3, 0.29]));
        let r = decompose(&m, 3).unwrap();
        assert!(!spectral_gap_report(&r, 3).degenerate);
    }

    #[test]
    fn rectangular_residual_matches_tail_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = standard_normal_matrix(&mut rng, 50, 30);
        let full = decompose(&m, 30).unwrap();
        for k in [1, 5, 10, 29] {
            let r = decompose(&m, k).unwrap();
            let recon = &r.left * DMatrix::from_diagonal(&r.singular_values) * r.right.transpose();
            let residual: f64 = (&m - recon).iter().map(|v| v * v).sum();
            let tail: f64 = full.singular_values.iter().skip(k).map(|s| s * s).sum();
            assert!((residual - tail).abs() < 1e-8, "k={k}: {residual} vs {tail}");
            assert!((r.tail_energy() - tail).abs() < 1e-8);
        }
    }

    #[test]
    fn decomposition_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = standard_normal_matrix(&mut rng, 12, 12);
        let sym = &g + g.transpose();
        let a = decompose(&sym, 5).unwrap();
        let b = decompose(&sym, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_with_negative_eigenvalues() {
        let m = dmatrix![0.0, 1.0; 1.0, 0.0];
        let r = decompose(&m, 2).unwrap();
        assert!((r.singular_values[0] - 1.0).abs() < 1e-12);
        let recon = &r.left * DMatrix::from_diagonal(&r.singular_values) * r.right.transpose();
        assert!((recon - m).abs().max() < 1e-12);
    }

    #[test]
    fn rank_above_dimensions_is_rejected() {
        assert!(decompose(&two_node(), 3).is_err());
    }

    #[test]
    fn scl_closed_form_two_node() {
        let r = decompose(&two_node(), 2).unwrap();
        let d = DVector::from_vec(vec![0.5, 0.5]);
        let f = scl_closed_form(&r, &d, None).unwrap();
        let s2 = 0.2_f64.sqrt();
        assert!((f[(0, 0)] - 1.0).abs() < 1e-12 && (f[(0, 1)] - s2).abs() < 1e-12);
        assert!((f[(1, 0)] - 1.0).abs() < 1e-12 && (f[(1, 1)] + s2).abs() < 1e-12);
    }

    #[test]
    fn scl_closed_form_rejects_non_orthogonal_rotation() {
        let r = decompose(&two_node(), 2).unwrap();
        let d = DVector::from_vec(vec![0.5, 0.5]);
        let bad = dmatrix![1.0, 0.1; 0.0, 1.0];
        assert!(matches!(
            scl_closed_form(&r, &d, Some(&bad)),
            Err(Error::NotOrthogonal { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let good = random_orthogonal(&mut rng, 2);
        assert!(scl_closed_form(&r, &d, Some(&good)).is_ok());
    }

    #[test]
    fn zero_rank_closed_form_is_empty() {
        let r = decompose(&two_node(), 0).unwrap();
        let d = DVector::from_vec(vec![0.5, 0.5]);
        let f = scl_closed_form(&r, &d, None).unwrap();
        assert_eq!(f.shape(), (2, 0));
        assert!((r.tail_energy() - 1.04).abs() < 1e-12);
    }

    #[test]
    fn tricl_closed_form_two_node() {
        let r = decompose(&two_node(), 2).unwrap();
        let d = DVector::from_vec(vec![0.5, 0.5]);
        let gt = tricl_closed_form(&r, &d).unwrap();
        assert!((gt.importance[0] - 1.0).abs() < 1e-12);
        assert!((gt.importance[1] - 0.2).abs() < 1e-12);
        for (x, expected) in [(0, [1.0, 1.0]), (1, [1.0, -1.0])] {
            for j in 0..2 {
                assert!((gt.features[(x, j)] - expected[j]).abs() < 1e-12);
            }
        }
        // Decorrelation under the degree weights.
        let scaled = scale_rows(&gt.features, &d);
        let gram = scaled.transpose() * scaled;
        assert!((gram - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-10);
    }

    #[test]
    fn spectral_json_round_trip() {
        let r = decompose(&two_node(), 2).unwrap();
        let back = SpectralReference::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.singular_values, r.singular_values);
        assert_eq!(back.left, r.left);
        assert_eq!(back.right, r.right);
    }
}
