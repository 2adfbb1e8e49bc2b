use std::ops::Range;

use nalgebra::DMatrix;

use super::check_labels;
use crate::error::{invalid, Result};

pub const DEFAULT_TOP_R: usize = 10;

/// Unit-normalized rows of the selected columns; zero rows stay zero.
fn normalized_rows(features: &DMatrix<f64>, cols: Range<usize>) -> DMatrix<f64> {
    let mut block = features.columns(cols.start, cols.len()).into_owned();
    for mut row in block.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    block
}

/// Other samples ordered by descending cosine similarity to `query`, ties by index.
fn ranking(sim: &DMatrix<f64>, query: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sim.nrows()).filter(|&y| y != query).collect();
    order.sort_by(|&a, &b| sim[(query, b)].total_cmp(&sim[(query, a)]));
    order
}

/// Leave-one-out k-NN accuracy using cosine similarity within each block of
/// dimensions. Votes are unweighted; ties go to the smaller class id.
pub fn knn_eval(
    features: &DMatrix<f64>,
    labels: &[usize],
    blocks: &[Range<usize>],
    neighbors: usize,
) -> Result<Vec<f64>> {
    let classes = check_labels(features, labels)?;
    let n = features.nrows();
    if neighbors == 0 || neighbors >= n {
        return Err(invalid(format!("neighbors must be in 1..{n}, got {neighbors}")));
    }
    let mut out = Vec::with_capacity(blocks.len());
    for block in blocks {
        if block.is_empty() || block.end > features.ncols() {
            return Err(invalid(format!(
                "bad dimension block {block:?} for k = {}",
                features.ncols()
            )));
        }
        let unit = normalized_rows(features, block.clone());
        let sim = &unit * unit.transpose();
        let mut correct = 0usize;
        for x in 0..n {
            let mut votes = vec![0usize; classes];
            for y in ranking(&sim, x).into_iter().take(neighbors) {
                votes[labels[y]] += 1;
            }
            let pred = (0..classes).fold(0, |b, c| if votes[c] > votes[b] { c } else { b });
            correct += usize::from(pred == labels[x]);
        }
        out.push(correct as f64 / n as f64);
    }
    Ok(out)
}

/// Mean average precision of cosine retrieval: each sample queries all
/// others, and precision is averaged over the same-class hits among the top
/// `top_r` results (a query with no hits scores 0).
pub fn retrieval_map(features: &DMatrix<f64>, labels: &[usize], top_r: usize) -> Result<f64> {
    check_labels(features, labels)?;
    let n = features.nrows();
    if top_r == 0 || top_r >= n {
        return Err(invalid(format!("top_r must be in 1..{n}, got {top_r}")));
    }
    let unit = normalized_rows(features, 0..features.ncols());
    let sim = &unit * unit.transpose();
    let mut total = 0.0;
    for q in 0..n {
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, y) in ranking(&sim, q).into_iter().take(top_r).enumerate() {
            if labels[y] == labels[q] {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        if hits > 0 {
            total += precision_sum / hits as f64;
        }
    }
    Ok(total / n as f64)
}
