//! Minibatch estimators of the objectives, built from pairs drawn out of the graph.
//!
//! Positive pairs come from the joint (`A` or `P_O`), negatives from the
//! marginals. The decorrelation penalty `‖M - I‖²`, `M = E f fᵀ`, is estimated
//! by `⟨M̂₁ - I, M̂₂ - I⟩` over two independent draws, which keeps its gradient
//! unbiased. All estimators except tri-InfoNCE (log of a batch mean) are unbiased.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::entry_distribution;
use crate::error::{invalid, Error, Result};
use crate::graph::{AugmentationGraph, BipartiteGraph};
use crate::linalg::sigmoid;
use crate::losses::{EmbeddingModel, LossKind, LossValueAndGradient, Objective};
use crate::spectra::unscale_rows;

#[derive(Debug, Clone)]
pub struct BatchSampler {
    positive: WeightedIndex<f64>,
    rows: usize,
    left: WeightedIndex<f64>,
    right: WeightedIndex<f64>,
}

impl BatchSampler {
    pub fn symmetric(graph: &AugmentationGraph) -> Result<Self> {
        let marginal = marginal_distribution(&graph.degrees)?;
        Ok(Self {
            positive: entry_distribution(&graph.adjacency)?,
            rows: graph.n_nodes,
            left: marginal.clone(),
            right: marginal,
        })
    }

    pub fn bipartite(graph: &BipartiteGraph) -> Result<Self> {
        Ok(Self {
            positive: entry_distribution(&graph.joint)?,
            rows: graph.joint.nrows(),
            left: marginal_distribution(&graph.marginal_a)?,
            right: marginal_distribution(&graph.marginal_b)?,
        })
    }
}

fn marginal_distribution(p: &DVector<f64>) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(p.iter().copied()).map_err(|e| invalid(format!("cannot sample from marginal: {e}")))
}

/// One minibatch: positive pairs and independent negative pairs, of equal count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

pub fn draw_batch<R: Rng + ?Sized>(sampler: &BatchSampler, rng: &mut R, pairs: usize) -> Batch {
    let positives = (0..pairs)
        .map(|_| {
            let e = sampler.positive.sample(rng);
            (e % sampler.rows, e / sampler.rows)
        })
        .collect();
    let negatives = (0..pairs)
        .map(|_| (sampler.left.sample(rng), sampler.right.sample(rng)))
        .collect();
    Batch { positives, negatives }
}

struct Accumulator<'a> {
    fa: &'a DMatrix<f64>,
    fb: &'a DMatrix<f64>,
    s: &'a DVector<f64>,
    ga: DMatrix<f64>,
    gb: DMatrix<f64>,
    gs: DVector<f64>,
}

impl Accumulator<'_> {
    /// Adds the gradient of `coeff · f_a(x)ᵀ S f_b(y)`.
    fn bilinear(&mut self, coeff: f64, x: usize, y: usize) {
        for j in 0..self.s.len() {
            let (u, v) = (self.fa[(x, j)], self.fb[(y, j)]);
            self.ga[(x, j)] += coeff * self.s[j] * v;
            self.gb[(y, j)] += coeff * self.s[j] * u;
            self.gs[j] += coeff * u * v;
        }
    }

    fn form(&self, x: usize, y: usize) -> f64 {
        (0..self.s.len())
            .map(|j| self.fa[(x, j)] * self.s[j] * self.fb[(y, j)])
            .sum()
    }
}

/// `⟨M̂₁ - I, M̂₂ - I⟩` with its gradient added into `grad` (unscaled rows).
fn dec_estimate(table: &DMatrix<f64>, first: &[usize], second: &[usize], grad: &mut DMatrix<f64>) -> f64 {
    let k = table.ncols();
    let moment = |idx: &[usize]| {
        let mut m = DMatrix::<f64>::zeros(k, k);
        for &x in idx {
            let r = table.row(x);
            m += r.transpose() * r;
        }
        m / idx.len() as f64 - DMatrix::identity(k, k)
    };
    let (m1, m2) = (moment(first), moment(second));
    for (idx, other) in [(first, &m2), (second, &m1)] {
        let c = 2.0 / idx.len() as f64;
        for &x in idx {
            let g = (other * table.row(x).transpose()) * c;
            let mut row = grad.row_mut(x);
            row += g.transpose();
        }
    }
    m1.dot(&m2)
}

/// Minibatch estimate of an objective and its gradient at `model`.
///
/// `degrees_a` / `degrees_b` are the sample marginals of the two tables; for a
/// symmetric graph pass the degrees twice.
pub fn sampled_loss(
    objective: &Objective<'_>,
    model: &EmbeddingModel,
    batch: &Batch,
    degrees_a: &DVector<f64>,
    degrees_b: &DVector<f64>,
) -> Result<LossValueAndGradient> {
    let kind = objective.kind;
    let lambda = objective.penalty_weight;
    let k = model.k();
    if batch.positives.is_empty() || batch.negatives.is_empty() {
        return Err(invalid("empty batch"));
    }
    let two_tables = model.features_b.is_some();
    if two_tables != kind.is_bipartite() {
        return Err(invalid(format!("model tables do not match loss {}", kind.name())));
    }
    let fa = unscale_rows(&model.features, degrees_a);
    let fb = match &model.features_b {
        Some(t) => unscale_rows(t, degrees_b),
        None => fa.clone(),
    };
    let s = if kind.uses_importance() {
        model.importance()
    } else {
        DVector::from_element(k, 1.0)
    };
    let mut acc = Accumulator {
        fa: &fa,
        fb: &fb,
        s: &s,
        ga: DMatrix::zeros(fa.nrows(), k),
        gb: DMatrix::zeros(fb.nrows(), k),
        gs: DVector::zeros(k),
    };
    // Gradient terms already expressed in scaled coordinates (tri-MSE).
    let mut scaled_extra = DMatrix::zeros(fa.nrows(), k);
    let b = batch.positives.len() as f64;
    let mut value = 0.0;

    match kind {
        LossKind::Scl | LossKind::Tricl | LossKind::Triclip => {
            for &(x, y) in &batch.positives {
                value -= 2.0 * acc.form(x, y) / b;
                acc.bilinear(-2.0 / b, x, y);
            }
            let bn = batch.negatives.len() as f64;
            for &(x, y) in &batch.negatives {
                let c = acc.form(x, y);
                value += c * c / bn;
                acc.bilinear(2.0 * c / bn, x, y);
            }
        }
        LossKind::TriInfonce => {
            let negs: Vec<usize> = batch.negatives.iter().map(|p| p.1).collect();
            let bn = negs.len() as f64;
            for &(x, y) in &batch.positives {
                value -= acc.form(x, y) / b;
                acc.bilinear(-1.0 / b, x, y);
                let z: Vec<f64> = negs.iter().map(|&v| acc.form(x, v)).collect();
                let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
                let total: f64 = e.iter().sum();
                value += (zmax + (total / bn).ln()) / b;
                for (&v, w) in negs.iter().zip(&e) {
                    acc.bilinear(w / total / b, x, v);
                }
            }
        }
        LossKind::Trimse => {
            let target = objective
                .trimse_target
                .ok_or_else(|| invalid("tri-MSE needs a target table"))?;
            let online = &model.features;
            value += 2.0;
            for &(x, y) in &batch.positives {
                let on = online.row(x);
                let norm = on.norm();
                if !(norm > 0.0) {
                    return Err(Error::ZeroNormRow { row: x });
                }
                let tnorm = target.row(y).norm();
                if !(tnorm > 0.0) {
                    return Err(Error::ZeroNormRow { row: y });
                }
                let g_hat = on / norm;
                let t_hat = target.row(y) / tnorm;
                let up = DVector::from_fn(k, |j, _| -2.0 / b * s[j] * t_hat[j]);
                let radial = (0..k).map(|j| g_hat[j] * up[j]).sum::<f64>();
                for j in 0..k {
                    value -= 2.0 / b * g_hat[j] * s[j] * t_hat[j];
                    scaled_extra[(x, j)] += (up[j] - radial * g_hat[j]) / norm;
                    acc.gs[j] -= 2.0 / b * g_hat[j] * t_hat[j];
                }
            }
        }
    }

    let Accumulator { mut ga, mut gb, gs, .. } = acc;
    let lefts: Vec<usize> = batch.negatives.iter().map(|p| p.0).collect();
    let rights: Vec<usize> = batch.negatives.iter().map(|p| p.1).collect();
    if lambda > 0.0 && kind != LossKind::Scl {
        let mut dec_a = DMatrix::zeros(fa.nrows(), k);
        if two_tables {
            let pos_a: Vec<usize> = batch.positives.iter().map(|p| p.0).collect();
            let pos_b: Vec<usize> = batch.positives.iter().map(|p| p.1).collect();
            let mut dec_b = DMatrix::zeros(fb.nrows(), k);
            value += lambda * dec_estimate(&fa, &pos_a, &lefts, &mut dec_a);
            value += lambda * dec_estimate(&fb, &pos_b, &rights, &mut dec_b);
            gb += dec_b * lambda;
        } else {
            value += lambda * dec_estimate(&fa, &lefts, &rights, &mut dec_a);
        }
        ga += dec_a * lambda;
    }
    if !two_tables {
        ga += &gb;
    }

    let grad_features = unscale_rows(&ga, degrees_a) + scaled_extra;
    let grad_features_b = two_tables.then(|| unscale_rows(&gb, degrees_b));
    let grad_raw_importance = kind
        .uses_importance()
        .then(|| DVector::from_fn(k, |j, _| gs[j] * sigmoid(model.raw_importance[j])));
    Ok(LossValueAndGradient {
        value,
        grad_features,
        grad_features_b,
        grad_raw_importance,
    })
}
