//! Objectives in exact expectation (matrix) form, with analytic gradients.
//!
//! Features are held in scaled form `F_x = √d_x · f(x)`; importance is
//! parameterized through softplus, `s_j = ln(1 + exp(raw_j))`, and gradients
//! flow through that map. Every contrastive objective subtracts the constant
//! `‖Ā‖²_F` so the all-zero encoder scores 0.

mod gradcheck;
mod infonce;
mod spectral;
mod triclip;
mod trimse;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::softplus;

pub use gradcheck::{check_fn, finite_difference_check, GradCheckOptions, GradCheckReport};
pub use infonce::tri_infonce_loss;
pub use spectral::{dec_penalty, scl_loss, tricl_loss};
pub use triclip::triclip_loss;
pub use trimse::trimse_loss;

/// Default decorrelation weight λ.
pub const DEFAULT_PENALTY_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Scl,
    Tricl,
    TriInfonce,
    Triclip,
    Trimse,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Scl,
        LossKind::Tricl,
        LossKind::TriInfonce,
        LossKind::Triclip,
        LossKind::Trimse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Scl => "scl",
            LossKind::Tricl => "tricl",
            LossKind::TriInfonce => "tri_infonce",
            LossKind::Triclip => "triclip",
            LossKind::Trimse => "trimse",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn uses_importance(self) -> bool {
        self != LossKind::Scl
    }

    pub fn is_bipartite(self) -> bool {
        self == LossKind::Triclip
    }
}

/// Tabular encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    /// Scaled features `F` (N×k).
    pub features: DMatrix<f64>,
    /// Second table for two-encoder objectives (triCLIP side B).
    pub features_b: Option<DMatrix<f64>>,
    pub raw_importance: DVector<f64>,
}

impl EmbeddingModel {
    pub fn k(&self) -> usize {
        self.features.ncols()
    }

    pub fn importance(&self) -> DVector<f64> {
        self.raw_importance.map(softplus)
    }

    pub fn num_params(&self) -> usize {
        self.features.len() + self.features_b.as_ref().map_or(0, |b| b.len()) + self.raw_importance.len()
    }

    /// Column-major `F`, then `F_B` if present, then raw importance.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.features.as_slice());
        if let Some(b) = &self.features_b {
            out.extend_from_slice(b.as_slice());
        }
        out.extend_from_slice(self.raw_importance.as_slice());
        out
    }

    /// A model with this one's shapes and the given flat values.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let (n, k) = self.features.shape();
        let mut at = 0;
        let features = DMatrix::from_column_slice(n, k, &flat[at..at + n * k]);
        at += n * k;
        let features_b = self.features_b.as_ref().map(|b| {
            let (nb, kb) = b.shape();
            let m = DMatrix::from_column_slice(nb, kb, &flat[at..at + nb * kb]);
            at += nb * kb;
            m
        });
        let raw_importance = DVector::from_column_slice(&flat[at..]);
        Self {
            features,
            features_b,
            raw_importance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueAndGradient {
    pub value: f64,
    pub grad_features: DMatrix<f64>,
    pub grad_features_b: Option<DMatrix<f64>>,
    /// Absent for objectives without an importance matrix.
    pub grad_raw_importance: Option<DVector<f64>>,
}

impl LossValueAndGradient {
    /// Flattened in the layout of [`EmbeddingModel::flatten`]; a missing
    /// importance gradient is written as zeros of length `k`.
    pub fn flatten(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.grad_features.as_slice());
        if let Some(b) = &self.grad_features_b {
            out.extend_from_slice(b.as_slice());
        }
        match &self.grad_raw_importance {
            Some(g) => out.extend_from_slice(g.as_slice()),
            None => out.extend(std::iter::repeat_n(0.0, k)),
        }
        out
    }
}

/// The data an objective is evaluated against.
#[derive(Debug, Clone, Copy)]
pub enum LossTarget<'a> {
    Symmetric {
        normalized: &'a NormalizedAdjacency,
        degrees: &'a DVector<f64>,
    },
    Bipartite {
        normalized: &'a DMatrix<f64>,
    },
}

/// A loss bound to its data, evaluated on [`EmbeddingModel`]s.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub kind: LossKind,
    pub target: LossTarget<'a>,
    pub penalty_weight: f64,
    /// Stop-gradient target table for tri-MSE.
    pub trimse_target: Option<&'a DMatrix<f64>>,
}

impl Objective<'_> {
    pub fn evaluate(&self, model: &EmbeddingModel) -> Result<LossValueAndGradient> {
        let lambda = self.penalty_weight;
        match (self.kind, self.target) {
            (LossKind::Scl, LossTarget::Symmetric { normalized, .. }) => scl_loss(normalized, &model.features),
            (LossKind::Tricl, LossTarget::Symmetric { normalized, .. }) => {
                tricl_loss(normalized, &model.features, &model.raw_importance, lambda)
            }
            (LossKind::TriInfonce, LossTarget::Symmetric { normalized, degrees }) => {
                tri_infonce_loss(normalized, degrees, &model.features, &model.raw_importance, lambda)
            }
            (LossKind::Trimse, LossTarget::Symmetric { normalized, degrees }) => {
                let target = self
                    .trimse_target
                    .ok_or_else(|| invalid("tri-MSE needs a target table"))?;
                trimse_loss(
                    normalized,
                    degrees,
                    &model.features,
                    target,
                    &model.raw_importance,
                    lambda,
                )
            }
            (LossKind::Triclip, LossTarget::Bipartite { normalized }) => {
                let fb = model
                    .features_b
                    .as_ref()
                    .ok_or_else(|| invalid("triCLIP needs a side-B table"))?;
                triclip_loss(normalized, &model.features, fb, &model.raw_importance, lambda)
            }
            (kind, _) => Err(invalid(format!("loss {} does not match the graph kind", kind.name()))),
        }
    }
}

pub(crate) fn check_features(a: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() || a.nrows() != f.nrows() {
        return Err(shape(format!(
            "features are {:?} for a {:?} adjacency",
            f.shape(),
            a.shape()
        )));
    }
    Ok(())
}

pub(crate) fn check_importance(f: &DMatrix<f64>, raw: &DVector<f64>) -> Result<()> {
    if raw.len() != f.ncols() {
        return Err(shape(format!("{} importance values for k = {}", raw.len(), f.ncols())));
    }
    Ok(())
}

pub(crate) fn check_penalty(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("penalty weight must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}
