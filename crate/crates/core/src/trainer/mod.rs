//! Gradient-based fitting of tabular encoders, followed by sign fixing and
//! importance sorting.

mod canonical;
mod sampled;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{normalize, normalize_bipartite, AugmentationGraph, BipartiteGraph, NormalizedAdjacency};
use crate::linalg::{rows, softplus_inverse_of_one, standard_normal_matrix};
use crate::losses::{EmbeddingModel, LossKind, LossTarget, LossValueAndGradient, Objective};

pub use canonical::{
    canonicalize_feature_signs, canonicalize_signs, check_canonical, select_top_features, sort_by_importance,
};
pub use sampled::{draw_batch, sampled_loss, Batch, BatchSampler};

/// Divergence guard: abort once the loss exceeds this multiple of `max(|L_0|, 1)`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Heavy-ball gradient descent, `v ← μv − η∇L; θ ← θ + v`.
    Momentum,
    /// Per-coordinate adaptive steps with β₁ = 0.9, β₂ = 0.999.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Full-expectation gradients.
    Exact,
    /// Minibatch gradients from pairs drawn out of the graph.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub k: usize,
    #[serde(rename = "lambda")]
    pub penalty_weight: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Heavy-ball coefficient μ; unused by Adam.
    pub momentum: f64,
    pub steps: usize,
    pub mode: TrainMode,
    pub batch_pairs: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub anchor_tolerance: f64,
    /// Target-table moving-average coefficient (tri-MSE only).
    pub ema_coefficient: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Tricl,
            k: 8,
            penalty_weight: crate::losses::DEFAULT_PENALTY_WEIGHT,
            optimizer: OptimizerKind::Momentum,
            learning_rate: 0.05,
            momentum: 0.9,
            steps: 5000,
            mode: TrainMode::Exact,
            batch_pairs: 256,
            seed: 0,
            init_scale: 0.5,
            anchor_tolerance: 1e-8,
            ema_coefficient: 0.99,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.k == 0 {
            return Err(invalid("k must be >= 1"));
        }
        if self.mode == TrainMode::Sampled && self.batch_pairs == 0 {
            return Err(invalid("batch_pairs must be >= 1 in sampled mode"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.penalty_weight >= 0.0) || !self.penalty_weight.is_finite() {
            return Err(invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.penalty_weight
            )));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(invalid(format!(
                "init_scale must be finite and >= 0, got {}",
                self.init_scale
            )));
        }
        if !(self.anchor_tolerance >= 0.0) {
            return Err(invalid(format!(
                "anchor_tolerance must be >= 0, got {}",
                self.anchor_tolerance
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_coefficient) {
            return Err(invalid(format!(
                "ema_coefficient must be in [0, 1], got {}",
                self.ema_coefficient
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: EmbeddingModel,
    /// Stop-gradient target table (tri-MSE only), scaled like `model.features`.
    pub target: Option<DMatrix<f64>>,
    /// Loss before every step, then the final loss; `steps + 1` entries.
    pub history: Vec<f64>,
    pub canonicalized: bool,
    pub sorted: bool,
    /// Per-dimension anchor sample `x_{0j}`; empty until canonicalized.
    pub anchors: Vec<usize>,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainedModelJson {
    #[serde(rename = "F")]
    features: Vec<Vec<f64>>,
    #[serde(rename = "F_B", default, skip_serializing_if = "Option::is_none")]
    features_b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<Vec<Vec<f64>>>,
    raw_importance: Vec<f64>,
    s: Vec<f64>,
    anchors: Vec<usize>,
    canonicalized: bool,
    sorted: bool,
    config: TrainConfig,
    history: Vec<f64>,
}

impl TrainedModel {
    pub fn final_loss(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }

    pub fn to_json(&self) -> Result<String> {
        let json = TrainedModelJson {
            features: rows::to_rows(&self.model.features),
            features_b: self.model.features_b.as_ref().map(rows::to_rows),
            target: self.target.as_ref().map(rows::to_rows),
            raw_importance: self.model.raw_importance.iter().copied().collect(),
            s: self.model.importance().iter().copied().collect(),
            anchors: self.anchors.clone(),
            canonicalized: self.canonicalized,
            sorted: self.sorted,
            config: self.config.clone(),
            history: self.history.clone(),
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let json: TrainedModelJson = serde_json::from_str(text)?;
        let k = json.raw_importance.len();
        let table = |r: &[Vec<f64>]| rows::from_rows(r, k).map_err(invalid);
        Ok(Self {
            model: EmbeddingModel {
                features: table(&json.features)?,
                features_b: json.features_b.as_deref().map(table).transpose()?,
                raw_importance: DVector::from_vec(json.raw_importance),
            },
            target: json.target.as_deref().map(table).transpose()?,
            history: json.history,
            canonicalized: json.canonicalized,
            sorted: json.sorted,
            anchors: json.anchors,
            config: json.config,
        })
    }
}

/// `F` entries i.i.d. `N(0, init_scale²/k)`; raw importance `ln(e − 1)` so every `s_j = 1`.
pub fn init_model(n: usize, k: usize, seed: u64, init_scale: f64) -> EmbeddingModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with(&mut rng, n, None, k, init_scale)
}

fn init_with(rng: &mut ChaCha8Rng, n: usize, n_b: Option<usize>, k: usize, init_scale: f64) -> EmbeddingModel {
    let std = init_scale / (k as f64).sqrt();
    let features = standard_normal_matrix(rng, n, k) * std;
    let features_b = n_b.map(|nb| standard_normal_matrix(rng, nb, k) * std);
    EmbeddingModel {
        features,
        features_b,
        raw_importance: DVector::from_element(k, softplus_inverse_of_one()),
    }
}

enum Data<'a> {
    Symmetric {
        graph: &'a AugmentationGraph,
        normalized: NormalizedAdjacency,
    },
    Bipartite {
        graph: &'a BipartiteGraph,
        normalized: DMatrix<f64>,
    },
}

/// Fits `config.loss_kind` on a symmetric augmentation graph.
pub fn train(graph: &AugmentationGraph, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if config.loss_kind.is_bipartite() {
        return Err(invalid(format!(
            "loss {} needs a bipartite graph",
            config.loss_kind.name()
        )));
    }
    let normalized = normalize(graph)?;
    run(Data::Symmetric { graph, normalized }, config)
}

/// Fits triCLIP on a bipartite graph.
pub fn train_bipartite(graph: &BipartiteGraph, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if !config.loss_kind.is_bipartite() {
        return Err(invalid(format!(
            "loss {} needs a symmetric graph",
            config.loss_kind.name()
        )));
    }
    let normalized = normalize_bipartite(graph)?;
    run(Data::Bipartite { graph, normalized }, config)
}

struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    momentum: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl Optimizer {
    fn new(config: &TrainConfig, dim: usize) -> Self {
        Self {
            kind: config.optimizer,
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            first: vec![0.0; dim],
            second: vec![0.0; dim],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Momentum => {
                for ((p, v), g) in params.iter_mut().zip(&mut self.first).zip(grad) {
                    *v = self.momentum * *v - self.learning_rate * g;
                    *p += *v;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.step);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step);
                for (((p, m), v), g) in params.iter_mut().zip(&mut self.first).zip(&mut self.second).zip(grad) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
                }
            }
        }
    }
}

fn run(data: Data<'_>, config: &TrainConfig) -> Result<TrainedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, n_b) = match &data {
        Data::Symmetric { graph, .. } => (graph.n_nodes, None),
        Data::Bipartite { graph, .. } => (graph.joint.nrows(), Some(graph.joint.ncols())),
    };
    let mut model = init_with(&mut rng, n, n_b, config.k, config.init_scale);
    let mut target = (config.loss_kind == LossKind::Trimse).then(|| model.features.clone());

    let loss_target = match &data {
        Data::Symmetric { graph, normalized } => LossTarget::Symmetric {
            normalized,
            degrees: &graph.degrees,
        },
        Data::Bipartite { normalized, .. } => LossTarget::Bipartite { normalized },
    };
    let sampler = match config.mode {
        TrainMode::Exact => None,
        TrainMode::Sampled => Some(match &data {
            Data::Symmetric { graph, .. } => BatchSampler::symmetric(graph)?,
            Data::Bipartite { graph, .. } => BatchSampler::bipartite(graph)?,
        }),
    };
    let (degrees_a, degrees_b) = match &data {
        Data::Symmetric { graph, .. } => (&graph.degrees, &graph.degrees),
        Data::Bipartite { graph, .. } => (&graph.marginal_a, &graph.marginal_b),
    };
    // Batches come from their own stream so exact and sampled runs share an initialization.
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    batch_rng.set_stream(1);

    let mut optimizer = Optimizer::new(config, model.num_params());
    let mut history = Vec::with_capacity(config.steps + 1);
    let mut initial = None;
    for step in 0..=config.steps {
        let objective = Objective {
            kind: config.loss_kind,
            target: loss_target,
            penalty_weight: config.penalty_weight,
            trimse_target: target.as_ref(),
        };
        let exact = objective.evaluate(&model)?;
        let l0 = *initial.get_or_insert(exact.value);
        if !exact.value.is_finite() || exact.value > DIVERGENCE_FACTOR * l0.abs().max(1.0) {
            return Err(Error::Diverged {
                step,
                loss: exact.value,
                initial: l0,
            });
        }
        history.push(exact.value);
        if step == config.steps {
            break;
        }
        let grad: LossValueAndGradient = match &sampler {
            None => exact,
            Some(sampler) => {
                let batch = draw_batch(sampler, &mut batch_rng, config.batch_pairs);
                sampled_loss(&objective, &model, &batch, degrees_a, degrees_b)?
            }
        };
        let mut params = model.flatten();
        optimizer.apply(&mut params, &grad.flatten(config.k));
        model = model.with_flat(&params);
        if let Some(t) = target.as_mut() {
            let tau = config.ema_coefficient;
            *t = &*t * tau + &model.features * (1.0 - tau);
        }
    }

    Ok(TrainedModel {
        model,
        target,
        history,
        canonicalized: false,
        sorted: false,
        anchors: Vec::new(),
        config: config.clone(),
    })
}

/// Categorical distribution over the entries of a nonnegative matrix, in column-major order.
pub(crate) fn entry_distribution(m: &DMatrix<f64>) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(m.as_slice().iter().copied()).map_err(|e| invalid(format!("cannot sample from matrix: {e}")))
}

#[cfg(test)]
mod tests;
