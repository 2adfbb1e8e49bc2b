use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tricl_core::graph::{AugmentationGraph, BipartiteGraph, BipartiteSpec, ClassGraphSpec};
use tricl_core::losses::LossKind;
use tricl_core::trainer::TrainConfig;

use crate::error::{config_error, CliError, Result};

/// Printed by `--help`.
pub const CONFIG_SCHEMA: &str = r#"CONFIG FILE (single JSON object, unknown fields rejected)

  seed            u64     master seed; overrides train.seed; --seed overrides this
  output_dir      string  output directory; --out overrides this
  graph           one of
                    {"class": {num_classes, naturals_per_class, augmentations_per_natural,
                               within_class_mix, cross_class_leak, seed}}
                    {"class_search": {"template": <class spec>, "k", "min_gap", "max_attempts"}}
                    {"adjacency": {"matrix": [[...]], "labels": [...]}}
                    {"bipartite": {num_classes, concepts_per_class, samples_a_per_concept,
                                   samples_b_per_concept, within_class_mix, cross_class_leak, seed}}
  train           {loss_kind: scl|tricl|tri_infonce|triclip|trimse, k, lambda,
                   optimizer: momentum|adam, learning_rate, momentum, steps,
                   mode: exact|sampled, batch_pairs, seed, init_scale,
                   anchor_tolerance, ema_coefficient}
  eval            {m_grid: [..], block_size, neighbors, top_r, trials, ridge}
  identifiability {rows, cols, k, num_solutions, trained_runs}
  bounds          {k, spectrum: [..] (optional), alpha (with spectrum)}
  audit           {losses: [..], instances, k, epsilon, max_coordinates}

COMMANDS AND SECTIONS
  identifiability  identifiability (+ graph, train when trained_runs >= 2)
  train-eval       graph, train, eval
  bounds-sweep     bounds, and graph unless bounds.spectrum is given
  gradient-audit   audit

OUTPUT FILES
  identifiability.csv  method,run_i,run_j,distance
  metrics.csv          metric,m_or_block,value
  importance.csv       dim,s,normalized,oracle_sigma,abs_error
  bounds.csv           m,u_scl,u_tricl,gap,alpha
  audit.csv            loss,instances,max_relative_error,tolerance,pass
  manifest.json        config echo, version, duration, sha256 of every file"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Identifiability,
    TrainEval,
    BoundsSweep,
    GradientAudit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Identifiability => "identifiability",
            Command::TrainEval => "train-eval",
            Command::BoundsSweep => "bounds-sweep",
            Command::GradientAudit => "gradient-audit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSearch {
    pub template: ClassGraphSpec,
    pub k: usize,
    pub min_gap: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

fn default_max_attempts() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitGraph {
    pub matrix: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    Class(ClassGraphSpec),
    ClassSearch(ClassSearch),
    Adjacency(ExplicitGraph),
    Bipartite(BipartiteSpec),
}

pub enum BuiltGraph {
    Symmetric(AugmentationGraph),
    Bipartite(BipartiteGraph),
}

impl GraphSource {
    pub fn build(&self) -> Result<BuiltGraph> {
        use tricl_core::graph::{generate_bipartite_graph, generate_class_graph};
        use tricl_core::spectra::search_gapped_class_graphs;
        Ok(match self {
            GraphSource::Class(spec) => BuiltGraph::Symmetric(generate_class_graph(spec)?),
            GraphSource::ClassSearch(s) => {
                let mut found = search_gapped_class_graphs(&s.template, s.k, s.min_gap, 1, s.max_attempts)?;
                BuiltGraph::Symmetric(found.remove(0))
            }
            GraphSource::Adjacency(g) => {
                let cols = g.matrix.first().map_or(0, Vec::len);
                let m = tricl_core::linalg::rows::from_rows(&g.matrix, cols).map_err(config_error)?;
                BuiltGraph::Symmetric(AugmentationGraph::from_adjacency(m, g.labels.clone())?)
            }
            GraphSource::Bipartite(spec) => BuiltGraph::Bipartite(generate_bipartite_graph(spec)?),
        })
    }

    fn num_nodes(&self) -> Option<usize> {
        match self {
            GraphSource::Class(spec) => Some(spec.num_nodes()),
            GraphSource::ClassSearch(s) => Some(s.template.num_nodes()),
            GraphSource::Adjacency(g) => Some(g.matrix.len()),
            GraphSource::Bipartite(_) => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GraphSource::Class(spec) => spec.validate().map_err(|e| config_error(format!("graph.class: {e}")))?,
            GraphSource::ClassSearch(s) => {
                s.template
                    .validate()
                    .map_err(|e| config_error(format!("graph.class_search.template: {e}")))?;
                if s.k == 0 || s.k > s.template.num_nodes() {
                    return Err(config_error(format!(
                        "graph.class_search.k must be in 1..={}",
                        s.template.num_nodes()
                    )));
                }
                if !(s.min_gap >= 0.0) {
                    return Err(config_error("graph.class_search.min_gap must be >= 0"));
                }
            }
            GraphSource::Adjacency(g) => {
                let n = g.matrix.len();
                if n == 0 || g.matrix.iter().any(|r| r.len() != n) {
                    return Err(config_error("graph.adjacency.matrix must be square and non-empty"));
                }
                if g.labels.len() != n {
                    return Err(config_error(format!(
                        "graph.adjacency.labels has {} entries for {n} nodes",
                        g.labels.len()
                    )));
                }
            }
            GraphSource::Bipartite(spec) => spec
                .validate()
                .map_err(|e| config_error(format!("graph.bipartite: {e}")))?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    /// Top-`m` sizes to evaluate; empty means powers of two up to `k`, plus `k`.
    pub m_grid: Vec<usize>,
    pub block_size: usize,
    pub neighbors: usize,
    pub top_r: usize,
    /// Random-subset trials for the two-factor comparison; 0 skips it.
    pub trials: usize,
    pub ridge: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            m_grid: Vec::new(),
            block_size: 2,
            neighbors: 10,
            top_r: tricl_core::eval::DEFAULT_TOP_R,
            trials: 20,
            ridge: tricl_core::eval::DEFAULT_RIDGE,
        }
    }
}

impl EvalParams {
    pub fn m_values(&self, k: usize) -> Vec<usize> {
        if !self.m_grid.is_empty() {
            return self.m_grid.clone();
        }
        let mut out: Vec<usize> = std::iter::successors(Some(1usize), |m| Some(m * 2))
            .take_while(|m| *m < k)
            .collect();
        out.push(k);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifiabilityParams {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub num_solutions: usize,
    /// Independently seeded training runs per method on `graph`; 0 disables.
    pub trained_runs: usize,
}

impl Default for IdentifiabilityParams {
    fn default() -> Self {
        Self {
            rows: 200,
            cols: 150,
            k: 16,
            num_solutions: 10,
            trained_runs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsParams {
    pub k: usize,
    #[serde(default)]
    pub spectrum: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditParams {
    pub losses: Vec<String>,
    pub instances: usize,
    pub k: usize,
    pub epsilon: f64,
    pub max_coordinates: usize,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self {
            losses: LossKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            instances: 20,
            k: 3,
            epsilon: 1e-5,
            max_coordinates: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: EvalParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identifiability: Option<IdentifiabilityParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditParams>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Applies command-line overrides and pushes the master seed into `train`.
    pub fn apply_overrides(&mut self, out: Option<PathBuf>, seed: Option<u64>) {
        if out.is_some() {
            self.output_dir = out;
        }
        if seed.is_some() {
            self.seed = seed;
        }
        if let (Some(seed), Some(train)) = (self.seed, self.train.as_mut()) {
            train.seed = seed;
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.or(self.train.as_ref().map(|t| t.seed)).unwrap_or(0)
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| config_error("no output directory: set output_dir or pass --out"))
    }

    fn graph(&self, command: Command) -> Result<&GraphSource> {
        self.graph
            .as_ref()
            .ok_or_else(|| config_error(format!("{} needs a graph section", command.name())))
    }

    fn train(&self, command: Command) -> Result<&TrainConfig> {
        self.train
            .as_ref()
            .ok_or_else(|| config_error(format!("{} needs a train section", command.name())))
    }

    /// Checks everything `command` will use before any computation starts.
    pub fn validate(&self, command: Command) -> Result<()> {
        self.output_dir()?;
        match command {
            Command::Identifiability => {
                let p = self
                    .identifiability
                    .as_ref()
                    .ok_or_else(|| config_error("identifiability needs an identifiability section"))?;
                if p.k == 0 || p.k > p.rows.min(p.cols) {
                    return Err(config_error(format!(
                        "identifiability.k = {} must be in 1..={}",
                        p.k,
                        p.rows.min(p.cols)
                    )));
                }
                if p.num_solutions == 0 {
                    return Err(config_error("identifiability.num_solutions must be >= 1"));
                }
                if p.trained_runs == 1 {
                    return Err(config_error("identifiability.trained_runs must be 0 or >= 2"));
                }
                if p.trained_runs >= 2 {
                    let graph = self.graph(command)?;
                    graph.validate()?;
                    if matches!(graph, GraphSource::Bipartite(_)) {
                        return Err(config_error("trained identifiability runs need a symmetric graph"));
                    }
                    let train = self.train(command)?;
                    train.validate().map_err(|e| config_error(format!("train: {e}")))?;
                    self.check_k_fits(graph, train.k)?;
                }
            }
            Command::TrainEval => {
                let graph = self.graph(command)?;
                graph.validate()?;
                let train = self.train(command)?;
                train.validate().map_err(|e| config_error(format!("train: {e}")))?;
                let bipartite = matches!(graph, GraphSource::Bipartite(_));
                if bipartite != train.loss_kind.is_bipartite() {
                    return Err(config_error(format!(
                        "train.loss_kind {} does not match the graph kind",
                        train.loss_kind.name()
                    )));
                }
                self.check_k_fits(graph, train.k)?;
                self.validate_eval(graph, train.k)?;
            }
            Command::BoundsSweep => {
                let b = self
                    .bounds
                    .as_ref()
                    .ok_or_else(|| config_error("bounds-sweep needs a bounds section"))?;
                if b.k == 0 {
                    return Err(config_error("bounds.k must be >= 1"));
                }
                match &b.spectrum {
                    Some(s) => {
                        if b.k > s.len() {
                            return Err(config_error(format!(
                                "bounds.k = {} exceeds the spectrum length {}",
                                b.k,
                                s.len()
                            )));
                        }
                        if let Some(a) = b.alpha {
                            if !(0.0..=1.0).contains(&a) {
                                return Err(config_error("bounds.alpha must be in [0, 1]"));
                            }
                        }
                    }
                    None => {
                        if b.alpha.is_some() {
                            return Err(config_error("bounds.alpha is only used with bounds.spectrum"));
                        }
                        let graph = self.graph(command)?;
                        graph.validate()?;
                        if matches!(graph, GraphSource::Bipartite(_)) {
                            return Err(config_error("bounds-sweep needs a symmetric graph"));
                        }
                        self.check_k_fits(graph, b.k)?;
                    }
                }
            }
            Command::GradientAudit => {
                let a = self.audit.clone().unwrap_or_default();
                if a.losses.is_empty() {
                    return Err(config_error("audit.losses is empty"));
                }
                for name in &a.losses {
                    if LossKind::parse(name).is_none() {
                        return Err(config_error(format!("unknown loss {name:?}")));
                    }
                }
                if a.instances == 0 || a.k == 0 {
                    return Err(config_error("audit.instances and audit.k must be >= 1"));
                }
                if !(1e-7..=1e-3).contains(&a.epsilon) {
                    return Err(config_error("audit.epsilon must be in [1e-7, 1e-3]"));
                }
                if a.max_coordinates < 200 {
                    return Err(config_error("audit.max_coordinates must be >= 200"));
                }
            }
        }
        Ok(())
    }

    fn check_k_fits(&self, graph: &GraphSource, k: usize) -> Result<()> {
        let limit = match graph {
            GraphSource::Bipartite(s) => {
                let (a, b) = s.shape();
                a.min(b)
            }
            other => other.num_nodes().unwrap_or(0),
        };
        if k > limit {
            return Err(config_error(format!("k = {k} exceeds the graph dimension {limit}")));
        }
        Ok(())
    }

    fn validate_eval(&self, graph: &GraphSource, k: usize) -> Result<()> {
        let e = &self.eval;
        let n = match graph {
            GraphSource::Bipartite(s) => s.shape().0,
            other => other.num_nodes().unwrap_or(0),
        };
        if let Some(m) = e.m_values(k).iter().find(|m| **m == 0 || **m > k) {
            return Err(config_error(format!("eval.m_grid entry {m} must be in 1..={k}")));
        }
        if e.block_size == 0 || e.block_size > k {
            return Err(config_error(format!("eval.block_size must be in 1..={k}")));
        }
        if e.neighbors == 0 || e.neighbors >= n {
            return Err(config_error(format!("eval.neighbors must be in 1..{n}")));
        }
        if e.top_r == 0 || e.top_r >= n {
            return Err(config_error(format!("eval.top_r must be in 1..{n}")));
        }
        if !(e.ridge >= 0.0) {
            return Err(config_error("eval.ridge must be >= 0"));
        }
        Ok(())
    }
}
