//! Finite augmentation graphs.
//!
//! An [`AugmentationGraph`] holds the joint positive-pair distribution `A`
//! over `N` augmented samples, built from a distribution over natural samples
//! and a per-natural augmentation kernel:
//!
//! ```text
//! A[x, x'] = Σ_n p(n) · K(x | n) · K(x' | n)
//! ```
//!
//! The bipartite counterpart ([`BipartiteGraph`]) stores an asymmetric joint
//! `P_O` over two sample sets with its marginals.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::linalg::rows;

/// Tolerance for probability-mass bookkeeping (sums of A, d, marginals).
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Shape parameter of the Gamma law used for kernel weights. Values well
/// below 1 give heavy-tailed weights, which spreads the spectrum of the
/// normalized adjacency instead of producing near-degenerate clusters.
const KERNEL_WEIGHT_SHAPE: f64 = 0.3;

/// Generative description of a labelled synthetic augmentation graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassGraphSpec {
    pub num_classes: usize,
    pub naturals_per_class: usize,
    pub augmentations_per_natural: usize,
    /// Share of the within-class mass placed on the natural's own augmentations.
    pub within_class_mix: f64,
    /// Probability that an augmentation lands in another class (β).
    pub cross_class_leak: f64,
    pub seed: u64,
}

impl ClassGraphSpec {
    pub fn num_naturals(&self) -> usize {
        self.num_classes * self.naturals_per_class
    }

    pub fn num_nodes(&self) -> usize {
        self.num_naturals() * self.augmentations_per_natural
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.naturals_per_class == 0 || self.augmentations_per_natural == 0 {
            return Err(invalid("class graph counts must all be >= 1"));
        }
        if !(0.0..1.0).contains(&self.cross_class_leak) {
            return Err(invalid(format!(
                "cross_class_leak must lie in [0, 1), got {}",
                self.cross_class_leak
            )));
        }
        if self.num_classes == 1 && self.cross_class_leak > 0.0 {
            return Err(invalid("cross_class_leak > 0 requires at least two classes"));
        }
        if !(0.0..=1.0).contains(&self.within_class_mix) {
            return Err(invalid(format!(
                "within_class_mix must lie in [0, 1], got {}",
                self.within_class_mix
            )));
        }
        Ok(())
    }
}

/// The natural-level generative data a graph was built from. Needed for α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSource {
    pub natural_probs: Vec<f64>,
    /// Rows are naturals, columns augmented samples.
    #[serde(with = "rows")]
    pub kernel: DMatrix<f64>,
    pub natural_labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationGraph {
    pub n_nodes: usize,
    pub adjacency: DMatrix<f64>,
    pub degrees: DVector<f64>,
    pub labels: Vec<usize>,
    pub natural_index: Vec<usize>,
    pub spec: Option<ClassGraphSpec>,
    pub source: Option<KernelSource>,
}

/// `Ā = D^{-1/2} A D^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub matrix: DMatrix<f64>,
}

fn check_distribution(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid(format!("{what} has negative or non-finite entries")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE * values.len().max(1) as f64 {
        return Err(invalid(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

/// Exact finite-sum construction of the augmentation graph.
pub fn build_from_kernel(natural_probs: &[f64], kernel: &DMatrix<f64>) -> Result<AugmentationGraph> {
    let (num_naturals, n) = kernel.shape();
    if natural_probs.len() != num_naturals {
        return Err(shape(format!(
            "{} natural probabilities for a kernel with {} rows",
            natural_probs.len(),
            num_naturals
        )));
    }
    check_distribution(natural_probs, "natural distribution")?;
    for i in 0..num_naturals {
        let row: Vec<f64> = kernel.row(i).iter().copied().collect();
        check_distribution(&row, &format!("kernel row {i}"))?;
    }

    let mut adjacency = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in x..n {
            let mut acc = 0.0;
            for (i, p) in natural_probs.iter().enumerate() {
                acc += p * kernel[(i, x)] * kernel[(i, y)];
            }
            adjacency[(x, y)] = acc;
            adjacency[(y, x)] = acc;
        }
    }
    let degrees = degrees_of(&adjacency)?;

    let natural_index = (0..n)
        .map(|x| {
            let mut best = 0;
            let mut best_mass = f64::NEG_INFINITY;
            for (i, p) in natural_probs.iter().enumerate() {
                let mass = p * kernel[(i, x)];
                if mass > best_mass {
                    best = i;
                    best_mass = mass;
                }
            }
            best
        })
        .collect();

    let graph = AugmentationGraph {
        n_nodes: n,
        adjacency,
        degrees,
        labels: vec![0; n],
        natural_index,
        spec: None,
        source: Some(KernelSource {
            natural_probs: natural_probs.to_vec(),
            kernel: kernel.clone(),
            natural_labels: None,
        }),
    };
    graph.validate()?;
    Ok(graph)
}

fn degrees_of(adjacency: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = adjacency.nrows();
    let degrees = DVector::from_fn(n, |x, _| adjacency.row(x).iter().sum::<f64>());
    if let Some(index) = degrees.iter().position(|d| *d <= 0.0) {
        return Err(Error::IsolatedSample { index });
    }
    Ok(degrees)
}

impl AugmentationGraph {
    /// Graph from an explicit adjacency (no kernel provenance, so no α).
    pub fn from_adjacency(adjacency: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(shape("adjacency must be square"));
        }
        if labels.len() != n {
            return Err(shape(format!("{} labels for {} nodes", labels.len(), n)));
        }
        let degrees = degrees_of(&adjacency)?;
        let g = Self {
            n_nodes: n,
            adjacency,
            degrees,
            labels,
            natural_index: (0..n).collect(),
            spec: None,
            source: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Attach class labels for natural samples and augmented samples.
    pub fn with_labels(mut self, natural_labels: Vec<usize>, augmented_labels: Vec<usize>) -> Result<Self> {
        if augmented_labels.len() != self.n_nodes {
            return Err(shape(format!(
                "{} augmented labels for {} nodes",
                augmented_labels.len(),
                self.n_nodes
            )));
        }
        if let Some(src) = self.source.as_mut() {
            if natural_labels.len() != src.natural_probs.len() {
                return Err(shape(format!(
                    "{} natural labels for {} naturals",
                    natural_labels.len(),
                    src.natural_probs.len()
                )));
            }
            src.natural_labels = Some(natural_labels);
        }
        self.labels = augmented_labels;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Checks symmetry, nonnegativity, unit mass and positive degrees.
    pub fn validate(&self) -> Result<()> {
        let a = &self.adjacency;
        let n = self.n_nodes;
        if a.shape() != (n, n) || self.degrees.len() != n || self.labels.len() != n || self.natural_index.len() != n {
            return Err(shape("graph fields disagree on the node count"));
        }
        for x in 0..n {
            for y in 0..n {
                let v = a[(x, y)];
                if !v.is_finite() || v < 0.0 {
                    return Err(invalid(format!("adjacency entry ({x},{y}) = {v} is not a probability")));
                }
                if v != a[(y, x)] {
                    return Err(invalid(format!("adjacency is not symmetric at ({x},{y})")));
                }
            }
        }
        let total: f64 = a.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(invalid(format!("adjacency mass is {total}, expected 1")));
        }
        if let Some(index) = self.degrees.iter().position(|d| *d <= 0.0) {
            return Err(Error::IsolatedSample { index });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = GraphJson {
            n: self.n_nodes,
            adjacency: rows::to_rows(&self.adjacency),
            labels: self.labels.clone(),
            natural_index: self.natural_index.clone(),
            spec: self.spec.clone(),
            kernel: self.source.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphJson = serde_json::from_str(text)?;
        let adjacency = rows::from_rows(&doc.adjacency, doc.n).map_err(invalid)?;
        if adjacency.shape() != (doc.n, doc.n) {
            return Err(shape("adjacency does not match n"));
        }
        let degrees = degrees_of(&adjacency)?;
        let g = Self {
            n_nodes: doc.n,
            adjacency,
            degrees,
            labels: doc.labels,
            natural_index: doc.natural_index,
            spec: doc.spec,
            source: doc.kernel,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphJson {
    n: usize,
    adjacency: Vec<Vec<f64>>,
    labels: Vec<usize>,
    natural_index: Vec<usize>,
    spec: Option<ClassGraphSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<KernelSource>,
}

/// Normalized weights drawn from `Gamma(shape, 1)`; sums are positive almost surely.
fn draw_weights(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    let gamma = Gamma::new(KERNEL_WEIGHT_SHAPE, 1.0).expect("valid gamma parameters");
    let mut w: Vec<f64> = (0..count).map(|_| gamma.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    } else if count > 0 {
        w.iter_mut().for_each(|v| *v = 1.0 / count as f64);
    }
    w
}

/// Synthetic class-structured augmentation graph.
///
/// Natural `n` belongs to class `n / M` and owns augmentations
/// `n·a .. (n+1)·a`. Its kernel puts `(1-β)·w` on its own augmentations,
/// `(1-β)·(1-w)` on the other augmentations of its class and `β` on
/// augmentations of other classes, each split by heavy-tailed random weights.
/// Natural probabilities are exponential draws, normalized. With a single
/// natural per class the within-class remainder stays on the natural's own
/// augmentations.
pub fn generate_class_graph(spec: &ClassGraphSpec) -> Result<AugmentationGraph> {
    spec.validate()?;
    let num_naturals = spec.num_naturals();
    let per = spec.augmentations_per_natural;
    let per_class = spec.naturals_per_class * per;
    let n = spec.num_nodes();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut natural_probs: Vec<f64> = (0..num_naturals).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = natural_probs.iter().sum();
    natural_probs.iter_mut().for_each(|p| *p /= total);

    let kernel = class_kernel(spec, &mut rng);

    let natural_labels: Vec<usize> = (0..num_naturals).map(|i| i / spec.naturals_per_class).collect();
    let augmented_labels: Vec<usize> = (0..n).map(|x| x / per_class).collect();
    let mut graph = build_from_kernel(&natural_probs, &kernel)?.with_labels(natural_labels, augmented_labels)?;
    graph.natural_index = (0..n).map(|x| x / per).collect();
    graph.spec = Some(spec.clone());
    Ok(graph)
}

pub fn normalize(g: &AugmentationGraph) -> Result<NormalizedAdjacency> {
    let n = g.n_nodes;
    if let Some(index) = g.degrees.iter().position(|d| *d <= 0.0) {
        return Err(Error::IsolatedSample { index });
    }
    let mut matrix = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in x..n {
            let v = g.adjacency[(x, y)] / (g.degrees[x] * g.degrees[y]).sqrt();
            matrix[(x, y)] = v;
            matrix[(y, x)] = v;
        }
    }
    Ok(NormalizedAdjacency { matrix })
}

/// α: probability that an augmentation carries a different label than its natural sample.
pub fn compute_alpha(g: &AugmentationGraph) -> Result<f64> {
    let src = g
        .source
        .as_ref()
        .ok_or_else(|| Error::MissingLabels("graph has no kernel provenance".into()))?;
    let natural_labels = src
        .natural_labels
        .as_ref()
        .ok_or_else(|| Error::MissingLabels("natural samples are unlabelled".into()))?;
    let mut alpha = 0.0;
    for (i, p) in src.natural_probs.iter().enumerate() {
        let crossing: f64 = (0..g.n_nodes)
            .filter(|&x| g.labels[x] != natural_labels[i])
            .map(|x| src.kernel[(i, x)])
            .sum();
        alpha += p * crossing;
    }
    Ok(alpha.clamp(0.0, 1.0))
}

/// Generative description of a paired-modality (bipartite) graph.
///
/// Latent concepts (grouped into classes) each emit samples on side A and
/// side B; a positive pair is one draw from each side given the same concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BipartiteSpec {
    pub num_classes: usize,
    pub concepts_per_class: usize,
    pub samples_a_per_concept: usize,
    pub samples_b_per_concept: usize,
    pub within_class_mix: f64,
    pub cross_class_leak: f64,
    pub seed: u64,
}

impl BipartiteSpec {
    fn side_spec(&self, per: usize) -> ClassGraphSpec {
        ClassGraphSpec {
            num_classes: self.num_classes,
            naturals_per_class: self.concepts_per_class,
            augmentations_per_natural: per,
            within_class_mix: self.within_class_mix,
            cross_class_leak: self.cross_class_leak,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.side_spec(self.samples_a_per_concept).validate()?;
        self.side_spec(self.samples_b_per_concept).validate()
    }

    pub fn shape(&self) -> (usize, usize) {
        let concepts = self.num_classes * self.concepts_per_class;
        (
            concepts * self.samples_a_per_concept,
            concepts * self.samples_b_per_concept,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    pub joint: DMatrix<f64>,
    pub marginal_a: DVector<f64>,
    pub marginal_b: DVector<f64>,
    pub labels_a: Vec<usize>,
    pub labels_b: Vec<usize>,
    pub spec: Option<BipartiteSpec>,
}

impl BipartiteGraph {
    pub fn from_joint(joint: DMatrix<f64>, labels_a: Vec<usize>, labels_b: Vec<usize>) -> Result<Self> {
        let (na, nb) = joint.shape();
        if labels_a.len() != na || labels_b.len() != nb {
            return Err(shape("bipartite labels do not match the joint shape"));
        }
        if joint.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("joint has negative or non-finite entries"));
        }
        let total: f64 = joint.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(invalid(format!("joint mass is {total}, expected 1")));
        }
        let marginal_a = DVector::from_fn(na, |i, _| joint.row(i).iter().sum::<f64>());
        let marginal_b = DVector::from_fn(nb, |j, _| joint.column(j).iter().sum::<f64>());
        if let Some(index) = marginal_a.iter().position(|p| *p <= 0.0) {
            return Err(Error::ZeroMarginal { side: 'A', index });
        }
        if let Some(index) = marginal_b.iter().position(|p| *p <= 0.0) {
            return Err(Error::ZeroMarginal { side: 'B', index });
        }
        Ok(Self {
            joint,
            marginal_a,
            marginal_b,
            labels_a,
            labels_b,
            spec: None,
        })
    }
}

fn class_kernel(spec: &ClassGraphSpec, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let num = spec.num_naturals();
    let per = spec.augmentations_per_natural;
    let per_class = spec.naturals_per_class * per;
    let n = spec.num_nodes();
    let (beta, w) = (spec.cross_class_leak, spec.within_class_mix);
    let mut kernel = DMatrix::zeros(num, n);
    for nat in 0..num {
        let class = nat / spec.naturals_per_class;
        let own: Vec<usize> = (nat * per..(nat + 1) * per).collect();
        let same: Vec<usize> = (class * per_class..(class + 1) * per_class)
            .filter(|x| x / per != nat)
            .collect();
        let other: Vec<usize> = (0..n).filter(|x| x / per_class != class).collect();
        let own_w = draw_weights(rng, own.len());
        let same_w = draw_weights(rng, same.len());
        // Draw every block regardless of β and w so one seed gives the same weights for all mixes.
        let other_w = draw_weights(rng, other.len());
        let own_mass = if same.is_empty() { 1.0 - beta } else { (1.0 - beta) * w };
        for (x, v) in own.iter().zip(&own_w) {
            kernel[(nat, *x)] += own_mass * v;
        }
        for (x, v) in same.iter().zip(&same_w) {
            kernel[(nat, *x)] += (1.0 - beta) * (1.0 - w) * v;
        }
        for (x, v) in other.iter().zip(&other_w) {
            kernel[(nat, *x)] += beta * v;
        }
    }
    kernel
}

pub fn generate_bipartite_graph(spec: &BipartiteSpec) -> Result<BipartiteGraph> {
    spec.validate()?;
    let spec_a = spec.side_spec(spec.samples_a_per_concept);
    let spec_b = spec.side_spec(spec.samples_b_per_concept);
    let concepts = spec_a.num_naturals();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut probs: Vec<f64> = (0..concepts).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    let ka = class_kernel(&spec_a, &mut rng);
    let kb = class_kernel(&spec_b, &mut rng);

    let (na, nb) = (spec_a.num_nodes(), spec_b.num_nodes());
    let mut joint = DMatrix::zeros(na, nb);
    for a in 0..na {
        for b in 0..nb {
            let mut acc = 0.0;
            for (z, p) in probs.iter().enumerate() {
                acc += p * ka[(z, a)] * kb[(z, b)];
            }
            joint[(a, b)] = acc;
        }
    }
    // Absorb rounding so the joint has unit mass to machine precision.
    let total: f64 = joint.iter().sum();
    joint /= total;

    let labels_a = (0..na)
        .map(|x| x / (spec.concepts_per_class * spec.samples_a_per_concept))
        .collect();
    let labels_b = (0..nb)
        .map(|x| x / (spec.concepts_per_class * spec.samples_b_per_concept))
        .collect();
    let mut g = BipartiteGraph::from_joint(joint, labels_a, labels_b)?;
    g.spec = Some(spec.clone());
    Ok(g)
}

/// `P̄_O[a, b] = P_O[a, b] / sqrt(P_A[a] · P_B[b])`.
pub fn normalize_bipartite(bg: &BipartiteGraph) -> Result<DMatrix<f64>> {
    if let Some(index) = bg.marginal_a.iter().position(|p| *p <= 0.0) {
        return Err(Error::ZeroMarginal { side: 'A', index });
    }
    if let Some(index) = bg.marginal_b.iter().position(|p| *p <= 0.0) {
        return Err(Error::ZeroMarginal { side: 'B', index });
    }
    let (na, nb) = bg.joint.shape();
    Ok(DMatrix::from_fn(na, nb, |a, b| {
        bg.joint[(a, b)] / (bg.marginal_a[a] * bg.marginal_b[b]).sqrt()
    }))
}
