use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tricl_core::eval::{
    bifactor_vs_trifactor_experiment, bound_values, identifiability_distance, importance_distribution, knn_eval,
    linear_probe, retrieval_map, scl_random_subset_eval, EvalReport, IdentifiabilityReport, MetricRow,
};
use tricl_core::graph::{
    compute_alpha, generate_bipartite_graph, generate_class_graph, normalize, normalize_bipartite, BipartiteSpec,
    ClassGraphSpec,
};
use tricl_core::linalg::{random_orthogonal, standard_normal_matrix};
use tricl_core::losses::{finite_difference_check, EmbeddingModel, GradCheckOptions, LossKind, LossTarget, Objective};
use tricl_core::spectra::{decompose, scl_closed_form, tricl_closed_form};
use tricl_core::trainer::{
    canonicalize_signs, select_top_features, sort_by_importance, train, train_bipartite, TrainConfig, TrainedModel,
};

use crate::config::{BuiltGraph, ExperimentConfig};
use crate::error::{config_error, CliError, Result};
use crate::manifest::Outputs;

#[derive(Serialize)]
struct DistanceRow<'a> {
    method: &'a str,
    run_i: usize,
    run_j: usize,
    distance: f64,
}

#[derive(Serialize)]
struct IdentifiabilitySummary {
    reports: Vec<IdentifiabilityReport>,
    /// Mean Frobenius norm of the compared feature matrices, per report.
    mean_feature_norms: Vec<f64>,
    warnings: Vec<String>,
}

/// Trains `runs` independently seeded models and returns their canonical, sorted feature tables.
fn trained_tables(
    graph: &tricl_core::graph::AugmentationGraph,
    base: &TrainConfig,
    kind: LossKind,
    runs: usize,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    (0..runs as u64)
        .map(|r| {
            let config = TrainConfig {
                loss_kind: kind,
                seed: seed.wrapping_add(r),
                ..base.clone()
            };
            let trained = canonicalize_signs(&train(graph, &config)?, &graph.degrees)?;
            let (sorted, _) = sort_by_importance(&trained);
            Ok(select_top_features(&sorted, &graph.degrees, config.k)?)
        })
        .collect()
}

pub fn identifiability(config: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let p = config.identifiability.clone().unwrap_or_default();
    let seed = config.master_seed();
    let experiment = bifactor_vs_trifactor_experiment(p.rows, p.cols, p.k, p.num_solutions, seed)?;
    let mut reports = vec![experiment.bifactor, experiment.trifactor];
    let mut norms = vec![f64::NAN, f64::NAN];
    if p.trained_runs >= 2 {
        let BuiltGraph::Symmetric(graph) = config.graph.as_ref().expect("validated").build()? else {
            return Err(config_error("trained identifiability runs need a symmetric graph"));
        };
        let base = config.train.as_ref().expect("validated");
        for (kind, label) in [(LossKind::Tricl, "trained_tricl"), (LossKind::Scl, "trained_scl")] {
            let tables = trained_tables(&graph, base, kind, p.trained_runs, seed)?;
            norms.push(tables.iter().map(|t| t.norm()).sum::<f64>() / tables.len() as f64);
            reports.push(identifiability_distance(label, &tables)?);
        }
    }
    // The closed-form tables all share one norm: ‖U_k Σ^{1/2}‖ and ‖U_k‖.
    let reference = decompose(
        &standard_normal_matrix(&mut ChaCha8Rng::seed_from_u64(seed), p.rows, p.cols),
        p.k,
    )?;
    norms[0] = reference.singular_values.sum().sqrt();
    norms[1] = (p.k as f64).sqrt();

    let rows: Vec<DistanceRow> = reports
        .iter()
        .flat_map(|r| {
            r.pairs.iter().map(move |pair| DistanceRow {
                method: &r.method,
                run_i: pair.run_i,
                run_j: pair.run_j,
                distance: pair.distance,
            })
        })
        .collect();
    if rows.is_empty() {
        out.write_csv_header("identifiability.csv", &["method", "run_i", "run_j", "distance"])?;
    } else {
        out.write_csv("identifiability.csv", &rows)?;
    }
    let mut summary = String::new();
    for (r, n) in reports.iter().zip(&norms) {
        let _ = writeln!(
            summary,
            "{}: runs {} mean distance {:.6e} variance {:.6e} (mean norm {:.4})",
            r.method, r.num_runs, r.mean_pairwise_distance, r.distance_variance, n
        );
    }
    let json = IdentifiabilitySummary {
        reports,
        mean_feature_norms: norms,
        warnings: experiment.warnings,
    };
    out.write_bytes("identifiability.json", serde_json::to_string_pretty(&json)?.as_bytes())?;
    Ok(summary)
}

#[derive(Serialize)]
struct ImportanceRow {
    dim: usize,
    s: f64,
    normalized: f64,
    oracle_sigma: f64,
    abs_error: f64,
}

/// Side-A view of a trained model used by the evaluation stage.
struct EvalView {
    trained: TrainedModel,
    normalized: DMatrix<f64>,
    degrees: DVector<f64>,
    labels: Vec<usize>,
}

pub fn train_eval(config: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let train_config = config.train.as_ref().expect("validated");
    let graph = config.graph.as_ref().expect("validated").build()?;
    let view = match &graph {
        BuiltGraph::Symmetric(g) => EvalView {
            trained: canonicalize_signs(&train(g, train_config)?, &g.degrees)?,
            normalized: normalize(g)?.matrix,
            degrees: g.degrees.clone(),
            labels: g.labels.clone(),
        },
        BuiltGraph::Bipartite(g) => EvalView {
            trained: canonicalize_signs(&train_bipartite(g, train_config)?, &g.marginal_a)?,
            normalized: normalize_bipartite(g)?,
            degrees: g.marginal_a.clone(),
            labels: g.labels_a.clone(),
        },
    };
    let (trained, _) = sort_by_importance(&view.trained);
    out.write_bytes("model.json", trained.to_json()?.as_bytes())?;

    let k = train_config.k;
    let reference = decompose(&view.normalized, k)?;
    let s = trained.model.importance();
    let normalized = importance_distribution(&s)?;
    let importance: Vec<ImportanceRow> = (0..k)
        .map(|j| ImportanceRow {
            dim: j + 1,
            s: s[j],
            normalized: normalized[j],
            oracle_sigma: reference.singular_values[j],
            abs_error: (s[j] - reference.singular_values[j]).abs(),
        })
        .collect();
    out.write_csv("importance.csv", &importance)?;

    let e = &config.eval;
    let oracle = tricl_closed_form(&reference, &view.degrees)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed());
    let two_factor = scl_closed_form(&reference, &view.degrees, Some(&random_orthogonal(&mut rng, k)))?;
    let full = select_top_features(&trained, &view.degrees, k)?;

    let mut report = EvalReport {
        importance: normalized.iter().copied().collect(),
        ..Default::default()
    };
    let mut oracle_rows = Vec::new();
    for m in e.m_values(k) {
        let top = full.columns(0, m).into_owned();
        report
            .probe_errors
            .push((m, linear_probe(&top, &view.labels, &view.degrees, e.ridge)?));
        report
            .retrieval_map
            .push((m, retrieval_map(&top, &view.labels, e.top_r)?));
        if e.trials > 0 {
            let sub = scl_random_subset_eval(
                &two_factor,
                &view.labels,
                &view.degrees,
                m,
                e.trials,
                config.master_seed(),
                e.ridge,
            )?;
            report.random_subset_errors.push((m, sub.mean_error));
        }
        let oracle_top = oracle.features.columns(0, m).into_owned();
        oracle_rows.push(MetricRow {
            metric: "oracle_probe_error".to_string(),
            m_or_block: m.to_string(),
            value: linear_probe(&oracle_top, &view.labels, &view.degrees, e.ridge)?,
        });
    }
    let blocks: Vec<_> = (0..k)
        .step_by(e.block_size)
        .map(|start| start..(start + e.block_size).min(k))
        .collect();
    let accuracy = knn_eval(&full, &view.labels, &blocks, e.neighbors)?;
    report.knn_accuracy = blocks
        .iter()
        .zip(accuracy)
        .map(|(b, a)| (format!("{}-{}", b.start + 1, b.end), a))
        .collect();

    let mut rows = report.rows();
    rows.extend(oracle_rows);
    out.write_csv("metrics.csv", &rows)?;

    let worst = importance.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    Ok(format!(
        "trained {} (k = {k}), final loss {:.6e}, max |s - sigma| {:.3e}\n",
        train_config.loss_kind.name(),
        trained.final_loss(),
        worst
    ))
}

#[derive(Serialize)]
struct BoundRow {
    m: usize,
    u_scl: f64,
    u_tricl: f64,
    gap: f64,
    alpha: f64,
}

pub fn bounds_sweep(config: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let b = config.bounds.as_ref().expect("validated");
    let (spectrum, alpha) = match &b.spectrum {
        Some(s) => (s.clone(), b.alpha.unwrap_or(0.0)),
        None => {
            let BuiltGraph::Symmetric(graph) = config.graph.as_ref().expect("validated").build()? else {
                return Err(config_error("bounds-sweep needs a symmetric graph"));
            };
            let reference = decompose(&normalize(&graph)?.matrix, b.k)?;
            (
                reference.full_spectrum.iter().copied().collect(),
                compute_alpha(&graph)?,
            )
        }
    };
    let rows = (1..=b.k)
        .map(|m| {
            let r = bound_values(&spectrum, m, b.k, alpha)?;
            Ok(BoundRow {
                m,
                u_scl: r.u_scl,
                u_tricl: r.u_tricl,
                gap: r.gap,
                alpha: r.alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.write_csv("bounds.csv", &rows)?;
    let min_gap = rows.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
    Ok(format!(
        "bounds for m = 1..={} (alpha {alpha}), smallest gap {min_gap:.6e}\n",
        b.k
    ))
}

#[derive(Serialize)]
struct AuditRow {
    loss: String,
    instances: usize,
    max_relative_error: f64,
    tolerance: f64,
    pass: bool,
}

/// Relative-error tolerance of the gradient audit per objective.
pub fn audit_tolerance(kind: LossKind) -> f64 {
    match kind {
        LossKind::TriInfonce => 1e-4,
        _ => 1e-5,
    }
}

/// Worst finite-difference error of `kind` at `model` on a random small graph.
fn audit_instance(kind: LossKind, k: usize, seed: u64, options: &GradCheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = rng.random_range(0.1..2.0);
    let raw = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
    let report = if kind.is_bipartite() {
        let g = generate_bipartite_graph(&BipartiteSpec {
            num_classes: 2,
            concepts_per_class: rng.random_range(1..=2),
            samples_a_per_concept: 2,
            samples_b_per_concept: 3,
            within_class_mix: 0.6,
            cross_class_leak: 0.1,
            seed,
        })?;
        let pbar = normalize_bipartite(&g)?;
        let model = EmbeddingModel {
            features: standard_normal_matrix(&mut rng, pbar.nrows(), k) * 0.4,
            features_b: Some(standard_normal_matrix(&mut rng, pbar.ncols(), k) * 0.4),
            raw_importance: raw,
        };
        let objective = Objective {
            kind,
            target: LossTarget::Bipartite { normalized: &pbar },
            penalty_weight: lambda,
            trimse_target: None,
        };
        finite_difference_check(&objective, &model, options)?
    } else {
        let g = generate_class_graph(&ClassGraphSpec {
            num_classes: 2,
            naturals_per_class: rng.random_range(1..=3),
            augmentations_per_natural: 2,
            within_class_mix: 0.5,
            cross_class_leak: 0.2,
            seed,
        })?;
        let normalized = normalize(&g)?;
        let target = standard_normal_matrix(&mut rng, g.n_nodes, k);
        let model = EmbeddingModel {
            features: standard_normal_matrix(&mut rng, g.n_nodes, k) * 0.3,
            features_b: None,
            raw_importance: raw,
        };
        let objective = Objective {
            kind,
            target: LossTarget::Symmetric {
                normalized: &normalized,
                degrees: &g.degrees,
            },
            penalty_weight: lambda,
            trimse_target: Some(&target),
        };
        finite_difference_check(&objective, &model, options)?
    };
    Ok(report.max_relative_error)
}

pub fn gradient_audit(config: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let a = config.audit.clone().unwrap_or_default();
    let seed = config.master_seed();
    let mut rows = Vec::new();
    for name in &a.losses {
        let kind = LossKind::parse(name).ok_or_else(|| config_error(format!("unknown loss {name:?}")))?;
        let options = GradCheckOptions {
            epsilon: a.epsilon,
            max_coordinates: a.max_coordinates,
            seed,
            ..Default::default()
        };
        let worst = (0..a.instances as u64)
            .map(|i| audit_instance(kind, a.k, seed.wrapping_add(i), &options))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let tolerance = audit_tolerance(kind);
        rows.push(AuditRow {
            loss: kind.name().to_string(),
            instances: a.instances,
            max_relative_error: worst,
            tolerance,
            pass: worst < tolerance,
        });
    }
    out.write_csv("audit.csv", &rows)?;
    let mut summary = String::new();
    for r in &rows {
        let _ = writeln!(
            summary,
            "{}: max relative error {:.3e} (tolerance {:e})",
            r.loss, r.max_relative_error, r.tolerance
        );
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.loss.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Check(format!(
            "gradient audit failed for {}",
            failed.join(", ")
        )));
    }
    Ok(summary)
}
