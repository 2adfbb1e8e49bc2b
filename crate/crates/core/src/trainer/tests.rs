use super::*;
use crate::graph::{generate_bipartite_graph, generate_class_graph, BipartiteSpec, ClassGraphSpec};
use crate::linalg::softplus;
use crate::losses::tricl_loss;
use crate::spectra::unscale_rows;
use nalgebra::dmatrix;

fn two_node() -> AugmentationGraph {
    AugmentationGraph::from_adjacency(dmatrix![0.3, 0.2; 0.2, 0.3], vec![0, 1]).unwrap()
}

fn small_class_graph(seed: u64) -> AugmentationGraph {
    generate_class_graph(&ClassGraphSpec {
        num_classes: 2,
        naturals_per_class: 2,
        augmentations_per_natural: 2,
        within_class_mix: 0.5,
        cross_class_leak: 0.2,
        seed,
    })
    .unwrap()
}

fn fixture(features: DMatrix<f64>, s: &[f64]) -> TrainedModel {
    TrainedModel {
        model: EmbeddingModel {
            features,
            features_b: None,
            raw_importance: DVector::from_iterator(s.len(), s.iter().map(|v| v.exp_m1().ln())),
        },
        target: None,
        history: vec![0.0],
        canonicalized: false,
        sorted: false,
        anchors: Vec::new(),
        config: TrainConfig {
            k: s.len(),
            ..TrainConfig::default()
        },
    }
}

#[test]
fn init_is_seeded_and_starts_at_unit_importance() {
    let a = init_model(7, 3, 11, 0.5);
    assert_eq!(a, init_model(7, 3, 11, 0.5));
    assert_ne!(a, init_model(7, 3, 12, 0.5));
    assert!(a.importance().iter().all(|s| *s == 1.0));
    assert!(init_model(7, 3, 11, 0.0).features.iter().all(|v| *v == 0.0));
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig {
            steps: 0,
            ..Default::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        },
        TrainConfig {
            k: 0,
            ..Default::default()
        },
        TrainConfig {
            mode: TrainMode::Sampled,
            batch_pairs: 0,
            ..Default::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
    assert!(TrainConfig::default().validate().is_ok());
    let err = serde_json::from_str::<TrainConfig>(r#"{"k": 2, "bogus": 1}"#);
    assert!(err.is_err());
}

#[test]
fn two_node_tricl_recovers_importance() {
    let config = TrainConfig {
        k: 2,
        steps: 5000,
        learning_rate: 0.05,
        ..Default::default()
    };
    let trained = train(&two_node(), &config).unwrap();
    let s = trained.model.importance();
    let (sorted, _) = sort_by_importance(&trained);
    let s_sorted = sorted.model.importance();
    assert!((s_sorted[0] - 1.0).abs() < 1e-3, "{s}");
    assert!((s_sorted[1] - 0.2).abs() < 1e-3, "{s}");
    assert!(trained.final_loss() <= trained.history[0]);
    assert_eq!(trained.history.len(), 5001);
}

#[test]
fn training_is_deterministic() {
    let g = small_class_graph(1);
    for mode in [TrainMode::Exact, TrainMode::Sampled] {
        let config = TrainConfig {
            k: 3,
            steps: 50,
            mode,
            learning_rate: 0.005,
            batch_pairs: 16,
            seed: 5,
            ..Default::default()
        };
        let a = train(&g, &config).unwrap();
        let b = train(&g, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}

#[test]
fn every_loss_trains_without_error() {
    let g = small_class_graph(2);
    for kind in [LossKind::Scl, LossKind::Tricl, LossKind::TriInfonce, LossKind::Trimse] {
        for mode in [TrainMode::Exact, TrainMode::Sampled] {
            let config = TrainConfig {
                loss_kind: kind,
                k: 3,
                steps: 200,
                learning_rate: if mode == TrainMode::Exact { 0.02 } else { 0.005 },
                // Single-pair gradients on rare samples are large; per-coordinate steps keep them bounded.
                optimizer: if mode == TrainMode::Exact {
                    OptimizerKind::Momentum
                } else {
                    OptimizerKind::Adam
                },
                mode,
                batch_pairs: 32,
                ..Default::default()
            };
            let t = train(&g, &config).unwrap_or_else(|e| panic!("{kind:?} {mode:?}: {e}"));
            assert!(t.history.iter().all(|v| v.is_finite()), "{kind:?} {mode:?}");
        }
    }
    let bg = bipartite();
    let config = TrainConfig {
        loss_kind: LossKind::Triclip,
        k: 3,
        steps: 200,
        ..Default::default()
    };
    let t = train_bipartite(&bg, &config).unwrap();
    assert!(t.final_loss() < t.history[0]);
    assert!(train(&g, &config).is_err());
    assert!(train_bipartite(&bg, &TrainConfig::default()).is_err());
}

fn bipartite() -> BipartiteGraph {
    generate_bipartite_graph(&BipartiteSpec {
        num_classes: 2,
        concepts_per_class: 2,
        samples_a_per_concept: 2,
        samples_b_per_concept: 3,
        within_class_mix: 0.5,
        cross_class_leak: 0.1,
        seed: 3,
    })
    .unwrap()
}

#[test]
fn trimse_target_is_a_moving_average() {
    let g = small_class_graph(3);
    let one = TrainConfig {
        loss_kind: LossKind::Trimse,
        k: 3,
        steps: 1,
        ema_coefficient: 0.9,
        ..Default::default()
    };
    let t = train(&g, &one).unwrap();
    let start = init_model(g.n_nodes, 3, one.seed, one.init_scale).features;
    let expected = &start * 0.9 + &t.model.features * 0.1;
    assert!((t.target.unwrap() - expected).amax() < 1e-15);
}

#[test]
fn divergence_is_reported() {
    let config = TrainConfig {
        k: 2,
        steps: 200,
        learning_rate: 50.0,
        ..Default::default()
    };
    match train(&two_node(), &config) {
        Err(Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

/// Mean of many one-batch gradients against the exact gradient, coordinate by coordinate.
fn assert_unbiased(
    objective: &Objective<'_>,
    model: &EmbeddingModel,
    sampler: &BatchSampler,
    da: &DVector<f64>,
    db: &DVector<f64>,
) {
    let draws = 10_000;
    let exact = objective.evaluate(model).unwrap();
    let k = model.k();
    let exact_flat = exact.flatten(k);
    let dim = exact_flat.len();
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let (mut v_sum, mut v_sq) = (0.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..draws {
        let batch = draw_batch(sampler, &mut rng, 4);
        let est = sampled_loss(objective, model, &batch, da, db).unwrap();
        for (i, g) in est.flatten(k).into_iter().enumerate() {
            sum[i] += g;
            sum_sq[i] += g * g;
        }
        v_sum += est.value;
        v_sq += est.value * est.value;
    }
    let n = draws as f64;
    let check = |label: String, s: f64, sq: f64, truth: f64| {
        let mean = s / n;
        let se = ((sq / n - mean * mean).max(0.0) / n).sqrt();
        assert!(
            (mean - truth).abs() <= 3.0 * se + 1e-12,
            "{label}: mean {mean}, exact {truth}, se {se}"
        );
    };
    for i in 0..dim {
        check(
            format!("{:?} coordinate {i}", objective.kind),
            sum[i],
            sum_sq[i],
            exact_flat[i],
        );
    }
    check(format!("{:?} value", objective.kind), v_sum, v_sq, exact.value);
}

#[test]
fn sampled_gradients_are_unbiased() {
    let g = two_node();
    let normalized = normalize(&g).unwrap();
    let sampler = BatchSampler::symmetric(&g).unwrap();
    let model = EmbeddingModel {
        features: dmatrix![0.4, -0.3; 0.6, 0.2],
        features_b: None,
        raw_importance: DVector::from_vec(vec![0.3, -0.5]),
    };
    for kind in [LossKind::Scl, LossKind::Tricl, LossKind::Trimse] {
        let target = dmatrix![0.5, 0.1; -0.2, 0.7];
        let objective = Objective {
            kind,
            target: LossTarget::Symmetric {
                normalized: &normalized,
                degrees: &g.degrees,
            },
            penalty_weight: 0.7,
            trimse_target: Some(&target),
        };
        assert_unbiased(&objective, &model, &sampler, &g.degrees, &g.degrees);
    }

    let joint = dmatrix![0.25, 0.1, 0.05; 0.05, 0.15, 0.4];
    let bg = BipartiteGraph::from_joint(joint, vec![0, 1], vec![0, 0, 1]).unwrap();
    let pbar = normalize_bipartite(&bg).unwrap();
    let model = EmbeddingModel {
        features: dmatrix![0.4, -0.3; 0.6, 0.2],
        features_b: Some(dmatrix![0.1, 0.5; -0.4, 0.3; 0.2, 0.2]),
        raw_importance: DVector::from_vec(vec![0.3, -0.5]),
    };
    let objective = Objective {
        kind: LossKind::Triclip,
        target: LossTarget::Bipartite { normalized: &pbar },
        penalty_weight: 0.7,
        trimse_target: None,
    };
    let sampler = BatchSampler::bipartite(&bg).unwrap();
    assert_unbiased(&objective, &model, &sampler, &bg.marginal_a, &bg.marginal_b);
}

#[test]
fn sampled_infonce_approaches_exact_with_large_batches() {
    let g = small_class_graph(4);
    let normalized = normalize(&g).unwrap();
    let sampler = BatchSampler::symmetric(&g).unwrap();
    let model = init_model(g.n_nodes, 3, 4, 0.5);
    let objective = Objective {
        kind: LossKind::TriInfonce,
        target: LossTarget::Symmetric {
            normalized: &normalized,
            degrees: &g.degrees,
        },
        penalty_weight: 1.0,
        trimse_target: None,
    };
    let exact = objective.evaluate(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = draw_batch(&sampler, &mut rng, 20_000);
    let est = sampled_loss(&objective, &model, &batch, &g.degrees, &g.degrees).unwrap();
    let rel = (&est.grad_features - &exact.grad_features).norm() / exact.grad_features.norm();
    assert!(rel < 0.1, "relative gradient deviation {rel}");
}

#[test]
fn canonicalization_examples() {
    let t = fixture(dmatrix![0.0, -0.3; 0.7, 0.5], &[1.0, 0.5]);
    let degrees = DVector::from_element(2, 1.0);
    let c = canonicalize_signs(&t, &degrees).unwrap();
    assert_eq!(c.anchors, vec![1, 0]);
    assert_eq!(c.model.features, dmatrix![0.0, -0.3; -0.7, 0.5]);
    assert!(c.canonicalized);
    let twice = canonicalize_signs(&c, &degrees).unwrap();
    assert_eq!(twice, c);

    let dead = fixture(dmatrix![1e-9, 1.0; -1e-10, 1.0], &[1.0, 1.0]);
    match canonicalize_signs(&dead, &degrees) {
        Err(Error::DeadDimension { dim: 0, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn canonicalization_uses_unscaled_anchor_threshold() {
    // Scaled entry 2e-8 sits above the tolerance, its unscaled value 1e-8·2/√(4)... does not.
    let t = fixture(dmatrix![2e-8; 1.0], &[1.0]);
    let degrees = DVector::from_vec(vec![16.0, 1.0]);
    let c = canonicalize_signs(&t, &degrees).unwrap();
    assert_eq!(c.anchors, vec![1]);
    assert_eq!(c.model.features[(1, 0)], -1.0);
}

#[test]
fn bipartite_canonicalization_flips_both_sides() {
    let mut t = fixture(dmatrix![0.5, -0.5; 0.1, 0.2], &[1.0, 0.5]);
    t.model.features_b = Some(dmatrix![0.3, 0.4; 0.6, -0.1; 0.2, 0.2]);
    let c = canonicalize_signs(&t, &DVector::from_element(2, 0.5)).unwrap();
    assert_eq!(c.model.features.column(0), -t.model.features.column(0));
    assert_eq!(
        c.model.features_b.as_ref().unwrap().column(0),
        -t.model.features_b.as_ref().unwrap().column(0)
    );
    assert_eq!(
        c.model.features_b.as_ref().unwrap().column(1),
        t.model.features_b.as_ref().unwrap().column(1)
    );
}

#[test]
fn canonical_check() {
    assert!(check_canonical(&dmatrix![0.0, -1.0; -0.5, 2.0], 1e-8).is_ok());
    assert!(matches!(
        check_canonical(&dmatrix![0.0, 1.0; -0.5, 2.0], 1e-8),
        Err(Error::NotCanonical { dim: 1 })
    ));
    let mut m = dmatrix![0.3, 0.0; 0.1, 0.2];
    let anchors = canonicalize_feature_signs(&mut m, 1e-8).unwrap();
    assert_eq!(anchors, vec![0, 1]);
    assert!(check_canonical(&m, 1e-8).is_ok());
}

#[test]
fn sorting_examples() {
    let t = fixture(dmatrix![1.0, 2.0; 3.0, 4.0], &[0.2, 1.0]);
    let (sorted, perm) = sort_by_importance(&t);
    assert_eq!(perm, vec![1, 0]);
    assert_eq!(sorted.model.features, dmatrix![2.0, 1.0; 4.0, 3.0]);
    assert!((sorted.model.importance()[0] - 1.0).abs() < 1e-12);

    let (again, perm) = sort_by_importance(&sorted);
    assert_eq!(perm, vec![0, 1]);
    assert_eq!(again.model, sorted.model);

    let tied = fixture(dmatrix![1.0, 2.0, 3.0], &[0.5, 0.7, 0.5]);
    assert_eq!(sort_by_importance(&tied).1, vec![1, 0, 2]);
}

#[test]
fn sorting_leaves_tricl_loss_unchanged() {
    let g = small_class_graph(6);
    let normalized = normalize(&g).unwrap();
    let mut t = fixture(init_model(g.n_nodes, 4, 6, 1.0).features, &[0.3, 0.9, 0.1, 0.5]);
    t.anchors = vec![0, 1, 2, 3];
    let (sorted, perm) = sort_by_importance(&t);
    assert_eq!(sorted.anchors, perm);
    let before = tricl_loss(&normalized, &t.model.features, &t.model.raw_importance, 1.0)
        .unwrap()
        .value;
    let after = tricl_loss(&normalized, &sorted.model.features, &sorted.model.raw_importance, 1.0)
        .unwrap()
        .value;
    assert!((before - after).abs() < 1e-12);
}

#[test]
fn top_feature_selection() {
    let t = fixture(dmatrix![-1.0, 2.0, 0.5; 3.0, -4.0, 0.1], &[1.0, 0.5, 0.2]);
    let degrees = DVector::from_vec(vec![0.25, 0.25]);
    assert!(select_top_features(&t, &degrees, 1).is_err());
    let c = canonicalize_signs(&t, &degrees).unwrap();
    let (s, _) = sort_by_importance(&c);
    let all = select_top_features(&s, &degrees, 3).unwrap();
    assert_eq!(all, unscale_rows(&s.model.features, &degrees));
    let one = select_top_features(&s, &degrees, 1).unwrap();
    assert_eq!(one.ncols(), 1);
    assert_eq!(one.column(0), all.column(0));
    assert!(select_top_features(&s, &degrees, 0).is_err());
    assert!(select_top_features(&s, &degrees, 4).is_err());
}

#[test]
fn json_round_trip() {
    let g = small_class_graph(7);
    let config = TrainConfig {
        loss_kind: LossKind::Trimse,
        k: 2,
        steps: 5,
        ..Default::default()
    };
    let t = train(&g, &config).unwrap();
    let c = canonicalize_signs(&t, &g.degrees).unwrap();
    let text = c.to_json().unwrap();
    let back = TrainedModel::from_json(&text).unwrap();
    assert_eq!(back, c);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["F", "raw_importance", "s", "anchors", "config", "history"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["s"][0].as_f64().unwrap(), softplus(c.model.raw_importance[0]));
}
