use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use super::execute;

struct Output {
    code: u8,
    stdout: String,
    stderr: String,
}

fn invoke(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = execute(
        std::iter::once("tricl-lab").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let (config, out) = (config.to_str().unwrap(), out.to_str().unwrap());
    let mut args = vec![command, "--config", config, "--out", out];
    args.extend_from_slice(extra);
    invoke(&args)
}

fn assert_ok(output: &Output) {
    assert_eq!(output.code, 0, "stderr: {}", output.stderr);
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let j = header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

fn assert_single_line_error(output: &Output, tag: &str) {
    assert_ne!(output.code, 0);
    let stderr = &output.stderr;
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    assert!(lines[0].starts_with(&format!("error[{tag}]: ")), "stderr: {stderr}");
}

const TWO_NODE: &str = r#"{
  "graph": {"adjacency": {"matrix": [[0.3, 0.2], [0.2, 0.3]], "labels": [0, 1]}},
  "train": {"loss_kind": "tricl", "k": 2, "learning_rate": 0.05, "steps": 5000},
  "eval": {"m_grid": [1, 2], "block_size": 1, "neighbors": 1, "top_r": 1, "trials": 0}
}"#;

const CLASS_GRAPH: &str = r#"{
  "seed": 4,
  "graph": {"class": {"num_classes": 2, "naturals_per_class": 3, "augmentations_per_natural": 3,
                      "within_class_mix": 0.5, "cross_class_leak": 0.1, "seed": 4}},
  "train": {"loss_kind": "tricl", "k": 4, "learning_rate": 0.05, "steps": 3000},
  "eval": {"block_size": 2, "neighbors": 3, "top_r": 5, "trials": 5},
  "bounds": {"k": 6}
}"#;

#[test]
fn two_node_demo_recovers_importance() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", TWO_NODE);
    let out = dir.path().join("out");
    assert_ok(&run("train-eval", &config, &out, &[]));
    let (header, rows) = csv_rows(&out.join("importance.csv"));
    assert_eq!(header, ["dim", "s", "normalized", "oracle_sigma", "abs_error"]);
    let s = column(&header, &rows, "s");
    assert!((s[0] - 1.0).abs() < 1e-3 && (s[1] - 0.2).abs() < 1e-3, "{s:?}");
    for name in ["model.json", "metrics.csv", "manifest.json"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn train_eval_metrics_lie_in_unit_interval() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", CLASS_GRAPH);
    let out = dir.path().join("out");
    assert_ok(&run("train-eval", &config, &out, &[]));
    let (header, rows) = csv_rows(&out.join("metrics.csv"));
    assert_eq!(header, ["metric", "m_or_block", "value"]);
    let metrics: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    for name in [
        "probe_error",
        "random_subset_probe_error",
        "knn_accuracy",
        "retrieval_map",
        "importance",
        "oracle_probe_error",
    ] {
        assert!(metrics.contains(&name), "{name} missing");
    }
    for v in column(&header, &rows, "value") {
        assert!((0.0..=1.0).contains(&v) && v.is_sign_positive(), "{v}");
    }
}

#[test]
fn missing_output_directory_is_created() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", TWO_NODE);
    let out = dir.path().join("a").join("b").join("c");
    assert_ok(&run("train-eval", &config, &out, &[]));
    assert!(out.join("importance.csv").is_file());
}

#[test]
fn manifest_lists_every_file_with_digest() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", TWO_NODE);
    let out = dir.path().join("out");
    assert_ok(&run("train-eval", &config, &out, &[]));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train-eval");
    let files = manifest["files"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
    for name in ["model.json", "importance.csv", "metrics.csv"] {
        assert!(names.contains(&name), "{names:?}");
    }
    for f in files {
        let bytes = fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        let digest = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes));
        assert_eq!(f["sha256"].as_str().unwrap(), digest);
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
}

#[test]
fn identifiability_default_separates_methods_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", r#"{"identifiability": {}}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&run("identifiability", &config, &a, &[]));
    assert_ok(&run("identifiability", &config, &b, &[]));
    let body = fs::read(a.join("identifiability.csv")).unwrap();
    assert_eq!(body, fs::read(b.join("identifiability.csv")).unwrap());

    let (header, rows) = csv_rows(&a.join("identifiability.csv"));
    let d = column(&header, &rows, "distance");
    let mean = |method: &str| {
        let v: Vec<f64> = rows
            .iter()
            .zip(&d)
            .filter(|(r, _)| r[0] == method)
            .map(|(_, d)| *d)
            .collect();
        assert_eq!(v.len(), 45);
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean("trifactor") < 1e-6);
    assert!(mean("bifactor") > 1.0);
}

#[test]
fn identifiability_with_trained_runs() {
    let dir = TempDir::new().unwrap();
    let body = CLASS_GRAPH.replacen(
        '{',
        r#"{"identifiability": {"rows": 20, "cols": 15, "k": 4, "num_solutions": 3, "trained_runs": 2},"#,
        1,
    );
    let config = write_config(dir.path(), "c.json", &body);
    let out = dir.path().join("out");
    assert_ok(&run("identifiability", &config, &out, &[]));
    let (_, rows) = csv_rows(&out.join("identifiability.csv"));
    for method in ["bifactor", "trifactor", "trained_tricl", "trained_scl"] {
        assert!(rows.iter().any(|r| r[0] == method), "{method} missing");
    }
}

#[test]
fn invalid_k_exits_with_single_line_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        r#"{"identifiability": {"rows": 10, "cols": 8, "k": 9}}"#,
    );
    let output = run("identifiability", &config, &dir.path().join("out"), &[]);
    assert_single_line_error(&output, "config");
    assert_eq!(output.code, 2);
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", r#"{"identifiability": {}, "colour": 3}"#);
    assert_single_line_error(&run("identifiability", &config, &dir.path().join("out"), &[]), "config");
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let output = run(
        "bounds-sweep",
        &dir.path().join("nope.json"),
        &dir.path().join("out"),
        &[],
    );
    assert_single_line_error(&output, "io");
}

#[test]
fn usage_errors_are_single_line() {
    let output = invoke(&["train-eval"]);
    assert_single_line_error(&output, "usage");
    assert_eq!(output.code, 2);
}

#[test]
fn bounds_gap_is_nonnegative_and_vanishes_at_k() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", CLASS_GRAPH);
    let out = dir.path().join("out");
    assert_ok(&run("bounds-sweep", &config, &out, &[]));
    let (header, rows) = csv_rows(&out.join("bounds.csv"));
    assert_eq!(header, ["m", "u_scl", "u_tricl", "gap", "alpha"]);
    assert_eq!(rows.len(), 6);
    let gap = column(&header, &rows, "gap");
    assert!(gap.iter().all(|g| *g >= 0.0), "{gap:?}");
    assert_eq!(gap[5], 0.0);

    let spec: tricl_core::graph::ClassGraphSpec = serde_json::from_value(serde_json::json!({
        "num_classes": 2, "naturals_per_class": 3, "augmentations_per_natural": 3,
        "within_class_mix": 0.5, "cross_class_leak": 0.1, "seed": 4
    }))
    .unwrap();
    let alpha = tricl_core::graph::compute_alpha(&tricl_core::graph::generate_class_graph(&spec).unwrap()).unwrap();
    assert!(column(&header, &rows, "alpha").iter().all(|a| *a == alpha));
}

#[test]
fn bounds_from_explicit_spectrum() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        r#"{"bounds": {"k": 3, "spectrum": [1.0, 0.5, 0.25, 0.1], "alpha": 0.0}}"#,
    );
    let out = dir.path().join("out");
    assert_ok(&run("bounds-sweep", &config, &out, &[]));
    let (header, rows) = csv_rows(&out.join("bounds.csv"));
    let u_tricl = column(&header, &rows, "u_tricl");
    // 32 · Σ_{i>m} σ_i²
    for (m, expected) in [(1, 0.3225), (2, 0.0725), (3, 0.01)] {
        assert!((u_tricl[m - 1] - 32.0 * expected).abs() < 1e-12, "m = {m}");
    }
}

#[test]
fn unsorted_spectrum_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        r#"{"bounds": {"k": 2, "spectrum": [0.1, 0.5, 0.2]}}"#,
    );
    assert_ne!(run("bounds-sweep", &config, &dir.path().join("out"), &[]).code, 0);
}

#[test]
fn gradient_audit_passes_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", r#"{"seed": 5, "audit": {"instances": 4}}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&run("gradient-audit", &config, &a, &[]));
    assert_ok(&run("gradient-audit", &config, &b, &[]));
    let body = fs::read(a.join("audit.csv")).unwrap();
    assert_eq!(body, fs::read(b.join("audit.csv")).unwrap());
    let (header, rows) = csv_rows(&a.join("audit.csv"));
    assert_eq!(rows.len(), 5);
    let pass = header.iter().position(|h| h == "pass").unwrap();
    assert!(rows.iter().all(|r| r[pass] == "true"));
}

#[test]
fn unknown_loss_name_fails() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", r#"{"audit": {"losses": ["tricl", "simclr"]}}"#);
    let output = run("gradient-audit", &config, &dir.path().join("out"), &[]);
    assert_single_line_error(&output, "config");
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        r#"{"seed": 1, "identifiability": {"rows": 12, "cols": 10, "k": 3, "num_solutions": 3}}"#,
    );
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_ok(&run("identifiability", &config, &a, &[]));
    assert_ok(&run("identifiability", &config, &b, &["--seed", "2"]));
    assert_ok(&run("identifiability", &config, &c, &["--seed", "1"]));
    let read = |p: &Path| fs::read(p.join("identifiability.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
    assert_eq!(read(&a), read(&c));
}

#[test]
fn help_lists_config_schema() {
    let output = invoke(&["--help"]);
    assert_eq!(output.code, 0);
    let text = &output.stdout;
    for needle in [
        "train-eval",
        "bounds-sweep",
        "gradient-audit",
        "identifiability",
        "loss_kind",
        "m_grid",
        "bounds.csv",
    ] {
        assert!(text.contains(needle), "{needle} missing from help");
    }
}

#[test]
fn unnormalized_adjacency_is_a_compute_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        &TWO_NODE.replace("0.3", "0.6").replace("0.2", "0.4"),
    );
    let output = run("train-eval", &config, &dir.path().join("out"), &[]);
    assert_single_line_error(&output, "compute");
    assert_eq!(output.code, 1);
}

#[test]
fn success_prints_summary() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", r#"{"bounds": {"k": 1, "spectrum": [1.0, 0.5]}}"#);
    let output = run("bounds-sweep", &config, &dir.path().join("out"), &[]);
    assert_ok(&output);
    assert!(output.stdout.contains("wrote 2 files"), "{}", output.stdout);
    assert!(output.stderr.is_empty());
}
