use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualxda::attribution::load_attributions;
use dualxda::baselines::{gradient_cache, retrain_head, RetrainOptions};
use dualxda::load_cache;
use dualxda::store::save_gradients;
use serde_json::Value;

fn dualxda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualxda")).args(args).env_remove("DXDA_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = dualxda(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(args: &[&str]) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    serde_json::from_slice(&ok(&full).stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Blobs {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Blobs {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["synth", "--out-dir", p(&root), "--n-train", "90", "--n-test", "12", "--seed", "5"]);
        ok(&["solve", "--features", p(&root.join("train.dxfc")), "--C", "0.01", "--out", p(&root.join("model.dxda"))]);
        Blobs { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn attribute(&self, out: &str, extra: &[&str]) -> Output {
        let (m, tr, te, o) = (self.path("model.dxda"), self.path("train.dxfc"), self.path("test.dxfc"), self.path(out));
        let mut args = vec!["attribute", "--model", p(&m), "--train", p(&tr), "--test", p(&te), "--out", p(&o)];
        args.extend_from_slice(extra);
        ok(&args)
    }
}

#[test]
fn solve_reports_support_and_gap() {
    let b = Blobs::new();
    let r = json(&["solve", "--features", p(&b.path("train.dxfc")), "--out", p(&b.path("m2.dxda"))]);
    assert!(r["n_sv"].as_u64().unwrap() > 0);
    assert!(r["duality_gap"].as_f64().unwrap() >= -1e-9);
    assert_eq!(r["status"], "converged");
}

#[test]
fn effective_config_goes_to_stderr_with_defaults() {
    let b = Blobs::new();
    let out = ok(&["solve", "--features", p(&b.path("train.dxfc")), "--out", p(&b.path("m2.dxda"))]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().find(|l| l.starts_with("config: ")).unwrap();
    let config: Value = serde_json::from_str(&line["config: ".len()..]).unwrap();
    assert_eq!(config["command"]["C"], 0.001);
    assert_eq!(config["command"]["tol"], 1e-4);
    assert!(config["threads"].as_u64().unwrap() >= 1);
}

#[test]
fn attribute_then_identical_class() {
    let b = Blobs::new();
    b.attribute("attr.dxat", &[]);
    let attr = load_attributions(b.path("attr.dxat")).unwrap();
    assert_eq!(attr.scores.dim(), (12, 90));
    let r = json(&["eval", "identical-class", "--attr", p(&b.path("attr.dxat")), "--train", p(&b.path("train.dxfc"))]);
    let score = r["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(r["metric"], "identical-class");
}

#[test]
fn outputs_are_bitwise_reproducible_across_thread_counts() {
    let b = Blobs::new();
    b.attribute("a1.dxat", &["--threads", "1"]);
    b.attribute("a4.dxat", &["--threads", "4"]);
    b.attribute("a4b.dxat", &["--threads", "4"]);
    let read = |n: &str| std::fs::read(b.path(n)).unwrap();
    assert_eq!(read("a1.dxat"), read("a4.dxat"));
    assert_eq!(read("a4.dxat"), read("a4b.dxat"));
}

#[test]
fn thread_flag_overrides_environment() {
    let b = Blobs::new();
    let dir = b.path("x");
    let run = |flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_dualxda"));
        if let Some(n) = flag {
            cmd.args(["--threads", n]);
        }
        let out = cmd.args(["synth", "--out-dir", p(&dir)]).env("DXDA_THREADS", "3").output().unwrap();
        let stderr = String::from_utf8(out.stderr).unwrap();
        let config: Value = serde_json::from_str(&stderr.lines().next().unwrap()["config: ".len()..]).unwrap();
        config["threads"].as_u64().unwrap()
    };
    assert_eq!(run(None), 3);
    assert_eq!(run(Some("2")), 2);
}

#[test]
fn top_k_csv_has_k_rows_per_test_point() {
    let b = Blobs::new();
    b.attribute("a.dxat", &["--csv", p(&b.path("top.csv")), "--top-k", "4"]);
    let text = std::fs::read_to_string(b.path("top.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "test_id,target_class,rank,train_index,score");
    assert_eq!(lines.len(), 1 + 12 * 4);
}

#[test]
fn dense_csv_matches_matrix() {
    let b = Blobs::new();
    b.attribute("a.dxat", &["--csv", p(&b.path("dense.csv")), "--target", "label"]);
    let attr = load_attributions(b.path("a.dxat")).unwrap();
    let text = std::fs::read_to_string(b.path("dense.csv")).unwrap();
    let first: Vec<f64> = text.lines().next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first.len(), 90);
    for (a, b) in first.iter().zip(attr.scores.row(0)) {
        assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
    }
    let test = load_cache(b.path("test.dxfc")).unwrap();
    assert_eq!(attr.target_classes, test.labels());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = dualxda(&["solve", "--features", "a.dxfc", "--out", "m.dxda", "--lambda", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: usage: "));
}

#[test]
fn missing_input_is_a_single_line_io_error() {
    let out = dualxda(&["solve", "--features", "/definitely/missing.dxfc", "--out", "m.dxda"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let last = stderr.lines().last().unwrap();
    assert!(last.starts_with("error: io: /definitely/missing.dxfc"), "{last}");
}

#[test]
fn invalid_c_is_a_validation_error() {
    let b = Blobs::new();
    let out = dualxda(&["solve", "--features", p(&b.path("train.dxfc")), "--C", "-1", "--out", p(&b.path("m.dxda"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("error: validation: C must be positive"));
}

#[test]
fn identity_influence_is_negative_grad_dot() {
    let b = Blobs::new();
    let (tr, te) = (b.path("train.dxfc"), b.path("test.dxfc"));
    let (gd, inf) = (b.path("gd.dxat"), b.path("inf.dxat"));
    ok(&["baselines", "grad-dot", "--train", p(&tr), "--test", p(&te), "--target", "label", "--out", p(&gd)]);
    ok(&[
        "baselines", "influence", "--train", p(&tr), "--test", p(&te), "--target", "label", "--damping", "0",
        "--identity-hessian", "--out", p(&inf),
    ]);
    let (gd, inf) = (load_attributions(gd).unwrap(), load_attributions(inf).unwrap());
    for (a, b) in gd.scores.iter().zip(inf.scores.iter()) {
        assert!((a + b).abs() <= 1e-6 * (1.0 + a.abs()));
    }
}

#[test]
fn tracin_reads_gradient_caches() {
    let b = Blobs::new();
    let train = load_cache(b.path("train.dxfc")).unwrap();
    let test = load_cache(b.path("test.dxfc")).unwrap();
    let w = retrain_head(&train, &RetrainOptions::default()).unwrap().weights;
    for (ckpt, eta) in [(0u32, 0.5f32), (1, 0.25)] {
        save_gradients(&gradient_cache(&w, &train, train.labels(), 16, 9, ckpt, eta).unwrap(), b.path(&format!("tr{ckpt}.dxgc"))).unwrap();
        save_gradients(&gradient_cache(&w, &test, test.labels(), 16, 9, ckpt, eta).unwrap(), b.path(&format!("te{ckpt}.dxgc"))).unwrap();
    }
    let (tr, te, out) = (b.path("train.dxfc"), b.path("test.dxfc"), b.path("tracin.dxat"));
    let (g0, g1, t0, t1) = (b.path("tr0.dxgc"), b.path("tr1.dxgc"), b.path("te0.dxgc"), b.path("te1.dxgc"));
    let r = json(&[
        "baselines", "tracin", "--train", p(&tr), "--test", p(&te), "--target", "label", "--train-grads", p(&g0), p(&g1),
        "--test-grads", p(&t0), p(&t1), "--out", p(&out),
    ]);
    assert_eq!(r["method"], "tracin");
    assert_eq!(load_attributions(out).unwrap().scores.dim(), (12, 90));

    let bad = dualxda(&[
        "baselines", "tracin", "--train", p(&tr), "--test", p(&te), "--train-grads", p(&g0), "--test-grads", p(&t1), "--out",
        p(&b.path("bad.dxat")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn sparsity_and_curves_write_csv() {
    let b = Blobs::new();
    b.attribute("a.dxat", &[]);
    let (a, tr, te) = (b.path("a.dxat"), b.path("train.dxfc"), b.path("test.dxfc"));
    let s = json(&["sparsity", "--attr", p(&a), "--grid", "0.1,1.0", "--curve-csv", p(&b.path("s.csv"))]);
    assert_eq!(s["curve"]["values"][1], 1.0);
    let csv = std::fs::read_to_string(b.path("s.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "fraction,abs_share");
    let c = json(&["eval", "pruning", "--attr", p(&a), "--train", p(&tr), "--test", p(&te), "--fractions", "0.1,0.3"]);
    assert_eq!(c["curve"]["grid"].as_array().unwrap().len(), 2);
    let bad = dualxda(&["eval", "pruning", "--attr", p(&a), "--train", p(&tr), "--test", p(&te), "--fractions", "1.0"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn subclass_and_mislabel_metrics_run() {
    let b = Blobs::new();
    b.attribute("a.dxat", &[]);
    let r = json(&[
        "eval", "identical-subclass", "--attr", p(&b.path("a.dxat")), "--train-groups", p(&b.path("train_groups.txt")),
        "--test-groups", p(&b.path("test_groups.txt")),
    ]);
    assert!((0.0..=1.0).contains(&r["score"].as_f64().unwrap()));
    std::fs::write(b.path("poisoned.txt"), "1, 4\n7").unwrap();
    let r = json(&[
        "eval", "mislabel", "--model", p(&b.path("model.dxda")), "--train", p(&b.path("train.dxfc")), "--poisoned",
        p(&b.path("poisoned.txt")),
    ]);
    assert!((0.0..=1.0).contains(&r["score"].as_f64().unwrap()));
}

#[test]
fn image_pipeline_xda_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["synth", "--images", "--out-dir", p(root), "--n-train", "30", "--n-test", "4"]);
    let (net, model) = (root.join("network/network.toml"), root.join("m.dxda"));
    ok(&["solve", "--features", p(&root.join("train.dxfc")), "--C", "0.01", "--out", p(&model)]);

    let (x, xi, stem) = (root.join("inputs/test_0.f32"), root.join("inputs/train_0.f32"), root.join("pair"));
    let r = json(&[
        "xda", "--network", p(&net), "--model", p(&model), "--test-input", p(&x), "--train-input", p(&xi), "--train-index", "0",
        "--class", "0", "--out", p(&stem),
    ]);
    assert_eq!(r["files"].as_array().unwrap().len(), 6);
    let total = r["test_relevance"].as_f64().unwrap();
    assert!((total - r["attribution"].as_f64().unwrap()).abs() <= 1e-3 * (1.0 + total.abs()));
    let ppm = std::fs::read(root.join("pair.test.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n8 8\n255\n"));
    assert_eq!(ppm.len(), b"P6\n8 8\n255\n".len() + 8 * 8 * 3);

    let h = json(&["export-heatmap", "--network", p(&net), "--input", p(&x), "--composite", "epsilon", "--epsilon", "0", "--out", p(&root.join("h"))]);
    let (explained, got) = (h["explained_output"].as_f64().unwrap(), h["total_relevance"].as_f64().unwrap());
    assert!((explained - got).abs() <= 1e-6 * explained.abs());
    assert_eq!(std::fs::read(root.join("h.f32")).unwrap().len(), 64 * 4);

    let f = json(&["faithfulness", "--model", p(&model), "--train", p(&root.join("train.dxfc")), "--test", p(&root.join("test.dxfc")), "--head", p(&root.join("head.f32"))]);
    assert_eq!(f["original_logits"], "cache");
    assert!(f["weight_cosine"].as_f64().unwrap().abs() <= 1.0 + 1e-12);

    let wrong = dualxda(&["export-heatmap", "--network", p(&net), "--input", p(&root.join("head.f32")), "--out", p(&root.join("w"))]);
    assert_eq!(wrong.status.code(), Some(1));
    assert!(String::from_utf8(wrong.stderr).unwrap().contains("error: validation:"));
}
