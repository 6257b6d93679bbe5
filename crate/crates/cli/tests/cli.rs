use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kappatune::selection::SelectionPlan;
use kappatune::spectral::{read_jsonl, SpectralSummary};
use kappatune::tensor_io::{write_checkpoint, TensorRecord};
use kappatune::toytrain::{ForgettingConfig, ForgettingReport, INSUFFICIENT_SEEDS_FLAG};
use tempfile::TempDir;

fn kappatune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kappatune"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("KAPPA_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two weights with known spectra plus a bias.
fn toy_checkpoint(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("toy.ktan");
    let records = vec![
        // singular values 4, 1: κ = 4
        TensorRecord::from_f32("enc.weight", vec![2, 2], &[4.0, 0.0, 0.0, 1.0]).unwrap(),
        // singular values 3, 2, 1 in a 3x4 block: κ = 3
        TensorRecord::from_f32(
            "dec.weight",
            vec![3, 4],
            &[0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0],
        )
        .unwrap(),
        TensorRecord::from_f32("enc.bias", vec![2], &[0.5, -0.5]).unwrap(),
    ];
    write_checkpoint(&records, &path).unwrap();
    path
}

fn read_report(path: &Path) -> Vec<SpectralSummary> {
    read_jsonl(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_skips_bias_and_sorts_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(&dir);
    let out = dir.path().join("s.jsonl");
    let o = kappatune(&["analyze", "--checkpoint", s(&ckpt), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_report(&out);
    let names: Vec<_> = rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["dec.weight", "enc.weight"]);
    assert!((rows[0].kappa - 3.0).abs() < 1e-12 && (rows[1].kappa - 4.0).abs() < 1e-12);
}

#[test]
fn analyze_exclude_flag_adds_patterns() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(&dir);
    let out = dir.path().join("s.jsonl");
    let o = kappatune(&["analyze", "--checkpoint", s(&ckpt), "--out", s(&out), "--exclude", "dec.*"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_report(&out).len(), 1);
}

#[test]
fn zero_tol_flag_lowers_numerical_rank() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("near.ktan");
    // σ = (1, 1e-8)
    write_checkpoint(
        &[TensorRecord::from_f32("w", vec![2, 2], &[1.0, 0.0, 0.0, 1e-8]).unwrap()],
        &ckpt,
    )
    .unwrap();
    let rank = |extra: &[&str]| {
        let out = dir.path().join("r.jsonl");
        let mut args = vec!["analyze", "--checkpoint", s(&ckpt), "--out", s(&out)];
        args.extend_from_slice(extra);
        assert_eq!(code(&kappatune(&args)), 0);
        read_report(&out)[0].numerical_rank
    };
    assert_eq!(rank(&[]), 2);
    assert_eq!(rank(&["--zero-tol", "1e-6"]), 1);
}

#[test]
fn missing_checkpoint_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.jsonl");
    let o = kappatune(&["analyze", "--checkpoint", s(&dir.path().join("nope.ktan")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
    assert!(!o.stderr.is_empty());
}

#[test]
fn corrupt_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ktan");
    std::fs::write(&bad, b"NOPE0000000000000000").unwrap();
    let out = dir.path().join("s.jsonl");
    assert_eq!(code(&kappatune(&["analyze", "--checkpoint", s(&bad), "--out", s(&out)])), 2);
    assert!(!out.exists());
}

fn plan(dir: &TempDir, ckpt: &Path, strategy: &str, name: &str) -> (Output, SelectionPlan, Vec<u8>) {
    let out = dir.path().join(name);
    let o = kappatune(&["plan", "--checkpoint", s(ckpt), "--k", "2", "--strategy", strategy, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&out).unwrap();
    let p = SelectionPlan::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap();
    (o, p, bytes)
}

#[test]
fn plan_writes_ranked_entries_and_reports_parameter_count() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(&dir);
    let (o, p, first) = plan(&dir, &ckpt, "lowest_kappa", "a.json");
    let names: Vec<_> = p.selected_names().collect();
    assert_eq!(names, ["dec.weight", "enc.weight"]);
    assert!(p.selected[0].kappa <= p.selected[1].kappa);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("16 trainable parameters"), "{stdout}");

    let (_, _, second) = plan(&dir, &ckpt, "lowest_kappa", "b.json");
    assert_eq!(first, second);

    let (_, hi, _) = plan(&dir, &ckpt, "highest_kappa", "c.json");
    assert_eq!(hi.selected_names().collect::<Vec<_>>(), ["enc.weight", "dec.weight"]);
}

#[test]
fn plan_budget_flags_are_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(&dir);
    let out = dir.path().join("p.json");
    let both = kappatune(&[
        "plan", "--checkpoint", s(&ckpt), "--k", "1", "--budget-fraction", "0.5", "--strategy", "by_name", "--out",
        s(&out),
    ]);
    assert_eq!(code(&both), 2);
    let neither = kappatune(&["plan", "--checkpoint", s(&ckpt), "--strategy", "by_name", "--out", s(&out)]);
    assert_eq!(code(&neither), 2);
    let bad = kappatune(&[
        "plan", "--checkpoint", s(&ckpt), "--budget-fraction", "1.5", "--strategy", "by_name", "--out", s(&out),
    ]);
    assert_eq!(code(&bad), 2);
    assert!(!out.exists());

    let ok = kappatune(&[
        "plan", "--checkpoint", s(&ckpt), "--budget-fraction", "0.5", "--strategy", "by_name", "--out", s(&out),
    ]);
    assert_eq!(code(&ok), 0);
    let p = SelectionPlan::read(&out).unwrap();
    assert_eq!(p.selected_names().collect::<Vec<_>>(), ["dec.weight"]);
}

#[test]
fn threads_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ktan");
    assert_eq!(code(&kappatune(&["init-mlp", "--sizes", "8,16,16,4", "--seed", "1", "--out", s(&ckpt)])), 0);
    let mut outs = Vec::new();
    for t in ["1", "2", "4"] {
        let out = dir.path().join(format!("s{t}.jsonl"));
        assert_eq!(code(&kappatune(&["analyze", "--checkpoint", s(&ckpt), "--out", s(&out), "--threads", t])), 0);
        outs.push(std::fs::read(out).unwrap());
    }
    assert!(outs.windows(2).all(|w| w[0] == w[1]));

    let o = Command::new(env!("CARGO_BIN_EXE_kappatune"))
        .args(["analyze", "--checkpoint", s(&ckpt), "--out", s(&dir.path().join("z.jsonl"))])
        .env("KAPPA_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(&dir);
    let before = std::fs::read(&ckpt).unwrap();
    let (_, _, _) = plan(&dir, &ckpt, "random", "r.json");
    let out = dir.path().join("s.jsonl");
    assert_eq!(code(&kappatune(&["analyze", "--checkpoint", s(&ckpt), "--out", s(&out)])), 0);
    assert_eq!(std::fs::read(&ckpt).unwrap(), before);
}

#[test]
fn verify_theory_rejects_too_few_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    let o = kappatune(&["verify-theory", "--samples", "100", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn verify_theory_passes_for_two_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut estimates = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(format!("v{seed}.json"));
        let o = kappatune(&["verify-theory", "--seed", seed, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["passed"], true);
        let knn = v["checks"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["check"] == "knn_entropy_anchor(m=2)")
            .unwrap();
        estimates.push(knn["measured"]["knn_estimate_bits"].as_f64().unwrap());
    }
    assert_ne!(estimates[0], estimates[1]);
    assert!((estimates[0] - estimates[1]).abs() < 0.06);
}

#[test]
fn shipped_config_is_the_library_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo_forgetting.json");
    let shipped = ForgettingConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(shipped, ForgettingConfig::demo());
}

fn small_config(seeds: &[u64]) -> ForgettingConfig {
    let mut cfg = ForgettingConfig::demo();
    cfg.layer_sizes = vec![16, 12, 12, 8];
    for t in [&mut cfg.task_a, &mut cfg.task_b] {
        t.n_train = 64;
        t.n_eval = 32;
    }
    cfg.hyper.epochs = 3;
    cfg.seeds = seeds.to_vec();
    cfg
}

#[test]
fn demo_with_one_seed_runs_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&small_config(&[5])).unwrap()).unwrap();
    let out = dir.path().join("demo");
    let o = kappatune(&["demo-forgetting", "--config", s(&cfg_path), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: ForgettingReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("forgetting_report.json")).unwrap()).unwrap();
    assert!(report.flags.iter().any(|f| f == INSUFFICIENT_SEEDS_FLAG));
    assert!(out.join("forgetting_runs.csv").exists());
    assert!(out.join("plans/lowest_kappa_seed5.json").exists());
    assert!(out.join("plans/highest_kappa_seed5.json").exists());
}

#[test]
fn demo_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&small_config(&[0, 1, 2])).unwrap()).unwrap();
    let mut reports = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(run);
        let o = kappatune(&["demo-forgetting", "--config", s(&cfg_path), "--out-dir", s(&out), "--threads", threads]);
        assert!(code(&o) == 0 || code(&o) == 1);
        reports.push((
            std::fs::read(out.join("forgetting_report.json")).unwrap(),
            std::fs::read(out.join("forgetting_runs.csv")).unwrap(),
            std::fs::read(out.join("plans/lowest_kappa_seed2.json")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    let cases = [
        (r#"{"layer_sizes": [4, 2]}"#, "task_a"),
        (r#"{"layer_sizes": [4, 2], "bogus_field": 1}"#, "bogus_field"),
    ];
    for (text, field) in cases {
        let cfg = dir.path().join("bad.json");
        std::fs::write(&cfg, text).unwrap();
        let o = kappatune(&["demo-forgetting", "--config", s(&cfg), "--out-dir", s(&out)]);
        assert_eq!(code(&o), 2);
        let err = String::from_utf8(o.stderr).unwrap();
        assert!(err.contains(field), "{err}");
    }
    let mut cfg = small_config(&[0, 1, 2]);
    cfg.budget_fraction = 1.5;
    let p = dir.path().join("range.json");
    std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = kappatune(&["demo-forgetting", "--config", s(&p), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8(o.stderr).unwrap().contains("budget_fraction"));
    assert!(!out.exists());
}

#[test]
fn report_renders_known_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ktan");
    assert_eq!(code(&kappatune(&["init-mlp", "--sizes", "4,8,8,8,2", "--out", s(&ckpt)])), 0);
    let spec = dir.path().join("s.jsonl");
    assert_eq!(code(&kappatune(&["analyze", "--checkpoint", s(&ckpt), "--out", s(&spec)])), 0);

    let o = kappatune(&["report", "--in", s(&spec), "--top", "1"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| l.contains("layers.")).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with('L') && rows[3].starts_with('H'));
    assert!(rows[1].starts_with(' ') && rows[2].starts_with(' '));

    let o = kappatune(&["report", "--in", s(&spec), "--format", "csv"]);
    let csv = String::from_utf8(o.stdout).unwrap();
    let kappas: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(kappas.len(), 4);
    assert!(kappas.windows(2).all(|w| w[0] <= w[1]));

    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&small_config(&[0, 1, 2])).unwrap()).unwrap();
    let demo = dir.path().join("demo");
    kappatune(&["demo-forgetting", "--config", s(&cfg_path), "--out-dir", s(&demo)]);
    let o = kappatune(&["report", "--in", s(&demo.join("forgetting_report.json"))]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("median_forgetting") && text.contains("lowest_kappa") && text.contains("highest_kappa"));
    let o = kappatune(&["report", "--in", s(&demo.join("forgetting_report.json")), "--format", "csv"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 3);
}

#[test]
fn report_rejects_unknown_schema() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(&dir);
    let spec = dir.path().join("s.jsonl");
    assert_eq!(code(&kappatune(&["analyze", "--checkpoint", s(&ckpt), "--out", s(&spec)])), 0);
    let mixed = dir.path().join("mixed.jsonl");
    let mut text = std::fs::read_to_string(&spec).unwrap();
    text.push_str("{\"strategy\":\"lowest_kappa\",\"seed\":1}\n");
    std::fs::write(&mixed, text).unwrap();
    let other = dir.path().join("other.json");
    std::fs::write(&other, "{\"hello\": [1, 2, 3]}").unwrap();
    for p in [&mixed, &other] {
        let o = kappatune(&["report", "--in", s(p)]);
        assert_eq!(code(&o), 2);
    }
}

#[test]
fn ingest_and_init_mlp_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let blob: Vec<u8> = (0..6).flat_map(|i| (i as f32).to_le_bytes()).collect();
    std::fs::write(dir.path().join("w.bin"), blob).unwrap();
    std::fs::write(
        dir.path().join("manifest.json"),
        r#"[{"name": "w", "dtype": "f32", "shape": [2, 3], "file": "w.bin"}]"#,
    )
    .unwrap();
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(format!("{run}.ktan"));
        assert_eq!(code(&kappatune(&["ingest", "--manifest", s(&dir.path().join("manifest.json")), "--out", s(&out)])), 0);
        let m = dir.path().join(format!("m{run}.ktan"));
        assert_eq!(code(&kappatune(&["init-mlp", "--sizes", "4,8,2", "--activation", "leaky_relu(0.1)", "--out", s(&m)])), 0);
        outs.push((std::fs::read(out).unwrap(), std::fs::read(m).unwrap()));
    }
    assert_eq!(outs[0], outs[1]);

    let o = kappatune(&["init-mlp", "--sizes", "4", "--out", s(&dir.path().join("x.ktan"))]);
    assert_eq!(code(&o), 2);
    let o = kappatune(&["init-mlp", "--sizes", "4,2", "--activation", "relu6", "--out", s(&dir.path().join("x.ktan"))]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("x.ktan").exists());
}
