use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn symgnn(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_symgnn"));
    cmd.args(args).env_remove("SYMGNN_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str], env: &[(&str, &str)]) {
    let mut args = vec!["gen-data", "--classes", "2", "--per-class", "4", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&symgnn(&args, env));
}

#[test]
fn seed_comes_from_the_environment_when_not_given() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    gen(&a, &["--seed", "5"], &[]);
    gen(&b, &[], &[("SYMGNN_SEED", "5")]);
    gen(&c, &[], &[]);
    let read = |d: &Path| fs::read(d.join("samples.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let bad = symgnn(&["gen-data", "--out", p(&tmp.path().join("d"))], &[("SYMGNN_SEED", "x")]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_eval_predict_export() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, &["--seed", "1"], &[]);
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"model": {"seed": 3}, "epochs": 1, "batch_size": 4, "lr": 0.001}"#).unwrap();
    let run = tmp.path().join("run");
    let text = ok(&symgnn(&["train", "--config", p(&config), "--data", p(&data), "--out", p(&run)], &[]));
    assert!(text.starts_with("trained 1 epochs"));
    for f in ["joint.ckpt", "summary.json", "train_log.jsonl"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = run.join("joint.ckpt");

    let report: serde_json::Value =
        serde_json::from_str(&ok(&symgnn(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--metrics", "top1,pck"], &[])))
            .unwrap();
    let top1 = report["top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    assert_eq!(report["pck_005"].as_array().unwrap().len(), 10);

    let pred = tmp.path().join("pred");
    ok(&symgnn(&["predict", "--checkpoint", p(&ckpt), "--data", p(&data), "--horizon", "4", "--out", p(&pred)], &[]));
    let lines = fs::read_to_string(pred.join("samples.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 8);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["pred"].as_array().unwrap().len(), 4);
    assert_eq!(first["prev"].as_array().unwrap().len(), 40);
    assert_eq!(symgnn(&["predict", "--checkpoint", p(&ckpt), "--data", p(&data), "--horizon", "0", "--out", p(&pred)], &[]).status.code(), Some(1));

    let csv = tmp.path().join("graph.csv");
    ok(&symgnn(&["export-graph", "--checkpoint", p(&ckpt), "--sample", "2", "--out", p(&csv)], &[]));
    let rows: Vec<Vec<f64>> = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 11);
    for row in &rows {
        assert_eq!(row.len(), 11);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
    let out = symgnn(&["export-graph", "--checkpoint", p(&ckpt), "--sample", "99", "--out", p(&csv)], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_exit_codes() {
    let out = symgnn(&["verify", "--suite", "mgda", "--trials", "20"], &[]);
    let text = ok(&out);
    assert!(text.starts_with("PASS"));
    let out = symgnn(&["verify", "--suite", "stability", "--trials", "5", "--seed", "3"], &[]);
    assert!(ok(&out).lines().all(|l| l.starts_with("PASS")));
    assert_eq!(symgnn(&["verify", "--suite", "bogus"], &[]).status.code(), Some(1));
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(symgnn(&["eval", "--checkpoint", p(&tmp.path().join("none.ckpt")), "--data", p(tmp.path())], &[]).status.code(), Some(1));
    assert_eq!(symgnn(&["train", "--bogus-flag"], &[]).status.code(), Some(1));
    assert_eq!(symgnn(&[], &[]).status.code(), Some(1));
    assert_eq!(symgnn(&["--help"], &[]).status.code(), Some(0));

    let data = tmp.path().join("data");
    gen(&data, &["--seed", "1"], &[]);
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"epochs": 1, "no_such_field": 3}"#).unwrap();
    let out = symgnn(&["train", "--config", p(&config), "--data", p(&data), "--out", p(&tmp.path().join("run"))], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_field"));

    fs::write(data.join("samples.jsonl"), "{\"label\": 7}\n").unwrap();
    let out = symgnn(&["eval", "--checkpoint", p(&tmp.path().join("x.ckpt")), "--data", p(&data)], &[]);
    assert_eq!(out.status.code(), Some(1));
}
