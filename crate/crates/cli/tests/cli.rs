use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcegp::gp::{parse_inspect_report, ModelDocument};

fn pcegp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcegp"))
        .args(args)
        .env_remove("PCEGP_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 20-point smooth 2-D dataset plus a config with a small search budget.
fn fixture(dir: &Path, noise: &str) -> PathBuf {
    let mut csv = String::from("u,v,target\n");
    for i in 0..20 {
        let u = (i as f64 * 0.377).fract();
        let v = (i as f64 * 0.619 + 0.1).fract();
        csv.push_str(&format!("{u},{v},{}\n", (3.0 * u).sin() + 0.5 * v));
    }
    std::fs::write(dir.join("train.csv"), csv).unwrap();
    let config = format!(
        r#"seed = 4
n_folds = 3

[data]
path = "train.csv"
target = "target"

[model]
kernels = [{{ form = "squared_exponential" }}, {{ form = "matern_3_2" }}]
noise = {noise}

[search]
n_trials = 4
n_initial = 2
n_iterations = 10
n_folds = 3
bounds = {{ q_range = [0, 2] }}
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_writes_round_tripping_model_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), r#"{ mode = "fixed", value = 1e-4 }"#);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let o = pcegp(&["fit", "--config", s(&cfg), "--output", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let model = out_a.join("model.json");
    let doc = ModelDocument::load(&model).unwrap();
    assert_eq!(ModelDocument::from_json(&doc.to_json().unwrap()).unwrap(), doc);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(out_b.join("model.json")).unwrap());
    let history = std::fs::read_to_string(out_a.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 4);
}

#[test]
fn invalid_config_key_exits_2_naming_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), r#"{ mode = "fixed", value = 1e-4 }"#);
    let o = pcegp(&[
        "fit",
        "--config",
        s(&cfg),
        "--set",
        "search.n_trails=3",
        "--output",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_trails"), "{}", stderr(&o));
    std::fs::write(dir.path().join("bad.toml"), "colour = 3\n").unwrap();
    let o = pcegp(&["benchmark", "--config", s(&dir.path().join("bad.toml")), "--output", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
    assert!(!Path::new("x").exists());
}

#[test]
fn predict_interpolates_and_handles_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), r#"{ mode = "fixed", value = 1e-10 }"#);
    let out = dir.path().join("fit");
    let o = pcegp(&["fit", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = out.join("model.json");

    let preds = dir.path().join("preds.csv");
    let train = dir.path().join("train.csv");
    let o = pcegp(&["predict", s(&model), s(&train), "--output", s(&preds)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mean,variance"));
    let truth: Vec<f64> = std::fs::read_to_string(&train)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (m, v) = l.split_once(',').unwrap();
            (m.parse().unwrap(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), truth.len());
    for ((m, v), t) in rows.iter().zip(&truth) {
        assert!((m - t).abs() <= 1e-4 * t.abs().max(1.0), "{m} vs {t}");
        assert!(*v >= 0.0);
    }

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = pcegp(&["predict", s(&model), s(&empty)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout), "mean,variance\n");

    let header_only = dir.path().join("header.csv");
    std::fs::write(&header_only, "u,v\n").unwrap();
    let o = pcegp(&["predict", s(&model), s(&header_only)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout), "mean,variance\n");

    let missing = dir.path().join("missing.csv");
    std::fs::write(&missing, "u\n0.5\n").unwrap();
    let o = pcegp(&["predict", s(&model), s(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("\"v\""), "{}", stderr(&o));

    let extra = dir.path().join("extra.csv");
    std::fs::write(&extra, "u,v,w\n0.5,0.5,1\n").unwrap();
    let o = pcegp(&["predict", s(&model), s(&extra)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("\"w\""), "{}", stderr(&o));
}

#[test]
fn inspect_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(
        dir.path(),
        r#"{ mode = "pce", bases = [{ family = "legendre_shifted_01" }], floor = 1e-8 }"#,
    );
    let out = dir.path().join("fit");
    let o = pcegp(&["fit", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = out.join("model.json");
    let o = pcegp(&["inspect", s(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = String::from_utf8(o.stdout).unwrap();
    let parsed = parse_inspect_report(&report).unwrap();
    let doc = ModelDocument::load(&model).unwrap();
    assert_eq!(parsed.kernels.len(), 2);
    for (k, (var, coeffs)) in parsed.kernels.iter().enumerate() {
        assert_eq!(*var, doc.theta.variances[k]);
        assert_eq!(coeffs.concat(), doc.theta.lengthscale[k]);
    }
    assert_eq!(parsed.noise.concat(), doc.theta.noise);

    std::fs::write(dir.path().join("corrupt.json"), "{\"format\": 1").unwrap();
    let o = pcegp(&["inspect", s(&dir.path().join("corrupt.json"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn benchmark_and_baseline_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), r#"{ mode = "fixed", value = 1e-4 }"#);
    let mut reports = Vec::new();
    for name in ["r1", "r2"] {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_pcegp"))
            .args(["benchmark", "--config", s(&cfg), "--output", s(&out), "--seed", "9"])
            .env("PCEGP_THREADS", "2")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("mean rmse"));
        assert!(out.join("report.txt").exists() && out.join("timing.json").exists());
        reports.push(std::fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);

    let out = dir.path().join("base");
    let o = pcegp(&["baseline", "--config", s(&cfg), "--output", s(&out), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(json.contains("\"method\": \"baseline\""));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(pcegp(&[]).status.code(), Some(2));
    assert_eq!(pcegp(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = pcegp(&["benchmark", "--set", "data.path=nope.csv", "--set", "data.target=y", "--output", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}
