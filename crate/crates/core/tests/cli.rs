use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loho"))
}

fn scene() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes/three_objects.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("LOHO_LOG").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn run_twice_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        ok(&["run", "--scene", s.to_str().unwrap(), "--seed", "7", "--p-slip", "0.3", "--out", out.to_str().unwrap()]);
    }
    let a = fs::read(dir.path().join("a/episode_7.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b/episode_7.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn batch_output_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene();
    for jobs in ["1", "8"] {
        let out = dir.path().join(jobs);
        ok(&[
            "batch", "--scene", s.to_str().unwrap(), "--seeds", "0..12", "--jobs", jobs, "--out", out.to_str().unwrap(),
        ]);
    }
    let mut names: Vec<_> = fs::read_dir(dir.path().join("1")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 12 + 2);
    for name in names {
        assert_eq!(
            fs::read(dir.path().join("1").join(&name)).unwrap(),
            fs::read(dir.path().join("8").join(&name)).unwrap(),
            "{name:?}"
        );
    }
    let summary = fs::read_to_string(dir.path().join("1/summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines.next().unwrap().starts_with("episodes,successes,errors,success_rate,wilson_low,wilson_high"));
    assert!(lines.next().unwrap().starts_with("12,12,0,1.0,"));
}

#[test]
fn eval_identical_trajectories_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pairs.jsonl");
    fs::write(
        &input,
        concat!(
            r#"{"id": "same", "predicted": [[0, 0], [250, 400], [1000, 1000]], "reference": [[0, 0], [250, 400], [1000, 1000]]}"#,
            "\n",
            r#"{"predicted": [[0, 0]], "reference": [[600, 800]]}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = ok(&["eval", input.to_str().unwrap()]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines, ["id,dfd,hausdorff,rmse", "same,0.0,0.0,0.0", "1,1.0,1.0,1.0", "mean,0.5,0.5,0.5"]);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["run"]).status.code(), Some(1));
    assert_eq!(run(&["batch", "--scene", scene().to_str().unwrap(), "--seeds", "5..1"]).status.code(), Some(1));
    let missing = run(&["run", "--scene", "/nonexistent/scene.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(missing.stdout.is_empty());
    assert!(!missing.stderr.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("pairs.jsonl");
    fs::write(&bad, "{\"predicted\": [[0, 0]], \"reference\": [[2000, 0]]}\n").unwrap();
    assert_eq!(run(&["eval", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("loho.toml");
    fs::write(
        &cfg,
        format!("scene = {:?}\nbudget = 10\nout = {:?}\n", scene(), dir.path().join("from_file")),
    )
    .unwrap();
    ok(&["--config", cfg.to_str().unwrap(), "run", "--seed", "1"]);
    let log = fs::read_to_string(dir.path().join("from_file/episode_1.jsonl")).unwrap();
    let summary = log.lines().last().unwrap();
    assert!(summary.contains(r#""outcome":"budget_exhausted""#), "{summary}");
    assert!(summary.contains(r#""frames":10"#));

    let flag_out = dir.path().join("from_flag");
    ok(&["--config", cfg.to_str().unwrap(), "run", "--seed", "1", "--budget", "5000", "--out", flag_out.to_str().unwrap()]);
    let log = fs::read_to_string(flag_out.join("episode_1.jsonl")).unwrap();
    assert!(log.lines().last().unwrap().contains(r#""outcome":"success""#));

    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "run"]).status.code(), Some(1));
}

#[test]
fn curate_then_render() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    ok(&[
        "batch", "--scene", scene().to_str().unwrap(), "--seeds", "0..3", "--p-slip", "0.3", "--gzip", "--out",
        logs.to_str().unwrap(),
    ]);
    let samples = dir.path().join("samples.jsonl");
    let images = dir.path().join("img");
    ok(&[
        "curate", logs.to_str().unwrap(), "--out", samples.to_str().unwrap(), "--failures", "2", "--seed", "4",
        "--render-dir", images.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&samples).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(rows.iter().filter(|r| r["recovery"] == true).count() == 6);
    assert!(rows.iter().filter(|r| r["terminal"] == true).count() == 3);
    assert!(rows.iter().filter(|r| r["target_trace"].is_null()).all(|r| r["image"].is_null()));
    assert!(rows.iter().filter(|r| !r["target_trace"].is_null()).all(|r| r["image"].is_string()));

    let ppm = dir.path().join("t.ppm");
    ok(&["render-trace", samples.to_str().unwrap(), "--index", "1", "--width", "64", "--height", "48", "--out", ppm.to_str().unwrap()]);
    let bytes = fs::read(&ppm).unwrap();
    assert!(bytes.starts_with(b"P6\n64 48\n255\n"));
    assert_eq!(bytes.len(), b"P6\n64 48\n255\n".len() + 64 * 48 * 3);

    let terminal = rows.iter().position(|r| r["terminal"] == true).unwrap().to_string();
    assert_eq!(
        run(&["render-trace", samples.to_str().unwrap(), "--index", &terminal, "--out", ppm.to_str().unwrap()]).status.code(),
        Some(2)
    );
}
