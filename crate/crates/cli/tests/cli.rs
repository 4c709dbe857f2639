use std::path::Path;
use std::process::{Command, Output};

fn lbsac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbsac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_data(dir: &Path, behavior: &str, size: usize) -> std::path::PathBuf {
    let out = dir.join(format!("{behavior}.lbd"));
    let o = lbsac(&[
        "gen-data",
        "--env",
        "pointmass-1d",
        "--behavior",
        behavior,
        "--size",
        &size.to_string(),
        "--seed",
        "3",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn lcb_prints_the_coefficient() {
    let o = lbsac(&["lcb", "--n", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("k = 1.5"), "{}", stdout(&o));

    let o = lbsac(&["lcb", "--n", "1"]);
    assert!(stdout(&o).contains("k = 0.000000"), "{}", stdout(&o));

    let o = lbsac(&["lcb", "--n", "5", "--mc-samples", "20000", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("E[min]"), "{}", stdout(&o));
}

#[test]
fn invalid_input_exits_with_one() {
    assert_eq!(lbsac(&["lcb", "--n", "0"]).status.code(), Some(1));
    assert_eq!(lbsac(&["lcb"]).status.code(), Some(1));
    assert_eq!(lbsac(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lbsac(&["--help"]).status.code(), Some(0));
    let o = lbsac(&[
        "gen-data",
        "--env",
        "pointmass-3d",
        "--behavior",
        "random",
        "--out",
        "x.lbd",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_data_writes_a_reproducible_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_data(dir.path(), "medium", 1000);
    let first = std::fs::read(&a).unwrap();
    gen_data(dir.path(), "medium", 1000);
    assert_eq!(std::fs::read(&a).unwrap(), first);
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[[experiment]]\nname = \"x\"\nbatch = 3\n").unwrap();
    let o = lbsac(&["train", "--config", path(&config)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("\"batch\""), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = lbsac(&[
        "eval",
        "--checkpoint",
        path(&dir.path().join("nothing")),
        "--env",
        "pointmass-1d",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path(), "random", 3000);
    let config = dir.path().join("sweep.toml");
    std::fs::write(
        &config,
        r#"
eval_every = 100
eval_episodes = 2

[[experiment]]
name = "tiny"
env = "pointmass-1d"
dataset = "random.lbd"
algorithm = "lb-sac"
seeds = [0, 1]
ensemble_size = 2
batch_size = 64
hidden_dim = 8
hidden_layers = 2
max_steps = 300
probe_size = 64

[[experiment]]
name = "exploding"
env = "pointmass-1d"
dataset = "random.lbd"
algorithm = "sac-n"
seeds = [0]
ensemble_size = 2
batch_size = 16
hidden_dim = 8
hidden_layers = 1
max_steps = 300
probe_size = 64
initial_log_alpha = 1000.0
"#,
    )
    .unwrap();
    let out = dir.path().join("runs");
    let o = lbsac(&["train", "--config", path(&config), "--out", path(&out), "--jobs", "2"]);
    // One diverging run makes the sweep a runtime failure, but the others finish.
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("tiny seed 0: final score"), "{}", stdout(&o));
    assert!(stdout(&o).contains("tiny seed 1: final score"), "{}", stdout(&o));
    assert!(stderr(&o).contains("exploding seed 0: failed"), "{}", stderr(&o));
    assert!(out.join("report.json").is_file());
    assert!(out.join("tiny/seed-0/diagnostics.csv").is_file());

    let o = lbsac(&["train", "--config", path(&config), "--out", path(&out), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(1));

    let checkpoint = out.join("tiny/seed-1/checkpoint");
    let eval = |seed: &str| {
        let o = lbsac(&[
            "eval",
            "--checkpoint",
            path(&checkpoint),
            "--env",
            "pointmass-1d",
            "--episodes",
            "3",
            "--seed",
            seed,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap()
    };
    let a = eval("4");
    assert_eq!(a["returns"].as_array().unwrap().len(), 3);
    assert!(a["normalized_score"].as_f64().unwrap().is_finite());
    assert_eq!(a, eval("4"));

    let o = lbsac(&[
        "eval",
        "--checkpoint",
        path(&checkpoint),
        "--env",
        "pointmass-2d",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let report_dir = dir.path().join("report");
    let o = lbsac(&[
        "report",
        "--runs",
        path(&out.join("tiny")),
        "--format",
        "csv",
        "--out",
        path(&report_dir),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let scores = std::fs::read_to_string(report_dir.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 2, "{scores}");
    assert!(scores.lines().nth(1).unwrap().starts_with("tiny,"));

    let o = lbsac(&["report", "--runs", path(&out), "--format", "xml", "--out", path(&report_dir)]);
    assert_eq!(o.status.code(), Some(1));
}
