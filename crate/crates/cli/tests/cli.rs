use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lptvid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lptvid")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn show(o: &Output) -> String {
    format!("stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn export(dir: &Path, name: &str) {
    let o = lptvid(&["export-preset", name, "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", show(&o));
}

/// Scalar controller whose output matrix vanishes at phase 1.
const SINGULAR_CONTROLLER: &str = r#"{
  "period": 3,
  "a": [[[0.5]], [[0.5]], [[0.5]]],
  "b": [[[1.0]], [[1.0]], [[1.0]]],
  "c": [[[0.2]], [[0.0]], [[0.2]]]
}"#;

#[test]
fn check_passes_for_every_preset() {
    for name in ["ex1", "ex2", "ex3"] {
        let o = lptvid(&["check", "--preset", name]);
        assert_eq!(code(&o), 0, "{name}: {}", show(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("assumption 2"));
    }
}

#[test]
fn singular_controller_path_exits_with_assumption_code() {
    let dir = tempfile::tempdir().unwrap();
    export(dir.path(), "ex1");
    let ctrl = dir.path().join("bad_controller.json");
    fs::write(&ctrl, SINGULAR_CONTROLLER).unwrap();
    let plant = dir.path().join("plant.json");

    let o = lptvid(&["check", "--plant", plant.to_str().unwrap(), "--controller", ctrl.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", show(&o));
    assert!(String::from_utf8_lossy(&o.stderr).contains("assumption 2"), "{}", show(&o));

    let out = dir.path().join("run");
    let o = lptvid(&[
        "run",
        "--plant",
        plant.to_str().unwrap(),
        "--controller",
        ctrl.to_str().unwrap(),
        "--order-np",
        "2",
        "--order-nc",
        "1",
        "--n",
        "600",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", show(&o));
}

#[test]
fn wrong_plant_order_exits_with_numerical_code_and_names_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = lptvid(&["run", "--preset", "ex1", "--snr-db", "inf", "--order-np", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", show(&o));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("no singular-value gap"), "{}", show(&o));
    let stages = fs::read_to_string(out.join("stages.txt")).unwrap();
    assert!(stages.lines().last().unwrap().contains("FAIL] step  7"), "{stages}");
}

#[test]
fn missing_model_file_exits_with_io_code() {
    let o = lptvid(&["check", "--plant", "/nonexistent/plant.json", "--preset", "ex1"]);
    assert_eq!(code(&o), 4, "{}", show(&o));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n_samples = \"many\"\n").unwrap();
    let o = lptvid(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", show(&o));
    let o = lptvid(&["identify", "--preset", "ex1", "--dataset", "/nonexistent/data"]);
    assert_eq!(code(&o), 4, "{}", show(&o));
}

#[test]
fn repeated_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = lptvid(&["run", "--preset", "ex1", "--n", "1500", "--seed", "11", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", show(&o));
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["report.json", "recovered_plant.json", "markov_error.csv", "singular_spectrum.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn simulate_then_identify_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let common = ["--preset", "ex1", "--n", "1500", "--seed", "5"];
    let mut args = vec!["simulate", "--out", data.to_str().unwrap()];
    args.extend(common);
    let o = lptvid(&args);
    assert_eq!(code(&o), 0, "{}", show(&o));
    for f in ["r.csv", "y.csv", "u.csv", "metadata.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let ident = dir.path().join("ident");
    let mut args = vec!["identify", "--dataset", data.to_str().unwrap(), "--out", ident.to_str().unwrap()];
    args.extend(common);
    let o = lptvid(&args);
    assert_eq!(code(&o), 0, "{}", show(&o));

    let run = dir.path().join("run");
    let mut args = vec!["run", "--out", run.to_str().unwrap()];
    args.extend(common);
    let o = lptvid(&args);
    assert_eq!(code(&o), 0, "{}", show(&o));
    assert_eq!(fs::read(ident.join("report.json")).unwrap(), fs::read(run.join("report.json")).unwrap());
}

#[test]
fn exported_preset_reproduces_the_builtin_run() {
    let dir = tempfile::tempdir().unwrap();
    export(dir.path(), "ex2");
    let cfg = dir.path().join("config.toml");
    let from_files = dir.path().join("files");
    let o = lptvid(&["run", "--config", cfg.to_str().unwrap(), "--n", "1500", "--out", from_files.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let builtin = dir.path().join("builtin");
    let o = lptvid(&["run", "--preset", "ex2", "--n", "1500", "--out", builtin.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    assert_eq!(
        fs::read(from_files.join("recovered_plant.json")).unwrap(),
        fs::read(builtin.join("recovered_plant.json")).unwrap()
    );
}

#[test]
fn seed_sweep_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = lptvid(&["run", "--preset", "ex1", "--n", "1200", "--seeds", "1..3", "--reduction", "bt", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
    for s in 1..=3 {
        assert!(out.join(format!("seed_{s}")).join("report.json").exists());
    }
}

#[test]
fn usage_errors_use_the_config_code() {
    assert_eq!(code(&lptvid(&["run", "--reduction", "pod"])), 4);
    assert_eq!(code(&lptvid(&["run", "--preset", "ex1", "--seeds", "5..2"])), 4);
    assert_eq!(code(&lptvid(&["--help"])), 0);
}
