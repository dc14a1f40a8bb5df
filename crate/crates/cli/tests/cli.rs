use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slq_cli::{parse_p, verify, ExperimentConfig};

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
}

fn slq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slq"))
        .args(args)
        .env_remove("SLQ_SEED")
        .env_remove("SLQ_OUT_DIR")
        .output()
        .unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn final_p(dir: &Path) -> Vec<Vec<f64>> {
    serde_json::from_value(summary(dir)["final_p"].clone()).unwrap()
}

/// Small Monte Carlo budget so the RL pipeline finishes quickly.
fn fast_two_state_config(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(example("two_state.toml"))
        .unwrap()
        .replace("n_paths = 20000", "n_paths = 200")
        .replace("dt = 1e-3", "dt = 1e-2");
    let path = dir.join("fast.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn exact_pipeline_reproduces_optimal_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = slq(&[
        "run",
        example("two_state.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let p = final_p(dir.path());
    let reference = [[61.1422, -35.7578], [-35.7578, 81.6610]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((p[i][j] - reference[i][j]).abs() < 1e-3);
        }
    }
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("i,p11,p21,p22,k11,k12,delta_p,residual\n"));
    assert!(trace.lines().nth(1).unwrap().contains(",NaN,"));
}

#[test]
fn scalar_rl_pipeline_finds_riccati_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = slq(&[
        "run",
        example("scalar.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!((final_p(dir.path())[0][0] - (2f64.sqrt() - 1.0)).abs() < 1e-3);
}

#[test]
fn missing_weight_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = fs::read_to_string(example("scalar.toml"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("r = "))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let out = slq(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing field `r`"), "{err}");
}

#[test]
fn iteration_limit_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(example("two_state.toml"))
        .unwrap()
        .replace("max_iter = 30", "max_iter = 2");
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, text).unwrap();
    let out = slq(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(summary(&dir.path().join("o"))["converged"], false);
}

#[test]
fn verify_examples() {
    let cfg = example("two_state.toml");
    let cfg = cfg.to_str().unwrap();
    let out = slq(&["verify", cfg, "--p", "61.1422,-35.7578;-35.7578,81.6610"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("||R(P)||_F = 1.0175"));
    let out = slq(&["verify", cfg, "--p", "[[1,0],[0,1]]"]);
    assert_eq!(out.status.code(), Some(1));

    let scalar = ExperimentConfig::load(&example("scalar.toml")).unwrap();
    let report = verify(
        &scalar,
        &parse_p(&format!("{}", 2f64.sqrt() - 1.0)).unwrap(),
    )
    .unwrap();
    assert!(report.norm <= 1e-12);
    assert!(report.positive_definite);
}

#[test]
fn verify_of_emitted_p_matches_in_process_residual() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_two_state_config(dir.path());
    let out_dir = dir.path().join("rl");
    let out = slq(&[
        "run",
        cfg.to_str().unwrap(),
        "--pipeline",
        "rl",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)));
    let recorded = summary(&out_dir)["final_residual"].as_f64().unwrap();
    let config = ExperimentConfig::load(&cfg).unwrap();
    let p = parse_p(out_dir.join("summary.json").to_str().unwrap()).unwrap();
    let report = verify(&config, &p).unwrap();
    assert!((report.norm - recorded).abs() <= 1e-12 * recorded.max(1.0));
}

#[test]
fn all_pipelines_write_subdirectories_and_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_two_state_config(dir.path());
    let text = fs::read_to_string(&cfg).unwrap() + "\n[output]\ndump_paths = 3\n";
    fs::write(&cfg, text).unwrap();
    let out_dir = dir.path().join("all");
    let out = slq(&[
        "run",
        cfg.to_str().unwrap(),
        "--pipeline",
        "all",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        matches!(out.status.code(), Some(0) | Some(2)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for p in ["exact", "rl", "sysid"] {
        assert!(out_dir.join(p).join("trace.csv").is_file());
        assert_eq!(summary(&out_dir.join(p))["pipeline"], p);
    }
    let paths = fs::read_to_string(out_dir.join("exact").join("paths.csv")).unwrap();
    assert_eq!(paths.lines().count(), 1 + 3 * 101);
    assert!(summary(&out_dir.join("sysid"))["identification"]["a_hat"].is_array());
}

#[test]
fn same_seed_gives_identical_trace_and_env_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_two_state_config(dir.path());
    let run = |name: &str, seed: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_slq"))
            .args(["run", cfg.to_str().unwrap(), "--pipeline", "rl"])
            .env("SLQ_OUT_DIR", dir.path().join(name))
            .env("SLQ_SEED", seed)
            .output()
            .unwrap();
        assert!(matches!(out.status.code(), Some(0) | Some(2)));
        assert_eq!(
            summary(&dir.path().join(name))["seed"],
            seed.parse::<u64>().unwrap()
        );
        fs::read(dir.path().join(name).join("trace.csv")).unwrap()
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
