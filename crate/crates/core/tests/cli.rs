use std::path::Path;
use std::process::{Command, Output};

fn rbsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbsde"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn solve_writes_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "problem = drifted-barrier\nM = 1000\nseed = 4\n",
    );
    let out = dir.path().join("out");
    let res = rbsde(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for f in ["report.json", "solution.csv", "convergence.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["picard"]["converged"], true);
    let csv = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    assert!(csv.starts_with("t,mean_y,se_y,mean_k,se_k\n"));
    assert_eq!(csv.lines().count(), 1 + 21);
}

#[test]
fn non_convergence_exits_two_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "problem = american-put\nM = 500\nmax_iter = 1\n",
    );
    let out = dir.path().join("out");
    let res = rbsde(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"converged\": false"));
    assert!(out.join("convergence.csv").exists());
}

#[test]
fn config_error_exits_one_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.cfg", "problem = zero\nbasis_degre = 2\n");
    let res = rbsde(&["solve", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("basis_degre"));
}

#[test]
fn seed_override_and_workers_leave_csv_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "problem = american-put\nM = 800\nseed = 1\n",
    );
    let run = |workers: &str, seed: &str, name: &str| {
        let out = dir.path().join(name);
        let res = rbsde(&[
            "--workers",
            workers,
            "solve",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed-override",
            seed,
        ]);
        assert!(res.status.success());
        std::fs::read(out.join("solution.csv")).unwrap()
    };
    let a = run("1", "5", "a");
    let b = run("3", "5", "b");
    let c = run("1", "6", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn verify_prints_json_lines() {
    let res = rbsde(&["verify", "skorohod"]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() >= 7);
    let names: Vec<&str> = lines.iter().filter_map(|l| l["name"].as_str()).collect();
    for n in ["flat-off", "minimality", "sup-difference-lemma"] {
        assert!(names.contains(&n), "{n} missing");
    }
    assert_eq!(lines.last().unwrap()["passed"], true);
}

#[test]
fn verify_unknown_suite_exits_one() {
    assert_eq!(rbsde(&["verify", "nonsense"]).status.code(), Some(1));
}

#[test]
fn verify_replays_a_dumped_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let grid = rbsde::grid::make_grid(1.0, 40).unwrap();
    let ens = rbsde::grid::sample_brownian(&grid, 30, 2, 99).unwrap();
    let path = dir.path().join("ens.csv");
    ens.write_csv(std::fs::File::create(&path).unwrap())
        .unwrap();
    let res = rbsde(&["verify", "skorohod", "--ensemble", path.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("\"ensemble-regenerates\""));
}

#[test]
fn skorohod_debug_command() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", "x\n0\n-1\n0.5\n-2\n-1.5\n");
    let res = rbsde(&["skorohod", "--input", &input, "--eta", "0.5"]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    let l: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|r| r.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(l, vec![0.0, 0.5, 0.5, 1.5, 1.5]);
}

#[test]
fn sweep_c2_reports_each_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "problem = resistive-put-0\nM = 600\n",
    );
    let res = rbsde(&[
        "sweep",
        "--config",
        &cfg,
        "--param",
        "c2",
        "--values",
        "0,0.04,0.1",
    ]);
    assert!(res.status.code() == Some(0) || res.status.code() == Some(2));
    let text = String::from_utf8_lossy(&res.stdout);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(
        rows[0],
        "value,y0,se,iterations,final_distance,max_ratio,converged"
    );
    assert_eq!(rows.len(), 4);
    assert!(rows[2].starts_with("0.04,"));
}

#[test]
fn sweep_m_doubling_shrinks_standard_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "problem = pure-reflection\nM = 1000\nseed = 3\n",
    );
    let res = rbsde(&[
        "sweep",
        "--config",
        &cfg,
        "--param",
        "M",
        "--values",
        "2000,4000,8000",
    ]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    let se: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|r| r.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    for w in se.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.6..0.85).contains(&ratio), "SE ratio {ratio}");
    }
}
