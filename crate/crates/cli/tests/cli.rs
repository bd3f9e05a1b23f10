use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qdelay_core::instance::Instance;

fn qdelay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdelay"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn data(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(rel)
        .display()
        .to_string()
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
        .parse()
        .unwrap()
}

fn write_instance(dir: &Path, name: &str, instance: &Instance) -> PathBuf {
    let path = dir.join(name);
    instance.write(&path).unwrap();
    path
}

fn toy(lambda: f64, p: usize) -> Instance {
    Instance::from_matrix(vec![vec![0.060, 0.070]], vec![lambda], vec![100.0, 100.0], p).unwrap()
}

#[test]
fn help_lists_units() {
    let out = qdelay(&["gen-instance", "--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for flag in ["--topology", "--facilities", "--demand", "--target", "--mu", "--p", "--seed", "--local-loop-ms", "--speed-ms-per-km", "--out"] {
        assert!(text.contains(flag), "{flag} missing");
    }
    assert!(text.contains("req/s") && text.contains("ms/km") && text.contains(", ms"));
    let solve = stdout(&qdelay(&["solve", "--help"]));
    for flag in ["--solver", "--tolerance", "--gap", "--node-limit", "--threads", "--timings", "--lp-dump", "--interval-end"] {
        assert!(solve.contains(flag), "{flag} missing");
    }
    assert_eq!(code(&qdelay(&["--help"])), 0);
}

#[test]
fn unknown_command_and_bad_numbers_are_usage_errors() {
    assert_eq!(code(&qdelay(&["frobnicate"])), 2);
    assert_eq!(code(&qdelay(&[])), 2);
    assert_eq!(code(&qdelay(&["linearize", "--m", "x"])), 2);
    assert_eq!(code(&qdelay(&["gen-instance", "--topology", "t", "--facilities", "2", "--p", "1", "--mu", "-5", "--out", "o"])), 2);
}

#[test]
fn linearize_default_preset() {
    let out = qdelay(&["linearize"]);
    assert_eq!(code(&out), 0);
    let line = stdout(&out);
    let pct = field(&line, "epsilon_pct_of_range");
    assert!((pct - 2.67).abs() <= 0.267, "{line}");
    assert!((field(&line, "epsilon") - 0.64).abs() < 1e-6, "{line}");
}

#[test]
fn linearize_is_deterministic_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let first = qdelay(&["linearize", "--m", "3", "--interval-end", "0.5", "--out", a.to_str().unwrap()]);
    let second = qdelay(&["linearize", "--m", "3", "--interval-end", "0.5", "--out", b.to_str().unwrap()]);
    assert_eq!(code(&first), 0);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let csv = std::fs::read_to_string(&a).unwrap();
    assert!(csv.starts_with("s,alpha,beta\n0,0,0\n"));
    assert!(!csv.contains('\r'));
}

#[test]
fn linearize_rejects_asymptote_and_small_m() {
    let out = qdelay(&["linearize", "--interval-end", "1.0"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("interval-end"));
    assert_eq!(code(&qdelay(&["linearize", "--m", "2"])), 2);
    assert_eq!(code(&qdelay(&["linearize", "--interval-end", "0"])), 2);
}

#[test]
fn verbose_echoes_numeric_flags() {
    let out = qdelay(&["linearize", "--verbose", "--m", "4", "--interval-end", "0.9"]);
    assert_eq!(code(&out), 0);
    let err = stderr(&out);
    assert!(err.contains("--m = 4"), "{err}");
    assert!(err.contains("--interval-end = 0.9"), "{err}");
}

#[test]
fn gen_instance_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("inst.json");
    let topology = data("topologies/nordic-12.json");
    let out = qdelay(&[
        "gen-instance", "--topology", &topology, "--facilities", "10", "--p", "5", "--seed", "11", "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.contains("clients=12 facilities=10"), "{line}");
    assert!((field(&line, "total_arrival_rps") - 470.0).abs() < 1e-9);
    assert!(line.contains("feasible_linearized=true"));
    let instance = Instance::read(&out_path).unwrap();
    assert_eq!((instance.num_clients(), instance.num_facilities(), instance.p), (12, 10, 5));
    assert!((instance.total_arrival() - 470.0).abs() < 1e-9);
}

#[test]
fn gen_instance_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("inst.json");
    let topology = data("topologies/nordic-12.json");
    let too_many = qdelay(&["gen-instance", "--topology", &topology, "--facilities", "13", "--p", "2", "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&too_many), 2);
    let missing = dir.path().join("absent-topology.json");
    let out = qdelay(&["gen-instance", "--topology", missing.to_str().unwrap(), "--facilities", "2", "--p", "1", "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("absent-topology.json"));
    assert!(!out_path.exists());
}

#[test]
fn solve_toy_with_each_solver() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_instance(dir.path(), "toy.json", &toy(10.0, 2));
    let report = dir.path().join("report.json");
    let out = qdelay(&["solve", "--instance", inst.to_str().unwrap(), "--solver", "qp-exact", "--out", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!((field(&stdout(&out), "objective_s") - (0.060 + 1.0 / 90.0)).abs() < 1e-6);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["wall_time_s"].is_null());
    assert_eq!(doc["solver"], "QP");

    let single = write_instance(dir.path(), "toy1.json", &toy(10.0, 1));
    let assignment = dir.path().join("x.json");
    let out = qdelay(&["solve", "--instance", single.to_str().unwrap(), "--solver", "p", "--assignment", assignment.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!((field(&stdout(&out), "objective_s") - 0.060).abs() < 1e-12);
    assert!(stdout(&out).contains("subset=[0]"));
    let x: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&assignment).unwrap()).unwrap();
    assert_eq!(x["x_rps"][0][0].as_f64().unwrap(), 10.0);
}

#[test]
fn solve_qp_lin_infeasible_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_instance(dir.path(), "tight.json", &toy(97.0, 1));
    let out = qdelay(&["solve", "--instance", inst.to_str().unwrap(), "--solver", "qp-lin"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("infeasible"));
}

#[test]
fn solve_node_limit_is_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let topology = data("topologies/eu-backbone-13.json");
    let inst = dir.path().join("eu.json");
    let gen = qdelay(&["gen-instance", "--topology", &topology, "--facilities", "13", "--p", "5", "--seed", "2", "--out", inst.to_str().unwrap()]);
    assert_eq!(code(&gen), 0);
    let out = qdelay(&["solve", "--instance", inst.to_str().unwrap(), "--solver", "qp-lin", "--node-limit", "1"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("gap"));
}

#[test]
fn lp_dump_is_flag_gated() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_instance(dir.path(), "toy.json", &toy(40.0, 2));
    let dump = dir.path().join("model.lp");
    let out = qdelay(&["solve", "--instance", inst.to_str().unwrap(), "--solver", "qp-lin", "--lp-dump", dump.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&dump).unwrap();
    for section in ["Minimize", "Subject To", "Bounds", "Binaries", "SOS", "End"] {
        assert!(text.contains(section), "{section}");
    }
    let exact = qdelay(&["solve", "--instance", inst.to_str().unwrap(), "--solver", "qp-exact", "--lp-dump", dump.to_str().unwrap()]);
    assert_eq!(code(&exact), 2);
}

#[test]
fn experiment_smoke_grid_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let grid = data("grids/factor-study-smoke.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let first = qdelay(&["experiment", "--grid", &grid, "--out-dir", a.to_str().unwrap()]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = qdelay(&["experiment", "--grid", &grid, "--out-dir", b.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(code(&second), 0);
    for name in ["records.csv", "summary.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 1, "one row per factor combination");
    let records = std::fs::read_to_string(a.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2 * 2);
    assert!(records.starts_with("topology,mu_hat,dist,rho_hat,p,realization,solver,rt_s,wall_s,status\n"));

    let cmp = qdelay(&["compare", "--records", a.join("records.csv").to_str().unwrap()]);
    assert_eq!(code(&cmp), 0);
    assert_eq!(cmp.stdout, std::fs::read(a.join("summary.csv")).unwrap());
}

#[test]
fn malformed_grid_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, "{\"campaign\": \"factor-study\", \"mu_levels\": [").unwrap();
    let out = qdelay(&["experiment", "--grid", grid.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    std::fs::write(&grid, "{\"campaign\": \"factor-study\", \"topologies\": [], \"mu_levels\": [10], \"distributions\": [\"exponential\"], \"rho_levels\": [0.5], \"realizations\": 5, \"seed\": 1}").unwrap();
    assert_eq!(code(&qdelay(&["experiment", "--grid", grid.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()])), 2);
}

#[test]
fn dominance_violation_is_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.csv");
    std::fs::write(
        &records,
        "topology,mu_hat,dist,rho_hat,p,realization,solver,rt_s,wall_s,status\n\
         t,10,exponential,0.5,3,0,P,0.1,,ok\n\
         t,10,exponential,0.5,3,0,QP-lin,0.1001,,ok\n",
    )
    .unwrap();
    let out = qdelay(&["compare", "--records", records.to_str().unwrap()]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("t/mu=10/exponential/rho=0.5/p=3/r=0"));

    std::fs::write(
        &records,
        "topology,mu_hat,dist,rho_hat,p,realization,solver,rt_s,wall_s,status\nt,10,exponential,0.5,3,0,P,0.1,,ok\n",
    )
    .unwrap();
    let unpaired = qdelay(&["compare", "--records", records.to_str().unwrap()]);
    assert_eq!(code(&unpaired), 2);
    assert!(stderr(&unpaired).contains("r=0"));
}
