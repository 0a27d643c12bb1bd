use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn path(rel: &str) -> String {
    root().join(rel).display().to_string()
}

fn ampsize(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ampsize"))
        .args(args)
        .env_remove("AMPSIZE_TOKEN")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_static_converges() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let o = ampsize(&[
        "run",
        "--netlist",
        &path("fixtures/netlists/2smc_n.sp"),
        "--targets",
        &path("assets/targets/t180.cfg"),
        "--process",
        &path("assets/cards/t180_toy.cfg"),
        "--provider",
        "static",
        "--run-dir",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("round  0:"), "{out}");
    assert!(out.contains("converged in 1 round(s)"), "{out}");
    assert!(run_dir.join("round_00/metrics.json").is_file());

    let r = ampsize(&["report", run_dir.to_str().unwrap(), "--csv", dir.path().join("t.csv").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    assert!(stdout(&r).contains("2SMC_N"));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("topology,round,pass,av_measured"));
}

#[test]
fn run_repeat_uses_subdirectories() {
    let dir = tempfile::tempdir().unwrap();
    let o = ampsize(&[
        "run",
        "--netlist",
        &path("fixtures/netlists/2smc_p.sp"),
        "--targets",
        &path("assets/targets/t180.cfg"),
        "--repeat",
        "2",
        "--run-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("run_01/result.json").is_file());
    assert!(dir.path().join("run_02/result.json").is_file());
    let a = std::fs::read_to_string(dir.path().join("run_01/result.json")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("run_02/result.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn run_not_converged_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("hard.cfg");
    std::fs::write(&t, "av = 200\ngbw = 100meg\npm = 60\nsr = 50meg\ncl = 1p\n").unwrap();
    let o = ampsize(&[
        "run",
        "--netlist",
        &path("fixtures/netlists/2smc_n.sp"),
        "--targets",
        t.to_str().unwrap(),
        "--max-rounds",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("not converged after 1 round(s)"));
}

#[test]
fn missing_targets_is_usage_error() {
    let o = ampsize(&["run", "--netlist", &path("fixtures/netlists/2smc_n.sp")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--targets"));
}

#[test]
fn http_without_endpoint_is_config_error() {
    let o = ampsize(&[
        "run",
        "--netlist",
        &path("fixtures/netlists/2smc_n.sp"),
        "--targets",
        &path("assets/targets/t180.cfg"),
        "--provider",
        "http",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("endpoint"), "{}", stderr(&o));
}

#[test]
fn calibrate_triode_row_fixture() {
    let o = ampsize(&["calibrate", "--op", &path("fixtures/ops/triode_row_op.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let m1 = out.lines().find(|l| l.starts_with("M1 ")).unwrap();
    assert!(m1.contains(" 0.356 "), "{m1}");
    assert!(out.contains("WARNING: M5 in TRIODE (|Vds|=56mV < Vov=83mV)"), "{out}");
}

#[test]
fn plan_exec_echoes_gm1() {
    let o = ampsize(&[
        "plan-exec",
        "--netlist",
        &path("fixtures/netlists/2smc_n.sp"),
        "--targets",
        &path("assets/targets/t180.cfg"),
        "--calib",
        &path("fixtures/ops/2smc_n_estimates.json"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("gm1 = 314.159u"), "{out}");
    assert!(out.contains("GBW = 100.00 MHz"), "{out}");
    assert!(out.contains("  M8 W="), "{out}");
}

#[test]
fn plan_exec_accepts_operating_point() {
    let dir = tempfile::tempdir().unwrap();
    let s = ampsize(&[
        "simulate",
        "--netlist",
        &path("fixtures/netlists/2smc_n.sp"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(s.status.code(), Some(0), "{}", stderr(&s));
    assert!(stdout(&s).contains("GBW"));
    assert!(dir.path().join("metrics.json").is_file());
    let op = dir.path().join("op.json");
    let o = ampsize(&[
        "plan-exec",
        "--netlist",
        &path("fixtures/netlists/2smc_n.sp"),
        "--targets",
        &path("assets/targets/t180.cfg"),
        "--calib",
        op.to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["design"]["widths"]["M1"].as_f64().unwrap() > 0.0);
}

#[test]
fn report_on_empty_directory_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let o = ampsize(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not a run directory"));
}

#[test]
fn simulation_failure_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sp");
    let text = std::fs::read_to_string(root().join("fixtures/netlists/2smc_n.sp")).unwrap();
    std::fs::write(&bad, text.replace(".end", "CX OUT NF 1p\n.end")).unwrap();
    let o = ampsize(&["simulate", "--netlist", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn help_exits_zero() {
    let o = ampsize(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["run", "simulate", "calibrate", "plan-exec", "report"] {
        assert!(stdout(&o).contains(cmd), "{cmd}");
    }
}
