use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn bhs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bhs"))
        .args(args)
        .env_remove("BHS_OUT")
        .output()
        .expect("bhs runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_report_log_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = bhs(&[
        "run",
        "--config",
        path(&scenario("blackhole5.toml")),
        "--out",
        path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["drops_before_detection"]["M"], 45);
    assert_eq!(report["packets_delivered"], 100);
    assert!(fs::read_to_string(dir.path().join("events.log"))
        .unwrap()
        .contains("MaliciousBroadcast\tM"));
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        fs::read_to_string(dir.path().join("report.json")).unwrap()
    );
}

#[test]
fn rerun_from_echoed_config_reproduces_report() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let o = bhs(&[
        "run",
        "--config",
        path(&scenario("blackhole5.toml")),
        "--out",
        path(a.path()),
        "--override",
        "workload.packets=60",
        "--seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = a.path().join("config.toml");
    assert!(fs::read_to_string(&echo).unwrap().starts_with("seed = 9\n"));
    let o = bhs(&["run", "--config", path(&echo), "--out", path(b.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "events.log", "config.toml"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn out_dir_defaults_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bhs"))
        .args(["run", "--config", path(&scenario("blackhole5.toml"))])
        .env("BHS_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn validation_failures_exit_2_and_list_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let o = bhs(&[
        "run",
        "--config",
        path(&scenario("blackhole5.toml")),
        "--out",
        path(dir.path()),
        "--override",
        "ttf=150",
        "--override",
        "x=2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("ttf") && err.contains("x:"), "{err}");
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn missing_topology_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "source = \"S\"\ndestinations = [\"D\"]\n").unwrap();
    let o = bhs(&["run", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("topology"));
}

#[test]
fn malformed_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bhs(&[
        "run",
        "--config",
        path(&scenario("blackhole5.toml")),
        "--out",
        path(dir.path()),
        "--override",
        "ttf",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_internal_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = bhs(&[
        "run",
        "--config",
        path(&scenario("blackhole5.toml")),
        "--out",
        path(&blocker.join("sub")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn table_defaults_and_zero_row() {
    let o = bhs(&["table", "--x", "0.95", "--n", "0,50"]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "n,tf");
    assert_eq!(lines[1], "0,100.0");
    let tf: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!((tf - 7.694497528).abs() / 7.694497528 < 1e-6);
    let o = bhs(&["table"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 16);
}

#[test]
fn table_rejects_bad_x() {
    assert_eq!(bhs(&["table", "--x", "1.0"]).status.code(), Some(2));
    assert_eq!(bhs(&["curve", "--x", "0.9", "--n-max", "0"]).status.code(), Some(2));
}

#[test]
fn curve_json_format() {
    let o = bhs(&["curve", "--x", "0.5", "--n-max", "2", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[2]["tf"], 25.0);
    assert_eq!(v.as_array().unwrap().len(), 3);
}

#[test]
fn sweep_rows_follow_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = bhs(&[
        "sweep",
        "--config",
        path(&scenario("blackhole5.toml")),
        "--x",
        "0.95,0.9",
        "--seed",
        "2,1",
        "--out",
        path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let keys: Vec<String> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(keys, ["0.95,10.0,2", "0.95,10.0,1", "0.9,10.0,2", "0.9,10.0,1"]);
}

#[test]
fn single_point_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("blackhole5.toml");
    let run = bhs(&[
        "run",
        "--config",
        path(&cfg),
        "--out",
        path(dir.path()),
        "--format",
        "csv",
    ]);
    let sweep = bhs(&["sweep", "--config", path(&cfg), "--out", path(dir.path())]);
    let run = String::from_utf8(run.stdout).unwrap();
    let sweep = String::from_utf8(sweep.stdout).unwrap();
    let run_row = run.lines().nth(1).unwrap();
    let sweep_row = sweep.lines().nth(1).unwrap();
    assert_eq!(sweep_row.splitn(4, ',').nth(3).unwrap(), run_row);
}

#[test]
fn failing_sweep_point_echoes_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = bhs(&[
        "sweep",
        "--config",
        path(&scenario("blackhole5.toml")),
        "--ttf",
        "10,120",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("ttf=120") && err.contains("ttf = 120.0"), "{err}");
}
