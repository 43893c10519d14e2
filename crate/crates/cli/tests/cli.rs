use std::path::Path;
use std::process::{Command, Output};

fn rivers(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rivers")).args(args).output().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn simulate_writes_trajectory_with_fate_trailer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let o = rivers(&["simulate", "--s", "25", "--x", "25", "--sigma", "1", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# rivers "));
    assert!(lines[1].contains("seed=7") && lines[1].contains("config_sha256="));
    assert!(lines.iter().any(|l| *l == "t,x"));
    assert!(lines.last().unwrap().starts_with("# fate="));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("simulate: fate="));
}

#[test]
fn same_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = rivers(&["locate", "--s", "20", "--seed", "3", "--no-timestamp", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        read(&out)
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(a, b);
    assert!(!a.contains("timestamp"));
    assert!(a.contains("s,lo,hi,width,status\n20,"));
    let o = rivers(&["locate", "--s", "20", "--seed", "3"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("# timestamp="));
}

#[test]
fn dumped_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["estimate", "--s", "25", "--x", "26", "--n", "200", "--seed", "11", "--no-timestamp"];
    let dump = rivers(&[&args[..], &["--dump-config"]].concat());
    assert!(dump.status.success());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, &dump.stdout).unwrap();
    let again = rivers(&["--config", cfg.to_str().unwrap(), "--dump-config"]);
    assert_eq!(dump.stdout, again.stdout);
    let direct = rivers(&args);
    let via_cfg = rivers(&["--config", cfg.to_str().unwrap(), "--no-timestamp"]);
    assert!(direct.status.success() && via_cfg.status.success());
    assert_eq!(direct.stdout, via_cfg.stdout);
    assert!(String::from_utf8_lossy(&direct.stdout).contains("quantity,s,x,estimate"));
}

#[test]
fn exit_codes() {
    assert_eq!(rivers(&["locate", "--tol", "-1"]).status.code(), Some(2));
    assert_eq!(rivers(&["estimate", "--n", "5"]).status.code(), Some(2));
    assert_eq!(rivers(&["validate", "--suite", "nope"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"command":"locate","unknown":1}"#).unwrap();
    assert_eq!(rivers(&["--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    // unwritable output is a runtime error
    let o = rivers(&["expand", "--s", "5", "--s-end", "6", "--sigma", "0", "--out", "/nonexistent/dir/x.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn expand_and_track_tables() {
    let o = rivers(&["expand", "--s", "10", "--s-end", "11", "--order", "2", "--sigma", "0", "--no-timestamp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("t,n,Rn\n10,0,10\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * 2);
    let o = rivers(&["track", "--s", "20", "--s-end", "22", "--seed", "1", "--no-timestamp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().filter(|l| l.ends_with(",Located")).count(), 3);
}

#[test]
fn deterministic_suite_validates() {
    let o = rivers(&["validate", "--suite", "deterministic", "--no-timestamp"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}

#[test]
fn theorem2_table() {
    let o = rivers(&["theorem2", "--s", "25", "--z", "-1,0,1", "--n", "400", "--no-timestamp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "s,z,x,p_hat,std_err,n,n_undecided,phi_z");
    assert_eq!(rows.len(), 4);
    let mid: Vec<f64> = rows[2].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(mid[1], 0.0);
    assert!((mid[3] - 0.5).abs() < 0.2);
}
