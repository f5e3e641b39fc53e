use std::path::Path;
use std::process::{Command, Output};

fn unravel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unravel")).args(args).output().unwrap()
}

fn prefix(dir: &Path) -> String {
    dir.join("out").to_str().unwrap().to_string()
}

#[test]
fn oracle_only_writes_oracle_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = prefix(dir.path());
    let o = unravel(&["run", "--oracle-only", "--t-max", "1", "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(format!("{out}.oracle.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,method,observable,mean,stderr,n_traj"));
    // 101 grid points times 3 default observables
    assert_eq!(lines.clone().count(), 303);
    assert!(lines.all(|l| l.split(',').nth(1) == Some("oracle")));
    assert!(!Path::new(&format!("{out}.wroqj.csv")).exists());
}

#[test]
fn run_writes_method_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = prefix(dir.path());
    let o = unravel(&["run", "--method", "wroqj,plqt", "--trajectories", "200", "--t-max", "0.5", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for m in ["wroqj", "plqt"] {
        let csv = std::fs::read_to_string(format!("{out}.{m}.csv")).unwrap();
        let row = csv.lines().nth(1).unwrap();
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], m);
        assert_eq!(cols[5], "200");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{out}.summary.json")).unwrap()).unwrap();
    assert!(summary["methods"]["wroqj"]["wall_clock_ms"].is_number());
    assert!(summary["methods"]["plqt"]["max_oracle_distance"].as_f64().unwrap() < 0.2);
}

#[test]
fn nmqj_on_eternal_model_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = prefix(dir.path());
    let o = unravel(&["run", "--method", "nmqj", "--trajectories", "100", "--t-max", "0.5", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    let csv = std::fs::read_to_string(format!("{out}.nmqj.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains("abort:")));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[model]\nname = nonsense\n").unwrap();
    let o = unravel(&["run", "--config", cfg.to_str().unwrap(), "--out", &prefix(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let o = unravel(&["run", "--method", "bogus", "--out", &prefix(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let o = unravel(&["run", "--dt", "0", "--out", &prefix(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divisibility_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = prefix(dir.path());
    let o = unravel(&["divisibility", "--t-max", "1", "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(format!("{out}.divisibility.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,cp,p,min_rate,min_w_eigenvalue"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().skip(1).all(|r| r[1] == "false" && r[2] == "true"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for p in [&a, &b] {
        let o = unravel(&["run", "--method", "im,doubled", "--trajectories", "300", "--t-max", "0.5", "--out", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    for m in ["im", "doubled", "oracle"] {
        let fa = std::fs::read(format!("{}.{m}.csv", a.display())).unwrap();
        let fb = std::fs::read(format!("{}.{m}.csv", b.display())).unwrap();
        assert_eq!(fa, fb, "{m}");
    }
}
