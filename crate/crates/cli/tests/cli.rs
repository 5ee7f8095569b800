use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cfear(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfear"))
        .args(args)
        .output()
        .expect("spawn cfear")
}

fn simulate(out: &Path, seed: &str) -> Output {
    cfear(&[
        "simulate",
        "--trajectory",
        "line:-40,-54.5,0,15",
        "--nr",
        "800",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(simulate(&a, "7").status.success());
    assert!(simulate(&b, "7").status.success());
    assert!(simulate(&c, "8").status.success());
    let (da, db, dc) = (dir_contents(&a), dir_contents(&b), dir_contents(&c));
    assert!(da.iter().any(|(n, _)| n == "scan_000000.cfrad"));
    assert!(da.iter().any(|(n, _)| n == "groundtruth.traj"));
    assert_eq!(da, db);
    assert_ne!(da, dc);
}

#[test]
fn simulate_odometry_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(simulate(&data, "1").status.success());
    let est = tmp.path().join("est.traj");
    let timing = tmp.path().join("timing.txt");
    let out = cfear(&[
        "odometry",
        data.to_str().unwrap(),
        "--out",
        est.to_str().unwrap(),
        "--timing",
        timing.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_to_string(&est).unwrap();
    let cov = fs::read_to_string(est.with_extension("cov")).unwrap();
    assert_eq!(traj.lines().count(), cov.lines().count());
    assert!(fs::read_to_string(&timing).unwrap().contains("register"));

    let csv = tmp.path().join("metrics.csv");
    let gt = data.join("groundtruth.traj");
    let out = cfear(&[
        "evaluate",
        est.to_str().unwrap(),
        gt.to_str().unwrap(),
        "--segments",
        "5,10",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("drift") && report.contains("ate"), "{report}");
    assert!(fs::read_to_string(&csv).unwrap().starts_with("metric,name,value"));

    // Identical outputs with one and four worker threads.
    let est4 = tmp.path().join("est4.traj");
    let out = cfear(&["--threads", "4", "odometry", data.to_str().unwrap(), "--out", est4.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read(&est).unwrap(), fs::read(&est4).unwrap());
}

#[test]
fn config_file_and_print_config() {
    let tmp = tempfile::tempdir().unwrap();
    let printed = cfear(&["odometry", "--print-config", "--preset", "cfear-1"]);
    assert!(printed.status.success());
    let path = tmp.path().join("cfg.txt");
    fs::write(&path, &printed.stdout).unwrap();
    let reparsed = cfear(&["odometry", "--print-config", "--config", path.to_str().unwrap()]);
    assert!(reparsed.status.success());
    assert_eq!(printed.stdout, reparsed.stdout);

    fs::write(&path, "cost = p2p\nk = lots\n").unwrap();
    let bad = cfear(&["odometry", "--print-config", "--config", path.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("cfg.txt:2:"));
}

#[test]
fn error_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out.traj");
    let out = out.to_str().unwrap();
    let dir = tmp.path().to_str().unwrap();

    assert_eq!(cfear(&["odometry", dir, "--out", out, "--preset", "cfear-9"]).status.code(), Some(1));
    assert_eq!(cfear(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cfear(&["odometry", "/nonexistent/scans", "--out", out]).status.code(), Some(2));

    // An empty directory yields an empty trajectory and a warning.
    let empty = cfear(&["odometry", dir, "--out", out]);
    assert_eq!(empty.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("warning"));

    // A corrupt scan is a data error.
    fs::write(tmp.path().join("scan_000000.cfrad"), b"not a scan").unwrap();
    assert_eq!(cfear(&["odometry", dir, "--out", out]).status.code(), Some(3));

    // Trajectories of different lengths cannot be compared.
    let a = tmp.path().join("a.traj");
    let b = tmp.path().join("b.traj");
    fs::write(&a, "0 0 0 0\n1 1 0 0\n2 2 0 0\n").unwrap();
    fs::write(&b, "0 0 0 0\n1 1 0 0\n").unwrap();
    let mismatch = cfear(&["evaluate", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_ne!(mismatch.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains('3'));
}
