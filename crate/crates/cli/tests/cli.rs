use std::path::Path;
use std::process::{Command, Output};

fn kglab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kglab"))
        .args(args)
        .env("KGLAB_OUT", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_lists_every_suite() {
    let dir = tempfile::tempdir().unwrap();
    let o = kglab(dir.path(), &["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    for suite in ["kernels", "covariance", "sampler", "reduction", "regularity", "cli"] {
        assert!(text.lines().any(|l| l.starts_with(suite)), "missing {suite}:\n{text}");
    }
    assert!(dir.path().join("validate.json").exists());
}

#[test]
fn wave_variance_is_printed() {
    let dir = tempfile::tempdir().unwrap();
    let o = kglab(dir.path(), &["cov", "--a", "0", "--m", "0", "--p", "1,0", "--q", "1,0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "0.25");
}

#[test]
fn negative_horizon_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kglab(dir.path(), &["cov", "--T", "-1", "--p", "1,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`T`"), "{}", stderr(&o));
}

#[test]
fn unknown_and_malformed_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = kglab(dir.path(), &["cov", "--p", "1,0", "--colour", "red"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
    let o = kglab(dir.path(), &["cov", "--p", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`p`"));
    let o = kglab(dir.path(), &["lil", "--n_min", "2", "--replicas", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_range"), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# wave case\na = 0\nm = 0\np = 1,0\nT = 0.5\n").unwrap();
    let o = kglab(dir.path(), &["cov", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "p lies beyond T = 0.5");
    assert!(stderr(&o).contains("`p`"));
    let o = kglab(dir.path(), &["cov", "--config", cfg.to_str().unwrap(), "--T", "2"]);
    assert_eq!(stdout(&o).trim(), "0.25");
    let json = std::fs::read_to_string(dir.path().join("cov.json")).unwrap();
    assert!(json.contains("\"version\": \"kglab ") && json.contains("\"T\": \"2\""), "{json}");
}

fn run_in(dir: &Path, workers: &str, args: &[&str]) {
    let mut all = args.to_vec();
    all.extend(["--workers", workers]);
    let o = kglab(dir, &all);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn artifacts_do_not_depend_on_worker_count() {
    let runs: [&[&str]; 6] = [
        &["sample", "--points", "1,0; 0.5,0.25", "--replicas", "5", "--method", "walsh", "--step", "0.0625"],
        &["lil", "--replicas", "8", "--n_max", "12", "--T", "3"],
        &["mc", "--replicas", "4", "--n_min", "6", "--n_max", "8", "--z_lo", "0.75", "--z_hi", "0.8", "--T", "3"],
        &["simlil", "--replicas", "4", "--n_max", "10", "--w_list", "0.25,0.5"],
        &["picard", "--a", "2", "--m", "1.2", "--T", "0.5", "--step", "0.0625", "--replicas", "3"],
        &["propagate", "--a", "0.5", "--T", "4", "--n_star", "12", "--null_runs", "20", "--replicas", "3"],
    ];
    for args in runs {
        let (one, two) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_in(one.path(), "1", args);
        run_in(two.path(), "2", args);
        let (a, b) = (csv_files(one.path()), csv_files(two.path()));
        assert!(!a.is_empty(), "{args:?} wrote no CSV");
        assert_eq!(a, b, "{args:?}");
        let json = std::fs::read_to_string(one.path().join(format!("{}.json", args[0]))).unwrap();
        assert!(json.contains("\"config\"") && json.contains("\"experiment\": \"") && json.contains("kglab 0."), "{json}");
    }
}

#[test]
fn scan_reports_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["scan", "--a", "0.5", "--n_star", "12", "--null_runs", "20", "--replicas", "4"];
    let o = kglab(dir.path(), &args);
    assert_eq!(o.status.code(), Some(2), "default T = 2 is too short for w0 = 4");
    assert!(stderr(&o).contains("`T`"));
    let o = kglab(dir.path(), &[&args[..], &["--T", "4"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("replica_id,w0,z_hat"));
}
