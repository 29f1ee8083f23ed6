use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn asyncsgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asyncsgd")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

#[test]
fn example_run_writes_one_trace_per_seed_plus_mean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = asyncsgd(&[
        "run", "--synthetic", "n=1000,d=50,s=5", "--objective", "logistic", "--lambda", "auto",
        "--schedule", "hogwild", "--alpha", "4", "--tau", "10", "--fraction", "0.5",
        "--iterations", "50000", "--seeds", "1..10", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csvs = csv_files(&out);
    assert_eq!(csvs.len(), 11, "{csvs:?}");
    assert!(csvs.contains(&"trace_mean.csv".to_string()));
    assert!(out.join("summary.toml").exists());
    let header = fs::read_to_string(out.join("trace_seed_3.csv")).unwrap();
    assert!(header.starts_with("t,"), "{header}");
    assert!(stdout(&o).contains("final_gap"));
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = asyncsgd(&[
        "run", "--synthetic", "n=200,d=20,s=3", "--schedule", "sgd-convex", "--iterations", "3000",
        "--seeds", "1,2", "--out", a.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = a.join("manifest.toml");
    let o = asyncsgd(&["run", "--manifest", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in csv_files(&a) {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn parallel_run_records_observed_delay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("par");
    let o = asyncsgd(&[
        "run", "--synthetic", "n=300,d=20,s=3", "--engine", "parallel", "--threads", "2",
        "--schedule", "exp-period", "--iterations", "4000", "--seeds", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("observed_tau"), "{manifest}");
    assert!(manifest.contains("schedule_tau = 4"), "{manifest}");
}

#[test]
fn toy_bounds() {
    let o = asyncsgd(&["bounds", "--toy", "--schedule", "sgd-convex", "--at", "3", "--horizon", "100"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for line in ["L = 1\n", "mu = 0.5\n", "kappa = 2\n", "E = 8\n", "delta_bar = 1\n"] {
        assert!(s.contains(line), "missing {line:?} in\n{s}");
    }
    let n_line = s.lines().find(|l| l.starts_with("N = ")).unwrap();
    let n: f64 = n_line[4..].parse().unwrap();
    assert!((n - 2.0).abs() < 1e-6, "{n}");
    assert!(s.contains("tau_cap(3) = "));
    assert!(s.contains("t,envelope,remainder_estimate\n"));
}

#[test]
fn constants_for_the_toy() {
    let o = asyncsgd(&["constants", "--toy"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("F_star = -0.25"), "{s}");
    assert!(s.contains("n = 2\n"));
}

#[test]
fn verify_passes_on_the_toy_and_fails_with_halved_l() {
    let dir = tempfile::tempdir().unwrap();
    let o = asyncsgd(&["verify", "--toy", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("[FAIL]"));
    assert!(dir.path().join("verify.toml").exists());
    let o = asyncsgd(&["verify", "--toy", "--scale-l", "0.5"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("[FAIL] lemma1"));
}

#[test]
fn verify_on_synthetic_data() {
    let o = asyncsgd(&["verify", "--synthetic", "n=60,d=15,s=4", "--probes-per-norm", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn small_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    let o = asyncsgd(&[
        "sweep", "--synthetic", "n=200,d=20,s=4", "--schedule", "hogwild", "--iterations", "2000",
        "--seeds", "1..2", "--fractions", "1,0.5", "--taus", "0,4", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "{summary}");
    assert!(summary.starts_with("cell_id,v,D,tau,P,final_gap,slope,envelope_pass\n"));
    let long = fs::read_to_string(out.join("sweep_long.csv")).unwrap();
    assert!(long.starts_with("cell_id,v,D,tau,P,t,t_prime,objective_gap,squared_distance\n"));
}

#[test]
fn empty_sweep_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = asyncsgd(&["sweep", "--toy", "--schedule", "sgd-convex", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    let cases: &[&[&str]] = &[
        &["run", "--bogus"],
        &["run"],
        &["run", "--toy", "--engine", "parallel", "--mask", "all"],
        &["run", "--toy", "--blocks", "2", "--fraction", "0.5"],
        &["run", "--toy", "--mask", "bernoulli:1.5"],
        &["run", "--toy", "--seeds", "5..1"],
        &["run", "--synthetic", "n=10,d=5,s=9"],
        &["run", "--toy", "--fraction", "0"],
    ];
    for args in cases {
        let o = asyncsgd(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn missing_file_is_a_runtime_error() {
    let o = asyncsgd(&["constants", "--libsvm", "/nonexistent/data.svm"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    assert_eq!(asyncsgd(&["--help"]).status.code(), Some(0));
    assert_eq!(asyncsgd(&["run", "--help"]).status.code(), Some(0));
}
