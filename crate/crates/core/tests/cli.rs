use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fedsvgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsvgd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn toy_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "run",
        "--set",
        "model=gaussian_toy",
        "--set",
        "clients=2",
        "--set",
        "rounds=4",
        "--set",
        "particles=20",
        "--set",
        "step_size=0.05",
        "--set",
        "local_step_size=0.05",
        "--out",
        out,
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn run_twice_gives_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = fedsvgd(&toy_args(
            dir.path().to_str().unwrap(),
            &["--seed", "11", "--scheme", "hip"],
        ));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ca = fs::read(a.path().join("hip_seed11.csv")).unwrap();
    let cb = fs::read(b.path().join("hip_seed11.csv")).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(String::from_utf8(ca).unwrap().lines().count(), 5);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("toy.conf");
    fs::write(
        &conf,
        "model = gaussian_toy\nclients = 2\nrounds = 2\nparticles = 10\nseed = 3\nscheme = ksd\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = fedsvgd(&[
        "run",
        "--config",
        conf.to_str().unwrap(),
        "--seed",
        "9",
        "--scheme",
        "round_robin",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = fs::read_to_string(out.join("round_robin_seed9.config")).unwrap();
    assert!(resolved.contains("seed = 9"));
    assert!(resolved.contains("scheme = round_robin"));
    assert!(resolved.contains("rounds = 2"));
    assert!(!Path::new(&out.join("ksd_seed3.csv")).exists());
}

#[test]
fn numerical_abort_leaves_error_trailer_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedsvgd(&toy_args(
        dir.path().to_str().unwrap(),
        &["--set", "step_size=1e300"],
    ));
    assert!(!o.status.success());
    let text = fs::read_to_string(dir.path().join("ksd_seed0.csv")).unwrap();
    assert!(text.starts_with("round,selected_client,"));
    assert!(text.lines().last().unwrap().starts_with("# error: "));
}

#[test]
fn bad_inputs_are_rejected() {
    let o = fedsvgd(&["run", "--scheme", "greedy"]);
    assert!(!o.status.success());
    let o = fedsvgd(&["run", "--set", "no_such_key=1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    let o = fedsvgd(&["run", "--config", "/nonexistent/fedsvgd.conf"]);
    assert!(!o.status.success());
}

#[test]
fn sweep_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fedsvgd(&[
        "sweep",
        "--set",
        "model=gaussian_toy",
        "--set",
        "clients=2",
        "--set",
        "rounds=2",
        "--set",
        "particles=10",
        "--set",
        "sweep_runs=2",
        "--set",
        "sweep_schemes=ksd,random",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    for name in [
        "ksd_run0.csv",
        "ksd_run1.csv",
        "random_run0.csv",
        "random_run1.csv",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}
