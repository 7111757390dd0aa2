use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn aoisim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoisim"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lower_bound_symmetric() {
    let o = aoisim(&["lower-bound", config("symmetric.toml").to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("L_B = 1.500000"), "{out}");
    assert!(out.contains("q = [0.5000, 0.5000]"), "{out}");
}

#[test]
fn randomized_four_to_one() {
    let o = aoisim(&["randomized", config("weighted.toml").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("mu = [0.6667, 0.3333]"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn sweep_writes_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = aoisim(&[
            "sweep",
            config("sweep_fwd_delay.toml").to_str().unwrap(),
            "--horizon",
            "300",
            "--runs",
            "2",
            "--jobs",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (
            fs::read(out.join("sweep_fwd_delay.csv")).unwrap(),
            fs::read_to_string(out.join("sweep_fwd_delay.manifest.json")).unwrap(),
        )
    };
    let (a, manifest) = run("a");
    let (b, _) = run("b");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_value,policy,mean_ewsaoi,stddev,runs,lower_bound,rho_times_lb,closed_form"
    );
    assert_eq!(lines.count(), 20 * 5);
    let m: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(m["seed"], 1);
    assert_eq!(m["horizon"], 300);
    assert!(m["config"].as_str().unwrap().contains("fwd_delay"));
    assert!(m["version"].is_string());
}

#[test]
fn simulate_dumps_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoisim(&[
        "simulate",
        config("scale_uniform.toml").to_str().unwrap(),
        "--horizon",
        "200",
        "--policies",
        "mw-e,randomized",
        "--trace",
        "10",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("scale_uniform_trace_mw-e.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 10 * 8);
    assert!(!dir
        .path()
        .join("scale_uniform_trace_randomized.csv")
        .exists());
    let summary = fs::read_to_string(dir.path().join("scale_uniform_simulate.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> PathBuf {
    let p = dir.path().join("c.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(config("symmetric.toml")).unwrap();

    let p = write_config(&dir, &base.replace("k = 1", "k = 3"));
    let o = aoisim(&["lower-bound", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("network.k"));

    let inf = base.replace("fb_delay = 0", "fb_delay = \"infinite\"");
    let p = write_config(&dir, &inf);
    let o = aoisim(&[
        "simulate",
        p.to_str().unwrap(),
        "--policies",
        "mw-e",
        "--horizon",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let out = dir.path().join("out");
    let o = aoisim(&[
        "simulate",
        p.to_str().unwrap(),
        "--policies",
        "mw-enf",
        "--horizon",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    assert_eq!(
        aoisim(&["lower-bound", "/nonexistent.toml"]).status.code(),
        Some(1)
    );
    assert_eq!(aoisim(&["frobnicate"]).status.code(), Some(1));
    let p = write_config(&dir, &base);
    assert_eq!(
        aoisim(&["sweep", p.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn unwritable_output_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = aoisim(&[
        "simulate",
        config("symmetric.toml").to_str().unwrap(),
        "--horizon",
        "10",
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
