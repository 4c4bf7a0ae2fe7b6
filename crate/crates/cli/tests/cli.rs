use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eot-coloc"));
    cmd.env_remove("EOT_COLOC_SEED");
    cmd
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn single_atoms_give_the_cost() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.csv", "x1,x2\n0,0\n");
    write(dir.path(), "b.csv", "x1,x2\n3,4\n");
    let out = run(&["solve", "--src", "a.csv", "--tgt", "b.csv", "--lambda", "0.1", "--out", "s.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("s.json"));
    assert!((v["primal_value"].as_f64().unwrap() - 5.0).abs() < 1e-12);
    assert!((v["dual_value"].as_f64().unwrap() - 5.0).abs() < 1e-12);
    assert_eq!(v["converged"], Value::Bool(true));
}

#[test]
fn zero_lambda_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.csv", "x1\n0\n");
    let out = run(&["solve", "--src", "a.csv", "--tgt", "a.csv", "--lambda", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn missing_file_and_bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--src", "nope.csv", "--tgt", "nope.csv", "--lambda", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["solve", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn non_convergence_exits_two_and_still_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.csv", "x1,weight\n0,1\n1,1\n2,4\n");
    write(dir.path(), "b.csv", "x1\n0.5\n1.5\n");
    let out = run(
        &["solve", "--src", "a.csv", "--tgt", "b.csv", "--lambda", "0.5", "--max-iters", "1", "--eps-scaling", "off", "--out", "s.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let v = json(&dir.path().join("s.json"));
    assert_eq!(v["converged"], Value::Bool(false));
    assert!(v["final_marginal_error"].as_f64().unwrap() > 1e-9);
}

#[test]
fn simulate_writes_expected_shapes() {
    let dir = tempfile::tempdir().unwrap();
    for (scenario, dim) in [("i", 2), ("ii", 3)] {
        let out = run(&["simulate", "--scenario", scenario, "--n", "100", "--seed", "1", "--out-src", "s.csv", "--out-tgt", "t.csv"], dir.path());
        assert!(out.status.success());
        for f in ["s.csv", "t.csv"] {
            let mut rdr = csv::Reader::from_path(dir.path().join(f)).unwrap();
            let headers = rdr.headers().unwrap().clone();
            assert_eq!(headers.len(), dim + 1);
            let rows: Vec<Vec<f64>> = rdr
                .records()
                .map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect())
                .collect();
            assert_eq!(rows.len(), 100);
            if dim == 3 {
                for r in &rows {
                    let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                    assert!((norm - 1.0).abs() < 1e-12);
                }
            }
        }
    }
    let out = run(&["simulate", "--scenario", "iii", "--n", "5", "--out-src", "s.csv", "--out-tgt", "t.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_atom_band_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.csv", "x1,x2\n0,0\n");
    write(dir.path(), "b.csv", "x1,x2\n1,1\n");
    let out = run(
        &["band", "--src", "a.csv", "--tgt", "b.csv", "--lambda", "0.1", "--replicates", "20", "--out", "band.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("band.json"));
    assert_eq!(v["half_width"].as_f64().unwrap(), 0.0);
    assert_eq!(v["lower"], v["center"]);
    assert_eq!(v["upper"], v["center"]);
    let csv = std::fs::read_to_string(dir.path().join("band.csv")).unwrap();
    assert!(csv.starts_with("t,phi,lower,upper\n"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let sim = ["simulate", "--scenario", "i", "--n", "40", "--seed", "2", "--out-src", "s.csv", "--out-tgt", "t.csv"];
    assert!(run(&sim, dir.path()).status.success());
    write(dir.path(), "run.conf", "# band settings\nlambda = 0.5\nreplicates = 30\nseed = 4\nalpha = 0.1\ntruncate = false\n");
    let base = ["band", "--src", "s.csv", "--tgt", "t.csv"];
    let mut a: Vec<&str> = base.to_vec();
    a.extend(["--config", "run.conf", "--out", "a.json"]);
    assert!(run(&a, dir.path()).status.success());
    let mut b: Vec<&str> = base.to_vec();
    b.extend(["--lambda", "0.5", "--replicates", "30", "--seed", "4", "--alpha", "0.1", "--out", "b.json"]);
    assert!(run(&b, dir.path()).status.success());
    assert_eq!(std::fs::read(dir.path().join("a.json")).unwrap(), std::fs::read(dir.path().join("b.json")).unwrap());

    let mut c: Vec<&str> = base.to_vec();
    c.extend(["--config", "run.conf", "--alpha", "0.2", "--out", "c.json"]);
    assert!(run(&c, dir.path()).status.success());
    assert_eq!(json(&dir.path().join("c.json"))["alpha"].as_f64(), Some(0.2));
    assert_eq!(json(&dir.path().join("c.json"))["B"].as_u64(), Some(30));
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let sim = ["simulate", "--scenario", "i", "--n", "30", "--out-src", "s.csv", "--out-tgt", "t.csv"];
    let out = bin().args(sim).env("EOT_COLOC_SEED", "12").current_dir(dir.path()).output().unwrap();
    assert!(out.status.success());
    let from_env = std::fs::read(dir.path().join("s.csv")).unwrap();
    let mut flag: Vec<&str> = sim.to_vec();
    flag.extend(["--seed", "12"]);
    assert!(run(&flag, dir.path()).status.success());
    assert_eq!(from_env, std::fs::read(dir.path().join("s.csv")).unwrap());
}

#[test]
fn grid_inputs_with_subsample() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.txt", "0 1 2\n1 3 1\n0 0 1\n");
    write(dir.path(), "b.txt", "1,0,0\n2,2,0\n0,1,1\n");
    let args = [
        "band", "--src", "a.txt", "--tgt", "b.txt", "--pitch", "2", "--lambda", "0.5", "--replicates", "40",
        "--subsample", "200", "--seed", "3", "--out", "band.json", "--sups-out", "sups.csv",
    ];
    let out = run(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("band.json"));
    let expected_rate = (200.0f64 * 200.0 / 400.0).sqrt();
    assert!((v["rate"].as_f64().unwrap() - expected_rate).abs() < 1e-12);
    // pitch 2 puts the farthest pixel centers 2 * sqrt(8) apart
    let grid = v["grid"].as_array().unwrap();
    assert!(grid.last().unwrap().as_f64().unwrap() <= 2.0 * 8f64.sqrt() + 1e-12);
    let sups = std::fs::read_to_string(dir.path().join("sups.csv")).unwrap();
    assert_eq!(sups.lines().count(), 41);
}

#[test]
fn curve_then_coverage_with_the_center_as_truth() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.csv", "x1\n0\n");
    write(dir.path(), "b.csv", "x1\n2\n");
    let out = run(&["curve", "--src", "a.csv", "--tgt", "b.csv", "--lambda", "1", "--out", "curve.csv"], dir.path());
    assert!(out.status.success());
    let cov = [
        "coverage", "--truth", "curve.csv", "--src", "a.csv", "--tgt", "b.csv", "--lambda", "1",
        "--replicates", "20", "--subsample", "10", "--repetitions", "5", "--out", "cov.json",
    ];
    let out = run(&cov, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("cov.json"));
    assert_eq!(v["coverage"].as_f64(), Some(1.0));
    assert_eq!(v["repetitions"].as_u64(), Some(5));

    let mut zero = cov.to_vec();
    let k = zero.len() - 3;
    zero[k] = "0";
    assert_eq!(run(&zero, dir.path()).status.code(), Some(1));
}

#[test]
fn qq_pairs() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.csv", "sup_dev\n0.3\n0.1\n0.2\n");
    write(dir.path(), "empty.csv", "sup_dev\n");
    write(dir.path(), "other.csv", "value\n1\n");
    let out = run(&["qq", "--boot", "a.csv", "--mc", "a.csv", "--out", "qq.csv"], dir.path());
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(dir.path().join("qq.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["q_boot", "q_mc"]);
    for r in rdr.records() {
        let r = r.unwrap();
        assert_eq!(r[0], r[1]);
    }
    assert_eq!(run(&["qq", "--boot", "empty.csv", "--mc", "a.csv"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["qq", "--boot", "other.csv", "--mc", "a.csv"], dir.path()).status.code(), Some(1));
}
