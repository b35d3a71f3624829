//! End-to-end behaviour of the `kscal` binary.

use std::path::Path;
use std::process::{Command, Output};

fn kscal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kscal")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_exits_zero() {
    assert_eq!(kscal(&["--help"]).status.code(), Some(0));
    assert_eq!(kscal(&["experiment", "--help"]).status.code(), Some(0));
}

#[test]
fn malformed_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"experiment": "exp1", "seed": }"#);
    let out = kscal(&["calibrate", "--config", &cfg, "--out", &tmp.path().to_string_lossy()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("run.json"), "{}", stderr(&out));

    let cfg = write(tmp.path(), "typo.json", r#"{"experiment": "exp1", "sed": 3}"#);
    let out = kscal(&["calibrate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sed"), "{}", stderr(&out));
}

#[test]
fn bad_data_row_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"experiment": "exp1", "seed": 1}"#);
    let data = write(tmp.path(), "data.csv", "0.5\n1.25\n0.75,2.0\n0.1\n");
    let out = kscal(&["calibrate", "--config", &cfg, "--data", &data, "--out", &tmp.path().to_string_lossy()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("row 3") && err.contains("data.csv"), "{err}");
}

#[test]
fn unknown_builtin_lists_valid_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kscal(&["experiment", "exp9", "--out", &tmp.path().to_string_lossy()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for id in ["exp1", "exp2", "exp3", "exp4", "beta_sweep", "n_sweep", "bias", "contamination"] {
        assert!(err.contains(id), "{id} missing from: {err}");
    }
}

#[test]
fn theta_hat_outside_domain_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"experiment": "exp1"}"#);
    let out = kscal(&["confidence", "--config", &cfg, "--theta-hat", "9.0", "--out", &tmp.path().to_string_lossy()]);
    assert_eq!(out.status.code(), Some(1));
    let out = kscal(&["confidence", "--config", &cfg, "--theta-hat", "1.2,1.0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn calibrate_then_confidence_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out_s = out_dir.to_string_lossy().into_owned();
    let cfg = write(tmp.path(), "run.json", r#"{"experiment": "exp1", "seed": 4}"#);
    let out = kscal(&["calibrate", "--config", &cfg, "--out", &out_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    let fit = read_json(&out_dir.join("theta_hat.json"));
    let theta = fit["theta_hat"][0].as_f64().unwrap();
    assert!((theta - 1.2).abs() < 0.15, "{fit}");
    assert_eq!(fit["iterations"], 200);
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 201);

    let theta_path = out_dir.join("theta_hat.json").to_string_lossy().into_owned();
    let out = kscal(&["confidence", "--config", &cfg, "--theta-hat", &theta_path, "--out", &out_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    let set = read_json(&out_dir.join("confidence.json"));
    assert_eq!(set["kind"], "interval");
    assert_eq!(set["center"][0].as_f64().unwrap(), theta);
    let (lo, hi) = (set["lo"].as_f64().unwrap(), set["hi"].as_f64().unwrap());
    assert!(lo < theta && theta < hi);
}

#[test]
fn smaller_alpha_gives_a_wider_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"experiment": "exp1", "seed": 8}"#);
    let mut widths = Vec::new();
    for alpha in ["0.01", "0.05", "0.2"] {
        let dir = tmp.path().join(alpha);
        let dir_s = dir.to_string_lossy().into_owned();
        let out = kscal(&["confidence", "--config", &cfg, "--theta-hat", "1.2", "--alpha", alpha, "--out", &dir_s]);
        assert!(out.status.success(), "{}", stderr(&out));
        let set = read_json(&dir.join("confidence.json"));
        assert_eq!(set["alpha"].as_f64().unwrap(), alpha.parse::<f64>().unwrap());
        widths.push(set["width"].as_f64().unwrap());
    }
    assert!(widths[0] > widths[1] && widths[1] > widths[2], "{widths:?}");
}

#[test]
fn two_parameter_set_is_an_ellipse_with_boundary_points() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"experiment": "exp3", "seed": 2}"#);
    let dir_s = tmp.path().to_string_lossy().into_owned();
    let out = kscal(&["confidence", "--config", &cfg, "--point", "exp3_riesz", "--theta-hat", "1.0,1.0", "--out", &dir_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    let set = read_json(&tmp.path().join("confidence.json"));
    assert_eq!(set["kind"], "ellipse");
    assert_eq!(set["p"], 2);
    assert_eq!(set["boundary_points"].as_array().unwrap().len(), 256);
    assert!(set["width"].as_f64().unwrap() > 0.0 && set["height"].as_f64().unwrap() > 0.0);

    // Without --point the two-kernel config is ambiguous.
    let out = kscal(&["confidence", "--config", &cfg, "--theta-hat", "1.0,1.0", "--out", &dir_s]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("exp3_gaussian"));
}

#[test]
fn experiment_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let run = write(tmp.path(), "run.json", r#"{"experiment": "exp1", "seed": 3, "replications": 2}"#);
    let out_dir = tmp.path().join("out");
    let out = kscal(&["experiment", "--config", &run, "--out", &out_dir.to_string_lossy(), "--threads", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert!(lines.next().unwrap().starts_with("experiment_id,kernel,a,beta,epsilon,m,n,R,mse_mu,coverage"));
    assert!(lines.next().unwrap().starts_with("exp1,riesz,1,1,0,500,500,2,"));
    let runs = std::fs::read_to_string(out_dir.join("exp1").join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    assert!(out_dir.join("exp1").join("sets").join("run_0001.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("exp1"));
}
