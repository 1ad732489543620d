//! End-to-end checks of the command-line binary: output shapes, file
//! emission, and the validation/numerical exit-code split.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{bench_model, flat_model};
use nalgebra::{DMatrix, DVector};
use secure_estimation::model::SensorModel;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_secure-estimation"))
}

fn write_model(dir: &Path, name: &str, model: &SensorModel) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, model.to_json_string().unwrap()).unwrap();
    path
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn estimate_optimal_reports_the_subset_fit() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "bench.json", &bench_model());
    let out = binary()
        .args(["estimate", "--model"])
        .arg(&model)
        .args(["--y", "4,-4,5,-5", "--delta", "1"])
        .output()
        .unwrap();
    let json = stdout_json(&out);
    assert_eq!(json["method"], "optimal");
    let estimate = json["estimate"].as_array().unwrap();
    assert!((estimate[0].as_f64().unwrap() - 53.0 / 11.0).abs() < 1e-9);
    assert!((estimate[1].as_f64().unwrap() + 8.0 / 11.0).abs() < 1e-9);
    assert!(json["phi_final"].as_f64().unwrap() > 891.0 / 242.0);
    assert!(json["radius_final"].as_f64().unwrap() <= 1.0 + 1e-6);
}

#[test]
fn estimate_trimmed_and_lasso_handle_one_outlier() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "flat.json", &flat_model());
    for (method, extra) in [("trimmed", vec![]), ("lasso", vec!["--k", "5"])] {
        let out = binary()
            .args(["estimate", "--model"])
            .arg(&model)
            .args(["--y", "0,0,0,0,9", "--method", method])
            .args(extra)
            .output()
            .unwrap();
        let json = stdout_json(&out);
        let x = json["estimate"][0].as_f64().unwrap();
        assert!(x.abs() < 0.5, "{method} estimate {x} chased the outlier");
    }
}

#[test]
fn estimate_least_squares_follows_the_outlier() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "flat.json", &flat_model());
    let out = binary()
        .args(["estimate", "--model"])
        .arg(&model)
        .args(["--y", "0,0,0,0,10", "--method", "ls"])
        .output()
        .unwrap();
    let json = stdout_json(&out);
    assert!((json["estimate"][0].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn estimate_optimal_requires_delta() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "bench.json", &bench_model());
    let out = binary()
        .args(["estimate", "--model"])
        .arg(&model)
        .args(["--y", "4,-4,5,-5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--delta"));
}

#[test]
fn missing_model_file_is_a_validation_error() {
    let out = binary()
        .args(["estimate", "--model", "/nonexistent/model.json", "--y", "1", "--delta", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn region_lists_pieces_and_center() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "bench.json", &bench_model());
    let out = binary()
        .args(["region", "--model"])
        .arg(&model)
        .args(["--y", "4,-4,5,-5", "--phi", "4"])
        .output()
        .unwrap();
    let json = stdout_json(&out);
    assert_eq!(json["empty"], false);
    assert_eq!(json["pieces"].as_array().unwrap().len(), 1);
    assert_eq!(json["pieces"][0]["subset"], serde_json::json!([0, 1, 2]));
    assert!(json["chebyshev_center"].is_array());
    assert!(json["radius"].as_f64().unwrap() > 0.8);

    let empty = binary()
        .args(["region", "--model"])
        .arg(&model)
        .args(["--y", "4,-4,5,-5", "--phi", "3"])
        .output()
        .unwrap();
    let json = stdout_json(&empty);
    assert_eq!(json["empty"], true);
    assert!(json.get("chebyshev_center").is_none());
}

#[test]
fn radius_curve_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "bench.json", &bench_model());
    let csv_path = dir.path().join("curve.csv");
    let out = binary()
        .args(["radius-curve", "--model"])
        .arg(&model)
        .args(["--y", "4,-4,5,-5", "--phis", "3:5:0.5", "--output"])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "phi,radius");
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[1], "3,"); // below the smallest residue the region is empty
    assert_eq!(lines[2], "3.5,");
    assert!(lines[5].starts_with("5,1.7"), "unexpected radius row {:?}", lines[5]);
}

#[test]
fn rates_reports_bound_and_attained_level() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "flat.json", &flat_model());
    let out = binary()
        .args(["rates", "--model"])
        .arg(&model)
        .args(["--delta", "2"])
        .output()
        .unwrap();
    let json = stdout_json(&out);
    assert!((json["u_bar_1"].as_f64().unwrap() - 1.5).abs() < 1e-12);
    assert_eq!(json["argmin_support"], serde_json::json!([0, 1]));
    assert!((json["u_bar_delta"].as_f64().unwrap() - 6.0).abs() < 1e-12);
    assert!(json.get("u_y_delta").is_none());

    let out = binary()
        .args(["rates", "--model"])
        .arg(&model)
        .args(["--y", "0,0,0,0,4", "--delta", "1"])
        .output()
        .unwrap();
    let json = stdout_json(&out);
    assert!(json["u_y_delta"].as_f64().unwrap() > 0.0);
}

#[test]
fn rates_sweep_emits_quadratic_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "flat.json", &flat_model());
    let out = binary()
        .args(["rates", "--model"])
        .arg(&model)
        .args(["--sweep-delta", "0:2:0.5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "delta,u_bar");
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[1], "0,0");
    assert_eq!(lines[5], "2,6");
}

#[test]
fn rates_warns_when_the_bound_is_vacuous() {
    // One reduced block is a lone sensor that cannot pin down two states.
    let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let model = SensorModel::new(h, DVector::from_element(3, 1.0), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_model(dir.path(), "deficient.json", &model);
    let out = binary().args(["rates", "--model"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["u_bar_1"].as_f64().unwrap(), 0.0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn tied_fits_too_far_apart_exit_as_numerical_failure() {
    let model = SensorModel::new(
        DMatrix::from_element(3, 1, 1.0),
        DVector::from_element(3, 1.0),
        1,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_model(dir.path(), "line.json", &model);
    let out = binary()
        .args(["rates", "--model"])
        .arg(&path)
        .args(["--y", "0,10,20", "--delta", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn simulate_runs_a_config_and_reports_files() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "model.json", &bench_model());
    let config_path = dir.path().join("curve.json");
    let config = serde_json::json!({
        "model": "model.json",
        "output": "out/curve.csv",
        "experiment": {
            "kind": "radius-curve",
            "y": [4.0, -4.0, 5.0, -5.0],
            "phi_start": 3.5,
            "phi_stop": 5.0,
            "phi_step": 0.5
        }
    });
    std::fs::write(&config_path, config.to_string()).unwrap();
    let out = binary()
        .args(["simulate", "--config"])
        .arg(&config_path)
        .args(["--workers", "2"])
        .output()
        .unwrap();
    let json = stdout_json(&out);
    assert_eq!(json["rows"].as_u64().unwrap(), 4);
    let csv = std::fs::read_to_string(dir.path().join("out/curve.csv")).unwrap();
    assert!(csv.starts_with("phi,radius\n"));
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/curve.csv.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["seed"].as_u64().unwrap(), 1);
    assert_eq!(meta["rows"].as_u64().unwrap(), 4);
}
