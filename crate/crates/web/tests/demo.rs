use serde_json::Value;
use steadyent_web::{dip_sweep_json, rates_json, trajectory_json};

#[test]
fn trajectory_settles_on_the_singlet() {
    let v: Value = serde_json::from_str(&trajectory_json(0.0, 1.0, 3000.0, 60).unwrap()).unwrap();
    let ps = v["ps"].as_array().unwrap();
    assert_eq!(ps.len(), v["t"].as_array().unwrap().len());
    assert_eq!(v["p00"][0].as_f64().unwrap(), 1.0);
    assert!(ps.last().unwrap().as_f64().unwrap() > 0.85);
}

#[test]
fn theta_pi_favours_the_triplet() {
    let v: Value = serde_json::from_str(&trajectory_json(std::f64::consts::PI, 1.0, 3000.0, 10).unwrap()).unwrap();
    let last = |k: &str| v[k].as_array().unwrap().last().unwrap().as_f64().unwrap();
    assert!(last("pt") > last("ps"));
}

#[test]
fn rates_at_the_fig3_point() {
    let v: Value = serde_json::from_str(&rates_json(0.2875, 0.4528, 150.0).unwrap()).unwrap();
    assert!(v["rates"]["kappa_c1_1"].as_f64().unwrap() > 0.0);
    let fs = v["fidelity_s"].as_f64().unwrap();
    assert!((0.85..0.97).contains(&fs), "{fs}");
}

#[test]
fn bad_inputs_are_errors() {
    assert!(trajectory_json(0.0, 1.0, 100.0, 0).is_err());
    assert!(rates_json(0.2875, 0.4528, -1.0).is_err());
    assert!(dip_sweep_json(1, 41).is_err());
    assert!(dip_sweep_json(2, 3).is_err());
}

#[test]
fn two_mode_sweep_finds_the_negative_dip() {
    let v: Value = serde_json::from_str(&dip_sweep_json(2, 41).unwrap()).unwrap();
    let dips = v["dips"].as_array().unwrap();
    assert!(dips.iter().any(|d| (d[0].as_f64().unwrap() + 0.64).abs() <= 0.06), "{dips:?}");
}

#[test]
fn five_modes_are_left_to_the_cli() {
    let err = dip_sweep_json(5, 41).unwrap_err().to_string();
    assert!(err.contains("n:"), "{err}");
}
