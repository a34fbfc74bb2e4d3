use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FIG3: &str = r#"
[params]
omega = 0.06
omega_m = 0.0138
theta_m = 0.0
delta_cap = 1.3
delta = 0.2875
nu = 0.4528
kappa = 0.0577
gamma0 = 0.0577
gamma1 = 0.0577
n_mediating = 1
"#;

fn steadyent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steadyent")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn negative_kappa_exits_2_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &FIG3.replace("kappa = 0.0577", "kappa = -1.0"));
    let out = tmp.path().join("out");
    let o = steadyent(&["steady", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("kappa"), "{}", stderr(&o));
}

#[test]
fn misspelled_key_exits_2_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "typo.toml", &FIG3.replace("nu = ", "nuu = "));
    let o = steadyent(&["rates", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nuu"), "{}", stderr(&o));
}

#[test]
fn rates_with_two_mediators_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let text = FIG3.replace("n_mediating = 1", "n_mediating = 2\ndelta_x = 0.3");
    let cfg = write_config(tmp.path(), "n2.toml", &text);
    let o = steadyent(&["rates", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("n_mediating"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_a_config_error() {
    let o = steadyent(&["steady"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config"));
}

#[test]
fn steady_writes_f_s() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fig3.toml", FIG3);
    let out = tmp.path().join("out");
    let o = steadyent(&["steady", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("steady.json")).unwrap()).unwrap();
    let fs_ = v["F_S"].as_f64().unwrap();
    assert!((0.88..=0.97).contains(&fs_), "F_S = {fs_}");
    assert!(out.join("metadata.json").exists());
    assert!(out.join("config.toml").exists());
}

#[test]
fn json_config_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"params": {"omega": 0.06, "omega_m": 0.0138, "delta_cap": 1.3, "delta": 0.2875, "nu": 0.4528,
        "kappa": 0.0577, "gamma0": 0.0577, "gamma1": 0.0577, "n_mediating": 1},
        "run": {"emit": ["json"]}}"#;
    let cfg = write_config(tmp.path(), "fig3.json", text);
    let out = tmp.path().join("out");
    let o = steadyent(&["rates", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("rates.json").exists());
    assert!(!out.join("rates.csv").exists());
}

#[test]
fn effective_report_has_rates_channels_and_deviations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fig3.toml", &format!("{FIG3}\n[effective]\nformulas = \"rederived\"\n"));
    let out = tmp.path().join("out");
    let o = steadyent(&["effective", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("effective.json")).unwrap()).unwrap();
    assert!(v["analytic"]["kappa_c1_1"].as_f64().unwrap() > 0.0);
    assert!(v["analytic"]["a_coef"].is_number());
    let channels = v["channels"].as_array().unwrap();
    assert!(channels.iter().any(|c| c["label"] == "kappa_c1"));
    assert_eq!(channels[0]["matrix"]["re"].as_array().unwrap().len(), 4);
    assert_eq!(channels[0]["matrix"]["im"].as_array().unwrap().len(), 4);
    for d in v["deviations"].as_array().unwrap() {
        if d["name"].as_str().unwrap().starts_with("kappa") || d["name"] == "gamma_e" {
            assert!(d["relative"].as_f64().unwrap() <= 0.10, "{d}");
        }
    }
}

#[test]
fn fit_recovers_the_slope_of_given_points() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{FIG3}\n[fit]\npoints = [[50.0, 0.29], [100.0, 0.145], [500.0, 0.029]]\n");
    let cfg = write_config(tmp.path(), "fit.toml", &text);
    let out = tmp.path().join("out");
    let o = steadyent(&["fit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert!((v["fit"]["slope"].as_f64().unwrap() - 14.5).abs() < 1e-9);
    assert_eq!(v["fit"]["points_used"], 3);
}

#[test]
fn unknown_figure_is_rejected() {
    let o = steadyent(&["reproduce", "fig9"]);
    assert_eq!(o.status.code(), Some(2));
}

/// Drops the `seconds` column (the last) from a sweep CSV.
fn mask_seconds_csv(text: &str) -> String {
    text.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

fn mask_seconds_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("seconds");
            m.values_mut().for_each(mask_seconds_json);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(mask_seconds_json),
        _ => {}
    }
}

fn run_all(dir: &Path, cfg: &str, jobs: &str) {
    for cmd in ["evolve", "steady", "effective", "rates", "sweep", "fit"] {
        let out = dir.join(cmd);
        let o = steadyent(&[cmd, "--config", cfg, "--out", out.to_str().unwrap(), "--jobs", jobs, "--seed", "11"]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn reruns_are_byte_identical_apart_from_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{FIG3}
[truncation]
excitation_cap = 1

[integrator]
dt = 0.1
t_final = 50.0
record_stride = 10

[run]
initial_state = {{ random = 3 }}

[sweep]
method = \"analytic\"
[[sweep.axes]]
name = \"delta\"
start = 0.2
stop = 0.4
num = 5
[[sweep.axes]]
name = \"d_omega\"
values = [-0.1, 0.0, 0.1]

[fit]
cooperativities = [50.0, 150.0]
restarts = 1
max_iters = 60
"
    );
    let cfg = write_config(tmp.path(), "all.toml", &text);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_all(&a, &cfg, "1");
    run_all(&b, &cfg, "3");

    let mut compared = 0;
    for cmd in ["evolve", "steady", "effective", "rates", "sweep", "fit"] {
        let mut names: Vec<String> =
            fs::read_dir(a.join(cmd)).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        for name in names {
            let x = fs::read_to_string(a.join(cmd).join(&name)).unwrap();
            let y = fs::read_to_string(b.join(cmd).join(&name)).unwrap();
            match name.as_str() {
                // wall time and job count
                "metadata.json" => {
                    let mut u: serde_json::Value = serde_json::from_str(&x).unwrap();
                    let mut v: serde_json::Value = serde_json::from_str(&y).unwrap();
                    for m in [&mut u, &mut v] {
                        let o = m.as_object_mut().unwrap();
                        o.remove("wall_time_seconds");
                        o.remove("jobs");
                    }
                    assert_eq!(u, v, "{cmd}/{name}");
                }
                "sweep.csv" => assert_eq!(mask_seconds_csv(&x), mask_seconds_csv(&y), "{cmd}/{name}"),
                "sweep.json" => {
                    let mut u: serde_json::Value = serde_json::from_str(&x).unwrap();
                    let mut v: serde_json::Value = serde_json::from_str(&y).unwrap();
                    mask_seconds_json(&mut u);
                    mask_seconds_json(&mut v);
                    assert_eq!(u, v, "{cmd}/{name}");
                }
                _ => assert_eq!(x, y, "{cmd}/{name} differs between runs"),
            }
            compared += 1;
        }
    }
    assert!(compared >= 20, "only {compared} files compared");
    let traj = fs::read_to_string(a.join("evolve").join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,P00,PS,PT,P11,leak,trace_err\n"));
    let sweep = fs::read_to_string(a.join("sweep").join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("delta,d_omega,F_S,F_T,method,seconds\n"));
    assert_eq!(sweep.lines().count(), 16);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("sweep").join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["config"]["run"]["initial_state"]["random"], 11);
    assert!(meta["versions"]["steadyent"].is_string());
    assert!(meta["wall_time_seconds"].is_number());
}

#[test]
fn seed_changes_the_random_initial_state() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{FIG3}\n[integrator]\ndt = 0.1\nt_final = 5.0\nrecord_stride = 10\n[run]\ninitial_state = {{ random = 1 }}\nmodel = \"effective\"\nemit = [\"csv\"]\n"
    );
    let cfg = write_config(tmp.path(), "r.toml", &text);
    let read = |seed: &str| {
        let out = tmp.path().join(seed);
        let o = steadyent(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(out.join("trajectory.csv")).unwrap()
    };
    assert_ne!(read("1"), read("2"));
}
