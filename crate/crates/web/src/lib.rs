//! Browser demo. Every entry point returns a JSON string for the page script.

use serde::Serialize;
use steadyent::analysis::{estimate_infidelity_with, Target};
use steadyent::dynamics::{EvolveOptions, Integrator};
use steadyent::effective::{analytic_rates, AnalyticRates, EffectiveOptions, RateFormulas};
use steadyent::figures::{dip_report, run_effective, spacing_sweep, InitialState};
use steadyent::model::{PhysicalParams, Truncation};
use steadyent::{Error, Result};
use wasm_bindgen::prelude::*;

const DT: f64 = 0.1;

#[derive(Serialize)]
struct TrajectoryJson {
    t: Vec<f64>,
    p00: Vec<f64>,
    ps: Vec<f64>,
    pt: Vec<f64>,
    p11: Vec<f64>,
}

/// Effective-model populations from |00> at the Fig. 3 point, with the drive
/// scaled by `omega_scale`.
pub fn trajectory_json(theta_m: f64, omega_scale: f64, t_final: f64, samples: usize) -> Result<String> {
    if samples == 0 {
        return Err(Error::Invalid("samples: must be at least 1".into()));
    }
    let mut p = PhysicalParams::fig3(theta_m);
    p.omega *= omega_scale;
    p.validate()?;
    let stride = ((t_final / DT / samples as f64).round() as usize).max(1);
    let opts = EvolveOptions { dt: DT, method: Integrator::Rk4, record_stride: stride };
    let traj = run_effective(&p, EffectiveOptions::default(), InitialState::Ket00, t_final, &opts)?;
    let col = |f: fn(&steadyent::dynamics::Populations) -> f64| traj.records.iter().map(|r| f(&r.populations)).collect();
    let out = TrajectoryJson {
        t: traj.times(),
        p00: col(|q| q.p00),
        ps: col(|q| q.ps),
        pt: col(|q| q.pt),
        p11: col(|q| q.p11),
    };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

#[derive(Serialize)]
struct RatesJson {
    rates: AnalyticRates,
    fidelity_s: f64,
    fidelity_t: f64,
}

/// Closed-form rates and the rate-equation fidelity estimate at cooperativity
/// `c` on the γ = 2κ family.
pub fn rates_json(delta: f64, nu: f64, c: f64) -> Result<String> {
    let mut p = PhysicalParams::fig3(0.0).with_cooperativity(c)?;
    p.delta = delta;
    p.nu = nu;
    p.validate()?;
    let out = RatesJson {
        rates: analytic_rates(&p, RateFormulas::Rederived)?,
        fidelity_s: estimate_infidelity_with(&p, Target::S, RateFormulas::BCorrected)?.fidelity(),
        fidelity_t: estimate_infidelity_with(&p, Target::T, RateFormulas::BCorrected)?.fidelity(),
    };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

#[derive(Serialize)]
struct DipJson {
    x: Vec<f64>,
    f_s: Vec<Option<f64>>,
    f_t: Vec<Option<f64>>,
    reference_fs: f64,
    dips: Vec<(f64, f64, f64)>,
}

/// Steady F_S against the mediating-mode spacing for `n` modes (cap 1).
pub fn dip_sweep_json(n: usize, points: usize) -> Result<String> {
    if !(2..=4).contains(&n) {
        return Err(Error::Invalid(format!("n: the demo sweeps 2 to 4 mediating modes, got {n}")));
    }
    if points < 5 {
        return Err(Error::Invalid("points: need at least 5".into()));
    }
    let base = PhysicalParams::fig3(0.0);
    let xs: Vec<f64> = (0..points).map(|k| -1.0 + 2.0 * k as f64 / (points - 1) as f64).collect();
    let table = spacing_sweep(&base, n, &xs, Truncation::capped(1), 1)?;
    let report = dip_report(&base, n, &table, Truncation::capped(1))?;
    let out = DipJson {
        x: xs,
        f_s: table.cells.iter().map(|c| c.fidelity_s).collect(),
        f_t: table.cells.iter().map(|c| c.fidelity_t).collect(),
        reference_fs: report.reference_fs,
        dips: report.dips.iter().map(|d| (d.x, d.value, d.prominence)).collect(),
    };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn trajectory(theta_m: f64, omega_scale: f64, t_final: f64, samples: usize) -> std::result::Result<String, JsError> {
    js(trajectory_json(theta_m, omega_scale, t_final, samples))
}

#[wasm_bindgen]
pub fn rates(delta: f64, nu: f64, c: f64) -> std::result::Result<String, JsError> {
    js(rates_json(delta, nu, c))
}

#[wasm_bindgen]
pub fn dip_sweep(n: usize, points: usize) -> std::result::Result<String, JsError> {
    js(dip_sweep_json(n, points))
}
