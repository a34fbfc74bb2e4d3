//! The config-driven subcommands.

use nalgebra::DMatrix;
use serde::Serialize;
use steadyent::analysis::{
    estimate_infidelity_with, fit_inverse_c, optimize_fidelity, steady_fidelities, sweep_grid, Axis, CellValue,
    FitResult, OptimizeOptions, SweepTable, Target,
};
use steadyent::dynamics::{atomic_populations, sig12, steady_state, Populations, SteadyOptions, Trajectory};
use steadyent::effective::{
    analytic_rates, build_effective_generator, numeric_rates, off_pattern_ratios, rate_deviations, reduce,
    AnalyticRates, ChannelLabeling, NumericRates, RateFormulas, GROUND_LABELS,
};
use steadyent::figures::{full_generator, run_effective, run_full};
use steadyent::model::{ChannelKind, FullModel, PhysicalParams};
use steadyent::qspace::POSITIVITY_TOL;
use steadyent::C64;

use crate::config::{ModelKind, RunConfig, SweepMethod};
use crate::output::OutputDir;
use crate::svg::{LineChart, Series};
use crate::CliError;

/// Rejects a trajectory whose final state left the positive cone.
pub fn check_positive(traj: &Trajectory) -> Result<(), CliError> {
    if traj.final_min_eigenvalue < -POSITIVITY_TOL {
        return Err(steadyent::Error::Invariant(format!(
            "final state has negative eigenvalue {:.3e}",
            traj.final_min_eigenvalue
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
pub struct TrajectorySummary {
    pub model: String,
    pub steps: usize,
    pub records: usize,
    pub t_final: f64,
    pub final_populations: Populations,
    pub max_trace_err: f64,
    pub final_min_eigenvalue: f64,
}

pub fn summarize(traj: &Trajectory, model: &str) -> TrajectorySummary {
    TrajectorySummary {
        model: model.into(),
        steps: traj.steps,
        records: traj.records.len(),
        t_final: traj.last().t,
        final_populations: traj.last().populations,
        max_trace_err: traj.max_trace_err(),
        final_min_eigenvalue: traj.final_min_eigenvalue,
    }
}

pub fn population_chart(title: &str, traj: &Trajectory) -> LineChart {
    let col = |f: fn(&Populations) -> f64| traj.records.iter().map(|r| (r.t, f(&r.populations))).collect::<Vec<_>>();
    LineChart::new(title, "gt", "population")
        .with(Series::line("P00", col(|p| p.p00)))
        .with(Series::line("PS", col(|p| p.ps)))
        .with(Series::line("PT", col(|p| p.pt)))
        .with(Series::line("P11", col(|p| p.p11)))
}

pub fn evolve(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let p = cfg.params.to_params()?;
    let opts = cfg.integrator.evolve_options();
    let t_final = cfg.integrator.t_final;
    let init = cfg.run.initial_state;
    let (traj, label) = match cfg.run.model {
        ModelKind::Full => (run_full(&p, cfg.truncation.truncation(), init, t_final, &opts)?, "full"),
        ModelKind::Effective => (run_effective(&p, cfg.effective.options(), init, t_final, &opts)?, "effective"),
    };
    check_positive(&traj)?;
    out.csv("trajectory.csv", |w| traj.write_csv(w))?;
    out.json("trajectory.json", &summarize(&traj, label))?;
    out.svg("trajectory.svg", &population_chart(&format!("{label} model populations"), &traj))?;
    let last = traj.last().populations;
    println!("t = {}: P00 {:.6} PS {:.6} PT {:.6} P11 {:.6}", traj.last().t, last.p00, last.ps, last.pt, last.p11);
    Ok(())
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct SteadyReport {
    model: String,
    F_S: f64,
    F_T: f64,
    populations: Populations,
    residual: f64,
    method: steadyent::dynamics::SteadyMethod,
    min_eigenvalue: f64,
    dim: usize,
}

pub fn steady(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let p = cfg.params.to_params()?;
    let (ss, pops, label, dim) = match cfg.run.model {
        ModelKind::Full => {
            let m = FullModel::build(&p, cfg.truncation.truncation())?;
            let gen = full_generator(&m)?;
            let ss = steady_state(&gen, &SteadyOptions::default())?;
            let pops = atomic_populations(&ss.rho, &m.space, &m.layout)?;
            (ss, pops, "full", gen.dim())
        }
        ModelKind::Effective => {
            let gen = build_effective_generator(&p, cfg.effective.options())?;
            let ss = steady_state(&gen, &SteadyOptions::default())?;
            let d = |k: usize| ss.rho.matrix()[(k, k)].re;
            let pops = Populations { p00: d(0), ps: d(1), pt: d(2), p11: d(3), leak: 0.0 };
            (ss, pops, "effective", 4)
        }
    };
    let report = SteadyReport {
        model: label.into(),
        F_S: pops.ps,
        F_T: pops.pt,
        populations: pops,
        residual: ss.residual,
        method: ss.method,
        min_eigenvalue: ss.rho.min_eigenvalue(),
        dim,
    };
    out.json("steady.json", &report)?;
    out.csv("steady.csv", |w| {
        use std::io::Write;
        writeln!(w, "F_S,F_T,P00,PS,PT,P11,leak,residual")?;
        let row = [pops.ps, pops.pt, pops.p00, pops.ps, pops.pt, pops.p11, pops.leak, ss.residual];
        writeln!(w, "{}", row.map(sig12).join(","))
    })?;
    println!("steady state ({label}): F_S {:.6} F_T {:.6} residual {:.2e}", pops.ps, pops.pt, ss.residual);
    Ok(())
}

/// Real and imaginary parts of a complex matrix, row-major.
#[derive(Serialize)]
pub struct ComplexMatrix {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl ComplexMatrix {
    pub fn new(m: &DMatrix<C64>) -> Self {
        let rows = |f: fn(&C64) -> f64| (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| f(&m[(r, c)])).collect()).collect();
        ComplexMatrix { re: rows(|z| z.re), im: rows(|z| z.im) }
    }
}

#[derive(Serialize)]
struct ChannelJson {
    label: String,
    kind: ChannelKind,
    matrix: ComplexMatrix,
}

#[derive(Serialize)]
struct Deviation {
    name: String,
    analytic: f64,
    numeric: f64,
    relative: f64,
}

#[derive(Serialize)]
struct EffectiveReport {
    basis: [&'static str; 4],
    labeling: ChannelLabeling,
    formulas: RateFormulas,
    /// Closed forms; only defined for one resonant mediating mode.
    analytic: Option<AnalyticRates>,
    numeric: Option<NumericRates>,
    deviations: Vec<Deviation>,
    h_eff: ComplexMatrix,
    h_g: ComplexMatrix,
    channels: Vec<ChannelJson>,
    off_pattern_ratios: Vec<(String, f64)>,
}

pub fn effective(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let p = cfg.params.to_params()?;
    let formulas = cfg.effective.formulas;
    let model = reduce(&FullModel::build(&p, cfg.truncation.truncation())?)?;
    let (analytic, numeric) = if model.labeling == ChannelLabeling::Delocalized {
        (Some(analytic_rates(&p, formulas)?), Some(numeric_rates(&model)?))
    } else {
        (None, None)
    };
    let deviations = match (&analytic, &numeric) {
        (Some(a), Some(n)) => rate_deviations(a, n)
            .into_iter()
            .map(|(name, analytic, numeric, relative)| Deviation { name: name.into(), analytic, numeric, relative })
            .collect(),
        _ => Vec::new(),
    };
    let report = EffectiveReport {
        basis: GROUND_LABELS,
        labeling: model.labeling,
        formulas,
        analytic,
        numeric,
        off_pattern_ratios: if model.labeling == ChannelLabeling::Delocalized { off_pattern_ratios(&model) } else { Vec::new() },
        deviations,
        h_eff: ComplexMatrix::new(&model.h_eff),
        h_g: ComplexMatrix::new(&model.h_g),
        channels: model
            .lindblads
            .iter()
            .map(|c| ChannelJson { label: c.label.clone(), kind: c.kind, matrix: ComplexMatrix::new(&c.matrix) })
            .collect(),
    };
    out.json("effective.json", &report)?;
    out.csv("deviations.csv", |w| {
        use std::io::Write;
        writeln!(w, "rate,analytic,numeric,relative")?;
        for d in &report.deviations {
            writeln!(w, "{},{},{},{}", d.name, sig12(d.analytic), sig12(d.numeric), sig12(d.relative))?;
        }
        Ok(())
    })?;
    for d in &report.deviations {
        println!("{:<12} analytic {:.4e} numeric {:.4e} rel {:.3}", d.name, d.analytic, d.numeric, d.relative);
    }
    Ok(())
}

#[derive(Serialize)]
struct RatesReport {
    printed: AnalyticRates,
    b_corrected: AnalyticRates,
    rederived: AnalyticRates,
}

pub fn rates(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let p = cfg.params.to_params()?;
    let report = RatesReport {
        printed: analytic_rates(&p, RateFormulas::Printed)?,
        b_corrected: analytic_rates(&p, RateFormulas::BCorrected)?,
        rederived: analytic_rates(&p, RateFormulas::Rederived)?,
    };
    out.json("rates.json", &report)?;
    out.csv("rates.csv", |w| {
        use std::io::Write;
        writeln!(w, "rate,printed,b_corrected,rederived")?;
        let rows = |r: &AnalyticRates| {
            [
                r.kappa_c1_1,
                r.kappa_c1_2,
                r.kappa_c2_1,
                r.kappa_c2_2,
                r.kappa_c3_1,
                r.kappa_c3_2,
                r.gamma_e,
                r.gamma_s_12,
                r.gamma_s_34,
                r.gamma_t_12,
                r.gamma_t_34,
                r.stark_00,
                r.stark_s,
                r.stark_t,
            ]
        };
        let names = [
            "kappa_c1_1", "kappa_c1_2", "kappa_c2_1", "kappa_c2_2", "kappa_c3_1", "kappa_c3_2", "gamma_e",
            "gamma_s_12", "gamma_s_34", "gamma_t_12", "gamma_t_34", "stark_00", "stark_s", "stark_t",
        ];
        let (a, b, c) = (rows(&report.printed), rows(&report.b_corrected), rows(&report.rederived));
        for k in 0..names.len() {
            writeln!(w, "{},{},{},{}", names[k], sig12(a[k]), sig12(b[k]), sig12(c[k]))?;
        }
        Ok(())
    })?;
    let r = &report.b_corrected;
    println!("kappa_c1_1 {:.4e} gamma_e {:.4e} (b_corrected)", r.kappa_c1_1, r.gamma_e);
    Ok(())
}

/// Sets one sweep coordinate on a copy of `base`.
pub fn apply_axis(base: &PhysicalParams, p: &mut PhysicalParams, name: &str, v: f64) -> steadyent::Result<()> {
    match name {
        "omega" => p.omega = v,
        "omega_m" => p.omega_m = v,
        "theta_m" => p.theta_m = v,
        "delta_cap" => p.delta_cap = v,
        "delta" => p.delta = v,
        "nu" => p.nu = v,
        "kappa" => p.kappa = v,
        "gamma0" => p.gamma0 = v,
        "gamma1" => p.gamma1 = v,
        "gamma" => {
            p.gamma0 = v / 2.0;
            p.gamma1 = v / 2.0;
        }
        "cooperativity" => *p = p.clone().with_cooperativity(v)?,
        "delta_x" => *p = p.clone().with_layout(p.n_mediating, v)?,
        "d_omega" => p.omega = base.omega * (1.0 + v),
        "d_omega_m" => p.omega_m = base.omega_m * (1.0 + v),
        other => return Err(steadyent::Error::Invalid(format!("sweep.axes.name: unknown axis {other:?}"))),
    }
    Ok(())
}

pub fn sweep_chart(title: &str, table: &SweepTable) -> LineChart {
    let axes = &table.axes;
    let mut chart = LineChart::new(title, axes.last().map_or("x", |a| a.name.as_str()), "fidelity");
    match axes.len() {
        1 => {
            let s = table.cells.iter().map(|c| (c.coords[0], c.fidelity_s.unwrap_or(f64::NAN))).collect();
            let t = table.cells.iter().map(|c| (c.coords[0], c.fidelity_t.unwrap_or(f64::NAN))).collect();
            chart = chart.with(Series::line("F_S", s)).with(Series::line("F_T", t));
        }
        2 => {
            let inner = axes[1].values.len();
            for (i, v) in axes[0].values.iter().enumerate() {
                let cells = &table.cells[i * inner..(i + 1) * inner];
                let pts = cells.iter().map(|c| (c.coords[1], c.fidelity_s.unwrap_or(f64::NAN))).collect();
                chart = chart.with(Series::line(format!("F_S, {} = {v}", axes[0].name), pts));
            }
        }
        _ => {
            chart.x_label = "cell".into();
            let s = table.cells.iter().enumerate().map(|(k, c)| (k as f64, c.fidelity_s.unwrap_or(f64::NAN))).collect();
            chart = chart.with(Series::line("F_S", s));
        }
    }
    chart
}

pub fn write_sweep(out: &mut OutputDir, stem: &str, title: &str, table: &SweepTable) -> Result<(), CliError> {
    out.csv(&format!("{stem}.csv"), |w| table.write_csv(w))?;
    out.json(&format!("{stem}.json"), table)?;
    out.svg(&format!("{stem}.svg"), &sweep_chart(title, table))
}

pub fn sweep(cfg: &RunConfig, out: &mut OutputDir, jobs: usize) -> Result<(), CliError> {
    let sc = cfg.sweep.as_ref().ok_or_else(|| CliError::config("sweep: the config has no [sweep] section"))?;
    let base = cfg.params.to_params()?;
    let axes: Vec<Axis> =
        sc.axes.iter().map(|a| Ok(Axis::new(a.name.clone(), a.values()?))).collect::<Result<_, CliError>>()?;
    let trunc = cfg.truncation.truncation();
    let opts = cfg.integrator.evolve_options();
    let eff = cfg.effective.options();
    let formulas = cfg.effective.formulas;
    let (t_final, init, method) = (cfg.integrator.t_final, cfg.run.initial_state, sc.method);
    let names: Vec<String> = axes.iter().map(|a| a.name.clone()).collect();
    let table = sweep_grid(
        &axes,
        |x| {
            let mut p = base.clone();
            for (name, v) in names.iter().zip(x) {
                apply_axis(&base, &mut p, name, *v)?;
            }
            p.validate()?;
            match method {
                SweepMethod::FullSteady => {
                    let (fs, ft) = steady_fidelities(&p, trunc)?;
                    Ok(CellValue { fidelity_s: fs, fidelity_t: ft, method: "full_steady".into() })
                }
                SweepMethod::FullEvolve => {
                    let traj = run_full(&p, trunc, init, t_final, &opts)?;
                    let pops = traj.last().populations;
                    Ok(CellValue { fidelity_s: pops.ps, fidelity_t: pops.pt, method: "full_evolve".into() })
                }
                SweepMethod::EffectiveSteady => {
                    let ss = steady_state(&build_effective_generator(&p, eff)?, &SteadyOptions::default())?;
                    let d = |k: usize| ss.rho.matrix()[(k, k)].re;
                    Ok(CellValue { fidelity_s: d(1), fidelity_t: d(2), method: "effective_steady".into() })
                }
                SweepMethod::Analytic => Ok(CellValue {
                    fidelity_s: estimate_infidelity_with(&p, Target::S, formulas)?.fidelity(),
                    fidelity_t: estimate_infidelity_with(&p, Target::T, formulas)?.fidelity(),
                    method: "analytic".into(),
                }),
            }
        },
        jobs,
    )?;
    write_sweep(out, "sweep", "sweep", &table)?;
    println!("{} cells, {} failed", table.cells.len(), table.failures());
    Ok(())
}

#[derive(Serialize)]
struct FitPoint {
    cooperativity: f64,
    infidelity: f64,
    /// Optimized parameters, when the point came from an optimization.
    params: Option<PhysicalParams>,
    evaluations: Option<usize>,
}

#[derive(Serialize)]
struct FitReport {
    target: Target,
    fit: FitResult,
    points: Vec<FitPoint>,
}

pub fn fit(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let fc = cfg.fit.as_ref().ok_or_else(|| CliError::config("fit: the config has no [fit] section"))?;
    let points: Vec<FitPoint> = match &fc.points {
        Some(pts) => pts
            .iter()
            .map(|&(c, e)| FitPoint { cooperativity: c, infidelity: e, params: None, evaluations: None })
            .collect(),
        None => {
            let base = cfg.params.to_params()?;
            let opts = OptimizeOptions {
                seed: cfg.run.seed,
                restarts: fc.restarts,
                max_iters: fc.max_iters,
                ..OptimizeOptions::default()
            };
            let mut pts = Vec::new();
            for &c in &fc.cooperativities {
                let p = base.clone().with_cooperativity(c)?;
                let r = optimize_fidelity(&p, &fc.free, fc.target, fc.objective, &opts)?;
                println!("C = {c}: 1 - F = {:.5e}", 1.0 - r.fidelity);
                pts.push(FitPoint {
                    cooperativity: c,
                    infidelity: 1.0 - r.fidelity,
                    params: Some(r.params),
                    evaluations: Some(r.evaluations),
                });
            }
            pts
        }
    };
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.cooperativity, p.infidelity)).collect();
    let fit = fit_inverse_c(&pairs)?;
    out.json("fit.json", &FitReport { target: fc.target, fit, points })?;
    out.csv("fit.csv", |w| {
        use std::io::Write;
        writeln!(w, "C,infidelity,fitted")?;
        for &(c, e) in &pairs {
            writeln!(w, "{},{},{}", sig12(c), sig12(e), sig12(fit.slope / c))?;
        }
        Ok(())
    })?;
    out.svg("fit.svg", &fit_chart(&format!("1 - F_{:?} against 1/C", fc.target), &[(format!("{:?}", fc.target), &pairs, fit)]))?;
    println!("slope {:.4} residual {:.3e} ({} points)", fit.slope, fit.residual_rms, fit.points_used);
    Ok(())
}

pub fn fit_chart(title: &str, sets: &[(String, &[(f64, f64)], FitResult)]) -> LineChart {
    let mut chart = LineChart::new(title, "1/C", "1 - F");
    for (name, pts, fit) in sets {
        let xs: Vec<f64> = pts.iter().map(|(c, _)| 1.0 / c).collect();
        let xmax = xs.iter().copied().fold(0.0, f64::max);
        chart = chart
            .with(Series::markers(format!("{name} points"), xs.iter().zip(pts.iter()).map(|(x, (_, e))| (*x, *e)).collect()))
            .with(Series::line(format!("{name} fit, slope {:.2}", fit.slope), vec![(0.0, 0.0), (xmax, fit.slope * xmax)]));
    }
    chart
}
