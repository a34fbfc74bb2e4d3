//! `reproduce <figure>`: embedded presets, figure artifacts and `checks.json`.

use clap::ValueEnum;
use serde::Serialize;
use steadyent::analysis::{OptimizeOptions, Objective, Target};
use steadyent::dynamics::sig12;
use steadyent::effective::EffectiveOptions;
use steadyent::figures::{
    all_passed, c_scaling, dip_report, fig3_checks, fig4_checks, fig5_checks, fig6_checks, fig6_spacings,
    population_gap, preset_evolve_options, robustness, run_effective, run_full, spacing_sweep, Check, InitialState,
    FIG3_STRIDE, FIG4_CONFIRM, FIG4_COOPERATIVITIES, FIG5_ERRORS, PRESET_DT, PRESET_STRIDE, T_FINAL,
};
use steadyent::model::{PhysicalParams, Truncation};

use crate::commands::{check_positive, fit_chart, population_chart, summarize, sweep_chart, write_sweep};
use crate::config::{
    Emit, IntegratorConfig, Method, ModelKind, ParamsConfig, RunConfig, RunSection, TruncationConfig,
};
use crate::output::{json_string, OutputDir};
use crate::svg::{LineChart, Series};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig3a,
    Fig3b,
    Fig4,
    Fig5a,
    Fig5b,
    Fig6a,
    Fig6b,
    Fig6c,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig3a => "fig3a",
            Figure::Fig3b => "fig3b",
            Figure::Fig4 => "fig4",
            Figure::Fig5a => "fig5a",
            Figure::Fig5b => "fig5b",
            Figure::Fig6a => "fig6a",
            Figure::Fig6b => "fig6b",
            Figure::Fig6c => "fig6c",
        }
    }

    fn theta(self) -> f64 {
        match self {
            Figure::Fig3b | Figure::Fig5b => std::f64::consts::PI,
            _ => 0.0,
        }
    }

    fn target(self) -> Target {
        match self {
            Figure::Fig3b | Figure::Fig5b => Target::T,
            _ => Target::S,
        }
    }

    /// Mediating modes of the Fig. 6 panels.
    fn mediators(self) -> usize {
        match self {
            Figure::Fig6a => 2,
            Figure::Fig6b => 3,
            Figure::Fig6c => 5,
            _ => 1,
        }
    }

    fn truncation(self) -> Truncation {
        match self {
            Figure::Fig6a | Figure::Fig6b | Figure::Fig6c => Truncation::capped(1),
            _ => Truncation::capped(2),
        }
    }

    /// The preset as a config, recorded with the artifacts.
    pub fn preset(self, seed: u64) -> RunConfig {
        let t = self.truncation();
        let initial_state = match self {
            Figure::Fig3a | Figure::Fig3b => InitialState::Random(seed),
            _ => InitialState::Ket00,
        };
        RunConfig {
            params: ParamsConfig::from_params(&PhysicalParams::fig3(self.theta())),
            truncation: TruncationConfig { excitation_cap: t.excitation_cap.unwrap_or(2), per_mode_cap: t.per_mode_cap },
            integrator: IntegratorConfig {
                method: Method::Rk4,
                dt: PRESET_DT,
                t_final: T_FINAL,
                record_stride: match self {
                    Figure::Fig3a | Figure::Fig3b => FIG3_STRIDE,
                    _ => PRESET_STRIDE,
                },
                ..IntegratorConfig::default()
            },
            run: RunSection {
                initial_state,
                output_dir: format!("out/{}", self.name()).into(),
                emit: vec![Emit::Csv, Emit::Json, Emit::Svg],
                seed,
                model: ModelKind::Full,
            },
            effective: Default::default(),
            sweep: None,
            fit: None,
        }
    }

    /// Choices the figure makes that the config does not show.
    pub fn notes(self) -> Vec<String> {
        let mut v: Vec<String> = match self {
            Figure::Fig3a | Figure::Fig3b => vec![
                "full model (N=1, cap=2) from a Haar-random ground state seeded by `seed`",
                "effective model (numeric reduction, no Stark shifts) from the same state for comparison",
            ],
            Figure::Fig4 => vec![
                "delta and nu optimized per C with delta_cap fixed at 1.3, analytic objective (B-corrected closed forms)",
                "gamma = 2 kappa family, delta and nu bounded to [0.05, 0.6]",
                "full steady-state confirmation at C = 50, 150, 500 (cap=2)",
            ],
            Figure::Fig5a | Figure::Fig5b => {
                vec!["5x5 grid of relative errors in omega and omega_m, full model at gt=9000 from |00>"]
            }
            Figure::Fig6a | Figure::Fig6b | Figure::Fig6c => vec![
                "steady-state fidelities (null-space solve) over 41 spacings on [-1, 1]",
                "excitation cap 1 for all panels",
            ],
        }
        .into_iter()
        .map(String::from)
        .collect();
        if self.mediators() > 1 {
            v.push(format!("n_mediating = {} with the delta_x layout, replacing the single mode in params", self.mediators()));
        }
        v
    }
}

pub fn run(fig: Figure, seed: u64, jobs: usize, out: &mut OutputDir) -> Result<Vec<Check>, CliError> {
    let cfg = fig.preset(seed);
    let p = cfg.params.to_params()?;
    let checks = match fig {
        Figure::Fig3a | Figure::Fig3b => fig3(fig, &cfg, &p, out)?,
        Figure::Fig4 => fig4(seed, out)?,
        Figure::Fig5a | Figure::Fig5b => {
            let table = robustness(&p, &FIG5_ERRORS, fig.truncation(), T_FINAL, &preset_evolve_options(), jobs)?;
            write_sweep(out, fig.name(), &format!("{}: fidelity at gt=9000", fig.name()), &table)?;
            fig5_checks(&table, fig.target())
        }
        Figure::Fig6a | Figure::Fig6b | Figure::Fig6c => {
            let n = fig.mediators();
            let table = spacing_sweep(&p, n, &fig6_spacings(), fig.truncation(), jobs)?;
            let report = dip_report(&p, n, &table, fig.truncation())?;
            out.csv(&format!("{}.csv", fig.name()), |w| table.write_csv(w))?;
            out.json(&format!("{}.json", fig.name()), &table)?;
            out.json("dips.json", &report)?;
            let mut chart = sweep_chart(&format!("{}: N={n}", fig.name()), &table);
            let xs = fig6_spacings();
            chart = chart.with(Series::line("F_S at N=1", vec![(xs[0], report.reference_fs), (xs[xs.len() - 1], report.reference_fs)]));
            out.svg(&format!("{}.svg", fig.name()), &chart)?;
            for d in &report.dips {
                println!("dip at delta_x = {:+.4} (F_S {:.4}, prominence {:.4})", d.x, d.value, d.prominence);
            }
            fig6_checks(&report, &table)
        }
    };
    #[derive(Serialize)]
    struct Checks<'a> {
        figure: &'a str,
        all_passed: bool,
        checks: &'a [Check],
    }
    let doc = Checks { figure: fig.name(), all_passed: all_passed(&checks), checks: &checks };
    out.always("checks.json", &json_string(&doc))?;
    Ok(checks)
}

fn fig3(fig: Figure, cfg: &RunConfig, p: &PhysicalParams, out: &mut OutputDir) -> Result<Vec<Check>, CliError> {
    let opts = cfg.integrator.evolve_options();
    let init = cfg.run.initial_state;
    let full = run_full(p, cfg.truncation.truncation(), init, T_FINAL, &opts)?;
    check_positive(&full)?;
    let eff = run_effective(p, EffectiveOptions::default(), init, T_FINAL, &opts)?;
    let gap = population_gap(&eff, &full);
    out.csv("trajectory.csv", |w| full.write_csv(w))?;
    out.csv("trajectory_effective.csv", |w| eff.write_csv(w))?;
    #[derive(Serialize)]
    struct Fig3Summary {
        full: crate::commands::TrajectorySummary,
        effective: crate::commands::TrajectorySummary,
        gap: steadyent::figures::PopulationGap,
    }
    out.json(&format!("{}.json", fig.name()), &Fig3Summary { full: summarize(&full, "full"), effective: summarize(&eff, "effective"), gap })?;
    let k = fig.target().index();
    let pick = |r: &steadyent::dynamics::Record| r.populations.as_array()[k];
    let label = ["P00", "PS", "PT", "P11"][k];
    let chart = population_chart(&format!("{}: full model", fig.name()), &full)
        .with(Series::line(format!("{label} effective"), eff.records.iter().map(|r| (r.t, pick(r))).collect()));
    out.svg(&format!("{}.svg", fig.name()), &chart)?;
    let names = ["P00", "PS", "PT", "P11"];
    let mut checks = fig3_checks(&full, fig.target());
    checks.push(
        Check::at_most("max |P_eff - P_full| over gt in [0, 9000]", gap.max(), 0.05)
            .with_note(format!("worst {} at gt={}", names[gap.worst_population], gap.worst_time)),
    );
    Ok(checks)
}

fn fig4(seed: u64, out: &mut OutputDir) -> Result<Vec<Check>, CliError> {
    let opts = OptimizeOptions { seed, ..OptimizeOptions::default() };
    let s = c_scaling(&FIG4_COOPERATIVITIES, Objective::analytic(), &opts, &FIG4_CONFIRM, Truncation::capped(2))?;
    out.csv("fig4.csv", |w| {
        use std::io::Write;
        writeln!(w, "C,target,infidelity,delta,nu,evaluations")?;
        for (target, pts) in [("S", &s.points_s), ("T", &s.points_t)] {
            for (c, r) in pts.iter() {
                writeln!(
                    w,
                    "{},{target},{},{},{},{}",
                    sig12(*c),
                    sig12(1.0 - r.fidelity),
                    sig12(r.params.delta),
                    sig12(r.params.nu),
                    r.evaluations
                )?;
            }
        }
        Ok(())
    })?;
    out.csv("fig4_confirmations.csv", |w| {
        use std::io::Write;
        writeln!(w, "C,target,objective_infidelity,full_infidelity")?;
        for (c, t, a, f) in &s.confirmations {
            writeln!(w, "{},{t:?},{},{}", sig12(*c), sig12(*a), sig12(*f))?;
        }
        Ok(())
    })?;
    out.json("fig4.json", &s)?;
    let ps: Vec<(f64, f64)> = s.points_s.iter().map(|(c, r)| (*c, 1.0 - r.fidelity)).collect();
    let pt: Vec<(f64, f64)> = s.points_t.iter().map(|(c, r)| (*c, 1.0 - r.fidelity)).collect();
    let chart: LineChart = fit_chart("fig4: optimized infidelity against 1/C", &[("S".into(), &ps, s.fit_s), ("T".into(), &pt, s.fit_t)]);
    out.svg("fig4.svg", &chart)?;
    Ok(fig4_checks(&s))
}
