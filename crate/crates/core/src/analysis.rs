//! Closed-form fidelity estimates, 1/C fits, bounded simplex optimization,
//! parameter sweeps and dip detection.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{atomic_populations, sig12, steady_state, SteadyOptions};
use crate::effective::{analytic_rates, reduce_params, RateFormulas};
use crate::error::{Error, Result};
use crate::model::{FullModel, PhysicalParams, Truncation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    S,
    T,
}

impl Target {
    /// Index of the target state in the ground-manifold basis.
    pub fn index(self) -> usize {
        match self {
            Target::S => 1,
            Target::T => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FidelityEstimate {
    pub target: Target,
    pub infidelity: f64,
    /// Steady `P₀₀`; the estimate closes as `1 − F ≈ 3P₀₀`.
    pub p00_share: f64,
}

impl FidelityEstimate {
    pub fn fidelity(&self) -> f64 {
        1.0 - self.infidelity
    }
}

/// Steady-state rate estimate with the B-corrected closed forms.
pub fn estimate_infidelity(p: &PhysicalParams, target: Target) -> Result<FidelityEstimate> {
    estimate_infidelity_with(p, target, RateFormulas::BCorrected)
}

/// `1 − F_S ≈ 3[κ_c1² + γ_S^{1,2} + γ_S^{3,4}]/κ_c1¹`, and the T analogue with
/// the summed c₂, c₃ rates.
pub fn estimate_infidelity_with(p: &PhysicalParams, target: Target, formulas: RateFormulas) -> Result<FidelityEstimate> {
    let r = analytic_rates(p, formulas)?;
    let (loss, pump) = match target {
        Target::S => (3.0 * r.kappa_c1_2 + 3.0 * (r.gamma_s_12 + r.gamma_s_34), r.kappa_c1_1),
        Target::T => (
            3.0 * (r.kappa_c2_2 + r.kappa_c3_2) + 3.0 * (r.gamma_t_12 + r.gamma_t_34),
            r.kappa_c2_1 + r.kappa_c3_1,
        ),
    };
    if !(pump > 0.0) {
        return Err(Error::numerical("pump rate vanishes; fidelity estimate undefined"));
    }
    let infidelity = (loss / pump).clamp(0.0, 1.0);
    Ok(FidelityEstimate { target, infidelity, p00_share: infidelity / 3.0 })
}

/// Least-squares fit of `1 − F = a/C` through the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub residual_rms: f64,
    pub points_used: usize,
}

pub fn fit_inverse_c(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("fit needs at least 2 points, got {}", points.len())));
    }
    if let Some((c, _)) = points.iter().find(|(c, y)| !(*c > 0.0 && c.is_finite()) || !y.is_finite()) {
        return Err(Error::invalid(format!("fit points need finite C > 0, got C = {c}")));
    }
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), (c, y)| {
        let x = 1.0 / c;
        (sxy + x * y, sxx + x * x)
    });
    let slope = sxy / sxx;
    let ss: f64 = points.iter().map(|(c, y)| (y - slope / c).powi(2)).sum();
    Ok(FitResult { slope, residual_rms: (ss / points.len() as f64).sqrt(), points_used: points.len() })
}

/// Parameters the optimizer may move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParam {
    Delta,
    Nu,
    DeltaCap,
    Omega,
    OmegaM,
}

impl FreeParam {
    pub fn name(self) -> &'static str {
        match self {
            FreeParam::Delta => "delta",
            FreeParam::Nu => "nu",
            FreeParam::DeltaCap => "delta_cap",
            FreeParam::Omega => "omega",
            FreeParam::OmegaM => "omega_m",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [FreeParam::Delta, FreeParam::Nu, FreeParam::DeltaCap, FreeParam::Omega, FreeParam::OmegaM]
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("free: unknown parameter {s:?}")))
    }

    pub fn get(self, p: &PhysicalParams) -> f64 {
        match self {
            FreeParam::Delta => p.delta,
            FreeParam::Nu => p.nu,
            FreeParam::DeltaCap => p.delta_cap,
            FreeParam::Omega => p.omega,
            FreeParam::OmegaM => p.omega_m,
        }
    }

    pub fn set(self, p: &mut PhysicalParams, v: f64) {
        match self {
            FreeParam::Delta => p.delta = v,
            FreeParam::Nu => p.nu = v,
            FreeParam::DeltaCap => p.delta_cap = v,
            FreeParam::Omega => p.omega = v,
            FreeParam::OmegaM => p.omega_m = v,
        }
    }

    /// `[0.05, 0.6]` for δ and ν, ±50% of the base value otherwise.
    pub fn default_bounds(self, base: &PhysicalParams) -> (f64, f64) {
        match self {
            FreeParam::Delta | FreeParam::Nu => (0.05, 0.6),
            _ => {
                let v = self.get(base);
                let (a, b) = (0.5 * v, 1.5 * v);
                (a.min(b), a.max(b))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// Closed-form estimate.
    Analytic { formulas: RateFormulas },
    /// Steady state of the numerically reduced 4-level model.
    EffectiveModel,
    /// Steady state of the full master equation.
    Full { truncation: Truncation },
}

impl Objective {
    pub fn analytic() -> Self {
        Objective::Analytic { formulas: RateFormulas::BCorrected }
    }
}

/// Target fidelity of `p` under the chosen objective.
pub fn objective_fidelity(p: &PhysicalParams, target: Target, objective: Objective) -> Result<f64> {
    match objective {
        Objective::Analytic { formulas } => Ok(estimate_infidelity_with(p, target, formulas)?.fidelity()),
        Objective::EffectiveModel => {
            let gen = reduce_params(p)?.generator(false)?;
            let ss = steady_state(&gen, &SteadyOptions::default())?;
            Ok(ss.rho.matrix()[(target.index(), target.index())].re)
        }
        Objective::Full { truncation } => steady_fidelities(p, truncation).map(|(s, t)| match target {
            Target::S => s,
            Target::T => t,
        }),
    }
}

/// Steady `(F_S, F_T)` of the full model.
pub fn steady_fidelities(p: &PhysicalParams, truncation: Truncation) -> Result<(f64, f64)> {
    let m = FullModel::build(p, truncation)?;
    let gen = crate::dynamics::LindbladGenerator::new(m.parts.total(), m.collapse_ops())?;
    let ss = steady_state(&gen, &SteadyOptions::default())?;
    let pops = atomic_populations(&ss.rho, &m.space, &m.layout)?;
    Ok((pops.ps, pops.pt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Per-parameter bounds; missing entries use [`FreeParam::default_bounds`].
    pub bounds: Vec<(FreeParam, f64, f64)>,
    pub seed: u64,
    /// Jittered restarts after the first run.
    pub restarts: usize,
    pub max_iters: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { bounds: Vec::new(), seed: 0, restarts: 3, max_iters: 400 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizeResult {
    pub params: PhysicalParams,
    pub fidelity: f64,
    pub evaluations: usize,
}

struct Bounded<'a> {
    base: &'a PhysicalParams,
    free: &'a [FreeParam],
    bounds: &'a [(f64, f64)],
    target: Target,
    objective: Objective,
    calls: &'a AtomicUsize,
}

impl Bounded<'_> {
    fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect()
    }

    fn params(&self, x: &[f64]) -> PhysicalParams {
        let mut p = self.base.clone();
        for (f, v) in self.free.iter().zip(self.clamp(x)) {
            f.set(&mut p, v);
        }
        p
    }
}

impl CostFunction for Bounded<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        // evaluate at the projection, push the simplex back inside the box
        let outside: f64 = x
            .iter()
            .zip(self.bounds)
            .map(|(v, (lo, hi))| ((lo - v).max(0.0) + (v - hi).max(0.0)) / (hi - lo))
            .sum();
        self.calls.fetch_add(1, Ordering::Relaxed);
        let f = objective_fidelity(&self.params(x), self.target, self.objective)
            .map_err(|e| argmin::core::Error::msg(e.to_string()))?;
        Ok(1.0 - f + outside)
    }
}

/// Bounded Nelder-Mead on `1 − F`, restarted from jittered copies of the best
/// point. Deterministic for a given seed.
pub fn optimize_fidelity(
    p_base: &PhysicalParams,
    free: &[FreeParam],
    target: Target,
    objective: Objective,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    if free.is_empty() {
        let fidelity = objective_fidelity(p_base, target, objective)?;
        return Ok(OptimizeResult { params: p_base.clone(), fidelity, evaluations: 1 });
    }
    for (i, f) in free.iter().enumerate() {
        if free[..i].contains(f) {
            return Err(Error::invalid(format!("free: {} listed twice", f.name())));
        }
    }
    let bounds: Vec<(f64, f64)> = free
        .iter()
        .map(|f| {
            opts.bounds
                .iter()
                .find(|(g, _, _)| g == f)
                .map(|&(_, lo, hi)| (lo, hi))
                .unwrap_or_else(|| f.default_bounds(p_base))
        })
        .collect();
    for (f, (lo, hi)) in free.iter().zip(&bounds) {
        let v = f.get(p_base);
        if !(lo < hi) {
            return Err(Error::invalid(format!("bounds: empty interval for {}", f.name())));
        }
        if v < *lo || v > *hi {
            return Err(Error::invalid(format!("{}: base value {v} outside bounds [{lo}, {hi}]", f.name())));
        }
    }
    let calls = AtomicUsize::new(0);
    let problem = Bounded { base: p_base, free, bounds: &bounds, target, objective, calls: &calls };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Vec<f64> = free.iter().map(|f| f.get(p_base)).collect();
    let mut best_cost = problem.cost(&best).map_err(|e| Error::numerical(e.to_string()))?;
    for round in 0..=opts.restarts {
        let start: Vec<f64> = if round == 0 {
            best.clone()
        } else {
            best.iter()
                .zip(&bounds)
                .map(|(v, (lo, hi))| (v + 0.1 * (hi - lo) * rng.random_range(-1.0..1.0)).clamp(*lo, *hi))
                .collect()
        };
        let mut simplex = vec![start.clone()];
        for (i, (lo, hi)) in bounds.iter().enumerate() {
            let mut v = start.clone();
            let step = 0.1 * (hi - lo);
            v[i] = if v[i] + step <= *hi { v[i] + step } else { v[i] - step };
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-12)
            .map_err(|e| Error::numerical(e.to_string()))?;
        let problem = Bounded { base: p_base, free, bounds: &bounds, target, objective, calls: &calls };
        let res = Executor::new(problem, solver)
            .configure(|s| s.max_iters(opts.max_iters))
            .timer(false)
            .run()
            .map_err(|e| Error::numerical(format!("optimizer: {e}")))?;
        let state = res.state();
        if let Some(x) = state.get_best_param() {
            let x = problem_clamp(&bounds, x);
            let c = state.get_best_cost();
            if c < best_cost {
                best_cost = c;
                best = x;
            }
        }
    }
    let params = problem.params(&best);
    let fidelity = objective_fidelity(&params, target, objective)?;
    Ok(OptimizeResult { params, fidelity, evaluations: calls.into_inner() + 1 })
}

fn problem_clamp(bounds: &[(f64, f64)], x: &[f64]) -> Vec<f64> {
    x.iter().zip(bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect()
}

/// One named sweep axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Axis { name: name.into(), values }
    }

    /// `n` evenly spaced points on `[a, b]`.
    pub fn linspace(name: impl Into<String>, a: f64, b: f64, n: usize) -> Self {
        let values = match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        };
        Axis::new(name, values)
    }
}

/// What an evaluator returns for one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct CellValue {
    pub fidelity_s: f64,
    pub fidelity_t: f64,
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub coords: Vec<f64>,
    pub fidelity_s: Option<f64>,
    pub fidelity_t: Option<f64>,
    pub method: String,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub axes: Vec<Axis>,
    /// Row-major over `axes` (last axis fastest).
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    /// `axis1,axis2,...,F_S,F_T,method,seconds`; failed cells carry `nan`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header: Vec<&str> = self.axes.iter().map(|a| a.name.as_str()).collect();
        header.extend(["F_S", "F_T", "method", "seconds"]);
        writeln!(w, "{}", header.join(","))?;
        for c in &self.cells {
            let mut row: Vec<String> = c.coords.iter().map(|&x| sig12(x)).collect();
            row.push(c.fidelity_s.map_or("nan".into(), sig12));
            row.push(c.fidelity_t.map_or("nan".into(), sig12));
            row.push(c.method.clone());
            row.push(format!("{:.3}", c.seconds));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Cells as `(x, F_S)` along a one-axis sweep, skipping failures.
    pub fn curve_s(&self) -> Vec<(f64, f64)> {
        self.cells.iter().filter_map(|c| Some((c.coords[0], c.fidelity_s?))).collect()
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

/// Evaluates every grid point, on up to `jobs` threads. Cells come back in
/// row-major order whatever the thread count; failures stay in their cell.
pub fn sweep_grid<F>(axes: &[Axis], evaluator: F, jobs: usize) -> Result<SweepTable>
where
    F: Fn(&[f64]) -> Result<CellValue> + Sync,
{
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let coords = |mut k: usize| -> Vec<f64> {
        let mut out = vec![0.0; axes.len()];
        for (d, a) in axes.iter().enumerate().rev() {
            out[d] = a.values[k % a.values.len()];
            k /= a.values.len();
        }
        out
    };
    let run = |k: usize| -> SweepCell {
        let x = coords(k);
        let (r, seconds) = timed(|| evaluator(&x));
        match r {
            Ok(v) => SweepCell {
                coords: x,
                fidelity_s: Some(v.fidelity_s),
                fidelity_t: Some(v.fidelity_t),
                method: v.method,
                seconds,
                error: None,
            },
            Err(e) => SweepCell {
                coords: x,
                fidelity_s: None,
                fidelity_t: None,
                method: "failed".into(),
                seconds,
                error: Some(e.to_string()),
            },
        }
    };
    let cells = run_cells(total, jobs.max(1), &run)?;
    Ok(SweepTable { axes: axes.to_vec(), cells })
}

#[cfg(not(target_arch = "wasm32"))]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = std::time::Instant::now();
    let r = f();
    (r, t0.elapsed().as_secs_f64())
}

// no monotonic clock on wasm32-unknown-unknown
#[cfg(target_arch = "wasm32")]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    (f(), 0.0)
}

#[cfg(feature = "parallel")]
fn run_cells<F: Fn(usize) -> SweepCell + Sync>(total: usize, jobs: usize, run: &F) -> Result<Vec<SweepCell>> {
    use rayon::prelude::*;
    if jobs == 1 {
        return Ok((0..total).map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("jobs: cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..total).into_par_iter().map(run).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_cells<F: Fn(usize) -> SweepCell + Sync>(total: usize, _jobs: usize, run: &F) -> Result<Vec<SweepCell>> {
    Ok((0..total).map(run).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Dip {
    /// Refined location.
    pub x: f64,
    /// Refined minimum value.
    pub value: f64,
    pub prominence: f64,
    /// Index of the sampled minimum.
    pub index: usize,
}

pub const DEFAULT_PROMINENCE: f64 = 0.01;

/// Local minima with at least `prominence`, refined by a three-point parabola,
/// sorted by `x`.
///
/// Prominence is measured as for peaks of `−y`: the lower of the two highest
/// points between the minimum and the nearest strictly lower sample (or the
/// curve end) on each side, minus the minimum.
pub fn find_dips(curve: &[(f64, f64)], prominence: f64) -> Result<Vec<Dip>> {
    if curve.len() < 5 {
        return Err(Error::invalid(format!("dip search needs at least 5 points, got {}", curve.len())));
    }
    if curve.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::invalid("dip search needs strictly increasing x"));
    }
    if curve.iter().any(|(_, y)| !y.is_finite()) {
        return Err(Error::invalid("dip search needs finite values"));
    }
    let y: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let n = y.len();
    let mut dips = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if !(y[i] < y[i - 1]) {
            i += 1;
            continue;
        }
        // plateau of equal minima: take its middle
        let mut j = i;
        while j + 1 < n && y[j + 1] == y[i] {
            j += 1;
        }
        if j + 1 >= n || !(y[j + 1] > y[i]) {
            i = j + 1;
            continue;
        }
        let m = (i + j) / 2;
        let mut left = y[i];
        for k in (0..i).rev() {
            if y[k] < y[i] {
                break;
            }
            left = left.max(y[k]);
        }
        let mut right = y[i];
        for &v in &y[j + 1..] {
            if v < y[i] {
                break;
            }
            right = right.max(v);
        }
        let prom = left.min(right) - y[i];
        if prom >= prominence {
            let (x, value) = parabolic_vertex(curve, m);
            dips.push(Dip { x, value, prominence: prom, index: m });
        }
        i = j + 1;
    }
    Ok(dips)
}

fn parabolic_vertex(curve: &[(f64, f64)], m: usize) -> (f64, f64) {
    let (x0, y0) = curve[m - 1];
    let (x1, y1) = curve[m];
    let (x2, y2) = curve[m + 1];
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if !(a > 0.0) {
        return (x1, y1);
    }
    let b = d01 - a * (x0 + x1);
    let xv = (-b / (2.0 * a)).clamp(x0, x2);
    let c = y1 - a * x1 * x1 - b * x1;
    (xv, a * xv * xv + b * xv + c)
}

/// The dip with the largest prominence.
pub fn dominant_dip(dips: &[Dip]) -> Option<Dip> {
    dips.iter().copied().max_by(|a, b| a.prominence.total_cmp(&b.prominence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fig3() -> PhysicalParams {
        PhysicalParams::fig3(0.0)
    }

    #[test]
    fn estimate_at_the_preset() {
        let s = estimate_infidelity(&fig3(), Target::S).unwrap();
        assert!((0.03..=0.12).contains(&s.infidelity), "{}", s.infidelity);
        assert!((s.infidelity - 14.5 / 150.0).abs() / (14.5 / 150.0) <= 0.35);
        assert_relative_eq!(s.infidelity, 3.0 * s.p00_share, max_relative = 1e-15);
        let t = estimate_infidelity(&fig3(), Target::T).unwrap();
        assert!(t.infidelity > s.infidelity);
    }

    #[test]
    fn leak_floor_without_atomic_decay() {
        let p = PhysicalParams { gamma0: 0.0, gamma1: 0.0, ..fig3() };
        let r = analytic_rates(&p, RateFormulas::BCorrected).unwrap();
        let s = estimate_infidelity(&p, Target::S).unwrap();
        assert_relative_eq!(s.infidelity, 3.0 * r.kappa_c1_2 / r.kappa_c1_1, max_relative = 1e-14);
    }

    #[test]
    fn estimate_needs_a_pump() {
        let p = PhysicalParams { omega: 0.0, ..fig3() };
        assert!(matches!(estimate_infidelity(&p, Target::S), Err(Error::Numerical(_))));
    }

    #[test]
    fn fit_examples() {
        let f = fit_inverse_c(&[(100.0, 0.145), (200.0, 0.0725)]).unwrap();
        assert_relative_eq!(f.slope, 14.5, max_relative = 1e-12);
        assert!(f.residual_rms < 1e-15);
        assert_eq!(f.points_used, 2);
        let f = fit_inverse_c(&[(100.0, 0.275), (200.0, 0.1375)]).unwrap();
        assert_relative_eq!(f.slope, 27.5, max_relative = 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_inverse_c(&[(100.0, 0.1)]).is_err());
        assert!(fit_inverse_c(&[(0.0, 0.1), (10.0, 0.2)]).is_err());
        assert!(fit_inverse_c(&[(-1.0, 0.1), (10.0, 0.2)]).is_err());
    }

    proptest! {
        #[test]
        fn fit_recovers_exact_slopes(a in 0.1f64..100.0, cs in proptest::collection::vec(1.0f64..1000.0, 2..10)) {
            let pts: Vec<(f64, f64)> = cs.iter().map(|&c| (c, a / c)).collect();
            let f = fit_inverse_c(&pts).unwrap();
            prop_assert!((f.slope - a).abs() <= 1e-12 * a);
        }

        #[test]
        fn sweeps_are_ordered_and_thread_independent(nx in 1usize..5, ny in 1usize..5, jobs in 1usize..4) {
            let axes = [Axis::linspace("x", 0.0, 1.0, nx), Axis::linspace("y", -1.0, 1.0, ny)];
            let eval = |x: &[f64]| -> Result<CellValue> {
                if x[0] > 0.9 && x[1] > 0.9 {
                    return Err(Error::numerical("corner"));
                }
                Ok(CellValue { fidelity_s: (x[0] * 3.1).sin() + x[1], fidelity_t: x[0] * x[1], method: "test".into() })
            };
            let serial = sweep_grid(&axes, eval, 1).unwrap();
            let parallel = sweep_grid(&axes, eval, jobs).unwrap();
            prop_assert_eq!(serial.cells.len(), nx * ny);
            for (a, b) in serial.cells.iter().zip(&parallel.cells) {
                prop_assert_eq!(&a.coords, &b.coords);
                prop_assert_eq!(a.fidelity_s.map(f64::to_bits), b.fidelity_s.map(f64::to_bits));
                prop_assert_eq!(a.fidelity_t.map(f64::to_bits), b.fidelity_t.map(f64::to_bits));
                prop_assert_eq!(&a.error, &b.error);
            }
        }
    }

    #[test]
    fn grid_order_is_row_major() {
        let axes = [Axis::new("a", vec![1.0, 2.0, 3.0]), Axis::new("b", vec![10.0, 20.0, 30.0, 40.0])];
        let t = sweep_grid(&axes, |x| Ok(CellValue { fidelity_s: x[0], fidelity_t: x[1], method: "m".into() }), 2).unwrap();
        assert_eq!(t.cells.len(), 12);
        assert_eq!(t.cells[0].coords, vec![1.0, 10.0]);
        assert_eq!(t.cells[1].coords, vec![1.0, 20.0]);
        assert_eq!(t.cells[4].coords, vec![2.0, 10.0]);
        assert_eq!(t.cells[11].coords, vec![3.0, 40.0]);
    }

    #[test]
    fn single_cell_matches_direct_call() {
        let p = fig3();
        let t = sweep_grid(
            &[Axis::new("omega", vec![p.omega])],
            |x| {
                let q = PhysicalParams { omega: x[0], ..fig3() };
                Ok(CellValue {
                    fidelity_s: estimate_infidelity(&q, Target::S)?.fidelity(),
                    fidelity_t: estimate_infidelity(&q, Target::T)?.fidelity(),
                    method: "analytic".into(),
                })
            },
            1,
        )
        .unwrap();
        assert_eq!(t.cells[0].fidelity_s, Some(estimate_infidelity(&p, Target::S).unwrap().fidelity()));
    }

    #[test]
    fn failures_stay_in_their_cell() {
        let t = sweep_grid(
            &[Axis::new("x", vec![0.0, 1.0, 2.0])],
            |x| {
                if x[0] == 1.0 {
                    Err(Error::numerical("boom"))
                } else {
                    Ok(CellValue { fidelity_s: 0.5, fidelity_t: 0.5, method: "m".into() })
                }
            },
            1,
        )
        .unwrap();
        assert_eq!(t.failures(), 1);
        assert!(t.cells[1].error.as_deref().unwrap().contains("boom"));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,F_S,F_T,method,seconds\n"));
        assert_eq!(text.lines().nth(2).unwrap().split(',').nth(1), Some("nan"));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let eval = |_: &[f64]| -> Result<CellValue> { unreachable!() };
        assert!(sweep_grid(&[], eval, 1).is_err());
        assert!(sweep_grid(&[Axis::new("x", vec![])], eval, 1).is_err());
    }

    fn v_curve(center: f64) -> Vec<(f64, f64)> {
        (0..41).map(|i| {
            let x = -1.0 + 0.05 * i as f64;
            (x, 0.9 - 0.2 * (1.0 - (x - center).abs()).max(0.0).powi(8))
        })
        .collect()
    }

    #[test]
    fn v_shaped_dip_is_found() {
        let curve: Vec<(f64, f64)> = (0..41).map(|i| {
            let x = -1.0 + 0.05 * i as f64;
            (x, 0.5 + (x + 0.64).abs())
        })
        .collect();
        let dips = find_dips(&curve, DEFAULT_PROMINENCE).unwrap();
        assert_eq!(dips.len(), 1);
        assert!((dips[0].x + 0.64).abs() <= 0.025, "{}", dips[0].x);
    }

    #[test]
    fn parabola_is_refined_exactly() {
        let curve: Vec<(f64, f64)> = (0..11).map(|i| {
            let x = i as f64 * 0.1;
            (x, (x - 0.537).powi(2))
        })
        .collect();
        let d = find_dips(&curve, 1e-3).unwrap();
        assert_relative_eq!(d[0].x, 0.537, epsilon = 1e-12);
        assert!(d[0].value.abs() < 1e-12);
    }

    #[test]
    fn monotone_curves_have_no_dips() {
        let up: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, i as f64 * 0.1)).collect();
        assert!(find_dips(&up, DEFAULT_PROMINENCE).unwrap().is_empty());
        let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 0.9)).collect();
        assert!(find_dips(&flat, DEFAULT_PROMINENCE).unwrap().is_empty());
    }

    #[test]
    fn shallow_wiggles_are_ignored() {
        let curve: Vec<(f64, f64)> = (0..41).map(|i| {
            let x = i as f64 * 0.05;
            (x, 0.9 + 0.004 * (20.0 * x).sin())
        })
        .collect();
        assert!(find_dips(&curve, DEFAULT_PROMINENCE).unwrap().is_empty());
    }

    #[test]
    fn symmetric_dips_come_in_pairs() {
        let curve: Vec<(f64, f64)> = (0..41).map(|i| {
            let x = -1.0 + 0.05 * i as f64;
            (x, 0.9 - 0.1 * (-((x.abs() - 0.54) / 0.05).powi(2)).exp())
        })
        .collect();
        let d = find_dips(&curve, DEFAULT_PROMINENCE).unwrap();
        assert_eq!(d.len(), 2);
        assert_relative_eq!(d[0].x, -d[1].x, epsilon = 1e-12);
        assert!((d[1].x - 0.54).abs() < 0.025);
        assert_eq!(dominant_dip(&v_curve_dips()).unwrap().index, 8);
    }

    fn v_curve_dips() -> Vec<Dip> {
        find_dips(&v_curve(-0.6), DEFAULT_PROMINENCE).unwrap()
    }

    #[test]
    fn dip_input_checks() {
        assert!(find_dips(&[(0.0, 1.0), (1.0, 0.0), (2.0, 1.0)], 0.01).is_err());
        let unsorted: Vec<(f64, f64)> = (0..6).map(|i| ((5 - i) as f64, 0.0)).collect();
        assert!(find_dips(&unsorted, 0.01).is_err());
    }

    #[test]
    fn frozen_optimization_returns_the_base() {
        let r = optimize_fidelity(&fig3(), &[], Target::S, Objective::analytic(), &OptimizeOptions::default()).unwrap();
        assert_eq!(r.params, fig3());
        assert_eq!(r.fidelity, estimate_infidelity(&fig3(), Target::S).unwrap().fidelity());
    }

    #[test]
    fn optimizer_rejects_bad_requests() {
        let opts = OptimizeOptions { bounds: vec![(FreeParam::Delta, 0.5, 0.6)], ..Default::default() };
        let e = optimize_fidelity(&fig3(), &[FreeParam::Delta], Target::S, Objective::analytic(), &opts);
        assert!(matches!(e, Err(Error::Invalid(m)) if m.contains("delta")));
        let e = optimize_fidelity(&fig3(), &[FreeParam::Nu, FreeParam::Nu], Target::S, Objective::analytic(), &Default::default());
        assert!(e.is_err());
        assert!(FreeParam::parse("kappa").is_err());
        assert_eq!(FreeParam::parse("omega_m").unwrap(), FreeParam::OmegaM);
    }

    #[test]
    fn optimum_matches_a_grid_scan() {
        let p = fig3().with_cooperativity(150.0).unwrap();
        let opts = OptimizeOptions::default();
        let r = optimize_fidelity(&p, &[FreeParam::Delta, FreeParam::Nu], Target::S, Objective::analytic(), &opts).unwrap();
        assert!(r.evaluations > 10);
        let mut scan = 0.0f64;
        for i in 0..=200 {
            for j in 0..=200 {
                let q = PhysicalParams { delta: 0.05 + 0.55 * i as f64 / 200.0, nu: 0.05 + 0.55 * j as f64 / 200.0, ..p.clone() };
                if let Ok(e) = estimate_infidelity(&q, Target::S) {
                    scan = scan.max(e.fidelity());
                }
            }
        }
        assert!(r.fidelity >= scan - 1e-9, "{} < {scan}", r.fidelity);
        // the optimum sits next to the A = 0 resonance
        let a = analytic_rates(&r.params, RateFormulas::BCorrected).unwrap();
        assert!(a.a_coef.abs() <= 2e-3, "A = {}", a.a_coef);
        let preset_point = estimate_infidelity(&p, Target::S).unwrap().fidelity();
        assert!(r.fidelity >= preset_point);
        let again = optimize_fidelity(&p, &[FreeParam::Delta, FreeParam::Nu], Target::S, Objective::analytic(), &opts).unwrap();
        assert_eq!(again.params, r.params);
    }
}
