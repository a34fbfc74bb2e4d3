//! Lindblad generators, time integration, steady states and atomic observables.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::effective::{nonhermitian_hamiltonian, GroundManifold};
use crate::error::{Error, Result};
use crate::model::ModeLayout;
use crate::qspace::{hermitize, CompositeSpace, DensityMatrix, SparseOp, POSITIVITY_TOL};

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Default limit on materialized superoperator columns (`dim² ≤ 4·10⁴`).
pub const DEFAULT_CEILING: usize = 40_000;

/// Trace drift beyond which integration is abandoned.
pub const TRACE_ABORT: f64 = 1e-4;

/// `ρ̇ = −i[H, ρ] + Σ (LρL† − ½{L†L, ρ})`.
#[derive(Clone, Debug)]
pub struct LindbladGenerator {
    hamiltonian: SparseOp,
    collapse: Vec<SparseOp>,
}

impl LindbladGenerator {
    pub fn new(hamiltonian: SparseOp, collapse: Vec<SparseOp>) -> Result<Self> {
        let dim = hamiltonian.dim();
        if dim == 0 {
            return Err(Error::invalid("generator on an empty space"));
        }
        if let Some(l) = collapse.iter().find(|l| l.dim() != dim) {
            return Err(Error::invalid(format!(
                "collapse operator has dimension {}, Hamiltonian has {dim}",
                l.dim()
            )));
        }
        let herm = hamiltonian.hermiticity_error();
        if herm > 1e-12 {
            return Err(Error::invalid(format!("Hamiltonian is not Hermitian (error {herm:.3e})")));
        }
        Ok(LindbladGenerator { hamiltonian, collapse })
    }

    /// Generator of a 4-level model from dense blocks.
    pub fn from_dense(h: &DMatrix<C64>, collapse: &[DMatrix<C64>]) -> Result<Self> {
        LindbladGenerator::new(SparseOp::from_dense(h), collapse.iter().map(SparseOp::from_dense).collect())
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &SparseOp {
        &self.hamiltonian
    }

    pub fn collapse(&self) -> &[SparseOp] {
        &self.collapse
    }

    /// Applies the generator to an arbitrary (not necessarily Hermitian) matrix.
    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let h_nh = nonhermitian_hamiltonian(&self.hamiltonian, &self.collapse);
        let rho_dag = rho.adjoint();
        // −i H_nh ρ + i ρ H_nh†
        let mut out = h_nh.mul_dense(rho) * (-I) + (h_nh.mul_dense(&rho_dag)).adjoint() * I;
        for l in &self.collapse {
            // L ρ L† = L (L ρ†)†
            out += l.mul_dense(&l.mul_dense(&rho_dag).adjoint());
        }
        out
    }
}

/// Column-stacked superoperator: `vec(AXB) = (Bᵀ ⊗ A) vec(X)`.
pub fn liouvillian_matrix(gen: &LindbladGenerator, ceiling: usize) -> Result<SparseOp> {
    let n = gen.dim();
    let n2 = n
        .checked_mul(n)
        .filter(|&n2| n2 <= ceiling)
        .ok_or_else(|| {
            Error::invalid(format!(
                "superoperator for dim {n} exceeds the materialization ceiling of {ceiling} columns; use the matrix-free path"
            ))
        })?;
    let h_nh = nonhermitian_hamiltonian(&gen.hamiltonian, &gen.collapse);
    let mut t = Vec::new();
    // I ⊗ (−i H_nh)
    for (r, c, v) in h_nh.triplets() {
        for k in 0..n {
            t.push((k * n + r, k * n + c, -I * v));
        }
    }
    // (i conj(H_nh)) ⊗ I
    for (r, c, v) in h_nh.triplets() {
        let w = I * v.conj();
        for k in 0..n {
            t.push((r * n + k, c * n + k, w));
        }
    }
    // conj(L) ⊗ L
    for l in &gen.collapse {
        let lt: Vec<_> = l.triplets().collect();
        for &(r1, c1, v1) in &lt {
            for &(r2, c2, v2) in &lt {
                t.push((r1 * n + r2, c1 * n + c2, v1.conj() * v2));
            }
        }
    }
    Ok(SparseOp::from_triplets(n2, t))
}

/// Matrix-free right-hand side for Hermitian states, with reusable scratch.
struct HermitianRhs {
    h_nh: SparseOp,
    collapse: Vec<SparseOp>,
    collapse_triplets: Vec<Vec<(usize, usize, C64)>>,
    x: DMatrix<C64>,
    y: DMatrix<C64>,
}

impl HermitianRhs {
    fn new(gen: &LindbladGenerator) -> Self {
        let n = gen.dim();
        let blank = DMatrix::from_element(n, n, ZERO);
        let collapse: Vec<SparseOp> = gen.collapse.iter().filter(|l| !l.is_zero()).cloned().collect();
        HermitianRhs {
            h_nh: nonhermitian_hamiltonian(&gen.hamiltonian, &gen.collapse),
            collapse_triplets: collapse.iter().map(|l| l.triplets().collect()).collect(),
            collapse,
            x: blank.clone(),
            y: blank,
        }
    }

    /// `out = −iX + (−iX)† + Σ (Lρ)L†` with `X = H_nh ρ`; valid when `ρ = ρ†`.
    fn eval(&mut self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = rho.nrows();
        self.h_nh.mul_dense_into(rho, &mut self.x);
        {
            let xs = self.x.as_slice();
            let os = out.as_mut_slice();
            for c in 0..n {
                for r in 0..n {
                    os[c * n + r] = -I * xs[c * n + r] + I * xs[r * n + c].conj();
                }
            }
        }
        for (l, triplets) in self.collapse.iter().zip(&self.collapse_triplets) {
            l.mul_dense_into(rho, &mut self.y);
            let ys = self.y.as_slice();
            let os = out.as_mut_slice();
            // (Lρ)L† column c gains (Lρ)[:, k] conj(L[c, k])
            for &(c, k, v) in triplets {
                let v = v.conj();
                let src = &ys[k * n..(k + 1) * n];
                let dst = &mut os[c * n..(c + 1) * n];
                for (d, y) in dst.iter_mut().zip(src) {
                    *d += *y * v;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Integrator {
    /// Classical fixed-step fourth-order Runge-Kutta.
    Rk4,
    /// Dormand-Prince 5(4) with step-size control.
    Adaptive { rtol: f64, atol: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveOptions {
    pub dt: f64,
    pub method: Integrator,
    /// Record every `record_stride` steps of size `dt`.
    pub record_stride: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { dt: 0.02, method: Integrator::Rk4, record_stride: 500 }
    }
}

impl EvolveOptions {
    pub fn adaptive() -> Self {
        EvolveOptions { method: Integrator::Adaptive { rtol: 1e-8, atol: 1e-10 }, ..Default::default() }
    }
}

/// Ground-manifold populations of the two atoms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub p00: f64,
    pub ps: f64,
    pub pt: f64,
    pub p11: f64,
    /// Weight outside the four ground states.
    pub leak: f64,
}

impl Populations {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p00, self.ps, self.pt, self.p11]
    }
}

/// Maps a density matrix on some space onto the atomic ground-manifold populations.
#[derive(Clone, Debug)]
pub enum PopulationMap {
    /// Basis is already `{|00⟩, |S⟩, |T⟩, |11⟩}`.
    Ground,
    /// Full model: partial trace over the field.
    Full {
        /// `(i, j, a_i, a_j)` with `a = 3·atom1 + atom2` for every pair of
        /// basis states sharing a field configuration.
        pairs: Vec<(usize, usize, usize, usize)>,
    },
}

impl PopulationMap {
    pub fn full(space: &CompositeSpace, layout: &ModeLayout) -> Result<Self> {
        layout.check(space)?;
        let fields = layout.field_modes();
        let key = |i: usize| -> Vec<u16> { fields.iter().map(|&m| space.state(i)[m]).collect() };
        let mut groups: std::collections::BTreeMap<Vec<u16>, Vec<usize>> = Default::default();
        for i in 0..space.dim() {
            groups.entry(key(i)).or_default().push(i);
        }
        let atom = |i: usize| 3 * space.state(i)[layout.atom1] as usize + space.state(i)[layout.atom2] as usize;
        let mut pairs = Vec::new();
        for members in groups.values() {
            for &i in members {
                for &j in members {
                    pairs.push((i, j, atom(i), atom(j)));
                }
            }
        }
        Ok(PopulationMap::Full { pairs })
    }

    /// Two-atom reduced density matrix in the `3·a₁ + a₂` basis.
    pub fn reduced_atoms(&self, rho: &DMatrix<C64>) -> Option<DMatrix<C64>> {
        match self {
            PopulationMap::Ground => None,
            PopulationMap::Full { pairs } => {
                let mut r = DMatrix::from_element(9, 9, ZERO);
                for &(i, j, a, b) in pairs {
                    r[(a, b)] += rho[(i, j)];
                }
                Some(r)
            }
        }
    }

    pub fn populations(&self, rho: &DMatrix<C64>) -> Populations {
        let p = match self.reduced_atoms(rho) {
            None => {
                let d = |k: usize| if k < rho.nrows() { rho[(k, k)].re } else { 0.0 };
                [d(0), d(1), d(2), d(3)]
            }
            Some(r) => {
                let d = |k: usize| r[(k, k)].re;
                // |10⟩ is index 3, |01⟩ is index 1
                let cross = r[(3, 1)].re;
                [d(0), 0.5 * (d(3) + d(1)) - cross, 0.5 * (d(3) + d(1)) + cross, d(4)]
            }
        };
        let trace: f64 = rho.trace().re;
        Populations { p00: p[0], ps: p[1], pt: p[2], p11: p[3], leak: trace - p.iter().sum::<f64>() }
    }
}

/// Populations of a full-model state.
pub fn atomic_populations(rho: &DensityMatrix, space: &CompositeSpace, layout: &ModeLayout) -> Result<Populations> {
    Ok(PopulationMap::full(space, layout)?.populations(rho.matrix()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub populations: Populations,
    pub trace_err: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub final_state: DensityMatrix,
    pub final_min_eigenvalue: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectory always holds the initial record")
    }

    pub fn max_trace_err(&self) -> f64 {
        self.records.iter().map(|r| r.trace_err).fold(0.0, f64::max)
    }

    /// CSV with header `t,P00,PS,PT,P11,leak,trace_err`, 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,P00,PS,PT,P11,leak,trace_err")?;
        for r in &self.records {
            let p = &r.populations;
            let row = [r.t, p.p00, p.ps, p.pt, p.p11, p.leak, r.trace_err];
            let cells: Vec<String> = row.iter().map(|v| sig12(*v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Formats with 12 significant digits in scientific notation.
pub fn sig12(v: f64) -> String {
    format!("{v:.11e}")
}

fn check_state(rho: &DMatrix<C64>, t: f64) -> Result<f64> {
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::numerical(format!("state became non-finite at t = {t}")));
    }
    let err = (rho.trace().re - 1.0).abs();
    if err > TRACE_ABORT {
        return Err(Error::invariant(format!(
            "trace drift {err:.3e} at t = {t} exceeds {TRACE_ABORT:e}; step size too large for this generator"
        )));
    }
    Ok(err)
}

fn axpy_into(out: &mut DMatrix<C64>, base: &DMatrix<C64>, terms: &[(f64, &DMatrix<C64>)]) {
    out.copy_from(base);
    for (a, m) in terms {
        if *a != 0.0 {
            out.zip_apply(*m, |o, x| *o += x * *a);
        }
    }
}

/// Integrates the master equation from `rho0` up to `t_final`.
///
/// The first record is the initial state; further records are taken every
/// `record_stride · dt`, and the final time is always recorded.
pub fn evolve(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    t_final: f64,
    opts: &EvolveOptions,
    observer: &PopulationMap,
) -> Result<Trajectory> {
    if rho0.dim() != gen.dim() {
        return Err(Error::invalid(format!(
            "initial state has dimension {}, generator has {}",
            rho0.dim(),
            gen.dim()
        )));
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::invalid(format!("t_final must be positive, got {t_final}")));
    }
    if !(opts.dt > 0.0 && opts.dt.is_finite()) || opts.record_stride == 0 {
        return Err(Error::invalid("dt must be positive and record_stride at least 1"));
    }
    let mut rhs = HermitianRhs::new(gen);
    let mut rho = rho0.matrix().clone();
    let mut records = vec![Record { t: 0.0, populations: observer.populations(&rho), trace_err: check_state(&rho, 0.0)? }];
    let interval = opts.dt * opts.record_stride as f64;
    let n_samples = (t_final / interval).ceil().max(1.0) as usize;
    let mut steps = 0usize;
    let mut t = 0.0;
    let mut stepper = Stepper::new(gen.dim(), opts.method, opts.dt);
    for k in 1..=n_samples {
        let target = (k as f64 * interval).min(t_final);
        steps += stepper.advance(&mut rhs, &mut rho, t, target)?;
        t = target;
        let trace_err = check_state(&rho, t)?;
        records.push(Record { t, populations: observer.populations(&rho), trace_err });
    }
    let final_state = DensityMatrix::from_raw_hermitized(rho);
    let final_min_eigenvalue = final_state.min_eigenvalue();
    Ok(Trajectory { records, final_state, final_min_eigenvalue, steps })
}

const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Stepper {
    method: Integrator,
    dt: f64,
    /// Current adaptive step.
    h: f64,
    k: Vec<DMatrix<C64>>,
    stage: DMatrix<C64>,
    next: DMatrix<C64>,
}

impl Stepper {
    fn new(n: usize, method: Integrator, dt: f64) -> Self {
        let blank = DMatrix::from_element(n, n, ZERO);
        Stepper { method, dt, h: dt, k: vec![blank.clone(); 7], stage: blank.clone(), next: blank }
    }

    /// Advances `rho` from `t0` to `t1`; returns the number of accepted steps.
    fn advance(&mut self, rhs: &mut HermitianRhs, rho: &mut DMatrix<C64>, t0: f64, t1: f64) -> Result<usize> {
        match self.method {
            Integrator::Rk4 => {
                let n_steps = ((t1 - t0) / self.dt - 1e-9).ceil().max(1.0) as usize;
                let h = (t1 - t0) / n_steps as f64;
                for _ in 0..n_steps {
                    self.rk4_step(rhs, rho, h);
                }
                Ok(n_steps)
            }
            Integrator::Adaptive { rtol, atol } => self.dopri(rhs, rho, t0, t1, rtol, atol),
        }
    }

    fn rk4_step(&mut self, rhs: &mut HermitianRhs, rho: &mut DMatrix<C64>, h: f64) {
        let [k1, k2, k3, k4, ..] = &mut self.k[..] else { unreachable!() };
        rhs.eval(rho, k1);
        axpy_into(&mut self.stage, rho, &[(0.5 * h, k1)]);
        rhs.eval(&self.stage, k2);
        axpy_into(&mut self.stage, rho, &[(0.5 * h, k2)]);
        rhs.eval(&self.stage, k3);
        axpy_into(&mut self.stage, rho, &[(h, k3)]);
        rhs.eval(&self.stage, k4);
        let w = h / 6.0;
        rho.zip_apply(&*k1, |r, a| *r += a * w);
        rho.zip_apply(&*k2, |r, a| *r += a * (2.0 * w));
        rho.zip_apply(&*k3, |r, a| *r += a * (2.0 * w));
        rho.zip_apply(&*k4, |r, a| *r += a * w);
        hermitize(rho);
    }

    fn dopri(
        &mut self,
        rhs: &mut HermitianRhs,
        rho: &mut DMatrix<C64>,
        t0: f64,
        t1: f64,
        rtol: f64,
        atol: f64,
    ) -> Result<usize> {
        let mut t = t0;
        let mut accepted = 0;
        let mut rejected = 0usize;
        while t < t1 - 1e-12 * t1.abs().max(1.0) {
            let h = self.h.min(t1 - t);
            rhs.eval(rho, &mut self.k[0]);
            for s in 1..7 {
                let terms: Vec<(f64, &DMatrix<C64>)> = (0..s).map(|j| (h * DP_A[s][j], &self.k[j])).collect();
                axpy_into(&mut self.stage, rho, &terms);
                let (_, rest) = self.k.split_at_mut(s);
                rhs.eval(&self.stage, &mut rest[0]);
            }
            let t5: Vec<(f64, &DMatrix<C64>)> = (0..7).map(|j| (h * DP_B5[j], &self.k[j])).collect();
            axpy_into(&mut self.next, rho, &t5);
            let mut err = 0.0f64;
            for idx in 0..rho.len() {
                let mut e = ZERO;
                for j in 0..7 {
                    e += self.k[j][idx] * (h * (DP_B5[j] - DP_B4[j]));
                }
                let scale = atol + rtol * rho[idx].norm().max(self.next[idx].norm());
                err = err.max(e.norm() / scale);
            }
            if !err.is_finite() {
                return Err(Error::numerical(format!("adaptive step produced a non-finite error estimate at t = {t}")));
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t += h;
                rho.copy_from(&self.next);
                hermitize(rho);
                accepted += 1;
                self.h = h * factor;
            } else {
                rejected += 1;
                self.h = h * factor.min(1.0);
                if self.h < 1e-12 || rejected > 1_000_000 {
                    return Err(Error::numerical(format!("adaptive step size collapsed at t = {t}")));
                }
            }
        }
        Ok(accepted)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyMethod {
    NullSpace,
    LongTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyOptions {
    /// Forces a method; `None` picks the null-space solve when it fits under the ceiling.
    pub method: Option<SteadyMethod>,
    pub ceiling: usize,
    /// Step used by the long-time method.
    pub dt: f64,
    /// Convergence window of the long-time method.
    pub window: f64,
    /// Long-time stops when `max|ρ(t+w) − ρ(t)| / w` drops below this.
    pub tol_per_time: f64,
    pub t_max: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions {
            method: None,
            ceiling: DEFAULT_CEILING,
            dt: 0.05,
            window: 10.0,
            tol_per_time: 1e-9,
            t_max: 1e6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyStateResult {
    pub rho: DensityMatrix,
    /// `max |L(ρ)|`
    pub residual: f64,
    pub method: SteadyMethod,
}

pub const NULL_SPACE_RESIDUAL: f64 = 1e-8;
pub const LONG_TIME_RESIDUAL: f64 = 1e-6;

pub fn steady_state(gen: &LindbladGenerator, opts: &SteadyOptions) -> Result<SteadyStateResult> {
    if gen.collapse.iter().all(SparseOp::is_zero) {
        return Err(Error::invalid("steady state needs at least one nonzero collapse operator"));
    }
    let n = gen.dim();
    let method = opts.method.unwrap_or(if n * n <= opts.ceiling {
        SteadyMethod::NullSpace
    } else {
        SteadyMethod::LongTime
    });
    let (rho, limit) = match method {
        SteadyMethod::NullSpace => (null_space_state(gen, opts.ceiling)?, NULL_SPACE_RESIDUAL),
        SteadyMethod::LongTime => (long_time_state(gen, opts)?, LONG_TIME_RESIDUAL),
    };
    let residual = gen.apply(&rho).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if residual > limit {
        return Err(Error::numerical(format!(
            "steady-state residual {residual:.3e} exceeds {limit:e} ({method:?})"
        )));
    }
    let rho = DensityMatrix::new(rho)?;
    let min_eig = rho.min_eigenvalue();
    if min_eig < -POSITIVITY_TOL {
        return Err(Error::invariant(format!("steady state has negative eigenvalue {min_eig:.3e}")));
    }
    Ok(SteadyStateResult { rho, residual, method })
}

fn solve_with_trace_row(lv: &SparseOp, n: usize, row: usize) -> Result<DMatrix<C64>> {
    let n2 = n * n;
    let mut trip: Vec<Triplet<usize, usize, C64>> = lv
        .triplets()
        .filter(|&(r, _, _)| r != row)
        .map(|(r, c, v)| Triplet::new(r, c, v))
        .collect();
    trip.extend((0..n).map(|i| Triplet::new(row, i * (n + 1), C64::new(1.0, 0.0))));
    let a = SparseColMat::<usize, C64>::try_new_from_triplets(n2, n2, &trip)
        .map_err(|e| Error::numerical(format!("superoperator assembly failed: {e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::numerical(format!("sparse LU failed: {e:?}")))?;
    let mut b = Mat::<C64>::zeros(n2, 1);
    b[(row, 0)] = C64::new(1.0, 0.0);
    let x = lu.solve(&b);
    let mut rho = DMatrix::from_fn(n, n, |r, c| x[(r + n * c, 0)]);
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::numerical("steady-state solve returned non-finite values (singular superoperator)"));
    }
    hermitize(&mut rho);
    let tr = rho.trace();
    Ok(rho / tr)
}

fn null_space_state(gen: &LindbladGenerator, ceiling: usize) -> Result<DMatrix<C64>> {
    let n = gen.dim();
    let lv = liouvillian_matrix(gen, ceiling)?;
    let a = solve_with_trace_row(&lv, n, 0)?;
    if n == 1 {
        return Ok(a);
    }
    // A second choice of replaced row gives a different answer only when the
    // stationary manifold is degenerate.
    let b = solve_with_trace_row(&lv, n, n * n - 1)?;
    let gap = (&a - &b).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if gap > 1e-6 {
        return Err(Error::numerical(format!(
            "stationary manifold is degenerate (two trace-pinned solutions differ by {gap:.3e})"
        )));
    }
    Ok(a)
}

fn long_time_state(gen: &LindbladGenerator, opts: &SteadyOptions) -> Result<DMatrix<C64>> {
    let n = gen.dim();
    let mut rhs = HermitianRhs::new(gen);
    let mut stepper = Stepper::new(n, Integrator::Rk4, opts.dt);
    let mut rho = DMatrix::from_diagonal_element(n, n, C64::new(1.0 / n as f64, 0.0));
    let mut t = 0.0;
    while t < opts.t_max {
        let before = rho.clone();
        stepper.advance(&mut rhs, &mut rho, t, t + opts.window)?;
        t += opts.window;
        check_state(&rho, t)?;
        let change = (&rho - &before).iter().map(|z| z.norm()).fold(0.0, f64::max) / opts.window;
        if change <= opts.tol_per_time {
            return Ok(rho);
        }
    }
    Err(Error::numerical(format!("long-time evolution did not converge by t = {}", opts.t_max)))
}

/// Trace distance `½ ‖ρ − σ‖₁`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    a.trace_distance(b)
}

/// Haar-random unit vector in the 4-dim ground manifold, in the
/// `{|00⟩, |S⟩, |T⟩, |11⟩}` basis.
pub fn haar_ground_coefficients(seed: u64) -> DVector<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = DVector::from_iterator(
        4,
        (0..4).map(|_| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))),
    );
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

/// Seeded Haar-random pure state on the ground manifold, field in vacuum.
pub fn random_ground_state(manifold: &GroundManifold, seed: u64) -> Result<DensityMatrix> {
    DensityMatrix::pure(&manifold.embed(&haar_ground_coefficients(seed)))
}

/// `|ψ⟩⟨ψ|` for the ground-manifold component `k` (0 = |00⟩, 1 = |S⟩, 2 = |T⟩, 3 = |11⟩).
pub fn ground_basis_state(manifold: &GroundManifold, k: usize) -> Result<DensityMatrix> {
    if k >= 4 {
        return Err(Error::invalid(format!("ground-manifold index {k} out of range")));
    }
    DensityMatrix::pure(&manifold.basis()[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FullModel, PhysicalParams, Truncation};
    use crate::qspace::{local_operator, CompositeSpace, LocalOp, Subsystem};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn qubit_space() -> CompositeSpace {
        CompositeSpace::build(&[Subsystem::Mode { n_max: 1 }], None).unwrap()
    }

    fn damping(kappa: f64) -> LindbladGenerator {
        let s = qubit_space();
        let l = local_operator(&s, 0, LocalOp::Annihilate).unwrap().scale_re(kappa.sqrt());
        LindbladGenerator::new(SparseOp::zero(2), vec![l]).unwrap()
    }

    fn excited() -> DensityMatrix {
        DensityMatrix::pure(&DVector::from_vec(vec![c(0.0), c(1.0)])).unwrap()
    }

    fn random_matrix(n: usize, rng: &mut impl Rng) -> DMatrix<C64> {
        DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_generator(n: usize, rng: &mut impl Rng) -> LindbladGenerator {
        let h = random_matrix(n, rng);
        let h = (&h + h.adjoint()) * c(0.5);
        let ls = (0..2).map(|_| SparseOp::from_dense(&random_matrix(n, rng))).collect();
        LindbladGenerator::new(SparseOp::from_dense(&h), ls).unwrap()
    }

    #[test]
    fn damping_superoperator_on_excited_state() {
        let kappa = 0.3;
        let lv = liouvillian_matrix(&damping(kappa), DEFAULT_CEILING).unwrap();
        // vec(|1⟩⟨1|) has a one at index 1 + 2·1 = 3
        let col: Vec<C64> = (0..4).map(|r| lv.get(r, 3)).collect();
        assert_abs_diff_eq!(col[0].re, kappa, epsilon = 1e-15);
        assert_abs_diff_eq!(col[3].re, -kappa, epsilon = 1e-15);
        assert_eq!(col[1], ZERO);
        assert_eq!(col[2], ZERO);
    }

    #[test]
    fn zero_generator_zero_superoperator() {
        let gen = LindbladGenerator::new(SparseOp::zero(3), vec![]).unwrap();
        assert!(liouvillian_matrix(&gen, DEFAULT_CEILING).unwrap().is_zero());
    }

    #[test]
    fn superoperator_matches_matrix_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gen = random_generator(3, &mut rng);
        let lv = liouvillian_matrix(&gen, DEFAULT_CEILING).unwrap();
        for _ in 0..20 {
            let rho = random_matrix(3, &mut rng);
            let v = DMatrix::from_column_slice(9, 1, rho.as_slice());
            let lhs = lv.mul_dense(&v);
            let rhs = gen.apply(&rho);
            for k in 0..9 {
                assert!((lhs[(k, 0)] - rhs.as_slice()[k]).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_rhs_matches_general_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gen = random_generator(5, &mut rng);
        let mut rhs = HermitianRhs::new(&gen);
        let a = random_matrix(5, &mut rng);
        let rho = &a * a.adjoint();
        let mut out = DMatrix::from_element(5, 5, ZERO);
        rhs.eval(&rho, &mut out);
        let want = gen.apply(&rho);
        assert!((out - want).iter().all(|z| z.norm() <= 1e-12));
    }

    #[test]
    fn ceiling_is_enforced() {
        let gen = damping(1.0);
        let err = liouvillian_matrix(&gen, 3).unwrap_err().to_string();
        assert!(err.contains("matrix-free"));
    }

    #[test]
    fn amplitude_damping_decay() {
        let kappa = 0.5;
        let opts = EvolveOptions { dt: 0.01, method: Integrator::Rk4, record_stride: 100 };
        let traj = evolve(&damping(kappa), &excited(), 4.0, &opts, &PopulationMap::Ground).unwrap();
        for rec in &traj.records {
            let kt = kappa * rec.t;
            if [0.5, 1.0, 2.0].iter().any(|&x| (kt - x).abs() < 1e-9) {
                let p1 = traj_p1(rec);
                assert_abs_diff_eq!(p1, (-kt).exp(), epsilon = 1e-6);
            }
        }
        assert!(traj.max_trace_err() <= 1e-8 * (traj.steps as f64).sqrt());
    }

    // the 2-level test space stores P₁ in the second diagonal slot (`ps`)
    fn traj_p1(r: &Record) -> f64 {
        r.populations.ps
    }

    fn two_level_map() -> PopulationMap {
        PopulationMap::Ground
    }

    #[test]
    fn rabi_oscillation() {
        let omega = 0.3;
        let s = qubit_space();
        let sx = &local_operator(&s, 0, LocalOp::Annihilate).unwrap() + &local_operator(&s, 0, LocalOp::Create).unwrap();
        let gen = LindbladGenerator::new(sx.scale_re(omega / 2.0), vec![]).unwrap();
        let ground = DensityMatrix::pure(&DVector::from_vec(vec![c(1.0), c(0.0)])).unwrap();
        for method in [Integrator::Rk4, Integrator::Adaptive { rtol: 1e-10, atol: 1e-12 }] {
            let opts = EvolveOptions { dt: 0.01, method, record_stride: 50 };
            let traj = evolve(&gen, &ground, 20.0, &opts, &two_level_map()).unwrap();
            for rec in &traj.records {
                assert_abs_diff_eq!(traj_p1(rec), (omega * rec.t / 2.0).sin().powi(2), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn evolve_rejects_bad_input() {
        let gen = damping(1.0);
        let opts = EvolveOptions::default();
        assert!(evolve(&gen, &excited(), 0.0, &opts, &PopulationMap::Ground).is_err());
        let three = DensityMatrix::pure(&DVector::from_vec(vec![c(1.0), c(0.0), c(0.0)])).unwrap();
        assert!(evolve(&gen, &three, 1.0, &opts, &PopulationMap::Ground).is_err());
    }

    #[test]
    fn unstable_step_aborts() {
        let gen = damping(100.0);
        let opts = EvolveOptions { dt: 0.5, method: Integrator::Rk4, record_stride: 1 };
        let err = evolve(&gen, &excited(), 50.0, &opts, &PopulationMap::Ground).unwrap_err();
        assert!(matches!(err, Error::Invariant(_) | Error::Numerical(_)), "{err}");
    }

    #[test]
    fn damping_steady_state_is_ground() {
        let ss = steady_state(&damping(0.7), &SteadyOptions::default()).unwrap();
        assert_abs_diff_eq!(ss.rho.matrix()[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert!(ss.residual <= NULL_SPACE_RESIDUAL);
        assert_eq!(ss.method, SteadyMethod::NullSpace);
    }

    #[test]
    fn degenerate_steady_manifold_is_an_error() {
        // dephasing leaves every diagonal state stationary
        let s = qubit_space();
        let l = local_operator(&s, 0, LocalOp::Project(1)).unwrap();
        let gen = LindbladGenerator::new(SparseOp::zero(2), vec![l]).unwrap();
        assert!(steady_state(&gen, &SteadyOptions::default()).is_err());
        let none = LindbladGenerator::new(SparseOp::zero(2), vec![]).unwrap();
        assert!(steady_state(&none, &SteadyOptions::default()).is_err());
    }

    #[test]
    fn populations_of_simple_states() {
        let m = FullModel::build(&PhysicalParams::fig3(0.0), Truncation::capped(1)).unwrap();
        let map = PopulationMap::full(&m.space, &m.layout).unwrap();
        let ket = |a, b| DensityMatrix::pure(&m.space.ket(&[a, b, 0, 0, 0]).unwrap()).unwrap();
        let p = map.populations(ket(0, 0).matrix());
        assert_eq!((p.p00, p.ps, p.pt, p.p11, p.leak), (1.0, 0.0, 0.0, 0.0, 0.0));
        let p = map.populations(ket(1, 0).matrix());
        assert_abs_diff_eq!(p.ps, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.pt, 0.5, epsilon = 1e-15);
        let p = map.populations(ket(2, 0).matrix());
        assert_abs_diff_eq!(p.leak, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn populations_match_brute_force_partial_trace() {
        let m = FullModel::build(&PhysicalParams::fig3(0.0), Truncation::capped(2)).unwrap();
        let n = m.space.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(n, &mut rng);
        let mut rho = &a * a.adjoint();
        let tr = rho.trace();
        rho /= tr;
        let map = PopulationMap::full(&m.space, &m.layout).unwrap();
        let got = map.populations(&rho);

        // oracle: explicit sum over field configurations of ⟨B, f|ρ|B, f⟩
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let targets: [Vec<((usize, usize), f64)>; 4] = [
            vec![((0, 0), 1.0)],
            vec![((1, 0), r), ((0, 1), -r)],
            vec![((1, 0), r), ((0, 1), r)],
            vec![((1, 1), 1.0)],
        ];
        let mut fields = std::collections::BTreeSet::new();
        for i in 0..n {
            fields.insert(m.space.state(i)[2..].to_vec());
        }
        let mut want = [0.0; 4];
        for (b, terms) in targets.iter().enumerate() {
            for f in &fields {
                let mut v = DVector::from_element(n, ZERO);
                let mut any = false;
                for &((x, y), amp) in terms {
                    let mut lv = vec![x, y];
                    lv.extend(f.iter().map(|&q| q as usize));
                    if let Some(i) = m.space.index_of(&lv) {
                        v[i] = c(amp);
                        any = true;
                    }
                }
                if any {
                    want[b] += v.dotc(&(&rho * &v)).re;
                }
            }
        }
        for (g, w) in got.as_array().iter().zip(want) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-14);
        }
    }

    #[test]
    fn csv_layout() {
        let traj = evolve(&damping(1.0), &excited(), 1.0, &EvolveOptions { dt: 0.1, method: Integrator::Rk4, record_stride: 5 }, &PopulationMap::Ground).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,P00,PS,PT,P11,leak,trace_err");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 7);
        assert_eq!(row[0], "0.00000000000e0");
        assert_eq!(text.lines().count(), 1 + traj.records.len());
    }
}
