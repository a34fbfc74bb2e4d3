//! Truncated composite Hilbert spaces and a complex sparse-operator algebra.
//!
//! A [`CompositeSpace`] is an ordered tensor product of three-level atoms and
//! bosonic modes, optionally restricted to the states whose total excitation
//! (atomic `|2>` counts one, each photon counts one) stays under a cap.
//! Operators on it are [`SparseOp`]s in CSR form.
//!
//! Multi-factor operators must be built with [`embed_product`]: it applies
//! the local factors to each retained basis state directly, which equals the
//! uncapped product projected onto the retained basis. Multiplying already
//! projected operators is *not* equivalent when an intermediate state leaves
//! the capped basis (e.g. `b a†` on a one-excitation cap).

use std::collections::HashMap;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Largest uncapped product dimension we are willing to enumerate.
const MAX_PRODUCT_DIM: u64 = 50_000_000;

/// One tensor factor of a composite space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsystem {
    /// Three-level atom with levels `|0>`, `|1>`, `|2>`; only `|2>` carries excitation.
    Atom3,
    /// Bosonic mode truncated at `n_max` photons.
    Mode { n_max: usize },
}

impl Subsystem {
    pub fn local_dim(&self) -> usize {
        match *self {
            Subsystem::Atom3 => 3,
            Subsystem::Mode { n_max } => n_max + 1,
        }
    }

    pub fn excitation_weight(&self, level: usize) -> usize {
        match self {
            Subsystem::Atom3 => usize::from(level == 2),
            Subsystem::Mode { .. } => level,
        }
    }
}

/// Elementary single-subsystem operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocalOp {
    Annihilate,
    Create,
    /// `|i><j|`
    Transition(usize, usize),
    /// `|i><i|`
    Project(usize),
}

/// Dense matrix of a [`LocalOp`] on one subsystem.
pub fn local_matrix(sub: Subsystem, op: LocalOp) -> Result<DMatrix<C64>> {
    let d = sub.local_dim();
    let mut m = DMatrix::from_element(d, d, ZERO);
    match op {
        LocalOp::Annihilate | LocalOp::Create => {
            if sub == Subsystem::Atom3 {
                return Err(Error::invalid("ladder operator requested on a three-level atom"));
            }
            for n in 1..d {
                let amp = C64::new((n as f64).sqrt(), 0.0);
                if op == LocalOp::Annihilate {
                    m[(n - 1, n)] = amp;
                } else {
                    m[(n, n - 1)] = amp;
                }
            }
        }
        LocalOp::Transition(i, j) => {
            if i >= d || j >= d {
                return Err(Error::invalid(format!(
                    "transition |{i}><{j}| out of range for local dimension {d}"
                )));
            }
            m[(i, j)] = ONE;
        }
        LocalOp::Project(i) => {
            if i >= d {
                return Err(Error::invalid(format!(
                    "projector |{i}><{i}| out of range for local dimension {d}"
                )));
            }
            m[(i, i)] = ONE;
        }
    }
    Ok(m)
}

/// Ordered tensor product with an optional total-excitation cap.
///
/// Basis states are enumerated lexicographically with subsystem 0 varying
/// slowest, so two builds of the same space always agree.
#[derive(Clone, Debug)]
pub struct CompositeSpace {
    subsystems: Vec<Subsystem>,
    excitation_cap: Option<usize>,
    /// Flattened multi-indices, `subsystems.len()` entries per state.
    states: Vec<u16>,
    excitations: Vec<usize>,
    place: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl CompositeSpace {
    pub fn build(subsystems: &[Subsystem], excitation_cap: Option<usize>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::invalid("composite space needs at least one subsystem"));
        }
        for (k, s) in subsystems.iter().enumerate() {
            if let Subsystem::Mode { n_max } = s {
                if *n_max < 1 {
                    return Err(Error::invalid(format!("mode {k} has photon cap 0; need n_max >= 1")));
                }
                if *n_max > u16::MAX as usize - 1 {
                    return Err(Error::invalid(format!("mode {k} photon cap too large")));
                }
            }
        }
        let n = subsystems.len();
        let mut place = vec![1u64; n];
        let mut total: u64 = 1;
        for k in (0..n).rev() {
            place[k] = total;
            total = total
                .checked_mul(subsystems[k].local_dim() as u64)
                .filter(|&t| t <= MAX_PRODUCT_DIM)
                .ok_or_else(|| Error::invalid("uncapped product dimension too large to enumerate"))?;
        }

        let mut states = Vec::new();
        let mut excitations = Vec::new();
        let mut index = HashMap::new();
        let mut digits = vec![0u16; n];
        for code in 0..total {
            let mut rem = code;
            let mut weight = 0usize;
            for k in 0..n {
                let level = (rem / place[k]) as usize;
                rem %= place[k];
                digits[k] = level as u16;
                weight += subsystems[k].excitation_weight(level);
            }
            if excitation_cap.is_some_and(|cap| weight > cap) {
                continue;
            }
            index.insert(code, excitations.len());
            states.extend_from_slice(&digits);
            excitations.push(weight);
        }

        Ok(CompositeSpace {
            subsystems: subsystems.to_vec(),
            excitation_cap,
            states,
            excitations,
            place,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.excitations.len()
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn excitation_cap(&self) -> Option<usize> {
        self.excitation_cap
    }

    /// Multi-index of basis state `i`.
    pub fn state(&self, i: usize) -> &[u16] {
        let n = self.subsystems.len();
        &self.states[i * n..(i + 1) * n]
    }

    /// Total excitation of basis state `i`.
    pub fn excitation(&self, i: usize) -> usize {
        self.excitations[i]
    }

    /// Basis position of a multi-index, if it is retained.
    pub fn index_of(&self, levels: &[usize]) -> Option<usize> {
        if levels.len() != self.subsystems.len() {
            return None;
        }
        let mut code = 0u64;
        for (k, (&lv, sub)) in levels.iter().zip(&self.subsystems).enumerate() {
            if lv >= sub.local_dim() {
                return None;
            }
            code += lv as u64 * self.place[k];
        }
        self.index.get(&code).copied()
    }

    fn code_of(&self, levels: &[u16]) -> u64 {
        levels
            .iter()
            .zip(&self.place)
            .map(|(&lv, &p)| lv as u64 * p)
            .sum()
    }

    /// Basis vector for a multi-index.
    pub fn ket(&self, levels: &[usize]) -> Result<DVector<C64>> {
        let i = self
            .index_of(levels)
            .ok_or_else(|| Error::invalid(format!("state {levels:?} is not in the basis")))?;
        let mut v = DVector::from_element(self.dim(), ZERO);
        v[i] = ONE;
        Ok(v)
    }
}

/// Operator embedding of one local operator.
pub fn local_operator(space: &CompositeSpace, subsystem: usize, op: LocalOp) -> Result<SparseOp> {
    let sub = *space
        .subsystems
        .get(subsystem)
        .ok_or_else(|| Error::invalid(format!("subsystem index {subsystem} out of range")))?;
    embed_product(space, &[(subsystem, local_matrix(sub, op)?)])
}

/// Embeds a product of local matrices acting on distinct subsystems.
///
/// Each retained basis state is mapped through all factors at once and only
/// the images inside the retained basis are kept, so the result equals
/// `P M Pᵀ` with `M` the uncapped tensor product. An empty factor list gives
/// the identity.
pub fn embed_product(space: &CompositeSpace, factors: &[(usize, DMatrix<C64>)]) -> Result<SparseOp> {
    let n = space.subsystems.len();
    let mut seen = vec![false; n];
    for (s, m) in factors {
        let sub = space
            .subsystems
            .get(*s)
            .ok_or_else(|| Error::invalid(format!("subsystem index {s} out of range")))?;
        if std::mem::replace(&mut seen[*s], true) {
            return Err(Error::invalid(format!("subsystem {s} appears twice in product")));
        }
        let d = sub.local_dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::invalid(format!(
                "local factor on subsystem {s} is {}x{}, expected {d}x{d}",
                m.nrows(),
                m.ncols()
            )));
        }
    }

    let mut triplets = Vec::new();
    let mut frontier: Vec<(C64, Vec<u16>)> = Vec::new();
    let mut next = Vec::new();
    for col in 0..space.dim() {
        frontier.clear();
        frontier.push((ONE, space.state(col).to_vec()));
        for (s, m) in factors {
            next.clear();
            for (amp, levels) in &frontier {
                let src = levels[*s] as usize;
                for row in 0..m.nrows() {
                    let v = m[(row, src)];
                    if v != ZERO {
                        let mut img = levels.clone();
                        img[*s] = row as u16;
                        next.push((amp * v, img));
                    }
                }
            }
            std::mem::swap(&mut frontier, &mut next);
        }
        for (amp, levels) in &frontier {
            if let Some(&row) = space.index.get(&space.code_of(levels)) {
                triplets.push((row, col, *amp));
            }
        }
    }
    Ok(SparseOp::from_triplets(space.dim(), triplets))
}

/// Square complex sparse matrix in CSR form with no stored zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOp {
    pub fn zero(dim: usize) -> Self {
        SparseOp { dim, row_ptr: vec![0; dim + 1], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn identity(dim: usize) -> Self {
        SparseOp::from_triplets(dim, (0..dim).map(|i| (i, i, ONE)))
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    ///
    /// Panics if an index is out of range.
    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, C64)>) -> Self {
        let mut t: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(r, c, _) in &t {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside a {dim}x{dim} operator");
        }
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals = Vec::with_capacity(t.len());
        let mut k = 0;
        while k < t.len() {
            let (r, c, mut v) = t[k];
            k += 1;
            while k < t.len() && t[k].0 == r && t[k].1 == c {
                v += t[k].2;
                k += 1;
            }
            if v != ZERO {
                row_ptr[r + 1] += 1;
                cols.push(c);
                vals.push(v);
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseOp { dim, row_ptr, cols, vals }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "operator must be square");
        let dim = m.nrows();
        SparseOp::from_triplets(
            dim,
            (0..dim).flat_map(|r| (0..dim).map(move |c| (r, c))).map(|(r, c)| (r, c, m[(r, c)])),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    /// Row `r` as parallel slices of column indices and values.
    pub fn row(&self, r: usize) -> (&[usize], &[C64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn adjoint(&self) -> Self {
        SparseOp::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn scale(&self, s: C64) -> Self {
        SparseOp::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (r, c, v * s)))
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::from_element(self.dim, self.dim, ZERO);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// Largest entrywise modulus.
    pub fn norm_max(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max |A - B|` entrywise.
    pub fn max_abs_diff(&self, other: &SparseOp) -> f64 {
        (self - other).norm_max()
    }

    /// `max |A - A†|` entrywise.
    pub fn hermiticity_error(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    /// `out = self * x` for a dense column-major `x`.
    pub fn mul_dense_into(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        assert_eq!(x.nrows(), self.dim);
        assert_eq!(out.shape(), x.shape());
        let ncols = x.ncols();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for j in 0..ncols {
            let xc = &xs[j * self.dim..(j + 1) * self.dim];
            let oc = &mut os[j * self.dim..(j + 1) * self.dim];
            for (r, o) in oc.iter_mut().enumerate() {
                let mut acc = ZERO;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.vals[k] * xc[self.cols[k]];
                }
                *o = acc;
            }
        }
    }

    pub fn mul_dense(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::from_element(x.nrows(), x.ncols(), ZERO);
        self.mul_dense_into(x, &mut out);
        out
    }

    pub fn mul_vec(&self, v: &DVector<C64>) -> DVector<C64> {
        assert_eq!(v.len(), self.dim);
        DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &a)| a * v[c]).sum::<C64>()
            }),
        )
    }

    /// `<u|A|v>`
    pub fn matrix_element(&self, u: &DVector<C64>, v: &DVector<C64>) -> C64 {
        u.dotc(&self.mul_vec(v))
    }

    fn combine(&self, other: &SparseOp, sign: f64) -> SparseOp {
        assert_eq!(self.dim, other.dim, "operator dimensions differ");
        SparseOp::from_triplets(
            self.dim,
            self.triplets().chain(other.triplets().map(|(r, c, v)| (r, c, v * sign))),
        )
    }

    fn product(&self, other: &SparseOp) -> SparseOp {
        assert_eq!(self.dim, other.dim, "operator dimensions differ");
        let dim = self.dim;
        let mut acc = vec![ZERO; dim];
        let mut touched = vec![false; dim];
        let mut list = Vec::new();
        let mut triplets = Vec::new();
        for r in 0..dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let a = self.vals[k];
                let mid = self.cols[k];
                for kk in other.row_ptr[mid]..other.row_ptr[mid + 1] {
                    let c = other.cols[kk];
                    if !touched[c] {
                        touched[c] = true;
                        list.push(c);
                    }
                    acc[c] += a * other.vals[kk];
                }
            }
            for &c in &list {
                triplets.push((r, c, acc[c]));
                acc[c] = ZERO;
                touched[c] = false;
            }
            list.clear();
        }
        SparseOp::from_triplets(dim, triplets)
    }
}

impl Add for &SparseOp {
    type Output = SparseOp;
    fn add(self, rhs: &SparseOp) -> SparseOp {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &SparseOp {
    type Output = SparseOp;
    fn sub(self, rhs: &SparseOp) -> SparseOp {
        self.combine(rhs, -1.0)
    }
}

impl Mul for &SparseOp {
    type Output = SparseOp;
    fn mul(self, rhs: &SparseOp) -> SparseOp {
        self.product(rhs)
    }
}

/// Sum of operators; `dim` is needed for the empty case.
pub fn sum_ops<'a>(dim: usize, ops: impl IntoIterator<Item = &'a SparseOp>) -> SparseOp {
    SparseOp::from_triplets(dim, ops.into_iter().flat_map(|op| op.triplets()))
}

/// Dense density matrix with Hermiticity and trace checked on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(DMatrix<C64>);

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
pub const POSITIVITY_TOL: f64 = 1e-8;

impl DensityMatrix {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::invalid("density matrix must be square and nonempty"));
        }
        let rho = DensityMatrix(m);
        let herm = rho.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(Error::invariant(format!("density matrix not Hermitian (error {herm:.3e})")));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::invariant(format!("density matrix trace is {tr}")));
        }
        Ok(rho)
    }

    /// `|psi><psi|` after normalizing `psi`.
    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("state vector has zero or non-finite norm"));
        }
        let v = psi / C64::new(norm, 0.0);
        Ok(DensityMatrix(&v * v.adjoint()))
    }

    /// Wraps a matrix that is known to be a valid state up to rounding,
    /// symmetrizing it.
    pub(crate) fn from_raw_hermitized(mut m: DMatrix<C64>) -> Self {
        hermitize(&mut m);
        DensityMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        let m = &self.0;
        let n = m.nrows();
        let mut err = 0.0f64;
        for c in 0..n {
            for r in 0..=c {
                err = err.max((m[(r, c)] - m[(c, r)].conj()).norm());
            }
        }
        err
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `<psi|rho|psi>` for a normalized `psi`.
    pub fn population(&self, psi: &DVector<C64>) -> f64 {
        psi.dotc(&(&self.0 * psi)).re
    }

    /// `½ Σ |λ_k(ρ − σ)|`
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let diff = &self.0 - &other.0;
        0.5 * diff.symmetric_eigenvalues().iter().map(|l| l.abs()).sum::<f64>()
    }
}

/// `m ← (m + m†)/2`
pub fn hermitize(m: &mut DMatrix<C64>) {
    let n = m.nrows();
    for c in 0..n {
        m[(c, c)].im = 0.0;
        for r in 0..c {
            let avg = 0.5 * (m[(r, c)] + m[(c, r)].conj());
            m[(r, c)] = avg;
            m[(c, r)] = avg.conj();
        }
    }
}
