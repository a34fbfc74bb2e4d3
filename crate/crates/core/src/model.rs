//! Physical parameters, the model Hamiltonian, collapse operators and the
//! delocalized normal modes of the coupled cavity field.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qspace::{embed_product, local_matrix, local_operator, sum_ops, CompositeSpace, LocalOp, SparseOp, Subsystem};

/// Fig. 3 working point, in units of g.
pub mod fig3 {
    pub const OMEGA: f64 = 0.06;
    pub const OMEGA_M: f64 = 0.0138;
    pub const DELTA_CAP: f64 = 1.3;
    pub const DELTA: f64 = 0.2875;
    pub const NU: f64 = 0.4528;
    pub const KAPPA: f64 = 0.0577;
    pub const GAMMA: f64 = 0.1154;
}

fn unit_coupling() -> f64 {
    1.0
}

/// Model parameters in units of the atom-cavity coupling `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    #[serde(default = "unit_coupling")]
    pub g: f64,
    /// Drive amplitude Ω.
    pub omega: f64,
    /// Microwave amplitude Ω_M.
    pub omega_m: f64,
    /// Microwave phase θ_M.
    #[serde(default)]
    pub theta_m: f64,
    /// Drive detuning Δ.
    pub delta_cap: f64,
    /// Cavity detuning δ.
    pub delta: f64,
    /// Cavity-to-mediator coupling ν.
    pub nu: f64,
    pub kappa: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub n_mediating: usize,
    /// Δ_n for each mediating mode.
    pub mediating_detunings: Vec<f64>,
}

impl PhysicalParams {
    /// The Fig. 3 parameter set with one resonant mediating mode.
    pub fn fig3(theta_m: f64) -> Self {
        PhysicalParams {
            g: 1.0,
            omega: fig3::OMEGA,
            omega_m: fig3::OMEGA_M,
            theta_m,
            delta_cap: fig3::DELTA_CAP,
            delta: fig3::DELTA,
            nu: fig3::NU,
            kappa: fig3::KAPPA,
            gamma0: fig3::GAMMA / 2.0,
            gamma1: fig3::GAMMA / 2.0,
            n_mediating: 1,
            mediating_detunings: vec![0.0],
        }
    }

    /// Total atomic decay γ = γ₀ + γ₁.
    pub fn gamma(&self) -> f64 {
        self.gamma0 + self.gamma1
    }

    /// Places κ and γ on the `γ = 2κ` family at cooperativity `c`.
    pub fn with_cooperativity(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("cooperativity must be positive, got {c}")));
        }
        let kappa = self.g / (2.0 * c).sqrt();
        self.kappa = kappa;
        self.gamma0 = kappa;
        self.gamma1 = kappa;
        Ok(self)
    }

    /// Replaces the mediating modes by the figure-preset layout.
    pub fn with_layout(mut self, n: usize, delta_x: f64) -> Result<Self> {
        self.mediating_detunings = mediating_layout(n, delta_x)?;
        self.n_mediating = n;
        Ok(self)
    }

    /// Checks the hard invariants; returns weak-coupling warnings on success.
    ///
    /// Error messages start with the offending key.
    pub fn validate(&self) -> Result<Vec<String>> {
        let fields = [
            ("g", self.g),
            ("omega", self.omega),
            ("omega_m", self.omega_m),
            ("theta_m", self.theta_m),
            ("delta_cap", self.delta_cap),
            ("delta", self.delta),
            ("nu", self.nu),
            ("kappa", self.kappa),
            ("gamma0", self.gamma0),
            ("gamma1", self.gamma1),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name}: must be finite, got {v}")));
            }
        }
        if self.g <= 0.0 {
            return Err(Error::invalid(format!("g: must be positive, got {}", self.g)));
        }
        for (name, v) in [("kappa", self.kappa), ("gamma0", self.gamma0), ("gamma1", self.gamma1)] {
            if v < 0.0 {
                return Err(Error::invalid(format!("{name}: rate must be >= 0, got {v}")));
            }
        }
        if self.n_mediating == 0 {
            return Err(Error::invalid("n_mediating: need at least one mediating mode"));
        }
        if self.mediating_detunings.len() != self.n_mediating {
            return Err(Error::invalid(format!(
                "mediating_detunings: length {} does not match n_mediating = {}",
                self.mediating_detunings.len(),
                self.n_mediating
            )));
        }
        if let Some(d) = self.mediating_detunings.iter().find(|d| !d.is_finite()) {
            return Err(Error::invalid(format!("mediating_detunings: entry {d} is not finite")));
        }

        let mut warnings = Vec::new();
        let scale = [self.g, self.delta.abs(), self.nu, self.delta_cap.abs()]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let limit = 0.25 * scale;
        for (name, v) in [("kappa", self.kappa), ("gamma", self.gamma())] {
            if v > limit {
                warnings.push(format!(
                    "{name} = {v} exceeds 0.25*min(g, |delta|, nu, |delta_cap|) = {limit}; outside the weak-coupling regime"
                ));
            }
        }
        Ok(warnings)
    }
}

/// Mediating detunings used by the figure presets.
///
/// `N = 2` gives `{0, Δx}`; odd `N` gives `kΔx` for `k = -(N-1)/2 ..= (N-1)/2`.
pub fn mediating_layout(n: usize, delta_x: f64) -> Result<Vec<f64>> {
    match n {
        0 => Err(Error::invalid("n_mediating: need at least one mediating mode")),
        2 => Ok(vec![0.0, delta_x]),
        n if n % 2 == 1 => {
            let half = (n as i64 - 1) / 2;
            Ok((-half..=half).map(|k| k as f64 * delta_x).collect())
        }
        n => Err(Error::invalid(format!(
            "n_mediating: no symmetric layout for even N = {n} other than 2"
        ))),
    }
}

/// `C = g² / (κ γ)`.
pub fn cooperativity(p: &PhysicalParams) -> Result<f64> {
    let gamma = p.gamma();
    if p.kappa <= 0.0 || gamma <= 0.0 {
        return Err(Error::invalid("cooperativity needs kappa > 0 and gamma0 + gamma1 > 0"));
    }
    Ok(p.g * p.g / (p.kappa * gamma))
}

/// Subsystem positions inside the composite space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModeLayout {
    pub atom1: usize,
    pub atom2: usize,
    pub cavity1: usize,
    pub cavity2: usize,
    pub mediating: Vec<usize>,
}

impl ModeLayout {
    /// Atoms first, then the two cavities, then the mediating modes.
    pub fn standard(n_mediating: usize) -> Self {
        ModeLayout {
            atom1: 0,
            atom2: 1,
            cavity1: 2,
            cavity2: 3,
            mediating: (4..4 + n_mediating).collect(),
        }
    }

    pub fn atoms(&self) -> [usize; 2] {
        [self.atom1, self.atom2]
    }

    pub fn cavities(&self) -> [usize; 2] {
        [self.cavity1, self.cavity2]
    }

    /// Every field mode, cavities first.
    pub fn field_modes(&self) -> Vec<usize> {
        let mut v = vec![self.cavity1, self.cavity2];
        v.extend_from_slice(&self.mediating);
        v
    }

    pub fn check(&self, space: &CompositeSpace) -> Result<()> {
        let subs = space.subsystems();
        let mut all = vec![self.atom1, self.atom2];
        all.extend(self.field_modes());
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != all.len() {
            return Err(Error::invalid("layout indices are not distinct"));
        }
        if all.iter().any(|&i| i >= subs.len()) || all.len() != subs.len() {
            return Err(Error::invalid(format!(
                "layout covers {} subsystems but the space has {}",
                all.len(),
                subs.len()
            )));
        }
        for i in self.atoms() {
            if subs[i] != Subsystem::Atom3 {
                return Err(Error::invalid(format!("layout expects an atom at subsystem {i}")));
            }
        }
        for i in self.field_modes() {
            if !matches!(subs[i], Subsystem::Mode { .. }) {
                return Err(Error::invalid(format!("layout expects a mode at subsystem {i}")));
            }
        }
        Ok(())
    }
}

/// Hilbert-space truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub excitation_cap: Option<usize>,
    pub per_mode_cap: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation { excitation_cap: Some(2), per_mode_cap: 2 }
    }
}

impl Truncation {
    pub fn capped(cap: usize) -> Self {
        Truncation { excitation_cap: Some(cap), per_mode_cap: cap.max(1) }
    }
}

/// Composite space and layout for `n_mediating` mediating modes.
pub fn model_space(n_mediating: usize, trunc: Truncation) -> Result<(CompositeSpace, ModeLayout)> {
    let mut subs = vec![Subsystem::Atom3, Subsystem::Atom3];
    subs.extend(std::iter::repeat(Subsystem::Mode { n_max: trunc.per_mode_cap }).take(n_mediating + 2));
    let space = CompositeSpace::build(&subs, trunc.excitation_cap)?;
    Ok((space, ModeLayout::standard(n_mediating)))
}

/// `H_I = H₀ + H_g + V₊ + V₋`, kept in pieces.
#[derive(Clone, Debug)]
pub struct HamiltonianParts {
    pub h0: SparseOp,
    pub hg: SparseOp,
    pub v_plus: SparseOp,
    pub v_minus: SparseOp,
}

impl HamiltonianParts {
    pub fn total(&self) -> SparseOp {
        sum_ops(self.h0.dim(), [&self.h0, &self.hg, &self.v_plus, &self.v_minus])
    }
}

fn check_model(p: &PhysicalParams, space: &CompositeSpace, layout: &ModeLayout) -> Result<()> {
    layout.check(space)?;
    if layout.mediating.len() != p.n_mediating || p.mediating_detunings.len() != p.n_mediating {
        return Err(Error::invalid(format!(
            "layout has {} mediating modes, parameters have {}",
            layout.mediating.len(),
            p.n_mediating
        )));
    }
    Ok(())
}

fn mode_matrix(space: &CompositeSpace, s: usize, op: LocalOp) -> Result<DMatrix<C64>> {
    local_matrix(space.subsystems()[s], op)
}

/// `Σ_jk conj(u_j) v_k m_j† m_k` over field modes, each product embedded exactly.
fn bilinear(space: &CompositeSpace, modes: &[usize], u: &[f64], v: &[f64]) -> Result<SparseOp> {
    let mut terms = Vec::new();
    for (j, &mj) in modes.iter().enumerate() {
        for (k, &mk) in modes.iter().enumerate() {
            let coef = u[j] * v[k];
            if coef == 0.0 {
                continue;
            }
            let create = mode_matrix(space, mj, LocalOp::Create)?;
            let ann = mode_matrix(space, mk, LocalOp::Annihilate)?;
            let op = if mj == mk {
                embed_product(space, &[(mj, create * ann)])?
            } else {
                embed_product(space, &[(mj, create), (mk, ann)])?
            };
            terms.push(op.scale_re(coef));
        }
    }
    Ok(sum_ops(space.dim(), &terms))
}

/// Atom-field coupling `g Σᵢ(|2⟩ᵢ⟨1| Aᵢ + h.c.)` where `Aᵢ = Σ_k w_ik m_k`.
fn atom_field_coupling(
    p: &PhysicalParams,
    space: &CompositeSpace,
    layout: &ModeLayout,
    modes: &[usize],
    weights: [&[f64]; 2],
) -> Result<SparseOp> {
    let raise = local_matrix(Subsystem::Atom3, LocalOp::Transition(2, 1))?;
    let mut terms = Vec::new();
    for (atom, w) in layout.atoms().into_iter().zip(weights) {
        for (&m, &wk) in modes.iter().zip(w) {
            if wk == 0.0 {
                continue;
            }
            let ann = mode_matrix(space, m, LocalOp::Annihilate)?;
            let term = embed_product(space, &[(atom, raise.clone()), (m, ann)])?.scale_re(p.g * wk);
            terms.push(term.adjoint());
            terms.push(term);
        }
    }
    Ok(sum_ops(space.dim(), &terms))
}

fn atomic_detuning(p: &PhysicalParams, space: &CompositeSpace, layout: &ModeLayout) -> Result<SparseOp> {
    let mut terms = Vec::new();
    for atom in layout.atoms() {
        terms.push(local_operator(space, atom, LocalOp::Project(2))?.scale_re(p.delta_cap));
    }
    Ok(sum_ops(space.dim(), &terms))
}

/// Builds H₀, H_g and V± in the lab (local-mode) basis.
pub fn build_hamiltonian_parts(
    p: &PhysicalParams,
    space: &CompositeSpace,
    layout: &ModeLayout,
) -> Result<HamiltonianParts> {
    check_model(p, space, layout)?;
    let dim = space.dim();
    let modes = layout.field_modes();
    let nm = modes.len();

    let mut h0_terms = vec![atomic_detuning(p, space, layout)?];
    // field: δ on cavities, δ+Δ_n on mediators, ν hopping cavity <-> mediator
    let mut freq = vec![p.delta; nm];
    for (n, d) in p.mediating_detunings.iter().enumerate() {
        freq[2 + n] += d;
    }
    for (k, &m) in modes.iter().enumerate() {
        let number = mode_matrix(space, m, LocalOp::Create)? * mode_matrix(space, m, LocalOp::Annihilate)?;
        h0_terms.push(embed_product(space, &[(m, number)])?.scale_re(freq[k]));
    }
    for &b in &layout.mediating {
        for a in layout.cavities() {
            let hop = embed_product(
                space,
                &[(b, mode_matrix(space, b, LocalOp::Annihilate)?), (a, mode_matrix(space, a, LocalOp::Create)?)],
            )?
            .scale_re(p.nu);
            h0_terms.push(hop.adjoint());
            h0_terms.push(hop);
        }
    }
    let mut w1 = vec![0.0; nm];
    let mut w2 = vec![0.0; nm];
    w1[0] = 1.0;
    w2[1] = 1.0;
    h0_terms.push(atom_field_coupling(p, space, layout, &modes, [&w1, &w2])?);
    let h0 = sum_ops(dim, &h0_terms);

    let phase = C64::from_polar(1.0, -p.theta_m);
    let mw = &local_operator(space, layout.atom1, LocalOp::Transition(1, 0))?
        + &local_operator(space, layout.atom2, LocalOp::Transition(1, 0))?.scale(phase);
    let mw = mw.scale_re(p.omega_m / 2.0);
    let hg = &mw + &mw.adjoint();

    let v_plus = (&local_operator(space, layout.atom1, LocalOp::Transition(2, 0))?
        + &local_operator(space, layout.atom2, LocalOp::Transition(2, 0))?)
        .scale_re(p.omega / 2.0);
    let v_minus = v_plus.adjoint();

    Ok(HamiltonianParts { h0, hg, v_plus, v_minus })
}

/// Which physical process a collapse operator describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Photon loss from a field mode.
    Field,
    /// Atomic decay `|2⟩ → |0⟩`.
    DecayToZero,
    /// Atomic decay `|2⟩ → |1⟩`.
    DecayToOne,
}

#[derive(Clone, Debug)]
pub struct CollapseOp {
    pub label: String,
    pub kind: ChannelKind,
    pub op: SparseOp,
}

/// Lab-basis collapse set: `√κ a₁, √κ a₂, √κ b_n, √γ₀|0⟩ᵢ⟨2|, √γ₁|1⟩ᵢ⟨2|`.
pub fn build_collapse_ops(p: &PhysicalParams, space: &CompositeSpace, layout: &ModeLayout) -> Result<Vec<CollapseOp>> {
    check_model(p, space, layout)?;
    let sk = p.kappa.sqrt();
    let mut out = Vec::new();
    for (name, m) in [("kappa_a1", layout.cavity1), ("kappa_a2", layout.cavity2)] {
        out.push(CollapseOp {
            label: name.into(),
            kind: ChannelKind::Field,
            op: local_operator(space, m, LocalOp::Annihilate)?.scale_re(sk),
        });
    }
    for (n, &b) in layout.mediating.iter().enumerate() {
        out.push(CollapseOp {
            label: format!("kappa_b{}", n + 1),
            kind: ChannelKind::Field,
            op: local_operator(space, b, LocalOp::Annihilate)?.scale_re(sk),
        });
    }
    let atomic = [
        ("gamma1", layout.atom1, 0, p.gamma0, ChannelKind::DecayToZero),
        ("gamma2", layout.atom2, 0, p.gamma0, ChannelKind::DecayToZero),
        ("gamma3", layout.atom1, 1, p.gamma1, ChannelKind::DecayToOne),
        ("gamma4", layout.atom2, 1, p.gamma1, ChannelKind::DecayToOne),
    ];
    for (name, atom, lower, rate, kind) in atomic {
        out.push(CollapseOp {
            label: name.into(),
            kind,
            op: local_operator(space, atom, LocalOp::Transition(lower, 2))?.scale_re(rate.sqrt()),
        });
    }
    Ok(out)
}

/// Normal modes of the N = 1 resonant field and H₀ rewritten in them.
#[derive(Clone, Debug)]
pub struct DelocalizedModes {
    /// `c₁, c₂, c₃` as operators on the space.
    pub c: [SparseOp; 3],
    /// Frequencies `δ, δ + √2ν, δ − √2ν`.
    pub frequencies: [f64; 3],
    /// H₀ = Σᵢ Δ|2⟩ᵢ⟨2| + Σⱼ ωⱼ cⱼ†cⱼ + g Σᵢ(|2⟩ᵢ⟨1| aᵢ(c) + h.c.)
    pub h0: SparseOp,
}

/// Weights of `c₁, c₂, c₃` on `(a₁, a₂, b)`.
pub fn delocalized_weights() -> [[f64; 3]; 3] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    [[r, -r, 0.0], [0.5, 0.5, r], [0.5, 0.5, -r]]
}

pub fn delocalized_transform(
    p: &PhysicalParams,
    space: &CompositeSpace,
    layout: &ModeLayout,
) -> Result<DelocalizedModes> {
    check_model(p, space, layout)?;
    if p.n_mediating != 1 || p.mediating_detunings[0] != 0.0 {
        return Err(Error::invalid(
            "delocalized transform is defined for one resonant mediating mode only",
        ));
    }
    let modes = layout.field_modes();
    let w = delocalized_weights();
    let ann: Vec<SparseOp> = modes
        .iter()
        .map(|&m| local_operator(space, m, LocalOp::Annihilate))
        .collect::<Result<_>>()?;
    let c: [SparseOp; 3] = std::array::from_fn(|j| {
        let terms: Vec<SparseOp> = (0..3).map(|k| ann[k].scale_re(w[j][k])).collect();
        sum_ops(space.dim(), &terms)
    });

    let s2nu = std::f64::consts::SQRT_2 * p.nu;
    let frequencies = [p.delta, p.delta + s2nu, p.delta - s2nu];
    let mut terms = vec![atomic_detuning(p, space, layout)?];
    for j in 0..3 {
        terms.push(bilinear(space, &modes, &w[j], &w[j])?.scale_re(frequencies[j]));
    }
    // aᵢ = Σⱼ w[j][i] cⱼ expressed back on local modes is the identity map,
    // so the coupling is assembled from the inverse transform explicitly.
    let a_weights: [Vec<f64>; 2] = std::array::from_fn(|i| {
        (0..3).map(|k| (0..3).map(|j| w[j][i] * w[j][k]).sum::<f64>()).collect()
    });
    terms.push(atom_field_coupling(p, space, layout, &modes, [&a_weights[0], &a_weights[1]])?);
    let h0 = sum_ops(space.dim(), &terms);
    Ok(DelocalizedModes { c, frequencies, h0 })
}

/// Single-photon coupling matrix of the field modes.
pub fn field_coupling_matrix(p: &PhysicalParams) -> DMatrix<f64> {
    let n = p.mediating_detunings.len();
    let mut m = DMatrix::zeros(n + 2, n + 2);
    m[(0, 0)] = p.delta;
    m[(1, 1)] = p.delta;
    for (k, d) in p.mediating_detunings.iter().enumerate() {
        m[(2 + k, 2 + k)] = p.delta + d;
        for a in 0..2 {
            m[(a, 2 + k)] = p.nu;
            m[(2 + k, a)] = p.nu;
        }
    }
    m
}

/// The `N + 2` delocalized field frequencies, ascending.
pub fn delocalized_frequencies(p: &PhysicalParams) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(field_coupling_matrix(p)).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Everything needed to simulate the full model at one parameter point.
#[derive(Clone, Debug)]
pub struct FullModel {
    pub params: PhysicalParams,
    pub space: CompositeSpace,
    pub layout: ModeLayout,
    pub parts: HamiltonianParts,
    pub collapse: Vec<CollapseOp>,
}

impl FullModel {
    pub fn build(p: &PhysicalParams, trunc: Truncation) -> Result<Self> {
        p.validate()?;
        let (space, layout) = model_space(p.n_mediating, trunc)?;
        let parts = build_hamiltonian_parts(p, &space, &layout)?;
        let collapse = build_collapse_ops(p, &space, &layout)?;
        Ok(FullModel { params: p.clone(), space, layout, parts, collapse })
    }

    pub fn collapse_ops(&self) -> Vec<SparseOp> {
        self.collapse.iter().map(|c| c.op.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig3_model(cap: usize) -> FullModel {
        FullModel::build(&PhysicalParams::fig3(0.0), Truncation::capped(cap)).unwrap()
    }

    #[test]
    fn dimensions_of_model_spaces() {
        for (n, cap, dim) in [(1, 2, 57), (1, 1, 20), (2, 2, 81), (2, 1, 24), (3, 2, 109), (5, 1, 36), (5, 2, 177)] {
            let (s, _) = model_space(n, Truncation::capped(cap)).unwrap();
            assert_eq!(s.dim(), dim, "N={n} cap={cap}");
        }
    }

    #[test]
    fn zero_drive_gives_zero_v_plus() {
        let mut p = PhysicalParams::fig3(0.0);
        p.omega = 0.0;
        let m = FullModel::build(&p, Truncation::capped(1)).unwrap();
        assert!(m.parts.v_plus.is_zero());
        assert!(m.parts.v_minus.is_zero());
    }

    #[test]
    fn hopping_matrix_element() {
        let m = fig3_model(1);
        let from = m.space.index_of(&[0, 0, 1, 0, 0]).unwrap();
        let to = m.space.index_of(&[0, 0, 0, 0, 1]).unwrap();
        assert_relative_eq!(m.parts.h0.get(to, from).re, 0.4528, epsilon = 1e-15);
        assert_eq!(m.parts.h0.get(to, from).im, 0.0);
    }

    #[test]
    fn hermiticity_of_parts() {
        for cap in [1, 2] {
            let m = fig3_model(cap);
            assert!(m.parts.h0.hermiticity_error() <= 1e-12);
            assert!(m.parts.hg.hermiticity_error() <= 1e-12);
            assert_eq!(m.parts.v_minus, m.parts.v_plus.adjoint());
        }
    }

    #[test]
    fn microwave_ground_block_at_theta_pi() {
        let p = PhysicalParams::fig3(std::f64::consts::PI);
        let m = FullModel::build(&p, Truncation::capped(1)).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let k = |a, b| m.space.ket(&[a, b, 0, 0, 0]).unwrap();
        let k00 = k(0, 0);
        let s = (k(1, 0) - k(0, 1)) * C64::new(r, 0.0);
        let t = (k(1, 0) + k(0, 1)) * C64::new(r, 0.0);
        assert!(m.parts.hg.matrix_element(&t, &k00).norm() < 1e-15);
        let expected = p.omega_m * r;
        assert_relative_eq!(m.parts.hg.matrix_element(&s, &k00).norm(), expected, epsilon = 1e-15);
    }

    #[test]
    fn seven_collapse_operators_for_one_mediator() {
        let m = fig3_model(2);
        assert_eq!(m.collapse.len(), 7);
        let mut p = PhysicalParams::fig3(0.0);
        p.kappa = 0.0;
        let m = FullModel::build(&p, Truncation::capped(1)).unwrap();
        let zero: Vec<_> = m.collapse.iter().filter(|c| c.op.is_zero()).map(|c| c.kind).collect();
        assert_eq!(zero, vec![ChannelKind::Field; 3]);
    }

    #[test]
    fn normal_mode_rewrite_matches_local_h0() {
        for cap in [1, 2] {
            let p = PhysicalParams::fig3(0.0);
            let (space, layout) = model_space(1, Truncation::capped(cap)).unwrap();
            let parts = build_hamiltonian_parts(&p, &space, &layout).unwrap();
            let d = delocalized_transform(&p, &space, &layout).unwrap();
            assert!(parts.h0.max_abs_diff(&d.h0) <= 1e-12);
        }
    }

    #[test]
    fn delocalized_transform_rejects_other_layouts() {
        let p = PhysicalParams::fig3(0.0).with_layout(3, 0.2).unwrap();
        let (space, layout) = model_space(3, Truncation::capped(1)).unwrap();
        assert!(delocalized_transform(&p, &space, &layout).is_err());
    }

    #[test]
    fn delocalized_commutators() {
        let p = PhysicalParams::fig3(0.0);
        let (space, layout) = model_space(1, Truncation { excitation_cap: None, per_mode_cap: 3 }).unwrap();
        let d = delocalized_transform(&p, &space, &layout).unwrap();
        // away from the photon cutoff the canonical relations hold exactly
        let low: Vec<usize> = (0..space.dim()).filter(|&i| space.state(i)[2..].iter().all(|&n| n <= 1)).collect();
        let comm = |x: &SparseOp, y: &SparseOp| &(x * y) - &(y * x);
        let c23 = comm(&d.c[1], &d.c[2].adjoint());
        let c22 = comm(&d.c[1], &d.c[1].adjoint());
        for &i in &low {
            for &j in &low {
                assert!(c23.get(i, j).norm() < 1e-14);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((c22.get(i, j) - want).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn degenerate_frequencies_without_hopping() {
        let mut p = PhysicalParams::fig3(0.0);
        p.nu = 0.0;
        let (space, layout) = model_space(1, Truncation::capped(1)).unwrap();
        let d = delocalized_transform(&p, &space, &layout).unwrap();
        assert_eq!(d.frequencies, [p.delta; 3]);
        let f = delocalized_frequencies(&PhysicalParams { nu: 0.0, ..PhysicalParams::fig3(0.0).with_layout(3, 0.3).unwrap() });
        let mut want = vec![p.delta, p.delta, p.delta - 0.3, p.delta, p.delta + 0.3];
        want.sort_by(f64::total_cmp);
        for (a, b) in f.iter().zip(&want) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn fig3_delocalized_frequencies() {
        let p = PhysicalParams::fig3(0.0);
        let f = delocalized_frequencies(&p);
        let s = std::f64::consts::SQRT_2 * p.nu;
        assert_relative_eq!(f[0], p.delta - s, epsilon = 1e-12);
        assert_relative_eq!(f[1], p.delta, epsilon = 1e-12);
        assert_relative_eq!(f[2], p.delta + s, epsilon = 1e-12);
        assert!((f[2] - 0.9279).abs() < 1e-4 && (f[0] + 0.3529).abs() < 1e-4);
    }

    #[test]
    fn frequency_trace_identity() {
        for (n, dx) in [(2, -0.64), (3, 0.54), (5, -0.2)] {
            let p = PhysicalParams::fig3(0.0).with_layout(n, dx).unwrap();
            let sum: f64 = delocalized_frequencies(&p).iter().sum();
            let want = (n as f64 + 2.0) * p.delta + p.mediating_detunings.iter().sum::<f64>();
            assert_relative_eq!(sum, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn n2_spectrum_approaches_n1_far_detuned() {
        let n1 = delocalized_frequencies(&PhysicalParams::fig3(0.0));
        let p = PhysicalParams::fig3(0.0).with_layout(2, 200.0).unwrap();
        let f = delocalized_frequencies(&p);
        for (a, b) in f[..3].iter().zip(&n1) {
            assert!((a - b).abs() < 5e-3);
        }
        assert!((f[3] - (p.delta + 200.0)).abs() < 5e-3);
        // continuity across a small step
        let a = delocalized_frequencies(&PhysicalParams::fig3(0.0).with_layout(2, 0.3).unwrap());
        let b = delocalized_frequencies(&PhysicalParams::fig3(0.0).with_layout(2, 0.3 + 1e-6).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-5));
    }

    #[test]
    fn cooperativity_values() {
        let p = PhysicalParams::fig3(0.0);
        assert_relative_eq!(cooperativity(&p).unwrap(), 150.18, epsilon = 0.01);
        let q = PhysicalParams { kappa: 2.0 * p.kappa, gamma0: 2.0 * p.gamma0, gamma1: 2.0 * p.gamma1, ..p.clone() };
        assert_relative_eq!(cooperativity(&q).unwrap(), cooperativity(&p).unwrap() / 4.0, max_relative = 1e-14);
        let r = p.clone().with_cooperativity(150.0).unwrap();
        assert_relative_eq!(r.kappa, 0.057735, epsilon = 1e-6);
        assert_relative_eq!(cooperativity(&r).unwrap(), 150.0, max_relative = 1e-12);
        assert!(cooperativity(&PhysicalParams { kappa: 0.0, ..p }).is_err());
    }

    #[test]
    fn layouts() {
        assert_eq!(mediating_layout(2, -0.64).unwrap(), vec![0.0, -0.64]);
        assert_eq!(mediating_layout(3, 0.5).unwrap(), vec![-0.5, 0.0, 0.5]);
        assert_eq!(mediating_layout(1, 0.5).unwrap(), vec![0.0]);
        assert!(mediating_layout(4, 0.5).is_err());
        assert!(mediating_layout(0, 0.5).is_err());
    }

    #[test]
    fn validation_names_the_key() {
        let mut p = PhysicalParams::fig3(0.0);
        p.kappa = -1.0;
        let msg = p.validate().unwrap_err().to_string();
        assert!(msg.contains("kappa"), "{msg}");
        let mut p = PhysicalParams::fig3(0.0);
        p.n_mediating = 2;
        assert!(p.validate().unwrap_err().to_string().contains("mediating_detunings"));
        // the preset's gamma already sits above the weak-coupling threshold
        let w = PhysicalParams::fig3(0.0).validate().unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].starts_with("gamma"));
        let strong = PhysicalParams { kappa: 0.2, ..PhysicalParams::fig3(0.0) };
        assert_eq!(strong.validate().unwrap().len(), 2);
        let weak = PhysicalParams { kappa: 0.01, gamma0: 0.01, gamma1: 0.01, ..PhysicalParams::fig3(0.0) };
        assert!(weak.validate().unwrap().is_empty());
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let p = PhysicalParams::fig3(0.0).with_layout(3, 0.1).unwrap();
        let (space, layout) = model_space(1, Truncation::capped(1)).unwrap();
        assert!(build_hamiltonian_parts(&p, &space, &layout).is_err());
        let bad = ModeLayout { atom1: 2, ..layout.clone() };
        assert!(bad.check(&space).is_err());
    }
}
