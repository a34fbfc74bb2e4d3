//! Second-order effective-operator reduction onto the atomic ground manifold
//! `{|00⟩, |S⟩, |T⟩, |11⟩}`, plus the closed-form rates for one resonant
//! mediating mode.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::LindbladGenerator;
use crate::error::{Error, Result};
use crate::model::{delocalized_weights, ChannelKind, CollapseOp, FullModel, HamiltonianParts, ModeLayout, PhysicalParams, Truncation};
use crate::qspace::{sum_ops, CompositeSpace, SparseOp};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Condition number above which the excited-block inversion is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Ground-manifold labels in basis order.
pub const GROUND_LABELS: [&str; 4] = ["00", "S", "T", "11"];

/// `H_NH = H₀ − (i/2) Σ L†L`.
pub fn nonhermitian_hamiltonian(h0: &SparseOp, collapse: &[SparseOp]) -> SparseOp {
    let half_i = C64::new(0.0, -0.5);
    let decay: Vec<SparseOp> = collapse.iter().map(|l| (&l.adjoint() * l).scale(half_i)).collect();
    sum_ops(h0.dim(), std::iter::once(h0).chain(&decay))
}

/// Ground states `|00⟩, |S⟩, |T⟩, |11⟩` with the field in vacuum, and the
/// single-excitation block that the drive reaches from them.
#[derive(Clone, Debug)]
pub struct GroundManifold {
    basis: [DVector<C64>; 4],
    block: Vec<usize>,
}

impl GroundManifold {
    pub fn new(space: &CompositeSpace, layout: &ModeLayout) -> Result<Self> {
        layout.check(space)?;
        let n_sub = space.subsystems().len();
        let ket = |a1: usize, a2: usize| -> Result<DVector<C64>> {
            let mut lv = vec![0usize; n_sub];
            lv[layout.atom1] = a1;
            lv[layout.atom2] = a2;
            space.ket(&lv)
        };
        let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let (k10, k01) = (ket(1, 0)?, ket(0, 1)?);
        let basis = [ket(0, 0)?, (&k10 - &k01) * r, (&k10 + &k01) * r, ket(1, 1)?];
        let block = (0..space.dim()).filter(|&i| space.excitation(i) == 1).collect();
        Ok(GroundManifold { basis, block })
    }

    pub fn basis(&self) -> &[DVector<C64>; 4] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis[0].len()
    }

    /// Indices of the single-excitation states.
    pub fn excited_block(&self) -> &[usize] {
        &self.block
    }

    /// `Σ_k c_k |g_k⟩`
    pub fn embed(&self, coeffs: &DVector<C64>) -> DVector<C64> {
        let mut v = DVector::from_element(self.dim(), ZERO);
        for (b, c) in self.basis.iter().zip(coeffs.iter()) {
            v += b * *c;
        }
        v
    }

    /// `⟨g_j|A|g_k⟩`
    pub fn project(&self, op: &SparseOp) -> DMatrix<C64> {
        let images: Vec<DVector<C64>> = self.basis.iter().map(|b| op.mul_vec(b)).collect();
        DMatrix::from_fn(4, 4, |j, k| self.basis[j].dotc(&images[k]))
    }
}

/// Images `V₊|g_k⟩` and `H_NH⁻¹ V₊|g_k⟩` of the four ground states.
struct Excursions {
    driven: Vec<DVector<C64>>,
    propagated: Vec<DVector<C64>>,
}

fn excursions(parts: &HamiltonianParts, collapse: &[SparseOp], manifold: &GroundManifold) -> Result<Excursions> {
    let h_nh = nonhermitian_hamiltonian(&parts.h0, collapse);
    let block = manifold.excited_block();
    let nb = block.len();
    let dim = manifold.dim();
    let mut pos = vec![usize::MAX; dim];
    for (k, &i) in block.iter().enumerate() {
        pos[i] = k;
    }
    let mut hb = DMatrix::from_element(nb, nb, ZERO);
    for (r, c, v) in h_nh.triplets() {
        let (pr, pc) = (pos[r], pos[c]);
        if pr != usize::MAX && pc != usize::MAX {
            hb[(pr, pc)] = v;
        } else if (pr == usize::MAX) != (pc == usize::MAX) {
            return Err(Error::invalid("H_NH couples the single-excitation block to other states"));
        }
    }
    let driven: Vec<DVector<C64>> = manifold.basis().iter().map(|g| parts.v_plus.mul_vec(g)).collect();
    for v in &driven {
        if v.iter().enumerate().any(|(i, z)| *z != ZERO && pos[i] == usize::MAX) {
            return Err(Error::invalid("V+ maps the ground manifold outside the single-excitation block"));
        }
    }
    if nb == 0 {
        return Ok(Excursions { propagated: driven.clone(), driven });
    }
    let sv = hb.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::numerical(format!(
            "excited-block H_NH is singular or ill-conditioned (condition number {cond:.3e})"
        )));
    }
    let lu = hb.lu();
    let mut propagated = Vec::with_capacity(4);
    for v in &driven {
        let vb = DVector::from_iterator(nb, block.iter().map(|&i| v[i]));
        let wb = lu
            .solve(&vb)
            .ok_or_else(|| Error::numerical("excited-block solve failed"))?;
        let mut w = DVector::from_element(dim, ZERO);
        for (k, &i) in block.iter().enumerate() {
            w[i] = wb[k];
        }
        propagated.push(w);
    }
    Ok(Excursions { driven, propagated })
}

/// `H_eff = −½ V₋[H_NH⁻¹ + (H_NH⁻¹)†]V₊ + H_g` on the ground manifold.
pub fn effective_hamiltonian(
    parts: &HamiltonianParts,
    collapse: &[SparseOp],
    manifold: &GroundManifold,
) -> Result<DMatrix<C64>> {
    let ex = excursions(parts, collapse, manifold)?;
    let mut h = manifold.project(&parts.hg);
    for j in 0..4 {
        for k in 0..4 {
            let a = ex.driven[j].dotc(&ex.propagated[k]);
            let b = ex.propagated[j].dotc(&ex.driven[k]);
            h[(j, k)] -= 0.5 * (a + b);
        }
    }
    Ok(h)
}

/// One effective decay channel on the ground manifold; `matrix[(target, source)]`.
#[derive(Clone, Debug)]
pub struct EffectiveChannel {
    pub label: String,
    pub kind: ChannelKind,
    pub matrix: DMatrix<C64>,
}

/// `L_eff = L H_NH⁻¹ V₊` compressed onto the ground manifold, one per collapse operator.
pub fn effective_lindblads(
    parts: &HamiltonianParts,
    collapse: &[CollapseOp],
    manifold: &GroundManifold,
) -> Result<Vec<EffectiveChannel>> {
    let ops: Vec<SparseOp> = collapse.iter().map(|c| c.op.clone()).collect();
    let ex = excursions(parts, &ops, manifold)?;
    Ok(collapse
        .iter()
        .map(|c| {
            let images: Vec<DVector<C64>> = ex.propagated.iter().map(|w| c.op.mul_vec(w)).collect();
            let matrix = DMatrix::from_fn(4, 4, |j, k| manifold.basis()[j].dotc(&images[k]));
            EffectiveChannel { label: c.label.clone(), kind: c.kind, matrix }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLabeling {
    /// One channel per lab-basis collapse operator.
    Lab,
    /// Field channels rotated onto the normal modes `c₁, c₂, c₃`.
    Delocalized,
}

/// The reduced 4-level model.
#[derive(Clone, Debug)]
pub struct EffectiveModel {
    pub h_eff: DMatrix<C64>,
    /// Microwave block alone, for generators that drop the Stark shifts.
    pub h_g: DMatrix<C64>,
    pub lindblads: Vec<EffectiveChannel>,
    pub labeling: ChannelLabeling,
}

impl EffectiveModel {
    pub fn channel(&self, label: &str) -> Option<&EffectiveChannel> {
        self.lindblads.iter().find(|c| c.label == label)
    }

    /// 4-level generator; `stark` selects `H_eff` over `H_g`.
    pub fn generator(&self, stark: bool) -> Result<LindbladGenerator> {
        let mut h = if stark { self.h_eff.clone() } else { self.h_g.clone() };
        crate::qspace::hermitize(&mut h);
        let ls: Vec<DMatrix<C64>> = self
            .lindblads
            .iter()
            .filter(|c| c.matrix.iter().any(|z| *z != ZERO))
            .map(|c| c.matrix.clone())
            .collect();
        LindbladGenerator::from_dense(&h, &ls)
    }
}

/// Reduces a full model. One resonant mediating mode gets delocalized labels.
pub fn reduce(model: &FullModel) -> Result<EffectiveModel> {
    let manifold = GroundManifold::new(&model.space, &model.layout)?;
    let ops = model.collapse_ops();
    let h_eff = effective_hamiltonian(&model.parts, &ops, &manifold)?;
    let h_g = manifold.project(&model.parts.hg);
    let lab = effective_lindblads(&model.parts, &model.collapse, &manifold)?;
    let p = &model.params;
    let delocalize = p.n_mediating == 1 && p.mediating_detunings[0] == 0.0;
    if !delocalize {
        return Ok(EffectiveModel { h_eff, h_g, lindblads: lab, labeling: ChannelLabeling::Lab });
    }
    let field: Vec<&EffectiveChannel> = ["kappa_a1", "kappa_a2", "kappa_b1"]
        .iter()
        .map(|l| lab.iter().find(|c| c.label == *l).expect("lab field channel present"))
        .collect();
    let w = delocalized_weights();
    let mut lindblads: Vec<EffectiveChannel> = (0..3)
        .map(|j| {
            let mut m = DMatrix::from_element(4, 4, ZERO);
            for k in 0..3 {
                m += &field[k].matrix * C64::new(w[j][k], 0.0);
            }
            EffectiveChannel { label: format!("kappa_c{}", j + 1), kind: ChannelKind::Field, matrix: m }
        })
        .collect();
    lindblads.extend(lab.into_iter().filter(|c| c.kind != ChannelKind::Field));
    Ok(EffectiveModel { h_eff, h_g, lindblads, labeling: ChannelLabeling::Delocalized })
}

/// Numeric reduction of the parameters on a one-excitation space (exact for
/// the reduction, since the drive only reaches the single-excitation block).
pub fn reduce_params(p: &PhysicalParams) -> Result<EffectiveModel> {
    reduce(&FullModel::build(p, Truncation::capped(1))?)
}

/// Allowed `(target, source)` support of a delocalized channel.
pub fn allowed_support(label: &str, kind: ChannelKind) -> &'static [(usize, usize)] {
    match (label, kind) {
        ("kappa_c1", _) => &[(1, 0), (3, 1)],
        ("kappa_c2", _) | ("kappa_c3", _) => &[(2, 0), (3, 2)],
        (_, ChannelKind::DecayToZero) => &[(0, 0), (1, 1), (1, 2), (2, 1), (2, 2)],
        (_, ChannelKind::DecayToOne) => &[(1, 0), (2, 0), (3, 1), (3, 2)],
        _ => &[],
    }
}

/// Largest off-support element over the largest element, per channel.
pub fn off_pattern_ratios(model: &EffectiveModel) -> Vec<(String, f64)> {
    model
        .lindblads
        .iter()
        .map(|c| {
            let allowed = allowed_support(&c.label, c.kind);
            let mut on = 0.0f64;
            let mut off = 0.0f64;
            for j in 0..4 {
                for k in 0..4 {
                    let a = c.matrix[(j, k)].norm();
                    if allowed.contains(&(j, k)) {
                        on = on.max(a);
                    } else {
                        off = off.max(a);
                    }
                }
            }
            let ratio = if on > 0.0 { off / on } else if off > 0.0 { f64::INFINITY } else { 0.0 };
            (c.label.clone(), ratio)
        })
        .collect()
}

/// Which closed forms to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateFormulas {
    /// As printed, including `B = (δ/2 − ν²)(Δκ + γδ) + …`.
    Printed,
    /// Printed forms with `B = (δ²/2 − ν²)(Δκ + γδ) + …`.
    #[default]
    BCorrected,
    /// `B` corrected, second coefficients doubled, `γ_e = γΩ²δ²/(C₁² + D₁²)`
    /// and exact Stark shifts. Matches the numeric reduction.
    Rederived,
}

/// Closed-form coefficients and rates for one resonant mediating mode.
#[derive(Clone, Debug, Serialize)]
pub struct AnalyticRates {
    pub formulas: RateFormulas,
    pub g_e: f64,
    pub delta_p: C64,
    pub delta_cap_p: C64,
    pub r1: C64,
    pub r2: C64,
    pub r3: C64,
    pub a_coef: f64,
    pub b_coef: f64,
    pub c1_coef: f64,
    pub d1_coef: f64,
    pub c2_coef: f64,
    pub d2_coef: f64,
    pub kappa_c1_1: f64,
    pub kappa_c1_2: f64,
    pub kappa_c2_1: f64,
    pub kappa_c2_2: f64,
    pub kappa_c3_1: f64,
    pub kappa_c3_2: f64,
    pub gamma_e: f64,
    pub gamma_s_12: f64,
    pub gamma_s_34: f64,
    pub gamma_t_12: f64,
    pub gamma_t_34: f64,
    /// Diagonal light shifts of `|00⟩, |S⟩, |T⟩`.
    pub stark_00: f64,
    pub stark_s: f64,
    pub stark_t: f64,
}

fn nonzero(name: &str, x: f64) -> Result<f64> {
    if x == 0.0 || !x.is_finite() {
        Err(Error::numerical(format!("singular parameters: {name} vanishes")))
    } else {
        Ok(x)
    }
}

fn nonzero_c(name: &str, z: C64) -> Result<C64> {
    if z.norm() == 0.0 || !z.re.is_finite() || !z.im.is_finite() {
        Err(Error::numerical(format!("singular parameters: {name} vanishes")))
    } else {
        Ok(z)
    }
}

pub fn analytic_rates(p: &PhysicalParams, formulas: RateFormulas) -> Result<AnalyticRates> {
    if p.n_mediating != 1 || p.mediating_detunings.first() != Some(&0.0) {
        return Err(Error::invalid(
            "n_mediating: closed-form rates need exactly one resonant mediating mode",
        ));
    }
    p.validate()?;
    let (g, om, dc, d, nu, k) = (p.g, p.omega, p.delta_cap, p.delta, p.nu, p.kappa);
    let gam = p.gamma();
    let g2 = g * g;
    let nu2 = nu * nu;
    let ge = g * om;
    let ge2 = ge * ge;
    let s2nu = std::f64::consts::SQRT_2 * nu;

    let dp = C64::new(d, -k / 2.0);
    let dcp = C64::new(dc, -gam / 2.0);
    let r1 = dp * (dp * dp - 2.0 * nu2) / nonzero_c("R1 denominator", dcp * dp * (dp * dp - 2.0 * nu2) - g2 * (dp * dp - nu2))?;
    let r23_den = nonzero_c(
        "R2/R3 denominator",
        (g2 - dp * dcp) * (dp * dp * dcp - dp * g2 + 2.0 * dcp * nu2),
    )?;
    let r2 = (dcp * dp * (dp * dp - 2.0 * nu2) - g2 * dp * dp) / r23_den;
    let r3 = (dcp * dp * (dp * dp - 2.0 * nu2) - g2 * (dp * dp - 2.0 * nu2)) / r23_den;

    let a = dc * d * (d * d - 2.0 * nu2) - g2 * (d * d - nu2);
    let b_lead = match formulas {
        RateFormulas::Printed => d / 2.0 - nu2,
        _ => d * d / 2.0 - nu2,
    };
    let b = b_lead * (dc * k + gam * d) + d * k * (dc * d - g2);
    let c1 = g2 - dc * d;
    let d1 = (dc * k + d * gam) / 2.0;
    let c2 = g2 * d - dc * (d * d - 2.0 * nu2);
    let d2 = k * (dc * d - g2 / 2.0) + gam * (d * d - 2.0 * nu2) / 2.0;

    let ab = nonzero("A^2 + B^2", a * a + b * b)?;
    let cd1 = nonzero("C1^2 + D1^2", c1 * c1 + d1 * d1)?;
    let cd2 = nonzero("C2^2 + D2^2", c2 * c2 + d2 * d2)?;
    let second = if formulas == RateFormulas::Rederived { 2.0 } else { 1.0 };

    let kappa_c1_1 = (d * d - 2.0 * nu2).powi(2) * ge2 * k / 4.0 / ab;
    let kappa_c1_2 = second * ge2 * k / 8.0 / cd1;
    let kappa_c2_1 = d * d * (d - s2nu).powi(2) * ge2 * k / 8.0 / ab;
    let kappa_c2_2 = second * (d - s2nu).powi(2) * ge2 * k / 16.0 / cd2;
    let kappa_c3_1 = d * d * (d + s2nu).powi(2) * ge2 * k / 8.0 / ab;
    let kappa_c3_2 = second * (d + s2nu).powi(2) * ge2 * k / 16.0 / cd2;

    let gamma_e = match formulas {
        RateFormulas::Rederived => gam * om * om * d * d / cd1,
        _ => {
            let den = nonzero("gamma_e denominator", dc * (d * d - nu2) + d * g2)?;
            gam * om * om * nu2 * nu2 / (den * den)
        }
    };

    let om2 = om * om;
    let (stark_00, stark_s, stark_t) = match formulas {
        RateFormulas::Rederived => {
            let s = dp / nonzero_c("S shift denominator", dcp * dp - g2)?;
            let tn = dp * dp - 2.0 * nu2;
            let t = tn / nonzero_c("T shift denominator", dcp * tn - g2 * dp)?;
            (-(om2 / 2.0) * r1.re, -(om2 / 4.0) * s.re, -(om2 / 4.0) * t.re)
        }
        _ => (-(om2 * r1).re, -(om2 / 4.0 * r2).re, -(om2 / 4.0 * r3).re),
    };

    Ok(AnalyticRates {
        formulas,
        g_e: ge,
        delta_p: dp,
        delta_cap_p: dcp,
        r1,
        r2,
        r3,
        a_coef: a,
        b_coef: b,
        c1_coef: c1,
        d1_coef: d1,
        c2_coef: c2,
        d2_coef: d2,
        kappa_c1_1,
        kappa_c1_2,
        kappa_c2_1,
        kappa_c2_2,
        kappa_c3_1,
        kappa_c3_2,
        gamma_e,
        gamma_s_12: gamma_e / 32.0,
        gamma_s_34: gamma_e / 16.0,
        gamma_t_12: gamma_e / 32.0,
        gamma_t_34: gamma_e / 16.0,
        stark_00,
        stark_s,
        stark_t,
    })
}

/// Rates read off a delocalized numeric reduction.
#[derive(Clone, Debug, Serialize)]
pub struct NumericRates {
    pub kappa_c1_1: f64,
    pub kappa_c1_2: f64,
    pub kappa_c2_1: f64,
    pub kappa_c2_2: f64,
    pub kappa_c3_1: f64,
    pub kappa_c3_2: f64,
    /// `16 |⟨11|L_γ3|S⟩|²`
    pub gamma_e: f64,
    pub gamma_s_12: f64,
    pub gamma_s_34: f64,
    pub gamma_t_12: f64,
    pub gamma_t_34: f64,
    pub stark_00: f64,
    pub stark_s: f64,
    pub stark_t: f64,
}

pub fn numeric_rates(model: &EffectiveModel) -> Result<NumericRates> {
    if model.labeling != ChannelLabeling::Delocalized {
        return Err(Error::invalid("numeric rates need delocalized channel labels (one resonant mediator)"));
    }
    let sq = |label: &str, t: usize, s: usize| -> Result<f64> {
        model
            .channel(label)
            .map(|c| c.matrix[(t, s)].norm_sqr())
            .ok_or_else(|| Error::invalid(format!("channel {label} missing")))
    };
    let h = &model.h_eff;
    let hg = &model.h_g;
    Ok(NumericRates {
        kappa_c1_1: sq("kappa_c1", 1, 0)?,
        kappa_c1_2: sq("kappa_c1", 3, 1)?,
        kappa_c2_1: sq("kappa_c2", 2, 0)?,
        kappa_c2_2: sq("kappa_c2", 3, 2)?,
        kappa_c3_1: sq("kappa_c3", 2, 0)?,
        kappa_c3_2: sq("kappa_c3", 3, 2)?,
        gamma_e: 16.0 * sq("gamma3", 3, 1)?,
        gamma_s_12: sq("gamma1", 2, 1)?,
        gamma_s_34: sq("gamma3", 3, 1)?,
        gamma_t_12: sq("gamma1", 1, 2)?,
        gamma_t_34: sq("gamma3", 3, 2)?,
        stark_00: (h[(0, 0)] - hg[(0, 0)]).re,
        stark_s: (h[(1, 1)] - hg[(1, 1)]).re,
        stark_t: (h[(2, 2)] - hg[(2, 2)]).re,
    })
}

/// `(name, analytic, numeric, |a − n| / |n|)` for every shared rate.
pub fn rate_deviations(a: &AnalyticRates, n: &NumericRates) -> Vec<(&'static str, f64, f64, f64)> {
    let rows = [
        ("kappa_c1_1", a.kappa_c1_1, n.kappa_c1_1),
        ("kappa_c1_2", a.kappa_c1_2, n.kappa_c1_2),
        ("kappa_c2_1", a.kappa_c2_1, n.kappa_c2_1),
        ("kappa_c2_2", a.kappa_c2_2, n.kappa_c2_2),
        ("kappa_c3_1", a.kappa_c3_1, n.kappa_c3_1),
        ("kappa_c3_2", a.kappa_c3_2, n.kappa_c3_2),
        ("gamma_e", a.gamma_e, n.gamma_e),
        ("stark_00", a.stark_00, n.stark_00),
        ("stark_s", a.stark_s, n.stark_s),
        ("stark_t", a.stark_t, n.stark_t),
    ];
    rows.into_iter().map(|(k, x, y)| (k, x, y, (x - y).abs() / y.abs())).collect()
}

/// Microwave Hamiltonian on the ground manifold, from the two-atom algebra.
pub fn microwave_block(p: &PhysicalParams) -> DMatrix<C64> {
    // two-atom kets |a1 a2⟩ with a ∈ {0, 1}: index 2·a1 + a2
    let phase = C64::from_polar(1.0, -p.theta_m);
    let mut m = DMatrix::from_element(4, 4, ZERO);
    let half = C64::new(p.omega_m / 2.0, 0.0);
    // |1⟩₁⟨0|: |0 a2⟩ → |1 a2⟩ ; e^{-iθ}|1⟩₂⟨0|: |a1 0⟩ → |a1 1⟩
    for a2 in 0..2 {
        m[(2 + a2, a2)] += half;
    }
    for a1 in 0..2 {
        m[(2 * a1 + 1, 2 * a1)] += half * phase;
    }
    let full = &m + m.adjoint();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    // columns: |00⟩, |S⟩, |T⟩, |11⟩ in the |a1 a2⟩ basis
    let u = DMatrix::from_row_slice(
        4,
        4,
        &[
            ONE, ZERO, ZERO, ZERO,
            ZERO, C64::new(-r, 0.0), C64::new(r, 0.0), ZERO,
            ZERO, C64::new(r, 0.0), C64::new(r, 0.0), ZERO,
            ZERO, ZERO, ZERO, ONE,
        ],
    );
    u.adjoint() * full * u
}

/// 4-level model built from closed-form rates.
///
/// Field channels follow the drawn structure (`|00⟩ → |S⟩ → |11⟩` for c₁,
/// `|00⟩ → |T⟩ → |11⟩` for c₂ and c₃). Atomic channels carry only the
/// `γ_S`, `γ_T` transfers out of `|S⟩` and `|T⟩`.
pub fn analytic_model(p: &PhysicalParams, formulas: RateFormulas) -> Result<EffectiveModel> {
    let r = analytic_rates(p, formulas)?;
    let h_g = microwave_block(p);
    let mut h_eff = h_g.clone();
    h_eff[(0, 0)] += r.stark_00;
    h_eff[(1, 1)] += r.stark_s;
    h_eff[(2, 2)] += r.stark_t;
    let chan = |label: &str, kind, entries: &[(usize, usize, f64)]| {
        let mut m = DMatrix::from_element(4, 4, ZERO);
        for &(t, s, rate) in entries {
            m[(t, s)] = C64::new(rate.sqrt(), 0.0);
        }
        EffectiveChannel { label: label.into(), kind, matrix: m }
    };
    let f = ChannelKind::Field;
    let lindblads = vec![
        chan("kappa_c1", f, &[(1, 0, r.kappa_c1_1), (3, 1, r.kappa_c1_2)]),
        chan("kappa_c2", f, &[(2, 0, r.kappa_c2_1), (3, 2, r.kappa_c2_2)]),
        chan("kappa_c3", f, &[(2, 0, r.kappa_c3_1), (3, 2, r.kappa_c3_2)]),
        chan("gamma1", ChannelKind::DecayToZero, &[(2, 1, r.gamma_s_12), (1, 2, r.gamma_t_12)]),
        chan("gamma2", ChannelKind::DecayToZero, &[(2, 1, r.gamma_s_12), (1, 2, r.gamma_t_12)]),
        chan("gamma3", ChannelKind::DecayToOne, &[(3, 1, r.gamma_s_34), (3, 2, r.gamma_t_34)]),
        chan("gamma4", ChannelKind::DecayToOne, &[(3, 1, r.gamma_s_34), (3, 2, r.gamma_t_34)]),
    ];
    Ok(EffectiveModel { h_eff, h_g, lindblads, labeling: ChannelLabeling::Delocalized })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "formulas")]
pub enum RateSource {
    Numeric,
    Analytic(RateFormulas),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveOptions {
    pub source: RateSource,
    /// Keep the O(Ω²) light shifts in the Hamiltonian.
    pub stark: bool,
}

impl Default for EffectiveOptions {
    fn default() -> Self {
        EffectiveOptions { source: RateSource::Numeric, stark: false }
    }
}

pub fn build_effective_generator(p: &PhysicalParams, opts: EffectiveOptions) -> Result<LindbladGenerator> {
    let model = match opts.source {
        RateSource::Numeric => reduce_params(p)?,
        RateSource::Analytic(f) => analytic_model(p, f)?,
    };
    model.generator(opts.stark)
}
