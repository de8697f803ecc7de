//! Integral quantities and per-step balance residuals.

use serde::{Deserialize, Serialize};

use crate::assembly::Assembler;
use crate::derham::{Field, SpaceKind};
use crate::solver::FlowState;
use crate::sparse::dot;

/// One row of the diagnostics series. Residuals are absent for `k = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub k: usize,
    pub t: f64,
    #[serde(rename = "K")]
    pub kinetic: f64,
    #[serde(rename = "E")]
    pub enstrophy: f64,
    #[serde(rename = "Pal")]
    pub palinstrophy: f64,
    #[serde(rename = "W")]
    pub total_vorticity: f64,
    #[serde(rename = "divL2")]
    pub div_l2: f64,
    pub energy_res: Option<f64>,
    pub enstrophy_res: Option<f64>,
    pub vorticity_res: Option<f64>,
}

fn quadratic(asm: &Assembler, kind: SpaceKind, v: &[f64]) -> f64 {
    0.5 * dot(v, &asm.mass_matrix(kind).matrix.matvec(v))
}

/// `½ uᵀ M_D u`
pub fn kinetic_energy(asm: &Assembler, u: &Field) -> f64 {
    quadratic(asm, SpaceKind::HDiv, u.coeffs())
}

/// `½ ωᵀ M_C ω`
pub fn enstrophy(asm: &Assembler, omega: &Field) -> f64 {
    quadratic(asm, SpaceKind::HCurl, omega.coeffs())
}

/// `½ (Eω)ᵀ M_D (Eω)` with the incidence curl `E`.
pub fn palinstrophy(asm: &Assembler, omega: &Field) -> f64 {
    let curl = asm.complex().curl().apply(omega.coeffs());
    quadratic(asm, SpaceKind::HDiv, &curl)
}

/// `⟨ω, 1⟩` through `M_C`.
pub fn total_vorticity(asm: &Assembler, omega: &Field) -> f64 {
    let mw = asm.mass_matrix(SpaceKind::HCurl).matrix.matvec(omega.coeffs());
    mw.iter().sum()
}

/// `‖∇·u‖_{L²}` with the incidence divergence.
pub fn div_l2(asm: &Assembler, u: &Field) -> f64 {
    let d = asm.complex().div().apply(u.coeffs());
    (2.0 * quadratic(asm, SpaceKind::L2, &d)).max(0.0).sqrt()
}

fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// `((K^k − K^{k−1})/Δt + 2ν E^{k−1/2}, (E^k − E^{k−1})/Δt + 2ν P^{k−1/2}, W^k − W^{k−1})`
/// where the half-step quantities are evaluated on the midpoint vorticity.
pub fn balance_residuals(asm: &Assembler, prev: &FlowState, curr: &FlowState, dt: f64, nu: f64) -> (f64, f64, f64) {
    let wm = midpoint(prev.omega.coeffs(), curr.omega.coeffs());
    let e_mid = quadratic(asm, SpaceKind::HCurl, &wm);
    let p_mid = quadratic(asm, SpaceKind::HDiv, &asm.complex().curl().apply(&wm));
    let dk = kinetic_energy(asm, &curr.u) - kinetic_energy(asm, &prev.u);
    let de = enstrophy(asm, &curr.omega) - enstrophy(asm, &prev.omega);
    let dw = total_vorticity(asm, &curr.omega) - total_vorticity(asm, &prev.omega);
    (dk / dt + 2.0 * nu * e_mid, de / dt + 2.0 * nu * p_mid, dw)
}

pub fn record(asm: &Assembler, state: &FlowState, prev: Option<&FlowState>, dt: f64, nu: f64) -> DiagnosticsRecord {
    let res = prev.map(|p| balance_residuals(asm, p, state, dt, nu));
    DiagnosticsRecord {
        k: state.k,
        t: state.t,
        kinetic: kinetic_energy(asm, &state.u),
        enstrophy: enstrophy(asm, &state.omega),
        palinstrophy: palinstrophy(asm, &state.omega),
        total_vorticity: total_vorticity(asm, &state.omega),
        div_l2: div_l2(asm, &state.u),
        energy_res: res.map(|r| r.0),
        enstrophy_res: res.map(|r| r.1),
        vorticity_res: res.map(|r| r.2),
    }
}
