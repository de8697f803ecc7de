//! Mass matrices, the trilinear convection form, boundary ports, load vectors
//! and canonical projections.
//!
//! All volume integrals use a tensor Gauss rule with `NQ` points per
//! direction on every element. The trilinear form
//! `a(ρ, ϑ, e) = ∫ ρ (ϑ × e) dΩ` is evaluated in reference coordinates: the
//! Piola factors cancel against the area element, so only the reference
//! weights enter and `A(ω)` is skew-symmetric bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::derham::{DeRhamComplex, Field, FunctionSpace, SpaceError, SpaceKind, Wall, WallSet};
use crate::mesh::JacobianSample;
use crate::polybasis::{BasisError, QuadRule};
use crate::sparse::CsrMatrix;

/// Gauss points per direction used when projecting analytic data. Flux
/// integrals must be accurate enough that the divergence of a projected
/// solenoidal field vanishes to round-off.
pub const PROJECTION_POINTS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("quadrature needs at least one point per direction")]
    InvalidQuadrature,
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadConfig {
    /// Gauss points per direction.
    pub nq: usize,
}

impl QuadConfig {
    pub fn new(nq: usize) -> Result<Self, AssemblyError> {
        if nq == 0 {
            return Err(AssemblyError::InvalidQuadrature);
        }
        Ok(Self { nq })
    }

    pub fn default_for(degree: usize) -> Self {
        Self { nq: degree + 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledOperator {
    pub matrix: CsrMatrix,
    pub domain: SpaceKind,
    pub codomain: SpaceKind,
    pub quad: QuadConfig,
}

impl AssembledOperator {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }
}

/// Element touching a wall, with the local coordinate of the wall.
#[derive(Debug, Clone, Copy)]
struct WallElement {
    elem: usize,
    wall: Wall,
}

impl WallElement {
    fn fixed(&self) -> f64 {
        match self.wall {
            Wall::Left | Wall::Bottom => -1.0,
            Wall::Right | Wall::Top => 1.0,
        }
    }

    /// Local point at wall parameter `t ∈ [-1, 1]`.
    fn point(&self, t: f64) -> [f64; 2] {
        match self.wall.normal_dir() {
            0 => [self.fixed(), t],
            _ => [t, self.fixed()],
        }
    }

    /// Local C index of the `m`-th node along the wall.
    fn c_local(&self, n: usize, m: usize) -> usize {
        let edge = if self.fixed() < 0.0 { 0 } else { n };
        match self.wall.normal_dir() {
            0 => m * (n + 1) + edge,
            _ => edge * (n + 1) + m,
        }
    }

    /// Local D index of the flux through the `m`-th wall segment (0-based).
    fn d_local(&self, n: usize, m: usize) -> usize {
        let edge = if self.fixed() < 0.0 { 0 } else { n };
        match self.wall.normal_dir() {
            0 => m * (n + 1) + edge,
            _ => n * (n + 1) + edge * n + m,
        }
    }

    /// Physical length element `|∂x/∂t|` at a local point.
    fn arc(&self, jac: &JacobianSample) -> f64 {
        let col = 1 - self.wall.normal_dir();
        jac.j[0][col].hypot(jac.j[1][col])
    }
}

/// Element assembler with cached basis tables and geometry.
#[derive(Debug)]
pub struct Assembler {
    complex: Arc<DeRhamComplex>,
    quad: QuadConfig,
    rule: QuadRule,
    projection_rule: QuadRule,
    c_tab: Vec<Vec<f64>>,
    d_tab: Vec<Vec<[f64; 2]>>,
    s_tab: Vec<Vec<f64>>,
    jac: Vec<Vec<JacobianSample>>,
    weights: Vec<f64>,
    mass_c: AssembledOperator,
    mass_d: AssembledOperator,
    mass_s: AssembledOperator,
}

fn tensor<T: Copy>(a: &[T], b: &[T]) -> Vec<(T, T)> {
    b.iter().flat_map(|&y| a.iter().map(move |&x| (x, y))).collect()
}

impl Assembler {
    pub fn new(complex: Arc<DeRhamComplex>, quad: QuadConfig) -> Result<Self, AssemblyError> {
        let quad = QuadConfig::new(quad.nq)?;
        let rule = QuadRule::gauss(quad.nq)?;
        let projection_rule = QuadRule::gauss(PROJECTION_POINTS.max(quad.nq))?;
        let basis = complex.basis().clone();
        let n = basis.degree();
        let mesh = complex.mesh().clone();
        let pts = tensor(rule.points(), rule.points());
        let weights = tensor(rule.weights(), rule.weights()).iter().map(|(a, b)| a * b).collect();

        let mut c_tab = Vec::with_capacity(pts.len());
        let mut d_tab = Vec::with_capacity(pts.len());
        let mut s_tab = Vec::with_capacity(pts.len());
        for &(xi, eta) in &pts {
            let (hx, hy) = (basis.lagrange_all(xi), basis.lagrange_all(eta));
            let (ex, ey) = (basis.edge_all(xi), basis.edge_all(eta));
            c_tab.push(tensor(&hx, &hy).iter().map(|(a, b)| a * b).collect());
            let mut d = Vec::with_capacity(2 * n * (n + 1));
            for &(h, e) in &tensor(&hx, &ey) {
                d.push([h * e, 0.0]);
            }
            for &(e, h) in &tensor(&ex, &hy) {
                d.push([0.0, e * h]);
            }
            d_tab.push(d);
            s_tab.push(tensor(&ex, &ey).iter().map(|(a, b)| a * b).collect());
        }
        let jac = (0..mesh.n_elements())
            .into_par_iter()
            .map(|e| pts.iter().map(|&(xi, eta)| mesh.element_jacobian(e, [xi, eta])).collect())
            .collect();

        let placeholder = AssembledOperator {
            matrix: CsrMatrix::zeros(0, 0),
            domain: SpaceKind::L2,
            codomain: SpaceKind::L2,
            quad,
        };
        let mut asm = Self {
            complex,
            quad,
            rule,
            projection_rule,
            c_tab,
            d_tab,
            s_tab,
            jac,
            weights,
            mass_c: placeholder.clone(),
            mass_d: placeholder.clone(),
            mass_s: placeholder,
        };
        asm.mass_c = asm.build_mass(SpaceKind::HCurl);
        asm.mass_d = asm.build_mass(SpaceKind::HDiv);
        asm.mass_s = asm.build_mass(SpaceKind::L2);
        Ok(asm)
    }

    pub fn complex(&self) -> &Arc<DeRhamComplex> {
        &self.complex
    }

    pub fn quad(&self) -> QuadConfig {
        self.quad
    }

    fn n_elements(&self) -> usize {
        self.complex.mesh().n_elements()
    }

    fn space(&self, kind: SpaceKind) -> &Arc<FunctionSpace> {
        self.complex.space(kind)
    }

    fn check(&self, field: &Field, kind: SpaceKind) -> Result<(), SpaceError> {
        if field.kind() != kind {
            return Err(SpaceError::KindMismatch {
                expected: kind,
                got: field.kind(),
            });
        }
        if **field.space() != **self.space(kind) {
            return Err(SpaceError::SpaceMismatch);
        }
        Ok(())
    }

    /// Scatters per-element dense blocks. Elements are computed in parallel
    /// and merged in element order so the result does not depend on scheduling.
    fn scatter<F>(&self, rows: SpaceKind, cols: SpaceKind, local: F) -> CsrMatrix
    where
        F: Fn(usize) -> Vec<f64> + Sync,
    {
        let (rs, cs) = (self.space(rows), self.space(cols));
        let nc = cs.n_local();
        let blocks: Vec<Vec<f64>> = (0..self.n_elements()).into_par_iter().map(&local).collect();
        let mut trips = Vec::with_capacity(blocks.iter().map(Vec::len).sum());
        for (e, block) in blocks.iter().enumerate() {
            let (rg, cg) = (rs.local_to_global(e), cs.local_to_global(e));
            for (i, &gi) in rg.iter().enumerate() {
                for (j, &gj) in cg.iter().enumerate() {
                    trips.push((gi, gj, block[i * nc + j]));
                }
            }
        }
        CsrMatrix::from_triplets(rs.n_dofs(), cs.n_dofs(), trips)
    }

    fn scatter_vector<F>(&self, kind: SpaceKind, local: F) -> Vec<f64>
    where
        F: Fn(usize) -> Vec<f64> + Sync,
    {
        let sp = self.space(kind);
        let blocks: Vec<Vec<f64>> = (0..self.n_elements()).into_par_iter().map(&local).collect();
        let mut out = vec![0.0; sp.n_dofs()];
        for (e, block) in blocks.iter().enumerate() {
            for (&g, v) in sp.local_to_global(e).iter().zip(block) {
                out[g] += v;
            }
        }
        out
    }

    fn build_mass(&self, kind: SpaceKind) -> AssembledOperator {
        let nl = self.space(kind).n_local();
        let matrix = self.scatter(kind, kind, |e| {
            let mut m = vec![0.0; nl * nl];
            for (q, &w) in self.weights.iter().enumerate() {
                let jac = &self.jac[e][q];
                match kind {
                    SpaceKind::HCurl => {
                        let phi = &self.c_tab[q];
                        let wq = w * jac.det;
                        for i in 0..nl {
                            for j in 0..nl {
                                m[i * nl + j] += wq * phi[i] * phi[j];
                            }
                        }
                    }
                    SpaceKind::HDiv => {
                        // JᵀJ / det J
                        let j = &jac.j;
                        let g00 = (j[0][0] * j[0][0] + j[1][0] * j[1][0]) / jac.det;
                        let g01 = (j[0][0] * j[0][1] + j[1][0] * j[1][1]) / jac.det;
                        let g11 = (j[0][1] * j[0][1] + j[1][1] * j[1][1]) / jac.det;
                        let d = &self.d_tab[q];
                        for i in 0..nl {
                            let gi = [g00 * d[i][0] + g01 * d[i][1], g01 * d[i][0] + g11 * d[i][1]];
                            for j in 0..nl {
                                m[i * nl + j] += w * (gi[0] * d[j][0] + gi[1] * d[j][1]);
                            }
                        }
                    }
                    SpaceKind::L2 => {
                        let s = &self.s_tab[q];
                        let wq = w / jac.det;
                        for i in 0..nl {
                            for j in 0..nl {
                                m[i * nl + j] += wq * s[i] * s[j];
                            }
                        }
                    }
                }
            }
            // exact symmetry regardless of summation order
            for i in 0..nl {
                for j in 0..i {
                    m[i * nl + j] = m[j * nl + i];
                }
            }
            m
        });
        AssembledOperator {
            matrix,
            domain: kind,
            codomain: kind,
            quad: self.quad,
        }
    }

    pub fn mass_matrix(&self, kind: SpaceKind) -> &AssembledOperator {
        match kind {
            SpaceKind::HCurl => &self.mass_c,
            SpaceKind::HDiv => &self.mass_d,
            SpaceKind::L2 => &self.mass_s,
        }
    }

    fn local_scalar(&self, local: &[f64], q: usize) -> f64 {
        self.c_tab[q].iter().zip(local).map(|(p, c)| p * c).sum()
    }

    fn local_flux(&self, local: &[f64], q: usize) -> [f64; 2] {
        self.d_tab[q].iter().zip(local).fold([0.0, 0.0], |acc, (d, c)| {
            [acc[0] + c * d[0], acc[1] + c * d[1]]
        })
    }

    /// `A(ω)[i, j] = a(ω, d_j, d_i)`.
    pub fn convection_matrix(&self, omega: &Field) -> Result<AssembledOperator, SpaceError> {
        self.check(omega, SpaceKind::HCurl)?;
        let nl = self.space(SpaceKind::HDiv).n_local();
        let matrix = self.scatter(SpaceKind::HDiv, SpaceKind::HDiv, |e| {
            let om = omega.local_coeffs(e);
            let mut m = vec![0.0; nl * nl];
            for (q, &w) in self.weights.iter().enumerate() {
                let wq = w * self.local_scalar(&om, q);
                let d = &self.d_tab[q];
                for i in 0..nl {
                    for j in 0..nl {
                        m[i * nl + j] += wq * cross(d[j], d[i]);
                    }
                }
            }
            m
        });
        Ok(AssembledOperator {
            matrix,
            domain: SpaceKind::HDiv,
            codomain: SpaceKind::HDiv,
            quad: self.quad,
        })
    }

    /// `A(ω) u` without forming the matrix.
    pub fn convection_apply(&self, omega: &Field, u: &Field) -> Result<Vec<f64>, SpaceError> {
        self.check(omega, SpaceKind::HCurl)?;
        self.check(u, SpaceKind::HDiv)?;
        Ok(self.scatter_vector(SpaceKind::HDiv, |e| {
            let (om, ul) = (omega.local_coeffs(e), u.local_coeffs(e));
            let mut out = vec![0.0; ul.len()];
            for (q, &w) in self.weights.iter().enumerate() {
                let wq = w * self.local_scalar(&om, q);
                let uq = self.local_flux(&ul, q);
                for (o, d) in out.iter_mut().zip(&self.d_tab[q]) {
                    *o += wq * cross(uq, *d);
                }
            }
            out
        }))
    }

    /// `B(u)[i, k] = a(c_k, u, d_i)`, so that `A(ω) u = B(u) ω`.
    pub fn convection_jacobian_wrt_omega(&self, u: &Field) -> Result<AssembledOperator, SpaceError> {
        self.check(u, SpaceKind::HDiv)?;
        let nd = self.space(SpaceKind::HDiv).n_local();
        let nc = self.space(SpaceKind::HCurl).n_local();
        let matrix = self.scatter(SpaceKind::HDiv, SpaceKind::HCurl, |e| {
            let ul = u.local_coeffs(e);
            let mut m = vec![0.0; nd * nc];
            for (q, &w) in self.weights.iter().enumerate() {
                let uq = self.local_flux(&ul, q);
                let (d, c) = (&self.d_tab[q], &self.c_tab[q]);
                for i in 0..nd {
                    let t = w * cross(uq, d[i]);
                    for k in 0..nc {
                        m[i * nc + k] += t * c[k];
                    }
                }
            }
            m
        });
        Ok(AssembledOperator {
            matrix,
            domain: SpaceKind::HCurl,
            codomain: SpaceKind::HDiv,
            quad: self.quad,
        })
    }

    /// `a(ω, u, ∇×ω)` with the curl taken through the incidence matrix.
    pub fn curl_trilinear_probe(&self, omega: &Field, u: &Field) -> Result<f64, SpaceError> {
        let au = self.convection_apply(omega, u)?;
        let curl = self.complex.curl().apply(omega.coeffs());
        Ok(crate::sparse::dot(&au, &curl))
    }

    fn wall_elements(&self, wall: Wall) -> Vec<WallElement> {
        let mesh = self.complex.mesh();
        let k = mesh.k();
        (0..k)
            .map(|m| {
                let (i, j) = match wall {
                    Wall::Left => (0, m),
                    Wall::Right => (k - 1, m),
                    Wall::Bottom => (m, 0),
                    Wall::Top => (m, k - 1),
                };
                WallElement {
                    elem: mesh.element_id(i, j),
                    wall,
                }
            })
            .collect()
    }

    fn check_walls(&self, walls: WallSet) -> Result<(), SpaceError> {
        let mesh = self.complex.mesh();
        for w in walls.walls() {
            if mesh.periodic(w.normal_dir()) {
                return Err(SpaceError::PeriodicBoundary(w));
            }
        }
        Ok(())
    }

    /// `g[i] = ∫_Γ P̂ (d_i · n) dΓ` over `walls`, with the outward normal `n`.
    pub fn natural_bc_pressure<F>(&self, phat: F, walls: WallSet) -> Result<Vec<f64>, SpaceError>
    where
        F: Fn(f64, f64) -> f64,
    {
        self.check_walls(walls)?;
        let d = self.space(SpaceKind::HDiv);
        let basis = self.complex.basis();
        let n = basis.degree();
        let mesh = self.complex.mesh();
        let mut g = vec![0.0; d.n_dofs()];
        for wall in walls.walls() {
            let sign = wall.outward_sign();
            for we in self.wall_elements(wall) {
                let l2g = d.local_to_global(we.elem);
                for (&t, &w) in self.rule.points().iter().zip(self.rule.weights()) {
                    let x = mesh.local_to_physical(we.elem, we.point(t));
                    let p = phat(x[0], x[1]);
                    // normal flux of the wall basis functions is e_m(t) dt
                    for (m, e) in basis.edge_all(t).into_iter().enumerate() {
                        g[l2g[we.d_local(n, m)]] += sign * w * p * e;
                    }
                }
            }
        }
        Ok(g)
    }

    /// `g[i] = ∫_Γ û∥ ξ_i dΓ` over `walls`, where `û∥ = u_x n_y − u_y n_x`.
    pub fn natural_bc_tangential<F>(&self, upar: F, walls: WallSet) -> Result<Vec<f64>, SpaceError>
    where
        F: Fn(f64, f64) -> f64,
    {
        self.check_walls(walls)?;
        let c = self.space(SpaceKind::HCurl);
        let basis = self.complex.basis();
        let n = basis.degree();
        let mesh = self.complex.mesh();
        let mut g = vec![0.0; c.n_dofs()];
        for wall in walls.walls() {
            for we in self.wall_elements(wall) {
                let l2g = c.local_to_global(we.elem);
                for (&t, &w) in self.rule.points().iter().zip(self.rule.weights()) {
                    let p = we.point(t);
                    let x = mesh.local_to_physical(we.elem, p);
                    let ds = we.arc(&mesh.element_jacobian(we.elem, p));
                    let val = upar(x[0], x[1]) * ds * w;
                    for (m, h) in basis.lagrange_all(t).into_iter().enumerate() {
                        g[l2g[we.c_local(n, m)]] += val * h;
                    }
                }
            }
        }
        Ok(g)
    }

    /// Values of essential flux data: each wall flux dof receives
    /// `∫ û⊥ dΓ` over its segment, signed by the dof orientation.
    pub fn boundary_flux_values<F>(&self, unormal: F, walls: WallSet) -> Result<Vec<(usize, f64)>, SpaceError>
    where
        F: Fn(f64, f64) -> f64,
    {
        self.check_walls(walls)?;
        let d = self.space(SpaceKind::HDiv);
        let nodes = self.complex.basis().nodes().to_vec();
        let n = nodes.len() - 1;
        let mesh = self.complex.mesh();
        let mut out = Vec::new();
        for wall in walls.walls() {
            let sign = wall.outward_sign();
            for we in self.wall_elements(wall) {
                let l2g = d.local_to_global(we.elem);
                for m in 0..n {
                    let v: f64 = self
                        .projection_rule
                        .mapped(nodes[m], nodes[m + 1])
                        .map(|(t, w)| {
                            let p = we.point(t);
                            let x = mesh.local_to_physical(we.elem, p);
                            w * unormal(x[0], x[1]) * we.arc(&mesh.element_jacobian(we.elem, p))
                        })
                        .sum();
                    out.push((l2g[we.d_local(n, m)], sign * v));
                }
            }
        }
        out.sort_by_key(|&(i, _)| i);
        out.dedup_by_key(|&mut (i, _)| i);
        Ok(out)
    }

    /// Nodal values of essential vorticity data on `walls`.
    pub fn boundary_node_values<F>(&self, omega: F, walls: WallSet) -> Result<Vec<(usize, f64)>, SpaceError>
    where
        F: Fn(f64, f64) -> f64,
    {
        self.check_walls(walls)?;
        let c = self.space(SpaceKind::HCurl);
        let nodes = self.complex.basis().nodes();
        let n = nodes.len() - 1;
        let mesh = self.complex.mesh();
        let mut out = Vec::new();
        for wall in walls.walls() {
            for we in self.wall_elements(wall) {
                let l2g = c.local_to_global(we.elem);
                for (m, &t) in nodes.iter().enumerate() {
                    let x = mesh.local_to_physical(we.elem, we.point(t));
                    out.push((l2g[we.c_local(n, m)], omega(x[0], x[1])));
                }
            }
        }
        out.sort_by_key(|&(i, _)| i);
        out.dedup_by_key(|&mut (i, _)| i);
        Ok(out)
    }

    /// Interpolation at the mapped GLL nodes.
    pub fn project_c<F>(&self, f: F) -> Field
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        let sp = self.space(SpaceKind::HCurl).clone();
        let nodes = self.complex.basis().nodes();
        let mesh = self.complex.mesh();
        let mut coeffs = vec![0.0; sp.n_dofs()];
        for e in 0..self.n_elements() {
            for (l, &g) in sp.local_to_global(e).iter().enumerate() {
                let n1 = nodes.len();
                let x = mesh.local_to_physical(e, [nodes[l % n1], nodes[l / n1]]);
                coeffs[g] = f(x[0], x[1]);
            }
        }
        Field::new(sp, coeffs).expect("length matches space")
    }

    /// Normal-flux integrals over the mapped edge segments.
    pub fn project_d<F>(&self, f: F) -> Field
    where
        F: Fn(f64, f64) -> [f64; 2] + Sync,
    {
        let sp = self.space(SpaceKind::HDiv).clone();
        let nodes = self.complex.basis().nodes();
        let n = nodes.len() - 1;
        let mesh = self.complex.mesh();
        let nx = n * (n + 1);
        let values: Vec<Vec<f64>> = (0..self.n_elements())
            .into_par_iter()
            .map(|e| {
                (0..sp.n_local())
                    .map(|l| {
                        let (fixed, lo, hi, vertical) = if l < nx {
                            (nodes[l % (n + 1)], nodes[l / (n + 1)], nodes[l / (n + 1) + 1], true)
                        } else {
                            let l = l - nx;
                            (nodes[l / n], nodes[l % n], nodes[l % n + 1], false)
                        };
                        self.projection_rule
                            .mapped(lo, hi)
                            .map(|(t, w)| {
                                let p = if vertical { [fixed, t] } else { [t, fixed] };
                                let x = mesh.local_to_physical(e, p);
                                let j = mesh.element_jacobian(e, p).j;
                                let v = f(x[0], x[1]);
                                // (∂y/∂η, -∂x/∂η) dη or (-∂y/∂ξ, ∂x/∂ξ) dξ
                                let nrm = if vertical {
                                    [j[1][1], -j[0][1]]
                                } else {
                                    [-j[1][0], j[0][0]]
                                };
                                w * (v[0] * nrm[0] + v[1] * nrm[1])
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let mut coeffs = vec![0.0; sp.n_dofs()];
        for (e, vals) in values.iter().enumerate() {
            for (&g, &v) in sp.local_to_global(e).iter().zip(vals) {
                coeffs[g] = v;
            }
        }
        Field::new(sp, coeffs).expect("length matches space")
    }

    /// Integrals over the mapped GLL sub-cells.
    pub fn project_s<F>(&self, f: F) -> Field
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        let sp = self.space(SpaceKind::L2).clone();
        let nodes = self.complex.basis().nodes();
        let n = nodes.len() - 1;
        let mesh = self.complex.mesh();
        let values: Vec<Vec<f64>> = (0..self.n_elements())
            .into_par_iter()
            .map(|e| {
                (0..sp.n_local())
                    .map(|l| {
                        let (k, m) = (l % n, l / n);
                        let mut acc = 0.0;
                        for (xi, wx) in self.projection_rule.mapped(nodes[k], nodes[k + 1]) {
                            for (eta, wy) in self.projection_rule.mapped(nodes[m], nodes[m + 1]) {
                                let x = mesh.local_to_physical(e, [xi, eta]);
                                acc += wx * wy * f(x[0], x[1]) * mesh.element_jacobian(e, [xi, eta]).det;
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut coeffs = vec![0.0; sp.n_dofs()];
        for (e, vals) in values.iter().enumerate() {
            for (&g, &v) in sp.local_to_global(e).iter().zip(vals) {
                coeffs[g] = v;
            }
        }
        Field::new(sp, coeffs).expect("length matches space")
    }

    /// `F[i] = ∫ f · d_i dΩ`.
    pub fn force_load<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(f64, f64) -> [f64; 2] + Sync,
    {
        let mesh = self.complex.mesh();
        let pts = tensor(self.rule.points(), self.rule.points());
        self.scatter_vector(SpaceKind::HDiv, |e| {
            let nl = self.space(SpaceKind::HDiv).n_local();
            let mut out = vec![0.0; nl];
            for (q, &w) in self.weights.iter().enumerate() {
                let (xi, eta) = pts[q];
                let x = mesh.local_to_physical(e, [xi, eta]);
                let fv = f(x[0], x[1]);
                let jac = &self.jac[e][q];
                for (o, d) in out.iter_mut().zip(&self.d_tab[q]) {
                    let v = jac.apply(*d);
                    *o += w * (v[0] * fv[0] + v[1] * fv[1]);
                }
            }
            out
        })
    }
}

/// `p × q = p_x q_y − p_y q_x`.
#[inline]
pub fn cross(p: [f64; 2], q: [f64; 2]) -> f64 {
    p[0] * q[1] - p[1] * q[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Mesh, MeshConfig};
    use crate::sparse::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn assembler(k: usize, n: usize, c: f64, scale: f64, periodic: bool, nq: usize) -> Assembler {
        let mesh = Mesh::new(MeshConfig::new(k, c, scale).periodic(periodic)).unwrap();
        let cx = DeRhamComplex::new(Arc::new(mesh), n).unwrap();
        Assembler::new(Arc::new(cx), QuadConfig::new(nq).unwrap()).unwrap()
    }

    fn random_field(asm: &Assembler, kind: SpaceKind, rng: &mut ChaCha8Rng) -> Field {
        let sp = asm.complex().space(kind).clone();
        let v = (0..sp.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::new(sp, v).unwrap()
    }

    #[test]
    fn quad_config_rejects_zero() {
        assert!(QuadConfig::new(0).is_err());
        assert_eq!(QuadConfig::default_for(2).nq, 5);
    }

    #[test]
    fn mass_matrices_basic() {
        let asm = assembler(1, 1, 0.0, 1.0, false, 4);
        let ms = asm.mass_matrix(SpaceKind::L2).matrix.to_dense();
        assert_eq!((ms.len(), ms[0].len()), (1, 1));
        // Gauss weights sum to 2 up to rounding
        assert!((ms[0][0] - 1.0).abs() <= 4.0 * f64::EPSILON);
        let asm = assembler(3, 2, 0.0, 1.0, false, 5);
        let ms = &asm.mass_matrix(SpaceKind::L2).matrix;
        // coefficients of the unit density are the sub-cell areas
        let one = asm.project_s(|_, _| 1.0);
        assert!((dot(one.coeffs(), &ms.matvec(one.coeffs())) - 1.0).abs() < 1e-14);
        for kind in [SpaceKind::HCurl, SpaceKind::HDiv, SpaceKind::L2] {
            let m = &asm.mass_matrix(kind).matrix;
            assert_eq!(m.add(&m.transpose().scale(-1.0)).max_abs(), 0.0);
        }
    }

    #[test]
    fn mass_c_integrates_area_on_curved_mesh() {
        let asm = assembler(4, 3, 0.25, 2.0, true, 6);
        let m = &asm.mass_matrix(SpaceKind::HCurl).matrix;
        let ones = vec![1.0; m.nrows()];
        assert!((dot(&ones, &m.matvec(&ones)) - 4.0).abs() < 1e-10);
    }

    #[test]
    fn convection_is_skew_for_any_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (c, periodic) in [(0.0, true), (0.25, false), (0.3, true)] {
            for nq in 1..=5 {
                let asm = assembler(3, 2, c, 1.0, periodic, nq);
                let w = random_field(&asm, SpaceKind::HCurl, &mut rng);
                let a = asm.convection_matrix(&w).unwrap().matrix;
                assert!(a.add(&a.transpose()).max_abs() <= 1e-13);
                let u = random_field(&asm, SpaceKind::HDiv, &mut rng);
                assert!(dot(u.coeffs(), &a.matvec(u.coeffs())).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn convection_linear_and_bilinear_bridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let asm = assembler(2, 2, 0.2, 1.0, false, 5);
        let w1 = random_field(&asm, SpaceKind::HCurl, &mut rng);
        let w2 = random_field(&asm, SpaceKind::HCurl, &mut rng);
        let sum: Vec<f64> = w1.coeffs().iter().zip(w2.coeffs()).map(|(a, b)| a + b).collect();
        let w12 = Field::new(w1.space().clone(), sum).unwrap();
        let a1 = asm.convection_matrix(&w1).unwrap().matrix;
        let a2 = asm.convection_matrix(&w2).unwrap().matrix;
        let a12 = asm.convection_matrix(&w12).unwrap().matrix;
        assert!(a12.add(&a1.add(&a2).scale(-1.0)).max_abs() <= 1e-13);

        let u = random_field(&asm, SpaceKind::HDiv, &mut rng);
        let au = a1.matvec(u.coeffs());
        let b = asm.convection_jacobian_wrt_omega(&u).unwrap().matrix;
        let bw = b.matvec(w1.coeffs());
        let applied = asm.convection_apply(&w1, &u).unwrap();
        for i in 0..au.len() {
            assert!((au[i] - bw[i]).abs() <= 1e-12);
            assert!((au[i] - applied[i]).abs() <= 1e-12);
        }
        let zero = Field::zeros(asm.complex().hcurl().clone());
        assert!(asm.convection_matrix(&zero).unwrap().matrix.is_zero());
        let zero = Field::zeros(asm.complex().hdiv().clone());
        assert!(asm.convection_jacobian_wrt_omega(&zero).unwrap().matrix.is_zero());
    }

    #[test]
    fn convection_matches_physical_quadrature() {
        // independent evaluation through physical reconstructions and det J
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let asm = assembler(2, 2, 0.25, 1.0, false, 6);
        let w = random_field(&asm, SpaceKind::HCurl, &mut rng);
        let u = random_field(&asm, SpaceKind::HDiv, &mut rng);
        let v = random_field(&asm, SpaceKind::HDiv, &mut rng);
        let rule = QuadRule::gauss(6).unwrap();
        let mesh = asm.complex().mesh();
        let mut direct = 0.0;
        for e in 0..mesh.n_elements() {
            for (i, &xi) in rule.points().iter().enumerate() {
                for (j, &eta) in rule.points().iter().enumerate() {
                    let p = [xi, eta];
                    let wq = rule.weights()[i] * rule.weights()[j] * mesh.element_jacobian(e, p).det;
                    let om = w.values(e, &[p]).unwrap()[0];
                    let (uu, vv) = (u.vectors(e, &[p]).unwrap()[0], v.vectors(e, &[p]).unwrap()[0]);
                    direct += wq * om * cross(uu, vv);
                }
            }
        }
        let a = asm.convection_matrix(&w).unwrap().matrix;
        let via = dot(v.coeffs(), &a.matvec(u.coeffs()));
        assert!((direct - via).abs() < 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn pressure_port() {
        let asm = assembler(3, 2, 0.0, 1.0, false, 5);
        let left = WallSet::of(&[Wall::Left]);
        assert!(asm.natural_bc_pressure(|_, _| 0.0, left).unwrap().iter().all(|&v| v == 0.0));
        assert!(asm.natural_bc_pressure(|_, _| 1.0, WallSet::EMPTY).unwrap().iter().all(|&v| v == 0.0));
        // pairing with a field of unit outward normal flux gives the wall length
        let v = asm.project_d(|_, _| [-1.0, 0.0]);
        let g = asm.natural_bc_pressure(|_, _| 1.0, left).unwrap();
        assert!((dot(&g, v.coeffs()) - 1.0).abs() < 1e-13);
        let g = asm.natural_bc_pressure(|_, y| y * y, left).unwrap();
        assert!((dot(&g, v.coeffs()) - 1.0 / 3.0).abs() < 1e-13);
        // only the wall's normal flux dofs are touched
        let bd = asm.complex().hdiv().boundary_dofs(left).unwrap();
        for (i, &gi) in g.iter().enumerate() {
            assert!(gi == 0.0 || bd.contains(&i));
        }
        let pasm = assembler(2, 2, 0.0, 1.0, true, 4);
        assert!(pasm.natural_bc_pressure(|_, _| 1.0, left).is_err());
    }

    #[test]
    fn tangential_port() {
        let asm = assembler(3, 2, 0.25, 2.0, false, 6);
        let bottom = WallSet::of(&[Wall::Bottom]);
        assert!(asm.natural_bc_tangential(|_, _| 0.0, bottom).unwrap().iter().all(|&v| v == 0.0));
        let g = asm.natural_bc_tangential(|_, _| 1.0, bottom).unwrap();
        // the deformation vanishes on the boundary, so the wall stays straight
        assert!((g.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let all = asm.natural_bc_tangential(|_, _| 1.0, WallSet::ALL).unwrap();
        assert!((all.iter().sum::<f64>() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn projections() {
        let asm = assembler(3, 3, 0.25, 1.0, false, 6);
        let c = asm.project_c(|_, _| 5.0);
        assert!(c.coeffs().iter().all(|&v| v == 5.0));
        let s = asm.project_s(|_, _| 2.0);
        let ones = vec![1.0; s.coeffs().len()];
        assert!((dot(&ones, s.coeffs()) - 2.0).abs() < 1e-12);
        // solenoidal field: divergence of the projection vanishes
        let u = asm.project_d(|x, y| {
            [(PI * x).sin() * (PI * y).cos(), -(PI * x).cos() * (PI * y).sin()]
        });
        let div = asm.complex().div().apply(u.coeffs());
        assert!(div.iter().all(|v| v.abs() < 1e-13));
        // on an affine map the constant density lies in S
        let asm = assembler(3, 3, 0.0, 1.0, false, 6);
        let s = asm.project_s(|_, _| 2.0);
        let back = s.values(4, &[[0.3, -0.2], [0.9, 0.9]]).unwrap();
        assert!(back.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn projection_accuracy_spectral() {
        let asm = assembler(10, 6, 0.0, 2.0, true, 9);
        let w = asm.project_c(|x, y| 2.0 * PI * (PI * x).sin() * (PI * y).sin());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mesh = asm.complex().mesh();
        for _ in 0..200 {
            let e = rng.random_range(0..mesh.n_elements());
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x = mesh.local_to_physical(e, p);
            let exact = 2.0 * PI * (PI * x[0]).sin() * (PI * x[1]).sin();
            assert!((w.values(e, &[p]).unwrap()[0] - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_vector_in_d_on_curved_mesh() {
        // pre-asymptotic on coarse meshes; the rate settles at N from K = 16 on
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&k| {
                let asm = assembler(k, 3, 0.25, 1.0, false, 6);
                let u = asm.project_d(|_, _| [1.0, 0.0]);
                let grid: Vec<[f64; 2]> = (0..=8)
                    .flat_map(|i| (0..=8).map(move |j| [-1.0 + 0.25 * i as f64, -1.0 + 0.25 * j as f64]))
                    .collect();
                (0..k * k)
                    .flat_map(|e| u.vectors(e, &grid).unwrap())
                    .fold(0.0f64, |m, v| m.max((v[0] - 1.0).abs().max(v[1].abs())))
            })
            .collect();
        assert!(errs[0] < 1e-2 && errs[1] < 1e-3);
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 3.0 - 0.1, "{errs:?}");
        }
        let asm = assembler(3, 2, 0.0, 1.0, false, 4);
        let u = asm.project_d(|_, _| [1.0, 0.0]);
        let v = u.vectors(3, &[[0.1, 0.7]]).unwrap()[0];
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn force_load_oracles() {
        let asm = assembler(2, 2, 0.0, 1.0, false, 4);
        assert!(asm.force_load(|_, _| [0.0, 0.0]).iter().all(|&v| v == 0.0));
        // constant force pairs with the integral of each basis function,
        // which equals the flux-weighted area: check via a projected constant field
        let f = asm.force_load(|_, _| [1.0, 0.0]);
        let u = asm.project_d(|_, _| [1.0, 0.0]);
        assert!((dot(&f, u.coeffs()) - 1.0).abs() < 1e-13);
        let g = asm.force_load(|_, _| [2.0, 0.0]);
        assert!(f.iter().zip(&g).all(|(a, b)| (2.0 * a - b).abs() < 1e-15));
    }
}
