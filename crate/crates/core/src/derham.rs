//! Discrete spaces `C ⊂ H(curl)`, `D ⊂ H(div)`, `S ⊂ L²` on a mapped
//! quadrilateral mesh and the metric-free incidence matrices
//! `curl: C → D`, `div: D → S`.
//!
//! Degrees of freedom (per element, tensor GLL nodes `ξ_0..ξ_N`):
//! * `C`: nodal values `ψ(ξ_a, η_b)`, shared across element interfaces.
//! * `D`: fluxes through the edge segments between consecutive GLL nodes,
//!   oriented along `+ξ` (vertical segments) and `+η` (horizontal segments).
//!   Fields are carried to physical space by the contravariant Piola map
//!   `u = J û / det J`.
//! * `S`: integrals over the GLL sub-cells; physical density `σ = σ̂ / det J`.
//!
//! With these conventions both incidence matrices carry only `-1/0/+1`.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

use crate::mesh::Mesh;
use crate::polybasis::{BasisError, NodeSet};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("expected a {expected} field, got {got}")]
    KindMismatch { expected: SpaceKind, got: SpaceKind },
    #[error("spaces are built on different meshes or degrees")]
    SpaceMismatch,
    #[error("coefficient vector has length {got}, space has {expected} dofs")]
    Length { expected: usize, got: usize },
    #[error("wall {0:?} lies on a periodic direction and has no boundary")]
    PeriodicBoundary(Wall),
    #[error("boundary sections {0} and {1} overlap")]
    Overlap(WallSet, WallSet),
    #[error("boundary sections {0} and {1} do not cover the boundary")]
    Uncovered(WallSet, WallSet),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpaceKind {
    /// Nodal space `C(Ω) ⊂ H(curl)`.
    HCurl,
    /// Flux space `D(Ω) ⊂ H(div)`.
    HDiv,
    /// Volume space `S(Ω) ⊂ L²`.
    L2,
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpaceKind::HCurl => "H(curl)",
            SpaceKind::HDiv => "H(div)",
            SpaceKind::L2 => "L2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wall {
    Left,
    Right,
    Bottom,
    Top,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::Left, Wall::Right, Wall::Bottom, Wall::Top];

    /// Reference direction normal to the wall (0: `r`, 1: `s`).
    pub fn normal_dir(self) -> usize {
        match self {
            Wall::Left | Wall::Right => 0,
            Wall::Bottom | Wall::Top => 1,
        }
    }

    /// `+1` where the outward normal points along the positive reference axis.
    pub fn outward_sign(self) -> f64 {
        match self {
            Wall::Left | Wall::Bottom => -1.0,
            Wall::Right | Wall::Top => 1.0,
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// A boundary section made of whole walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Wall>", into = "Vec<Wall>")]
pub struct WallSet(u8);

impl WallSet {
    pub const EMPTY: WallSet = WallSet(0);
    pub const ALL: WallSet = WallSet(0b1111);

    pub fn of(walls: &[Wall]) -> Self {
        WallSet(walls.iter().fold(0, |m, w| m | w.bit()))
    }

    pub fn contains(self, wall: Wall) -> bool {
        self.0 & wall.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: WallSet) -> WallSet {
        WallSet(self.0 | other.0)
    }

    pub fn intersection(self, other: WallSet) -> WallSet {
        WallSet(self.0 & other.0)
    }

    pub fn complement_in(self, universe: WallSet) -> WallSet {
        WallSet(universe.0 & !self.0)
    }

    pub fn walls(self) -> impl Iterator<Item = Wall> {
        Wall::ALL.into_iter().filter(move |w| self.contains(*w))
    }

    /// Walls that exist on `mesh` (those normal to a non-periodic direction).
    pub fn boundary_of(mesh: &Mesh) -> WallSet {
        WallSet::of(
            &Wall::ALL
                .into_iter()
                .filter(|w| !mesh.periodic(w.normal_dir()))
                .collect::<Vec<_>>(),
        )
    }
}

impl From<Vec<Wall>> for WallSet {
    fn from(v: Vec<Wall>) -> Self {
        WallSet::of(&v)
    }
}

impl From<WallSet> for Vec<Wall> {
    fn from(w: WallSet) -> Self {
        w.walls().collect()
    }
}

impl fmt::Display for WallSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.walls().map(|w| format!("{w:?}").to_lowercase()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// One pair of complementary boundary sections, e.g. `(Γ⊥, Γ_P̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryPartition {
    essential: WallSet,
    natural: WallSet,
}

impl BoundaryPartition {
    /// Sections must be disjoint and cover every existing wall of `mesh`.
    pub fn new(mesh: &Mesh, essential: WallSet, natural: WallSet) -> Result<Self, SpaceError> {
        let boundary = WallSet::boundary_of(mesh);
        for w in essential.union(natural).walls() {
            if !boundary.contains(w) {
                return Err(SpaceError::PeriodicBoundary(w));
            }
        }
        if !essential.intersection(natural).is_empty() {
            return Err(SpaceError::Overlap(essential, natural));
        }
        if essential.union(natural) != boundary {
            return Err(SpaceError::Uncovered(essential, natural));
        }
        Ok(Self { essential, natural })
    }

    pub fn essential(&self) -> WallSet {
        self.essential
    }

    pub fn natural(&self) -> WallSet {
        self.natural
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum DofKey {
    Node(usize, usize),
    XFlux(usize, usize),
    YFlux(usize, usize),
    Cell(usize, usize),
}

#[derive(Debug)]
pub struct FunctionSpace {
    kind: SpaceKind,
    mesh: Arc<Mesh>,
    basis: Arc<NodeSet>,
    n_dofs: usize,
    n_local: usize,
    local_to_global: Vec<usize>,
    index: HashMap<DofKey, usize>,
}

impl PartialEq for FunctionSpace {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.basis.degree() == other.basis.degree()
            && (Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh)
    }
}

impl FunctionSpace {
    pub fn new(mesh: Arc<Mesh>, basis: Arc<NodeSet>, kind: SpaceKind) -> Self {
        let n = basis.degree();
        let n_local = match kind {
            SpaceKind::HCurl => (n + 1) * (n + 1),
            SpaceKind::HDiv => 2 * n * (n + 1),
            SpaceKind::L2 => n * n,
        };
        let mut space = Self {
            kind,
            mesh,
            basis,
            n_dofs: 0,
            n_local,
            local_to_global: Vec::new(),
            index: HashMap::new(),
        };
        let n_elem = space.mesh.n_elements();
        let mut l2g = Vec::with_capacity(n_elem * n_local);
        let mut index = HashMap::new();
        for e in 0..n_elem {
            for l in 0..n_local {
                let key = space.local_key(e, l);
                let next = index.len();
                l2g.push(*index.entry(key).or_insert(next));
            }
        }
        space.n_dofs = index.len();
        space.local_to_global = l2g;
        space.index = index;
        space
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn basis(&self) -> &Arc<NodeSet> {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn local_to_global(&self, elem: usize) -> &[usize] {
        &self.local_to_global[elem * self.n_local..(elem + 1) * self.n_local]
    }

    /// Global grid extent `K·N` along each direction.
    fn grid(&self) -> usize {
        self.mesh.k() * self.degree()
    }

    fn wrap(&self, v: usize, dir: usize) -> usize {
        if self.mesh.periodic(dir) && v == self.grid() {
            0
        } else {
            v
        }
    }

    fn local_key(&self, elem: usize, local: usize) -> DofKey {
        let n = self.degree();
        let (ei, ej) = self.mesh.element_ij(elem);
        let (bx, by) = (ei * n, ej * n);
        match self.kind {
            SpaceKind::HCurl => {
                let (a, b) = (local % (n + 1), local / (n + 1));
                DofKey::Node(self.wrap(bx + a, 0), self.wrap(by + b, 1))
            }
            SpaceKind::HDiv => {
                let nx = n * (n + 1);
                if local < nx {
                    let (a, l) = (local % (n + 1), local / (n + 1));
                    DofKey::XFlux(self.wrap(bx + a, 0), by + l)
                } else {
                    let local = local - nx;
                    let (k, b) = (local % n, local / n);
                    DofKey::YFlux(bx + k, self.wrap(by + b, 1))
                }
            }
            SpaceKind::L2 => DofKey::Cell(bx + local % n, by + local / n),
        }
    }

    fn lookup(&self, key: DofKey) -> usize {
        self.index[&key]
    }

    fn node(&self, i: usize, j: usize) -> usize {
        self.lookup(DofKey::Node(self.wrap(i, 0), self.wrap(j, 1)))
    }

    fn xflux(&self, i: usize, l: usize) -> usize {
        self.lookup(DofKey::XFlux(self.wrap(i, 0), l))
    }

    fn yflux(&self, k: usize, j: usize) -> usize {
        self.lookup(DofKey::YFlux(k, self.wrap(j, 1)))
    }

    /// Global dofs carrying the trace on `walls`: nodal values for `C`,
    /// normal fluxes for `D`, nothing for `S`. Sorted and deduplicated.
    pub fn boundary_dofs(&self, walls: WallSet) -> Result<Vec<usize>, SpaceError> {
        let g = self.grid();
        let mut out = Vec::new();
        for w in walls.walls() {
            if self.mesh.periodic(w.normal_dir()) {
                return Err(SpaceError::PeriodicBoundary(w));
            }
            let fixed = match w {
                Wall::Left | Wall::Bottom => 0,
                Wall::Right | Wall::Top => g,
            };
            match (self.kind, w.normal_dir()) {
                (SpaceKind::HCurl, 0) => out.extend((0..=g).map(|j| self.node(fixed, j))),
                (SpaceKind::HCurl, _) => out.extend((0..=g).map(|i| self.node(i, fixed))),
                (SpaceKind::HDiv, 0) => out.extend((0..g).map(|l| self.xflux(fixed, l))),
                (SpaceKind::HDiv, _) => out.extend((0..g).map(|k| self.yflux(k, fixed))),
                (SpaceKind::L2, _) => {}
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    fn same_discretization(&self, other: &FunctionSpace) -> bool {
        self.degree() == other.degree()
            && (Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh)
    }
}

/// Builds one space and validates the boundary partitions it will be used with.
pub fn build_space(
    mesh: Arc<Mesh>,
    degree: usize,
    kind: SpaceKind,
    partitions: &[(WallSet, WallSet)],
) -> Result<FunctionSpace, SpaceError> {
    for &(a, b) in partitions {
        BoundaryPartition::new(&mesh, a, b)?;
    }
    let basis = Arc::new(NodeSet::gll(degree)?);
    Ok(FunctionSpace::new(mesh, basis, kind))
}

/// `C → D` or `D → S` topological operator.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    pub matrix: CsrMatrix,
    pub domain: SpaceKind,
    pub codomain: SpaceKind,
}

impl IncidenceMatrix {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }
}

/// Discrete curl `C → D`: the flux through each edge segment is the
/// difference of the nodal values at its end points.
pub fn incidence_curl(c: &FunctionSpace, d: &FunctionSpace) -> Result<IncidenceMatrix, SpaceError> {
    if c.kind != SpaceKind::HCurl {
        return Err(SpaceError::KindMismatch {
            expected: SpaceKind::HCurl,
            got: c.kind,
        });
    }
    if d.kind != SpaceKind::HDiv {
        return Err(SpaceError::KindMismatch {
            expected: SpaceKind::HDiv,
            got: d.kind,
        });
    }
    if !c.same_discretization(d) {
        return Err(SpaceError::SpaceMismatch);
    }
    let mut trips = Vec::with_capacity(2 * d.n_dofs);
    let mut keys: Vec<(usize, DofKey)> = d.index.iter().map(|(k, &v)| (v, *k)).collect();
    keys.sort_unstable_by_key(|&(v, _)| v);
    for (row, key) in keys {
        match key {
            // û_ξ = ∂ψ/∂η
            DofKey::XFlux(i, l) => {
                trips.push((row, c.node(i, l + 1), 1.0));
                trips.push((row, c.node(i, l), -1.0));
            }
            // û_η = -∂ψ/∂ξ
            DofKey::YFlux(k, j) => {
                trips.push((row, c.node(k + 1, j), -1.0));
                trips.push((row, c.node(k, j), 1.0));
            }
            _ => unreachable!("flux space holds only flux keys"),
        }
    }
    Ok(IncidenceMatrix {
        matrix: CsrMatrix::from_triplets(d.n_dofs, c.n_dofs, trips),
        domain: SpaceKind::HCurl,
        codomain: SpaceKind::HDiv,
    })
}

/// Discrete divergence `D → S`: net outflow of each sub-cell.
pub fn incidence_div(d: &FunctionSpace, s: &FunctionSpace) -> Result<IncidenceMatrix, SpaceError> {
    if d.kind != SpaceKind::HDiv {
        return Err(SpaceError::KindMismatch {
            expected: SpaceKind::HDiv,
            got: d.kind,
        });
    }
    if s.kind != SpaceKind::L2 {
        return Err(SpaceError::KindMismatch {
            expected: SpaceKind::L2,
            got: s.kind,
        });
    }
    if !d.same_discretization(s) {
        return Err(SpaceError::SpaceMismatch);
    }
    let mut trips = Vec::with_capacity(4 * s.n_dofs);
    let mut keys: Vec<(usize, DofKey)> = s.index.iter().map(|(k, &v)| (v, *k)).collect();
    keys.sort_unstable_by_key(|&(v, _)| v);
    for (row, key) in keys {
        let DofKey::Cell(k, l) = key else {
            unreachable!("volume space holds only cell keys")
        };
        trips.push((row, d.xflux(k + 1, l), 1.0));
        trips.push((row, d.xflux(k, l), -1.0));
        trips.push((row, d.yflux(k, l + 1), 1.0));
        trips.push((row, d.yflux(k, l), -1.0));
    }
    Ok(IncidenceMatrix {
        matrix: CsrMatrix::from_triplets(s.n_dofs, d.n_dofs, trips),
        domain: SpaceKind::HDiv,
        codomain: SpaceKind::L2,
    })
}

/// The three spaces on one mesh together with their incidence matrices.
#[derive(Debug)]
pub struct DeRhamComplex {
    mesh: Arc<Mesh>,
    basis: Arc<NodeSet>,
    hcurl: Arc<FunctionSpace>,
    hdiv: Arc<FunctionSpace>,
    l2: Arc<FunctionSpace>,
    curl: IncidenceMatrix,
    div: IncidenceMatrix,
}

impl DeRhamComplex {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Result<Self, SpaceError> {
        let basis = Arc::new(NodeSet::gll(degree)?);
        let hcurl = Arc::new(FunctionSpace::new(mesh.clone(), basis.clone(), SpaceKind::HCurl));
        let hdiv = Arc::new(FunctionSpace::new(mesh.clone(), basis.clone(), SpaceKind::HDiv));
        let l2 = Arc::new(FunctionSpace::new(mesh.clone(), basis.clone(), SpaceKind::L2));
        let curl = incidence_curl(&hcurl, &hdiv)?;
        let div = incidence_div(&hdiv, &l2)?;
        Ok(Self {
            mesh,
            basis,
            hcurl,
            hdiv,
            l2,
            curl,
            div,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn basis(&self) -> &Arc<NodeSet> {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn hcurl(&self) -> &Arc<FunctionSpace> {
        &self.hcurl
    }

    pub fn hdiv(&self) -> &Arc<FunctionSpace> {
        &self.hdiv
    }

    pub fn l2(&self) -> &Arc<FunctionSpace> {
        &self.l2
    }

    pub fn space(&self, kind: SpaceKind) -> &Arc<FunctionSpace> {
        match kind {
            SpaceKind::HCurl => &self.hcurl,
            SpaceKind::HDiv => &self.hdiv,
            SpaceKind::L2 => &self.l2,
        }
    }

    pub fn curl(&self) -> &IncidenceMatrix {
        &self.curl
    }

    pub fn div(&self) -> &IncidenceMatrix {
        &self.div
    }
}

/// Coefficients attached to a space.
#[derive(Debug, Clone)]
pub struct Field {
    space: Arc<FunctionSpace>,
    coeffs: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        *self.space == *other.space && self.coeffs == other.coeffs
    }
}

impl Field {
    pub fn new(space: Arc<FunctionSpace>, coeffs: Vec<f64>) -> Result<Self, SpaceError> {
        if coeffs.len() != space.n_dofs() {
            return Err(SpaceError::Length {
                expected: space.n_dofs(),
                got: coeffs.len(),
            });
        }
        Ok(Self { space, coeffs })
    }

    pub fn zeros(space: Arc<FunctionSpace>) -> Self {
        let n = space.n_dofs();
        Self {
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn kind(&self) -> SpaceKind {
        self.space.kind()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn local_coeffs(&self, elem: usize) -> Vec<f64> {
        self.space.local_to_global(elem).iter().map(|&g| self.coeffs[g]).collect()
    }

    fn expect(&self, kinds: &[SpaceKind]) -> Result<(), SpaceError> {
        if kinds.contains(&self.kind()) {
            Ok(())
        } else {
            Err(SpaceError::KindMismatch {
                expected: kinds[0],
                got: self.kind(),
            })
        }
    }

    /// Scalar values of a `C` or `S` field at element-local points.
    pub fn values(&self, elem: usize, points: &[[f64; 2]]) -> Result<Vec<f64>, SpaceError> {
        self.expect(&[SpaceKind::HCurl, SpaceKind::L2])?;
        let local = self.local_coeffs(elem);
        let basis = self.space.basis();
        let n = basis.degree();
        let mesh = self.space.mesh();
        Ok(points
            .iter()
            .map(|&[xi, eta]| match self.kind() {
                SpaceKind::HCurl => {
                    let (hx, hy) = (basis.lagrange_all(xi), basis.lagrange_all(eta));
                    (0..=n)
                        .flat_map(|b| (0..=n).map(move |a| (a, b)))
                        .map(|(a, b)| local[b * (n + 1) + a] * hx[a] * hy[b])
                        .sum()
                }
                _ => {
                    let (ex, ey) = (basis.edge_all(xi), basis.edge_all(eta));
                    let v: f64 = (0..n)
                        .flat_map(|l| (0..n).map(move |k| (k, l)))
                        .map(|(k, l)| local[l * n + k] * ex[k] * ey[l])
                        .sum();
                    v / mesh.element_jacobian(elem, [xi, eta]).det
                }
            })
            .collect())
    }

    /// Physical vectors of a `D` field at element-local points.
    pub fn vectors(&self, elem: usize, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>, SpaceError> {
        self.expect(&[SpaceKind::HDiv])?;
        let local = self.local_coeffs(elem);
        let basis = self.space.basis();
        let mesh = self.space.mesh();
        Ok(points
            .iter()
            .map(|&p| {
                let r = reference_flux(basis, &local, p);
                let jac = mesh.element_jacobian(elem, p);
                let v = jac.apply(r);
                [v[0] / jac.det, v[1] / jac.det]
            })
            .collect())
    }

    /// Value at a physical point (scalar spaces).
    pub fn value_at(&self, x: f64, y: f64) -> Result<f64, crate::Error> {
        let (elem, local) = self.space.mesh().locate(x, y)?;
        Ok(self.values(elem, &[local])?[0])
    }
}

/// Reference proxy `û(ξ,η)` of a flux field from its element-local coefficients.
pub fn reference_flux(basis: &NodeSet, local: &[f64], p: [f64; 2]) -> [f64; 2] {
    let n = basis.degree();
    let (hx, hy) = (basis.lagrange_all(p[0]), basis.lagrange_all(p[1]));
    let (ex, ey) = (basis.edge_all(p[0]), basis.edge_all(p[1]));
    let nx = n * (n + 1);
    let mut u = [0.0; 2];
    for l in 0..n {
        for a in 0..=n {
            u[0] += local[l * (n + 1) + a] * hx[a] * ey[l];
        }
    }
    for b in 0..=n {
        for k in 0..n {
            u[1] += local[nx + b * n + k] * ex[k] * hy[b];
        }
    }
    u
}
