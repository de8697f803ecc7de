//! Mapped quadrilateral meshes.
//!
//! A `K × K` grid of cells tiles the global reference square `(r, s) ∈ [0,1]²`
//! and is carried to the physical domain by
//!
//! ```text
//! x = x0 + α (r + ½ c sin(2πr) sin(2πs))
//! y = y0 + α (s + ½ c sin(2πr) sin(2πs))
//! ```
//!
//! Every element additionally owns an affine map from `(ξ, η) ∈ [-1,1]²` onto
//! its reference cell. Jacobians are analytic.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::polybasis::QuadRule;

pub const MAX_DEFORMATION: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("deformation factor {0} outside [0, {MAX_DEFORMATION}]")]
    Deformation(f64),
    #[error("domain scale must be positive, got {0}")]
    Scale(f64),
    #[error("element count must be at least 1")]
    NoElements,
    #[error("node spacing for direction {dir} is invalid: {reason}")]
    Spacing { dir: usize, reason: String },
    #[error("point ({0}, {1}) is outside the mesh")]
    OutsideDomain(f64, f64),
}

/// Distribution of the `K + 1` cell boundaries along one reference direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Spacing {
    #[default]
    Uniform,
    /// Symmetric `tanh` stretching that clusters cells towards both ends.
    Tanh { stretch: f64 },
    /// Explicit, strictly increasing nodes from 0 to 1.
    Nodes { nodes: Vec<f64> },
}

impl Spacing {
    fn nodes(&self, k: usize, dir: usize) -> Result<Vec<f64>, MeshError> {
        let bad = |reason: &str| MeshError::Spacing {
            dir,
            reason: reason.to_string(),
        };
        let nodes: Vec<f64> = match self {
            Spacing::Uniform => (0..=k).map(|i| i as f64 / k as f64).collect(),
            Spacing::Tanh { stretch } => {
                if !(*stretch > 0.0) {
                    return Err(bad("tanh stretch must be positive"));
                }
                let t = stretch.tanh();
                (0..=k)
                    .map(|i| {
                        let z = 2.0 * i as f64 / k as f64 - 1.0;
                        0.5 * (1.0 + (stretch * z).tanh() / t)
                    })
                    .collect()
            }
            Spacing::Nodes { nodes } => {
                if nodes.len() != k + 1 {
                    return Err(bad("expected K + 1 nodes"));
                }
                nodes.clone()
            }
        };
        if nodes[0].abs() > 1e-14 || (nodes[k] - 1.0).abs() > 1e-14 {
            return Err(bad("nodes must start at 0 and end at 1"));
        }
        if !nodes.windows(2).all(|w| w[1] > w[0]) {
            return Err(bad("nodes must be strictly increasing"));
        }
        let mut nodes = nodes;
        nodes[0] = 0.0;
        nodes[k] = 1.0;
        Ok(nodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    /// Elements per direction.
    pub elements: usize,
    /// Deformation factor `c`.
    pub deformation: f64,
    /// Domain scale `α`.
    pub scale: f64,
    pub periodic: [bool; 2],
    pub offset: [f64; 2],
    pub spacing: [Spacing; 2],
}

impl MeshConfig {
    pub fn new(elements: usize, deformation: f64, scale: f64) -> Self {
        Self {
            elements,
            deformation,
            scale,
            periodic: [false, false],
            offset: [0.0, 0.0],
            spacing: [Spacing::Uniform, Spacing::Uniform],
        }
    }

    pub fn periodic(mut self, periodic: bool) -> Self {
        self.periodic = [periodic, periodic];
        self
    }

    pub fn with_offset(mut self, offset: [f64; 2]) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = [spacing.clone(), spacing];
        self
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.elements == 0 {
            return Err(MeshError::NoElements);
        }
        if !(0.0..=MAX_DEFORMATION).contains(&self.deformation) {
            return Err(MeshError::Deformation(self.deformation));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(MeshError::Scale(self.scale));
        }
        Ok(())
    }
}

/// `J = ∂(x,y)/∂(a,b)` for whichever reference coordinates `(a,b)` it was
/// evaluated in; `det` is its determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianSample {
    pub j: [[f64; 2]; 2],
    pub det: f64,
}

impl JacobianSample {
    pub fn new(j: [[f64; 2]; 2]) -> Self {
        Self {
            j,
            det: j[0][0] * j[1][1] - j[0][1] * j[1][0],
        }
    }

    /// `J v`
    #[inline]
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.j[0][0] * v[0] + self.j[0][1] * v[1],
            self.j[1][0] * v[0] + self.j[1][1] * v[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub physical: [f64; 2],
    /// Element-local `(ξ, η)`.
    pub local: [f64; 2],
    /// Jacobian of the element map `(ξ, η) → (x, y)`.
    pub jacobian: JacobianSample,
    /// Tensor-product reference weight; multiply by `jacobian.det` for `dΩ`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshSummary {
    pub config: MeshConfig,
    pub element_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    config: MeshConfig,
    r_nodes: Vec<f64>,
    s_nodes: Vec<f64>,
}

impl Mesh {
    pub fn new(config: MeshConfig) -> Result<Self, MeshError> {
        config.validate()?;
        let r_nodes = config.spacing[0].nodes(config.elements, 0)?;
        let s_nodes = config.spacing[1].nodes(config.elements, 1)?;
        Ok(Self {
            config,
            r_nodes,
            s_nodes,
        })
    }

    pub fn config(&self) -> &MeshConfig {
        &self.config
    }

    /// Elements per direction.
    pub fn k(&self) -> usize {
        self.config.elements
    }

    pub fn n_elements(&self) -> usize {
        self.k() * self.k()
    }

    pub fn periodic(&self, dir: usize) -> bool {
        self.config.periodic[dir]
    }

    pub fn fully_periodic(&self) -> bool {
        self.config.periodic[0] && self.config.periodic[1]
    }

    /// Element id of grid cell `(i, j)`; `i` runs along `r`.
    pub fn element_id(&self, i: usize, j: usize) -> usize {
        j * self.k() + i
    }

    pub fn element_ij(&self, id: usize) -> (usize, usize) {
        (id % self.k(), id / self.k())
    }

    pub fn r_nodes(&self) -> &[f64] {
        &self.r_nodes
    }

    pub fn s_nodes(&self) -> &[f64] {
        &self.s_nodes
    }

    /// `([r0, r1], [s0, s1])` of an element's reference cell.
    pub fn cell_bounds(&self, id: usize) -> ([f64; 2], [f64; 2]) {
        let (i, j) = self.element_ij(id);
        (
            [self.r_nodes[i], self.r_nodes[i + 1]],
            [self.s_nodes[j], self.s_nodes[j + 1]],
        )
    }

    pub fn summary(&self) -> MeshSummary {
        MeshSummary {
            config: self.config.clone(),
            element_count: self.n_elements(),
        }
    }

    /// Physical domain area `α²`.
    pub fn area(&self) -> f64 {
        self.config.scale * self.config.scale
    }

    /// Global map `Φ(r, s)`.
    pub fn map(&self, r: f64, s: f64) -> [f64; 2] {
        let MeshConfig {
            deformation: c,
            scale: a,
            offset,
            ..
        } = &self.config;
        let bump = 0.5 * c * (2.0 * PI * r).sin() * (2.0 * PI * s).sin();
        [offset[0] + a * (r + bump), offset[1] + a * (s + bump)]
    }

    /// `∂Φ/∂(r,s)` at a global reference point inside element `elem`.
    pub fn jacobian(&self, elem: usize, r: f64, s: f64) -> JacobianSample {
        debug_assert!({
            let (rb, sb) = self.cell_bounds(elem);
            let tol = 1e-12;
            r >= rb[0] - tol && r <= rb[1] + tol && s >= sb[0] - tol && s <= sb[1] + tol
        });
        self.global_jacobian(r, s)
    }

    fn global_jacobian(&self, r: f64, s: f64) -> JacobianSample {
        let (c, a) = (self.config.deformation, self.config.scale);
        let (sr, cr) = (2.0 * PI * r).sin_cos();
        let (ss, cs) = (2.0 * PI * s).sin_cos();
        let dr = PI * c * cr * ss;
        let ds = PI * c * sr * cs;
        JacobianSample::new([[a * (1.0 + dr), a * ds], [a * dr, a * (1.0 + ds)]])
    }

    /// Global reference coordinates of element-local `(ξ, η)`.
    pub fn local_to_reference(&self, elem: usize, local: [f64; 2]) -> [f64; 2] {
        let (rb, sb) = self.cell_bounds(elem);
        [
            rb[0] + 0.5 * (local[0] + 1.0) * (rb[1] - rb[0]),
            sb[0] + 0.5 * (local[1] + 1.0) * (sb[1] - sb[0]),
        ]
    }

    /// Physical point of element-local `(ξ, η)`.
    pub fn local_to_physical(&self, elem: usize, local: [f64; 2]) -> [f64; 2] {
        let [r, s] = self.local_to_reference(elem, local);
        self.map(r, s)
    }

    /// Jacobian of the element map `(ξ, η) → (x, y)`.
    pub fn element_jacobian(&self, elem: usize, local: [f64; 2]) -> JacobianSample {
        let (rb, sb) = self.cell_bounds(elem);
        let [r, s] = self.local_to_reference(elem, local);
        let g = self.global_jacobian(r, s).j;
        let (hr, hs) = (0.5 * (rb[1] - rb[0]), 0.5 * (sb[1] - sb[0]));
        JacobianSample::new([[g[0][0] * hr, g[0][1] * hs], [g[1][0] * hr, g[1][1] * hs]])
    }

    /// Tensor-product quadrature on one element.
    pub fn physical_quadrature(&self, elem: usize, rule: &QuadRule) -> Vec<QuadPoint> {
        let (pts, wts) = (rule.points(), rule.weights());
        let mut out = Vec::with_capacity(pts.len() * pts.len());
        for (&eta, &weta) in pts.iter().zip(wts) {
            for (&xi, &wxi) in pts.iter().zip(wts) {
                let local = [xi, eta];
                out.push(QuadPoint {
                    physical: self.local_to_physical(elem, local),
                    local,
                    jacobian: self.element_jacobian(elem, local),
                    weight: wxi * weta,
                });
            }
        }
        out
    }

    /// Invert `Φ`: physical point to `(element, ξ, η)`.
    pub fn locate(&self, x: f64, y: f64) -> Result<(usize, [f64; 2]), MeshError> {
        let MeshConfig { scale, offset, .. } = &self.config;
        let target = [x, y];
        let mut rs = [(x - offset[0]) / scale, (y - offset[1]) / scale];
        for _ in 0..50 {
            let p = self.map(rs[0], rs[1]);
            let res = [p[0] - target[0], p[1] - target[1]];
            let jac = self.global_jacobian(rs[0], rs[1]);
            let j = jac.j;
            let dr = (j[1][1] * res[0] - j[0][1] * res[1]) / jac.det;
            let ds = (-j[1][0] * res[0] + j[0][0] * res[1]) / jac.det;
            rs[0] -= dr;
            rs[1] -= ds;
            if dr.abs().max(ds.abs()) < 1e-15 {
                break;
            }
        }
        let tol = 1e-12;
        if rs.iter().any(|v| !(-tol..=1.0 + tol).contains(v)) {
            return Err(MeshError::OutsideDomain(x, y));
        }
        let rs = [rs[0].clamp(0.0, 1.0), rs[1].clamp(0.0, 1.0)];
        let find = |nodes: &[f64], v: f64| -> usize {
            let k = nodes.len() - 1;
            nodes.partition_point(|&n| n <= v).saturating_sub(1).min(k - 1)
        };
        let i = find(&self.r_nodes, rs[0]);
        let j = find(&self.s_nodes, rs[1]);
        let elem = self.element_id(i, j);
        let (rb, sb) = self.cell_bounds(elem);
        let local = [
            2.0 * (rs[0] - rb[0]) / (rb[1] - rb[0]) - 1.0,
            2.0 * (rs[1] - sb[0]) / (sb[1] - sb[0]) - 1.0,
        ];
        Ok((elem, local))
    }

    /// `(r, s, x, y)` rows on a uniform `n × n` reference grid, for mesh plots.
    pub fn mapping_grid(&self, n: usize) -> Vec<[f64; 4]> {
        let n = n.max(2);
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let (r, s) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
                let [x, y] = self.map(r, s);
                out.push([r, s, x, y]);
            }
        }
        out
    }
}
