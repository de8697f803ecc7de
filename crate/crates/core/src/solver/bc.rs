//! Boundary-condition data: two complementary pairs of boundary sections,
//! `(Γ⊥, Γ_P̂)` for the normal velocity / total pressure and `(Γ_ω̂, Γ∥)` for
//! the vorticity / tangential velocity.

use std::fmt;
use std::sync::Arc;

use crate::derham::{BoundaryPartition, SpaceError, WallSet};
use crate::mesh::Mesh;

/// Data function of `(x, y, t)`.
pub type ScalarData = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Vector data function of `(x, y, t)`.
pub type VectorData = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;

pub fn zero_data() -> ScalarData {
    Arc::new(|_, _, _| 0.0)
}

#[derive(Clone)]
pub struct BoundarySection {
    pub walls: WallSet,
    pub data: ScalarData,
}

impl BoundarySection {
    pub fn new(walls: WallSet, data: ScalarData) -> Self {
        Self { walls, data }
    }

    pub fn homogeneous(walls: WallSet) -> Self {
        Self::new(walls, zero_data())
    }

    pub fn empty() -> Self {
        Self::homogeneous(WallSet::EMPTY)
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        (self.data)(x, y, t)
    }
}

impl fmt::Debug for BoundarySection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoundarySection({})", self.walls)
    }
}

/// Boundary conditions.
///
/// * `normal`: `û⊥ = u·n` on `Γ⊥` (essential).
/// * `pressure`: `P̂` on `Γ_P̂` (natural).
/// * `vorticity`: `ω̂` on `Γ_ω̂` (essential).
/// * `tangential`: `û∥ = u_x n_y − u_y n_x` on `Γ∥` (natural).
///
/// `n` is the outward unit normal.
#[derive(Clone, Debug)]
pub struct BCConfig {
    pub normal: BoundarySection,
    pub pressure: BoundarySection,
    pub vorticity: BoundarySection,
    pub tangential: BoundarySection,
}

impl BCConfig {
    /// No boundary at all.
    pub fn periodic() -> Self {
        Self {
            normal: BoundarySection::empty(),
            pressure: BoundarySection::empty(),
            vorticity: BoundarySection::empty(),
            tangential: BoundarySection::empty(),
        }
    }

    /// Zero normal and tangential velocity on `walls`.
    pub fn no_slip(walls: WallSet) -> Self {
        Self {
            normal: BoundarySection::homogeneous(walls),
            pressure: BoundarySection::empty(),
            vorticity: BoundarySection::empty(),
            tangential: BoundarySection::homogeneous(walls),
        }
    }

    /// Both pairs must be disjoint and cover the boundary of `mesh`.
    pub fn validate(&self, mesh: &Mesh) -> Result<(BoundaryPartition, BoundaryPartition), SpaceError> {
        Ok((
            BoundaryPartition::new(mesh, self.normal.walls, self.pressure.walls)?,
            BoundaryPartition::new(mesh, self.vorticity.walls, self.tangential.walls)?,
        ))
    }

    /// The constant pressure mode is free when no pressure data is prescribed.
    pub fn needs_gauge(&self) -> bool {
        self.pressure.walls.is_empty()
    }
}
