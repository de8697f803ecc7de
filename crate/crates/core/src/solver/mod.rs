//! Implicit-midpoint time stepping of the coupled `(u, ω, P)` system with
//! Newton–Raphson iterations.
//!
//! Per step, with `u_m = (u^{k-1}+u^k)/2`, `ω_m = (ω^{k-1}+ω^k)/2` and
//! `ν = 1/Re`, the residual blocks are
//!
//! ```text
//! R_u = M_D (u^k − u^{k−1})/Δt + A(ω_m) u_m + ν M_D E ω_m − Divᵀ M_S P − f + g_P
//! R_ω = Eᵀ M_D u^k − M_C ω^k − g_∥
//! R_P = Div u^k
//! ```
//!
//! where `E` and `Div` are the incidence matrices, `g_P` the pressure port
//! (at `t_{k−1/2}`) and `g_∥` the tangential-velocity port (at `t_k`).
//! Rows of essential unknowns are replaced by `x_i − g_i`.

mod bc;
mod linear;

pub use bc::{zero_data, BCConfig, BoundarySection, ScalarData, VectorData};
pub use linear::{apply_essential_bc, linear_solve, LinearSystem, LINEAR_TOLERANCE};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

use crate::assembly::{AssemblyError, Assembler, QuadConfig};
use crate::derham::{Field, SpaceError, SpaceKind, WallSet};
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::sparse::{max_abs, CsrMatrix};

#[derive(Debug, Error, Clone)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("singular linear system")]
    Singular,
    #[error("linear solve left relative residual {0:e}")]
    Inaccurate(f64),
    #[error("dimension mismatch: {rows}x{cols} matrix with right-hand side of length {rhs}")]
    Dimension { rows: usize, cols: usize, rhs: usize },
    #[error("Newton iteration did not converge: {0}")]
    NotConverged(NewtonReport),
    #[error("pressure data is prescribed on {0}, no gauge may be imposed")]
    GaugeWithPressureBoundary(WallSet),
}

/// Reynolds number; `Inviscid` drops the viscous term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reynolds {
    Finite(f64),
    Inviscid,
}

impl Reynolds {
    pub fn nu(self) -> f64 {
        match self {
            Reynolds::Finite(re) => 1.0 / re,
            Reynolds::Inviscid => 0.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if ["inf", "infinity", "inviscid"].contains(&s.to_ascii_lowercase().as_str()) {
            return Ok(Reynolds::Inviscid);
        }
        let v: f64 = s.parse().map_err(|_| format!("invalid Reynolds number '{s}'"))?;
        Reynolds::try_from(v)
    }
}

impl TryFrom<f64> for Reynolds {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, String> {
        if v.is_infinite() && v > 0.0 {
            Ok(Reynolds::Inviscid)
        } else if v.is_finite() && v > 0.0 {
            Ok(Reynolds::Finite(v))
        } else {
            Err(format!("Reynolds number must be positive, got {v}"))
        }
    }
}

impl fmt::Display for Reynolds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reynolds::Finite(v) => write!(f, "{v}"),
            Reynolds::Inviscid => f.write_str("inf"),
        }
    }
}

impl Serialize for Reynolds {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Reynolds::Finite(v) => s.serialize_f64(*v),
            Reynolds::Inviscid => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Reynolds {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Reynolds::try_from(v),
            Raw::Str(s) => Reynolds::parse(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaugeMode {
    /// Lagrange multiplier enforcing `∫ P dΩ = 0`.
    #[default]
    MeanZero,
    /// First pressure unknown set to zero.
    Pin,
}

/// How `ω⁰` is obtained from the initial data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaInit {
    /// Solve the discrete kinematic relation for the projected `u⁰`.
    #[default]
    Kinematic,
    /// Interpolate an analytic vorticity.
    Project,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub re: Reynolds,
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_iter")]
    pub newton_max_iter: usize,
    pub quad: QuadConfig,
    #[serde(default)]
    pub gauge: GaugeMode,
    #[serde(default)]
    pub omega_init: OmegaInit,
}

fn default_tol() -> f64 {
    1e-12
}

fn default_max_iter() -> usize {
    30
}

impl SolverConfig {
    pub fn new(dt: f64, re: Reynolds, degree: usize) -> Self {
        Self {
            dt,
            re,
            newton_tol: default_tol(),
            newton_max_iter: default_max_iter(),
            quad: QuadConfig::default_for(degree),
            gauge: GaugeMode::MeanZero,
            omega_init: OmegaInit::Kinematic,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(SolverError::Config("newton_tol must be positive".into()));
        }
        if self.newton_max_iter == 0 {
            return Err(SolverError::Config("newton_max_iter must be at least 1".into()));
        }
        if let Reynolds::Finite(re) = self.re {
            if !(re > 0.0 && re.is_finite()) {
                return Err(SolverError::Config(format!("Reynolds number must be positive, got {re}")));
            }
        }
        QuadConfig::new(self.quad.nq)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub converged: bool,
}

impl fmt::Display for NewtonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, last residual {:e}",
            self.iterations,
            self.residual_norms.last().copied().unwrap_or(f64::NAN)
        )
    }
}

/// `(u^k, ω^k, P^{k−1/2})` at time index `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub k: usize,
    pub t: f64,
    pub u: Field,
    pub omega: Field,
    pub p: Field,
}

/// Position of each block in the global unknown vector `[u, ω, P, λ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub nd: usize,
    pub nc: usize,
    pub ns: usize,
    pub gauge: Option<GaugeMode>,
}

impl Layout {
    pub fn omega(&self) -> usize {
        self.nd
    }

    pub fn pressure(&self) -> usize {
        self.nd + self.nc
    }

    /// Size without the gauge multiplier.
    pub fn base(&self) -> usize {
        self.nd + self.nc + self.ns
    }

    pub fn len(&self) -> usize {
        self.base() + usize::from(self.gauge == Some(GaugeMode::MeanZero))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Removes the constant pressure mode from an ungauged saddle-point system.
///
/// `MeanZero` appends a multiplier row/column coupling to every pressure
/// unknown (each `S` basis function integrates to one, so the constraint is
/// `∫ P dΩ = 0`); `Pin` replaces the first pressure-equation row by `P_0 = 0`.
pub fn fix_pressure_gauge(
    system: LinearSystem,
    layout: &Layout,
    mode: GaugeMode,
    pressure_walls: WallSet,
) -> Result<LinearSystem, SolverError> {
    if !pressure_walls.is_empty() {
        return Err(SolverError::GaugeWithPressureBoundary(pressure_walls));
    }
    let n = layout.base();
    if system.matrix.nrows() != n || system.rhs.len() != n {
        return Err(SolverError::Dimension {
            rows: system.matrix.nrows(),
            cols: system.matrix.ncols(),
            rhs: system.rhs.len(),
        });
    }
    let p0 = layout.pressure();
    let mut rhs = system.rhs;
    match mode {
        GaugeMode::MeanZero => {
            let mut trips: Vec<_> = system.matrix.triplets().collect();
            for i in p0..n {
                trips.push((i, n, 1.0));
                trips.push((n, i, 1.0));
            }
            rhs.push(0.0);
            Ok(LinearSystem {
                matrix: CsrMatrix::from_triplets(n + 1, n + 1, trips),
                rhs,
            })
        }
        GaugeMode::Pin => {
            let mut trips: Vec<_> = system.matrix.triplets().filter(|&(i, _, _)| i != p0).collect();
            trips.push((p0, p0, 1.0));
            rhs[p0] = 0.0;
            Ok(LinearSystem {
                matrix: CsrMatrix::from_triplets(n, n, trips),
                rhs,
            })
        }
    }
}

/// Time-independent operators and boundary bookkeeping for one run.
pub struct Stepper {
    asm: Arc<Assembler>,
    cfg: SolverConfig,
    bc: BCConfig,
    force: Option<VectorData>,
    layout: Layout,
    div: CsrMatrix,
    md_curl: CsrMatrix,
    curlt_md: CsrMatrix,
    divt_ms: CsrMatrix,
}

impl fmt::Debug for Stepper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stepper")
            .field("cfg", &self.cfg)
            .field("bc", &self.bc)
            .field("layout", &self.layout)
            .finish()
    }
}

/// Data that is fixed during the Newton iterations of one step.
struct StepData {
    t: f64,
    momentum_load: Vec<f64>,
    kinematic_load: Vec<f64>,
    essential: Vec<(usize, f64)>,
}

impl Stepper {
    pub fn new(
        asm: Arc<Assembler>,
        cfg: SolverConfig,
        bc: BCConfig,
        force: Option<VectorData>,
    ) -> Result<Self, SolverError> {
        cfg.validate()?;
        if cfg.quad != asm.quad() {
            return Err(SolverError::Config(format!(
                "assembler uses NQ = {}, solver configured with NQ = {}",
                asm.quad().nq,
                cfg.quad.nq
            )));
        }
        let cx = asm.complex().clone();
        bc.validate(cx.mesh())?;
        let layout = Layout {
            nd: cx.hdiv().n_dofs(),
            nc: cx.hcurl().n_dofs(),
            ns: cx.l2().n_dofs(),
            gauge: bc.needs_gauge().then_some(cfg.gauge),
        };
        let md = &asm.mass_matrix(SpaceKind::HDiv).matrix;
        let ms = &asm.mass_matrix(SpaceKind::L2).matrix;
        let curl = cx.curl().matrix.clone();
        let div = cx.div().matrix.clone();
        let md_curl = md.matmul(&curl);
        let curlt_md = md_curl.transpose();
        let divt_ms = div.transpose().matmul(ms);
        Ok(Self {
            asm,
            cfg,
            bc,
            force,
            layout,
            div,
            md_curl,
            curlt_md,
            divt_ms,
        })
    }

    pub fn assembler(&self) -> &Arc<Assembler> {
        &self.asm
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn bc(&self) -> &BCConfig {
        &self.bc
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn nu(&self) -> f64 {
        self.cfg.re.nu()
    }

    fn field(&self, kind: SpaceKind, coeffs: Vec<f64>) -> Field {
        Field::new(self.asm.complex().space(kind).clone(), coeffs).expect("block length matches space")
    }

    /// Global vector `[u, ω, P, λ]` of a state (multiplier zero).
    pub fn pack(&self, state: &FlowState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.layout.len());
        x.extend_from_slice(state.u.coeffs());
        x.extend_from_slice(state.omega.coeffs());
        x.extend_from_slice(state.p.coeffs());
        x.resize(self.layout.len(), 0.0);
        x
    }

    pub fn unpack(&self, x: &[f64], k: usize, t: f64) -> FlowState {
        let l = &self.layout;
        FlowState {
            k,
            t,
            u: self.field(SpaceKind::HDiv, x[..l.nd].to_vec()),
            omega: self.field(SpaceKind::HCurl, x[l.nd..l.pressure()].to_vec()),
            p: self.field(SpaceKind::L2, x[l.pressure()..l.base()].to_vec()),
        }
    }

    /// Prescribed values of essential unknowns at time `t`, as indices into
    /// the global unknown vector.
    pub fn essential_values(&self, t: f64) -> Result<Vec<(usize, f64)>, SolverError> {
        let mut out = Vec::new();
        if !self.bc.normal.walls.is_empty() {
            let bc = &self.bc.normal;
            out.extend(self.asm.boundary_flux_values(|x, y| bc.eval(x, y, t), bc.walls)?);
        }
        if !self.bc.vorticity.walls.is_empty() {
            let bc = &self.bc.vorticity;
            let off = self.layout.omega();
            out.extend(
                self.asm
                    .boundary_node_values(|x, y| bc.eval(x, y, t), bc.walls)?
                    .into_iter()
                    .map(|(i, v)| (i + off, v)),
            );
        }
        Ok(out)
    }

    fn tangential_load(&self, t: f64) -> Result<Vec<f64>, SolverError> {
        let bc = &self.bc.tangential;
        if bc.walls.is_empty() {
            return Ok(vec![0.0; self.layout.nc]);
        }
        Ok(self.asm.natural_bc_tangential(|x, y| bc.eval(x, y, t), bc.walls)?)
    }

    fn step_data(&self, t_prev: f64, t: f64) -> Result<StepData, SolverError> {
        let t_mid = 0.5 * (t_prev + t);
        let mut momentum_load = match &self.force {
            Some(f) => self.asm.force_load(|x, y| f(x, y, t_mid)),
            None => vec![0.0; self.layout.nd],
        };
        let bc = &self.bc.pressure;
        if !bc.walls.is_empty() {
            let g = self.asm.natural_bc_pressure(|x, y| bc.eval(x, y, t_mid), bc.walls)?;
            momentum_load.iter_mut().zip(&g).for_each(|(a, b)| *a -= b);
        }
        Ok(StepData {
            t,
            momentum_load,
            kinematic_load: self.tangential_load(t)?,
            essential: self.essential_values(t)?,
        })
    }

    fn midpoints(&self, prev: &FlowState, x: &[f64]) -> (Field, Field) {
        let l = &self.layout;
        let um = prev.u.coeffs().iter().zip(&x[..l.nd]).map(|(a, b)| 0.5 * (a + b)).collect();
        let wm = prev
            .omega
            .coeffs()
            .iter()
            .zip(&x[l.nd..l.pressure()])
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        (self.field(SpaceKind::HDiv, um), self.field(SpaceKind::HCurl, wm))
    }

    fn residual_with(&self, prev: &FlowState, x: &[f64], data: &StepData) -> Result<Vec<f64>, SolverError> {
        let l = self.layout;
        let (u, w, p) = (&x[..l.nd], &x[l.nd..l.pressure()], &x[l.pressure()..l.base()]);
        let dt = self.cfg.dt;
        let nu = self.nu();
        let md = &self.asm.mass_matrix(SpaceKind::HDiv).matrix;
        let mc = &self.asm.mass_matrix(SpaceKind::HCurl).matrix;
        let (um, wm) = self.midpoints(prev, x);

        let du: Vec<f64> = u.iter().zip(prev.u.coeffs()).map(|(a, b)| (a - b) / dt).collect();
        let mut r = md.matvec(&du);
        let conv = self.asm.convection_apply(&wm, &um)?;
        let grad = self.divt_ms.matvec(p);
        let visc = if nu != 0.0 {
            self.md_curl.matvec(wm.coeffs())
        } else {
            vec![0.0; l.nd]
        };
        for i in 0..l.nd {
            r[i] += conv[i] + nu * visc[i] - grad[i] - data.momentum_load[i];
        }

        let kin = self.curlt_md.matvec(u);
        let mw = mc.matvec(w);
        r.extend((0..l.nc).map(|i| kin[i] - mw[i] - data.kinematic_load[i]));

        r.extend(self.div.matvec(u));
        match l.gauge {
            Some(GaugeMode::MeanZero) => {
                let lambda = x[l.base()];
                r[l.pressure()..].iter_mut().for_each(|v| *v += lambda);
                r.push(p.iter().sum());
            }
            Some(GaugeMode::Pin) => r[l.pressure()] = p[0],
            None => {}
        }
        for &(i, g) in &data.essential {
            r[i] = x[i] - g;
        }
        Ok(r)
    }

    /// Residual of the fully discrete equations for the candidate `guess`
    /// (global vector layout, see [`Stepper::pack`]) at the step after `prev`.
    pub fn residual(&self, prev: &FlowState, guess: &[f64]) -> Result<Vec<f64>, SolverError> {
        let data = self.step_data(prev.t, prev.t + self.cfg.dt)?;
        self.residual_with(prev, guess, &data)
    }

    /// Exact linearization of the residual (gauge included, essential rows not
    /// yet eliminated).
    pub fn jacobian(&self, prev: &FlowState, x: &[f64]) -> Result<CsrMatrix, SolverError> {
        let l = self.layout;
        let (um, wm) = self.midpoints(prev, x);
        let dt = self.cfg.dt;
        let nu = self.nu();
        let md = &self.asm.mass_matrix(SpaceKind::HDiv).matrix;
        let mc = &self.asm.mass_matrix(SpaceKind::HCurl).matrix;
        let a = self.asm.convection_matrix(&wm)?.matrix;
        let b = self.asm.convection_jacobian_wrt_omega(&um)?.matrix;
        let (oc, op) = (l.omega(), l.pressure());
        let mut trips = Vec::new();
        let mut put = |m: &CsrMatrix, r0: usize, c0: usize, s: f64| {
            trips.extend(m.triplets().map(|(i, j, v)| (i + r0, j + c0, s * v)));
        };
        put(md, 0, 0, 1.0 / dt);
        put(&a, 0, 0, 0.5);
        put(&b, 0, oc, 0.5);
        if nu != 0.0 {
            put(&self.md_curl, 0, oc, 0.5 * nu);
        }
        put(&self.divt_ms, 0, op, -1.0);
        put(&self.curlt_md, oc, 0, 1.0);
        put(mc, oc, oc, -1.0);
        put(&self.div, op, 0, 1.0);
        let n = l.base();
        let sys = LinearSystem {
            matrix: CsrMatrix::from_triplets(n, n, trips),
            rhs: vec![0.0; n],
        };
        Ok(match l.gauge {
            Some(mode) => fix_pressure_gauge(sys, &l, mode, self.bc.pressure.walls)?.matrix,
            None => sys.matrix,
        })
    }

    /// One implicit-midpoint step from `prev`, starting Newton from `prev`.
    pub fn newton_solve(&self, prev: &FlowState) -> Result<(FlowState, NewtonReport), SolverError> {
        let t = prev.t + self.cfg.dt;
        self.newton_solve_to(prev, t)
    }

    fn newton_solve_to(&self, prev: &FlowState, t: f64) -> Result<(FlowState, NewtonReport), SolverError> {
        let data = self.step_data(prev.t, t)?;
        let mut x = self.pack(prev);
        let mut report = NewtonReport {
            iterations: 0,
            residual_norms: Vec::new(),
            converged: false,
        };
        loop {
            let r = self.residual_with(prev, &x, &data)?;
            let norm = max_abs(&r);
            report.residual_norms.push(norm);
            if norm <= self.cfg.newton_tol {
                report.converged = true;
                break;
            }
            if report.iterations == self.cfg.newton_max_iter || !norm.is_finite() {
                return Err(SolverError::NotConverged(report));
            }
            let jac = self.jacobian(prev, &x)?;
            let fixed: Vec<(usize, f64)> = data.essential.iter().map(|&(i, g)| (i, g - x[i])).collect();
            let sys = apply_essential_bc(
                LinearSystem {
                    matrix: jac,
                    rhs: r.iter().map(|v| -v).collect(),
                },
                &fixed,
            );
            let dx = linear_solve(&sys.matrix, &sys.rhs)?;
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            report.iterations += 1;
        }
        log::debug!("step to t = {t}: {report}");
        Ok((self.unpack(&x, prev.k + 1, data.t), report))
    }

    /// `ω⁰` from `M_C ω = Eᵀ M_D u − g_∥` with essential vorticity rows.
    pub fn kinematic_vorticity(&self, u: &Field, t: f64) -> Result<Field, SolverError> {
        let mc = self.asm.mass_matrix(SpaceKind::HCurl).matrix.clone();
        let g = self.tangential_load(t)?;
        let rhs: Vec<f64> = self
            .curlt_md
            .matvec(u.coeffs())
            .iter()
            .zip(&g)
            .map(|(a, b)| a - b)
            .collect();
        let off = self.layout.omega();
        let fixed: Vec<(usize, f64)> = self
            .essential_values(t)?
            .into_iter()
            .filter(|&(i, _)| i >= off)
            .map(|(i, v)| (i - off, v))
            .collect();
        let sys = apply_essential_bc(LinearSystem { matrix: mc, rhs }, &fixed);
        Ok(self.field(SpaceKind::HCurl, linear_solve(&sys.matrix, &sys.rhs)?))
    }

    /// Projects `u⁰`, imposes the normal-flux data and derives `ω⁰`.
    pub fn initial_state<U>(
        &self,
        t0: f64,
        u0: U,
        omega0: Option<&(dyn Fn(f64, f64) -> f64 + Sync)>,
    ) -> Result<FlowState, SolverError>
    where
        U: Fn(f64, f64) -> [f64; 2] + Sync,
    {
        let mut u = self.asm.project_d(u0);
        for (i, v) in self.essential_values(t0)? {
            if i < self.layout.nd {
                u.coeffs_mut()[i] = v;
            }
        }
        let omega = match (self.cfg.omega_init, omega0) {
            (OmegaInit::Kinematic, _) => self.kinematic_vorticity(&u, t0)?,
            (OmegaInit::Project, Some(w)) => self.asm.project_c(w),
            (OmegaInit::Project, None) => {
                return Err(SolverError::Config("projected initial vorticity needs an analytic field".into()))
            }
        };
        Ok(FlowState {
            k: 0,
            t: t0,
            u,
            omega,
            p: Field::zeros(self.asm.complex().l2().clone()),
        })
    }

    /// Diagnostics of `state`, with balance residuals against `prev`.
    pub fn record(&self, state: &FlowState, prev: Option<&FlowState>) -> DiagnosticsRecord {
        diagnostics::record(&self.asm, state, prev, self.cfg.dt, self.nu())
    }
}

/// Everything produced by a transient run.
#[derive(Debug, Clone)]
pub struct TransientOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub reports: Vec<NewtonReport>,
    pub state: FlowState,
}

/// A failed run with the results obtained before the failure.
#[derive(Debug, Clone, Error)]
#[error("step {} failed: {error}", partial.state.k + 1)]
pub struct TransientError {
    pub partial: TransientOutput,
    pub error: SolverError,
}

/// Steps from `initial` to `t_end`, recording diagnostics after every step.
/// `observer` sees the initial state and every converged state.
pub fn run_transient(
    stepper: &Stepper,
    initial: FlowState,
    t_end: f64,
    observer: &mut dyn FnMut(&FlowState, &DiagnosticsRecord),
) -> Result<TransientOutput, Box<TransientError>> {
    let dt = stepper.config().dt;
    let t0 = initial.t;
    let fail = |partial, error| Box::new(TransientError { partial, error });
    let steps = ((t_end - t0) / dt).round();
    let first = stepper.record(&initial, None);
    observer(&initial, &first);
    let mut out = TransientOutput {
        records: vec![first],
        reports: Vec::new(),
        state: initial,
    };
    if !(steps >= 1.0) {
        let msg = format!("t_end = {t_end} must exceed t0 = {t0} by at least one step");
        return Err(fail(out, SolverError::Config(msg)));
    }
    for k in 1..=steps as usize {
        let t = t0 + k as f64 * dt;
        match stepper.newton_solve_to(&out.state, t) {
            Ok((state, report)) => {
                let rec = stepper.record(&state, Some(&out.state));
                observer(&state, &rec);
                out.records.push(rec);
                out.reports.push(report);
                out.state = state;
            }
            Err(e) => return Err(fail(out, e)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derham::DeRhamComplex;
    use crate::mesh::{Mesh, MeshConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn periodic_stepper(k: usize, n: usize, c: f64, re: Reynolds, dt: f64, gauge: GaugeMode) -> Stepper {
        let mesh = Mesh::new(MeshConfig::new(k, c, 2.0 * PI).periodic(true)).unwrap();
        let cx = Arc::new(DeRhamComplex::new(Arc::new(mesh), n).unwrap());
        let mut cfg = SolverConfig::new(dt, re, n);
        cfg.gauge = gauge;
        let asm = Arc::new(Assembler::new(cx, cfg.quad).unwrap());
        Stepper::new(asm, cfg, BCConfig::periodic(), None).unwrap()
    }

    fn shear(x: f64, y: f64) -> [f64; 2] {
        let delta = PI / 15.0;
        let u = if y <= PI {
            ((y - PI / 2.0) / delta).tanh()
        } else {
            ((1.5 * PI - y) / delta).tanh()
        };
        [u, 0.05 * x.sin()]
    }

    #[test]
    fn reynolds_parsing() {
        assert_eq!(Reynolds::parse("inf").unwrap(), Reynolds::Inviscid);
        assert_eq!(Reynolds::parse("500").unwrap(), Reynolds::Finite(500.0));
        assert!(Reynolds::parse("-1").is_err());
        assert_eq!(Reynolds::Inviscid.nu(), 0.0);
        let s = serde_json::to_string(&Reynolds::Inviscid).unwrap();
        assert_eq!(serde_json::from_str::<Reynolds>(&s).unwrap(), Reynolds::Inviscid);
        assert_eq!(serde_json::from_str::<Reynolds>("100.0").unwrap(), Reynolds::Finite(100.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::new(0.1, Reynolds::Inviscid, 2);
        assert!(cfg.validate().is_ok());
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::new(0.1, Reynolds::Inviscid, 2);
        cfg.newton_tol = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rest_state_has_zero_residual() {
        let st = periodic_stepper(2, 2, 0.1, Reynolds::Finite(10.0), 0.1, GaugeMode::MeanZero);
        let s0 = st.initial_state(0.0, |_, _| [0.0, 0.0], None).unwrap();
        let r = st.residual(&s0, &st.pack(&s0)).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        let (s1, rep) = st.newton_solve(&s0).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(s1.u.coeffs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for re in [Reynolds::Finite(500.0), Reynolds::Inviscid] {
            let st = periodic_stepper(3, 2, 0.25, re, 0.02, GaugeMode::MeanZero);
            let s0 = st.initial_state(0.0, shear, None).unwrap();
            let x: Vec<f64> = st.pack(&s0).iter().map(|v| v + 0.1 * rng.random_range(-1.0..1.0)).collect();
            let jac = st.jacobian(&s0, &x).unwrap();
            let v: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let jv = jac.matvec(&v);
            let h = 1e-4;
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let (rp, rm) = (st.residual(&s0, &xp).unwrap(), st.residual(&s0, &xm).unwrap());
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let scale = max_abs(&fd);
            let err = jv.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-6 * scale, "{err} vs {scale}");
        }
    }

    #[test]
    fn inviscid_drops_viscous_term() {
        let a = periodic_stepper(2, 2, 0.0, Reynolds::Inviscid, 0.1, GaugeMode::MeanZero);
        let s0 = a.initial_state(0.0, shear, None).unwrap();
        let mut x = a.pack(&s0);
        x.iter_mut().for_each(|v| *v *= 1.1);
        let r_inv = a.residual(&s0, &x).unwrap();
        let b = periodic_stepper(2, 2, 0.0, Reynolds::Finite(1e300), 0.1, GaugeMode::MeanZero);
        let r_big = b.residual(&s0, &x).unwrap();
        for (p, q) in r_inv.iter().zip(&r_big) {
            assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn newton_converges_quadratically() {
        let st = periodic_stepper(4, 2, 0.25, Reynolds::Inviscid, 1.0 / 50.0, GaugeMode::MeanZero);
        let s0 = st.initial_state(0.0, shear, None).unwrap();
        let (s1, rep) = st.newton_solve(&s0).unwrap();
        assert!(rep.converged && rep.iterations <= 6, "{rep:?}");
        assert!(*rep.residual_norms.last().unwrap() <= 1e-12);
        let tail = rep.residual_norms.windows(2).any(|w| w[0] <= 1e-3 && w[1] <= 10.0 * w[0] * w[0]);
        assert!(tail, "{:?}", rep.residual_norms);
        let div = st.assembler().complex().div().apply(s1.u.coeffs());
        assert!(max_abs(&div) <= 1e-12);
    }

    #[test]
    fn gauge_modes_agree() {
        let a = periodic_stepper(3, 2, 0.2, Reynolds::Finite(100.0), 0.05, GaugeMode::MeanZero);
        let b = periodic_stepper(3, 2, 0.2, Reynolds::Finite(100.0), 0.05, GaugeMode::Pin);
        let s0 = a.initial_state(0.0, shear, None).unwrap();
        let (sa, _) = a.newton_solve(&s0).unwrap();
        let (sb, _) = b.newton_solve(&s0).unwrap();
        let du = sa.u.coeffs().iter().zip(sb.u.coeffs()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let dw = sa.omega.coeffs().iter().zip(sb.omega.coeffs()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(du <= 1e-10 && dw <= 1e-10);
        // P differs by the discrete constant mode: M_S ΔP is a multiple of 1
        let dp: Vec<f64> = sa.p.coeffs().iter().zip(sb.p.coeffs()).map(|(x, y)| x - y).collect();
        let mdp = a.assembler().mass_matrix(SpaceKind::L2).matrix.matvec(&dp);
        assert!(mdp[0].abs() > 1e-6);
        assert!(mdp.iter().all(|s| (s - mdp[0]).abs() <= 1e-10 * (1.0 + mdp[0].abs())), "{mdp:?}");
        assert!(sa.p.coeffs().iter().sum::<f64>().abs() <= 1e-12);
        assert!(sb.p.coeffs()[0].abs() <= 1e-14);
    }

    #[test]
    fn gauge_rejected_with_pressure_data() {
        let layout = Layout {
            nd: 1,
            nc: 1,
            ns: 1,
            gauge: None,
        };
        let sys = LinearSystem {
            matrix: CsrMatrix::identity(3),
            rhs: vec![0.0; 3],
        };
        let walls = WallSet::of(&[crate::derham::Wall::Left]);
        assert!(matches!(
            fix_pressure_gauge(sys.clone(), &layout, GaugeMode::MeanZero, walls),
            Err(SolverError::GaugeWithPressureBoundary(_))
        ));
        let g = fix_pressure_gauge(sys, &layout, GaugeMode::MeanZero, WallSet::EMPTY).unwrap();
        assert_eq!(g.matrix.nrows(), 4);
    }

    #[test]
    fn missing_gauge_is_singular() {
        let st = periodic_stepper(2, 1, 0.0, Reynolds::Finite(10.0), 0.1, GaugeMode::MeanZero);
        let s0 = st.initial_state(0.0, shear, None).unwrap();
        let x = st.pack(&s0);
        let l = st.layout();
        // drop the multiplier row and column
        let j = st.jacobian(&s0, &x).unwrap();
        let trips = j.triplets().filter(|&(i, c, _)| i < l.base() && c < l.base()).collect();
        let j = CsrMatrix::from_triplets(l.base(), l.base(), trips);
        let rhs: Vec<f64> = (0..l.base()).map(|i| (i as f64).sin()).collect();
        assert!(matches!(linear_solve(&j, &rhs), Err(SolverError::Singular)));
    }

    #[test]
    fn step_change_is_order_dt() {
        let mut diffs = Vec::new();
        for dt in [1e-2, 1e-3, 1e-4] {
            let mut st = periodic_stepper(3, 2, 0.0, Reynolds::Finite(500.0), dt, GaugeMode::MeanZero);
            // M_D Δu / Δt amplifies round-off by 1/Δt; the absolute default
            // tolerance sits below that floor for Δt = 1e-4
            st.cfg.newton_tol = 1e-10;
            let s0 = st.initial_state(0.0, shear, None).unwrap();
            let (s1, _) = st.newton_solve(&s0).unwrap();
            let d = s1.u.coeffs().iter().zip(s0.u.coeffs()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            diffs.push(d / dt);
        }
        // ‖u¹ − u⁰‖ / Δt stays bounded
        assert!(diffs.iter().all(|&d| d < 2.0 * diffs[2] + 1e-12 && d > 0.5 * diffs[2]), "{diffs:?}");
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let st = periodic_stepper(2, 2, 0.0, Reynolds::Finite(10.0), 0.1, GaugeMode::MeanZero);
        let s0 = st.initial_state(0.0, |_, _| [0.0, 0.0], None).unwrap();
        let out = run_transient(&st, s0, 0.3, &mut |_, _| {}).unwrap();
        assert_eq!(out.records.len(), 4);
        assert!(out.state.u.coeffs().iter().all(|&v| v == 0.0));
        assert!(out.records.iter().all(|r| r.kinetic == 0.0));
    }
}
