//! Benchmark cases: Taylor–Green convergence, shear-layer roll-up, normal
//! dipole collision against no-slip walls and the trilinear-form quadrature
//! table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::assembly::{Assembler, QuadConfig};
use crate::derham::{DeRhamComplex, Field, SpaceKind, WallSet};
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::mesh::{Mesh, MeshConfig, Spacing};
use crate::polybasis::QuadRule;
use crate::solver::{
    run_transient, BCConfig, FlowState, GaugeMode, NewtonReport, OmegaInit, Reynolds, SolverConfig, SolverError, Stepper, TransientError,
};

/// Solver settings shared by every benchmark; `dt`, `Re` and the degree
/// come from the benchmark itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Gauss points per direction; `N + 3` when absent.
    pub nq: Option<usize>,
    pub gauge: GaugeMode,
    pub omega_init: OmegaInit,
}

impl Default for SolverOptions {
    fn default() -> Self {
        let base = SolverConfig::new(1.0, Reynolds::Inviscid, 1);
        Self {
            newton_tol: base.newton_tol,
            newton_max_iter: base.newton_max_iter,
            nq: None,
            gauge: base.gauge,
            omega_init: base.omega_init,
        }
    }
}

impl SolverOptions {
    pub fn solver_config(&self, dt: f64, re: Reynolds, degree: usize) -> SolverConfig {
        let mut cfg = SolverConfig::new(dt, re, degree);
        cfg.newton_tol = self.newton_tol;
        cfg.newton_max_iter = self.newton_max_iter;
        if let Some(nq) = self.nq {
            cfg.quad = QuadConfig { nq };
        }
        cfg.gauge = self.gauge;
        cfg.omega_init = self.omega_init;
        cfg
    }
}

/// Builds mesh, complex and assembler in one go.
pub fn discretize(mesh: MeshConfig, degree: usize, quad: QuadConfig) -> Result<Arc<Assembler>, SolverError> {
    let mesh = Mesh::new(mesh).map_err(|e| SolverError::Config(e.to_string()))?;
    let cx = DeRhamComplex::new(Arc::new(mesh), degree)?;
    Ok(Arc::new(Assembler::new(Arc::new(cx), quad)?))
}

/// Uniform samples `(x, y, value)` of a scalar field over the mapped domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub k: usize,
    pub t: f64,
    pub samples: Vec<[f64; 3]>,
}

/// Samples a `C` or `S` field on an `n × n` grid covering the bounding box
/// `offset + [0, α]²` of the domain.
pub fn sample_scalar(field: &Field, n: usize) -> Vec<[f64; 3]> {
    let mesh = field.space().mesh();
    let cfg = mesh.config();
    let n = n.max(2);
    let coords: Vec<(f64, f64)> = (0..n)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .map(|(i, j)| {
            let h = cfg.scale / (n - 1) as f64;
            (cfg.offset[0] + i as f64 * h, cfg.offset[1] + j as f64 * h)
        })
        .collect();
    coords
        .par_iter()
        .map(|&(x, y)| {
            let v = field.value_at(x, y).unwrap_or(f64::NAN);
            [x, y, v]
        })
        .collect()
}

/// A finished (or partially finished) benchmark run.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub records: Vec<DiagnosticsRecord>,
    pub reports: Vec<NewtonReport>,
    pub snapshots: Vec<Snapshot>,
    pub state: FlowState,
}

impl BenchRun {
    pub fn newton_iterations(&self) -> Vec<usize> {
        self.reports.iter().map(|r| r.iterations).collect()
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{error}")]
pub struct BenchFailure {
    pub partial: Option<Box<BenchRun>>,
    pub error: SolverError,
}

impl From<SolverError> for BenchFailure {
    fn from(error: SolverError) -> Self {
        Self { partial: None, error }
    }
}

fn is_at(t: f64, targets: &[f64], dt: f64) -> bool {
    targets.iter().any(|&s| (t - s).abs() < 0.25 * dt)
}

/// Runs `stepper` from `initial`, sampling `ω` at the requested times.
pub fn drive(
    stepper: &Stepper,
    initial: FlowState,
    t_end: f64,
    snapshot_times: &[f64],
    grid: usize,
    extra: &mut dyn FnMut(&FlowState),
) -> Result<BenchRun, BenchFailure> {
    let dt = stepper.config().dt;
    let mut snapshots = Vec::new();
    let mut observer = |s: &FlowState, r: &DiagnosticsRecord| {
        log::info!(
            "k = {:4}  t = {:.4}  K = {:.12e}  E = {:.12e}  divL2 = {:.2e}",
            r.k,
            r.t,
            r.kinetic,
            r.enstrophy,
            r.div_l2
        );
        if is_at(s.t, snapshot_times, dt) {
            snapshots.push(Snapshot {
                k: s.k,
                t: s.t,
                samples: sample_scalar(&s.omega, grid),
            });
        }
        extra(s);
    };
    let res = run_transient(stepper, initial, t_end, &mut observer);
    let build = |out: crate::solver::TransientOutput, snapshots| BenchRun {
        records: out.records,
        reports: out.reports,
        snapshots,
        state: out.state,
    };
    match res {
        Ok(out) => Ok(build(out, snapshots)),
        Err(e) => {
            let TransientError { partial, error } = *e;
            Err(BenchFailure {
                partial: Some(Box::new(build(partial, snapshots))),
                error,
            })
        }
    }
}

// ---------------------------------------------------------------- Taylor–Green

/// Closed-form Taylor–Green vortex on `[0, 2]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TGVExact {
    pub re: Reynolds,
}

impl TGVExact {
    fn decay(&self, t: f64) -> f64 {
        (-2.0 * PI * PI * t * self.re.nu()).exp()
    }

    pub fn u(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let d = self.decay(t);
        [-(PI * x).sin() * (PI * y).cos() * d, (PI * x).cos() * (PI * y).sin() * d]
    }

    pub fn p(&self, x: f64, y: f64, t: f64) -> f64 {
        0.25 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos()) * self.decay(t).powi(2)
    }

    pub fn omega(&self, x: f64, y: f64, t: f64) -> f64 {
        -2.0 * PI * (PI * x).sin() * (PI * y).sin() * self.decay(t)
    }

    /// `∇×ω = (∂ω/∂y, −∂ω/∂x)`
    pub fn curl_omega(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let a = -2.0 * PI * PI * self.decay(t);
        [a * (PI * x).sin() * (PI * y).cos(), -a * (PI * x).cos() * (PI * y).sin()]
    }

    /// Total pressure `P = p + ½ u·u`.
    pub fn total_pressure(&self, x: f64, y: f64, t: f64) -> f64 {
        let u = self.u(x, y, t);
        self.p(x, y, t) + 0.5 * (u[0] * u[0] + u[1] * u[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub hdiv_u: f64,
    pub hcurl_omega: f64,
    pub l2_p: f64,
    pub l2_u: f64,
    pub l2_omega: f64,
}

/// `H(div)` error of `u`, `H(curl)` error of `ω` and mean-free `L²` error of
/// `P`, with `NQ + 2` Gauss points per direction.
pub fn error_norms(asm: &Assembler, state: &FlowState, exact: &TGVExact, t_u: f64, t_p: f64) -> ErrorNorms {
    let cx = asm.complex();
    let mesh = cx.mesh();
    let rule = QuadRule::gauss(asm.quad().nq + 2).expect("positive point count");
    let pts: Vec<[f64; 2]> = rule
        .points()
        .iter()
        .flat_map(|&eta| rule.points().iter().map(move |&xi| [xi, eta]))
        .collect();
    let wts: Vec<f64> = rule
        .weights()
        .iter()
        .flat_map(|&a| rule.weights().iter().map(move |&b| a * b))
        .collect();
    let div = Field::new(cx.l2().clone(), cx.div().apply(state.u.coeffs())).expect("div lands in S");
    let curl = Field::new(cx.hdiv().clone(), cx.curl().apply(state.omega.coeffs())).expect("curl lands in D");

    struct Acc {
        u: f64,
        div: f64,
        w: f64,
        curl: f64,
        p2: f64,
        p1: f64,
        ph2: f64,
        ph1: f64,
        pph: f64,
        area: f64,
    }
    let per_elem: Vec<Acc> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let uh = state.u.vectors(e, &pts).expect("D field");
            let wh = state.omega.values(e, &pts).expect("C field");
            let ph = state.p.values(e, &pts).expect("S field");
            let dh = div.values(e, &pts).expect("S field");
            let ch = curl.vectors(e, &pts).expect("D field");
            let mut a = Acc {
                u: 0.0,
                div: 0.0,
                w: 0.0,
                curl: 0.0,
                p2: 0.0,
                p1: 0.0,
                ph2: 0.0,
                ph1: 0.0,
                pph: 0.0,
                area: 0.0,
            };
            for (q, p) in pts.iter().enumerate() {
                let x = mesh.local_to_physical(e, *p);
                let w = wts[q] * mesh.element_jacobian(e, *p).det;
                let ue = exact.u(x[0], x[1], t_u);
                let ce = exact.curl_omega(x[0], x[1], t_u);
                let pe = exact.total_pressure(x[0], x[1], t_p);
                a.u += w * ((ue[0] - uh[q][0]).powi(2) + (ue[1] - uh[q][1]).powi(2));
                a.div += w * dh[q] * dh[q];
                a.w += w * (exact.omega(x[0], x[1], t_u) - wh[q]).powi(2);
                a.curl += w * ((ce[0] - ch[q][0]).powi(2) + (ce[1] - ch[q][1]).powi(2));
                a.p2 += w * pe * pe;
                a.p1 += w * pe;
                a.ph2 += w * ph[q] * ph[q];
                a.ph1 += w * ph[q];
                a.pph += w * pe * ph[q];
                a.area += w;
            }
            a
        })
        .collect();
    let s = per_elem.iter().fold([0.0; 10], |mut s, a| {
        for (d, v) in s.iter_mut().zip([a.u, a.div, a.w, a.curl, a.p2, a.p1, a.ph2, a.ph1, a.pph, a.area]) {
            *d += v;
        }
        s
    });
    let [eu, ediv, ew, ecurl, p2, p1, ph2, ph1, pph, area] = s;
    // ‖(P − P̄) − (P_h − P̄_h)‖² expanded in the accumulated moments
    let dmean = (p1 - ph1) / area;
    let ep = (p2 - 2.0 * pph + ph2) - area * dmean * dmean;
    ErrorNorms {
        hdiv_u: (eu + ediv).sqrt(),
        hcurl_omega: (ew + ecurl).sqrt(),
        l2_p: ep.max(0.0).sqrt(),
        l2_u: eu.sqrt(),
        l2_omega: ew.sqrt(),
    }
}

/// One Taylor–Green run on the periodic `[0, 2]²` mesh.
pub fn tgv_run(
    n: usize,
    k: usize,
    c: f64,
    dt: f64,
    re: Reynolds,
    t_end: f64,
    options: &SolverOptions,
) -> Result<(ErrorNorms, BenchRun), BenchFailure> {
    let cfg = options.solver_config(dt, re, n);
    let asm = discretize(MeshConfig::new(k, c, 2.0).periodic(true), n, cfg.quad)?;
    let stepper = Stepper::new(asm.clone(), cfg, BCConfig::periodic(), None)?;
    let exact = TGVExact { re };
    let w0 = |x: f64, y: f64| exact.omega(x, y, 0.0);
    let s0 = stepper.initial_state(0.0, |x, y| exact.u(x, y, 0.0), Some(&w0))?;
    let run = drive(&stepper, s0, t_end, &[], 0, &mut |_| {})?;
    let t = run.state.t;
    let norms = error_norms(&asm, &run.state, &exact, t, t - 0.5 * dt);
    Ok((norms, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub c: f64,
    pub hdiv_u: f64,
    pub hcurl_omega: f64,
    pub l2_p: f64,
    pub rate_u: Option<f64>,
    pub rate_omega: Option<f64>,
    pub rate_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
}

impl ErrorReport {
    /// Rows sharing `(N, c)` ordered by `K`, with rates filled in.
    pub fn from_rows(mut rows: Vec<ErrorRow>) -> Self {
        rows.sort_by(|a, b| (a.n, a.c.to_bits(), a.k).cmp(&(b.n, b.c.to_bits(), b.k)));
        for i in 1..rows.len() {
            let (a, b) = (&rows[i - 1], &rows[i]);
            if a.n == b.n && a.c == b.c {
                let lr = (b.k as f64 / a.k as f64).ln();
                let rate = |x: f64, y: f64| (x / y).ln() / lr;
                let (ru, rw, rp) = (rate(a.hdiv_u, b.hdiv_u), rate(a.hcurl_omega, b.hcurl_omega), rate(a.l2_p, b.l2_p));
                rows[i].rate_u = Some(ru);
                rows[i].rate_omega = Some(rw);
                rows[i].rate_p = Some(rp);
            }
        }
        Self { rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgvStudy {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub c: Vec<f64>,
    pub dt: f64,
    pub re: Reynolds,
    pub t_end: f64,
    pub options: SolverOptions,
}

impl Default for TgvStudy {
    fn default() -> Self {
        Self {
            n: vec![1, 2, 3],
            k: vec![4, 6, 8],
            c: vec![0.0, 0.25],
            dt: 1.0 / 25.0,
            re: Reynolds::Finite(100.0),
            t_end: 1.0,
            // the weak curl of the projected velocity carries element-scale
            // noise on curved meshes; the exact vorticity is available here
            options: SolverOptions {
                omega_init: OmegaInit::Project,
                ..SolverOptions::default()
            },
        }
    }
}

/// Runs every `(N, K, c)` cell (in parallel) and keeps each run next to its
/// error row. Rates are not filled in.
pub fn tgv_study_runs(study: &TgvStudy) -> Result<Vec<(ErrorRow, BenchRun)>, BenchFailure> {
    let cells: Vec<(usize, usize, f64)> = study
        .n
        .iter()
        .flat_map(|&n| study.c.iter().flat_map(move |&c| study.k.iter().map(move |&k| (n, k, c))))
        .collect();
    cells
        .par_iter()
        .map(|&(n, k, c)| {
            let (e, run) = tgv_run(n, k, c, study.dt, study.re, study.t_end, &study.options)?;
            let row = ErrorRow {
                n,
                k,
                c,
                hdiv_u: e.hdiv_u,
                hcurl_omega: e.hcurl_omega,
                l2_p: e.l2_p,
                rate_u: None,
                rate_omega: None,
                rate_p: None,
            };
            Ok((row, run))
        })
        .collect()
}

/// Runs every `(N, K, c)` cell and computes observed rates.
pub fn tgv_error_study(study: &TgvStudy) -> Result<ErrorReport, SolverError> {
    let runs = tgv_study_runs(study).map_err(|f| f.error)?;
    Ok(ErrorReport::from_rows(runs.into_iter().map(|(r, _)| r).collect()))
}

// ---------------------------------------------------------------- shear layer

pub const SHEAR_DELTA: f64 = PI / 15.0;
pub const SHEAR_EPSILON: f64 = 0.05;

/// Double shear layer on `[0, 2π]²`.
pub fn shear_layer_u0(x: f64, y: f64) -> [f64; 2] {
    let u = if y <= PI {
        ((y - PI / 2.0) / SHEAR_DELTA).tanh()
    } else {
        ((1.5 * PI - y) / SHEAR_DELTA).tanh()
    };
    [u, SHEAR_EPSILON * x.sin()]
}

/// Contour levels used to plot the shear-layer vorticity.
pub const SHEAR_CONTOURS: [f64; 12] = [-6.0, -5.0, -4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShearLayerSetup {
    pub k: usize,
    pub n: usize,
    pub c: f64,
    pub dt: f64,
    pub re: Reynolds,
    pub t_end: f64,
    pub options: SolverOptions,
}

impl Default for ShearLayerSetup {
    fn default() -> Self {
        Self {
            k: 12,
            n: 2,
            c: 0.0,
            dt: 1.0 / 50.0,
            re: Reynolds::Inviscid,
            t_end: 8.0,
            options: SolverOptions::default(),
        }
    }
}

pub fn shear_layer_stepper(setup: &ShearLayerSetup) -> Result<Stepper, SolverError> {
    let cfg = setup.options.solver_config(setup.dt, setup.re, setup.n);
    let asm = discretize(
        MeshConfig::new(setup.k, setup.c, 2.0 * PI).periodic(true),
        setup.n,
        cfg.quad,
    )?;
    Stepper::new(asm, cfg, BCConfig::periodic(), None)
}

pub fn shear_layer_run(
    setup: &ShearLayerSetup,
    snapshot_times: &[f64],
    grid: usize,
) -> Result<BenchRun, BenchFailure> {
    let stepper = shear_layer_stepper(setup)?;
    let s0 = stepper.initial_state(0.0, shear_layer_u0, None)?;
    drive(&stepper, s0, setup.t_end, snapshot_times, grid, &mut |_| {})
}

// ---------------------------------------------------------------- dipole

/// Two opposite-signed monopoles in `[-1, 1]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleSetup {
    pub omega_e: f64,
    pub centers: [[f64; 2]; 2],
    pub r0: f64,
    /// Velocity scaling that brings the initial kinetic energy to 2.
    pub f: f64,
    pub re: f64,
}

impl Default for DipoleSetup {
    fn default() -> Self {
        Self {
            omega_e: 320.0,
            centers: [[0.0, 0.1], [0.0, -0.1]],
            r0: 0.1,
            f: 1.0,
            re: 625.0,
        }
    }
}

/// Target initial kinetic energy of the dipole.
pub const DIPOLE_ENERGY: f64 = 2.0;

impl DipoleSetup {
    fn gauss(&self, i: usize, x: f64, y: f64) -> f64 {
        let [cx, cy] = self.centers[i];
        (-((x - cx).powi(2) + (y - cy).powi(2)) / (self.r0 * self.r0)).exp()
    }

    pub fn unscaled_u(&self, x: f64, y: f64) -> [f64; 2] {
        let h = 0.5 * self.omega_e;
        let ([x1, y1], [x2, y2]) = (self.centers[0], self.centers[1]);
        let (g1, g2) = (self.gauss(0, x, y), self.gauss(1, x, y));
        [
            -h * (y - y1) * g1 + h * (y - y2) * g2,
            -h * (x - x2) * g2 + h * (x - x1) * g1,
        ]
    }

    pub fn unscaled_omega(&self, x: f64, y: f64) -> f64 {
        let mut w = 0.0;
        for (i, sign) in [(0, 1.0), (1, -1.0)] {
            let [cx, cy] = self.centers[i];
            let rr = ((x - cx).powi(2) + (y - cy).powi(2)) / (self.r0 * self.r0);
            w += sign * self.omega_e * (1.0 - rr) * (-rr).exp();
        }
        w
    }

    pub fn u(&self, x: f64, y: f64) -> [f64; 2] {
        let u = self.unscaled_u(x, y);
        [self.f * u[0], self.f * u[1]]
    }

    pub fn omega(&self, x: f64, y: f64) -> f64 {
        self.f * self.unscaled_omega(x, y)
    }

    /// Sets `f` from the discrete kinetic energy of the projected unscaled field.
    pub fn calibrate(&mut self, asm: &Assembler) -> f64 {
        let u = asm.project_d(|x, y| self.unscaled_u(x, y));
        self.f = (DIPOLE_ENERGY / diagnostics::kinetic_energy(asm, &u)).sqrt();
        self.f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleConfig {
    pub k: usize,
    pub n: usize,
    /// `tanh` stretching towards the walls; `0` for a uniform mesh.
    pub stretch: f64,
    pub dt: f64,
    pub re: f64,
    pub t_end: f64,
    pub options: SolverOptions,
}

impl Default for DipoleConfig {
    fn default() -> Self {
        Self {
            k: 24,
            n: 2,
            stretch: 1.2,
            dt: 1.0 / 100.0,
            re: 625.0,
            t_end: 0.5,
            options: SolverOptions::default(),
        }
    }
}

pub fn dipole_mesh(k: usize, stretch: f64) -> MeshConfig {
    let spacing = if stretch > 0.0 {
        Spacing::Tanh { stretch }
    } else {
        Spacing::Uniform
    };
    MeshConfig::new(k, 0.0, 2.0)
        .with_offset([-1.0, -1.0])
        .with_spacing(spacing)
}

/// Vorticity along the left wall `x = −1`, `y ∈ [−0.6, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WallTrace {
    pub k: usize,
    pub t: f64,
    /// `(y, ω)` pairs.
    pub samples: Vec<[f64; 2]>,
}

pub fn wall_trace(state: &FlowState, points: usize) -> WallTrace {
    let points = points.max(2);
    let samples = (0..points)
        .map(|i| {
            let y = -0.6 + 0.6 * i as f64 / (points - 1) as f64;
            [y, state.omega.value_at(-1.0, y).unwrap_or(f64::NAN)]
        })
        .collect();
    WallTrace {
        k: state.k,
        t: state.t,
        samples,
    }
}

#[derive(Debug, Clone)]
pub struct DipoleRun {
    pub setup: DipoleSetup,
    pub run: BenchRun,
    pub traces: Vec<WallTrace>,
}

pub const DIPOLE_TRACE_TIMES: [f64; 3] = [0.4, 0.6, 1.0];
pub const DIPOLE_SNAPSHOT_TIMES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

pub fn dipole_stepper(cfg: &DipoleConfig) -> Result<Stepper, SolverError> {
    let re = Reynolds::try_from(cfg.re).map_err(SolverError::Config)?;
    let scfg = cfg.options.solver_config(cfg.dt, re, cfg.n);
    let asm = discretize(dipole_mesh(cfg.k, cfg.stretch), cfg.n, scfg.quad)?;
    Stepper::new(asm, scfg, BCConfig::no_slip(WallSet::ALL), None)
}

pub fn dipole_run(
    cfg: &DipoleConfig,
    snapshot_times: &[f64],
    trace_times: &[f64],
    grid: usize,
) -> Result<DipoleRun, Box<(Option<DipoleRun>, SolverError)>> {
    let stepper = dipole_stepper(cfg).map_err(|e| Box::new((None, e)))?;
    let mut setup = DipoleSetup {
        re: cfg.re,
        ..DipoleSetup::default()
    };
    let f = setup.calibrate(stepper.assembler());
    log::info!("dipole velocity scaling f = {f}");
    let s0 = {
        let s = setup.clone();
        let w0 = |x: f64, y: f64| s.omega(x, y);
        stepper
            .initial_state(0.0, |x, y| s.u(x, y), Some(&w0))
            .map_err(|e| Box::new((None, e)))?
    };
    let dt = cfg.dt;
    let mut traces = Vec::new();
    let res = drive(&stepper, s0, cfg.t_end, snapshot_times, grid, &mut |s| {
        if is_at(s.t, trace_times, dt) {
            traces.push(wall_trace(s, 121));
        }
    });
    match res {
        Ok(run) => Ok(DipoleRun { setup, run, traces }),
        Err(BenchFailure { partial, error }) => Err(Box::new((
            partial.map(|p| DipoleRun {
                setup,
                run: *p,
                traces,
            }),
            error,
        ))),
    }
}

/// `(f, K⁰, E⁰, P⁰)` of the scaled initial condition on a given discretization.
pub fn dipole_initial_values(cfg: &DipoleConfig) -> Result<(f64, f64, f64, f64), SolverError> {
    let stepper = dipole_stepper(cfg)?;
    let mut setup = DipoleSetup::default();
    let f = setup.calibrate(stepper.assembler());
    let w0 = |x: f64, y: f64| setup.omega(x, y);
    let s0 = stepper.initial_state(0.0, |x, y| setup.u(x, y), Some(&w0))?;
    let asm = stepper.assembler();
    Ok((
        f,
        diagnostics::kinetic_energy(asm, &s0.u),
        diagnostics::enstrophy(asm, &s0.omega),
        diagnostics::palinstrophy(asm, &s0.omega),
    ))
}

// ---------------------------------------------------------------- quadrature probe table

/// Random phases `(e, f, g, h)` of the two test fields.
pub fn table_phases(seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [rng.random(), rng.random(), rng.random(), rng.random()]
}

/// Gauss points of a rule of polynomial degree `nq` in the table layout.
pub fn table_points(nq: usize) -> usize {
    nq + 1
}

/// `a(ω_h, ∇×ψ_h, ∇×ω_h)` on the periodic unit square with `K × K` elements.
pub fn trilinear_probe_value(phases: [f64; 4], k: usize, c: f64, n: usize, points: usize) -> Result<f64, SolverError> {
    let asm = discretize(MeshConfig::new(k, c, 1.0).periodic(true), n, QuadConfig::new(points)?)?;
    let [e, f, g, h] = phases;
    let tau = 2.0 * PI;
    let omega = asm.project_c(|x, y| tau * (tau * x + e).sin() * (tau * y + f).sin());
    let psi = asm.project_c(|x, y| tau * (tau * x + g).sin() * (tau * y + h).sin());
    let cx = asm.complex();
    let u = Field::new(cx.space(SpaceKind::HDiv).clone(), cx.curl().apply(psi.coeffs()))?;
    Ok(asm.curl_trilinear_probe(&omega, &u)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    #[serde(rename = "NQ")]
    pub nq: usize,
    pub c: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub points: usize,
    pub value: f64,
}

/// Cells of the published table whose value is at round-off level.
pub fn table_reference_zero(c: f64, n: usize, nq: usize) -> bool {
    if c == 0.0 {
        return true;
    }
    match n {
        2 => nq >= 2,
        3 => nq >= 4,
        4 => nq >= 5,
        _ => false,
    }
}

pub fn trilinear_table(
    seed: u64,
    k: usize,
    c_list: &[f64],
    n_list: &[usize],
    nq_list: &[usize],
) -> Result<Vec<TableCell>, SolverError> {
    let phases = table_phases(seed);
    let cells: Vec<(usize, f64, usize)> = nq_list
        .iter()
        .flat_map(|&nq| c_list.iter().flat_map(move |&c| n_list.iter().map(move |&n| (nq, c, n))))
        .collect();
    cells
        .par_iter()
        .map(|&(nq, c, n)| {
            let points = table_points(nq);
            Ok(TableCell {
                nq,
                c,
                n,
                points,
                value: trilinear_probe_value(phases, k, c, n, points)?,
            })
        })
        .collect()
}
