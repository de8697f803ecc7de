use std::fs;
use std::time::Instant;

use proptest::prelude::*;

use meevc::bench::{self, DipoleConfig, ShearLayerSetup, SolverOptions, TGVExact};
use meevc::diagnostics;
use meevc::io::{self, RunConfig};
use meevc::mesh::MeshConfig;
use meevc::solver::{BCConfig, OmegaInit, Reynolds, Stepper};

fn conservation_residuals(k: usize, c: f64) -> (f64, f64, f64) {
    let setup = ShearLayerSetup {
        k,
        n: 2,
        c,
        dt: 1.0 / 50.0,
        re: Reynolds::Inviscid,
        t_end: 5.0 / 50.0,
        options: SolverOptions::default(),
    };
    let run = bench::shear_layer_run(&setup, &[], 2).unwrap();
    let r = &run.records;
    let step = |f: &dyn Fn(&diagnostics::DiagnosticsRecord) -> f64| {
        r.windows(2).map(|w| (f(&w[1]) - f(&w[0])).abs()).fold(0.0, f64::max)
    };
    (
        step(&|x| x.kinetic) / r[0].kinetic,
        step(&|x| x.enstrophy) / r[0].enstrophy,
        step(&|x| x.total_vorticity),
    )
}

#[test]
fn conservation_does_not_depend_on_resolution() {
    for k in [6, 12] {
        let (dk, de, dw) = conservation_residuals(k, 0.25);
        assert!(dk <= 1e-12 && de <= 1e-12 && dw <= 1e-12, "K={k}: {dk:e} {de:e} {dw:e}");
    }
}

#[test]
fn midpoint_rule_is_second_order_in_time() {
    // Re = 1 so the decay is fast; N = 6 pushes the spatial error far below
    let re = Reynolds::Finite(1.0);
    let opts = SolverOptions {
        omega_init: OmegaInit::Project,
        ..SolverOptions::default()
    };
    let err = |dt: f64| {
        let (e, _) = bench::tgv_run(6, 4, 0.0, dt, re, 0.2, &opts).unwrap();
        e.l2_u
    };
    let (e1, e2, e3) = (err(0.05), err(0.025), err(0.0125));
    let (q1, q2) = (e1 / e2, e2 / e3);
    assert!((3.5..4.5).contains(&q1) && (3.5..4.5).contains(&q2), "{e1:e} {e2:e} {e3:e}");
}

#[test]
fn initial_errors_are_projection_errors() {
    let re = Reynolds::Finite(100.0);
    let ex = TGVExact { re };
    let cfg = SolverOptions {
        omega_init: OmegaInit::Project,
        ..SolverOptions::default()
    }
    .solver_config(0.04, re, 2);
    let asm = bench::discretize(MeshConfig::new(6, 0.25, 2.0).periodic(true), 2, cfg.quad).unwrap();
    let st = Stepper::new(asm.clone(), cfg, BCConfig::periodic(), None).unwrap();
    let w0 = |x: f64, y: f64| ex.omega(x, y, 0.0);
    let s0 = st.initial_state(0.0, |x, y| ex.u(x, y, 0.0), Some(&w0)).unwrap();
    let e = bench::error_norms(&asm, &s0, &ex, 0.0, 0.0);
    let u = asm.project_d(|x, y| ex.u(x, y, 0.0));
    let w = asm.project_c(|x, y| ex.omega(x, y, 0.0));
    assert_eq!(s0.u.coeffs(), u.coeffs());
    assert_eq!(s0.omega.coeffs(), w.coeffs());
    assert!(e.hdiv_u > 0.0 && e.hdiv_u < 0.2);
}

#[test]
fn shear_layer_smoke_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml(
        "benchmark = \"shear-layer\"\n[mesh]\nk = 6\n[time]\nt_end = 0.2\n[output]\ngrid = 11\nsnapshot_every = 0.1\n",
    )
    .unwrap();
    cfg.out = Some(dir.path().to_path_buf());
    let t0 = Instant::now();
    let summary = io::run(&cfg).unwrap();
    assert!(t0.elapsed().as_secs() < 60);
    let recs = io::read_diagnostics_csv(&dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(recs.len(), 11);
    assert!(recs.iter().skip(1).all(|r| r.div_l2 <= 1e-11));
    for name in ["omega_t0.0000.csv", "omega_t0.1000.csv", "omega_t0.2000.csv", "metadata.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(summary.files.iter().all(|f| f.exists()));
    let meta: io::Metadata = serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta.status, "ok");
    assert_eq!(meta.runs[0].newton_iterations.len(), 10);
    // the echoed config reproduces the run
    let mut again = meta.config.clone();
    again.out = Some(dir.path().join("again"));
    io::run(&again).unwrap();
    assert_eq!(
        fs::read(dir.path().join("diagnostics.csv")).unwrap(),
        fs::read(dir.path().join("again/diagnostics.csv")).unwrap()
    );
}

#[test]
fn dipole_run_writes_wall_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml(
        "benchmark = \"dipole\"\n[mesh]\nk = 6\nn = 1\n[time]\ndt = 0.1\nt_end = 0.4\n[output]\ngrid = 5\n",
    )
    .unwrap();
    cfg.out = Some(dir.path().to_path_buf());
    io::run(&cfg).unwrap();
    let trace = fs::read_to_string(dir.path().join("wall_trace_t0.4000.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("x,y,value"));
    assert_eq!(lines.count(), 121);
    let meta = fs::read_to_string(dir.path().join("metadata.json")).unwrap();
    assert!(meta.contains("\"f\""));
}

#[test]
fn custom_cavity_at_rest_stays_at_rest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml(
        "benchmark = \"custom\"\n[mesh]\nk = 3\nn = 2\nc = 0.2\n[time]\ndt = 0.1\nre = 100.0\nt_end = 0.3\n\
         [custom]\nperiodic = false\nnormal = [\"left\", \"right\", \"bottom\", \"top\"]\n\
         tangential = [\"left\", \"right\", \"bottom\", \"top\"]\n",
    )
    .unwrap();
    cfg.out = Some(dir.path().to_path_buf());
    io::run(&cfg).unwrap();
    let recs = io::read_diagnostics_csv(&dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.kinetic == 0.0 && r.enstrophy == 0.0));
}

#[test]
fn failed_newton_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml(
        "benchmark = \"shear-layer\"\n[mesh]\nk = 4\n[time]\nt_end = 0.1\nnewton_max_iter = 1\n[output]\ngrid = 3\n",
    )
    .unwrap();
    cfg.out = Some(dir.path().to_path_buf());
    let err = io::run(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let recs = io::read_diagnostics_csv(&dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(recs.len(), 1);
    let meta = fs::read_to_string(dir.path().join("metadata.json")).unwrap();
    assert!(meta.contains("Newton"), "{meta}");
}

#[test]
fn dipole_initial_energy_is_two() {
    let (f, k, e, _) = bench::dipole_initial_values(&DipoleConfig::default()).unwrap();
    assert!((k - 2.0).abs() < 1e-12);
    assert!(f > 0.9 && f < 1.0 && e > 700.0, "{f} {e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn one_inviscid_step_conserves_energy_and_enstrophy(a in -1.0f64..1.0, b in -1.0f64..1.0, p in 0.0f64..6.28, c in 0.0f64..0.3) {
        let setup = ShearLayerSetup { k: 3, n: 2, c, dt: 0.05, re: Reynolds::Inviscid, t_end: 0.05, options: SolverOptions::default() };
        let st = bench::shear_layer_stepper(&setup).unwrap();
        let s0 = st.initial_state(0.0, |x, y| {
            // velocity of psi = a cos(y + p) + b sin(x - p) + a b sin(x + y)
            let s = a * b * (x + y).cos();
            [-a * (y + p).sin() + s, -b * (x - p).cos() - s]
        }, None).unwrap();
        let (s1, rep) = st.newton_solve(&s0).unwrap();
        prop_assert!(rep.converged);
        let asm = st.assembler();
        let (k0, k1) = (diagnostics::kinetic_energy(asm, &s0.u), diagnostics::kinetic_energy(asm, &s1.u));
        let (e0, e1) = (diagnostics::enstrophy(asm, &s0.omega), diagnostics::enstrophy(asm, &s1.omega));
        prop_assert!((k1 - k0).abs() <= 1e-11 * (1.0 + k0));
        prop_assert!((e1 - e0).abs() <= 1e-11 * (1.0 + e0));
        prop_assert!(diagnostics::div_l2(asm, &s1.u) <= 1e-12);
    }
}
