//! Run configuration, the benchmark driver behind the command line, and all
//! on-disk formats (diagnostics / field CSV, run-metadata JSON).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bench::{
    self, BenchFailure, BenchRun, DipoleConfig, DipoleSetup, ErrorReport, ShearLayerSetup, SolverOptions, TableCell,
    TGVExact, TgvStudy, WallTrace,
};
use crate::derham::WallSet;
use crate::diagnostics::DiagnosticsRecord;
use crate::mesh::{MeshConfig, MAX_DEFORMATION};
use crate::solver::{BCConfig, BoundarySection, GaugeMode, OmegaInit, Reynolds, SolverError, Stepper};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unsupported config format {0:?} (expected .toml or .json)")]
    Format(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Tgv,
    ShearLayer,
    Dipole,
    TrilinearTable,
    Custom,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::Tgv,
        Benchmark::ShearLayer,
        Benchmark::Dipole,
        Benchmark::TrilinearTable,
        Benchmark::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Tgv => "tgv",
            Benchmark::ShearLayer => "shear-layer",
            Benchmark::Dipole => "dipole",
            Benchmark::TrilinearTable => "trilinear-table",
            Benchmark::Custom => "custom",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| invalid(format!("unknown benchmark {s:?}")))
    }
}

/// Mesh resolution. Absent fields take the benchmark defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSection {
    /// Elements per direction.
    pub k: Option<usize>,
    /// Polynomial degree.
    pub n: Option<usize>,
    /// Deformation factor.
    pub c: Option<f64>,
    /// `tanh` wall clustering (dipole only).
    pub stretch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub dt: Option<f64>,
    pub re: Option<Reynolds>,
    pub t_end: Option<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub nq: Option<usize>,
    pub gauge: GaugeMode,
    /// How `ω⁰` is obtained; each benchmark has its own default.
    pub omega_init: Option<OmegaInit>,
}

impl Default for TimeSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            dt: None,
            re: None,
            t_end: None,
            newton_tol: o.newton_tol,
            newton_max_iter: o.newton_max_iter,
            nq: o.nq,
            gauge: o.gauge,
            omega_init: None,
        }
    }
}

impl TimeSection {
    fn options(&self, omega_init: OmegaInit) -> SolverOptions {
        SolverOptions {
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            nq: self.nq,
            gauge: self.gauge,
            omega_init: self.omega_init.unwrap_or(omega_init),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Points per direction of the uniform snapshot grid.
    pub grid: usize,
    /// Snapshot cadence in time units; overrides the benchmark's default times.
    pub snapshot_every: Option<f64>,
    /// Explicit snapshot times.
    pub snapshot_times: Option<Vec<f64>>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            grid: 201,
            snapshot_every: None,
            snapshot_times: None,
        }
    }
}

/// Lists swept by the Taylor–Green study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub c: Vec<f64>,
}

impl Default for StudySection {
    fn default() -> Self {
        let s = TgvStudy::default();
        Self { n: s.n, k: s.k, c: s.c }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSection {
    pub k: usize,
    pub n: Vec<usize>,
    pub nq: Vec<usize>,
    pub c: Vec<f64>,
}

impl Default for TableSection {
    fn default() -> Self {
        Self {
            k: 12,
            n: vec![2, 3, 4],
            nq: (1..=6).collect(),
            c: vec![0.0, 0.25],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialCondition {
    #[default]
    Rest,
    Tgv,
    ShearLayer,
    Dipole,
}

/// Domain and homogeneous boundary conditions of a custom run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CustomSection {
    pub scale: f64,
    pub offset: [f64; 2],
    pub periodic: bool,
    /// Walls with `u·n = 0`.
    pub normal: WallSet,
    /// Walls with `P = 0`.
    pub pressure: WallSet,
    /// Walls with `ω = 0`.
    pub vorticity: WallSet,
    /// Walls with zero tangential velocity.
    pub tangential: WallSet,
    pub initial: InitialCondition,
}

impl Default for CustomSection {
    fn default() -> Self {
        Self {
            scale: 1.0,
            offset: [0.0, 0.0],
            periodic: true,
            normal: WallSet::EMPTY,
            pressure: WallSet::EMPTY,
            vorticity: WallSet::EMPTY,
            tangential: WallSet::EMPTY,
            initial: InitialCondition::Rest,
        }
    }
}

impl CustomSection {
    fn bc(&self) -> BCConfig {
        BCConfig {
            normal: BoundarySection::homogeneous(self.normal),
            pressure: BoundarySection::homogeneous(self.pressure),
            vorticity: BoundarySection::homogeneous(self.vorticity),
            tangential: BoundarySection::homogeneous(self.tangential),
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: Option<Benchmark>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub table: Option<TableSection>,
    #[serde(default)]
    pub custom: Option<CustomSection>,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dt: Option<f64>,
    pub re: Option<Reynolds>,
    pub kk: Option<usize>,
    pub nn: Option<usize>,
    pub cc: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a `.toml` or `.json` file.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            Some("json") => Self::from_json(&text),
            other => Err(ConfigError::Format(other.unwrap_or("").to_string())),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// Sets the benchmark, rejecting a conflicting one from the file.
    pub fn with_benchmark(mut self, benchmark: Benchmark) -> Result<Self, ConfigError> {
        match self.benchmark {
            Some(b) if b != benchmark => Err(invalid(format!(
                "config file is for benchmark {b}, command line asked for {benchmark}"
            ))),
            _ => {
                self.benchmark = Some(benchmark);
                Ok(self)
            }
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(dt) = o.dt {
            self.time.dt = Some(dt);
        }
        if let Some(re) = o.re {
            self.time.re = Some(re);
        }
        if let Some(k) = o.kk {
            self.mesh.k = Some(k);
        }
        if let Some(n) = o.nn {
            self.mesh.n = Some(n);
        }
        if let Some(c) = o.cc {
            self.mesh.c = Some(c);
        }
        self
    }

    pub fn benchmark(&self) -> Result<Benchmark, ConfigError> {
        self.benchmark.ok_or_else(|| invalid("no benchmark given"))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(self.benchmark.map_or("run", Benchmark::name)))
    }

    /// Checks ranges and benchmark-specific requirements and fills defaults.
    pub fn resolve(&self) -> Result<Plan, ConfigError> {
        let b = self.benchmark()?;
        let check_c = |c: f64| {
            if (0.0..=MAX_DEFORMATION).contains(&c) {
                Ok(c)
            } else {
                Err(invalid(format!("deformation c = {c} outside [0, {MAX_DEFORMATION}]")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(invalid(format!("{name} must be positive, got {v}")))
            }
        };
        let at_least_one = |name: &str, v: usize| {
            if v >= 1 {
                Ok(v)
            } else {
                Err(invalid(format!("{name} must be at least 1")))
            }
        };
        if let Some(c) = self.mesh.c {
            check_c(c)?;
        }
        if let Some(k) = self.mesh.k {
            at_least_one("mesh.k", k)?;
        }
        if let Some(n) = self.mesh.n {
            at_least_one("mesh.n", n)?;
        }
        if let Some(dt) = self.time.dt {
            positive("time.dt", dt)?;
        }
        if let Some(t) = self.time.t_end {
            positive("time.t_end", t)?;
        }
        if let Some(nq) = self.time.nq {
            at_least_one("time.nq", nq)?;
        }
        positive("time.newton_tol", self.time.newton_tol)?;
        at_least_one("time.newton_max_iter", self.time.newton_max_iter)?;
        if self.output.grid < 2 {
            return Err(invalid("output.grid must be at least 2"));
        }
        if let Some(e) = self.output.snapshot_every {
            positive("output.snapshot_every", e)?;
        }
        let misplaced = |name: &str, present: bool, owner: Benchmark| {
            if present && b != owner {
                Err(invalid(format!("section [{name}] only applies to benchmark {owner}")))
            } else {
                Ok(())
            }
        };
        misplaced("study", self.study.is_some(), Benchmark::Tgv)?;
        misplaced("table", self.table.is_some(), Benchmark::TrilinearTable)?;
        misplaced("custom", self.custom.is_some(), Benchmark::Custom)?;
        if self.mesh.stretch.is_some() && b != Benchmark::Dipole {
            return Err(invalid("mesh.stretch only applies to benchmark dipole"));
        }
        let snapshots = |default: &[f64], t_end: f64| -> Vec<f64> {
            if let Some(ts) = &self.output.snapshot_times {
                return ts.clone();
            }
            match self.output.snapshot_every {
                Some(every) => {
                    let m = (t_end / every + 1e-9).floor() as usize;
                    (0..=m).map(|i| i as f64 * every).collect()
                }
                None => default.iter().copied().filter(|&t| t <= t_end + 1e-12).collect(),
            }
        };
        let plan = match b {
            Benchmark::Tgv => {
                let s = self.study.clone().unwrap_or_default();
                let study = TgvStudy {
                    n: self.mesh.n.map_or(s.n, |n| vec![n]),
                    k: self.mesh.k.map_or(s.k, |k| vec![k]),
                    c: self.mesh.c.map_or(s.c, |c| vec![c]),
                    dt: self.time.dt.unwrap_or(1.0 / 25.0),
                    re: self.time.re.unwrap_or(Reynolds::Finite(100.0)),
                    t_end: self.time.t_end.unwrap_or(1.0),
                    options: self.time.options(TgvStudy::default().options.omega_init),
                };
                if study.n.is_empty() || study.k.is_empty() || study.c.is_empty() {
                    return Err(invalid("study lists must not be empty"));
                }
                for &c in &study.c {
                    check_c(c)?;
                }
                for &k in &study.k {
                    at_least_one("study.k", k)?;
                }
                for &n in &study.n {
                    at_least_one("study.n", n)?;
                }
                Plan::Tgv(study)
            }
            Benchmark::ShearLayer => {
                let d = ShearLayerSetup::default();
                let setup = ShearLayerSetup {
                    k: self.mesh.k.unwrap_or(d.k),
                    n: self.mesh.n.unwrap_or(d.n),
                    c: self.mesh.c.unwrap_or(d.c),
                    dt: self.time.dt.unwrap_or(d.dt),
                    re: self.time.re.unwrap_or(d.re),
                    t_end: self.time.t_end.unwrap_or(d.t_end),
                    options: self.time.options(d.options.omega_init),
                };
                let snaps = snapshots(&[0.0, 4.0, 8.0], setup.t_end);
                Plan::ShearLayer(setup, snaps)
            }
            Benchmark::Dipole => {
                let d = DipoleConfig::default();
                let re = match self.time.re.unwrap_or(Reynolds::Finite(d.re)) {
                    Reynolds::Finite(r) => r,
                    Reynolds::Inviscid => return Err(invalid("the dipole benchmark needs a finite Re")),
                };
                let stretch = self.mesh.stretch.unwrap_or(d.stretch);
                if !(stretch >= 0.0 && stretch.is_finite()) {
                    return Err(invalid(format!("mesh.stretch must be non-negative, got {stretch}")));
                }
                if self.mesh.c.is_some_and(|c| c != 0.0) {
                    return Err(invalid("the dipole mesh is orthogonal; mesh.c must be 0"));
                }
                let cfg = DipoleConfig {
                    k: self.mesh.k.unwrap_or(d.k),
                    n: self.mesh.n.unwrap_or(d.n),
                    stretch,
                    dt: self.time.dt.unwrap_or(d.dt),
                    re,
                    t_end: self.time.t_end.unwrap_or(d.t_end),
                    options: self.time.options(d.options.omega_init),
                };
                let snaps = snapshots(&bench::DIPOLE_SNAPSHOT_TIMES, cfg.t_end);
                Plan::Dipole(cfg, snaps)
            }
            Benchmark::TrilinearTable => {
                let mut t = self.table.clone().unwrap_or_default();
                if let Some(k) = self.mesh.k {
                    t.k = k;
                }
                if let Some(n) = self.mesh.n {
                    t.n = vec![n];
                }
                if let Some(c) = self.mesh.c {
                    t.c = vec![c];
                }
                at_least_one("table.k", t.k)?;
                for &c in &t.c {
                    check_c(c)?;
                }
                if t.n.contains(&0) || t.nq.contains(&0) {
                    return Err(invalid("table degrees must be at least 1"));
                }
                Plan::TrilinearTable(t)
            }
            Benchmark::Custom => {
                let custom = self
                    .custom
                    .clone()
                    .ok_or_else(|| invalid("benchmark custom needs a [custom] section"))?;
                let re = self.time.re.ok_or_else(|| invalid("benchmark custom needs time.re"))?;
                let dt = self.time.dt.ok_or_else(|| invalid("benchmark custom needs time.dt"))?;
                let t_end = self.time.t_end.ok_or_else(|| invalid("benchmark custom needs time.t_end"))?;
                positive("custom.scale", custom.scale)?;
                let k = self.mesh.k.ok_or_else(|| invalid("benchmark custom needs mesh.k"))?;
                let n = self.mesh.n.ok_or_else(|| invalid("benchmark custom needs mesh.n"))?;
                let mesh = MeshConfig::new(k, self.mesh.c.unwrap_or(0.0), custom.scale)
                    .periodic(custom.periodic)
                    .with_offset(custom.offset);
                let snaps = snapshots(&[], t_end);
                Plan::Custom(Box::new(CustomPlan {
                    mesh,
                    n,
                    dt,
                    re,
                    t_end,
                    options: self.time.options(OmegaInit::Kinematic),
                    custom,
                    snapshots: snaps,
                }))
            }
        };
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomPlan {
    pub mesh: MeshConfig,
    pub n: usize,
    pub dt: f64,
    pub re: Reynolds,
    pub t_end: f64,
    pub options: SolverOptions,
    pub custom: CustomSection,
    pub snapshots: Vec<f64>,
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    Tgv(TgvStudy),
    ShearLayer(ShearLayerSetup, Vec<f64>),
    Dipole(DipoleConfig, Vec<f64>),
    TrilinearTable(TableSection),
    Custom(Box<CustomPlan>),
}

// ---------------------------------------------------------------- writers

pub const DIAGNOSTICS_COLUMNS: [&str; 10] = [
    "k",
    "t",
    "K",
    "E",
    "Pal",
    "W",
    "divL2",
    "energy_res",
    "enstrophy_res",
    "vorticity_res",
];

fn csv_writer(path: &Path, header: &[&str]) -> std::io::Result<csv::Writer<fs::File>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

/// One row per record; absent residuals are empty fields.
pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> std::io::Result<()> {
    let mut w = csv_writer(path, &DIAGNOSTICS_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()
}

pub fn read_diagnostics_csv(path: &Path) -> std::io::Result<Vec<DiagnosticsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Result<Vec<DiagnosticsRecord>, csv::Error> = r.deserialize().collect();
    Ok(rows?)
}

/// `x,y,value` rows.
pub fn write_field_csv(path: &Path, samples: &[[f64; 3]]) -> std::io::Result<()> {
    let mut w = csv_writer(path, &["x", "y", "value"])?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()
}

/// `x,y,value,value2` rows.
pub fn write_field2_csv(path: &Path, samples: &[[f64; 4]]) -> std::io::Result<()> {
    let mut w = csv_writer(path, &["x", "y", "value", "value2"])?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()
}

pub fn write_error_table_csv(path: &Path, report: &ErrorReport) -> std::io::Result<()> {
    let mut w = csv_writer(
        path,
        &["N", "K", "c", "hdiv_u", "hcurl_omega", "l2_p", "rate_u", "rate_omega", "rate_p"],
    )?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()
}

/// One row per `NQ` and one column per `(c, N)`, like the published table.
pub fn write_table_csv(path: &Path, cells: &[TableCell]) -> std::io::Result<()> {
    let mut cols: Vec<(u64, usize)> = cells.iter().map(|c| (c.c.to_bits(), c.n)).collect();
    cols.sort_by(|a, b| f64::from_bits(a.0).total_cmp(&f64::from_bits(b.0)).then(a.1.cmp(&b.1)));
    cols.dedup();
    let mut rows: BTreeMap<usize, BTreeMap<(u64, usize), f64>> = BTreeMap::new();
    for c in cells {
        rows.entry(c.nq).or_default().insert((c.c.to_bits(), c.n), c.value);
    }
    let header: Vec<String> = std::iter::once("NQ".to_string())
        .chain(cols.iter().map(|&(c, n)| format!("c={} N={n}", f64::from_bits(c))))
        .collect();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(&header)?;
    for (nq, vals) in rows {
        let mut rec = vec![nq.to_string()];
        rec.extend(cols.iter().map(|key| vals.get(key).map_or(String::new(), |v| format!("{v:e}"))));
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Newton iteration counts of one transient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub label: String,
    pub steps: usize,
    pub newton_iterations: Vec<usize>,
    pub diagnostics: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub program: String,
    pub version: String,
    pub benchmark: Benchmark,
    pub seed: u64,
    pub status: String,
    pub config: RunConfig,
    pub runs: Vec<RunLog>,
    pub extra: serde_json::Value,
}

pub fn write_metadata_json(path: &Path, meta: &Metadata) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n")
}

// ---------------------------------------------------------------- driver

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(#[from] SolverError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// `2` config, `3` solver, `4` I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct Sink {
    dir: PathBuf,
    files: Vec<PathBuf>,
    runs: Vec<RunLog>,
    extra: serde_json::Map<String, serde_json::Value>,
}

impl Sink {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn bench_run(&mut self, label: &str, file: &str, run: &BenchRun) -> std::io::Result<()> {
        let p = self.path(file);
        write_diagnostics_csv(&p, &run.records)?;
        for s in &run.snapshots {
            let p = self.path(&format!("omega_t{:.4}.csv", s.t));
            write_field_csv(&p, &s.samples)?;
        }
        self.runs.push(RunLog {
            label: label.to_string(),
            steps: run.reports.len(),
            newton_iterations: run.newton_iterations(),
            diagnostics: Some(file.to_string()),
        });
        Ok(())
    }

    fn traces(&mut self, traces: &[WallTrace]) -> std::io::Result<()> {
        for tr in traces {
            let p = self.path(&format!("wall_trace_t{:.4}.csv", tr.t));
            let rows: Vec<[f64; 3]> = tr.samples.iter().map(|&[y, w]| [-1.0, y, w]).collect();
            write_field_csv(&p, &rows)?;
        }
        Ok(())
    }
}

fn cell_label(n: usize, k: usize, c: f64) -> String {
    format!("N{n}_K{k}_c{c}")
}

/// Runs the configured benchmark and writes every artifact into the output
/// directory. On a solver failure the partial results are still written.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    let plan = cfg.resolve()?;
    let benchmark = cfg.benchmark()?;
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)?;
    let mut sink = Sink {
        dir: dir.clone(),
        files: Vec::new(),
        runs: Vec::new(),
        extra: serde_json::Map::new(),
    };
    let outcome = execute(&plan, cfg.seed, cfg.output.grid, &mut sink);
    let status = match &outcome {
        Ok(()) => "ok".to_string(),
        Err(e) => e.to_string(),
    };
    let meta = Metadata {
        program: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        benchmark,
        seed: cfg.seed,
        status,
        config: cfg.clone(),
        runs: std::mem::take(&mut sink.runs),
        extra: serde_json::Value::Object(std::mem::take(&mut sink.extra)),
    };
    let mp = sink.path("metadata.json");
    write_metadata_json(&mp, &meta)?;
    outcome?;
    Ok(RunSummary {
        out_dir: dir,
        files: sink.files,
    })
}

fn partial(sink: &mut Sink, label: &str, file: &str, f: BenchFailure) -> RunError {
    if let Some(p) = &f.partial {
        if let Err(e) = sink.bench_run(label, file, p) {
            log::error!("could not write partial results: {e}");
        }
    }
    RunError::Solver(f.error)
}

fn execute(plan: &Plan, seed: u64, grid: usize, sink: &mut Sink) -> Result<(), RunError> {
    match plan {
        Plan::Tgv(study) => {
            let runs = bench::tgv_study_runs(study).map_err(|f| partial(sink, "failed-cell", "diagnostics_failed.csv", f))?;
            let mut rows = Vec::new();
            for (row, run) in &runs {
                let label = cell_label(row.n, row.k, row.c);
                sink.bench_run(&label, &format!("diagnostics_{label}.csv"), run)?;
                rows.push(row.clone());
            }
            let report = ErrorReport::from_rows(rows);
            let p = sink.path("errors.csv");
            write_error_table_csv(&p, &report)?;
        }
        Plan::ShearLayer(setup, snaps) => {
            let run = bench::shear_layer_run(setup, snaps, grid)
                .map_err(|f| partial(sink, "shear-layer", "diagnostics.csv", f))?;
            sink.bench_run("shear-layer", "diagnostics.csv", &run)?;
            sink.extra.insert("contour_levels".into(), serde_json::json!(bench::SHEAR_CONTOURS));
        }
        Plan::Dipole(cfg, snaps) => {
            match bench::dipole_run(cfg, snaps, &bench::DIPOLE_TRACE_TIMES, grid) {
                Ok(d) => {
                    sink.extra.insert("f".into(), serde_json::json!(d.setup.f));
                    sink.bench_run("dipole", "diagnostics.csv", &d.run)?;
                    sink.traces(&d.traces)?;
                }
                Err(b) => {
                    let (part, error) = *b;
                    if let Some(d) = part {
                        sink.extra.insert("f".into(), serde_json::json!(d.setup.f));
                        sink.bench_run("dipole", "diagnostics.csv", &d.run)?;
                        sink.traces(&d.traces)?;
                    }
                    return Err(error.into());
                }
            }
        }
        Plan::TrilinearTable(t) => {
            let phases = bench::table_phases(seed);
            sink.extra.insert("phases".into(), serde_json::json!(phases));
            let cells = bench::trilinear_table(seed, t.k, &t.c, &t.n, &t.nq)?;
            let p = sink.path("table.csv");
            write_table_csv(&p, &cells)?;
            let p = sink.path("table_cells.csv");
            let mut w = csv_writer(&p, &["NQ", "c", "N", "points", "value"])?;
            for c in &cells {
                w.serialize(c).map_err(std::io::Error::from)?;
            }
            w.flush()?;
        }
        Plan::Custom(c) => {
            let cfg = c.options.solver_config(c.dt, c.re, c.n);
            let asm = bench::discretize(c.mesh.clone(), c.n, cfg.quad)?;
            let stepper = Stepper::new(asm, cfg, c.custom.bc(), None)?;
            let s0 = match c.custom.initial {
                InitialCondition::Rest => stepper.initial_state(0.0, |_, _| [0.0, 0.0], Some(&|_, _| 0.0))?,
                InitialCondition::Tgv => {
                    let ex = TGVExact { re: c.re };
                    let w0 = |x: f64, y: f64| ex.omega(x, y, 0.0);
                    stepper.initial_state(0.0, |x, y| ex.u(x, y, 0.0), Some(&w0))?
                }
                InitialCondition::ShearLayer => stepper.initial_state(0.0, bench::shear_layer_u0, None)?,
                InitialCondition::Dipole => {
                    let mut d = DipoleSetup::default();
                    d.calibrate(stepper.assembler());
                    let w0 = |x: f64, y: f64| d.omega(x, y);
                    stepper.initial_state(0.0, |x, y| d.u(x, y), Some(&w0))?
                }
            };
            let run = bench::drive(&stepper, s0, c.t_end, &c.snapshots, grid, &mut |_| {})
                .map_err(|f| partial(sink, "custom", "diagnostics.csv", f))?;
            sink.bench_run("custom", "diagnostics.csv", &run)?;
        }
    }
    Ok(())
}
