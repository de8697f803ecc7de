//! `meevc2d <benchmark> --config <file> [options]`
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
//! Log verbosity is read from `MEEVC_LOG` (default `info`).

use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

use meevc::io::{self, Benchmark, Overrides, RunConfig, RunError};
use meevc::solver::Reynolds;

#[derive(Debug, Parser)]
#[command(name = "meevc2d", version, about = "Structure-preserving 2D Navier-Stokes benchmarks")]
struct Cli {
    /// tgv, shear-layer, dipole, trilinear-table or custom
    #[arg(value_parser = parse_benchmark)]
    benchmark: Benchmark,
    /// TOML or JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Reynolds number, or `inf` for inviscid flow
    #[arg(long, value_parser = Reynolds::parse)]
    re: Option<Reynolds>,
    /// Elements per direction
    #[arg(long)]
    kk: Option<usize>,
    /// Polynomial degree
    #[arg(long)]
    nn: Option<usize>,
    /// Mesh deformation factor
    #[arg(long)]
    cc: Option<f64>,
}

fn parse_benchmark(s: &str) -> Result<Benchmark, String> {
    s.parse().map_err(|e: io::ConfigError| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MEEVC_LOG", "info")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        dt: cli.dt,
        re: cli.re,
        kk: cli.kk,
        nn: cli.nn,
        cc: cli.cc,
    };
    let result = RunConfig::from_path(&cli.config)
        .and_then(|c| c.with_benchmark(cli.benchmark))
        .map(|c| c.apply(&overrides))
        .map_err(RunError::from)
        .and_then(|cfg| io::run(&cfg));
    match result {
        Ok(summary) => {
            log::info!("wrote {} files to {}", summary.files.len(), summary.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
