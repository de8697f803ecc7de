use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn meevc2d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meevc2d"))
        .args(args)
        .env("MEEVC_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn shear_layer_run_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "[time]\nt_end = 0.1\n[output]\ngrid = 5\n");
    let out = dir.path().join("out");
    let o = meevc2d(&[
        "shear-layer", "--config", &cfg, "--out", out.to_str().unwrap(), "--kk", "4", "--nn", "1", "--cc", "0.1",
        "--re", "inf", "--dt", "0.05", "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 4);
    assert!(diag.starts_with("k,t,K,E,Pal,W,divL2,energy_res,enstrophy_res,vorticity_res\n"));
    let meta = fs::read_to_string(out.join("metadata.json")).unwrap();
    assert!(meta.contains("\"seed\": 3") && meta.contains("\"k\": 4") && meta.contains("\"inf\""), "{meta}");
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_c = write(dir.path(), "c.toml", "[mesh]\nc = 0.5\n");
    assert_eq!(meevc2d(&["tgv", "--config", &bad_c]).status.code(), Some(2));
    let unknown = write(dir.path(), "u.toml", "colour = 1\n");
    assert_eq!(meevc2d(&["tgv", "--config", &unknown]).status.code(), Some(2));
    let other = write(dir.path(), "o.toml", "benchmark = \"dipole\"\n");
    assert_eq!(meevc2d(&["tgv", "--config", &other]).status.code(), Some(2));
    let no_re = write(dir.path(), "r.toml", "[mesh]\nk = 2\nn = 1\n[time]\ndt = 0.1\nt_end = 0.1\n[custom]\n");
    assert_eq!(meevc2d(&["custom", "--config", &no_re]).status.code(), Some(2));
    assert_eq!(meevc2d(&["tgv", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
    assert_eq!(meevc2d(&["vortex", "--config", &bad_c]).status.code(), Some(2));
    assert_eq!(meevc2d(&["tgv", "--config", &other, "--re", "-1"]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.toml", "[mesh]\nk = 3\n[time]\nt_end = 0.04\nnewton_max_iter = 1\n[output]\ngrid = 3\n");
    let out = dir.path().join("out");
    let o = meevc2d(&["shear-layer", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(out.join("diagnostics.csv").exists() && out.join("metadata.json").exists());
}

#[test]
fn unwritable_output_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", "");
    let blocker = write(dir.path(), "file", "x");
    let o = meevc2d(&["trilinear-table", "--config", &cfg, "--out", &format!("{blocker}/sub")]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn table_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.json", "{\"table\": {\"k\": 4, \"n\": [2], \"nq\": [1, 3], \"c\": [0.0, 0.25]}}");
    let mut tables = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("o{i}"));
        let o = meevc2d(&["trilinear-table", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        tables.push(fs::read_to_string(out.join("table.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0].lines().next(), Some("NQ,c=0 N=2,c=0.25 N=2"));
}
