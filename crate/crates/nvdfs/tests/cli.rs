use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nvdfs::cli::output::{read_csv, RunManifest};

fn nvdfs(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvdfs"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("NVDFS_OUT_DIR")
        .output()
        .unwrap()
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["odmr", "--spin", "1", "--ms", "-1", "--seed", "5"];
    assert!(nvdfs(a.path(), &args).status.success());
    assert!(nvdfs(b.path(), &args).status.success());
    let name = "odmr_spin1_ms-1.csv";
    assert_eq!(
        fs::read(a.path().join(name)).unwrap(),
        fs::read(b.path().join(name)).unwrap()
    );
    let (ma, mb) = (
        manifest(&a.path().join("odmr_spin1_ms-1_manifest.json")),
        manifest(&b.path().join("odmr_spin1_ms-1_manifest.json")),
    );
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.fitted, mb.fitted);
    assert_eq!(ma.seed, 5);
}

#[test]
fn other_seed_same_layout_other_data() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(nvdfs(a.path(), &["odmr", "--spin", "2", "--ms", "0", "--seed", "1"])
        .status
        .success());
    assert!(nvdfs(b.path(), &["odmr", "--spin", "2", "--ms", "0", "--seed", "2"])
        .status
        .success());
    let ta = read_csv(&a.path().join("odmr_spin2_ms0.csv")).unwrap();
    let tb = read_csv(&b.path().join("odmr_spin2_ms0.csv")).unwrap();
    assert_eq!(ta.header, tb.header);
    assert_eq!(ta.rows.len(), tb.rows.len());
    assert_ne!(ta.rows, tb.rows);
}

#[test]
fn odmr_center_in_manifest() {
    let d = tempfile::tempdir().unwrap();
    assert!(nvdfs(d.path(), &["odmr", "--spin", "1", "--ms", "0"]).status.success());
    let m = manifest(&d.path().join("odmr_spin1_ms0_manifest.json"));
    let center = m.fitted["center_khz"].as_f64().unwrap();
    assert!((center - 513.84).abs() < 0.05, "{center}");
    assert_eq!(m.command, "odmr");
    assert_eq!(m.outputs, vec!["odmr_spin1_ms0.csv"]);
}

#[test]
fn partial_config_section_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    fs::write(&cfg, "system.b_z = 500\n").unwrap();
    let o = nvdfs(d.path(), &["--config", cfg.to_str().unwrap(), "entangle"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("system.a_par_1"), "{err}");
    assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
}

#[test]
fn bad_set_exits_two_and_unknown_command_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        nvdfs(d.path(), &["--set", "run.bogus=1", "tomo"]).status.code(),
        Some(2)
    );
    assert_eq!(nvdfs(d.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(fs::read_dir(d.path()).unwrap().count(), 0);
}

#[test]
fn out_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nvdfs"))
        .args(["odmr", "--spin", "2", "--ms", "1"])
        .env("NVDFS_OUT_DIR", d.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(d.path().join("odmr_spin2_ms1.csv").exists());
}

#[test]
fn entangle_reports_fidelities() {
    let d = tempfile::tempdir().unwrap();
    let o = nvdfs(
        d.path(),
        &[
            "entangle",
            "--phi",
            "pi",
            "--set",
            "noise.field_jitter=false",
            "--set",
            "init.enabled=false",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&d.path().join("entangle_manifest.json"));
    let f = &m.fitted;
    assert!((f["fidelity_ideal"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let compiled = f["fidelity_compiled"].as_f64().unwrap();
    assert!(compiled > 0.5 && compiled < 1.0);
    assert_eq!(m.config["noise.field_jitter"], "false");
    let rho = read_csv(&d.path().join("entangle_rho.csv")).unwrap();
    assert_eq!(rho.rows.len(), 16);
}

#[test]
fn tomo_writes_counts_and_reconstruction() {
    let d = tempfile::tempdir().unwrap();
    let o = nvdfs(d.path(), &["tomo", "--state", "T", "--set", "run.shots=10000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&d.path().join("tomo_T_manifest.json"));
    assert!(
        m.outputs.iter().any(|n| n.ends_with("reconstruction.json")),
        "{:?}",
        m.outputs
    );
    for n in &m.outputs {
        assert!(d.path().join(n).exists(), "{n}");
    }
}
