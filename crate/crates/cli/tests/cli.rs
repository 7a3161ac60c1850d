use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fdscope::container::{sha256_hex, ArrayContainer};
use fdscope::{DesignReport, OpticalSystem};
use ndarray::Array3;

fn fdscope(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdscope"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"{
    "seed": 11,
    "layout_kind": "RMM",
    "psf_z_um": [-20, 20],
    "recon": {"lateral_px": 16, "solver": {"max_iters": 4}}
}"#;

#[test]
fn malformed_config_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    write_config(d.path(), "broken.json", "{\"seed\": 1,");
    let o = fdscope(d.path(), &["design", "--config", "broken.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("broken.json"));
}

#[test]
fn misspelled_key_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    write_config(d.path(), "c.json", r#"{"recon": {"solver": {"tua": 1}}}"#);
    let o = fdscope(d.path(), &["design", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tua"), "{}", stderr(&o));
}

#[test]
fn bad_usage_exits_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(fdscope(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(fdscope(d.path(), &["study", "colour"]).status.code(), Some(2));
    assert_eq!(fdscope(d.path(), &["study"]).status.code(), Some(2));
    assert_eq!(fdscope(d.path(), &["design", "--seed", "x"]).status.code(), Some(2));
}

#[test]
fn design_report_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({ "system": OpticalSystem::reference_20x() });
    write_config(d.path(), "c.json", &cfg.to_string());
    let o = fdscope(d.path(), &["design", "--config", "c.json", "--out", "o"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let printed: DesignReport = serde_json::from_slice(&o.stdout).unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("o/design.json")).unwrap()).unwrap();
    let saved: DesignReport = serde_json::from_value(doc["report"].clone()).unwrap();
    assert_eq!(printed, saved);
    assert_eq!(saved, DesignReport::from_system(&OpticalSystem::reference_20x()).unwrap());
    assert!((saved.r_lateral_um - 1.56).abs() < 0.01 * 1.56);
    assert!((saved.magnification - 6.5).abs() < 1e-9);
}

#[test]
fn missing_and_corrupt_artifacts_name_the_problem() {
    let d = tempfile::tempdir().unwrap();
    let o = fdscope(d.path(), &["forward", "--volume", "absent.bin", "--psfs", "absent_psfs.bin"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.bin"));

    let a = Array3::<f64>::ones((2, 4, 4));
    let c = ArrayContainer::from_real(&a, 1.0, Some(vec![0.0, 1.0]), 0, "t").unwrap();
    let bytes = c.to_bytes().unwrap();
    std::fs::write(d.path().join("short.bin"), &bytes[..bytes.len() - 3]).unwrap();
    std::fs::write(d.path().join("vol.bin"), &bytes).unwrap();
    let o = fdscope(d.path(), &["forward", "--volume", "vol.bin", "--psfs", "short.bin"]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("short.bin") && e.contains("payload"), "{e}");

    let text = String::from_utf8_lossy(&bytes).replacen("\"pitch_um\"", "\"pitch\"", 1);
    std::fs::write(d.path().join("hdr.bin"), text.as_bytes()).unwrap();
    let o = fdscope(d.path(), &["forward", "--volume", "hdr.bin", "--psfs", "vol.bin"]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("hdr.bin") && e.contains("header"), "{e}");
}

fn run_pipeline(dir: &Path) {
    write_config(dir, "c.json", SMALL);
    for args in [
        &["surface", "--config", "c.json", "--out", "o"][..],
        &["psfs", "--config", "c.json", "--out", "o", "--surface", "o/surface.bin"],
    ] {
        let o = fdscope(dir, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }
    // unit voxel at the volume centre, depth index 1
    let mut v = Array3::<f64>::zeros((2, 16, 16));
    v[[1, 8, 8]] = 1.0;
    ArrayContainer::from_real(&v, 0.75, Some(vec![-20.0, 20.0]), 0, "unit voxel")
        .unwrap()
        .write(&dir.join("unit.bin"))
        .unwrap();
    for args in [
        &["forward", "--config", "c.json", "--out", "o", "--volume", "unit.bin", "--psfs", "o/psfs.bin"][..],
        &[
            "reconstruct",
            "--config",
            "c.json",
            "--out",
            "o",
            "--measurement",
            "o/measurement.bin",
            "--psfs",
            "o/psfs.bin",
        ],
    ] {
        let o = fdscope(dir, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn pipeline_is_deterministic_and_traceable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    let names = [
        "surface.bin",
        "surface.json",
        "psfs.bin",
        "measurement.bin",
        "reconstruction.bin",
        "telemetry.jsonl",
        "reconstruct.json",
    ];
    for n in names {
        let x = std::fs::read(a.path().join("o").join(n)).unwrap();
        let y = std::fs::read(b.path().join("o").join(n)).unwrap();
        assert!(x == y, "{n} differs between runs");
    }

    let o = a.path().join("o");
    let psfs = ArrayContainer::read(&o.join("psfs.bin")).unwrap();
    let meas = ArrayContainer::read(&o.join("measurement.bin")).unwrap();

    // the unit voxel images to exactly its depth's kernel
    let k = psfs.real3().unwrap();
    let m = meas.real2().unwrap();
    let kernel = k.index_axis(ndarray::Axis(0), 1);
    let peak = kernel.iter().cloned().fold(0.0, f64::max);
    let err = m.iter().zip(kernel.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-6 * peak, "max error {err} vs peak {peak}");

    // each derived artifact names the hashes of its inputs
    let prov: serde_json::Value = serde_json::from_str(&meas.header.provenance).unwrap();
    let psf_hash = sha256_hex(&std::fs::read(o.join("psfs.bin")).unwrap());
    assert_eq!(prov["inputs"]["psfs"], psf_hash.as_str());
    let unit_hash = sha256_hex(&std::fs::read(a.path().join("unit.bin")).unwrap());
    assert_eq!(prov["inputs"]["volume"], unit_hash.as_str());
    let pp: serde_json::Value = serde_json::from_str(&psfs.header.provenance).unwrap();
    let surf_hash = sha256_hex(&std::fs::read(o.join("surface.bin")).unwrap());
    assert_eq!(pp["inputs"]["surface"], surf_hash.as_str());

    // write -> read -> write is byte identical
    for n in ["psfs.bin", "measurement.bin", "reconstruction.bin"] {
        let bytes = std::fs::read(o.join(n)).unwrap();
        let back = ArrayContainer::from_bytes(&bytes).unwrap().to_bytes().unwrap();
        assert!(back == bytes, "{n}");
    }

    let lines = std::fs::read_to_string(o.join("telemetry.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4);
    for l in lines.lines() {
        let r: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(r["objective"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn seed_override_changes_the_random_surface() {
    let d = tempfile::tempdir().unwrap();
    write_config(d.path(), "c.json", SMALL);
    assert!(fdscope(d.path(), &["surface", "--config", "c.json", "--out", "a"]).status.success());
    assert!(fdscope(d.path(), &["surface", "--config", "c.json", "--out", "b", "--seed", "12"]).status.success());
    let a = std::fs::read(d.path().join("a/surface.bin")).unwrap();
    let b = std::fs::read(d.path().join("b/surface.bin")).unwrap();
    assert_ne!(a, b);
    let h = ArrayContainer::from_bytes(&b).unwrap().header;
    assert_eq!(h.seed, 12);
}
