use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bitgeo::bnn::{save_checkpoint, ArchSpec, BinaryDense, Layer, Network};
use bitgeo::RealTensor;

fn bitgeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitgeo"))
        .args(args)
        .env("BITGEO_THREADS", "1")
        .output()
        .expect("spawn bitgeo")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synthetic_spec(dir: &Path, kind: &str, dim: usize, n: usize) -> PathBuf {
    let p = dir.join(format!("{dim}_{n}.json"));
    std::fs::write(&p, format!(r#"{{"kind":{kind},"dim":{dim},"num_samples":{n},"seed":7}}"#)).unwrap();
    p
}

#[test]
fn angles_check_passes_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = bitgeo(&["angles", "--dims", "2,16,64", "--samples", "20000", "--seed", "3", "--out", s(dir.path()), "--check"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("angles.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["subcommand"], "angles");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["dims"], serde_json::json!([2, 16, 64]));
    assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn angles_without_out_is_usage_error() {
    assert_eq!(code(&bitgeo(&["angles", "--dims", "4"])), 2);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bitgeo(&["angles", "--dims", "0", "--out", s(dir.path())])), 2);
}

#[test]
fn scalar_dynamics_tracks_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let out = bitgeo(&["dynamics", "--alpha", "-0.5", "--epsilon", "0.001", "--steps", "20000", "--stride", "10", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(&dir.path().join("summary.json"));
    assert!((summary["time_avg_theta"].as_f64().unwrap() + 0.5).abs() < 0.04);
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2001);
    assert_eq!(code(&bitgeo(&["dynamics", "--out", s(dir.path())])), 2);
}

#[test]
fn matrix_dynamics_from_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("m.json");
    std::fs::write(&spec, r#"{"c_yx": [[0.3, -0.6], [0.0, 0.9]]}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = bitgeo(&["dynamics", "--matrix-spec", s(&spec), "--steps", "20000", "--stride", "100", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(&out_dir.join("summary.json"));
    assert!(summary["max_abs_error"].as_f64().unwrap() < 0.04);
    std::fs::write(&spec, r#"{"c_yx": [[1, 2]], "c_xx": [[1, 5], [0, 1]]}"#).unwrap();
    assert_eq!(code(&bitgeo(&["dynamics", "--matrix-spec", s(&spec), "--out", s(&out_dir)])), 2);
}

#[test]
fn train_is_deterministic_and_logs_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synthetic_spec(dir.path(), r#"{"kind":"separable_classification","margin":0.5}"#, 20, 500);
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        let out = bitgeo(&[
            "train", "--synthetic", s(&spec), "--arch", "20c-32b-2s", "--epochs", "3", "--lr", "0.1",
            "--batch-size", "25", "--seed", "9", "--out", s(&ckpt),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        ckpt
    };
    let (a, b) = (run("a.ckpt"), run("b.ckpt"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let log = std::fs::read_to_string(dir.path().join("a.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,lr,train_loss,train_acc,test_acc");
    assert_eq!(log.lines().count(), 4);
    let m = json(&dir.path().join("a.ckpt.manifest.json"));
    assert_eq!(m["subcommand"], "train");
    assert_eq!(m["threads"], 1);
    assert!(m["results"]["test_acc_binary"].as_f64().unwrap() > 0.8);
}

#[test]
fn bad_arch_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synthetic_spec(dir.path(), r#"{"kind":"isotropic_gaussian"}"#, 8, 50);
    let out = bitgeo(&["train", "--synthetic", s(&spec), "--arch", "8c-16x-2s", "--out", s(&dir.path().join("c"))]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("field 2") && err.contains("16x"), "{err}");
    let out = bitgeo(&["train", "--synthetic", s(&spec), "--arch", "9c-2s", "--out", s(&dir.path().join("c"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

/// A net whose binary layers have latent weights already at ±1, so both
/// sides of every weight DPP pair agree.
fn identity_checkpoint(path: &Path) {
    let arch: ArchSpec = "16b-12b-2s".parse().unwrap();
    let mut net = Network::from_arch(&arch, 2).unwrap();
    for layer in net.layers_mut() {
        if let Layer::BinaryDense(l) = layer {
            let w = RealTensor::from_array2(l.sign_matrix()).unwrap();
            *layer = Layer::BinaryDense(BinaryDense::new(w).unwrap());
        }
    }
    save_checkpoint(&net, path).unwrap();
}

#[test]
fn diagnose_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("id.ckpt");
    identity_checkpoint(&ckpt);
    let spec = synthetic_spec(dir.path(), r#"{"kind":"isotropic_gaussian"}"#, 16, 300);
    let out_dir = dir.path().join("diag");
    let diag = |report: &str| {
        bitgeo(&[
            "diagnose", "--ckpt", s(&ckpt), "--synthetic", s(&spec), "--report", report, "--out", s(&out_dir),
            "--max-csv-rows", "500",
        ])
    };
    let out = diag("dpp");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for layer in ["layer1", "layer2"] {
        let r = json(&out_dir.join(format!("{layer}_dpp.json")));
        assert!((r["pearson_r"].as_f64().unwrap() - 1.0).abs() < 1e-12, "{layer}: {r}");
        assert_eq!(r["sign_flip_fraction"], 0.0);
        let csv = std::fs::read_to_string(out_dir.join(format!("{layer}_dpp.csv"))).unwrap();
        assert!(csv.starts_with("# subsample of 500"));
    }
    for report in ["dpp-act", "angles", "components", "pca", "perm"] {
        let out = diag(report);
        assert_eq!(code(&out), 0, "{report}: {}", stderr(&out));
    }
    let angles = json(&out_dir.join("layer1_angles.json"));
    assert!(angles["angles_deg"].as_array().unwrap().iter().all(|a| a.as_f64().unwrap() < 1e-6));
    assert!(out_dir.join("input_pca.json").exists());
    assert!(out_dir.join("perm_summary.json").exists());
    assert_eq!(code(&diag("histogram")), 2);
}

#[test]
fn diagnose_rejects_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let spec = synthetic_spec(dir.path(), r#"{"kind":"isotropic_gaussian"}"#, 16, 10);
    let out = bitgeo(&["diagnose", "--ckpt", s(&ckpt), "--synthetic", s(&spec), "--report", "dpp", "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));
}

#[test]
fn bench_checks_and_times() {
    let out = bitgeo(&["bench", "--dims", "64,1000", "--iters", "100"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("dim,iters,ns_packed,ns_float,speedup\n"));
    assert_eq!(table.lines().count(), 3);
    assert_eq!(code(&bitgeo(&["bench", "--iters", "0"])), 2);
}

#[test]
fn zero_threads_is_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_bitgeo"))
        .args(["bench", "--iters", "1", "--dims", "8", "--threads", "0"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
