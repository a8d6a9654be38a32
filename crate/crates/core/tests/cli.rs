use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_microchannel"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(config: &Path, out: &Path) -> Output {
    bin().args(["run", "--config"]).arg(config).arg("--out").arg(out).output().unwrap()
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn every_shipped_config_validates() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let out = bin().args(["validate", "--config"]).arg(&path).output().unwrap();
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn schema_is_json() {
    let out = bin().arg("schema").output().unwrap();
    assert!(out.status.success());
    let schema: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(schema["properties"]["experiment"].is_object());
}

#[test]
fn free_channel_run_matches_free_law() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&configs().join("free_channel.json"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(tmp.path());
    assert_eq!(s["rng"], "ChaCha8Rng");
    assert_eq!(s["config_sha256"].as_str().unwrap().len(), 64);
    assert!(s["scalars"]["max_deviation_from_free"].as_f64().unwrap() < 1e-8);
    assert!(s["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let csv = std::fs::read_to_string(tmp.path().join("channel.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,purity,coherence_l1,trace_distance,leakage,w_re_0_0,w_im_0_0,w_re_0_1,w_im_0_1,w_re_1_0,w_im_1_0,w_re_1_1,w_im_1_1"
    );
    assert_eq!(lines.count(), 200);
}

#[test]
fn modes_run_reports_analytic_column() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&configs().join("modes.json"), tmp.path()).status.success());
    let csv = std::fs::read_to_string(tmp.path().join("modes.csv")).unwrap();
    assert!(csv.starts_with("n,energy,analytic,relative_error\n"));
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((row[2] - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-12);
    assert!(row[3] < 1e-3);
}

#[test]
fn sweep_writes_one_series_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&configs().join("decoherence_sweep.json"), tmp.path()).status.success());
    for i in 0..3 {
        assert!(tmp.path().join(format!("decoherence_{i:02}.csv")).exists());
    }
    let slopes = summary(tmp.path())["scalars"]["slopes"].as_array().unwrap().clone();
    assert_eq!(slopes.len(), 1);
    assert!((slopes[0].as_f64().unwrap() - 2.0).abs() < 0.3);
}

#[test]
fn seed_override_changes_random_channel() {
    let tmp = tempfile::tempdir().unwrap();
    let config = configs().join("free_channel.json");
    let read = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let status = bin().args(["run", "--config"]).arg(&config).arg("--out").arg(&out).args(["--seed", seed]).output().unwrap().status;
        assert!(status.success());
        (std::fs::read(out.join("w0.json")).unwrap(), summary(&out)["seed"].as_u64().unwrap())
    };
    let (a, sa) = read("1", "a");
    let (b, sb) = read("2", "b");
    assert_ne!(a, b);
    assert_eq!((sa, sb), (1, 2));
}

#[test]
fn unknown_key_exits_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(
        tmp.path(),
        "bad.json",
        "{\n  \"schema_version\": 1,\n  \"experiment\": \"modes\",\n  \"grid\": {\"length\": 1.0, \"points\": 50},\n  \"n_modes\": 3,\n  \"colour\": 1\n}\n",
    );
    let out = bin().args(["validate", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:6:"), "{err}");
}

#[test]
fn oversized_basis_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("free_channel.json"))
        .unwrap()
        .replace("\"n_max\": 2", "\"n_max\": 2, \"max_dim\": 10");
    let path = write_config(tmp.path(), "big.json", &text);
    let out = run(&path, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stalled_fit_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("gibbs_fit.json"))
        .unwrap()
        .replace("\"targets\"", "\"max_iterations\": 1, \"tolerance\": 1e-15, \"targets\"");
    let path = write_config(tmp.path(), "stall.json", &text);
    let out = run(&path, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gibbs_and_feeding_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&configs().join("gibbs_fit.json"), &tmp.path().join("g")).status.success());
    let model: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("g/gibbs_model.json")).unwrap()).unwrap();
    assert_eq!(model["zeta"].as_array().unwrap().len(), 3);
    assert!(run(&configs().join("feeding.json"), &tmp.path().join("f")).status.success());
    let s = summary(&tmp.path().join("f"));
    assert!(s["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true), "{s}");
    let w0: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("f/w0.json")).unwrap()).unwrap();
    assert_eq!(w0["dim"], 2);
}
