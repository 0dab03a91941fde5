use std::path::Path;
use std::process::{Command, Output};

use zkroa::io::write_u;
use zkroa::roa::{IterationMode, UApprox};
use zkroa::{Complex, Dictionary, DictionaryFamily};

fn zkroa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zkroa")).args(args).env("ZKROA_WORKERS", "1").output().expect("spawn zkroa")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_cubic(dir: &Path) -> Vec<String> {
    ["--system", "cubic1d", "--samples", "201", "--freq", "24", "--resolution", "200", "--out"]
        .iter()
        .map(|s| s.to_string())
        .chain([dir.display().to_string()])
        .collect()
}

#[test]
fn simulate_sticks_to_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let out = zkroa(&["simulate", "--system", "cubic1d", "--x0", "1.4", "--points", "21", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[0][1], 1.4);
    let hit = rows.iter().position(|r| r[1] == 1.5).expect("reaches the boundary");
    assert!(hit <= 3);
    assert!(rows[hit..].iter().all(|r| r[1] == 1.5));
    assert!(rows[..hit].windows(2).all(|w| w[1][1] > w[0][1]));
    assert!(rows.windows(2).all(|w| w[1][2] > w[0][2]));
}

#[test]
fn simulate_rejects_states_outside_the_region() {
    let out = zkroa(&["simulate", "--system", "cubic1d", "--x0", "2.0"]);
    assert_eq!(code(&out), 2);
    let out = zkroa(&["simulate", "--system", "vdp-reversed", "--x0", "0.1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn benchmark_cubic_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = zkroa(&["benchmark", "cubic1d", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report, json(&out));
    assert_eq!(report["basis_size"], 255);
    assert_eq!(report["accepted"], true);
    assert!(report["iterations"].as_u64().unwrap() <= 10);
    for f in ["config.toml", "operator.txt", "u_zk.txt", "mask.csv", "grid.json", "field.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn stages_chain_through_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let common = small_cubic(dir.path());
    let with = |stage: &str| {
        let mut a = vec![stage.to_string()];
        a.extend(common.iter().cloned());
        a
    };
    let run = |stage: &str| {
        let a = with(stage);
        zkroa(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    for stage in ["learn", "iterate", "predict-roa", "smooth", "verify"] {
        let out = run(stage);
        assert_eq!(code(&out), 0, "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dir.path().join("model.txt").exists());
    let verified = json(&run("verify"));
    assert!(verified["verified_fraction"].as_f64().unwrap() > 0.5);

    let whole = tempfile::tempdir().unwrap();
    let mut a = vec!["run".to_string()];
    a.extend(small_cubic(whole.path()));
    a.push("--smooth".into());
    let out = zkroa(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&out), 0);
    for f in ["operator.txt", "u_zk.txt", "mask.csv", "model.txt", "field.csv"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(whole.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_artifacts_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for stage in ["iterate", "predict-roa", "smooth", "verify"] {
        let out = zkroa(&[stage, "--system", "cubic1d", "--out", d]);
        assert_eq!(code(&out), 4, "{stage}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[sampling]\nbogus = 1\n").unwrap();
    let out = zkroa(&["learn", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&zkroa(&["benchmark", "nope"])), 2);
    assert_eq!(code(&zkroa(&["learn", "--system", "cubic1d", "--samples", "ten"])), 2);
    assert_eq!(code(&zkroa(&["learn", "--system", "cubic1d", "--family", "cos_gauss_nd", "--dt", "-1"])), 2);
    assert_eq!(code(&zkroa(&["learn", "--config", dir.path().join("absent.toml").to_str().unwrap()])), 2);
}

#[test]
fn threshold_above_the_seed_is_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = vec!["run".to_string()];
    a.extend(small_cubic(dir.path()));
    a.extend(["--threshold".into(), "5".into()]);
    let out = zkroa(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&out), 3);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["failed_stage"], "extract");
    assert!(dir.path().join("u_zk.txt").exists());
}

#[test]
fn constant_u_verifies_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let dict = Dictionary::new(DictionaryFamily::ComplexFourierNd, 3, 12.0, 1.0, vec![0.0, 0.0]).unwrap();
    let mut coeffs = vec![Complex::new(0.0, 0.0); dict.size()];
    coeffs[dict.unit_index(&[0.0, 0.0]).unwrap()] = Complex::new(1.0, 0.0);
    let u = UApprox { dict, coeffs, iterations: 1, final_residual: 0.0, residuals: vec![0.0], mode: IterationMode::Matrix };
    write_u(&dir.path().join("u_zk.txt"), &u).unwrap();
    let args = ["--system", "power2m", "--resolution", "30x30", "--out", d];
    let roa = zkroa(&[&["predict-roa"][..], &args].concat());
    assert_eq!(code(&roa), 0, "{}", String::from_utf8_lossy(&roa.stderr));
    assert_eq!(json(&roa)["volume_fraction"], 1.0);
    let out = zkroa(&[&["verify"][..], &args].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out);
    assert_eq!(r["verified_fraction"], 0.0);
    assert!(r["eligible_cells"].as_u64().unwrap() > 800);
}
