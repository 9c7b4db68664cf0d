use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use leafcycle_cli::config::{ExperimentConfig, Terms};
use serde_json::Value;

fn leafcycle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leafcycle"))
        .args(args)
        .output()
        .expect("spawn leafcycle")
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> String {
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.display().to_string()
}

fn run(sub: &str, cfg: &ExperimentConfig, dir: &Path, extra: &[&str]) -> (i32, String) {
    let config = write_config(dir, cfg);
    let out = dir.join(sub);
    let mut args = vec![sub, "--config", &config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = leafcycle(&args);
    (
        o.status.code().expect("exit code"),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

fn polynomial(terms: &[(&str, &str)]) -> Terms {
    Terms::Polynomial {
        degree: 5,
        r: terms
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        s: Default::default(),
    }
}

fn zeros(dir: &Path) -> (Vec<f64>, Value) {
    let v: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("melnikov/zeros.json")).unwrap())
            .unwrap();
    let hs = v["leaves"][0]["zeros"]
        .as_array()
        .unwrap()
        .iter()
        .map(|z| z["h"].as_f64().unwrap())
        .collect();
    (hs, v)
}

#[test]
fn dumped_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 11;
    cfg.h_range = Some([0.1, 1.5]);
    cfg.perturbation.terms = polynomial(&[("1,0", "0.525"), ("3,0", "-5/3"), ("5,0", "1")]);
    let config = write_config(dir.path(), &cfg);
    let o = leafcycle(&["hunt", "--config", &config, "--dump-config"]);
    assert_eq!(o.status.code(), Some(0));
    let back = ExperimentConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(back, cfg);

    let o = leafcycle(&["melnikov", "--dump-config", "--seed", "5"]);
    let back = ExperimentConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(
        back,
        ExperimentConfig {
            seed: 5,
            ..ExperimentConfig::default()
        }
    );
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let config = write_config(dir.path(), &cfg);
    let mut seen: Vec<(String, Vec<u8>)> = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "4")] {
        for sub in ["melnikov", "verify", "hunt"] {
            let out = dir.path().join(run).join(sub);
            let o = leafcycle(&[
                sub,
                "--config",
                &config,
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "3",
                "--threads",
                threads,
            ]);
            assert_eq!(
                o.status.code(),
                Some(0),
                "{sub}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
        }
        let mut files = Vec::new();
        for name in [
            "melnikov/melnikov.csv",
            "melnikov/zeros.json",
            "verify/verify.json",
            "hunt/hunt.csv",
            "hunt/cycles.csv",
        ] {
            files.push((
                name.to_string(),
                fs::read(dir.path().join(run).join(name)).unwrap(),
            ));
        }
        if seen.is_empty() {
            seen = files;
        } else {
            for ((name, a), (_, b)) in seen.iter().zip(&files) {
                assert!(a == b, "{name} differs between runs");
            }
        }
    }
}

#[test]
fn cubic_example_has_its_zero_at_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run("melnikov", &ExperimentConfig::default(), dir.path(), &[]);
    assert_eq!(code, 0, "{err}");
    let (hs, v) = zeros(dir.path());
    assert_eq!(hs.len(), 1);
    assert!((hs[0] - 0.5).abs() <= 1e-8);
    assert_eq!(v["leaves"][0]["zeros"][0]["kind"], "simple");
    let coeffs: Vec<f64> = v["leaves"][0]["closed_form"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_f64().unwrap())
        .collect();
    let want = [0.0, -2.0 * std::f64::consts::PI, 4.0 * std::f64::consts::PI];
    for (c, w) in coeffs.iter().zip(want) {
        assert!((c - w).abs() <= 1e-12);
    }
}

#[test]
fn designed_quintic_has_two_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.perturbation.terms = polynomial(&[("1,0", "0.525"), ("3,0", "-5/3"), ("5,0", "1")]);
    cfg.eps_list = vec![0.02];
    let (code, err) = run("melnikov", &cfg, dir.path(), &[]);
    assert_eq!(code, 0, "{err}");
    let (hs, _) = zeros(dir.path());
    assert_eq!(hs.len(), 2);
    assert!(
        (hs[0] - 0.3).abs() <= 1e-8 && (hs[1] - 0.7).abs() <= 1e-8,
        "{hs:?}"
    );

    let (code, err) = run("hunt", &cfg, dir.path(), &[]);
    assert_eq!(code, 0, "{err}");
    let v: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("hunt/hunt.json")).unwrap())
            .unwrap();
    for (cycle, h) in v["cycles"].as_array().unwrap().iter().zip([0.3, 0.7]) {
        let e = &cycle["entries"][0];
        assert_eq!(e["status"], "ok");
        assert!((e["h_eps"].as_f64().unwrap() - h).abs() <= 0.02);
    }
}

#[test]
fn vanishing_perturbation_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.perturbation.terms = polynomial(&[]);
    let (code, err) = run("melnikov", &cfg, dir.path(), &[]);
    assert_eq!(code, 2);
    assert!(err.contains("not be identically zero"), "{err}");
    let (_, v) = zeros(dir.path());
    assert_eq!(v["leaves"][0]["all_zero"], true);
}

#[test]
fn empty_eps_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.eps_list.clear();
    let (code, err) = run("hunt", &cfg, dir.path(), &[]);
    assert_eq!(code, 1);
    assert!(err.contains("eps_list"), "{err}");
}

#[test]
fn malformed_expression_reports_its_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.perturbation.terms = polynomial(&[("1,0", "2*(c1")]);
    let (code, err) = run("melnikov", &cfg, dir.path(), &[]);
    assert_eq!(code, 1);
    assert!(err.contains("1,0"), "{err}");
}

#[test]
fn sample_points_off_the_sign_tuple_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.verify.n_values.clear();
    cfg.verify.sample_points = Some(vec![vec![0.3, 0.2, -0.8], vec![0.1, -0.4, -1.1]]);
    let (code, err) = run("verify", &cfg, dir.path(), &[]);
    assert_eq!(code, 4, "{err}");
    let v: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify/verify.json")).unwrap())
            .unwrap();
    let audit = v["groups"]
        .as_array()
        .unwrap()
        .iter()
        .find(|g| g["name"] == "chart_audit")
        .unwrap();
    assert_eq!(audit["pass"], false);
    assert_eq!(v["pass"], false);
}

#[test]
fn jacobi_table_starts_at_the_identity_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.system = leafcycle_cli::config::SystemConfig::Hyperelliptic { k: vec![0.5, 1.5] };
    cfg.signs = vec![1, 1];
    cfg.leaf = vec![2.0, 2.0];
    let (code, err) = run("jacobi", &cfg, dir.path(), &[]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(dir.path().join("jacobi/jacobi.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema_version: 1"));
    assert_eq!(
        lines.next(),
        Some("t,sn,cn,dn1,dn2,identity_cn,identity_dn1,identity_dn2,inversion")
    );
    let first: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|c| c.parse().unwrap())
        .collect();
    assert_eq!(&first[..5], &[0.0, 0.0, 1.0, 1.0, 1.0]);
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        for id in &cells[5..8] {
            assert!(id.parse::<f64>().unwrap() <= 1e-8);
        }
    }
}

#[test]
fn custom_system_verifies_against_its_own_rhs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.system = leafcycle_cli::config::SystemConfig::Custom {
        n: 3,
        casimirs: vec!["x1^2/2 + x3^2/2".into()],
        hamiltonian: "x1^2/2 + x2^2/2".into(),
        nu: "1".into(),
        rhs: vec!["x2*x3".into(), "-x1*x3".into(), "-x1*x2".into()],
    };
    let (code, err) = run("verify", &cfg, dir.path(), &[]);
    assert_eq!(code, 0, "{err}");

    if let leafcycle_cli::config::SystemConfig::Custom { rhs, .. } = &mut cfg.system {
        rhs[2] = "x1*x2".into();
    }
    let (code, _) = run("verify", &cfg, dir.path(), &[]);
    assert_eq!(code, 4);
}
