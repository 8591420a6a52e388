use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geosphere"))
        .args(args)
        .env("GEOSPHERE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn spaces_lists_builtins() {
    let o = run(&["spaces"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("space,algebra,m,d,n"));
    assert!(lines.iter().any(|l| l.starts_with("OH2,O,2,8,16")));
}

#[test]
fn profile_matches_closed_form() {
    let o = run(&["profile", "--space", "CH2", "--R", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(1).map(|f| f.parse().unwrap()).collect();
    let w4 = std::f64::consts::PI.powi(2) / 2.0;
    let (s, c) = (1f64.sinh(), 1f64.cosh());
    assert!((row[1] / (w4 * s.powi(4)) - 1.0).abs() < 1e-12);
    assert!((row[2] / (4.0 * w4 * s.powi(3) * c) - 1.0).abs() < 1e-12);
    assert!((row[3] / row[1] - 1.0).abs() < 1e-8);
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["spectral", "--space", "CH2"]).status.code(), Some(1));
    assert_eq!(run(&["constants", "--space", "RH2", "--R0", "1", "--R", "-1"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"space":"CH2","R":0.5,"band_limit":"four"}"#);
    let o = run(&["sample", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("band_limit"), "{err}");

    let unknown = write(
        dir.path(),
        "unknown.json",
        r#"{"space":"CH2","R":0.5,"band_limit":4,"amplitude":0.02,"samples":2,"seed":1,"extra":3}"#,
    );
    assert_eq!(run(&["sample", "--config", &unknown]).status.code(), Some(1));
}

#[test]
fn spectral_passes_and_constants_audit_reports_violations() {
    assert_eq!(run(&["spectral", "--space", "HH2", "--R", "0.1,1,3"]).status.code(), Some(0));
    let o = run(&["constants", "--space", "CH2", "--R0", "1", "--audit", "500"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("density-upper,1500"));
}

#[test]
fn sample_is_deterministic_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"space":"RH3","R":0.25,"band_limit":3,"amplitude":0.02,"samples":4,"seed":9}"#,
    );
    let out_a = dir.path().join("a.csv").display().to_string();
    let out_b = dir.path().join("b.csv").display().to_string();
    let rec = dir.path().join("records.csv").display().to_string();
    let man = dir.path().join("manifest.json").display().to_string();
    let a = run(&["sample", "--config", &cfg, "--out", &out_a, "--records", &rec, "--manifest", &man]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&["sample", "--config", &cfg, "--out", &out_b]);
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
    assert_eq!(std::fs::read_to_string(&rec).unwrap().lines().count(), 5);

    let manifest: geosphere::cli::RunManifest = serde_json::from_str(&std::fs::read_to_string(&man).unwrap()).unwrap();
    assert_eq!(manifest.seeds, vec![9, 10, 11, 12]);
    let config: geosphere::stability::CampaignConfig = serde_json::from_value(manifest.config.clone()).unwrap();
    let again = serde_json::to_value(&config).unwrap();
    assert_eq!(geosphere::cli::digest(&again).unwrap(), manifest.config_digest);
    assert_eq!(manifest.outputs["records"], rec);
}

#[test]
fn perturb_verify_and_probe_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json").display().to_string();
    let o = run(&["perturb", "--space", "CH2", "--R", "0.5", "--band-limit", "3", "--amplitude", "1e-5", "--seed", "5", "--out", &p]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = run(&["verify", "--perturbation", &p]);
    assert_eq!(v.status.code(), Some(0), "{}", String::from_utf8_lossy(&v.stderr));
    assert!(stdout(&v).lines().nth(1).unwrap().contains("pass"));

    let dir_json = write(
        dir.path(),
        "d.json",
        r#"{"space":"CH2","R":0.5,"terms":[{"degree":2,"index":0,"coeff":0.2},{"degree":2,"index":4,"coeff":-0.15}]}"#,
    );
    let pr = run(&["probe", "--direction", &dir_json]);
    assert_eq!(pr.status.code(), Some(0), "{}", String::from_utf8_lossy(&pr.stderr));
    assert_eq!(stdout(&pr).lines().count(), 4);
}

#[test]
fn verify_rejects_unnormalized_input() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.json", r#"{"space":"CH2","R":0.5,"terms":[{"degree":0,"index":0,"coeff":0.1}]}"#);
    assert_eq!(run(&["verify", "--perturbation", &p]).status.code(), Some(1));
}

#[test]
fn rescale_check_passes() {
    let o = run(&["rescale-check", "--space", "RH2", "--R", "1", "--bodies", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1 + 3 * 11 + 1);
}
