//! End-to-end checks of the command-line interface: exit codes, provenance
//! headers, reproducibility and config-file overrides.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cylstable"))
}

fn temp_path(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("cylstable-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn constants_reports_the_known_tail_value() {
    let out = bin()
        .args(["constants", "--alpha", "1.0"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let tail = report["tail_constant"].as_f64().unwrap();
    assert!((tail - 1.0 / std::f64::consts::PI).abs() < 1e-12, "{tail}");
    assert_eq!(report["provenance"]["tool"], "cylstable");
}

#[test]
fn rejected_stability_index_exits_with_config_code() {
    let out = bin()
        .args([
            "integrate",
            "--alpha",
            "2.0",
            "--integrand",
            "constant",
            "--params",
            r#"{"matrix": [[1.0]]}"#,
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["sample", "--alpha", "1.0", "--grid", "0,0.5,0.2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["integrate", "--alpha", "1.0", "--integrand", "nonsense"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_output_is_seed_reproducible_with_provenance() {
    let run = || {
        let out = bin()
            .args([
                "sample", "--alpha", "1.3", "--dg", "2", "--dh", "2", "--grid", "4x1.0",
                "--seed", "11", "--samples", "3",
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert!(a.starts_with("# {"));
    assert!(a.contains("\"seed\":11"));
    // 3 scenarios x 4 cells + comment + header
    assert_eq!(a.lines().count(), 2 + 12);
}

#[test]
fn verify_suite_reports_are_byte_reproducible_and_pass() {
    let out1 = temp_path("verify1.json");
    let out2 = temp_path("verify2.json");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["verify", "--suite", "moment", "--seed", "5"])
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    assert_eq!(a, b);
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["reports"][0]["schema_version"], "1");
}

#[test]
fn unknown_suite_is_a_config_error() {
    let out = bin()
        .args(["verify", "--suite", "bogus", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let config = temp_path("config.json");
    std::fs::write(&config, r#"{"alpha": 0.8, "max_dim": 2}"#).unwrap();
    let out = bin()
        .arg("--config")
        .arg(&config)
        .arg("constants")
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["alpha"].as_f64().unwrap(), 0.8);
    assert_eq!(report["sphere_masses"].as_array().unwrap().len(), 2);

    let out = bin()
        .arg("--config")
        .arg(&config)
        .args(["constants", "--alpha", "1.0"])
        .output()
        .unwrap();
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["alpha"].as_f64().unwrap(), 1.0);
}

#[test]
fn integrate_writes_level_rows() {
    let out = bin()
        .args([
            "integrate",
            "--integrand",
            "power_law",
            "--params",
            r#"{"matrix": [[0.4, 0.0], [0.0, 0.4]], "beta": 0.5}"#,
            "--alpha",
            "1.0",
            "--grid",
            "64x1.0",
            "--levels",
            "4",
            "--scenarios",
            "2",
            "--seed",
            "3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    // comment + header + 2 scenarios x 4 levels
    assert_eq!(text.lines().count(), 2 + 8);
    assert!(text.lines().nth(1).unwrap().starts_with("scenario,level_cells"));
}

#[test]
fn decouple_emits_ratio_report() {
    let out = bin()
        .args([
            "decouple",
            "--integrand",
            "constant",
            "--params",
            r#"{"matrix": [[0.5, 0.1], [0.0, 0.5]]}"#,
            "--alpha",
            "1.5",
            "--grid",
            "4x1.0",
            "--scenarios",
            "4000",
            "--seed",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let forward = report["identity_gamma"]["forward"]["value"].as_f64().unwrap();
    // deterministic integrand: coupled and decoupled share the law
    assert!((forward - 1.0).abs() < 0.1, "{forward}");
    assert!(report["conditional_charfn_worst_deviation"].as_f64().unwrap() < 0.05);
}
