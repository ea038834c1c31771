//! End-to-end tests of the `nonlocal` binary: artifact layout, config
//! merging, determinism, and the exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonlocal"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn mesh_stencil_pipeline_produces_ingestable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mesh_out = dir.path().join("mesh");
    let sten_out = dir.path().join("sten");
    run_ok(&["mesh", "--p", "2", "--m", "3", "--out", mesh_out.to_str().unwrap()]);
    assert!(mesh_out.join("effective_config.json").is_file(), "config echo");
    let cloud_csv = mesh_out.join("cloud.csv");
    assert!(read(&cloud_csv).starts_with("x0,x1,role\n"), "documented cloud header");

    run_ok(&[
        "stencil",
        "--cloud",
        cloud_csv.to_str().unwrap(),
        "--r",
        "2",
        "--out",
        sten_out.to_str().unwrap(),
    ]);
    let stencils = read(&sten_out.join("stencils.json"));
    let parsed: serde_json::Value = serde_json::from_str(&stencils).unwrap();
    // A 2D interlaced mesh with m = 3 carries 4x4 train vertices, each
    // with one stencil per dimension.
    assert_eq!(parsed["p"], 2);
    assert_eq!(parsed["stencils"].as_array().unwrap().len(), 2 * 16);
}

#[test]
fn identical_config_and_seed_yield_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        [
            "derivative".to_string(),
            "--p".into(),
            "2".into(),
            "--m".into(),
            "5".into(),
            "--index".into(),
            "1,1".into(),
            "--K".into(),
            "4".into(),
            "--seed".into(),
            "11".into(),
            "--emit-operator".into(),
            "--out".into(),
            dir.path().join(out).to_str().unwrap().to_string(),
        ]
    };
    let a: Vec<String> = args("a").to_vec();
    let b: Vec<String> = args("b").to_vec();
    run_ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    run_ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    for file in ["derivative.csv", "operator.csv"] {
        let left = read(&dir.path().join("a").join(file));
        let right = read(&dir.path().join("b").join(file));
        assert_eq!(left, right, "{file} must be byte-identical across reruns");
    }
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("conv.json");
    fs::write(&config, r#"{"k": 2, "r": 3, "degree": 4, "meshes": [6, 12], "seed": 1}"#).unwrap();
    let out = dir.path().join("run");
    run_ok(&[
        "convergence",
        "--config",
        config.to_str().unwrap(),
        "--r",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    let echoed: serde_json::Value =
        serde_json::from_str(&read(&out.join("effective_config.json"))).unwrap();
    assert_eq!(echoed["k"], 2, "file value kept");
    assert_eq!(echoed["r"], 4, "flag wins over file");
    assert_eq!(echoed["meshes"], serde_json::json!([6, 12]));
}

#[test]
fn exit_codes_follow_the_documented_contract() {
    // 0: success (help included).
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    // 2: parse errors and invalid values.
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["convergence", "--k", "0"]).status.code(), Some(2));
    let missing = run(&["taylor-fit"]);
    assert_eq!(missing.status.code(), Some(2), "missing required inputs are usage errors");
    assert!(String::from_utf8_lossy(&missing.stderr).contains("taylor-fit.data"));
    // 1: a requested assertion that cannot hold (no finite-resolution
    // slope matches theory to 1e-9).
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "convergence",
        "--k",
        "1",
        "--r",
        "2",
        "--K",
        "3",
        "--meshes",
        "4,8,16",
        "--assert",
        "--tolerance",
        "1e-9",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("assertion failed"));
    // 3: numerical breakdowns. A 20-step trajectory yields 20
    // regression rows, fewer than the 36 basis terms, so the fit is
    // under-determined.
    run_ok(&[
        "allen-cahn",
        "--ic",
        "cosine:0.5",
        "--steps",
        "20",
        "--nx",
        "16",
        "--out",
        dir.path().join("y").to_str().unwrap(),
    ]);
    let out = run(&[
        "rom-fit",
        "--data",
        dir.path().join("y/manifest.json").to_str().unwrap(),
        "--out",
        dir.path().join("z").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numerical failure"));
}

#[test]
fn trajectory_manifest_feeds_the_fitting_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    for (name, m_phi, ic) in [("a", "0.002", "cosine:0.5,0.1"), ("b", "0.01", "cosine:-0.4,0.2")] {
        run_ok(&[
            "allen-cahn",
            "--m-phi",
            m_phi,
            "--ic",
            ic,
            "--steps",
            "60",
            "--nx",
            "32",
            "--out",
            dir.path().join(name).to_str().unwrap(),
        ]);
    }
    // Stitch the two runs into one dataset: file paths resolve
    // relative to the manifest's directory.
    let manifest = serde_json::json!({
        "seed": 0,
        "trajectories": [
            {"file": "a/trajectory.csv", "m_phi": 0.002, "lambda": 1.0, "dt": 0.01,
             "steps": 60, "nx": 32, "length": 1.0, "initial": "cosine:0.5,0.1"},
            {"file": "b/trajectory.csv", "m_phi": 0.01, "lambda": 1.0, "dt": 0.01,
             "steps": 60, "nx": 32, "length": 1.0, "initial": "cosine:-0.4,0.2"},
        ],
    });
    let manifest_path = dir.path().join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let rom_out = dir.path().join("rom");
    run_ok(&[
        "rom-fit",
        "--data",
        manifest_path.to_str().unwrap(),
        "--loss",
        "l2",
        "--solver",
        "ols",
        "--out",
        rom_out.to_str().unwrap(),
    ]);
    let stepwise: serde_json::Value =
        serde_json::from_str(&read(&rom_out.join("stepwise.json"))).unwrap();
    assert_eq!(stepwise["path"].as_array().unwrap().len(), 36, "full elimination path");
    let loss_curve = read(&rom_out.join("loss_curve.csv"));
    assert!(loss_curve.starts_with("n_terms,loss\n"));
    assert_eq!(loss_curve.lines().count(), 37, "header plus one row per size");
    assert!(rom_out.join("cv_curve.csv").is_file(), "two groups allow cross-validation");

    let taylor_out = dir.path().join("taylor");
    run_ok(&[
        "taylor-fit",
        "--data",
        dir.path().join("a/trajectory.csv").to_str().unwrap(),
        "--coords",
        "phibar",
        "--target",
        "Psi",
        "--k-max",
        "2",
        "--assert",
        "--out",
        taylor_out.to_str().unwrap(),
    ]);
    let table = read(&taylor_out.join("taylor_fit.csv"));
    assert!(table.starts_with("k,model_error\n"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn config_schema_documents_every_subcommand() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config_schema.json");
    let schema: serde_json::Value = serde_json::from_str(&read(&path)).expect("schema is JSON");
    let defs = schema["$defs"].as_object().expect("schema has $defs");
    let subcommands = [
        "mesh",
        "stencil",
        "derivative",
        "convergence",
        "gaussian-baseline",
        "allen-cahn",
        "rom-fit",
        "taylor-fit",
    ];
    for name in subcommands {
        let def = defs
            .get(name)
            .unwrap_or_else(|| panic!("schema is missing the {name} subcommand"));
        assert_eq!(
            def["additionalProperties"],
            serde_json::Value::Bool(false),
            "{name} must reject unknown keys, matching the parser"
        );
        assert!(def["properties"].is_object(), "{name} lists its fields");
    }
    assert_eq!(defs.len(), subcommands.len(), "schema has no stale entries");
}
