use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sub_schema() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/sub_schema_64.toml")
}

fn audit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audit"))
        .current_dir(dir)
        .args(args)
        .env_remove("AUDIT_LLM_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn base<'a>(schema: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--manifest", "run/manifest.json", "--schema", schema, "--seed", "11"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn mine_before_project_is_a_prerequisite_error() {
    let dir = tempfile::tempdir().unwrap();
    let schema = sub_schema().display().to_string();
    let mut args = vec!["mine"];
    args.extend(base(&schema, &[]));
    let o = audit(dir.path(), &args);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_parameter_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let schema = sub_schema().display().to_string();
    let mut args = vec!["generate"];
    args.extend(base(&schema, &["--rho", "1.5"]));
    assert_eq!(code(&audit(dir.path(), &args)), 2);
    assert!(!dir.path().join("run/manifest.json").exists());
    assert_eq!(code(&audit(dir.path(), &["generate", "--manifest"])), 2);
}

#[test]
fn http_backend_without_endpoint_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let schema = sub_schema().display().to_string();
    let mut args = vec!["generate"];
    args.extend(base(&schema, &["--backend", "http"]));
    assert_eq!(code(&audit(dir.path(), &args)), 2);
}

#[test]
fn full_run_then_rerun_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let schema = sub_schema().display().to_string();
    let mut args = vec!["all"];
    args.extend(base(&schema, &["--reference", "demo", "--oracle-matrix", "demo"]));
    let o = audit(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reports = dir.path().join("run/reports");
    let table1 = fs::read(reports.join("table1_patterns.csv")).unwrap();
    let personas = fs::read(dir.path().join("run/personas.jsonl")).unwrap();

    assert_eq!(code(&audit(dir.path(), &args)), 0);
    assert_eq!(table1, fs::read(reports.join("table1_patterns.csv")).unwrap());
    assert_eq!(personas, fs::read(dir.path().join("run/personas.jsonl")).unwrap());

    // changing a completed stage's parameter needs --force
    let mut remine = vec!["mine", "--manifest", "run/manifest.json", "--min-support", "0.3"];
    assert_eq!(code(&audit(dir.path(), &remine)), 2);
    remine.push("--force");
    assert_eq!(code(&audit(dir.path(), &remine)), 0);
    let status = audit(dir.path(), &["status", "--manifest", "run/manifest.json"]);
    let text = String::from_utf8(status.stdout).unwrap();
    assert!(
        text.lines().any(|l| l.starts_with("report") && l.contains("pending")),
        "{text}"
    );

    // the recorded seed cannot change under an existing run
    let o = audit(
        dir.path(),
        &["generate", "--manifest", "run/manifest.json", "--seed", "12"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn align_without_reference_names_the_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let schema = sub_schema().display().to_string();
    for stage in ["generate", "elicit-wvb"] {
        let mut args = vec![stage];
        args.extend(base(&schema, &[]));
        assert_eq!(code(&audit(dir.path(), &args)), 0);
    }
    let o = audit(dir.path(), &["align", "--manifest", "run/manifest.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("reference"));
}

#[test]
fn demo_reference_feeds_align() {
    let dir = tempfile::tempdir().unwrap();
    let o = audit(dir.path(), &["demo-reference", "--out", "ref.csv", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("ref.csv")).unwrap();
    assert!(text.starts_with("continent,area,education,question_id,k,mass\n"));

    let schema = sub_schema().display().to_string();
    for stage in ["generate", "elicit-wvb"] {
        let mut args = vec![stage];
        args.extend(base(&schema, &[]));
        assert_eq!(code(&audit(dir.path(), &args)), 0);
    }
    let o = audit(
        dir.path(),
        &["align", "--manifest", "run/manifest.json", "--reference", "ref.csv"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
