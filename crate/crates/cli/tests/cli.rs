use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const EXE: &str = env!("CARGO_BIN_EXE_rr-reduce");

fn corpus(name: &str) -> Vec<u8> {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../core/tests/corpus/{name}.wat"));
    wat::parse_file(p).unwrap()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

fn rr(args: &[&str]) -> Output {
    Command::new(EXE).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_reports_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "host_io.wasm", &corpus("host_io"));
    let out = rr(&["run", s(&ok)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(out.stdout, b"ok\n");

    let trap = write(dir.path(), "bug_m0.wasm", &corpus("bug_m0"));
    let out = rr(&["run", s(&trap)]);
    assert_eq!(out.status.code(), Some(134));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trap: unreachable") && err.contains("at func 2"), "{err}");
}

#[test]
fn split_writes_both_halves() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "m0.wasm", &corpus("m0"));
    let out_dir = dir.path().join("parts");
    let out = rr(&["split", s(&input), "--target", "2", "-o", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["target.wasm", "remaining.wasm"] {
        wasmparser::Validator::new()
            .validate_all(&std::fs::read(out_dir.join(f)).unwrap())
            .unwrap();
    }
    let wiring: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("wiring.json")).unwrap()).unwrap();
    assert_eq!(wiring["target_export_name"], "t2");
}

#[test]
fn invalid_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.wasm", b"nope");
    let out = rr(&[s(&bad), "--oracle", "/bin/true"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn uninteresting_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "m0.wasm", &corpus("m0"));
    let out = rr(&[s(&input), "--oracle", "/bin/false"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn differential_mode_isolates_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bug_m0.wasm", &corpus("bug_m0"));
    let output = dir.path().join("out.wasm");
    let report = dir.path().join("report.json");
    let buggy = format!("{EXE} run");
    let out = rr(&[
        s(&input),
        "--buggy-cmd",
        &buggy,
        "--ref-cmd",
        "true",
        "-o",
        s(&output),
        "--report",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["succeeded"], true);
    assert_eq!(json["target"], 2);
    assert_eq!(json["signature"], "crash");
    // The engine's own trap report names the function, so it is tried first.
    assert_eq!(json["attempts"].as_array().unwrap().len(), 1);
    let reduced = std::fs::read(&output).unwrap();
    assert!(reduced.len() < corpus("bug_m0").len());
    let run = rr(&["run", s(&output)]);
    assert_eq!(run.status.code(), Some(134));
}
