mod common;

use std::time::Duration;

use common::program;
use rr_reduce_core::exec::{run_module, ExecLimits, RunStatus};
use rr_reduce_core::oracle::{Signature, SignatureOracle};
use rr_reduce_core::reduce::{
    hybrid_reduce_with_oracle, reduce_with_oracle, ExternalReducer, ReduceError, ReduceOptions, Stage,
};
use rr_reduce_core::report::write_report;
use rr_reduce_core::wasm::{canonical_body_hash, code_size, function_body_size, parse_module, FunctionIndex};

fn trap_oracle(bytes: &[u8], func: u32, trap: &str) -> SignatureOracle {
    let m = parse_module(bytes).unwrap();
    SignatureOracle {
        signature: Signature {
            entry: "main".into(),
            trap: Some(trap.into()),
            trap_in_body: Some(canonical_body_hash(m.defined_func(FunctionIndex(func)).unwrap()).unwrap()),
            ..Signature::default()
        },
        limits: ExecLimits::default(),
    }
}

/// Same stdout and exit status. Replay code never writes to the host, so
/// no candidate can keep this.
fn output_oracle(bytes: &[u8]) -> SignatureOracle {
    let out = run_module(bytes, "main", &ExecLimits::default()).unwrap();
    let RunStatus::NormalExit(code) = out.status else {
        panic!("expected a normal exit")
    };
    SignatureOracle {
        signature: Signature {
            entry: "main".into(),
            stdout: Some(out.stdout),
            exit_code: Some(code),
            ..Signature::default()
        },
        limits: ExecLimits::default(),
    }
}

#[test]
fn seeded_leaf_bug_is_isolated() {
    let input = program("bug_m0");
    let oracle = trap_oracle(&input, 2, "unreachable");
    let r = reduce_with_oracle(&input, &oracle, &ReduceOptions::default()).unwrap();
    assert!(r.succeeded);
    assert_eq!(r.target, Some(FunctionIndex(2)));
    assert!(oracle.signature.matches(&r.output_bytes, &ExecLimits::default()));
    wasmparser::Validator::new().validate_all(&r.output_bytes).unwrap();
    let out = parse_module(&r.output_bytes).unwrap();
    assert!(out.imports.is_empty());
    assert_eq!(r.size_all, code_size(&out));
    assert!(r.size_all < r.input_size);
    assert_eq!(r.input_size, code_size(&parse_module(&input).unwrap()));
    let m = parse_module(&input).unwrap();
    assert_eq!(r.size_target, Some(function_body_size(&m, FunctionIndex(2)).unwrap()));
    assert_eq!(r.attempts.last().unwrap().stage, Stage::Accepted);
}

#[test]
fn engine_log_picks_the_first_candidate() {
    let input = program("bug_m0");
    let opts = ReduceOptions {
        engine_log: Some("wasm trap: unreachable in func 2".into()),
        ..ReduceOptions::default()
    };
    let r = reduce_with_oracle(&input, &trap_oracle(&input, 2, "unreachable"), &opts).unwrap();
    assert_eq!(r.attempts.len(), 1);
    assert_eq!(r.candidates.heuristic, [FunctionIndex(2)]);
}

#[test]
fn result_is_independent_of_worker_count() {
    let input = program("bug_divzero");
    let oracle = trap_oracle(&input, 3, "integer divide by zero");
    let one = reduce_with_oracle(&input, &oracle, &ReduceOptions { jobs: 1, ..ReduceOptions::default() }).unwrap();
    let many = reduce_with_oracle(&input, &oracle, &ReduceOptions { jobs: 4, ..ReduceOptions::default() }).unwrap();
    assert_eq!(one.target, many.target);
    assert_eq!(one.output_bytes, many.output_bytes);
}

#[test]
fn irreducible_input_is_returned_unchanged() {
    let input = program("host_io");
    let r = reduce_with_oracle(&input, &output_oracle(&input), &ReduceOptions::default()).unwrap();
    assert!(!r.succeeded);
    assert_eq!(r.output_bytes, input);
    assert_eq!(r.size_all, r.input_size);
    assert_eq!(r.target, None);
    assert_eq!(r.attempts.len(), r.candidates.all.len());
    assert!(r.attempts.iter().all(|a| a.stage != Stage::Accepted));
}

#[test]
fn uninteresting_input_is_an_error() {
    let input = program("m0");
    let oracle = trap_oracle(&input, 2, "unreachable");
    assert!(matches!(
        reduce_with_oracle(&input, &oracle, &ReduceOptions::default()),
        Err(ReduceError::InputNotInteresting)
    ));
}

#[test]
fn invalid_input_is_an_error() {
    let oracle = output_oracle(&program("host_io"));
    assert!(matches!(
        reduce_with_oracle(b"\0asm\x01\0\0\0\x01", &oracle, &ReduceOptions::default()),
        Err(ReduceError::InputInvalid(_))
    ));
}

fn external(template: &str) -> ExternalReducer {
    ExternalReducer {
        template: template.into(),
        timeout: Duration::from_secs(60),
        oracle_script: Some("/bin/true".into()),
        checker: None,
    }
}

#[test]
fn hybrid_ignores_an_uninteresting_external_result() {
    let input = program("bug_m0");
    let oracle = trap_oracle(&input, 2, "unreachable");
    let rr = reduce_with_oracle(&input, &oracle, &ReduceOptions::default()).unwrap();
    // A header-only module is smaller and valid but does not trap.
    let ext = external(r"sh -c 'printf \\0asm\\1\\0\\0\\0 > {output}'");
    let h = hybrid_reduce_with_oracle(&input, &oracle, &ext, &ReduceOptions::default()).unwrap();
    assert_eq!(h.output_bytes, rr.output_bytes);
    assert_eq!(h.size_all, rr.size_all);
    assert!(h.external.as_deref().unwrap().starts_with("rejected"), "{:?}", h.external);
}

#[test]
fn hybrid_survives_a_failing_external_reducer() {
    let input = program("bug_m0");
    let oracle = trap_oracle(&input, 2, "unreachable");
    let rr = reduce_with_oracle(&input, &oracle, &ReduceOptions::default()).unwrap();
    let h = hybrid_reduce_with_oracle(&input, &oracle, &external("false"), &ReduceOptions::default()).unwrap();
    assert_eq!(h.output_bytes, rr.output_bytes);
    assert!(h.external.as_deref().unwrap().starts_with("failed"), "{:?}", h.external);
}

#[test]
fn report_sizes_match_the_input() {
    let input = program("bug_m0");
    let r = reduce_with_oracle(&input, &trap_oracle(&input, 2, "unreachable"), &ReduceOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let summary = write_report(&r, &path).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    let m = parse_module(&input).unwrap();
    assert_eq!(json["size_target"], function_body_size(&m, FunctionIndex(2)).unwrap());
    assert_eq!(json["input_size"], code_size(&m));
    assert_eq!(json["succeeded"], true);
    assert_eq!(json["summary"], summary);
}
