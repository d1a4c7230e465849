mod common;

use common::{build, program};
use rr_reduce_core::exec::{
    run_module, run_partition_recording, run_partition_recording_with, ExecLimits, Observation, RecordOptions,
    RunStatus,
};
use rr_reduce_core::merge::{merge, merge_with_maps};
use rr_reduce_core::replay::{synthesize_replay, Provenance, ReplayError};
use rr_reduce_core::split::split;
use rr_reduce_core::trace::{Trace, TraceEvent, TraceMeta, TraceValue};
use rr_reduce_core::wasm::instr::decode_all;
use rr_reduce_core::wasm::{encode_module, parse_module, FunctionIndex, IndexSpace, Instr};

/// The target combines the results of two calls to `$g`, which counts up
/// from 1, so the order they arrive in shows in its result.
const TWO_CALLS: &str = r#"
(module
  (global $n (mut i32) (i32.const 0))
  (func $g (result i32)
    (global.set $n (i32.add (global.get $n) (i32.const 1)))
    (global.get $n))
  (func $t (result i32)
    (i32.add (call $g) (i32.mul (call $g) (i32.const 10))))
  (func (export "main") (result i32) (call $t)))
"#;

/// Results the target returned to outside code when running `bytes`.
fn target_results(bytes: &[u8], export: &str) -> Vec<Vec<TraceValue>> {
    let m = parse_module(bytes).unwrap();
    let t = m.export(export).unwrap().index;
    let p = split(&m, FunctionIndex(t)).unwrap();
    let opts = RecordOptions {
        observe: true,
        ..RecordOptions::default()
    };
    run_partition_recording_with(&p, "main", &ExecLimits::default(), &opts)
        .unwrap()
        .observations
        .into_iter()
        .filter_map(|o| match o {
            Observation::Leave { results } => Some(results),
            _ => None,
        })
        .collect()
}

#[test]
fn empty_trace_gives_an_idle_driver() {
    let m = parse_module(&program("m0")).unwrap();
    let p = split(&m, FunctionIndex(2)).unwrap();
    let t = Trace {
        meta: TraceMeta {
            entry: "main".into(),
            target: 2,
            ..TraceMeta::default()
        },
        events: vec![],
    };
    let r = synthesize_replay(&t, &p.wiring, &p.remaining_module).unwrap();
    let driver = r.module.defined_func(FunctionIndex(r.driver().index)).unwrap();
    let calls = decode_all(&driver.code)
        .unwrap()
        .into_iter()
        .filter(|(i, _)| matches!(i, Instr::Call(_)))
        .count();
    assert_eq!(calls, 0);
    let merged = encode_module(&merge(&p.target_module, &r.module, &p.wiring).unwrap());
    let out = run_module(&merged, "main", &ExecLimits::default()).unwrap();
    assert_eq!(out.status, RunStatus::NormalExit(0));
}

#[test]
fn out_calls_return_recorded_results_in_order() {
    let bytes = wat::parse_str(TWO_CALLS).unwrap();
    assert_eq!(run_module(&bytes, "main", &ExecLimits::default()).unwrap().status, RunStatus::NormalExit(21));
    let m = parse_module(&bytes).unwrap();
    let b = build(&m, 1, true).unwrap();
    assert_eq!(target_results(&b.bytes, "t1"), [vec![TraceValue::I32(21)]]);
    assert_eq!(
        b.replay.function_for_input(0).map(|f| f.provenance),
        Some(Provenance::Replayed)
    );
}

#[test]
fn calls_beyond_the_recording_trap() {
    let m = parse_module(&wat::parse_str(TWO_CALLS).unwrap()).unwrap();
    let p = split(&m, FunctionIndex(1)).unwrap();
    let mut trace = run_partition_recording(&p, "main", &ExecLimits::default()).unwrap().trace;
    // Forget the second call to $g.
    let last = trace
        .events
        .iter()
        .rposition(|e| matches!(e, TraceEvent::OutCallReturn { import, .. } if import == "f0"))
        .unwrap();
    trace.events.remove(last);
    let r = synthesize_replay(&trace, &p.wiring, &p.remaining_module).unwrap();
    let (merged, maps) = merge_with_maps(&p.target_module, &r.module, &p.wiring).unwrap();
    let out = run_module(&encode_module(&merged), "main", &ExecLimits::default()).unwrap();
    assert!(matches!(&out.status, RunStatus::Trap { message, .. } if message.contains("unreachable")));
    let stub = maps
        .other
        .get(IndexSpace::Func, r.function_for_input(0).unwrap().index)
        .unwrap();
    assert!(
        String::from_utf8_lossy(&out.stderr).contains(&format!("at func {stub}")),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_boundary_function_is_rejected() {
    let m = parse_module(&wat::parse_str(TWO_CALLS).unwrap()).unwrap();
    let p = split(&m, FunctionIndex(1)).unwrap();
    let mut trace = run_partition_recording(&p, "main", &ExecLimits::default()).unwrap().trace;
    for e in &mut trace.events {
        if let TraceEvent::OutCallReturn { import, .. } = e {
            *import = "nope".into();
        }
    }
    assert_eq!(
        synthesize_replay(&trace, &p.wiring, &p.remaining_module).map(|_| ()),
        Err(ReplayError::UnknownImport("nope".into()))
    );
}

#[test]
fn replay_module_has_no_outside_code() {
    // The candidate for the running example keeps the leaf alone; a and b
    // are emptied or replayed.
    let m = parse_module(&program("m0")).unwrap();
    let b = build(&m, 2, true).unwrap();
    for f in &b.replay.functions {
        if f.provenance == Provenance::Emptied {
            let code = &b.replay.module.defined_func(FunctionIndex(f.index)).unwrap().code;
            assert!(decode_all(code).unwrap().iter().all(|(i, _)| !matches!(i, Instr::Call(_))));
        }
    }
    assert!(b.bytes.len() < program("m0").len());
}
