#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rr_reduce_core::exec::{
    run_partition_recording_with, ExecLimits, Observation, ObservedState, RecordOptions, Recording,
};
use rr_reduce_core::merge::{merge_with_maps, MergeMaps};
use rr_reduce_core::replay::{synthesize_replay, ReplayModule};
use rr_reduce_core::split::{split, PartitionedProgram};
use rr_reduce_core::trace::{reduce_trace, FuncTag, Trace, TraceValue};
use rr_reduce_core::wasm::{encode_module, parse_module, FunctionIndex, IndexSpace, WasmModule};

/// Works from any crate of the workspace.
pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .join("core/tests/corpus")
}

/// Every corpus program as (name, binary), sorted by name.
pub fn corpus() -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "wat").then(|| {
                let name = p.file_stem().unwrap().to_string_lossy().into_owned();
                (name, wat::parse_file(&p).unwrap())
            })
        })
        .collect();
    out.sort();
    out
}

pub fn program(name: &str) -> Vec<u8> {
    wat::parse_file(corpus_dir().join(format!("{name}.wat"))).unwrap()
}

/// A corpus program with a deliberately planted failure.
pub struct SeededBug {
    pub name: &'static str,
    /// Function the failure happens in.
    pub func: u32,
    /// Substring of the trap message.
    pub trap: &'static str,
}

pub const SEEDED_BUGS: [SeededBug; 6] = [
    SeededBug { name: "bug_divzero", func: 3, trap: "integer divide by zero" },
    SeededBug { name: "bug_indirect", func: 5, trap: "indirect call type mismatch" },
    SeededBug { name: "bug_m0", func: 2, trap: "unreachable" },
    SeededBug { name: "bug_oob", func: 2, trap: "out of bounds memory access" },
    SeededBug { name: "bug_stack", func: 1, trap: "call stack exhausted" },
    SeededBug { name: "bug_trunc", func: 2, trap: "integer overflow" },
];

/// Every stage of building one candidate by hand.
pub struct Built {
    pub partition: PartitionedProgram,
    pub recording: Recording,
    pub trace: Trace,
    pub replay: ReplayModule,
    pub candidate: WasmModule,
    pub bytes: Vec<u8>,
    pub maps: MergeMaps,
}

pub fn observing(globals: usize) -> RecordOptions {
    RecordOptions {
        check_shadow: false,
        observe: true,
        observed_globals: Some(globals),
    }
}

/// Split `m` at `t`, record, optionally reduce the trace, synthesize and
/// merge.
pub fn build(m: &WasmModule, t: u32, reduce: bool) -> Result<Built, String> {
    let partition = split(m, FunctionIndex(t)).map_err(|e| e.to_string())?;
    let recording = run_partition_recording_with(
        &partition,
        "main",
        &ExecLimits::default(),
        &observing(m.num_globals() as usize),
    )
    .map_err(|e| e.to_string())?;
    let trace = if reduce {
        reduce_trace(&recording.trace)
    } else {
        recording.trace.clone()
    };
    let replay = synthesize_replay(&trace, &partition.wiring, &partition.remaining_module)
        .map_err(|e| e.to_string())?;
    let (candidate, maps) = merge_with_maps(&partition.target_module, &replay.module, &partition.wiring)
        .map_err(|e| e.to_string())?;
    let bytes = encode_module(&candidate);
    Ok(Built {
        partition,
        recording,
        trace,
        replay,
        candidate,
        bytes,
        maps,
    })
}

/// Re-split the candidate at its target, record it, and compare what the
/// target observes with what it observed in the original run. Function
/// indices of the candidate are translated back to the input functions
/// their replay code stands in for.
pub fn check_fidelity(m: &WasmModule, b: &Built) -> Result<(), String> {
    let cand = parse_module(&b.bytes).map_err(|e| e.to_string())?;
    let export = &b.partition.wiring.target_export_name;
    let t = cand
        .export(export)
        .ok_or_else(|| format!("candidate lacks export {export}"))?
        .index;
    let p = split(&cand, FunctionIndex(t)).map_err(|e| e.to_string())?;
    let rec = run_partition_recording_with(&p, "main", &ExecLimits::default(), &observing(m.num_globals() as usize))
        .map_err(|e| e.to_string())?;

    let back = b.maps.other.inverse();
    let to_input = |c: u32| -> Result<u32, String> {
        let r = back
            .get(IndexSpace::Func, c)
            .map_err(|_| format!("candidate function {c} is not replay code"))?;
        b.replay
            .functions
            .iter()
            .find(|f| f.index == r)
            .and_then(|f| f.input)
            .ok_or_else(|| format!("replay function {r} stands in for no input function"))
    };
    let tag = |g: &FuncTag| -> Result<FuncTag, String> {
        Ok(match g {
            FuncTag::Function(c) => FuncTag::Function(to_input(*c)?),
            other => other.clone(),
        })
    };
    let vals = |vs: &[TraceValue]| -> Result<Vec<TraceValue>, String> {
        vs.iter()
            .map(|v| match v {
                TraceValue::FuncRef(g) => Ok(TraceValue::FuncRef(tag(g)?)),
                other => Ok(other.clone()),
            })
            .collect()
    };
    let state = |s: ObservedState| -> Result<ObservedState, String> {
        Ok(ObservedState {
            memory: s.memory,
            globals: vals(&s.globals)?,
        })
    };
    let mut got = Vec::new();
    for o in rec.observations {
        got.push(match o {
            Observation::Enter { args, state: s } => Observation::Enter {
                args: vals(&args)?,
                state: state(s)?,
            },
            Observation::Leave { results } => Observation::Leave { results: vals(&results)? },
            Observation::OutCall { callee, args } => Observation::OutCall {
                callee: tag(&callee)?,
                args: vals(&args)?,
            },
            Observation::Return { results, state: s } => Observation::Return {
                results: vals(&results)?,
                state: state(s)?,
            },
        });
    }
    let want = &b.recording.observations;
    if &got == want {
        return Ok(());
    }
    let at = got.iter().zip(want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
    Err(format!(
        "observations differ at {at} (candidate {} vs recorded {}): {:?} vs {:?}",
        got.len(),
        want.len(),
        got.get(at),
        want.get(at)
    ))
}
