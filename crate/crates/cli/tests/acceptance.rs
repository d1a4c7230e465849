//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{build, check_fidelity, corpus, program, SEEDED_BUGS};
use rr_reduce_core::exec::{run_module, ExecLimits};
use rr_reduce_core::merge::merge;
use rr_reduce_core::replay::Provenance;
use rr_reduce_core::split::split;
use rr_reduce_core::trace::{reduce_trace, TraceEvent, TraceValue};
use rr_reduce_core::wasm::{
    canonical_body_hash, code_size, encode_module, parse_module, FunctionIndex, Instr, WasmModule,
};
use serde_json::Value;

const RR: &str = env!("CARGO_BIN_EXE_rr-reduce");
const STUB: &str = env!("CARGO_BIN_EXE_rr-stub-reducer");

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("split round trip", c1_round_trip),
        ("running example", c2_running_example),
        ("seeded bugs end to end", c3_seeded_bugs),
        ("replay fidelity", c4_fidelity),
        ("candidate prioritization", c5_prioritization),
        ("fallback", c6_fallback),
        ("hybrid composition", c7_hybrid),
        ("trace reduction", c8_trace_reduction),
        ("binary hygiene", c9_hygiene),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let began = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = began.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1}s] {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.1}s] {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(began: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = began.elapsed();
    ensure(took < limit, || format!("{what} took {took:?}, limit {limit:?}"))
}

fn defined(m: &WasmModule) -> std::ops::Range<u32> {
    m.num_imported_funcs()..m.num_funcs()
}

fn c1_round_trip() -> Outcome {
    let began = Instant::now();
    let programs = corpus();
    ensure(programs.len() >= 10, || format!("only {} corpus programs", programs.len()))?;
    let mut cases = 0;
    for (name, bytes) in &programs {
        let m = parse_module(bytes).map_err(|e| e.to_string())?;
        let base = run_module(bytes, "main", &ExecLimits::default()).map_err(|e| e.to_string())?;
        for t in defined(&m) {
            let p = split(&m, FunctionIndex(t)).map_err(|e| format!("{name} t={t}: {e}"))?;
            let relinked = merge(&p.target_module, &p.remaining_module, &p.wiring)
                .map_err(|e| format!("{name} t={t}: {e}"))?;
            let out = run_module(&encode_module(&relinked), "main", &ExecLimits::default())
                .map_err(|e| format!("{name} t={t}: {e}"))?;
            ensure(out.status == base.status && out.stdout == base.stdout, || {
                format!("{name} t={t}: {:?} vs {:?}", out.status, base.status)
            })?;
            cases += 1;
        }
    }
    within(began, Duration::from_secs(120), "round trip suite")?;
    Ok(format!("{cases} (program, target) pairs over {} programs", programs.len()))
}

fn c2_running_example() -> Outcome {
    let began = Instant::now();
    let m = parse_module(&program("m0")).map_err(|e| e.to_string())?;
    let (a, b, c) = (0, 1, 2);
    let built = build(&m, c, true)?;
    let entries: Vec<_> = built
        .trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::TargetEntry { args, .. } => Some(args.clone()),
            _ => None,
        })
        .collect();
    ensure(entries == vec![vec![TraceValue::I32(4)]], || {
        format!("reduced trace entries {entries:?}")
    })?;

    let rm = &built.replay;
    let body = |f: u32| -> Result<Vec<Instr>, String> {
        let r = rm
            .function_for_input(f)
            .ok_or_else(|| format!("no replay function for input {f}"))?;
        let def = rm
            .module
            .defined_func(FunctionIndex(r.index))
            .map_err(|e| e.to_string())?;
        Ok(rr_reduce_core::wasm::instr::decode_all(&def.code)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    };
    let target_import = rm
        .module
        .imports
        .iter()
        .position(|i| i.module == "target" && i.name == built.partition.wiring.target_export_name)
        .ok_or("replay module does not import the target")? as u32;
    let b_body = body(b)?;
    ensure(b_body == vec![Instr::I32Const(4), Instr::Call(target_import), Instr::End], || {
        format!("replay for b is {b_body:?}")
    })?;
    let a_body = body(a)?;
    ensure(a_body == vec![Instr::End], || format!("replay for a is {a_body:?}"))?;
    ensure(rm.function_for_input(a).unwrap().provenance == Provenance::Emptied, || {
        "replay for a is not an emptied function".into()
    })?;
    let (cand, input) = (code_size(&built.candidate), code_size(&m));
    ensure(cand < input, || format!("candidate size {cand} is not below {input}"))?;
    within(began, Duration::from_secs(5), "running example")?;
    Ok(format!("one entry with 4; b = [i32.const 4, call]; a empty; size {cand} < {input}"))
}

/// Executable shell script in `dir`.
fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Input binary and an oracle script for a seeded bug: the trap message
/// must appear and the innermost frame must be the bug function's body.
fn seeded_case(dir: &Path, bug: &common::SeededBug) -> Result<(PathBuf, PathBuf, String), String> {
    let bytes = program(bug.name);
    let m = parse_module(&bytes).map_err(|e| e.to_string())?;
    let hash = canonical_body_hash(m.defined_func(FunctionIndex(bug.func)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let input = dir.join(format!("{}.wasm", bug.name));
    std::fs::write(&input, &bytes).map_err(|e| e.to_string())?;
    let oracle = script(
        dir,
        &format!("{}.oracle.sh", bug.name),
        &format!(
            "exec {} oracle-check \"$1\" --trap {} --trap-in-body {hash}",
            quote(RR),
            quote(bug.trap)
        ),
    );
    Ok((input, oracle, hash))
}

struct CliRun {
    code: Option<i32>,
    report: Value,
    output: Vec<u8>,
    stderr: String,
}

fn run_cli(dir: &Path, tag: &str, input: &Path, extra: &[&str]) -> Result<CliRun, String> {
    let out = dir.join(format!("{tag}.out.wasm"));
    let report = dir.join(format!("{tag}.json"));
    let res = Command::new(RR)
        .arg(input)
        .arg("-o")
        .arg(&out)
        .arg("--report")
        .arg(&report)
        .args(extra)
        .output()
        .map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&res.stderr).into_owned();
    let report = std::fs::read_to_string(&report)
        .map_err(|e| format!("{tag}: no report ({e}); stderr: {stderr}"))?;
    Ok(CliRun {
        code: res.status.code(),
        report: serde_json::from_str(&report).map_err(|e| e.to_string())?,
        output: std::fs::read(&out).map_err(|e| e.to_string())?,
        stderr,
    })
}

fn passes(oracle: &Path, file: &Path) -> bool {
    Command::new(oracle).arg(file).status().is_ok_and(|s| s.success())
}

fn c3_seeded_bugs() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for bug in &SEEDED_BUGS {
        let began = Instant::now();
        let (input, oracle, hash) = seeded_case(dir.path(), bug)?;
        let oracle_s = oracle.to_string_lossy().into_owned();
        let r = run_cli(dir.path(), bug.name, &input, &["--oracle", &oracle_s, "--jobs", "2"])?;
        let name = bug.name;
        ensure(r.code == Some(0), || format!("{name}: exit {:?}: {}", r.code, r.stderr))?;
        ensure(r.report["succeeded"] == true, || format!("{name}: not reduced: {}", r.report))?;
        let out_path = dir.path().join(format!("{name}.out.wasm"));
        ensure(passes(&oracle, &out_path), || format!("{name}: output fails the oracle"))?;
        let out = parse_module(&r.output).map_err(|e| e.to_string())?;
        let export = r.report["target_export"].as_str().ok_or("no target export")?;
        let t = out.export(export).ok_or("target export missing")?.index;
        let out_hash = canonical_body_hash(out.defined_func(FunctionIndex(t)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(out_hash == hash, || format!("{name}: target body changed"))?;
        let input_size = code_size(&parse_module(&program(name)).unwrap());
        let size = code_size(&out);
        ensure(size < input_size, || format!("{name}: size {size} is not below {input_size}"))?;
        within(began, Duration::from_secs(60), name)?;
        notes.push(format!("{name} {size}/{input_size}"));
    }
    Ok(notes.join(", "))
}

fn c4_fidelity() -> Outcome {
    let mut cases = 0;
    for (name, bytes) in corpus() {
        let m = parse_module(&bytes).map_err(|e| e.to_string())?;
        for t in defined(&m) {
            let b = build(&m, t, true).map_err(|e| format!("{name} t={t}: {e}"))?;
            check_fidelity(&m, &b).map_err(|e| format!("{name} t={t}: {e}"))?;
            cases += 1;
        }
    }
    Ok(format!("{cases} (program, target) pairs"))
}

fn c5_prioritization() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for bug in &SEEDED_BUGS {
        let name = bug.name;
        let (input, oracle, _) = seeded_case(dir.path(), bug)?;
        let oracle_s = oracle.to_string_lossy().into_owned();
        let log = dir.path().join(format!("{name}.log"));
        std::fs::write(&log, format!("engine error in function {}\n", bug.func)).map_err(|e| e.to_string())?;
        let log_s = log.to_string_lossy().into_owned();
        let with_log = run_cli(
            dir.path(),
            &format!("{name}.log"),
            &input,
            &["--oracle", &oracle_s, "--engine-log", &log_s, "--jobs", "4"],
        )?;
        let attempts = with_log.report["attempts"].as_array().ok_or("no attempts")?;
        ensure(attempts.len() == 1 && attempts[0]["candidate"] == bug.func, || {
            format!("{name}: with log, attempts {attempts:?}")
        })?;

        let without = run_cli(dir.path(), &format!("{name}.nolog"), &input, &["--oracle", &oracle_s, "--jobs", "4"])?;
        let dynamic = without.report["candidates"]["dynamic"].as_array().ok_or("no dynamic set")?;
        let n = without.report["attempts"].as_array().ok_or("no attempts")?.len();
        ensure(dynamic.iter().any(|f| *f == bug.func), || format!("{name}: bug function not executed"))?;
        ensure(n <= dynamic.len(), || format!("{name}: {n} attempts for |Dynamic| = {}", dynamic.len()))?;
        notes.push(format!("{name} 1 / {n}<={}", dynamic.len()));
    }
    Ok(notes.join(", "))
}

fn c6_fallback() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cases = 0;
    for (name, bytes) in corpus() {
        let input = dir.path().join(format!("{name}.wasm"));
        std::fs::write(&input, &bytes).map_err(|e| e.to_string())?;
        let oracle = script(
            dir.path(),
            &format!("{name}.same.sh"),
            &format!("exec cmp -s \"$1\" {}", quote(&input.to_string_lossy())),
        );
        let oracle_s = oracle.to_string_lossy().into_owned();
        let r = run_cli(dir.path(), &name, &input, &["--oracle", &oracle_s])?;
        ensure(r.code == Some(0), || format!("{name}: exit {:?}: {}", r.code, r.stderr))?;
        ensure(r.output == bytes, || format!("{name}: output differs from input"))?;
        ensure(r.report["succeeded"] == false, || format!("{name}: reported success"))?;
        cases += 1;
    }
    Ok(format!("{cases} programs returned unchanged"))
}

fn c7_hybrid() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let template = format!("{} {{input}} {{output}} {{oracle}}", quote(STUB));
    let mut notes = Vec::new();
    for bug in &SEEDED_BUGS {
        let name = bug.name;
        let (input, oracle, _) = seeded_case(dir.path(), bug)?;
        let oracle_s = oracle.to_string_lossy().into_owned();
        let plain = run_cli(dir.path(), &format!("{name}.rr"), &input, &["--oracle", &oracle_s])?;
        let hybrid = run_cli(
            dir.path(),
            &format!("{name}.hybrid"),
            &input,
            &["--oracle", &oracle_s, "--hybrid", &template],
        )?;
        let (p, h) = (
            plain.report["size_all"].as_u64().ok_or("no size")?,
            hybrid.report["size_all"].as_u64().ok_or("no size")?,
        );
        ensure(h <= p, || format!("{name}: hybrid {h} > rr {p}"))?;
        let out = dir.path().join(format!("{name}.hybrid.out.wasm"));
        ensure(passes(&oracle, &out), || format!("{name}: hybrid output fails the oracle"))?;
        let size = code_size(&parse_module(&hybrid.output).map_err(|e| e.to_string())?) as u64;
        ensure(size == h, || format!("{name}: reported {h}, actual {size}"))?;
        notes.push(format!("{name} {h}<={p}"));
    }
    Ok(notes.join(", "))
}

fn c8_trace_reduction() -> Outcome {
    let mut cases = 0;
    for (name, bytes) in corpus() {
        let m = parse_module(&bytes).map_err(|e| e.to_string())?;
        for t in defined(&m) {
            let raw = build(&m, t, false).map_err(|e| format!("{name} t={t}: {e}"))?;
            let once = reduce_trace(&raw.trace);
            ensure(reduce_trace(&once) == once, || format!("{name} t={t}: not idempotent"))?;
            let (a, b) = (once.serialized_size(), raw.trace.serialized_size());
            ensure(a <= b, || format!("{name} t={t}: reduced {a} > raw {b}"))?;
            check_fidelity(&m, &raw).map_err(|e| format!("{name} t={t} unreduced: {e}"))?;
            let reduced = build(&m, t, true).map_err(|e| format!("{name} t={t}: {e}"))?;
            check_fidelity(&m, &reduced).map_err(|e| format!("{name} t={t} reduced: {e}"))?;
            cases += 1;
        }
    }
    Ok(format!("{cases} traces"))
}

/// Validation by two tools that share no code with the reducer.
fn independently_valid(bytes: &[u8]) -> Result<(), String> {
    wasmparser::Validator::new()
        .validate_all(bytes)
        .map_err(|e| format!("wasmparser: {e}"))?;
    wasmi::Module::new(&wasmi::Engine::default(), bytes).map_err(|e| format!("wasmi: {e}"))?;
    Ok(())
}

fn c9_hygiene() -> Outcome {
    let mut cases = 0;
    for (name, bytes) in corpus() {
        let m = parse_module(&bytes).map_err(|e| e.to_string())?;
        for t in defined(&m) {
            for reduce in [true, false] {
                let b = build(&m, t, reduce).map_err(|e| format!("{name} t={t}: {e}"))?;
                independently_valid(&b.bytes).map_err(|e| format!("{name} t={t}: {e}"))?;
                ensure(b.candidate.imports.is_empty(), || format!("{name} t={t}: candidate has imports"))?;
                cases += 1;
            }
        }
    }
    // Outputs of the command-line tool, plain and hybrid.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let template = format!("{} {{input}} {{output}} {{oracle}}", quote(STUB));
    for bug in &SEEDED_BUGS {
        let (input, oracle, _) = seeded_case(dir.path(), bug)?;
        let oracle_s = oracle.to_string_lossy().into_owned();
        for (tag, extra) in [("rr", vec![]), ("hybrid", vec!["--hybrid", template.as_str()])] {
            let mut args = vec!["--oracle", oracle_s.as_str()];
            args.extend(extra);
            let r = run_cli(dir.path(), &format!("{}.{tag}", bug.name), &input, &args)?;
            independently_valid(&r.output).map_err(|e| format!("{} {tag}: {e}", bug.name))?;
            let out = parse_module(&r.output).map_err(|e| e.to_string())?;
            ensure(out.imports.is_empty(), || format!("{} {tag}: output has imports", bug.name))?;
            cases += 1;
        }
    }
    Ok(format!("{cases} candidates valid with zero imports"))
}
