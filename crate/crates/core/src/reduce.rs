//! The reduction loop: try candidate targets in priority order, replace
//! everything else with replay code, and keep the first interesting
//! candidate that is strictly smaller than the input.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::candidates::{
    compute_all_set, compute_dynamic_set, compute_heuristic_set, enumerate_candidates, CandidateSets,
};
use crate::exec::{run_partition_recording, ExecLimits};
use crate::merge::merge;
use crate::oracle::{Divergence, Oracle, OracleConfig, OracleError, OracleMode};
use crate::replay::synthesize_replay;
use crate::split::{dump_partition, split};
use crate::trace::reduce_trace;
use crate::wasm::{self, FunctionIndex, WasmModule};

#[derive(Debug, Clone)]
pub struct ReduceOptions {
    /// Worker threads; 0 means the number of available cores.
    pub jobs: usize,
    pub per_candidate_timeout: Duration,
    pub limits: ExecLimits,
    /// Engine output searched for function indices.
    pub engine_log: Option<String>,
    /// Export called to run the program.
    pub entry: String,
    /// Keep worker directories under this path instead of deleting them.
    pub keep_temps: Option<PathBuf>,
    /// Write each candidate's reduced trace next to it.
    pub trace_dump: bool,
    /// No new candidate is started once this much time has passed.
    pub budget: Option<Duration>,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions {
            jobs: 0,
            per_candidate_timeout: Duration::from_secs(600),
            limits: ExecLimits::default(),
            engine_log: None,
            entry: "main".into(),
            keep_temps: None,
            trace_dump: false,
            budget: None,
        }
    }
}

/// Last pipeline stage a candidate reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Split,
    Record,
    Synthesize,
    Merge,
    Validate,
    SizeCheck,
    Oracle,
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub candidate: FunctionIndex,
    pub stage: Stage,
    pub failure: Option<String>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionResult {
    #[serde(skip)]
    pub output_bytes: Vec<u8>,
    pub succeeded: bool,
    /// Target function, as an index into the input program.
    pub target: Option<FunctionIndex>,
    /// Export name of the target in the output.
    pub target_export: Option<String>,
    /// Canonical hash of the target body in the output.
    pub target_hash: Option<String>,
    pub size_all: usize,
    pub size_target: Option<usize>,
    pub input_size: usize,
    pub elapsed: f64,
    pub attempts: Vec<Attempt>,
    pub candidates: CandidateSets,
    /// Divergence class the oracle checked for, in differential mode.
    pub signature: Option<Divergence>,
    /// Outcome of the external reducer in hybrid mode.
    pub external: Option<String>,
}

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("input is invalid: {0}")]
    InputInvalid(String),
    #[error("input is not interesting to the oracle")]
    InputNotInteresting,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Reduce with an external oracle. In differential mode without a fixed
/// signature, the divergence shown by the input becomes the signature,
/// and the buggy engine's output on the input feeds the heuristic set
/// unless an engine log is given.
pub fn reduce_program(input: &[u8], cfg: &OracleConfig, opts: &ReduceOptions) -> Result<ReductionResult, ReduceError> {
    let started = Instant::now();
    let m = parse_input(input)?;
    let scratch = tempfile::Builder::new().prefix("rr-input-").tempdir()?;
    let path = scratch.path().join("input.wasm");
    std::fs::write(&path, input)?;
    let verdict = cfg.check(&path)?;
    if !verdict.interesting {
        return Err(ReduceError::InputNotInteresting);
    }
    let mut cfg = cfg.clone();
    let mut engine_output = String::new();
    if let OracleMode::Differential { .. } = cfg.mode {
        cfg.signature = cfg.signature.or(verdict.divergence);
        engine_output = verdict.buggy_outcome.stdout + &verdict.buggy_outcome.stderr;
    }
    let text = opts.engine_log.clone().unwrap_or(engine_output);
    let mut r = reduce_checked(input, &m, &cfg, &text, opts, started)?;
    r.signature = cfg.signature;
    Ok(r)
}

/// Reduce with any oracle. The input is checked once before reduction.
pub fn reduce_with_oracle(
    input: &[u8],
    oracle: &dyn Oracle,
    opts: &ReduceOptions,
) -> Result<ReductionResult, ReduceError> {
    let started = Instant::now();
    let m = parse_input(input)?;
    let scratch = tempfile::Builder::new().prefix("rr-input-").tempdir()?;
    let path = scratch.path().join("input.wasm");
    std::fs::write(&path, input)?;
    if !oracle.check(&path)?.interesting {
        return Err(ReduceError::InputNotInteresting);
    }
    let text = opts.engine_log.clone().unwrap_or_default();
    reduce_checked(input, &m, oracle, &text, opts, started)
}

fn parse_input(input: &[u8]) -> Result<WasmModule, ReduceError> {
    let m = wasm::parse_module(input).map_err(|e| ReduceError::InputInvalid(e.to_string()))?;
    wasm::validate_module(input).map_err(ReduceError::InputInvalid)?;
    Ok(m)
}

fn reduce_checked(
    input: &[u8],
    m: &WasmModule,
    oracle: &dyn Oracle,
    engine_output: &str,
    opts: &ReduceOptions,
    started: Instant,
) -> Result<ReductionResult, ReduceError> {
    let dynamic = match compute_dynamic_set(m, &opts.entry, &opts.limits) {
        Ok(d) => d.functions,
        Err(e) => {
            log::warn!("coverage run failed: {e}");
            Vec::new()
        }
    };
    let sets = CandidateSets {
        heuristic: compute_heuristic_set(m, engine_output),
        dynamic,
        all: compute_all_set(m),
    };
    log::info!("candidates: {:?}", enumerate_candidates(&sets));
    let input_size = wasm::code_size(m);
    let mut result = ReductionResult {
        output_bytes: input.to_vec(),
        succeeded: false,
        target: None,
        target_export: None,
        target_hash: None,
        size_all: input_size,
        size_target: None,
        input_size,
        elapsed: 0.0,
        attempts: Vec::new(),
        candidates: sets.clone(),
        signature: None,
        external: None,
    };
    let jobs = if opts.jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        opts.jobs
    };
    // A tier is only started when every earlier tier failed, so a
    // success in a higher-priority set never waits on lower ones.
    for tier in sets.tiers() {
        if tier.is_empty() {
            continue;
        }
        let outcome = run_tier(m, &tier, oracle, jobs.min(tier.len()), opts, started)?;
        result.attempts.extend(outcome.attempts);
        if let Some(found) = outcome.best {
            result.output_bytes = found.bytes;
            result.succeeded = true;
            result.target = Some(found.target);
            result.target_export = Some(found.export);
            result.target_hash = Some(found.hash);
            result.size_all = found.size_all;
            result.size_target = Some(found.size_target);
            break;
        }
    }
    result.elapsed = started.elapsed().as_secs_f64();
    Ok(result)
}

struct Found {
    target: FunctionIndex,
    bytes: Vec<u8>,
    export: String,
    hash: String,
    size_all: usize,
    size_target: usize,
}

struct TierOutcome {
    attempts: Vec<Attempt>,
    best: Option<Found>,
}

/// Try the candidates of one tier in parallel. Positions are claimed in
/// order and a worker stops once an earlier position has succeeded, so
/// the result is the earliest success regardless of completion order.
fn run_tier(
    m: &WasmModule,
    tier: &[FunctionIndex],
    oracle: &dyn Oracle,
    jobs: usize,
    opts: &ReduceOptions,
    started: Instant,
) -> Result<TierOutcome, ReduceError> {
    let over_budget = || opts.budget.is_some_and(|b| started.elapsed() > b);
    let next = AtomicUsize::new(0);
    let best: Mutex<Option<(usize, Found)>> = Mutex::new(None);
    let attempts: Mutex<Vec<(usize, Attempt)>> = Mutex::new(Vec::new());
    let fatal: Mutex<Option<ReduceError>> = Mutex::new(None);
    let input_size = wasm::code_size(m);

    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| {
                let dir = match worker_dir(opts) {
                    Ok(d) => d,
                    Err(e) => {
                        fatal.lock().unwrap().get_or_insert(e.into());
                        return;
                    }
                };
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= tier.len() || fatal.lock().unwrap().is_some() || over_budget() {
                        break;
                    }
                    if best.lock().unwrap().as_ref().is_some_and(|(b, _)| *b < i) {
                        break;
                    }
                    let t = tier[i];
                    let began = Instant::now();
                    let run = catch_unwind(AssertUnwindSafe(|| {
                        attempt(m, input_size, t, oracle, opts, &dir.path().join(format!("cand-{}", t.0)))
                    }));
                    let (stage, outcome) = match run {
                        Ok(Ok((stage, outcome))) => (stage, outcome),
                        Ok(Err(e)) => {
                            fatal.lock().unwrap().get_or_insert(e);
                            break;
                        }
                        Err(_) => (Stage::Split, Err("internal error: pipeline panicked".to_string())),
                    };
                    let failure = outcome.as_ref().err().cloned();
                    log::info!("candidate {t}: {stage:?} {}", failure.as_deref().unwrap_or("ok"));
                    attempts.lock().unwrap().push((
                        i,
                        Attempt {
                            candidate: t,
                            stage,
                            failure,
                            time: began.elapsed().as_secs_f64(),
                        },
                    ));
                    if let Ok(found) = outcome {
                        let mut b = best.lock().unwrap();
                        if b.as_ref().is_none_or(|(j, _)| i < *j) {
                            *b = Some((i, found));
                        }
                    }
                }
                if let Some(root) = &opts.keep_temps {
                    log::info!("kept worker files under {}", root.display());
                    let _ = dir.keep();
                }
            });
        }
    });
    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    let mut attempts = attempts.into_inner().unwrap();
    attempts.sort_by_key(|(i, _)| *i);
    Ok(TierOutcome {
        attempts: attempts.into_iter().map(|(_, a)| a).collect(),
        best: best.into_inner().unwrap().map(|(_, f)| f),
    })
}

fn worker_dir(opts: &ReduceOptions) -> std::io::Result<tempfile::TempDir> {
    let b = {
        let mut b = tempfile::Builder::new();
        b.prefix("rr-worker-");
        b
    };
    match &opts.keep_temps {
        Some(root) => {
            std::fs::create_dir_all(root)?;
            b.tempdir_in(root)
        }
        None => b.tempdir(),
    }
}

/// One candidate through the whole pipeline. The inner result carries
/// the reason a candidate was rejected; the outer one only fatal oracle
/// failures.
fn attempt(
    m: &WasmModule,
    input_size: usize,
    t: FunctionIndex,
    oracle: &dyn Oracle,
    opts: &ReduceOptions,
    dir: &Path,
) -> Result<(Stage, Result<Found, String>), ReduceError> {
    let began = Instant::now();
    let deadline_passed = || began.elapsed() > opts.per_candidate_timeout;
    macro_rules! fail {
        ($stage:expr, $($arg:tt)*) => {
            return Ok(($stage, Err(format!($($arg)*))))
        };
    }
    std::fs::create_dir_all(dir)?;

    let p = match split(m, t) {
        Ok(p) => p,
        Err(e) => fail!(Stage::Split, "{e}"),
    };
    if opts.keep_temps.is_some() {
        dump_partition(&p, dir)?;
    }

    let mut limits = opts.limits;
    limits.wall = limits.wall.min(opts.per_candidate_timeout);
    let rec = match run_partition_recording(&p, &opts.entry, &limits) {
        Ok(r) => r,
        Err(e) => fail!(Stage::Record, "{e}"),
    };
    if deadline_passed() {
        fail!(Stage::Record, "candidate timed out while recording");
    }
    let trace = reduce_trace(&rec.trace);
    if opts.trace_dump {
        std::fs::write(dir.join("trace.txt"), trace.to_text())?;
    }

    let replay = match synthesize_replay(&trace, &p.wiring, &p.remaining_module) {
        Ok(r) => r,
        Err(e) => fail!(Stage::Synthesize, "{e}"),
    };
    let merged = match merge(&p.target_module, &replay.module, &p.wiring) {
        Ok(c) => c,
        Err(e) => fail!(Stage::Merge, "{e}"),
    };
    let bytes = wasm::encode_module(&merged);
    if let Err(e) = wasm::validate_module(&bytes) {
        fail!(Stage::Validate, "candidate does not validate: {e}");
    }

    let size_all = wasm::code_size(&merged);
    if size_all >= input_size {
        fail!(Stage::SizeCheck, "candidate size {size_all} is not below input size {input_size}");
    }
    let export = p.wiring.target_export_name.clone();
    let Some(target_out) = merged.export(&export).map(|e| FunctionIndex(e.index)) else {
        fail!(Stage::Merge, "target export `{export}` missing from candidate");
    };
    let (size_target, hash) = match merged
        .defined_func(target_out)
        .and_then(|f| Ok((wasm::function_body_size(&merged, target_out)?, wasm::canonical_body_hash(f)?)))
    {
        Ok(v) => v,
        Err(e) => fail!(Stage::Merge, "{e}"),
    };
    if deadline_passed() {
        fail!(Stage::SizeCheck, "candidate timed out before the oracle");
    }

    let path = dir.join("candidate.wasm");
    std::fs::write(&path, &bytes)?;
    match oracle.check(&path) {
        Ok(v) if v.interesting => {}
        Ok(_) => fail!(Stage::Oracle, "not interesting"),
        Err(OracleError::OracleTimeout(d)) => fail!(Stage::Oracle, "oracle timed out after {d:?}"),
        Err(e) => return Err(e.into()),
    }
    Ok((
        Stage::Accepted,
        Ok(Found {
            target: t,
            bytes,
            export,
            hash,
            size_all,
            size_target,
        }),
    ))
}

/// How to run the external reducer in hybrid mode.
#[derive(Debug, Clone)]
pub struct ExternalReducer {
    /// Command with `{input}`, `{output}` and `{oracle}` placeholders.
    pub template: String,
    pub timeout: Duration,
    /// Script handed to the external reducer as its oracle. Defaults to
    /// the oracle script in script mode.
    pub oracle_script: Option<PathBuf>,
    /// Executable providing the `diff-check` subcommand, used to build an
    /// oracle script in differential mode.
    pub checker: Option<PathBuf>,
}

pub fn hybrid_reduce(
    input: &[u8],
    cfg: &OracleConfig,
    external: &ExternalReducer,
    opts: &ReduceOptions,
) -> Result<ReductionResult, ReduceError> {
    let started = Instant::now();
    let rr = reduce_program(input, cfg, opts)?;
    let scratch = tempfile::Builder::new().prefix("rr-hybrid-oracle-").tempdir()?;
    let mut cfg = cfg.clone();
    cfg.signature = rr.signature;
    let script = match (&external.oracle_script, &cfg.mode) {
        (Some(p), _) => Ok(p.clone()),
        (None, OracleMode::Script(p)) => Ok(p.clone()),
        (None, OracleMode::Differential { .. }) => match &external.checker {
            Some(exe) => write_diff_script(scratch.path(), exe, &cfg).map_err(|e| e.to_string()),
            None => Err("no oracle script for the external reducer".to_string()),
        },
    };
    Ok(finish_hybrid(rr, &cfg, external, script, started))
}

pub fn hybrid_reduce_with_oracle(
    input: &[u8],
    oracle: &dyn Oracle,
    external: &ExternalReducer,
    opts: &ReduceOptions,
) -> Result<ReductionResult, ReduceError> {
    let started = Instant::now();
    let rr = reduce_with_oracle(input, oracle, opts)?;
    let script = external
        .oracle_script
        .clone()
        .ok_or_else(|| "no oracle script for the external reducer".to_string());
    Ok(finish_hybrid(rr, oracle, external, script, started))
}

/// Shell script that runs `checker diff-check` with the settings of a
/// differential oracle.
fn write_diff_script(dir: &Path, checker: &Path, cfg: &OracleConfig) -> std::io::Result<PathBuf> {
    use std::os::unix::fs::PermissionsExt;
    let OracleMode::Differential {
        buggy_cmd,
        reference_cmd,
    } = &cfg.mode
    else {
        unreachable!("only differential configurations need a wrapper")
    };
    let q = |s: &str| shlex::try_quote(s).map(|c| c.into_owned()).unwrap_or_default();
    let mut cmd = format!(
        "exec {} diff-check --buggy-cmd {} --ref-cmd {} --timeout {}",
        q(&checker.to_string_lossy()),
        q(buggy_cmd),
        q(reference_cmd),
        cfg.timeout.as_secs_f64()
    );
    if let Some(d) = cfg.signature {
        cmd.push_str(&format!(" --signature {d}"));
    }
    for (k, v) in &cfg.env {
        cmd.push_str(&format!(" --env {}", q(&format!("{k}={v}"))));
    }
    let path = dir.join("oracle.sh");
    std::fs::write(&path, format!("#!/bin/sh\n{cmd} \"$1\"\n"))?;
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755))?;
    Ok(path)
}

/// Run the external reducer on the RR-Reduce output and keep its result
/// only if it is valid, smaller and still interesting.
fn finish_hybrid(
    mut rr: ReductionResult,
    oracle: &dyn Oracle,
    external: &ExternalReducer,
    script: Result<PathBuf, String>,
    started: Instant,
) -> ReductionResult {
    match script.and_then(|s| run_external(&rr, oracle, external, &s)) {
        Ok(Some((bytes, m))) => {
            rr.size_all = wasm::code_size(&m);
            rr.succeeded = rr.size_all < rr.input_size;
            let target = rr
                .target_export
                .as_deref()
                .and_then(|n| m.export(n))
                .map(|e| FunctionIndex(e.index));
            rr.size_target = target.and_then(|f| wasm::function_body_size(&m, f).ok());
            rr.target_hash = target
                .and_then(|f| m.defined_func(f).ok())
                .and_then(|f| wasm::canonical_body_hash(f).ok());
            rr.output_bytes = bytes;
            rr.external = Some("accepted".into());
        }
        Ok(None) => rr.external = Some("rejected: not smaller or not interesting".into()),
        Err(e) => {
            log::warn!("external reducer failed: {e}");
            rr.external = Some(format!("failed: {e}"));
        }
    }
    rr.elapsed = started.elapsed().as_secs_f64();
    rr
}

fn run_external(
    rr: &ReductionResult,
    oracle: &dyn Oracle,
    external: &ExternalReducer,
    script: &Path,
) -> Result<Option<(Vec<u8>, WasmModule)>, String> {
    let dir = tempfile::Builder::new()
        .prefix("rr-hybrid-")
        .tempdir()
        .map_err(|e| e.to_string())?;
    let input = dir.path().join("input.wasm");
    let output = dir.path().join("output.wasm");
    std::fs::write(&input, &rr.output_bytes).map_err(|e| e.to_string())?;
    let argv = shlex::split(&external.template)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| format!("cannot parse command `{}`", external.template))?;
    let argv: Vec<String> = argv
        .into_iter()
        .map(|a| {
            a.replace("{input}", &input.to_string_lossy())
                .replace("{output}", &output.to_string_lossy())
                .replace("{oracle}", &script.to_string_lossy())
        })
        .collect();
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("{}: {e}", argv[0]))?;
    let status = match child.wait_timeout(external.timeout).map_err(|e| e.to_string())? {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(format!("timed out after {:?}", external.timeout));
        }
    };
    if !status.success() {
        return Err(format!("exited with {status}"));
    }
    let bytes = std::fs::read(&output).map_err(|e| format!("no output: {e}"))?;
    let m = wasm::parse_module(&bytes).map_err(|e| e.to_string())?;
    wasm::validate_module(&bytes)?;
    if wasm::code_size(&m) >= rr.size_all {
        return Ok(None);
    }
    match oracle.check(&output) {
        Ok(v) if v.interesting => Ok(Some((bytes, m))),
        Ok(_) => Ok(None),
        Err(e) => Err(format!("oracle re-check failed: {e}")),
    }
}
