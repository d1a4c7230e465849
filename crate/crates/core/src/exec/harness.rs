use std::collections::HashSet;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::interp::{
    Embedder, ExternVal, FuncAddr, InstantiationError, Store, StoreLimits, Trap, TrapKind, Value,
};
use crate::wasm::{self, FuncType, ValType, WasmModule};

/// Module name of the minimal host interface available to programs.
pub const HOST_MODULE: &str = "host";

const HOST_PUTC: u32 = 0;
const HOST_EXIT: u32 = 1;
const HOST_COV: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExecLimits {
    pub fuel: u64,
    pub memory_bytes: u64,
    pub wall: Duration,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            fuel: 1_000_000_000,
            memory_bytes: 1 << 30,
            wall: Duration::from_secs(300),
        }
    }
}

impl ExecLimits {
    pub(crate) fn store_limits(&self) -> StoreLimits {
        StoreLimits {
            fuel: self.fuel,
            memory_bytes: self.memory_bytes,
            deadline: Instant::now().checked_add(self.wall),
            ..StoreLimits::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RunStatus {
    NormalExit(i32),
    Trap { kind: String, message: String },
    ResourceExhausted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub duration: f64,
    pub fuel_used: u64,
    /// Arguments of `rr.cov` calls, first occurrence only, in call order.
    pub coverage: Vec<u32>,
}

impl RunOutcome {
    pub fn trap_message(&self) -> Option<&str> {
        match &self.status {
            RunStatus::Trap { message, .. } => Some(message),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid module: {0}")]
    InvalidModule(String),
    #[error("instantiation failed: {0}")]
    InstantiationFailed(String),
    #[error("entry export `{0}` not found or not a function")]
    MissingEntry(String),
}

/// Services the `host` and `rr` imports and collects program output.
#[derive(Debug, Default)]
pub struct HostEnv {
    pub stdout: Vec<u8>,
    pub coverage: Vec<u32>,
    cov_seen: HashSet<u32>,
}

impl HostEnv {
    pub fn new() -> HostEnv {
        HostEnv::default()
    }

    /// Whether `(module, name)` names a function this environment provides.
    pub fn provides(module: &str, name: &str) -> bool {
        matches!(
            (module, name),
            (HOST_MODULE, "putc") | (HOST_MODULE, "exit") | (wasm::COV_MODULE, wasm::COV_FUNCTION)
        )
    }

    /// Allocate the host function for an import, using `id_base` to keep
    /// host ids disjoint from other embedder-defined functions.
    pub fn resolve(store: &mut Store, module: &str, name: &str, id_base: u32) -> Option<ExternVal> {
        let id = match (module, name) {
            (HOST_MODULE, "putc") => HOST_PUTC,
            (HOST_MODULE, "exit") => HOST_EXIT,
            (m, n) if m == wasm::COV_MODULE && n == wasm::COV_FUNCTION => HOST_COV,
            _ => return None,
        };
        let ty = FuncType::new([ValType::I32], []);
        Some(ExternVal::Func(store.alloc_host_func(ty, id_base + id)))
    }

    pub const ID_COUNT: u32 = 3;

    pub fn call(&mut self, id: u32, args: &[Value]) -> Result<Vec<Value>, Trap> {
        let arg = args.first().map_or(0, |v| v.i32());
        match id {
            HOST_PUTC => self.stdout.push(arg as u8),
            HOST_EXIT => return Err(Trap::new(TrapKind::Exit(arg))),
            HOST_COV => {
                if self.cov_seen.insert(arg as u32) {
                    self.coverage.push(arg as u32);
                }
            }
            _ => return Err(Trap::host(format!("unknown host function {id}"))),
        }
        Ok(Vec::new())
    }
}

impl Embedder for HostEnv {
    fn call_host(&mut self, _store: &mut Store, id: u32, args: &[Value]) -> Result<Vec<Value>, Trap> {
        self.call(id, args)
    }
}

/// Render a trap the way `rr-reduce run` reports it on stderr.
pub(crate) fn trap_report(t: &Trap) -> String {
    let mut s = format!("trap: {}\n", t.message);
    for f in &t.backtrace {
        s.push_str(&format!("  at func {}\n", f.func_index));
    }
    s
}

/// Map the result of running a program to its status and stderr text.
pub(crate) fn status_of(result: Result<Vec<Value>, Trap>) -> (RunStatus, String) {
    match result {
        Ok(vals) => {
            let code = match vals.as_slice() {
                [Value::I32(c)] => *c,
                _ => 0,
            };
            (RunStatus::NormalExit(code), String::new())
        }
        Err(t) => match t.kind {
            TrapKind::Exit(c) => (RunStatus::NormalExit(c), String::new()),
            k if k.is_resource_exhaustion() => (
                RunStatus::ResourceExhausted(t.message.clone()),
                format!("resource exhausted: {}\n", t.message),
            ),
            k => (
                RunStatus::Trap {
                    kind: format!("{k:?}"),
                    message: t.message.clone(),
                },
                trap_report(&t),
            ),
        },
    }
}

/// Parse, validate and run `bytes`, calling export `entry` with no
/// arguments.
pub fn run_module(bytes: &[u8], entry: &str, limits: &ExecLimits) -> Result<RunOutcome, HarnessError> {
    let m = wasm::parse_module(bytes).map_err(|e| HarnessError::InvalidModule(e.to_string()))?;
    wasm::validate_module(bytes).map_err(HarnessError::InvalidModule)?;
    run_wasm_module(&m, entry, limits)
}

/// Run an already parsed module that is known to be valid.
pub fn run_wasm_module(m: &WasmModule, entry: &str, limits: &ExecLimits) -> Result<RunOutcome, HarnessError> {
    let start = Instant::now();
    let mut store = Store::new(limits.store_limits());
    let mut env = HostEnv::new();
    let inst = instantiate_with_host(&mut store, &mut env, m);
    let result = match inst {
        Ok((id, start_fn)) => {
            let entry_fn = match store.export(id, entry) {
                Some(ExternVal::Func(f)) => f,
                _ => return Err(HarnessError::MissingEntry(entry.to_string())),
            };
            if !store.funcs[entry_fn].ty.params.is_empty() {
                return Err(HarnessError::MissingEntry(entry.to_string()));
            }
            let started = match start_fn {
                Some(s) => store.invoke(&mut env, s, &[]).map(|_| ()),
                None => Ok(()),
            };
            started.and_then(|_| store.invoke(&mut env, entry_fn, &[]))
        }
        Err(InstantiationError::Trap(t)) => Err(t),
        Err(e) => return Err(HarnessError::InstantiationFailed(e.to_string())),
    };
    let (status, stderr) = status_of(result);
    Ok(RunOutcome {
        status,
        stdout: env.stdout,
        stderr: stderr.into_bytes(),
        duration: start.elapsed().as_secs_f64(),
        fuel_used: store.fuel_used(),
        coverage: env.coverage,
    })
}

/// Instantiate `m` against the host environment with the start function
/// deferred; returns the instance and its start function.
pub(crate) fn instantiate_with_host<E: Embedder + ?Sized>(
    store: &mut Store,
    embedder: &mut E,
    m: &WasmModule,
) -> Result<(usize, Option<FuncAddr>), InstantiationError> {
    // Host functions are allocated up front because the resolver cannot
    // borrow the store while instantiation holds it.
    let resolved: Vec<_> = m
        .imports
        .iter()
        .map(|imp| HostEnv::resolve(store, &imp.module, &imp.name, 0))
        .collect();
    let mut it = resolved.into_iter();
    let id = store.instantiate(embedder, m, &mut |_, _| it.next().flatten(), false)?;
    Ok((id, store.instances[id].start))
}
