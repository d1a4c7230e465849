//! Running a split program with the target boundary intercepted.
//!
//! The remaining side imports the target through a host forwarder; the
//! target side calls back into the remaining side through ordinary imports,
//! which the store routes to [`Embedder::call_foreign`]. A shadow copy of
//! the shared state is diffed whenever control crosses into the target, so
//! the trace holds exactly the writes the target could observe.

use std::collections::HashMap;
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::harness::{status_of, HarnessError, HostEnv, RunOutcome};
use super::interp::{Embedder, ExternVal, FuncAddr, InstanceId, InstantiationError, Store, Trap, Value};
use super::ExecLimits;
use crate::split::{PartitionedProgram, TARGET_MODULE};
use crate::trace::{
    CallerFrame, EntryOrigin, FuncTag, InitialState, Trace, TraceEvent, TraceMeta, TraceValue,
};

const FORWARDER: u32 = u32::MAX;
const HOST_BASE: u32 = 1000;
const RECORD_STACK: usize = 512 << 20;

pub type ObservedValue = TraceValue;

/// What the target saw and did at one boundary crossing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observation {
    /// Control entered the target from outside.
    Enter { args: Vec<ObservedValue>, state: ObservedState },
    /// The target returned to outside code.
    Leave { results: Vec<ObservedValue> },
    /// The target called out.
    OutCall { callee: FuncTag, args: Vec<ObservedValue> },
    /// An out-call returned to the target.
    Return { results: Vec<ObservedValue>, state: ObservedState },
}

/// Shared state as the target could read it: a hash of linear memory and
/// the global values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedState {
    pub memory: String,
    pub globals: Vec<ObservedValue>,
}

#[derive(Debug, Clone, Default)]
pub struct RecordOptions {
    /// Check after every diff that replaying it onto the old shadow gives
    /// the actual state.
    pub check_shadow: bool,
    /// Keep an [`Observation`] log.
    pub observe: bool,
    /// Only the first this many globals go into observed states.
    pub observed_globals: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Recording {
    pub trace: Trace,
    pub outcome: RunOutcome,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Shadow {
    memory: Option<Vec<u8>>,
    globals: Vec<TraceValue>,
    tables: Vec<Vec<FuncTag>>,
}

fn apply(shadow: &mut Shadow, e: &TraceEvent) {
    match e {
        TraceEvent::MemoryGrow { pages } => {
            if let Some(m) = &mut shadow.memory {
                m.resize(*pages as usize * super::interp::PAGE_SIZE, 0);
            }
        }
        TraceEvent::MemoryWrite { offset, bytes } => {
            if let Some(m) = &mut shadow.memory {
                let o = *offset as usize;
                m[o..o + bytes.len()].copy_from_slice(bytes);
            }
        }
        TraceEvent::GlobalWrite { index, value } => shadow.globals[*index as usize] = *value,
        TraceEvent::TableGrow { table, size } => {
            shadow.tables[*table as usize].resize(*size as usize, FuncTag::Null)
        }
        TraceEvent::TableWrite { table, slot, tag } => {
            shadow.tables[*table as usize][*slot as usize] = *tag
        }
        _ => {}
    }
}

#[derive(Debug, Clone, Copy)]
enum Mark {
    Target(u64),
    Outside(u64),
}

struct Recorder<'p> {
    p: &'p PartitionedProgram,
    opts: RecordOptions,
    host: HostEnv,
    target_func: FuncAddr,
    rem_inst: InstanceId,
    tgt_inst: InstanceId,
    tags: HashMap<FuncAddr, FuncTag>,
    /// Remaining-side function index to input index.
    rem_to_input: HashMap<u32, u32>,
    /// Host function id to input index of the import.
    host_imports: HashMap<u32, u32>,
    mem: Option<usize>,
    globals: Vec<usize>,
    tables: Vec<usize>,
    shadow: Shadow,
    marks: Vec<Mark>,
    lists: Vec<Vec<TraceEvent>>,
    next_activation: u64,
    next_call: u64,
    observations: Vec<Observation>,
}

impl Recorder<'_> {
    fn tag(&self, v: Option<FuncAddr>) -> FuncTag {
        match v {
            None => FuncTag::Null,
            Some(a) => self.tags.get(&a).copied().unwrap_or(FuncTag::Extern),
        }
    }

    fn value(&self, v: &Value) -> TraceValue {
        match v {
            Value::I32(x) => TraceValue::I32(*x),
            Value::I64(x) => TraceValue::I64(*x),
            Value::F32(b) => TraceValue::F32(*b),
            Value::F64(b) => TraceValue::F64(*b),
            Value::FuncRef(r) => TraceValue::FuncRef(self.tag(*r)),
            Value::ExternRef(_) => TraceValue::ExternRef,
        }
    }

    fn values(&self, vs: &[Value]) -> Vec<TraceValue> {
        vs.iter().map(|v| self.value(v)).collect()
    }

    fn snapshot(&self, store: &Store) -> Shadow {
        Shadow {
            memory: self.mem.map(|m| store.memories[m].data.clone()),
            globals: self.globals.iter().map(|g| self.value(&store.globals[*g].value)).collect(),
            tables: self
                .tables
                .iter()
                .map(|t| {
                    store.tables[*t]
                        .elems
                        .iter()
                        .map(|v| match v {
                            Value::FuncRef(r) => self.tag(*r),
                            _ => FuncTag::Extern,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    fn digest(&self, store: &Store) -> ObservedState {
        let mut h = Sha256::new();
        if let Some(m) = self.mem {
            h.update(&store.memories[m].data);
        }
        let n = self.opts.observed_globals.unwrap_or(self.globals.len());
        ObservedState {
            memory: hex::encode(h.finalize()),
            globals: self
                .globals
                .iter()
                .take(n)
                .map(|g| self.value(&store.globals[*g].value))
                .collect(),
        }
    }

    /// Diff actual state against the shadow, update the shadow and return
    /// the write events.
    fn diff(&mut self, store: &Store) -> Vec<TraceEvent> {
        let before = self.opts.check_shadow.then(|| self.shadow.clone());
        let mut evs = Vec::new();
        let mut writes = Vec::new();
        if let (Some(m), Some(sh)) = (self.mem, self.shadow.memory.as_mut()) {
            let actual = &store.memories[m].data;
            if actual.len() != sh.len() {
                evs.push(TraceEvent::MemoryGrow {
                    pages: store.memories[m].pages(),
                });
                sh.resize(actual.len(), 0);
            }
            diff_bytes(sh, actual, &mut writes);
        }
        for (t, addr) in self.tables.iter().enumerate() {
            let len = store.tables[*addr].elems.len();
            if len != self.shadow.tables[t].len() {
                evs.push(TraceEvent::TableGrow {
                    table: t as u32,
                    size: len as u32,
                });
                self.shadow.tables[t].resize(len, FuncTag::Null);
            }
        }
        for (i, g) in self.globals.iter().enumerate() {
            let v = self.value(&store.globals[*g].value);
            if v != self.shadow.globals[i] {
                evs.push(TraceEvent::GlobalWrite {
                    index: i as u32,
                    value: v,
                });
                self.shadow.globals[i] = v;
            }
        }
        for (t, addr) in self.tables.iter().enumerate() {
            for (slot, v) in store.tables[*addr].elems.iter().enumerate() {
                let tag = match v {
                    Value::FuncRef(r) => self.tag(*r),
                    _ => FuncTag::Extern,
                };
                if tag != self.shadow.tables[t][slot] {
                    evs.push(TraceEvent::TableWrite {
                        table: t as u32,
                        slot: slot as u32,
                        tag,
                    });
                    self.shadow.tables[t][slot] = tag;
                }
            }
        }
        evs.extend(writes);
        if let Some(mut replayed) = before {
            for e in &evs {
                apply(&mut replayed, e);
            }
            assert!(
                replayed == self.snapshot(store),
                "shadow diverged from actual state after replaying the diff"
            );
        }
        evs
    }

    fn cross_into_target(&mut self, store: &Store) {
        let evs = self.diff(store);
        self.lists.last_mut().unwrap().extend(evs);
    }

    /// The target may have changed anything; the outside view starts over.
    fn resync(&mut self, store: &Store) {
        self.shadow = self.snapshot(store);
    }

    fn attribution(&self, store: &Store) -> (Option<CallerFrame>, Vec<u32>) {
        let frames = store.frames();
        let start = frames
            .iter()
            .rposition(|f| f.instance == self.tgt_inst)
            .map_or(0, |i| i + 1);
        let outside: Vec<_> = frames[start..]
            .iter()
            .filter(|f| f.instance == self.rem_inst)
            .map(|f| (self.rem_to_input[&store.funcs[f.func].index], f.id))
            .collect();
        let caller = outside.last().map(|(func, frame)| CallerFrame {
            func: *func,
            frame: *frame,
        });
        (caller, outside.iter().map(|(f, _)| *f).collect())
    }

    fn enter(&mut self, store: &mut Store, args: &[Value]) -> Result<Vec<Value>, Trap> {
        let inside = match self.marks.last() {
            Some(Mark::Target(a)) => Some(*a),
            _ => None,
        };
        let origin = match (inside, self.marks.last()) {
            (Some(a), _) => EntryOrigin::Activation(a),
            (None, Some(Mark::Outside(id))) => EntryOrigin::OutCall(*id),
            _ => EntryOrigin::External,
        };
        if inside.is_none() {
            self.cross_into_target(store);
        }
        self.next_activation += 1;
        let activation = self.next_activation;
        let (caller, chain) = if inside.is_some() {
            (None, Vec::new())
        } else {
            self.attribution(store)
        };
        let args_tv = self.values(args);
        if self.opts.observe && inside.is_none() {
            let state = self.digest(store);
            self.observations.push(Observation::Enter {
                args: args_tv.clone(),
                state,
            });
        }
        self.lists.last_mut().unwrap().push(TraceEvent::TargetEntry {
            export: self.p.wiring.target_export_name.clone(),
            args: args_tv,
            activation,
            origin,
            caller,
            chain,
        });
        self.marks.push(Mark::Target(activation));
        let res = store.invoke(self, self.target_func, args);
        self.marks.pop();
        if inside.is_none() {
            self.resync(store);
            if let (true, Ok(r)) = (self.opts.observe, &res) {
                let results = self.values(r);
                self.observations.push(Observation::Leave { results });
            }
        }
        res
    }

    fn out_call(
        &mut self,
        store: &mut Store,
        input_index: u32,
        host_id: Option<u32>,
        callee: FuncAddr,
        args: &[Value],
    ) -> Result<Vec<Value>, Trap> {
        self.next_call += 1;
        let call_id = self.next_call;
        self.resync(store);
        if self.opts.observe {
            let args = self.values(args);
            self.observations.push(Observation::OutCall {
                callee: FuncTag::Function(input_index),
                args,
            });
        }
        self.marks.push(Mark::Outside(call_id));
        self.lists.push(Vec::new());
        let res = match host_id {
            Some(id) => self.host.call(id, args),
            None => store.invoke(self, callee, args),
        };
        self.marks.pop();
        if res.is_ok() {
            self.cross_into_target(store);
        }
        let nested = self.lists.pop().unwrap();
        let results = res.as_ref().ok().map(|r| self.values(r));
        if let (true, Some(r)) = (self.opts.observe, &results) {
            let state = self.digest(store);
            self.observations.push(Observation::Return {
                results: r.clone(),
                state,
            });
        }
        let import = self
            .p
            .wiring
            .remaining_export(input_index)
            .unwrap_or_default()
            .to_string();
        self.lists.last_mut().unwrap().push(TraceEvent::OutCallReturn {
            import,
            call_id,
            results,
            nested,
        });
        res
    }

    fn in_target(&self) -> bool {
        matches!(self.marks.last(), Some(Mark::Target(_)))
    }
}

impl Embedder for Recorder<'_> {
    fn call_host(&mut self, store: &mut Store, id: u32, args: &[Value]) -> Result<Vec<Value>, Trap> {
        if id == FORWARDER {
            return self.enter(store, args);
        }
        let local = (id - HOST_BASE) % HostEnv::ID_COUNT;
        if self.in_target() {
            let input = self.host_imports[&id];
            return self.out_call(store, input, Some(local), 0, args);
        }
        self.host.call(local, args)
    }

    fn call_foreign(
        &mut self,
        store: &mut Store,
        caller: InstanceId,
        callee: FuncAddr,
        args: &[Value],
    ) -> Result<Vec<Value>, Trap> {
        if callee == self.target_func {
            return self.enter(store, args);
        }
        if caller == self.tgt_inst {
            if let FuncTag::Function(f) = self.tag(Some(callee)) {
                return self.out_call(store, f, None, callee, args);
            }
        }
        store.invoke(self, callee, args)
    }

    fn on_enter(&mut self, _store: &Store, callee: FuncAddr, args: &[Value]) {
        if callee != self.target_func {
            return;
        }
        let Some(Mark::Target(cur)) = self.marks.last().copied() else {
            return;
        };
        self.next_activation += 1;
        let ev = TraceEvent::TargetEntry {
            export: self.p.wiring.target_export_name.clone(),
            args: self.values(args),
            activation: self.next_activation,
            origin: EntryOrigin::Activation(cur),
            caller: None,
            chain: Vec::new(),
        };
        self.lists.last_mut().unwrap().push(ev);
    }
}

/// Append `MemoryWrite`s for the maximal runs where `actual` differs from
/// `shadow`, and bring `shadow` up to date.
fn diff_bytes(shadow: &mut [u8], actual: &[u8], out: &mut Vec<TraceEvent>) {
    const CHUNK: usize = 256;
    let n = actual.len();
    let mut run: Option<usize> = None;
    let mut i = 0;
    while i < n {
        if run.is_none() && i % CHUNK == 0 && i + CHUNK <= n && shadow[i..i + CHUNK] == actual[i..i + CHUNK] {
            i += CHUNK;
            continue;
        }
        let differs = shadow[i] != actual[i];
        match (run, differs) {
            (None, true) => run = Some(i),
            (Some(s), false) => {
                out.push(TraceEvent::MemoryWrite {
                    offset: s as u32,
                    bytes: actual[s..i].to_vec(),
                });
                shadow[s..i].copy_from_slice(&actual[s..i]);
                run = None;
            }
            _ => {}
        }
        i += 1;
    }
    if let Some(s) = run {
        out.push(TraceEvent::MemoryWrite {
            offset: s as u32,
            bytes: actual[s..n].to_vec(),
        });
        shadow[s..n].copy_from_slice(&actual[s..n]);
    }
}

/// Non-zero runs of a memory image, with short zero gaps bridged.
pub(crate) fn nonzero_runs(data: &[u8], max_gap: usize) -> Vec<(u32, Vec<u8>)> {
    let mut out: Vec<(u32, Vec<u8>)> = Vec::new();
    let mut i = 0;
    while i < data.len() {
        if data[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i + 1;
        let mut zeros = 0;
        let mut j = i + 1;
        while j < data.len() && zeros <= max_gap {
            if data[j] == 0 {
                zeros += 1;
            } else {
                zeros = 0;
                end = j + 1;
            }
            j += 1;
        }
        out.push((start as u32, data[start..end].to_vec()));
        i = end;
    }
    out
}

/// Record a run of the partitioned program from export `entry`.
pub fn run_partition_recording(
    p: &PartitionedProgram,
    entry: &str,
    limits: &ExecLimits,
) -> Result<Recording, HarnessError> {
    run_partition_recording_with(p, entry, limits, &RecordOptions::default())
}

pub fn run_partition_recording_with(
    p: &PartitionedProgram,
    entry: &str,
    limits: &ExecLimits,
    opts: &RecordOptions,
) -> Result<Recording, HarnessError> {
    // Every crossing nests host frames on the native stack.
    std::thread::scope(|s| {
        std::thread::Builder::new()
            .name("rr-record".into())
            .stack_size(RECORD_STACK)
            .spawn_scoped(s, || record(p, entry, limits, opts))
            .expect("spawn recorder thread")
            .join()
            .unwrap_or_else(|e| std::panic::resume_unwind(e))
    })
}

fn record(
    p: &PartitionedProgram,
    entry: &str,
    limits: &ExecLimits,
    opts: &RecordOptions,
) -> Result<Recording, HarnessError> {
    let started = Instant::now();
    let rem = &p.remaining_module;
    let tgt = &p.target_module;
    let w = &p.wiring;
    let mut store = Store::new(limits.store_limits());
    let inst_err = |e: InstantiationError| HarnessError::InstantiationFailed(e.to_string());

    let target_ty = tgt
        .func_type(tgt.num_funcs() - 1)
        .cloned()
        .ok_or_else(|| HarnessError::InvalidModule("target side defines no function".into()))?;
    let forwarder = store.alloc_host_func(target_ty, FORWARDER);
    let mut host_imports = HashMap::new();
    let mut resolved = Vec::new();
    let mut func_import = 0u32;
    for (k, imp) in rem.imports.iter().enumerate() {
        let v = if imp.module == TARGET_MODULE {
            Some(ExternVal::Func(forwarder))
        } else {
            let base = HOST_BASE + k as u32 * HostEnv::ID_COUNT;
            let v = HostEnv::resolve(&mut store, &imp.module, &imp.name, base);
            if let Some(ExternVal::Func(a)) = v {
                if let super::interp::FuncKind::Host { id } = store.funcs[a].kind {
                    host_imports.insert(id, func_import);
                }
            }
            v
        };
        if matches!(imp.kind, crate::wasm::ImportKind::Func(_)) {
            func_import += 1;
        }
        resolved.push(v);
    }
    let mut scratch = HostEnv::new();
    let mut it = resolved.into_iter();
    let rem_inst = match store.instantiate(&mut scratch, rem, &mut |_, _| it.next().flatten(), false) {
        Ok(id) => id,
        Err(InstantiationError::Trap(t)) => return Ok(trapped_at_instantiation(t, started, &store)),
        Err(e) => return Err(inst_err(e)),
    };
    let resolved: Vec<_> = tgt
        .imports
        .iter()
        .map(|imp| store.export(rem_inst, &imp.name))
        .collect();
    let mut it = resolved.into_iter();
    let tgt_inst = match store.instantiate(&mut scratch, tgt, &mut |_, _| it.next().flatten(), false) {
        Ok(id) => id,
        Err(InstantiationError::Trap(t)) => return Ok(trapped_at_instantiation(t, started, &store)),
        Err(e) => return Err(inst_err(e)),
    };
    let target_func = match store.export(tgt_inst, &w.target_export_name) {
        Some(ExternVal::Func(f)) => f,
        _ => return Err(HarnessError::MissingEntry(w.target_export_name.clone())),
    };
    store.funcs[target_func].watched = true;

    let rem_to_input: HashMap<u32, u32> = w
        .remaining_map
        .func
        .as_deref()
        .unwrap_or(&[])
        .iter()
        .enumerate()
        .filter_map(|(input, r)| r.map(|r| (r, input as u32)))
        .collect();
    let mut tags = HashMap::new();
    for (r, addr) in store.instances[rem_inst].funcs.iter().enumerate() {
        let input = rem_to_input[&(r as u32)];
        let tag = if input == w.target_index.0 {
            FuncTag::Target
        } else {
            FuncTag::Function(input)
        };
        tags.insert(*addr, tag);
    }
    tags.insert(target_func, FuncTag::Target);

    let ri = &store.instances[rem_inst];
    let mut rec = Recorder {
        p,
        opts: opts.clone(),
        host: HostEnv::new(),
        target_func,
        rem_inst,
        tgt_inst,
        tags,
        rem_to_input,
        host_imports,
        mem: ri.memories.first().copied(),
        globals: ri.globals.clone(),
        tables: ri.tables.clone(),
        shadow: Shadow {
            memory: None,
            globals: Vec::new(),
            tables: Vec::new(),
        },
        marks: Vec::new(),
        lists: vec![Vec::new()],
        next_activation: 0,
        next_call: 0,
        observations: Vec::new(),
    };
    rec.resync(&store);
    let initial = InitialState {
        pages: rec.mem.map(|m| store.memories[m].pages()),
        memory: rec
            .shadow
            .memory
            .as_deref()
            .map(|d| nonzero_runs(d, 0))
            .unwrap_or_default(),
        globals: rec.shadow.globals.clone(),
        tables: rec.shadow.tables.clone(),
    };

    let result = run_entry(&mut store, &mut rec, rem_inst, entry)?;
    let (status, stderr) = status_of(result);
    let mut lists = std::mem::take(&mut rec.lists);
    let outcome = RunOutcome {
        status,
        stdout: std::mem::take(&mut rec.host.stdout),
        stderr: stderr.into_bytes(),
        duration: started.elapsed().as_secs_f64(),
        fuel_used: store.fuel_used(),
        coverage: std::mem::take(&mut rec.host.coverage),
    };
    Ok(Recording {
        trace: Trace {
            meta: TraceMeta {
                entry: entry.to_string(),
                target: w.target_index.0,
                initial,
            },
            events: lists.pop().unwrap_or_default(),
        },
        outcome,
        observations: rec.observations,
    })
}

fn run_entry(
    store: &mut Store,
    rec: &mut Recorder<'_>,
    rem_inst: InstanceId,
    entry: &str,
) -> Result<Result<Vec<Value>, Trap>, HarnessError> {
    let entry_fn = match store.export(rem_inst, entry) {
        Some(ExternVal::Func(f)) if store.funcs[f].ty.params.is_empty() => f,
        _ => return Err(HarnessError::MissingEntry(entry.to_string())),
    };
    if let Some(s) = store.instances[rem_inst].start {
        if let Err(t) = store.invoke(rec, s, &[]) {
            return Ok(Err(t));
        }
    }
    Ok(store.invoke(rec, entry_fn, &[]))
}

fn trapped_at_instantiation(t: Trap, started: Instant, store: &Store) -> Recording {
    let (status, stderr) = status_of(Err(t));
    Recording {
        trace: Trace::default(),
        outcome: RunOutcome {
            status,
            stdout: Vec::new(),
            stderr: stderr.into_bytes(),
            duration: started.elapsed().as_secs_f64(),
            fuel_used: store.fuel_used(),
            coverage: Vec::new(),
        },
        observations: Vec::new(),
    }
}
