//! A small reference interpreter for Wasm 2.0 without SIMD.
//!
//! Several module instances can live in one [`Store`] and call each other.
//! Every call that leaves an instance, every call to a host function, and
//! every call to a function flagged as watched is routed through an
//! [`Embedder`], which is how the recorder observes boundary crossings.

mod code;
mod num;
mod run;
mod value;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::wasm::{
    ConstExpr, DataMode, ElemItems, ElemMode, FuncType, GlobalType, ImportKind, Instr, Limits,
    TableType, ValType, WasmModule,
};

use code::Code;
pub use value::{BacktraceFrame, FuncAddr, Trap, TrapKind, Value};

pub const PAGE_SIZE: usize = 65536;
const MAX_PAGES: u32 = 65536;
const MAX_TABLE_SIZE: u32 = 10_000_000;

pub type InstanceId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternVal {
    Func(FuncAddr),
    Table(usize),
    Memory(usize),
    Global(usize),
}

#[derive(Debug, Error)]
pub enum InstantiationError {
    #[error("unresolved import {module}.{name}")]
    UnresolvedImport { module: String, name: String },
    #[error("incompatible import type for {module}.{name}")]
    IncompatibleImport { module: String, name: String },
    #[error("trap during instantiation: {0}")]
    Trap(Trap),
    #[error("invalid module: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub enum FuncKind {
    Wasm { instance: InstanceId, code: Arc<Code> },
    Host { id: u32 },
}

#[derive(Debug, Clone)]
pub struct FuncInst {
    pub ty: FuncType,
    pub kind: FuncKind,
    /// Index in the defining module (imports first); meaningless for hosts.
    pub index: u32,
    pub watched: bool,
}

#[derive(Debug, Clone)]
pub struct TableInst {
    pub ty: TableType,
    pub elems: Vec<Value>,
}

#[derive(Debug, Clone)]
pub struct MemInst {
    pub limits: Limits,
    pub data: Vec<u8>,
}

impl MemInst {
    pub fn pages(&self) -> u32 {
        (self.data.len() / PAGE_SIZE) as u32
    }
}

#[derive(Debug, Clone)]
pub struct GlobalInst {
    pub ty: GlobalType,
    pub value: Value,
}

#[derive(Debug, Clone, Default)]
pub struct Instance {
    pub types: Vec<FuncType>,
    pub funcs: Vec<FuncAddr>,
    pub tables: Vec<usize>,
    pub memories: Vec<usize>,
    pub globals: Vec<usize>,
    pub elems: Vec<Vec<Value>>,
    pub datas: Vec<Arc<Vec<u8>>>,
    pub exports: BTreeMap<String, ExternVal>,
    pub start: Option<FuncAddr>,
}

#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub func: FuncAddr,
    pub instance: InstanceId,
    /// Unique within a store.
    pub id: u64,
    pub pc: usize,
    pub(crate) base: usize,
    pub(crate) label_base: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Label {
    pub arity: usize,
    pub height: usize,
    pub cont: usize,
    pub is_loop: bool,
}

/// Callbacks for calls that leave the current instance.
pub trait Embedder {
    fn call_host(&mut self, store: &mut Store, id: u32, args: &[Value]) -> Result<Vec<Value>, Trap>;

    /// A call from `caller` into a function of another instance.
    fn call_foreign(
        &mut self,
        store: &mut Store,
        caller: InstanceId,
        callee: FuncAddr,
        args: &[Value],
    ) -> Result<Vec<Value>, Trap> {
        let _ = caller;
        store.invoke(self, callee, args)
    }

    /// A same-instance call to a watched function, just before its frame is
    /// pushed.
    fn on_enter(&mut self, store: &Store, callee: FuncAddr, args: &[Value]) {
        let _ = (store, callee, args);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StoreLimits {
    pub fuel: u64,
    pub memory_bytes: u64,
    pub deadline: Option<Instant>,
    pub max_call_depth: usize,
}

impl Default for StoreLimits {
    fn default() -> Self {
        StoreLimits {
            fuel: 1_000_000_000,
            memory_bytes: 1 << 30,
            deadline: None,
            max_call_depth: 10_000,
        }
    }
}

pub struct Store {
    pub funcs: Vec<FuncInst>,
    pub tables: Vec<TableInst>,
    pub memories: Vec<MemInst>,
    pub globals: Vec<GlobalInst>,
    pub instances: Vec<Instance>,
    pub(crate) stack: Vec<Value>,
    pub(crate) frames: Vec<Frame>,
    pub(crate) labels: Vec<Label>,
    next_frame_id: u64,
    pub(crate) fuel: u64,
    pub(crate) limits: StoreLimits,
    pub(crate) ticks: u32,
}

impl Store {
    pub fn new(limits: StoreLimits) -> Store {
        Store {
            funcs: Vec::new(),
            tables: Vec::new(),
            memories: Vec::new(),
            globals: Vec::new(),
            instances: Vec::new(),
            stack: Vec::new(),
            frames: Vec::new(),
            labels: Vec::new(),
            next_frame_id: 0,
            fuel: limits.fuel,
            limits,
            ticks: 0,
        }
    }

    pub fn fuel_used(&self) -> u64 {
        self.limits.fuel - self.fuel
    }

    /// Active frames, outermost first.
    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn alloc_host_func(&mut self, ty: FuncType, id: u32) -> FuncAddr {
        self.funcs.push(FuncInst {
            ty,
            kind: FuncKind::Host { id },
            index: 0,
            watched: false,
        });
        self.funcs.len() - 1
    }

    pub fn export(&self, instance: InstanceId, name: &str) -> Option<ExternVal> {
        self.instances[instance].exports.get(name).copied()
    }

    pub fn func_instance(&self, f: FuncAddr) -> Option<InstanceId> {
        match self.funcs[f].kind {
            FuncKind::Wasm { instance, .. } => Some(instance),
            FuncKind::Host { .. } => None,
        }
    }

    pub(crate) fn next_frame_id(&mut self) -> u64 {
        self.next_frame_id += 1;
        self.next_frame_id
    }

    fn eval_const(&self, inst: &Instance, e: &ConstExpr) -> Result<Value, InstantiationError> {
        let instrs = e.instrs().map_err(|e| InstantiationError::Invalid(e.to_string()))?;
        let mut stack = Vec::new();
        for i in instrs {
            let v = match i {
                Instr::I32Const(v) => Value::I32(v),
                Instr::I64Const(v) => Value::I64(v),
                Instr::F32Const(v) => Value::F32(v),
                Instr::F64Const(v) => Value::F64(v),
                Instr::RefNull(ValType::FuncRef) => Value::FuncRef(None),
                Instr::RefNull(_) => Value::ExternRef(None),
                Instr::RefFunc(f) => Value::FuncRef(Some(inst.funcs[f as usize])),
                Instr::GlobalGet(g) => self.globals[inst.globals[g as usize]].value,
                other => {
                    return Err(InstantiationError::Invalid(format!(
                        "non-constant instruction {other:?} in initializer"
                    )))
                }
            };
            stack.push(v);
        }
        stack
            .pop()
            .ok_or_else(|| InstantiationError::Invalid("empty initializer".into()))
    }

    /// Instantiate `m`, resolving imports through `resolve`. The start
    /// function runs only if `run_start` is set; otherwise it is stored in
    /// the instance for the caller to run later.
    pub fn instantiate<E: Embedder + ?Sized>(
        &mut self,
        embedder: &mut E,
        m: &WasmModule,
        resolve: &mut dyn FnMut(&str, &str) -> Option<ExternVal>,
        run_start: bool,
    ) -> Result<InstanceId, InstantiationError> {
        let id = self.instances.len();
        let mut inst = Instance {
            types: m.types.clone(),
            ..Instance::default()
        };

        for imp in &m.imports {
            let unresolved = || InstantiationError::UnresolvedImport {
                module: imp.module.clone(),
                name: imp.name.clone(),
            };
            let incompatible = || InstantiationError::IncompatibleImport {
                module: imp.module.clone(),
                name: imp.name.clone(),
            };
            let ext = resolve(&imp.module, &imp.name).ok_or_else(unresolved)?;
            match (imp.kind, ext) {
                (ImportKind::Func(t), ExternVal::Func(a)) => {
                    if self.funcs.get(a).map(|f| &f.ty) != m.types.get(t as usize) {
                        return Err(incompatible());
                    }
                    inst.funcs.push(a);
                }
                (ImportKind::Table(tt), ExternVal::Table(a)) => {
                    let t = &self.tables[a];
                    if t.ty.elem != tt.elem
                        || !limits_match(t.elems.len() as u32, t.ty.limits.max, &tt.limits)
                    {
                        return Err(incompatible());
                    }
                    inst.tables.push(a);
                }
                (ImportKind::Memory(l), ExternVal::Memory(a)) => {
                    let mm = &self.memories[a];
                    if !limits_match(mm.pages(), mm.limits.max, &l) {
                        return Err(incompatible());
                    }
                    inst.memories.push(a);
                }
                (ImportKind::Global(gt), ExternVal::Global(a)) => {
                    if self.globals[a].ty != gt {
                        return Err(incompatible());
                    }
                    inst.globals.push(a);
                }
                _ => return Err(incompatible()),
            }
        }

        let first_defined = inst.funcs.len() as u32;
        for (k, f) in m.functions.iter().enumerate() {
            let ty = m
                .types
                .get(f.type_index as usize)
                .cloned()
                .ok_or_else(|| InstantiationError::Invalid("bad type index".into()))?;
            let code = Code::compile(f, &ty, &m.types)
                .map_err(|e| InstantiationError::Invalid(e.to_string()))?;
            self.funcs.push(FuncInst {
                ty,
                kind: FuncKind::Wasm {
                    instance: id,
                    code: Arc::new(code),
                },
                index: first_defined + k as u32,
                watched: false,
            });
            inst.funcs.push(self.funcs.len() - 1);
        }
        for t in &m.tables {
            self.tables.push(TableInst {
                ty: *t,
                elems: vec![Value::default_for(t.elem); t.limits.min as usize],
            });
            inst.tables.push(self.tables.len() - 1);
        }
        for l in &m.memories {
            if l.min as u64 * PAGE_SIZE as u64 > self.limits.memory_bytes {
                return Err(InstantiationError::Trap(Trap::host(
                    "initial memory exceeds the memory limit",
                )));
            }
            self.memories.push(MemInst {
                limits: *l,
                data: vec![0; l.min as usize * PAGE_SIZE],
            });
            inst.memories.push(self.memories.len() - 1);
        }
        for g in &m.globals {
            let value = self.eval_const(&inst, &g.init)?;
            self.globals.push(GlobalInst { ty: g.ty, value });
            inst.globals.push(self.globals.len() - 1);
        }
        for seg in &m.elem_segments {
            let vals = match &seg.items {
                ElemItems::Functions(fs) => fs
                    .iter()
                    .map(|f| Value::FuncRef(Some(inst.funcs[*f as usize])))
                    .collect(),
                ElemItems::Exprs(es) => es
                    .iter()
                    .map(|e| self.eval_const(&inst, e))
                    .collect::<Result<Vec<_>, _>>()?,
            };
            inst.elems.push(vals);
        }
        inst.datas = m
            .data_segments
            .iter()
            .map(|d| Arc::new(d.bytes.clone()))
            .collect();
        for e in &m.exports {
            let v = match e.kind {
                crate::wasm::ExternKind::Func => ExternVal::Func(inst.funcs[e.index as usize]),
                crate::wasm::ExternKind::Table => ExternVal::Table(inst.tables[e.index as usize]),
                crate::wasm::ExternKind::Memory => {
                    ExternVal::Memory(inst.memories[e.index as usize])
                }
                crate::wasm::ExternKind::Global => {
                    ExternVal::Global(inst.globals[e.index as usize])
                }
            };
            inst.exports.insert(e.name.clone(), v);
        }
        inst.start = m.start.map(|s| inst.funcs[s as usize]);

        // Segment initialization, in module order.
        let trap = |k| InstantiationError::Trap(Trap::new(k));
        for (i, seg) in m.elem_segments.iter().enumerate() {
            match &seg.mode {
                ElemMode::Active { table, offset } => {
                    let off = self.eval_const(&inst, offset)?.i32() as u32 as usize;
                    let t = &mut self.tables[inst.tables[*table as usize]];
                    let items = std::mem::take(&mut inst.elems[i]);
                    if off.checked_add(items.len()).map_or(true, |e| e > t.elems.len()) {
                        return Err(trap(TrapKind::TableOutOfBounds));
                    }
                    t.elems[off..off + items.len()].copy_from_slice(&items);
                }
                ElemMode::Declared => inst.elems[i].clear(),
                ElemMode::Passive => {}
            }
        }
        for (i, seg) in m.data_segments.iter().enumerate() {
            if let DataMode::Active { memory, offset } = &seg.mode {
                let off = self.eval_const(&inst, offset)?.i32() as u32 as usize;
                let mem = &mut self.memories[inst.memories[*memory as usize]];
                if off
                    .checked_add(seg.bytes.len())
                    .map_or(true, |e| e > mem.data.len())
                {
                    return Err(trap(TrapKind::MemoryOutOfBounds));
                }
                mem.data[off..off + seg.bytes.len()].copy_from_slice(&seg.bytes);
                inst.datas[i] = Arc::new(Vec::new());
            }
        }

        self.instances.push(inst);
        if run_start {
            if let Some(s) = self.instances[id].start {
                self.invoke(embedder, s, &[])
                    .map_err(InstantiationError::Trap)?;
            }
        }
        Ok(id)
    }

    /// Call `func` with `args` and run it to completion.
    pub fn invoke<E: Embedder + ?Sized>(
        &mut self,
        embedder: &mut E,
        func: FuncAddr,
        args: &[Value],
    ) -> Result<Vec<Value>, Trap> {
        if let FuncKind::Host { id } = self.funcs[func].kind {
            return embedder.call_host(self, id, args);
        }
        let depth = self.frames.len();
        let stack_base = self.stack.len();
        let label_base = self.labels.len();
        self.stack.extend_from_slice(args);
        let result = self
            .push_frame(func)
            .and_then(|_| self.run(embedder, depth));
        match result {
            Ok(()) => {
                let n = self.funcs[func].ty.results.len();
                let results = self.stack.split_off(self.stack.len() - n);
                self.stack.truncate(stack_base);
                Ok(results)
            }
            Err(mut t) => {
                if t.backtrace.is_empty() {
                    t.backtrace = self.backtrace();
                }
                self.frames.truncate(depth);
                self.stack.truncate(stack_base);
                self.labels.truncate(label_base);
                Err(t)
            }
        }
    }

    /// Current call stack, innermost first.
    pub fn backtrace(&self) -> Vec<BacktraceFrame> {
        self.frames
            .iter()
            .rev()
            .map(|f| BacktraceFrame {
                instance: f.instance,
                func_index: self.funcs[f.func].index,
            })
            .collect()
    }
}

fn limits_match(actual_min: u32, actual_max: Option<u32>, want: &Limits) -> bool {
    if actual_min < want.min {
        return false;
    }
    match (want.max, actual_max) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(w), Some(a)) => a <= w,
    }
}

#[cfg(test)]
mod tests;
