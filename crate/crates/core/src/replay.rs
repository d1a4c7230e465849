//! Replay synthesis: a stand-in for the remaining side that reproduces the
//! recorded boundary interactions and nothing else.
//!
//! Each remaining function the target can reach becomes a replay function
//! of the same type. Its k-th invocation performs the events recorded for
//! the k-th call (state writes, calls into the target) and returns the
//! recorded results. A driver exported under the original entry name
//! performs the top-level entries.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::exec::nonzero_runs;
use crate::split::{BoundaryMap, TARGET_MODULE};
use crate::trace::{EntryOrigin, FuncTag, Trace, TraceEvent, TraceValue};
use crate::wasm::{
    self, BlockType, ConstExpr, DataMode, DataSegment, ElemItems, ElemMode, ElemSegment, Export,
    ExternKind, FuncType, FunctionDef, GlobalDef, GlobalType, Import, ImportKind, Instr, Limits,
    MemArg, NumOp, StoreOp, TableType, ValType, WasmError, WasmModule,
};

const PAGE: usize = 65536;
/// Zero gaps shorter than this do not split a data segment.
const DATA_GAP: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("recorded value {value} does not fit the boundary type {expected} ({context})")]
    TypeUnavailable {
        value: String,
        expected: String,
        context: String,
    },
    #[error("trace names unknown boundary function `{0}`")]
    UnknownImport(String),
    #[error(transparent)]
    Wasm(#[from] WasmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Reproduces recorded interactions with the target.
    Replayed,
    /// An outside function that was on the stack when the target was
    /// entered, kept with an empty body.
    Emptied,
    Driver,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayFunction {
    /// Index in the replay module's function space.
    pub index: u32,
    /// The input function it stands in for; `None` for the driver.
    pub input: Option<u32>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayModule {
    pub module: WasmModule,
    pub functions: Vec<ReplayFunction>,
    /// Export name to provenance, for every exported function.
    pub provenance: BTreeMap<String, Provenance>,
}

impl ReplayModule {
    pub fn function_for_input(&self, f: u32) -> Option<&ReplayFunction> {
        self.functions.iter().find(|r| r.input == Some(f))
    }

    pub fn driver(&self) -> &ReplayFunction {
        self.functions
            .iter()
            .find(|r| r.provenance == Provenance::Driver)
            .expect("replay module has a driver")
    }
}

/// One call of a replay function, in call order.
enum Episode<'t> {
    /// A run of consecutive top-level entries made by one caller function,
    /// with the writes before each of them. Grouping by function rather
    /// than by frame keeps call order: any out-call into the same function
    /// during the run finds the counter already advanced.
    Driver(Vec<&'t TraceEvent>),
    OutCall(&'t TraceEvent),
}

enum DriverStep<'t> {
    Call(u32),
    Inline(Vec<&'t TraceEvent>),
}

fn is_replayed_entry(e: &TraceEvent) -> bool {
    matches!(
        e,
        TraceEvent::TargetEntry { origin, .. } if !matches!(origin, EntryOrigin::Activation(_))
    )
}

fn collect_tags(evs: &[TraceEvent], out: &mut BTreeSet<u32>) {
    let value = |v: &TraceValue, out: &mut BTreeSet<u32>| {
        if let TraceValue::FuncRef(FuncTag::Function(f)) = v {
            out.insert(*f);
        }
    };
    for e in evs {
        match e {
            TraceEvent::TargetEntry { args, .. } => args.iter().for_each(|v| value(v, out)),
            TraceEvent::OutCallReturn { results, nested, .. } => {
                results.iter().flatten().for_each(|v| value(v, out));
                collect_tags(nested, out);
            }
            TraceEvent::GlobalWrite { value: v, .. } => value(v, out),
            TraceEvent::TableWrite {
                tag: FuncTag::Function(f),
                ..
            } => {
                out.insert(*f);
            }
            _ => {}
        }
    }
}

fn uses_target(t: &Trace) -> bool {
    fn in_events(evs: &[TraceEvent]) -> bool {
        evs.iter().any(|e| match e {
            TraceEvent::TargetEntry { .. } => true,
            TraceEvent::OutCallReturn { nested, results, .. } => {
                in_events(nested)
                    || results
                        .iter()
                        .flatten()
                        .any(|v| *v == TraceValue::FuncRef(FuncTag::Target))
            }
            TraceEvent::GlobalWrite { value, .. } => *value == TraceValue::FuncRef(FuncTag::Target),
            TraceEvent::TableWrite { tag, .. } => *tag == FuncTag::Target,
            _ => false,
        })
    }
    in_events(&t.events)
        || t.meta.initial.tables.iter().flatten().any(|t| *t == FuncTag::Target)
        || t.meta.initial.globals.contains(&TraceValue::FuncRef(FuncTag::Target))
}

/// Folded view of the shared state before the target first runs.
struct InitialImage {
    pages: Option<u32>,
    memory: Vec<u8>,
    globals: Vec<TraceValue>,
    tables: Vec<Vec<FuncTag>>,
}

impl InitialImage {
    fn apply(&mut self, e: &TraceEvent) {
        match e {
            TraceEvent::MemoryGrow { pages } => {
                self.pages = Some(*pages);
                self.memory.resize(*pages as usize * PAGE, 0);
            }
            TraceEvent::MemoryWrite { offset, bytes } => {
                let o = *offset as usize;
                if self.memory.len() < o + bytes.len() {
                    self.memory.resize(o + bytes.len(), 0);
                }
                self.memory[o..o + bytes.len()].copy_from_slice(bytes);
            }
            TraceEvent::GlobalWrite { index, value } => {
                if let Some(g) = self.globals.get_mut(*index as usize) {
                    *g = *value;
                }
            }
            TraceEvent::TableGrow { table, size } => {
                if let Some(t) = self.tables.get_mut(*table as usize) {
                    t.resize(*size as usize, FuncTag::Null);
                }
            }
            TraceEvent::TableWrite { table, slot, tag } => {
                if let Some(s) = self
                    .tables
                    .get_mut(*table as usize)
                    .and_then(|t| t.get_mut(*slot as usize))
                {
                    *s = *tag;
                }
            }
            _ => {}
        }
    }
}

struct Synth<'a> {
    rem: &'a WasmModule,
    target_ty: FuncType,
    /// Function index of the target import, if imported.
    target_import: Option<u32>,
    /// Input index to replay module function index.
    func_index: BTreeMap<u32, u32>,
    globals: Vec<GlobalType>,
}

impl Synth<'_> {
    fn input_type(&self, w: &BoundaryMap, f: u32) -> FuncType {
        let r = w
            .remaining_map
            .get(wasm::IndexSpace::Func, f)
            .expect("input function is mapped");
        self.rem.func_type(r).cloned().unwrap_or_default()
    }

    fn ref_instr(&self, tag: &FuncTag) -> Instr {
        match tag {
            FuncTag::Target => match self.target_import {
                Some(i) => Instr::RefFunc(i),
                None => Instr::RefNull(ValType::FuncRef),
            },
            FuncTag::Function(f) => match self.func_index.get(f) {
                Some(i) => Instr::RefFunc(*i),
                None => Instr::RefNull(ValType::FuncRef),
            },
            FuncTag::Null | FuncTag::Extern => Instr::RefNull(ValType::FuncRef),
        }
    }

    fn const_instr(&self, v: &TraceValue) -> Instr {
        match v {
            TraceValue::I32(x) => Instr::I32Const(*x),
            TraceValue::I64(x) => Instr::I64Const(*x),
            TraceValue::F32(b) => Instr::F32Const(*b),
            TraceValue::F64(b) => Instr::F64Const(*b),
            TraceValue::FuncRef(t) => self.ref_instr(t),
            TraceValue::ExternRef => Instr::RefNull(ValType::ExternRef),
        }
    }

    fn check(&self, vals: &[TraceValue], types: &[ValType], context: &str) -> Result<(), ReplayError> {
        if vals.len() != types.len() {
            return Err(ReplayError::TypeUnavailable {
                value: format!("{} values", vals.len()),
                expected: format!("{} values", types.len()),
                context: context.to_string(),
            });
        }
        for (v, t) in vals.iter().zip(types) {
            if v.ty() != *t {
                return Err(ReplayError::TypeUnavailable {
                    value: crate::trace::fmt_value(v),
                    expected: t.to_string(),
                    context: context.to_string(),
                });
            }
        }
        Ok(())
    }

    fn write_code(&self, e: &TraceEvent, out: &mut Vec<Instr>) -> Result<(), ReplayError> {
        match e {
            TraceEvent::MemoryWrite { offset, bytes } => {
                let mut k = 0;
                while k < bytes.len() {
                    let addr = Instr::I32Const(offset.wrapping_add(k as u32) as i32);
                    let rest = bytes.len() - k;
                    let n = [8, 4, 2, 1].into_iter().find(|n| *n <= rest).unwrap();
                    let mut le = [0u8; 8];
                    le[..n].copy_from_slice(&bytes[k..k + n]);
                    let v = u64::from_le_bytes(le);
                    let m = MemArg { align: 0, offset: 0 };
                    out.push(addr);
                    match n {
                        8 => out.extend([Instr::I64Const(v as i64), Instr::Store(StoreOp::I64Store, m)]),
                        4 => out.extend([Instr::I32Const(v as u32 as i32), Instr::Store(StoreOp::I32Store, m)]),
                        2 => out.extend([Instr::I32Const(v as i32), Instr::Store(StoreOp::I32Store16, m)]),
                        _ => out.extend([Instr::I32Const(v as i32), Instr::Store(StoreOp::I32Store8, m)]),
                    }
                    k += n;
                }
            }
            TraceEvent::MemoryGrow { pages } => out.extend([
                Instr::I32Const(*pages as i32),
                Instr::MemorySize(0),
                Instr::Num(NumOp::I32Sub),
                Instr::MemoryGrow(0),
                Instr::Drop,
            ]),
            TraceEvent::GlobalWrite { index, value } => {
                let gt = self.globals.get(*index as usize).copied();
                match gt {
                    Some(g) if g.mutable && g.ty == value.ty() => {
                        out.extend([self.const_instr(value), Instr::GlobalSet(*index)])
                    }
                    _ => {
                        return Err(ReplayError::TypeUnavailable {
                            value: crate::trace::fmt_value(value),
                            expected: format!("{gt:?}"),
                            context: format!("write to global {index}"),
                        })
                    }
                }
            }
            TraceEvent::TableWrite { table, slot, tag } => out.extend([
                Instr::I32Const(*slot as i32),
                self.ref_instr(tag),
                Instr::TableSet(*table),
            ]),
            TraceEvent::TableGrow { table, size } => out.extend([
                Instr::RefNull(ValType::FuncRef),
                Instr::I32Const(*size as i32),
                Instr::TableSize(*table),
                Instr::Num(NumOp::I32Sub),
                Instr::TableGrow(*table),
                Instr::Drop,
            ]),
            _ => {}
        }
        Ok(())
    }

    /// Code performing `evs`: state writes and calls into the target.
    /// Out-call events are skipped; they belong to other functions. With
    /// `keep_last`, the results of a final entry stay on the stack.
    fn events_code(&self, evs: &[&TraceEvent], keep_last: bool, out: &mut Vec<Instr>) -> Result<(), ReplayError> {
        let last_entry = evs.iter().rposition(|e| is_replayed_entry(e));
        for (i, e) in evs.iter().enumerate() {
            match e {
                TraceEvent::TargetEntry { args, origin, .. } => {
                    if matches!(origin, EntryOrigin::Activation(_)) {
                        continue;
                    }
                    self.check(args, &self.target_ty.params, "target entry arguments")?;
                    out.extend(args.iter().map(|a| self.const_instr(a)));
                    out.push(Instr::Call(self.target_import.expect("target imported when entered")));
                    if !(keep_last && Some(i) == last_entry && i == evs.len() - 1) {
                        out.extend(self.target_ty.results.iter().map(|_| Instr::Drop));
                    }
                }
                TraceEvent::OutCallReturn { .. } => {}
                w => self.write_code(w, out)?,
            }
        }
        Ok(())
    }

    fn default_results(&self, results: &[ValType], out: &mut Vec<Instr>) {
        out.extend(
            results
                .iter()
                .map(|t| self.const_instr(&TraceValue::default_for(*t))),
        );
    }

    /// Code for one episode of a function with result types `results`,
    /// leaving the results on the stack (or trapping).
    fn episode_code(&self, ep: &Episode<'_>, results: &[ValType], out: &mut Vec<Instr>) -> Result<(), ReplayError> {
        match ep {
            Episode::Driver(evs) => {
                let flows = self.target_ty.results == results
                    && evs.last().is_some_and(|e| is_replayed_entry(e));
                self.events_code(evs, flows, out)?;
                if !flows {
                    self.default_results(results, out);
                }
            }
            Episode::OutCall(TraceEvent::OutCallReturn {
                import,
                results: rs,
                nested,
                ..
            }) => {
                let nested: Vec<&TraceEvent> = nested.iter().collect();
                self.events_code(&nested, false, out)?;
                match rs {
                    Some(rs) => {
                        self.check(rs, results, &format!("results of {import}"))?;
                        out.extend(rs.iter().map(|v| self.const_instr(v)));
                    }
                    None => out.push(Instr::Unreachable),
                }
            }
            Episode::OutCall(_) => unreachable!("out-call episode holds an OutCallReturn"),
        }
        Ok(())
    }

    /// Counter-dispatched body: a branch table over the invocation count,
    /// one case per episode, trapping past the last one.
    fn dispatch_code(&self, eps: &[Episode<'_>], results: &[ValType], counter: u32) -> Result<Vec<Instr>, ReplayError> {
        let n = eps.len() as u32;
        let mut out = Vec::new();
        for _ in 0..=n {
            out.push(Instr::Block(BlockType::Empty));
        }
        out.extend([
            Instr::GlobalGet(counter),
            Instr::GlobalGet(counter),
            Instr::I32Const(1),
            Instr::Num(NumOp::I32Add),
            Instr::GlobalSet(counter),
            Instr::BrTable((0..n).collect(), n),
            Instr::End,
        ]);
        for ep in eps {
            self.episode_code(ep, results, &mut out)?;
            out.push(Instr::Return);
            out.push(Instr::End);
        }
        out.extend([Instr::Unreachable, Instr::End]);
        Ok(out)
    }
}

fn walk<'t>(
    evs: &'t [TraceEvent],
    w: &BoundaryMap,
    episodes: &mut BTreeMap<u32, Vec<Episode<'t>>>,
) -> Result<(), ReplayError> {
    for e in evs {
        if let TraceEvent::OutCallReturn { import, nested, .. } = e {
            let f = w
                .function_for_export(import)
                .ok_or_else(|| ReplayError::UnknownImport(import.clone()))?;
            episodes.entry(f).or_default().push(Episode::OutCall(e));
            walk(nested, w, episodes)?;
        }
    }
    Ok(())
}

/// Build the replay module for trace `t` of a partition with wiring `w`
/// whose remaining side is `m_remaining`.
pub fn synthesize_replay(t: &Trace, w: &BoundaryMap, m_remaining: &WasmModule) -> Result<ReplayModule, ReplayError> {
    let rem = m_remaining;
    let target_ty = rem
        .imports
        .iter()
        .find(|i| i.module == TARGET_MODULE)
        .and_then(|i| match i.kind {
            ImportKind::Func(ty) => rem.types.get(ty as usize).cloned(),
            _ => None,
        })
        .unwrap_or_default();
    let target_ty_index = rem
        .types
        .iter()
        .position(|x| *x == target_ty)
        .unwrap_or(0) as u32;

    // Initial state: instantiation image plus writes before the first entry.
    let init = &t.meta.initial;
    let mut image = InitialImage {
        pages: init.pages,
        memory: vec![0; init.pages.unwrap_or(0) as usize * PAGE],
        globals: init.globals.clone(),
        tables: init.tables.clone(),
    };
    for (off, bytes) in &init.memory {
        image.apply(&TraceEvent::MemoryWrite {
            offset: *off,
            bytes: bytes.clone(),
        });
    }
    let first_entry = t
        .events
        .iter()
        .position(is_replayed_entry)
        .unwrap_or(t.events.len());
    for e in &t.events[..first_entry] {
        image.apply(e);
    }

    // Episodes, in the order replay functions will be called.
    let mut episodes: BTreeMap<u32, Vec<Episode<'_>>> = BTreeMap::new();
    let mut steps: Vec<DriverStep<'_>> = Vec::new();
    let mut chain_funcs = BTreeSet::new();
    let mut pending: Vec<&TraceEvent> = Vec::new();
    let mut current: Option<u32> = None;
    for (i, e) in t.events.iter().enumerate() {
        match e {
            TraceEvent::TargetEntry {
                origin: EntryOrigin::Activation(_),
                ..
            } => {}
            TraceEvent::TargetEntry { caller, chain, .. } => {
                let mut evs = std::mem::take(&mut pending);
                evs.push(e);
                match caller {
                    Some(c) => {
                        chain_funcs.extend(chain.iter().copied());
                        let eps = episodes.entry(c.func).or_default();
                        match (current, eps.last_mut()) {
                            (Some(cur), Some(Episode::Driver(ev))) if cur == c.func => ev.extend(evs),
                            _ => {
                                eps.push(Episode::Driver(evs));
                                steps.push(DriverStep::Call(c.func));
                                current = Some(c.func);
                            }
                        }
                    }
                    None => {
                        steps.push(DriverStep::Inline(evs));
                        current = None;
                    }
                }
            }
            TraceEvent::OutCallReturn { import, nested, .. } => {
                let f = w
                    .function_for_export(import)
                    .ok_or_else(|| ReplayError::UnknownImport(import.clone()))?;
                episodes.entry(f).or_default().push(Episode::OutCall(e));
                walk(nested, w, &mut episodes)?;
            }
            _ if i >= first_entry => pending.push(e),
            _ => {}
        }
    }

    // Functions that need a stand-in.
    let mut replayed: BTreeSet<u32> = w.target_imports.iter().copied().collect();
    replayed.extend(episodes.keys().copied());
    let mut tagged = BTreeSet::new();
    for tbl in &image.tables {
        tagged.extend(tbl.iter().filter_map(|t| match t {
            FuncTag::Function(f) => Some(*f),
            _ => None,
        }));
    }
    for g in &image.globals {
        if let TraceValue::FuncRef(FuncTag::Function(f)) = g {
            tagged.insert(*f);
        }
    }
    collect_tags(&t.events, &mut tagged);
    replayed.extend(tagged.iter().copied());
    replayed.remove(&w.target_index.0);
    let emptied: BTreeSet<u32> = chain_funcs
        .difference(&replayed)
        .copied()
        .filter(|f| *f != w.target_index.0)
        .collect();
    let callable_from_target: BTreeSet<u32> = w.target_imports.iter().chain(&tagged).copied().collect();

    let mut module = WasmModule {
        types: rem.types.clone(),
        ..WasmModule::default()
    };
    let target_import = uses_target(t).then_some(0u32);
    if target_import.is_some() {
        module.imports.push(Import {
            module: TARGET_MODULE.into(),
            name: w.target_export_name.clone(),
            kind: ImportKind::Func(target_ty_index),
        });
    }
    let base = module.num_imported_funcs();
    let order: Vec<(u32, Provenance)> = replayed
        .iter()
        .map(|f| (*f, Provenance::Replayed))
        .chain(emptied.iter().map(|f| (*f, Provenance::Emptied)))
        .collect::<BTreeMap<_, _>>()
        .into_iter()
        .collect();
    let func_index: BTreeMap<u32, u32> = order
        .iter()
        .enumerate()
        .map(|(k, (f, _))| (*f, base + k as u32))
        .collect();
    let driver_index = base + order.len() as u32;

    let n_globals = rem.num_globals();
    let globals: Vec<GlobalType> = (0..n_globals).filter_map(|g| rem.global_type(g)).collect();
    let synth = Synth {
        rem,
        target_ty: target_ty.clone(),
        target_import,
        func_index: func_index.clone(),
        globals: globals.clone(),
    };

    // Globals: the shared ones with their folded values, then one counter
    // per dispatched replay function.
    for (g, gt) in globals.iter().enumerate() {
        let v = image
            .globals
            .get(g)
            .copied()
            .unwrap_or(TraceValue::default_for(gt.ty));
        synth.check(&[v], &[gt.ty], &format!("initial value of global {g}"))?;
        module.globals.push(GlobalDef {
            ty: *gt,
            init: ConstExpr::from_instrs(&[synth.const_instr(&v)]),
        });
    }

    let mut functions = Vec::new();
    let mut provenance = BTreeMap::new();
    for (f, kind) in &order {
        let ty = synth.input_type(w, *f);
        let type_index = module.intern_type(ty.clone());
        let eps = episodes.get(f).map(Vec::as_slice).unwrap_or(&[]);
        let code = match kind {
            Provenance::Emptied => {
                let mut c = Vec::new();
                synth.default_results(&ty.results, &mut c);
                c.push(Instr::End);
                c
            }
            _ if eps.is_empty() => vec![Instr::Unreachable, Instr::End],
            _ if eps.len() == 1
                && matches!(eps[0], Episode::Driver(_))
                && !callable_from_target.contains(f) =>
            {
                let mut c = Vec::new();
                synth.episode_code(&eps[0], &ty.results, &mut c)?;
                c.push(Instr::End);
                c
            }
            _ => {
                let counter = module.globals.len() as u32;
                module.globals.push(GlobalDef {
                    ty: GlobalType {
                        ty: ValType::I32,
                        mutable: true,
                    },
                    init: ConstExpr::i32_const(0),
                });
                synth.dispatch_code(eps, &ty.results, counter)?
            }
        };
        module.functions.push(FunctionDef {
            type_index,
            locals: Vec::new(),
            code: wasm::instr::encode_all(&code),
        });
        functions.push(ReplayFunction {
            index: func_index[f],
            input: Some(*f),
            provenance: *kind,
        });
    }

    // Driver.
    let mut code = Vec::new();
    for step in &steps {
        match step {
            DriverStep::Call(func) => {
                let ty = synth.input_type(w, *func);
                synth.default_results(&ty.params, &mut code);
                code.push(Instr::Call(func_index[func]));
                code.extend(ty.results.iter().map(|_| Instr::Drop));
            }
            DriverStep::Inline(evs) => synth.events_code(evs, false, &mut code)?,
        }
    }
    code.push(Instr::End);
    let driver_ty = module.intern_type(FuncType::default());
    module.functions.push(FunctionDef {
        type_index: driver_ty,
        locals: Vec::new(),
        code: wasm::instr::encode_all(&code),
    });
    functions.push(ReplayFunction {
        index: driver_index,
        input: None,
        provenance: Provenance::Driver,
    });

    // Memory and tables, initialized from the folded image.
    if let Some(pages) = image.pages {
        let max = rem.memory_limits(0).and_then(|l| l.max);
        module.memories.push(Limits { min: pages, max });
        for (off, bytes) in nonzero_runs(&image.memory, DATA_GAP) {
            module.data_segments.push(DataSegment {
                mode: DataMode::Active {
                    memory: 0,
                    offset: ConstExpr::i32_const(off as i32),
                },
                bytes,
            });
        }
    }
    for (i, tbl) in image.tables.iter().enumerate() {
        let orig = rem.table_type(i as u32).expect("table of the remaining side");
        module.tables.push(TableType {
            elem: orig.elem,
            limits: Limits {
                min: tbl.len() as u32,
                max: orig.limits.max,
            },
        });
        if orig.elem != ValType::FuncRef {
            continue;
        }
        let mut slot = 0;
        while slot < tbl.len() {
            let instr = synth.ref_instr(&tbl[slot]);
            let Instr::RefFunc(_) = instr else {
                slot += 1;
                continue;
            };
            let start = slot;
            let mut items = Vec::new();
            while let Some(Instr::RefFunc(f)) = tbl.get(slot).map(|t| synth.ref_instr(t)) {
                items.push(f);
                slot += 1;
            }
            module.elem_segments.push(ElemSegment {
                mode: ElemMode::Active {
                    table: i as u32,
                    offset: ConstExpr::i32_const(start as i32),
                },
                ty: ValType::FuncRef,
                items: ElemItems::Functions(items),
            });
        }
    }

    // Exports: what the target imports, the shared state, and the entry.
    for f in &w.target_imports {
        let name = w.remaining_exports[f].clone();
        provenance.insert(name.clone(), Provenance::Replayed);
        module.exports.push(Export {
            name,
            kind: ExternKind::Func,
            index: func_index[f],
        });
    }
    for r in &w.shared_resources {
        module.exports.push(Export {
            name: r.export_name.clone(),
            kind: r.kind,
            index: r.index,
        });
    }
    provenance.insert(t.meta.entry.clone(), Provenance::Driver);
    module.exports.push(Export {
        name: t.meta.entry.clone(),
        kind: ExternKind::Func,
        index: driver_index,
    });
    wasm::ensure_ref_func_declarations(&mut module)?;
    Ok(ReplayModule {
        module,
        functions,
        provenance,
    })
}
