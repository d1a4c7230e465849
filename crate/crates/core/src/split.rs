//! Splitting a program into a target-side module holding one function and a
//! remaining-side module holding everything else, wired by imports and
//! exports.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::exec::HostEnv;
use crate::wasm::{
    self, instr::decode_all, DataMode, DataSegment, ElemItems, ElemMode, ElemSegment, Export,
    ExternKind, FunctionIndex, Import, ImportKind, IndexMap, IndexSpace, Instr, WasmError,
    WasmModule,
};

/// Module name under which the target side imports from the remaining side.
pub const REMAINING_MODULE: &str = "rem";
/// Module name under which the remaining side imports the target.
pub const TARGET_MODULE: &str = "target";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("function {0} is not a defined function of the module")]
    InvalidTarget(u32),
    #[error("modules with more than one memory are not supported")]
    MultiMemory,
    #[error(transparent)]
    Wasm(#[from] WasmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SharedResource {
    pub kind: ExternKind,
    pub index: u32,
    pub export_name: String,
}

/// How the two halves of a split refer to each other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundaryMap {
    pub target_index: FunctionIndex,
    pub target_export_name: String,
    /// Export name on the remaining side for every input function other
    /// than the target.
    pub remaining_exports: BTreeMap<u32, String>,
    pub shared_resources: Vec<SharedResource>,
    pub original_host_imports: Vec<ImportDesc>,
    /// Export names of the input module.
    pub original_exports: Vec<String>,
    /// Input function indices the target side imports, in import order.
    pub target_imports: Vec<u32>,
    /// Input index to remaining-side index.
    pub remaining_map: IndexMap,
    /// Input index to target-side index (partial).
    pub target_map: IndexMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImportDesc {
    pub module: String,
    pub name: String,
    pub kind: ExternKind,
}

impl BoundaryMap {
    pub fn remaining_export(&self, f: u32) -> Option<&str> {
        self.remaining_exports.get(&f).map(String::as_str)
    }

    /// Input index of a function exported by the remaining side.
    pub fn function_for_export(&self, name: &str) -> Option<u32> {
        self.remaining_exports
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(f, _)| *f)
    }

    pub fn shared(&self, kind: ExternKind, index: u32) -> Option<&str> {
        self.shared_resources
            .iter()
            .find(|r| r.kind == kind && r.index == index)
            .map(|r| r.export_name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionedProgram {
    pub target_module: WasmModule,
    pub remaining_module: WasmModule,
    pub wiring: BoundaryMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Target,
    Remaining,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Diagnostic {
    Invalid {
        side: Side,
        message: String,
    },
    UnresolvedImport {
        side: Side,
        module: String,
        name: String,
    },
    TypeMismatch {
        side: Side,
        module: String,
        name: String,
        expected: String,
        found: String,
    },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::Invalid { side, message } => write!(f, "{side:?} side invalid: {message}"),
            Diagnostic::UnresolvedImport { side, module, name } => {
                write!(f, "{side:?} side import {module}.{name} is unresolved")
            }
            Diagnostic::TypeMismatch {
                side,
                module,
                name,
                expected,
                found,
            } => write!(
                f,
                "{side:?} side import {module}.{name} expects {expected} but the export is {found}"
            ),
        }
    }
}

fn unique_name(base: String, taken: &mut BTreeSet<String>) -> String {
    let mut name = base;
    while taken.contains(&name) {
        name.push('_');
    }
    taken.insert(name.clone());
    name
}

/// Function indices named by `call` or `ref.func` in a body.
fn referenced_by_body(code: &[u8]) -> wasm::Result<BTreeSet<u32>> {
    let mut out = BTreeSet::new();
    for (i, _) in decode_all(code)? {
        if let Instr::Call(f) | Instr::RefFunc(f) = i {
            out.insert(f);
        }
    }
    Ok(out)
}

fn body_uses_segments(code: &[u8]) -> wasm::Result<bool> {
    Ok(decode_all(code)?.iter().any(|(i, _)| {
        matches!(
            i,
            Instr::TableInit { .. } | Instr::ElemDrop(_) | Instr::MemoryInit { .. } | Instr::DataDrop(_)
        )
    }))
}

/// Split `m` into a module with only function `t` and one with the rest.
pub fn split(m: &WasmModule, t: FunctionIndex) -> Result<PartitionedProgram, SplitError> {
    if !m.is_defined_func(t) {
        return Err(SplitError::InvalidTarget(t.0));
    }
    if m.num_memories() > 1 {
        return Err(SplitError::MultiMemory);
    }
    let t = t.0;
    let n_imp = m.num_imported_funcs();
    let target_ty = m.func_type_index(t).expect("defined function has a type");
    let target_def = m.defined_func(FunctionIndex(t))?.clone();

    // Remaining side: the input minus `t`, with `t` imported as the last
    // function import so that no other index moves more than one slot.
    let mut rem_map = IndexMap::default();
    for f in 0..m.num_funcs() {
        let new = match f {
            f if f < n_imp => f,
            f if f == t => n_imp,
            f if f < t => f + 1,
            f => f,
        };
        rem_map.set(IndexSpace::Func, f, new);
    }
    let mut rem = m.clone();
    rem.custom_sections.clear();
    rem.functions.remove((t - n_imp) as usize);
    wasm::remap_module(&mut rem, &rem_map)?;

    let mut rem_taken: BTreeSet<String> = m.exports.iter().map(|e| e.name.clone()).collect();
    let target_export_name = format!("t{t}");
    rem.imports.push(Import {
        module: TARGET_MODULE.into(),
        name: target_export_name.clone(),
        kind: ImportKind::Func(target_ty),
    });

    let mut remaining_exports = BTreeMap::new();
    for f in 0..m.num_funcs() {
        if f == t {
            continue;
        }
        let name = unique_name(format!("f{f}"), &mut rem_taken);
        rem.exports.push(Export {
            name: name.clone(),
            kind: ExternKind::Func,
            index: rem_map.get(IndexSpace::Func, f)?,
        });
        remaining_exports.insert(f, name);
    }
    let mut shared_resources = Vec::new();
    let mut share = |kind: ExternKind, index: u32, base: String, rem: &mut WasmModule| {
        let name = unique_name(base, &mut rem_taken);
        rem.exports.push(Export {
            name: name.clone(),
            kind,
            index,
        });
        shared_resources.push(SharedResource {
            kind,
            index,
            export_name: name,
        });
    };
    if m.num_memories() == 1 {
        share(ExternKind::Memory, 0, "memory".into(), &mut rem);
    }
    for g in 0..m.num_globals() {
        share(ExternKind::Global, g, format!("g{g}"), &mut rem);
    }
    for i in 0..m.num_tables() {
        share(ExternKind::Table, i, format!("tab{i}"), &mut rem);
    }
    wasm::ensure_ref_func_declarations(&mut rem)?;

    // Target side: shared resources imported in input order so their
    // indices are unchanged, then the referenced functions.
    let mut tgt = WasmModule {
        types: m.types.clone(),
        ..WasmModule::default()
    };
    let uses_segments = body_uses_segments(&target_def.code)?;
    let mut needed = referenced_by_body(&target_def.code)?;
    if uses_segments {
        for seg in &m.elem_segments {
            if seg.mode == ElemMode::Passive {
                let mut tmp = WasmModule::default();
                tmp.elem_segments.push(seg.clone());
                needed.extend(tmp.referenced_functions()?);
            }
        }
    }
    needed.remove(&t);
    if let Some(l) = m.memory_limits(0) {
        tgt.imports.push(Import {
            module: REMAINING_MODULE.into(),
            name: shared_resources[0].export_name.clone(),
            kind: ImportKind::Memory(l),
        });
    }
    for r in &shared_resources {
        let kind = match r.kind {
            ExternKind::Global => ImportKind::Global(m.global_type(r.index).unwrap()),
            ExternKind::Table => ImportKind::Table(m.table_type(r.index).unwrap()),
            _ => continue,
        };
        tgt.imports.push(Import {
            module: REMAINING_MODULE.into(),
            name: r.export_name.clone(),
            kind,
        });
    }
    let mut tgt_map = IndexMap::default();
    let target_imports: Vec<u32> = needed.into_iter().collect();
    for (k, f) in target_imports.iter().enumerate() {
        tgt.imports.push(Import {
            module: REMAINING_MODULE.into(),
            name: remaining_exports[f].clone(),
            kind: ImportKind::Func(m.func_type_index(*f).unwrap()),
        });
        tgt_map.set(IndexSpace::Func, *f, k as u32);
    }
    let t_local = target_imports.len() as u32;
    tgt_map.set(IndexSpace::Func, t, t_local);
    tgt.functions.push(wasm::FunctionDef {
        type_index: target_ty,
        locals: target_def.locals.clone(),
        code: wasm::remap_function_body(&target_def.code, &tgt_map)?,
    });
    if uses_segments {
        // Same segment indices as the input. Active and declared segments
        // are already dropped once instantiation finishes, so an empty
        // passive segment behaves the same for the target.
        for seg in &m.elem_segments {
            let items = match (&seg.mode, &seg.items) {
                (ElemMode::Passive, ElemItems::Functions(fs)) => ElemItems::Functions(
                    fs.iter()
                        .map(|f| tgt_map.get(IndexSpace::Func, *f))
                        .collect::<wasm::Result<_>>()?,
                ),
                (ElemMode::Passive, ElemItems::Exprs(es)) => ElemItems::Exprs(
                    es.iter()
                        .map(|e| wasm::remap_const_expr(e, &tgt_map))
                        .collect::<wasm::Result<_>>()?,
                ),
                (_, ElemItems::Functions(_)) => ElemItems::Functions(Vec::new()),
                (_, ElemItems::Exprs(_)) => ElemItems::Exprs(Vec::new()),
            };
            tgt.elem_segments.push(ElemSegment {
                mode: ElemMode::Passive,
                ty: seg.ty,
                items,
            });
        }
        for seg in &m.data_segments {
            let bytes = match seg.mode {
                DataMode::Passive => seg.bytes.clone(),
                DataMode::Active { .. } => Vec::new(),
            };
            tgt.data_segments.push(DataSegment {
                mode: DataMode::Passive,
                bytes,
            });
        }
    }
    tgt.exports.push(Export {
        name: target_export_name.clone(),
        kind: ExternKind::Func,
        index: t_local,
    });
    wasm::ensure_ref_func_declarations(&mut tgt)?;

    let original_host_imports = m
        .imports
        .iter()
        .map(|i| ImportDesc {
            module: i.module.clone(),
            name: i.name.clone(),
            kind: i.kind.extern_kind(),
        })
        .collect();
    Ok(PartitionedProgram {
        target_module: tgt,
        remaining_module: rem,
        wiring: BoundaryMap {
            target_index: FunctionIndex(t),
            target_export_name,
            remaining_exports,
            shared_resources,
            original_host_imports,
            original_exports: m.exports.iter().map(|e| e.name.clone()).collect(),
            target_imports,
            remaining_map: rem_map,
            target_map: tgt_map,
        },
    })
}

/// The type an export has, rendered for comparison with an import.
fn export_type(m: &WasmModule, e: &Export) -> String {
    match e.kind {
        ExternKind::Func => m.func_type(e.index).map_or("?".into(), |t| format!("func {t}")),
        ExternKind::Global => m.global_type(e.index).map_or("?".into(), |g| {
            format!("global {}{}", if g.mutable { "mut " } else { "" }, g.ty)
        }),
        ExternKind::Table => m.table_type(e.index).map_or("?".into(), |t| format!("table {}", t.elem)),
        ExternKind::Memory => "memory".into(),
    }
}

fn import_type(m: &WasmModule, i: &Import) -> String {
    match i.kind {
        ImportKind::Func(t) => m.types.get(t as usize).map_or("?".into(), |t| format!("func {t}")),
        ImportKind::Global(g) => format!("global {}{}", if g.mutable { "mut " } else { "" }, g.ty),
        ImportKind::Table(t) => format!("table {}", t.elem),
        ImportKind::Memory(_) => "memory".into(),
    }
}

fn check_imports(
    side: Side,
    importer: &WasmModule,
    exporter: &WasmModule,
    module: &str,
    out: &mut Vec<Diagnostic>,
) {
    for imp in &importer.imports {
        if imp.module != module {
            if !HostEnv::provides(&imp.module, &imp.name) {
                out.push(Diagnostic::UnresolvedImport {
                    side,
                    module: imp.module.clone(),
                    name: imp.name.clone(),
                });
            }
            continue;
        }
        let Some(e) = exporter.export(&imp.name) else {
            out.push(Diagnostic::UnresolvedImport {
                side,
                module: imp.module.clone(),
                name: imp.name.clone(),
            });
            continue;
        };
        let (want, have) = (import_type(importer, imp), export_type(exporter, e));
        if want != have {
            out.push(Diagnostic::TypeMismatch {
                side,
                module: imp.module.clone(),
                name: imp.name.clone(),
                expected: want,
                found: have,
            });
        }
    }
}

/// Problems that would keep the two halves from linking. Empty means both
/// halves validate and every cross import has a matching export.
pub fn validate_partition(p: &PartitionedProgram) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for (side, m) in [(Side::Target, &p.target_module), (Side::Remaining, &p.remaining_module)] {
        if let Err(message) = wasm::validate_module(&wasm::encode_module(m)) {
            out.push(Diagnostic::Invalid { side, message });
        }
    }
    check_imports(Side::Target, &p.target_module, &p.remaining_module, REMAINING_MODULE, &mut out);
    check_imports(Side::Remaining, &p.remaining_module, &p.target_module, TARGET_MODULE, &mut out);
    out
}

/// Write both halves and a JSON wiring manifest into `dir`.
pub fn dump_partition(p: &PartitionedProgram, dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("target.wasm"), wasm::encode_module(&p.target_module))?;
    std::fs::write(dir.join("remaining.wasm"), wasm::encode_module(&p.remaining_module))?;
    let json = serde_json::to_string_pretty(&p.wiring).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("wiring.json"), json)
}
