//! Static linking of a target-side module with the module that satisfies
//! its imports (a replay module, or the remaining side itself).

use std::collections::BTreeSet;

use thiserror::Error;

use crate::split::{BoundaryMap, REMAINING_MODULE, TARGET_MODULE};
use crate::wasm::{
    self, Export, ExternKind, ImportKind, IndexMap, IndexSpace, WasmError, WasmModule,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MergeError {
    #[error("import {module}.{name} has no matching export")]
    UnresolvedImport { module: String, name: String },
    #[error("import {name} expects {expected} but the export is {found}")]
    TypeMismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Wasm(#[from] WasmError),
}

/// Where each side's indices went in the merged module.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeMaps {
    pub other: IndexMap,
    pub target: IndexMap,
}

pub fn merge(target_side: &WasmModule, other_side: &WasmModule, w: &BoundaryMap) -> Result<WasmModule, MergeError> {
    merge_with_maps(target_side, other_side, w).map(|(m, _)| m)
}

/// Link `target_side` against `other_side`. Items of `other_side` come
/// first in every index space. Imports of `other_side` from the target
/// module become references to the target's function.
pub fn merge_with_maps(
    target_side: &WasmModule,
    other_side: &WasmModule,
    w: &BoundaryMap,
) -> Result<(WasmModule, MergeMaps), MergeError> {
    let o = other_side;
    let t = target_side;
    let mut out = WasmModule {
        types: o.types.iter().chain(&t.types).cloned().collect(),
        ..WasmModule::default()
    };
    let mut om = IndexMap::default();
    let mut tm = IndexMap::default();
    let n_types = o.types.len() as u32;
    for i in 0..t.types.len() as u32 {
        tm.set(IndexSpace::Type, i, n_types + i);
    }

    // Imports of the other side that stay imports.
    let mut kept_funcs = 0u32;
    let mut from_target = Vec::new();
    let mut counters = [0u32; 4];
    let kind_slot = |k: ExternKind| match k {
        ExternKind::Func => 0,
        ExternKind::Table => 1,
        ExternKind::Memory => 2,
        ExternKind::Global => 3,
    };
    for imp in &o.imports {
        let k = imp.kind.extern_kind();
        let idx = counters[kind_slot(k)];
        counters[kind_slot(k)] += 1;
        if imp.module == TARGET_MODULE {
            if k != ExternKind::Func {
                return Err(MergeError::UnresolvedImport {
                    module: imp.module.clone(),
                    name: imp.name.clone(),
                });
            }
            from_target.push((idx, imp.clone()));
            continue;
        }
        if k == ExternKind::Func {
            om.set(IndexSpace::Func, idx, kept_funcs);
            kept_funcs += 1;
        }
        out.imports.push(imp.clone());
    }
    let o_imp_funcs = o.num_imported_funcs();
    for j in 0..o.functions.len() as u32 {
        om.set(IndexSpace::Func, o_imp_funcs + j, kept_funcs + j);
    }
    let t_base = kept_funcs + o.functions.len() as u32;
    let t_imp_funcs = t.num_imported_funcs();
    for j in 0..t.functions.len() as u32 {
        tm.set(IndexSpace::Func, t_imp_funcs + j, t_base + j);
    }
    for (idx, imp) in &from_target {
        let e = t.export(&imp.name).filter(|e| e.kind == ExternKind::Func).ok_or_else(|| {
            MergeError::UnresolvedImport {
                module: imp.module.clone(),
                name: imp.name.clone(),
            }
        })?;
        let ImportKind::Func(ty) = imp.kind else { unreachable!() };
        check_func_type(&imp.name, o.types.get(ty as usize), t.func_type(e.index))?;
        om.set(IndexSpace::Func, *idx, tm.get(IndexSpace::Func, e.index)?);
    }

    // Target side imports resolve to exports of the other side.
    let (o_globals, o_tables, o_mems) = (o.num_globals(), o.num_tables(), o.num_memories());
    let mut tcount = [0u32; 4];
    for imp in &t.imports {
        let k = imp.kind.extern_kind();
        let idx = tcount[kind_slot(k)];
        tcount[kind_slot(k)] += 1;
        let unresolved = || MergeError::UnresolvedImport {
            module: imp.module.clone(),
            name: imp.name.clone(),
        };
        if imp.module != REMAINING_MODULE {
            return Err(unresolved());
        }
        let e = o.export(&imp.name).filter(|e| e.kind == k).ok_or_else(unresolved)?;
        match imp.kind {
            ImportKind::Func(ty) => {
                check_func_type(&imp.name, t.types.get(ty as usize), o.func_type(e.index))?;
                tm.set(IndexSpace::Func, idx, om.get(IndexSpace::Func, e.index)?);
            }
            ImportKind::Global(gt) => {
                let have = o.global_type(e.index);
                if have != Some(gt) {
                    return Err(MergeError::TypeMismatch {
                        name: imp.name.clone(),
                        expected: format!("{gt:?}"),
                        found: format!("{have:?}"),
                    });
                }
                tm.set(IndexSpace::Global, idx, e.index);
            }
            ImportKind::Table(tt) => {
                let have = o.table_type(e.index);
                if have.map(|h| h.elem) != Some(tt.elem) {
                    return Err(MergeError::TypeMismatch {
                        name: imp.name.clone(),
                        expected: format!("{tt:?}"),
                        found: format!("{have:?}"),
                    });
                }
                tm.set(IndexSpace::Table, idx, e.index);
            }
            ImportKind::Memory(_) => tm.set(IndexSpace::Memory, idx, e.index),
        }
    }
    let n_imp = |m: &WasmModule, k| m.num_imported(k);
    for j in 0..t.globals.len() as u32 {
        tm.set(IndexSpace::Global, n_imp(t, ExternKind::Global) + j, o_globals + j);
    }
    for j in 0..t.tables.len() as u32 {
        tm.set(IndexSpace::Table, n_imp(t, ExternKind::Table) + j, o_tables + j);
    }
    for j in 0..t.memories.len() as u32 {
        tm.set(IndexSpace::Memory, n_imp(t, ExternKind::Memory) + j, o_mems + j);
    }
    for j in 0..t.elem_segments.len() as u32 {
        tm.set(IndexSpace::Elem, j, o.elem_segments.len() as u32 + j);
    }
    for j in 0..t.data_segments.len() as u32 {
        tm.set(IndexSpace::Data, j, o.data_segments.len() as u32 + j);
    }

    let mut a = o.clone();
    a.imports.clear();
    wasm::remap_module(&mut a, &om)?;
    let mut b = t.clone();
    b.imports.clear();
    wasm::remap_module(&mut b, &tm)?;

    out.functions = a.functions.into_iter().chain(b.functions).collect();
    out.globals = a.globals.into_iter().chain(b.globals).collect();
    out.tables = a.tables.into_iter().chain(b.tables).collect();
    out.memories = a.memories.into_iter().chain(b.memories).collect();
    out.elem_segments = a.elem_segments.into_iter().chain(b.elem_segments).collect();
    out.data_segments = a.data_segments.into_iter().chain(b.data_segments).collect();
    out.start = a.start;

    let original: BTreeSet<&str> = w.original_exports.iter().map(String::as_str).collect();
    let mut taken = BTreeSet::new();
    for e in a.exports {
        if original.contains(e.name.as_str()) && taken.insert(e.name.clone()) {
            out.exports.push(e);
        }
    }
    if let Some(e) = b.exports.iter().find(|e| e.name == w.target_export_name) {
        if taken.insert(e.name.clone()) {
            out.exports.push(Export {
                name: e.name.clone(),
                kind: e.kind,
                index: e.index,
            });
        }
    }
    wasm::ensure_ref_func_declarations(&mut out)?;
    Ok((out, MergeMaps { other: om, target: tm }))
}

fn check_func_type(
    name: &str,
    want: Option<&wasm::FuncType>,
    have: Option<&wasm::FuncType>,
) -> Result<(), MergeError> {
    if want.is_none() || want != have {
        return Err(MergeError::TypeMismatch {
            name: name.to_string(),
            expected: want.map_or("?".into(), |t| t.to_string()),
            found: have.map_or("?".into(), |t| t.to_string()),
        });
    }
    Ok(())
}
