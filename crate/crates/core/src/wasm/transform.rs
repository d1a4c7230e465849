use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::encode::encode_body;
use super::instr::decode_all;
use super::*;

pub const COV_MODULE: &str = "rr";
pub const COV_FUNCTION: &str = "cov";

/// Summed size of all defined function bodies: locals declarations plus
/// instruction bytes, without the per-body size prefix.
pub fn code_size(m: &WasmModule) -> usize {
    m.functions.iter().map(|f| encode_body(f).len()).sum()
}

pub fn function_body_size(m: &WasmModule, f: FunctionIndex) -> Result<usize> {
    Ok(encode_body(m.defined_func(f)?).len())
}

/// Rebuild `i` with every index immediate passed through `f`.
fn map_indices(
    i: &Instr,
    f: &mut impl FnMut(IndexSpace, u32) -> Result<u32>,
) -> Result<Instr> {
    use IndexSpace as S;
    use Instr::*;
    let bt = |b: &BlockType, f: &mut dyn FnMut(IndexSpace, u32) -> Result<u32>| -> Result<BlockType> {
        Ok(match b {
            BlockType::Type(t) => BlockType::Type(f(S::Type, *t)?),
            other => *other,
        })
    };
    Ok(match i {
        Block(b) => Block(bt(b, f)?),
        Loop(b) => Loop(bt(b, f)?),
        If(b) => If(bt(b, f)?),
        Call(x) => Call(f(S::Func, *x)?),
        RefFunc(x) => RefFunc(f(S::Func, *x)?),
        CallIndirect { ty, table } => CallIndirect {
            ty: f(S::Type, *ty)?,
            table: f(S::Table, *table)?,
        },
        GlobalGet(g) => GlobalGet(f(S::Global, *g)?),
        GlobalSet(g) => GlobalSet(f(S::Global, *g)?),
        TableGet(t) => TableGet(f(S::Table, *t)?),
        TableSet(t) => TableSet(f(S::Table, *t)?),
        TableGrow(t) => TableGrow(f(S::Table, *t)?),
        TableSize(t) => TableSize(f(S::Table, *t)?),
        TableFill(t) => TableFill(f(S::Table, *t)?),
        TableInit { elem, table } => TableInit {
            elem: f(S::Elem, *elem)?,
            table: f(S::Table, *table)?,
        },
        ElemDrop(e) => ElemDrop(f(S::Elem, *e)?),
        TableCopy { dst, src } => TableCopy {
            dst: f(S::Table, *dst)?,
            src: f(S::Table, *src)?,
        },
        MemoryInit { data, mem } => MemoryInit {
            data: f(S::Data, *data)?,
            mem: f(S::Memory, *mem)?,
        },
        DataDrop(d) => DataDrop(f(S::Data, *d)?),
        MemorySize(m) => MemorySize(f(S::Memory, *m)?),
        MemoryGrow(m) => MemoryGrow(f(S::Memory, *m)?),
        MemoryFill(m) => MemoryFill(f(S::Memory, *m)?),
        MemoryCopy { dst, src } => MemoryCopy {
            dst: f(S::Memory, *dst)?,
            src: f(S::Memory, *src)?,
        },
        other => other.clone(),
    })
}

/// Rewrite the index immediates of an instruction sequence. Instructions
/// whose indices are unchanged keep their original bytes.
pub fn remap_function_body(code: &[u8], map: &IndexMap) -> Result<Vec<u8>> {
    if map.is_trivial() {
        return Ok(code.to_vec());
    }
    let mut out = Vec::with_capacity(code.len());
    for (i, range) in decode_all(code)? {
        let n = map_indices(&i, &mut |s, x| map.get(s, x))?;
        if n == i {
            out.extend_from_slice(&code[range]);
        } else {
            n.encode(&mut out);
        }
    }
    Ok(out)
}

pub fn remap_const_expr(e: &ConstExpr, map: &IndexMap) -> Result<ConstExpr> {
    Ok(ConstExpr(remap_function_body(&e.0, map)?))
}

pub(crate) fn collect_ref_funcs(code: &[u8], out: &mut BTreeSet<u32>) -> Result<()> {
    for (i, _) in decode_all(code)? {
        if let Instr::RefFunc(f) = i {
            out.insert(f);
        }
    }
    Ok(())
}

/// Hash of a body with index immediates renumbered by first occurrence per
/// index space. Two bodies that differ only by a consistent renaming of
/// indices hash equal.
pub fn canonical_body_hash(f: &FunctionDef) -> Result<String> {
    let mut numbering: BTreeMap<(IndexSpace, u32), u32> = BTreeMap::new();
    let mut next: BTreeMap<IndexSpace, u32> = BTreeMap::new();
    let mut canon = |s: IndexSpace, x: u32| -> Result<u32> {
        Ok(*numbering.entry((s, x)).or_insert_with(|| {
            let n = next.entry(s).or_insert(0);
            *n += 1;
            *n - 1
        }))
    };
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    encode::write_uleb(&mut buf, f.locals.len() as u64);
    for (n, t) in &f.locals {
        encode::write_uleb(&mut buf, *n as u64);
        buf.push(t.byte());
    }
    for (i, _) in decode_all(&f.code)? {
        map_indices(&i, &mut canon)?.encode(&mut buf);
    }
    h.update(&buf);
    Ok(hex::encode(h.finalize()))
}

/// Apply `map` to every index reference in the module: bodies, initializers,
/// segment offsets and contents, exports and start.
pub(crate) fn remap_module(m: &mut WasmModule, map: &IndexMap) -> Result<()> {
    for f in &mut m.functions {
        f.code = remap_function_body(&f.code, map)?;
        f.type_index = map.get(IndexSpace::Type, f.type_index)?;
    }
    for imp in &mut m.imports {
        if let ImportKind::Func(t) = &mut imp.kind {
            *t = map.get(IndexSpace::Type, *t)?;
        }
    }
    for g in &mut m.globals {
        g.init = remap_const_expr(&g.init, map)?;
    }
    for e in &mut m.elem_segments {
        if let ElemMode::Active { table, offset } = &mut e.mode {
            *table = map.get(IndexSpace::Table, *table)?;
            *offset = remap_const_expr(offset, map)?;
        }
        match &mut e.items {
            ElemItems::Functions(fs) => {
                for f in fs {
                    *f = map.get(IndexSpace::Func, *f)?;
                }
            }
            ElemItems::Exprs(es) => {
                for x in es {
                    *x = remap_const_expr(x, map)?;
                }
            }
        }
    }
    for d in &mut m.data_segments {
        if let DataMode::Active { memory, offset } = &mut d.mode {
            *memory = map.get(IndexSpace::Memory, *memory)?;
            *offset = remap_const_expr(offset, map)?;
        }
    }
    for e in &mut m.exports {
        let space = match e.kind {
            ExternKind::Func => IndexSpace::Func,
            ExternKind::Table => IndexSpace::Table,
            ExternKind::Memory => IndexSpace::Memory,
            ExternKind::Global => IndexSpace::Global,
        };
        e.index = map.get(space, e.index)?;
    }
    if let Some(s) = &mut m.start {
        *s = map.get(IndexSpace::Func, *s)?;
    }
    Ok(())
}

/// Prepend an `rr.cov: [i32] -> []` import and prefix every defined body
/// with `i32.const <original index>; call $cov`.
pub fn instrument_function_entries(m: &WasmModule) -> Result<WasmModule> {
    let mut out = m.clone();
    let cov_ty = out.intern_type(FuncType::new([ValType::I32], []));
    let n = m.num_funcs();
    let mut map = IndexMap::default();
    for i in 0..n {
        map.set(IndexSpace::Func, i, i + 1);
    }
    remap_module(&mut out, &map)?;
    out.imports.insert(
        0,
        Import {
            module: COV_MODULE.into(),
            name: COV_FUNCTION.into(),
            kind: ImportKind::Func(cov_ty),
        },
    );
    let first = m.num_imported_funcs();
    for (k, f) in out.functions.iter_mut().enumerate() {
        let mut code = Vec::with_capacity(f.code.len() + 8);
        Instr::I32Const((first + k as u32) as i32).encode(&mut code);
        Instr::Call(0).encode(&mut code);
        code.extend_from_slice(&f.code);
        f.code = code;
    }
    Ok(out)
}

/// Copy of `m` without the defined functions that no export, start
/// function, element segment, `ref.func` or chain of calls from those can
/// reach. Imports are kept.
pub fn remove_unreachable_functions(m: &WasmModule) -> Result<WasmModule> {
    let mut live = m.referenced_functions()?;
    live.extend(m.exports.iter().filter(|e| e.kind == ExternKind::Func).map(|e| e.index));
    live.extend(m.start);
    let imported = m.num_imported_funcs();
    let mut work: Vec<u32> = live.iter().copied().collect();
    while let Some(f) = work.pop() {
        if f < imported {
            continue;
        }
        for (i, _) in decode_all(&m.defined_func(FunctionIndex(f))?.code)? {
            if let Instr::Call(g) = i {
                if live.insert(g) {
                    work.push(g);
                }
            }
        }
    }
    let mut map = IndexMap::default();
    let mut next = imported;
    for f in 0..imported {
        map.set(IndexSpace::Func, f, f);
    }
    let mut out = m.clone();
    out.functions.clear();
    for (k, def) in m.functions.iter().enumerate() {
        let f = imported + k as u32;
        if live.contains(&f) {
            map.set(IndexSpace::Func, f, next);
            next += 1;
            out.functions.push(def.clone());
        }
    }
    remap_module(&mut out, &map)?;
    Ok(out)
}

/// Add a declarative element segment for every function that a body takes
/// `ref.func` of without it being declared elsewhere.
pub fn ensure_ref_func_declarations(m: &mut WasmModule) -> Result<()> {
    let mut needed = BTreeSet::new();
    for f in &m.functions {
        collect_ref_funcs(&f.code, &mut needed)?;
    }
    if needed.is_empty() {
        return Ok(());
    }
    let mut declared = BTreeSet::new();
    for g in &m.globals {
        collect_ref_funcs(&g.init.0, &mut declared)?;
    }
    for e in &m.elem_segments {
        match &e.items {
            ElemItems::Functions(fs) => declared.extend(fs.iter().copied()),
            ElemItems::Exprs(es) => {
                for x in es {
                    collect_ref_funcs(&x.0, &mut declared)?;
                }
            }
        }
    }
    declared.extend(
        m.exports
            .iter()
            .filter(|e| e.kind == ExternKind::Func)
            .map(|e| e.index),
    );
    let missing: Vec<u32> = needed.difference(&declared).copied().collect();
    if !missing.is_empty() {
        m.elem_segments.push(ElemSegment {
            mode: ElemMode::Declared,
            ty: ValType::FuncRef,
            items: ElemItems::Functions(missing),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(instrs: &[Instr]) -> Vec<u8> {
        instr::encode_all(instrs)
    }

    #[test]
    fn identity_remap_is_byte_identical() {
        // A padded LEB immediate would be normalized by re-encoding; the
        // identity path must keep it.
        let code = vec![0x10, 0x81, 0x00, 0x0B];
        assert_eq!(remap_function_body(&code, &IndexMap::identity()).unwrap(), code);
        let mut m = IndexMap::default();
        m.set(IndexSpace::Func, 1, 1);
        assert_eq!(remap_function_body(&code, &m).unwrap(), code);
    }

    #[test]
    fn call_is_remapped() {
        let mut map = IndexMap::default();
        map.set(IndexSpace::Func, 1, 0);
        let out = remap_function_body(&body(&[Instr::Call(1), Instr::End]), &map).unwrap();
        assert_eq!(out, body(&[Instr::Call(0), Instr::End]));
    }

    #[test]
    fn unmapped_index_is_reported() {
        let mut map = IndexMap::default();
        map.set(IndexSpace::Func, 0, 0);
        let err = remap_function_body(&body(&[Instr::Call(5), Instr::End]), &map).unwrap_err();
        assert_eq!(
            err,
            WasmError::UnmappedIndex {
                space: IndexSpace::Func,
                index: 5
            }
        );
    }

    #[test]
    fn canonical_hash_ignores_consistent_renaming() {
        let a = FunctionDef {
            type_index: 0,
            locals: vec![(1, ValType::I32)],
            code: body(&[Instr::Call(3), Instr::Call(3), Instr::GlobalGet(2), Instr::Drop, Instr::End]),
        };
        let mut b = a.clone();
        b.code = body(&[Instr::Call(7), Instr::Call(7), Instr::GlobalGet(0), Instr::Drop, Instr::End]);
        let mut c = a.clone();
        c.code = body(&[Instr::Call(7), Instr::Call(8), Instr::GlobalGet(0), Instr::Drop, Instr::End]);
        assert_eq!(canonical_body_hash(&a).unwrap(), canonical_body_hash(&b).unwrap());
        assert_ne!(canonical_body_hash(&a).unwrap(), canonical_body_hash(&c).unwrap());
    }

    #[test]
    fn instrumenting_empty_module_adds_only_the_import() {
        let m = instrument_function_entries(&WasmModule::default()).unwrap();
        assert_eq!(m.imports.len(), 1);
        assert_eq!(m.imports[0].module, COV_MODULE);
        assert!(m.functions.is_empty());
    }
}
