use super::instr::decode_all;
use super::reader::Reader;
use super::*;

const MAGIC: &[u8; 4] = b"\0asm";
const VERSION: [u8; 4] = [1, 0, 0, 0];

/// Parse a binary module. Only the Wasm 2.0 feature set without SIMD is
/// accepted; anything beyond it is reported as `UnsupportedFeature`.
pub fn parse_module(bytes: &[u8]) -> Result<WasmModule> {
    let mut r = Reader::new(bytes);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return r.err("missing wasm magic");
    }
    if bytes[4..8] != VERSION {
        return Err(WasmError::MalformedBinary {
            offset: 4,
            reason: "unsupported binary version".into(),
        });
    }
    r.bytes(8)?;

    let mut m = WasmModule::default();
    let mut func_types: Vec<u32> = Vec::new();
    let mut data_count: Option<u32> = None;
    let mut saw_code = false;
    let mut last_id = 0u8;

    while !r.is_empty() {
        let id = r.byte()?;
        let size = r.u32()? as usize;
        let start = r.offset();
        let payload = r.bytes(size)?;
        let mut s = Reader::with_base(payload, start);

        if id != 0 {
            // Section order: 1..=11 with datacount (12) between elem and code.
            let rank = |id: u8| match id {
                12 => 10,
                10 => 11,
                11 => 12,
                x => x,
            };
            if last_id != 0 && rank(id) <= rank(last_id) {
                return s.err(format!("section {id} out of order"));
            }
            last_id = id;
        }

        match id {
            0 => {
                let name = s.name()?;
                m.custom_sections.push((name, s.remaining().to_vec()));
                continue;
            }
            1 => {
                for _ in 0..s.u32()? {
                    let form = s.byte()?;
                    if form != 0x60 {
                        return match form {
                            0x5E | 0x5F | 0x4E | 0x4F | 0x50 => Err(WasmError::UnsupportedFeature("gc".into())),
                            _ => s.err(format!("invalid function type form {form:#x}")),
                        };
                    }
                    let mut params = Vec::new();
                    for _ in 0..s.u32()? {
                        params.push(s.val_type()?);
                    }
                    let mut results = Vec::new();
                    for _ in 0..s.u32()? {
                        results.push(s.val_type()?);
                    }
                    m.types.push(FuncType { params, results });
                }
            }
            2 => {
                for _ in 0..s.u32()? {
                    let module = s.name()?;
                    let name = s.name()?;
                    let kind = match s.byte()? {
                        0 => ImportKind::Func(s.u32()?),
                        1 => ImportKind::Table(table_type(&mut s)?),
                        2 => ImportKind::Memory(memory_type(&mut s)?),
                        3 => ImportKind::Global(global_type(&mut s)?),
                        4 => return Err(WasmError::UnsupportedFeature("exception handling".into())),
                        k => return s.err(format!("invalid import kind {k}")),
                    };
                    m.imports.push(Import { module, name, kind });
                }
            }
            3 => {
                for _ in 0..s.u32()? {
                    func_types.push(s.u32()?);
                }
            }
            4 => {
                for _ in 0..s.u32()? {
                    m.tables.push(table_type(&mut s)?);
                }
            }
            5 => {
                for _ in 0..s.u32()? {
                    m.memories.push(memory_type(&mut s)?);
                }
            }
            6 => {
                for _ in 0..s.u32()? {
                    let ty = global_type(&mut s)?;
                    let init = const_expr(&mut s)?;
                    m.globals.push(GlobalDef { ty, init });
                }
            }
            7 => {
                for _ in 0..s.u32()? {
                    let name = s.name()?;
                    let kind = match s.byte()? {
                        0 => ExternKind::Func,
                        1 => ExternKind::Table,
                        2 => ExternKind::Memory,
                        3 => ExternKind::Global,
                        4 => return Err(WasmError::UnsupportedFeature("exception handling".into())),
                        k => return s.err(format!("invalid export kind {k}")),
                    };
                    let index = s.u32()?;
                    m.exports.push(Export { name, kind, index });
                }
            }
            8 => m.start = Some(s.u32()?),
            9 => {
                for _ in 0..s.u32()? {
                    m.elem_segments.push(elem_segment(&mut s)?);
                }
            }
            10 => {
                saw_code = true;
                let n = s.u32()? as usize;
                if n != func_types.len() {
                    return s.err("function and code section counts differ");
                }
                for &type_index in func_types.iter() {
                    let size = s.u32()? as usize;
                    let body_start = s.offset();
                    let body = s.bytes(size)?;
                    m.functions.push(function_body(body, body_start, type_index)?);
                }
            }
            11 => {
                let n = s.u32()?;
                if let Some(c) = data_count {
                    if c != n {
                        return s.err("data count mismatch");
                    }
                }
                for _ in 0..n {
                    m.data_segments.push(data_segment(&mut s)?);
                }
            }
            12 => data_count = Some(s.u32()?),
            13 => return Err(WasmError::UnsupportedFeature("exception handling".into())),
            _ => return s.err(format!("unknown section id {id}")),
        }
        if !s.is_empty() {
            return s.err("section size mismatch");
        }
    }

    if !saw_code && !func_types.is_empty() {
        return Err(WasmError::MalformedBinary {
            offset: bytes.len(),
            reason: "function section without code section".into(),
        });
    }
    if m.num_memories() > 1 {
        return Err(WasmError::UnsupportedFeature("multi-memory".into()));
    }
    check_indices(&m)?;
    Ok(m)
}

fn limits(r: &mut Reader) -> Result<Limits> {
    let flag = r.byte()?;
    match flag {
        0 => Ok(Limits { min: r.u32()?, max: None }),
        1 => {
            let min = r.u32()?;
            Ok(Limits { min, max: Some(r.u32()?) })
        }
        2 | 3 => Err(WasmError::UnsupportedFeature("shared memory".into())),
        4..=7 => Err(WasmError::UnsupportedFeature("memory64".into())),
        _ => r.err(format!("invalid limits flag {flag:#x}")),
    }
}

fn memory_type(r: &mut Reader) -> Result<Limits> {
    limits(r)
}

fn table_type(r: &mut Reader) -> Result<TableType> {
    let elem = r.ref_type()?;
    Ok(TableType { elem, limits: limits(r)? })
}

fn global_type(r: &mut Reader) -> Result<GlobalType> {
    let ty = r.val_type()?;
    let mutable = match r.byte()? {
        0 => false,
        1 => true,
        _ => return r.err("invalid mutability"),
    };
    Ok(GlobalType { ty, mutable })
}

/// Read a constant expression through its terminating `end`.
fn const_expr(r: &mut Reader) -> Result<ConstExpr> {
    let start = r.pos();
    let rest = r.remaining();
    let mut sub = Reader::with_base(rest, r.offset());
    loop {
        let i = instr::decode(&mut sub)?;
        if i == Instr::End {
            break;
        }
    }
    let len = sub.pos();
    let bytes = r.bytes(len)?.to_vec();
    debug_assert_eq!(r.pos(), start + len);
    Ok(ConstExpr(bytes))
}

fn elem_kind(r: &mut Reader) -> Result<ValType> {
    match r.byte()? {
        0 => Ok(ValType::FuncRef),
        k => r.err(format!("invalid element kind {k}")),
    }
}

fn func_indices(r: &mut Reader) -> Result<Vec<u32>> {
    let n = r.u32()?;
    let mut v = Vec::with_capacity(n.min(1 << 16) as usize);
    for _ in 0..n {
        v.push(r.u32()?);
    }
    Ok(v)
}

fn exprs(r: &mut Reader) -> Result<Vec<ConstExpr>> {
    let n = r.u32()?;
    let mut v = Vec::with_capacity(n.min(1 << 16) as usize);
    for _ in 0..n {
        v.push(const_expr(r)?);
    }
    Ok(v)
}

fn elem_segment(r: &mut Reader) -> Result<ElemSegment> {
    let flags = r.u32()?;
    let seg = match flags {
        0 => {
            let offset = const_expr(r)?;
            ElemSegment {
                mode: ElemMode::Active { table: 0, offset },
                ty: ValType::FuncRef,
                items: ElemItems::Functions(func_indices(r)?),
            }
        }
        1 | 3 => {
            let ty = elem_kind(r)?;
            ElemSegment {
                mode: if flags == 1 { ElemMode::Passive } else { ElemMode::Declared },
                ty,
                items: ElemItems::Functions(func_indices(r)?),
            }
        }
        2 => {
            let table = r.u32()?;
            let offset = const_expr(r)?;
            let ty = elem_kind(r)?;
            ElemSegment {
                mode: ElemMode::Active { table, offset },
                ty,
                items: ElemItems::Functions(func_indices(r)?),
            }
        }
        4 => {
            let offset = const_expr(r)?;
            ElemSegment {
                mode: ElemMode::Active { table: 0, offset },
                ty: ValType::FuncRef,
                items: ElemItems::Exprs(exprs(r)?),
            }
        }
        5 | 7 => {
            let ty = r.ref_type()?;
            ElemSegment {
                mode: if flags == 5 { ElemMode::Passive } else { ElemMode::Declared },
                ty,
                items: ElemItems::Exprs(exprs(r)?),
            }
        }
        6 => {
            let table = r.u32()?;
            let offset = const_expr(r)?;
            let ty = r.ref_type()?;
            ElemSegment {
                mode: ElemMode::Active { table, offset },
                ty,
                items: ElemItems::Exprs(exprs(r)?),
            }
        }
        _ => return r.err(format!("invalid element segment flags {flags}")),
    };
    Ok(seg)
}

fn data_segment(r: &mut Reader) -> Result<DataSegment> {
    let flags = r.u32()?;
    let mode = match flags {
        0 => DataMode::Active { memory: 0, offset: const_expr(r)? },
        1 => DataMode::Passive,
        2 => {
            let memory = r.u32()?;
            DataMode::Active { memory, offset: const_expr(r)? }
        }
        _ => return r.err(format!("invalid data segment flags {flags}")),
    };
    let len = r.u32()? as usize;
    let bytes = r.bytes(len)?.to_vec();
    Ok(DataSegment { mode, bytes })
}

fn function_body(body: &[u8], base: usize, type_index: u32) -> Result<FunctionDef> {
    let mut r = Reader::with_base(body, base);
    let groups = r.u32()?;
    let mut locals = Vec::new();
    let mut total: u64 = 0;
    for _ in 0..groups {
        let n = r.u32()?;
        total += n as u64;
        if total > 50_000 {
            return r.err("too many locals");
        }
        locals.push((n, r.val_type()?));
    }
    let code = r.remaining().to_vec();
    // Decode once so unsupported opcodes are reported at parse time.
    let instrs = decode_all(&code).map_err(|e| match e {
        WasmError::MalformedBinary { offset, reason } => WasmError::MalformedBinary {
            offset: offset + r.offset(),
            reason,
        },
        other => other,
    })?;
    if instrs.last().map(|(i, _)| i) != Some(&Instr::End) {
        return r.err("function body does not end with `end`");
    }
    Ok(FunctionDef { type_index, locals, code })
}

fn range_err<T>(space: IndexSpace, index: u32) -> Result<T> {
    Err(WasmError::IndexOutOfRange { space, index })
}

/// Lightweight index-range checks over the module structure. Function bodies
/// are checked by full validation, not here.
fn check_indices(m: &WasmModule) -> Result<()> {
    let ntypes = m.types.len() as u32;
    let nfuncs = m.num_funcs();
    for imp in &m.imports {
        if let ImportKind::Func(t) = imp.kind {
            if t >= ntypes {
                return range_err(IndexSpace::Type, t);
            }
        }
    }
    for f in &m.functions {
        if f.type_index >= ntypes {
            return range_err(IndexSpace::Type, f.type_index);
        }
    }
    for e in &m.exports {
        let n = match e.kind {
            ExternKind::Func => nfuncs,
            ExternKind::Table => m.num_tables(),
            ExternKind::Memory => m.num_memories(),
            ExternKind::Global => m.num_globals(),
        };
        if e.index >= n {
            let space = match e.kind {
                ExternKind::Func => IndexSpace::Func,
                ExternKind::Table => IndexSpace::Table,
                ExternKind::Memory => IndexSpace::Memory,
                ExternKind::Global => IndexSpace::Global,
            };
            return range_err(space, e.index);
        }
    }
    if let Some(s) = m.start {
        if s >= nfuncs {
            return range_err(IndexSpace::Func, s);
        }
    }
    for seg in &m.elem_segments {
        if let ElemMode::Active { table, .. } = seg.mode {
            if table >= m.num_tables() {
                return range_err(IndexSpace::Table, table);
            }
        }
        if let ElemItems::Functions(fs) = &seg.items {
            if let Some(&f) = fs.iter().find(|&&f| f >= nfuncs) {
                return range_err(IndexSpace::Func, f);
            }
        }
    }
    for seg in &m.data_segments {
        if let DataMode::Active { memory, .. } = seg.mode {
            if memory >= m.num_memories() {
                return range_err(IndexSpace::Memory, memory);
            }
        }
    }
    Ok(())
}
