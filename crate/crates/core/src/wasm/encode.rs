use super::*;

pub(crate) fn write_uleb(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let b = (v & 0x7F) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

pub(crate) fn write_sleb(out: &mut Vec<u8>, mut v: i64) {
    loop {
        let b = (v & 0x7F) as u8;
        v >>= 7;
        let done = (v == 0 && b & 0x40 == 0) || (v == -1 && b & 0x40 != 0);
        if done {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

fn write_u32(out: &mut Vec<u8>, v: u32) {
    write_uleb(out, v as u64)
}

fn write_name(out: &mut Vec<u8>, s: &str) {
    write_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn write_limits(out: &mut Vec<u8>, l: &Limits) {
    match l.max {
        None => {
            out.push(0);
            write_u32(out, l.min);
        }
        Some(max) => {
            out.push(1);
            write_u32(out, l.min);
            write_u32(out, max);
        }
    }
}

fn write_table_type(out: &mut Vec<u8>, t: &TableType) {
    out.push(t.elem.byte());
    write_limits(out, &t.limits);
}

fn write_global_type(out: &mut Vec<u8>, g: &GlobalType) {
    out.push(g.ty.byte());
    out.push(g.mutable as u8);
}

/// Encoded locals declaration followed by the instruction bytes, i.e. a
/// function body without its size prefix.
pub(crate) fn encode_body(f: &FunctionDef) -> Vec<u8> {
    let mut out = Vec::with_capacity(f.code.len() + 8);
    write_u32(&mut out, f.locals.len() as u32);
    for (n, t) in &f.locals {
        write_u32(&mut out, *n);
        out.push(t.byte());
    }
    out.extend_from_slice(&f.code);
    out
}

fn section(out: &mut Vec<u8>, id: u8, payload: &[u8]) {
    out.push(id);
    write_u32(out, payload.len() as u32);
    out.extend_from_slice(payload);
}

fn vec_section<T>(out: &mut Vec<u8>, id: u8, items: &[T], mut f: impl FnMut(&mut Vec<u8>, &T)) {
    if items.is_empty() {
        return;
    }
    let mut p = Vec::new();
    write_u32(&mut p, items.len() as u32);
    for i in items {
        f(&mut p, i);
    }
    section(out, id, &p);
}

/// Append a constant expression (already including its `end`).
pub fn write_const_expr_bytes(out: &mut Vec<u8>, e: &ConstExpr) {
    out.extend_from_slice(&e.0);
}

fn write_elem(out: &mut Vec<u8>, e: &ElemSegment) {
    let exprs = matches!(e.items, ElemItems::Exprs(_));
    match &e.mode {
        ElemMode::Active { table, offset } => {
            let plain = *table == 0 && e.ty == ValType::FuncRef;
            let flag = match (exprs, plain) {
                (false, true) => 0,
                (false, false) => 2,
                (true, true) => 4,
                (true, false) => 6,
            };
            write_u32(out, flag);
            if !plain {
                write_u32(out, *table);
            }
            write_const_expr_bytes(out, offset);
            if !plain {
                if exprs {
                    out.push(e.ty.byte());
                } else {
                    out.push(0x00);
                }
            }
        }
        ElemMode::Passive | ElemMode::Declared => {
            let declared = matches!(e.mode, ElemMode::Declared);
            let flag = match (exprs, declared) {
                (false, false) => 1,
                (false, true) => 3,
                (true, false) => 5,
                (true, true) => 7,
            };
            write_u32(out, flag);
            if exprs {
                out.push(e.ty.byte());
            } else {
                out.push(0x00);
            }
        }
    }
    match &e.items {
        ElemItems::Functions(fs) => {
            write_u32(out, fs.len() as u32);
            for f in fs {
                write_u32(out, *f);
            }
        }
        ElemItems::Exprs(es) => {
            write_u32(out, es.len() as u32);
            for x in es {
                write_const_expr_bytes(out, x);
            }
        }
    }
}

fn write_data(out: &mut Vec<u8>, d: &DataSegment) {
    match &d.mode {
        DataMode::Active { memory: 0, offset } => {
            write_u32(out, 0);
            write_const_expr_bytes(out, offset);
        }
        DataMode::Active { memory, offset } => {
            write_u32(out, 2);
            write_u32(out, *memory);
            write_const_expr_bytes(out, offset);
        }
        DataMode::Passive => write_u32(out, 1),
    }
    write_u32(out, d.bytes.len() as u32);
    out.extend_from_slice(&d.bytes);
}

/// Encode a module to the binary format. Sections are emitted in canonical
/// order; empty sections are omitted. Custom sections go at the end.
pub fn encode_module(m: &WasmModule) -> Vec<u8> {
    let mut out = b"\0asm".to_vec();
    out.extend_from_slice(&[1, 0, 0, 0]);

    vec_section(&mut out, 1, &m.types, |p, t| {
        p.push(0x60);
        write_u32(p, t.params.len() as u32);
        p.extend(t.params.iter().map(|v| v.byte()));
        write_u32(p, t.results.len() as u32);
        p.extend(t.results.iter().map(|v| v.byte()));
    });
    vec_section(&mut out, 2, &m.imports, |p, i| {
        write_name(p, &i.module);
        write_name(p, &i.name);
        match &i.kind {
            ImportKind::Func(t) => {
                p.push(0);
                write_u32(p, *t);
            }
            ImportKind::Table(t) => {
                p.push(1);
                write_table_type(p, t);
            }
            ImportKind::Memory(l) => {
                p.push(2);
                write_limits(p, l);
            }
            ImportKind::Global(g) => {
                p.push(3);
                write_global_type(p, g);
            }
        }
    });
    vec_section(&mut out, 3, &m.functions, |p, f| write_u32(p, f.type_index));
    vec_section(&mut out, 4, &m.tables, write_table_type);
    vec_section(&mut out, 5, &m.memories, write_limits);
    vec_section(&mut out, 6, &m.globals, |p, g| {
        write_global_type(p, &g.ty);
        write_const_expr_bytes(p, &g.init);
    });
    vec_section(&mut out, 7, &m.exports, |p, e| {
        write_name(p, &e.name);
        p.push(e.kind.byte());
        write_u32(p, e.index);
    });
    if let Some(s) = m.start {
        let mut p = Vec::new();
        write_u32(&mut p, s);
        section(&mut out, 8, &p);
    }
    vec_section(&mut out, 9, &m.elem_segments, write_elem);
    if !m.data_segments.is_empty() {
        let mut p = Vec::new();
        write_u32(&mut p, m.data_segments.len() as u32);
        section(&mut out, 12, &p);
    }
    vec_section(&mut out, 10, &m.functions, |p, f| {
        let body = encode_body(f);
        write_u32(p, body.len() as u32);
        p.extend_from_slice(&body);
    });
    vec_section(&mut out, 11, &m.data_segments, write_data);
    for (name, bytes) in &m.custom_sections {
        let mut p = Vec::new();
        write_name(&mut p, name);
        p.extend_from_slice(bytes);
        section(&mut out, 0, &p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wasm::reader::Reader;

    #[test]
    fn leb_roundtrip_edges() {
        for v in [0u64, 1, 127, 128, 624485, u32::MAX as u64] {
            let mut b = Vec::new();
            write_uleb(&mut b, v);
            assert_eq!(Reader::new(&b).u64().unwrap(), v);
        }
        for v in [0i64, -1, 63, 64, -64, -65, i32::MIN as i64, i64::MIN, i64::MAX] {
            let mut b = Vec::new();
            write_sleb(&mut b, v);
            assert_eq!(Reader::new(&b).s64().unwrap(), v, "{v}");
        }
    }

    #[test]
    fn empty_module_is_header_only() {
        let b = encode_module(&WasmModule::default());
        assert_eq!(b, b"\0asm\x01\0\0\0");
    }
}
