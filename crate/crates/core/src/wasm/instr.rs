//! Instruction decoding and encoding for the Wasm 2.0 instruction set
//! without SIMD.

use std::ops::Range;

use super::encode::{write_sleb, write_uleb};
use super::reader::Reader;
use super::{Result, ValType, WasmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockType {
    Empty,
    Value(ValType),
    Type(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemArg {
    pub align: u32,
    pub offset: u32,
}

macro_rules! opcodes {
    ($(#[$m:meta])* $name:ident { $($code:literal => $variant:ident,)* }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant,)*
        }

        impl $name {
            pub fn from_code(code: u32) -> Option<Self> {
                match code {
                    $($code => Some($name::$variant),)*
                    _ => None,
                }
            }

            pub fn code(self) -> u32 {
                match self {
                    $($name::$variant => $code,)*
                }
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant),)*
                }
            }
        }
    };
}

opcodes!(
    LoadOp {
        0x28 => I32Load,
        0x29 => I64Load,
        0x2A => F32Load,
        0x2B => F64Load,
        0x2C => I32Load8S,
        0x2D => I32Load8U,
        0x2E => I32Load16S,
        0x2F => I32Load16U,
        0x30 => I64Load8S,
        0x31 => I64Load8U,
        0x32 => I64Load16S,
        0x33 => I64Load16U,
        0x34 => I64Load32S,
        0x35 => I64Load32U,
    }
);

opcodes!(
    StoreOp {
        0x36 => I32Store,
        0x37 => I64Store,
        0x38 => F32Store,
        0x39 => F64Store,
        0x3A => I32Store8,
        0x3B => I32Store16,
        0x3C => I64Store8,
        0x3D => I64Store16,
        0x3E => I64Store32,
    }
);

opcodes!(
    /// Stack-only numeric instructions. Codes above 0xFF are `0xFC` prefixed
    /// with the sub-opcode in the low byte.
    NumOp {
        0x45 => I32Eqz,
        0x46 => I32Eq,
        0x47 => I32Ne,
        0x48 => I32LtS,
        0x49 => I32LtU,
        0x4A => I32GtS,
        0x4B => I32GtU,
        0x4C => I32LeS,
        0x4D => I32LeU,
        0x4E => I32GeS,
        0x4F => I32GeU,
        0x50 => I64Eqz,
        0x51 => I64Eq,
        0x52 => I64Ne,
        0x53 => I64LtS,
        0x54 => I64LtU,
        0x55 => I64GtS,
        0x56 => I64GtU,
        0x57 => I64LeS,
        0x58 => I64LeU,
        0x59 => I64GeS,
        0x5A => I64GeU,
        0x5B => F32Eq,
        0x5C => F32Ne,
        0x5D => F32Lt,
        0x5E => F32Gt,
        0x5F => F32Le,
        0x60 => F32Ge,
        0x61 => F64Eq,
        0x62 => F64Ne,
        0x63 => F64Lt,
        0x64 => F64Gt,
        0x65 => F64Le,
        0x66 => F64Ge,
        0x67 => I32Clz,
        0x68 => I32Ctz,
        0x69 => I32Popcnt,
        0x6A => I32Add,
        0x6B => I32Sub,
        0x6C => I32Mul,
        0x6D => I32DivS,
        0x6E => I32DivU,
        0x6F => I32RemS,
        0x70 => I32RemU,
        0x71 => I32And,
        0x72 => I32Or,
        0x73 => I32Xor,
        0x74 => I32Shl,
        0x75 => I32ShrS,
        0x76 => I32ShrU,
        0x77 => I32Rotl,
        0x78 => I32Rotr,
        0x79 => I64Clz,
        0x7A => I64Ctz,
        0x7B => I64Popcnt,
        0x7C => I64Add,
        0x7D => I64Sub,
        0x7E => I64Mul,
        0x7F => I64DivS,
        0x80 => I64DivU,
        0x81 => I64RemS,
        0x82 => I64RemU,
        0x83 => I64And,
        0x84 => I64Or,
        0x85 => I64Xor,
        0x86 => I64Shl,
        0x87 => I64ShrS,
        0x88 => I64ShrU,
        0x89 => I64Rotl,
        0x8A => I64Rotr,
        0x8B => F32Abs,
        0x8C => F32Neg,
        0x8D => F32Ceil,
        0x8E => F32Floor,
        0x8F => F32Trunc,
        0x90 => F32Nearest,
        0x91 => F32Sqrt,
        0x92 => F32Add,
        0x93 => F32Sub,
        0x94 => F32Mul,
        0x95 => F32Div,
        0x96 => F32Min,
        0x97 => F32Max,
        0x98 => F32Copysign,
        0x99 => F64Abs,
        0x9A => F64Neg,
        0x9B => F64Ceil,
        0x9C => F64Floor,
        0x9D => F64Trunc,
        0x9E => F64Nearest,
        0x9F => F64Sqrt,
        0xA0 => F64Add,
        0xA1 => F64Sub,
        0xA2 => F64Mul,
        0xA3 => F64Div,
        0xA4 => F64Min,
        0xA5 => F64Max,
        0xA6 => F64Copysign,
        0xA7 => I32WrapI64,
        0xA8 => I32TruncF32S,
        0xA9 => I32TruncF32U,
        0xAA => I32TruncF64S,
        0xAB => I32TruncF64U,
        0xAC => I64ExtendI32S,
        0xAD => I64ExtendI32U,
        0xAE => I64TruncF32S,
        0xAF => I64TruncF32U,
        0xB0 => I64TruncF64S,
        0xB1 => I64TruncF64U,
        0xB2 => F32ConvertI32S,
        0xB3 => F32ConvertI32U,
        0xB4 => F32ConvertI64S,
        0xB5 => F32ConvertI64U,
        0xB6 => F32DemoteF64,
        0xB7 => F64ConvertI32S,
        0xB8 => F64ConvertI32U,
        0xB9 => F64ConvertI64S,
        0xBA => F64ConvertI64U,
        0xBB => F64PromoteF32,
        0xBC => I32ReinterpretF32,
        0xBD => I64ReinterpretF64,
        0xBE => F32ReinterpretI32,
        0xBF => F64ReinterpretI64,
        0xC0 => I32Extend8S,
        0xC1 => I32Extend16S,
        0xC2 => I64Extend8S,
        0xC3 => I64Extend16S,
        0xC4 => I64Extend32S,
        0xFC00 => I32TruncSatF32S,
        0xFC01 => I32TruncSatF32U,
        0xFC02 => I32TruncSatF64S,
        0xFC03 => I32TruncSatF64U,
        0xFC04 => I64TruncSatF32S,
        0xFC05 => I64TruncSatF32U,
        0xFC06 => I64TruncSatF64S,
        0xFC07 => I64TruncSatF64U,
    }
);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instr {
    Unreachable,
    Nop,
    Block(BlockType),
    Loop(BlockType),
    If(BlockType),
    Else,
    End,
    Br(u32),
    BrIf(u32),
    BrTable(Vec<u32>, u32),
    Return,
    Call(u32),
    CallIndirect { ty: u32, table: u32 },
    Drop,
    Select,
    SelectT(Vec<ValType>),
    LocalGet(u32),
    LocalSet(u32),
    LocalTee(u32),
    GlobalGet(u32),
    GlobalSet(u32),
    TableGet(u32),
    TableSet(u32),
    Load(LoadOp, MemArg),
    Store(StoreOp, MemArg),
    MemorySize(u32),
    MemoryGrow(u32),
    I32Const(i32),
    I64Const(i64),
    F32Const(u32),
    F64Const(u64),
    Num(NumOp),
    RefNull(ValType),
    RefIsNull,
    RefFunc(u32),
    MemoryInit { data: u32, mem: u32 },
    DataDrop(u32),
    MemoryCopy { dst: u32, src: u32 },
    MemoryFill(u32),
    TableInit { elem: u32, table: u32 },
    ElemDrop(u32),
    TableCopy { dst: u32, src: u32 },
    TableGrow(u32),
    TableSize(u32),
    TableFill(u32),
}

fn unsupported<T>(what: &str) -> Result<T> {
    Err(WasmError::UnsupportedFeature(what.to_string()))
}

fn block_type(r: &mut Reader) -> Result<BlockType> {
    match r.peek() {
        Some(0x40) => {
            r.byte()?;
            Ok(BlockType::Empty)
        }
        Some(0x7B) => unsupported("simd"),
        Some(b) if ValType::from_byte(b).is_some() => {
            r.byte()?;
            Ok(BlockType::Value(ValType::from_byte(b).unwrap()))
        }
        _ => {
            let v = r.s33()?;
            if v < 0 {
                return r.err("invalid block type");
            }
            Ok(BlockType::Type(v as u32))
        }
    }
}

fn mem_arg(r: &mut Reader) -> Result<MemArg> {
    let align = r.u32()?;
    if align & 0x40 != 0 {
        return unsupported("multi-memory");
    }
    let offset = r.u32()?;
    Ok(MemArg { align, offset })
}

fn zero_byte(r: &mut Reader) -> Result<u32> {
    let b = r.byte()?;
    if b != 0 {
        return unsupported("multi-memory");
    }
    Ok(0)
}

/// Decode one instruction.
pub(crate) fn decode(r: &mut Reader) -> Result<Instr> {
    use Instr::*;
    let op = r.byte()?;
    Ok(match op {
        0x00 => Unreachable,
        0x01 => Nop,
        0x02 => Block(block_type(r)?),
        0x03 => Loop(block_type(r)?),
        0x04 => If(block_type(r)?),
        0x05 => Else,
        0x06..=0x0A | 0x18 | 0x19 | 0x1F => return unsupported("exception handling"),
        0x0B => End,
        0x0C => Br(r.u32()?),
        0x0D => BrIf(r.u32()?),
        0x0E => {
            let n = r.u32()?;
            let mut targets = Vec::with_capacity(n.min(1 << 16) as usize);
            for _ in 0..n {
                targets.push(r.u32()?);
            }
            BrTable(targets, r.u32()?)
        }
        0x0F => Return,
        0x10 => Call(r.u32()?),
        0x11 => {
            let ty = r.u32()?;
            let table = r.u32()?;
            CallIndirect { ty, table }
        }
        0x12 | 0x13 => return unsupported("tail calls"),
        0x14 | 0x15 => return unsupported("typed function references"),
        0x1A => Drop,
        0x1B => Select,
        0x1C => {
            let n = r.u32()?;
            let mut tys = Vec::new();
            for _ in 0..n {
                tys.push(r.val_type()?);
            }
            SelectT(tys)
        }
        0x20 => LocalGet(r.u32()?),
        0x21 => LocalSet(r.u32()?),
        0x22 => LocalTee(r.u32()?),
        0x23 => GlobalGet(r.u32()?),
        0x24 => GlobalSet(r.u32()?),
        0x25 => TableGet(r.u32()?),
        0x26 => TableSet(r.u32()?),
        0x28..=0x35 => Load(LoadOp::from_code(op as u32).unwrap(), mem_arg(r)?),
        0x36..=0x3E => Store(StoreOp::from_code(op as u32).unwrap(), mem_arg(r)?),
        0x3F => MemorySize(zero_byte(r)?),
        0x40 => MemoryGrow(zero_byte(r)?),
        0x41 => I32Const(r.s32()?),
        0x42 => I64Const(r.s64()?),
        0x43 => F32Const(r.f32_bits()?),
        0x44 => F64Const(r.f64_bits()?),
        0x45..=0xC4 => Num(NumOp::from_code(op as u32).unwrap()),
        0xD0 => RefNull(r.ref_type()?),
        0xD1 => RefIsNull,
        0xD2 => RefFunc(r.u32()?),
        0xD3..=0xD6 => return unsupported("typed function references"),
        0xFB => return unsupported("gc"),
        0xFC => {
            let sub = r.u32()?;
            match sub {
                0..=7 => Num(NumOp::from_code(0xFC00 | sub).unwrap()),
                8 => {
                    let data = r.u32()?;
                    MemoryInit { data, mem: zero_byte(r)? }
                }
                9 => DataDrop(r.u32()?),
                10 => {
                    let dst = zero_byte(r)?;
                    let src = zero_byte(r)?;
                    MemoryCopy { dst, src }
                }
                11 => MemoryFill(zero_byte(r)?),
                12 => {
                    let elem = r.u32()?;
                    let table = r.u32()?;
                    TableInit { elem, table }
                }
                13 => ElemDrop(r.u32()?),
                14 => {
                    let dst = r.u32()?;
                    let src = r.u32()?;
                    TableCopy { dst, src }
                }
                15 => TableGrow(r.u32()?),
                16 => TableSize(r.u32()?),
                17 => TableFill(r.u32()?),
                _ => return unsupported(&format!("0xfc {sub}")),
            }
        }
        0xFD => return unsupported("simd"),
        0xFE => return unsupported("threads"),
        _ => {
            return Err(WasmError::MalformedBinary {
                offset: r.offset() - 1,
                reason: format!("illegal opcode {op:#x}"),
            })
        }
    })
}

/// Decode a whole instruction sequence, returning each instruction with its
/// byte range in `code`.
pub fn decode_all(code: &[u8]) -> Result<Vec<(Instr, Range<usize>)>> {
    let mut r = Reader::new(code);
    let mut out = Vec::new();
    while !r.is_empty() {
        let start = r.pos();
        let i = decode(&mut r)?;
        out.push((i, start..r.pos()));
    }
    Ok(out)
}

fn encode_block_type(bt: &BlockType, out: &mut Vec<u8>) {
    match bt {
        BlockType::Empty => out.push(0x40),
        BlockType::Value(t) => out.push(t.byte()),
        BlockType::Type(i) => write_sleb(out, *i as i64),
    }
}

fn encode_mem_arg(m: &MemArg, out: &mut Vec<u8>) {
    write_uleb(out, m.align as u64);
    write_uleb(out, m.offset as u64);
}

fn fc(out: &mut Vec<u8>, sub: u32) {
    out.push(0xFC);
    write_uleb(out, sub as u64);
}

impl Instr {
    pub fn encode(&self, out: &mut Vec<u8>) {
        use Instr::*;
        let idx = |out: &mut Vec<u8>, op: u8, i: u32| {
            out.push(op);
            write_uleb(out, i as u64);
        };
        match self {
            Unreachable => out.push(0x00),
            Nop => out.push(0x01),
            Block(bt) => {
                out.push(0x02);
                encode_block_type(bt, out)
            }
            Loop(bt) => {
                out.push(0x03);
                encode_block_type(bt, out)
            }
            If(bt) => {
                out.push(0x04);
                encode_block_type(bt, out)
            }
            Else => out.push(0x05),
            End => out.push(0x0B),
            Br(l) => idx(out, 0x0C, *l),
            BrIf(l) => idx(out, 0x0D, *l),
            BrTable(ts, d) => {
                idx(out, 0x0E, ts.len() as u32);
                for t in ts {
                    write_uleb(out, *t as u64);
                }
                write_uleb(out, *d as u64);
            }
            Return => out.push(0x0F),
            Call(f) => idx(out, 0x10, *f),
            CallIndirect { ty, table } => {
                idx(out, 0x11, *ty);
                write_uleb(out, *table as u64);
            }
            Drop => out.push(0x1A),
            Select => out.push(0x1B),
            SelectT(tys) => {
                idx(out, 0x1C, tys.len() as u32);
                out.extend(tys.iter().map(|t| t.byte()));
            }
            LocalGet(i) => idx(out, 0x20, *i),
            LocalSet(i) => idx(out, 0x21, *i),
            LocalTee(i) => idx(out, 0x22, *i),
            GlobalGet(i) => idx(out, 0x23, *i),
            GlobalSet(i) => idx(out, 0x24, *i),
            TableGet(i) => idx(out, 0x25, *i),
            TableSet(i) => idx(out, 0x26, *i),
            Load(op, m) => {
                out.push(op.code() as u8);
                encode_mem_arg(m, out)
            }
            Store(op, m) => {
                out.push(op.code() as u8);
                encode_mem_arg(m, out)
            }
            MemorySize(m) => idx(out, 0x3F, *m),
            MemoryGrow(m) => idx(out, 0x40, *m),
            I32Const(v) => {
                out.push(0x41);
                write_sleb(out, *v as i64)
            }
            I64Const(v) => {
                out.push(0x42);
                write_sleb(out, *v)
            }
            F32Const(b) => {
                out.push(0x43);
                out.extend_from_slice(&b.to_le_bytes())
            }
            F64Const(b) => {
                out.push(0x44);
                out.extend_from_slice(&b.to_le_bytes())
            }
            Num(op) => {
                let c = op.code();
                if c > 0xFF {
                    fc(out, c & 0xFF)
                } else {
                    out.push(c as u8)
                }
            }
            RefNull(t) => {
                out.push(0xD0);
                out.push(t.byte())
            }
            RefIsNull => out.push(0xD1),
            RefFunc(f) => idx(out, 0xD2, *f),
            MemoryInit { data, mem } => {
                fc(out, 8);
                write_uleb(out, *data as u64);
                write_uleb(out, *mem as u64);
            }
            DataDrop(d) => {
                fc(out, 9);
                write_uleb(out, *d as u64)
            }
            MemoryCopy { dst, src } => {
                fc(out, 10);
                write_uleb(out, *dst as u64);
                write_uleb(out, *src as u64);
            }
            MemoryFill(m) => {
                fc(out, 11);
                write_uleb(out, *m as u64)
            }
            TableInit { elem, table } => {
                fc(out, 12);
                write_uleb(out, *elem as u64);
                write_uleb(out, *table as u64);
            }
            ElemDrop(e) => {
                fc(out, 13);
                write_uleb(out, *e as u64)
            }
            TableCopy { dst, src } => {
                fc(out, 14);
                write_uleb(out, *dst as u64);
                write_uleb(out, *src as u64);
            }
            TableGrow(t) => {
                fc(out, 15);
                write_uleb(out, *t as u64)
            }
            TableSize(t) => {
                fc(out, 16);
                write_uleb(out, *t as u64)
            }
            TableFill(t) => {
                fc(out, 17);
                write_uleb(out, *t as u64)
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.encode(&mut v);
        v
    }
}

/// Encode a sequence of instructions back to back.
pub fn encode_all(instrs: &[Instr]) -> Vec<u8> {
    let mut out = Vec::new();
    for i in instrs {
        i.encode(&mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opcode_tables_are_consistent() {
        for c in 0x45..=0xC4u32 {
            let op = NumOp::from_code(c).expect("dense numeric range");
            assert_eq!(op.code(), c);
        }
        for c in 0x28..=0x35u32 {
            assert_eq!(LoadOp::from_code(c).unwrap().code(), c);
        }
        for c in 0x36..=0x3Eu32 {
            assert_eq!(StoreOp::from_code(c).unwrap().code(), c);
        }
    }

    #[test]
    fn prefixed_ops_roundtrip() {
        let instrs = vec![
            Instr::Num(NumOp::I64TruncSatF64U),
            Instr::MemoryInit { data: 3, mem: 0 },
            Instr::TableCopy { dst: 1, src: 0 },
            Instr::TableFill(2),
            Instr::End,
        ];
        let bytes = encode_all(&instrs);
        let back: Vec<Instr> = decode_all(&bytes).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(back, instrs);
    }

    #[test]
    fn rejects_simd_and_tail_calls() {
        assert_eq!(
            decode_all(&[0xFD, 0x0C]),
            Err(WasmError::UnsupportedFeature("simd".into()))
        );
        assert!(matches!(
            decode_all(&[0x12, 0x00]),
            Err(WasmError::UnsupportedFeature(_))
        ));
    }
}
