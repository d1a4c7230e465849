use crate::wasm::instr::decode_all;
use crate::wasm::{BlockType, FuncType, FunctionDef, Instr, ValType, WasmError};

/// Control metadata for a `block`/`loop`/`if` instruction.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Ctl {
    pub end: u32,
    /// Position of the matching `else`, or `end` when there is none.
    pub else_: u32,
    pub params: u32,
    pub results: u32,
}

/// A decoded function body ready for interpretation.
#[derive(Debug)]
pub struct Code {
    pub(crate) instrs: Vec<Instr>,
    pub(crate) ctl: Vec<Ctl>,
    pub(crate) locals: Vec<ValType>,
    pub(crate) num_params: usize,
}

fn arity(bt: &BlockType, types: &[FuncType]) -> Result<(u32, u32), WasmError> {
    Ok(match bt {
        BlockType::Empty => (0, 0),
        BlockType::Value(_) => (0, 1),
        BlockType::Type(t) => {
            let ty = types.get(*t as usize).ok_or(WasmError::IndexOutOfRange {
                space: crate::wasm::IndexSpace::Type,
                index: *t,
            })?;
            (ty.params.len() as u32, ty.results.len() as u32)
        }
    })
}

impl Code {
    pub(crate) fn compile(f: &FunctionDef, ty: &FuncType, types: &[FuncType]) -> Result<Code, WasmError> {
        let instrs: Vec<Instr> = decode_all(&f.code)?.into_iter().map(|(i, _)| i).collect();
        let mut ctl = vec![Ctl::default(); instrs.len()];
        let mut open: Vec<usize> = Vec::new();
        let malformed = |reason: &str| WasmError::MalformedBinary {
            offset: 0,
            reason: reason.to_string(),
        };
        for (pc, i) in instrs.iter().enumerate() {
            match i {
                Instr::Block(bt) | Instr::Loop(bt) | Instr::If(bt) => {
                    let (p, r) = arity(bt, types)?;
                    ctl[pc].params = p;
                    ctl[pc].results = r;
                    open.push(pc);
                }
                Instr::Else => {
                    let o = *open.last().ok_or_else(|| malformed("else outside if"))?;
                    ctl[o].else_ = pc as u32;
                }
                Instr::End => {
                    if let Some(o) = open.pop() {
                        ctl[o].end = pc as u32;
                        if !matches!(instrs[o], Instr::If(_)) || ctl[o].else_ == 0 {
                            ctl[o].else_ = pc as u32;
                        } else {
                            // Leaving the then-arm at `else` jumps to this `end`.
                            let e = ctl[o].else_ as usize;
                            ctl[e].end = pc as u32;
                        }
                    }
                }
                _ => {}
            }
        }
        if !open.is_empty() {
            return Err(malformed("unterminated block"));
        }
        let mut locals: Vec<ValType> = ty.params.clone();
        for (n, t) in &f.locals {
            locals.extend(std::iter::repeat(*t).take(*n as usize));
        }
        Ok(Code {
            instrs,
            ctl,
            locals,
            num_params: ty.params.len(),
        })
    }
}
