//! In-memory model of a WebAssembly module plus the binary codec and the
//! byte-level transformations the reducer needs (index remapping, size
//! accounting, entry instrumentation).
//!
//! Function bodies are kept as raw instruction bytes. Nothing in the pipeline
//! rewrites instructions semantically, so keeping the input bytes means an
//! untouched function round-trips byte for byte.

mod encode;
pub mod instr;
mod parse;
mod reader;
mod transform;
mod validate;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encode::{encode_module, write_const_expr_bytes};
pub use instr::{BlockType, Instr, LoadOp, MemArg, NumOp, StoreOp};
pub use parse::parse_module;
pub use transform::{
    canonical_body_hash, code_size, ensure_ref_func_declarations, function_body_size,
    instrument_function_entries, remap_const_expr, remove_unreachable_functions, remap_function_body, COV_FUNCTION,
    COV_MODULE,
};
pub use validate::{validate_module, wasm2_features};
pub(crate) use transform::remap_module;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WasmError {
    #[error("malformed binary at offset {offset:#x}: {reason}")]
    MalformedBinary { offset: usize, reason: String },
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("function {0} is imported, not defined")]
    NotDefinedFunction(u32),
    #[error("no mapping for {space} index {index}")]
    UnmappedIndex { space: IndexSpace, index: u32 },
    #[error("{space} index {index} out of range")]
    IndexOutOfRange { space: IndexSpace, index: u32 },
}

pub type Result<T, E = WasmError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexSpace {
    Type,
    Func,
    Table,
    Memory,
    Global,
    Elem,
    Data,
}

impl IndexSpace {
    pub const ALL: [IndexSpace; 7] = [
        IndexSpace::Type,
        IndexSpace::Func,
        IndexSpace::Table,
        IndexSpace::Memory,
        IndexSpace::Global,
        IndexSpace::Elem,
        IndexSpace::Data,
    ];
}

impl std::fmt::Display for IndexSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            IndexSpace::Type => "type",
            IndexSpace::Func => "function",
            IndexSpace::Table => "table",
            IndexSpace::Memory => "memory",
            IndexSpace::Global => "global",
            IndexSpace::Elem => "element segment",
            IndexSpace::Data => "data segment",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValType {
    I32,
    I64,
    F32,
    F64,
    FuncRef,
    ExternRef,
}

impl ValType {
    pub fn from_byte(b: u8) -> Option<ValType> {
        Some(match b {
            0x7F => ValType::I32,
            0x7E => ValType::I64,
            0x7D => ValType::F32,
            0x7C => ValType::F64,
            0x70 => ValType::FuncRef,
            0x6F => ValType::ExternRef,
            _ => return None,
        })
    }

    pub fn byte(self) -> u8 {
        match self {
            ValType::I32 => 0x7F,
            ValType::I64 => 0x7E,
            ValType::F32 => 0x7D,
            ValType::F64 => 0x7C,
            ValType::FuncRef => 0x70,
            ValType::ExternRef => 0x6F,
        }
    }

    pub fn is_ref(self) -> bool {
        matches!(self, ValType::FuncRef | ValType::ExternRef)
    }
}

impl std::fmt::Display for ValType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ValType::I32 => "i32",
            ValType::I64 => "i64",
            ValType::F32 => "f32",
            ValType::F64 => "f64",
            ValType::FuncRef => "funcref",
            ValType::ExternRef => "externref",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FuncType {
    pub params: Vec<ValType>,
    pub results: Vec<ValType>,
}

impl FuncType {
    pub fn new(params: impl Into<Vec<ValType>>, results: impl Into<Vec<ValType>>) -> Self {
        FuncType {
            params: params.into(),
            results: results.into(),
        }
    }
}

impl std::fmt::Display for FuncType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let join = |v: &[ValType]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
        write!(f, "[{}] -> [{}]", join(&self.params), join(&self.results))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Limits {
    pub min: u32,
    pub max: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TableType {
    pub elem: ValType,
    pub limits: Limits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GlobalType {
    pub ty: ValType,
    pub mutable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImportKind {
    Func(u32),
    Table(TableType),
    Memory(Limits),
    Global(GlobalType),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Import {
    pub module: String,
    pub name: String,
    pub kind: ImportKind,
}

/// A constant expression, stored as raw instruction bytes including the
/// terminating `end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstExpr(pub Vec<u8>);

impl ConstExpr {
    pub fn i32_const(v: i32) -> ConstExpr {
        let mut b = vec![0x41];
        encode::write_sleb(&mut b, v as i64);
        b.push(0x0B);
        ConstExpr(b)
    }

    pub fn from_instrs(instrs: &[Instr]) -> ConstExpr {
        let mut b = Vec::new();
        for i in instrs {
            i.encode(&mut b);
        }
        b.push(0x0B);
        ConstExpr(b)
    }

    pub fn instrs(&self) -> Result<Vec<Instr>> {
        let mut out: Vec<Instr> = instr::decode_all(&self.0)?
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        if out.last() == Some(&Instr::End) {
            out.pop();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FunctionDef {
    pub type_index: u32,
    /// Run-length encoded local declarations, excluding parameters.
    pub locals: Vec<(u32, ValType)>,
    /// Instruction bytes, including the final `end`.
    pub code: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GlobalDef {
    pub ty: GlobalType,
    pub init: ConstExpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternKind {
    Func,
    Table,
    Memory,
    Global,
}

impl ExternKind {
    pub(crate) fn byte(self) -> u8 {
        match self {
            ExternKind::Func => 0,
            ExternKind::Table => 1,
            ExternKind::Memory => 2,
            ExternKind::Global => 3,
        }
    }
}

impl ImportKind {
    pub fn extern_kind(&self) -> ExternKind {
        match self {
            ImportKind::Func(_) => ExternKind::Func,
            ImportKind::Table(_) => ExternKind::Table,
            ImportKind::Memory(_) => ExternKind::Memory,
            ImportKind::Global(_) => ExternKind::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Export {
    pub name: String,
    pub kind: ExternKind,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DataMode {
    Active { memory: u32, offset: ConstExpr },
    Passive,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataSegment {
    pub mode: DataMode,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ElemMode {
    Active { table: u32, offset: ConstExpr },
    Passive,
    Declared,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ElemItems {
    Functions(Vec<u32>),
    Exprs(Vec<ConstExpr>),
}

impl ElemItems {
    pub fn len(&self) -> usize {
        match self {
            ElemItems::Functions(f) => f.len(),
            ElemItems::Exprs(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ElemSegment {
    pub mode: ElemMode,
    pub ty: ValType,
    pub items: ElemItems,
}

/// One WebAssembly module. Index spaces count imports first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WasmModule {
    pub types: Vec<FuncType>,
    pub imports: Vec<Import>,
    pub functions: Vec<FunctionDef>,
    pub globals: Vec<GlobalDef>,
    pub tables: Vec<TableType>,
    pub memories: Vec<Limits>,
    pub exports: Vec<Export>,
    pub data_segments: Vec<DataSegment>,
    pub elem_segments: Vec<ElemSegment>,
    pub start: Option<u32>,
    pub custom_sections: Vec<(String, Vec<u8>)>,
}

/// A function index in a module's function index space (imports first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionIndex(pub u32);

impl std::fmt::Display for FunctionIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl WasmModule {
    pub fn num_imported(&self, kind: ExternKind) -> u32 {
        self.imports
            .iter()
            .filter(|i| i.kind.extern_kind() == kind)
            .count() as u32
    }

    pub fn num_imported_funcs(&self) -> u32 {
        self.num_imported(ExternKind::Func)
    }

    pub fn num_funcs(&self) -> u32 {
        self.num_imported_funcs() + self.functions.len() as u32
    }

    pub fn num_globals(&self) -> u32 {
        self.num_imported(ExternKind::Global) + self.globals.len() as u32
    }

    pub fn num_tables(&self) -> u32 {
        self.num_imported(ExternKind::Table) + self.tables.len() as u32
    }

    pub fn num_memories(&self) -> u32 {
        self.num_imported(ExternKind::Memory) + self.memories.len() as u32
    }

    pub fn is_defined_func(&self, f: FunctionIndex) -> bool {
        f.0 >= self.num_imported_funcs() && f.0 < self.num_funcs()
    }

    /// Defined function for a function-space index, if it is not an import.
    pub fn defined_func(&self, f: FunctionIndex) -> Result<&FunctionDef> {
        let imported = self.num_imported_funcs();
        if f.0 < imported {
            return Err(WasmError::NotDefinedFunction(f.0));
        }
        self.functions
            .get((f.0 - imported) as usize)
            .ok_or(WasmError::IndexOutOfRange {
                space: IndexSpace::Func,
                index: f.0,
            })
    }

    /// Type index of any function in the function index space.
    pub fn func_type_index(&self, f: u32) -> Option<u32> {
        let mut n = 0;
        for imp in &self.imports {
            if let ImportKind::Func(ty) = imp.kind {
                if n == f {
                    return Some(ty);
                }
                n += 1;
            }
        }
        self.functions.get((f - n) as usize).map(|d| d.type_index)
    }

    pub fn func_type(&self, f: u32) -> Option<&FuncType> {
        self.func_type_index(f)
            .and_then(|t| self.types.get(t as usize))
    }

    /// The import descriptor behind an imported function index.
    pub fn func_import(&self, f: u32) -> Option<&Import> {
        self.imports
            .iter()
            .filter(|i| matches!(i.kind, ImportKind::Func(_)))
            .nth(f as usize)
    }

    pub fn global_type(&self, g: u32) -> Option<GlobalType> {
        let mut n = 0;
        for imp in &self.imports {
            if let ImportKind::Global(ty) = imp.kind {
                if n == g {
                    return Some(ty);
                }
                n += 1;
            }
        }
        self.globals.get((g - n) as usize).map(|d| d.ty)
    }

    pub fn table_type(&self, t: u32) -> Option<TableType> {
        let mut n = 0;
        for imp in &self.imports {
            if let ImportKind::Table(ty) = imp.kind {
                if n == t {
                    return Some(ty);
                }
                n += 1;
            }
        }
        self.tables.get((t - n) as usize).copied()
    }

    pub fn memory_limits(&self, m: u32) -> Option<Limits> {
        let mut n = 0;
        for imp in &self.imports {
            if let ImportKind::Memory(l) = imp.kind {
                if n == m {
                    return Some(l);
                }
                n += 1;
            }
        }
        self.memories.get((m - n) as usize).copied()
    }

    pub fn export(&self, name: &str) -> Option<&Export> {
        self.exports.iter().find(|e| e.name == name)
    }

    /// Index of `ty` in the type section, appending it when absent.
    pub fn intern_type(&mut self, ty: FuncType) -> u32 {
        if let Some(i) = self.types.iter().position(|t| *t == ty) {
            return i as u32;
        }
        self.types.push(ty);
        (self.types.len() - 1) as u32
    }

    /// All function indices named by `ref.func` in code, global
    /// initializers and element expressions, plus element function lists.
    pub fn referenced_functions(&self) -> Result<BTreeSet<u32>> {
        let mut out = BTreeSet::new();
        for f in &self.functions {
            transform::collect_ref_funcs(&f.code, &mut out)?;
        }
        for g in &self.globals {
            transform::collect_ref_funcs(&g.init.0, &mut out)?;
        }
        for e in &self.elem_segments {
            match &e.items {
                ElemItems::Functions(fs) => out.extend(fs.iter().copied()),
                ElemItems::Exprs(es) => {
                    for x in es {
                        transform::collect_ref_funcs(&x.0, &mut out)?;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Old-index to new-index maps, one per index space. A space without an
/// explicit map is the identity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMap {
    pub func: Option<Vec<Option<u32>>>,
    pub global: Option<Vec<Option<u32>>>,
    pub table: Option<Vec<Option<u32>>>,
    pub memory: Option<Vec<Option<u32>>>,
    pub ty: Option<Vec<Option<u32>>>,
    pub elem: Option<Vec<Option<u32>>>,
    pub data: Option<Vec<Option<u32>>>,
}

impl IndexMap {
    pub fn identity() -> IndexMap {
        IndexMap::default()
    }

    fn space(&self, space: IndexSpace) -> &Option<Vec<Option<u32>>> {
        match space {
            IndexSpace::Type => &self.ty,
            IndexSpace::Func => &self.func,
            IndexSpace::Table => &self.table,
            IndexSpace::Memory => &self.memory,
            IndexSpace::Global => &self.global,
            IndexSpace::Elem => &self.elem,
            IndexSpace::Data => &self.data,
        }
    }

    fn space_mut(&mut self, space: IndexSpace) -> &mut Option<Vec<Option<u32>>> {
        match space {
            IndexSpace::Type => &mut self.ty,
            IndexSpace::Func => &mut self.func,
            IndexSpace::Table => &mut self.table,
            IndexSpace::Memory => &mut self.memory,
            IndexSpace::Global => &mut self.global,
            IndexSpace::Elem => &mut self.elem,
            IndexSpace::Data => &mut self.data,
        }
    }

    pub fn set(&mut self, space: IndexSpace, old: u32, new: u32) {
        let v = self.space_mut(space).get_or_insert_with(Vec::new);
        if v.len() <= old as usize {
            v.resize(old as usize + 1, None);
        }
        v[old as usize] = Some(new);
    }

    pub fn get(&self, space: IndexSpace, old: u32) -> Result<u32> {
        match self.space(space) {
            None => Ok(old),
            Some(v) => v
                .get(old as usize)
                .copied()
                .flatten()
                .ok_or(WasmError::UnmappedIndex { space, index: old }),
        }
    }

    /// True when no space has an explicit map.
    pub fn is_trivial(&self) -> bool {
        IndexSpace::ALL.iter().all(|s| self.space(*s).is_none())
    }

    /// `other ∘ self`: first apply `self`, then `other`.
    pub fn then(&self, other: &IndexMap) -> IndexMap {
        let mut out = IndexMap::default();
        for s in IndexSpace::ALL {
            match (self.space(s), other.space(s)) {
                (None, None) => {}
                (Some(a), _) => {
                    let v = a
                        .iter()
                        .map(|n| n.and_then(|n| other.get(s, n).ok()))
                        .collect();
                    *out.space_mut(s) = Some(v);
                }
                (None, Some(b)) => *out.space_mut(s) = Some(b.clone()),
            }
        }
        out
    }

    /// Inverse map. Fails to be total only if the map is not injective, in
    /// which case later entries win.
    pub fn inverse(&self) -> IndexMap {
        let mut out = IndexMap::default();
        for s in IndexSpace::ALL {
            if let Some(v) = self.space(s) {
                *out.space_mut(s) = Some(Vec::new());
                for (old, new) in v.iter().enumerate() {
                    if let Some(new) = new {
                        out.set(s, *new, old as u32);
                    }
                }
            }
        }
        out
    }

    pub fn is_injective(&self, space: IndexSpace) -> bool {
        match self.space(space) {
            None => true,
            Some(v) => {
                let mut seen = BTreeSet::new();
                v.iter().flatten().all(|n| seen.insert(*n))
            }
        }
    }
}
