use std::fmt;

use crate::wasm::ValType;

/// Address of a function in a [`Store`](super::Store).
pub type FuncAddr = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Value {
    I32(i32),
    I64(i64),
    /// Raw bits, so NaN payloads survive copies.
    F32(u32),
    F64(u64),
    FuncRef(Option<FuncAddr>),
    ExternRef(Option<u32>),
}

impl Value {
    pub fn default_for(t: ValType) -> Value {
        match t {
            ValType::I32 => Value::I32(0),
            ValType::I64 => Value::I64(0),
            ValType::F32 => Value::F32(0),
            ValType::F64 => Value::F64(0),
            ValType::FuncRef => Value::FuncRef(None),
            ValType::ExternRef => Value::ExternRef(None),
        }
    }

    pub fn ty(&self) -> ValType {
        match self {
            Value::I32(_) => ValType::I32,
            Value::I64(_) => ValType::I64,
            Value::F32(_) => ValType::F32,
            Value::F64(_) => ValType::F64,
            Value::FuncRef(_) => ValType::FuncRef,
            Value::ExternRef(_) => ValType::ExternRef,
        }
    }

    #[inline]
    pub fn i32(self) -> i32 {
        match self {
            Value::I32(v) => v,
            _ => 0,
        }
    }

    #[inline]
    pub fn i64(self) -> i64 {
        match self {
            Value::I64(v) => v,
            _ => 0,
        }
    }

    #[inline]
    pub fn f32(self) -> f32 {
        match self {
            Value::F32(v) => f32::from_bits(v),
            _ => 0.0,
        }
    }

    #[inline]
    pub fn f64(self) -> f64 {
        match self {
            Value::F64(v) => f64::from_bits(v),
            _ => 0.0,
        }
    }

    pub fn is_null_ref(&self) -> bool {
        matches!(self, Value::FuncRef(None) | Value::ExternRef(None))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::I32(v) => write!(f, "i32:{v}"),
            Value::I64(v) => write!(f, "i64:{v}"),
            Value::F32(b) => write!(f, "f32:{b:#010x}"),
            Value::F64(b) => write!(f, "f64:{b:#018x}"),
            Value::FuncRef(None) => write!(f, "funcref:null"),
            Value::FuncRef(Some(a)) => write!(f, "funcref:{a}"),
            Value::ExternRef(None) => write!(f, "externref:null"),
            Value::ExternRef(Some(a)) => write!(f, "externref:{a}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrapKind {
    Unreachable,
    MemoryOutOfBounds,
    TableOutOfBounds,
    IntegerDivideByZero,
    IntegerOverflow,
    InvalidConversion,
    UndefinedElement,
    UninitializedElement,
    IndirectCallTypeMismatch,
    StackExhausted,
    OutOfFuel,
    Timeout,
    /// The program asked the host to exit with a status code.
    Exit(i32),
    /// Raised by an embedder, e.g. a replayed call that has no recording.
    Host,
}

impl TrapKind {
    pub fn default_message(self) -> &'static str {
        match self {
            TrapKind::Unreachable => "unreachable",
            TrapKind::MemoryOutOfBounds => "out of bounds memory access",
            TrapKind::TableOutOfBounds => "out of bounds table access",
            TrapKind::IntegerDivideByZero => "integer divide by zero",
            TrapKind::IntegerOverflow => "integer overflow",
            TrapKind::InvalidConversion => "invalid conversion to integer",
            TrapKind::UndefinedElement => "undefined element",
            TrapKind::UninitializedElement => "uninitialized element",
            TrapKind::IndirectCallTypeMismatch => "indirect call type mismatch",
            TrapKind::StackExhausted => "call stack exhausted",
            TrapKind::OutOfFuel => "all fuel consumed",
            TrapKind::Timeout => "wall-clock limit exceeded",
            TrapKind::Exit(_) => "exit",
            TrapKind::Host => "host error",
        }
    }

    pub fn is_resource_exhaustion(self) -> bool {
        matches!(self, TrapKind::OutOfFuel | TrapKind::Timeout)
    }
}

/// One frame of a trap backtrace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BacktraceFrame {
    pub instance: usize,
    /// Function index within its module.
    pub func_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trap {
    pub kind: TrapKind,
    pub message: String,
    /// Innermost frame first.
    pub backtrace: Vec<BacktraceFrame>,
}

impl Trap {
    pub fn new(kind: TrapKind) -> Trap {
        Trap {
            kind,
            message: kind.default_message().to_string(),
            backtrace: Vec::new(),
        }
    }

    pub fn host(message: impl Into<String>) -> Trap {
        Trap {
            kind: TrapKind::Host,
            message: message.into(),
            backtrace: Vec::new(),
        }
    }
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Trap {}
