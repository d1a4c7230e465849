use crate::wasm::NumOp;

use super::value::{TrapKind, Value};

fn fmin32(a: f32, b: f32) -> f32 {
    if a.is_nan() || b.is_nan() {
        return a + b;
    }
    if a == 0.0 && b == 0.0 {
        return if a.is_sign_negative() { a } else { b };
    }
    a.min(b)
}

fn fmax32(a: f32, b: f32) -> f32 {
    if a.is_nan() || b.is_nan() {
        return a + b;
    }
    if a == 0.0 && b == 0.0 {
        return if a.is_sign_positive() { a } else { b };
    }
    a.max(b)
}

fn fmin64(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        return a + b;
    }
    if a == 0.0 && b == 0.0 {
        return if a.is_sign_negative() { a } else { b };
    }
    a.min(b)
}

fn fmax64(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        return a + b;
    }
    if a == 0.0 && b == 0.0 {
        return if a.is_sign_positive() { a } else { b };
    }
    a.max(b)
}

/// Checked float-to-int truncation. `lo` and `hi` are exclusive bounds on
/// the untruncated input.
fn trunc(x: f64, lo: f64, hi: f64) -> Result<f64, TrapKind> {
    if x.is_nan() {
        return Err(TrapKind::InvalidConversion);
    }
    if x <= lo || x >= hi {
        return Err(TrapKind::IntegerOverflow);
    }
    Ok(x.trunc())
}

const I32_LO: f64 = -2147483649.0;
const I32_HI: f64 = 2147483648.0;
const U32_HI: f64 = 4294967296.0;
const I64_HI: f64 = 9223372036854775808.0;
const U64_HI: f64 = 18446744073709551616.0;

fn trunc_i64_s(x: f64) -> Result<i64, TrapKind> {
    if x.is_nan() {
        return Err(TrapKind::InvalidConversion);
    }
    // -2^63 is representable, anything below it after truncation is not.
    if x < -I64_HI || x >= I64_HI {
        return Err(TrapKind::IntegerOverflow);
    }
    Ok(x.trunc() as i64)
}

/// Apply a numeric operator to the top of `stack`.
pub(crate) fn eval(op: NumOp, stack: &mut Vec<Value>) -> Result<(), TrapKind> {
    use NumOp::*;
    use Value::*;

    macro_rules! pop {
        () => {
            stack.pop().unwrap_or(I32(0))
        };
    }
    macro_rules! un {
        ($get:ident, $wrap:expr, |$a:ident| $body:expr) => {{
            let $a = pop!().$get();
            stack.push($wrap($body));
        }};
    }
    macro_rules! bin {
        ($get:ident, $wrap:expr, |$a:ident, $b:ident| $body:expr) => {{
            let $b = pop!().$get();
            let $a = pop!().$get();
            stack.push($wrap($body));
        }};
    }
    let b32 = |v: bool| I32(v as i32);
    let f32v = |v: f32| F32(v.to_bits());
    let f64v = |v: f64| F64(v.to_bits());

    match op {
        I32Eqz => un!(i32, b32, |a| a == 0),
        I32Eq => bin!(i32, b32, |a, b| a == b),
        I32Ne => bin!(i32, b32, |a, b| a != b),
        I32LtS => bin!(i32, b32, |a, b| a < b),
        I32LtU => bin!(i32, b32, |a, b| (a as u32) < (b as u32)),
        I32GtS => bin!(i32, b32, |a, b| a > b),
        I32GtU => bin!(i32, b32, |a, b| (a as u32) > (b as u32)),
        I32LeS => bin!(i32, b32, |a, b| a <= b),
        I32LeU => bin!(i32, b32, |a, b| (a as u32) <= (b as u32)),
        I32GeS => bin!(i32, b32, |a, b| a >= b),
        I32GeU => bin!(i32, b32, |a, b| (a as u32) >= (b as u32)),
        I64Eqz => un!(i64, b32, |a| a == 0),
        I64Eq => bin!(i64, b32, |a, b| a == b),
        I64Ne => bin!(i64, b32, |a, b| a != b),
        I64LtS => bin!(i64, b32, |a, b| a < b),
        I64LtU => bin!(i64, b32, |a, b| (a as u64) < (b as u64)),
        I64GtS => bin!(i64, b32, |a, b| a > b),
        I64GtU => bin!(i64, b32, |a, b| (a as u64) > (b as u64)),
        I64LeS => bin!(i64, b32, |a, b| a <= b),
        I64LeU => bin!(i64, b32, |a, b| (a as u64) <= (b as u64)),
        I64GeS => bin!(i64, b32, |a, b| a >= b),
        I64GeU => bin!(i64, b32, |a, b| (a as u64) >= (b as u64)),
        F32Eq => bin!(f32, b32, |a, b| a == b),
        F32Ne => bin!(f32, b32, |a, b| a != b),
        F32Lt => bin!(f32, b32, |a, b| a < b),
        F32Gt => bin!(f32, b32, |a, b| a > b),
        F32Le => bin!(f32, b32, |a, b| a <= b),
        F32Ge => bin!(f32, b32, |a, b| a >= b),
        F64Eq => bin!(f64, b32, |a, b| a == b),
        F64Ne => bin!(f64, b32, |a, b| a != b),
        F64Lt => bin!(f64, b32, |a, b| a < b),
        F64Gt => bin!(f64, b32, |a, b| a > b),
        F64Le => bin!(f64, b32, |a, b| a <= b),
        F64Ge => bin!(f64, b32, |a, b| a >= b),

        I32Clz => un!(i32, I32, |a| a.leading_zeros() as i32),
        I32Ctz => un!(i32, I32, |a| a.trailing_zeros() as i32),
        I32Popcnt => un!(i32, I32, |a| a.count_ones() as i32),
        I32Add => bin!(i32, I32, |a, b| a.wrapping_add(b)),
        I32Sub => bin!(i32, I32, |a, b| a.wrapping_sub(b)),
        I32Mul => bin!(i32, I32, |a, b| a.wrapping_mul(b)),
        I32DivS | I32DivU | I32RemS | I32RemU => {
            let b = pop!().i32();
            let a = pop!().i32();
            if b == 0 {
                return Err(TrapKind::IntegerDivideByZero);
            }
            let r = match op {
                I32DivS => {
                    if a == i32::MIN && b == -1 {
                        return Err(TrapKind::IntegerOverflow);
                    }
                    a / b
                }
                I32DivU => ((a as u32) / (b as u32)) as i32,
                I32RemS => a.wrapping_rem(b),
                _ => ((a as u32) % (b as u32)) as i32,
            };
            stack.push(I32(r));
        }
        I32And => bin!(i32, I32, |a, b| a & b),
        I32Or => bin!(i32, I32, |a, b| a | b),
        I32Xor => bin!(i32, I32, |a, b| a ^ b),
        I32Shl => bin!(i32, I32, |a, b| a.wrapping_shl(b as u32)),
        I32ShrS => bin!(i32, I32, |a, b| a.wrapping_shr(b as u32)),
        I32ShrU => bin!(i32, I32, |a, b| (a as u32).wrapping_shr(b as u32) as i32),
        I32Rotl => bin!(i32, I32, |a, b| a.rotate_left(b as u32 % 32)),
        I32Rotr => bin!(i32, I32, |a, b| a.rotate_right(b as u32 % 32)),

        I64Clz => un!(i64, I64, |a| a.leading_zeros() as i64),
        I64Ctz => un!(i64, I64, |a| a.trailing_zeros() as i64),
        I64Popcnt => un!(i64, I64, |a| a.count_ones() as i64),
        I64Add => bin!(i64, I64, |a, b| a.wrapping_add(b)),
        I64Sub => bin!(i64, I64, |a, b| a.wrapping_sub(b)),
        I64Mul => bin!(i64, I64, |a, b| a.wrapping_mul(b)),
        I64DivS | I64DivU | I64RemS | I64RemU => {
            let b = pop!().i64();
            let a = pop!().i64();
            if b == 0 {
                return Err(TrapKind::IntegerDivideByZero);
            }
            let r = match op {
                I64DivS => {
                    if a == i64::MIN && b == -1 {
                        return Err(TrapKind::IntegerOverflow);
                    }
                    a / b
                }
                I64DivU => ((a as u64) / (b as u64)) as i64,
                I64RemS => a.wrapping_rem(b),
                _ => ((a as u64) % (b as u64)) as i64,
            };
            stack.push(I64(r));
        }
        I64And => bin!(i64, I64, |a, b| a & b),
        I64Or => bin!(i64, I64, |a, b| a | b),
        I64Xor => bin!(i64, I64, |a, b| a ^ b),
        I64Shl => bin!(i64, I64, |a, b| a.wrapping_shl(b as u32)),
        I64ShrS => bin!(i64, I64, |a, b| a.wrapping_shr(b as u32)),
        I64ShrU => bin!(i64, I64, |a, b| (a as u64).wrapping_shr(b as u32) as i64),
        I64Rotl => bin!(i64, I64, |a, b| a.rotate_left((b as u64 % 64) as u32)),
        I64Rotr => bin!(i64, I64, |a, b| a.rotate_right((b as u64 % 64) as u32)),

        // Sign operations act on bits so NaN payloads are preserved.
        F32Abs => {
            let a = pop!();
            if let F32(b) = a {
                stack.push(F32(b & 0x7FFF_FFFF));
            }
        }
        F32Neg => {
            let a = pop!();
            if let F32(b) = a {
                stack.push(F32(b ^ 0x8000_0000));
            }
        }
        F32Copysign => {
            let (b, a) = (pop!(), pop!());
            if let (F32(a), F32(b)) = (a, b) {
                stack.push(F32((a & 0x7FFF_FFFF) | (b & 0x8000_0000)));
            }
        }
        F32Ceil => un!(f32, f32v, |a| a.ceil()),
        F32Floor => un!(f32, f32v, |a| a.floor()),
        F32Trunc => un!(f32, f32v, |a| a.trunc()),
        F32Nearest => un!(f32, f32v, |a| a.round_ties_even()),
        F32Sqrt => un!(f32, f32v, |a| a.sqrt()),
        F32Add => bin!(f32, f32v, |a, b| a + b),
        F32Sub => bin!(f32, f32v, |a, b| a - b),
        F32Mul => bin!(f32, f32v, |a, b| a * b),
        F32Div => bin!(f32, f32v, |a, b| a / b),
        F32Min => bin!(f32, f32v, |a, b| fmin32(a, b)),
        F32Max => bin!(f32, f32v, |a, b| fmax32(a, b)),

        F64Abs => {
            let a = pop!();
            if let F64(b) = a {
                stack.push(F64(b & 0x7FFF_FFFF_FFFF_FFFF));
            }
        }
        F64Neg => {
            let a = pop!();
            if let F64(b) = a {
                stack.push(F64(b ^ 0x8000_0000_0000_0000));
            }
        }
        F64Copysign => {
            let (b, a) = (pop!(), pop!());
            if let (F64(a), F64(b)) = (a, b) {
                stack.push(F64(
                    (a & 0x7FFF_FFFF_FFFF_FFFF) | (b & 0x8000_0000_0000_0000),
                ));
            }
        }
        F64Ceil => un!(f64, f64v, |a| a.ceil()),
        F64Floor => un!(f64, f64v, |a| a.floor()),
        F64Trunc => un!(f64, f64v, |a| a.trunc()),
        F64Nearest => un!(f64, f64v, |a| a.round_ties_even()),
        F64Sqrt => un!(f64, f64v, |a| a.sqrt()),
        F64Add => bin!(f64, f64v, |a, b| a + b),
        F64Sub => bin!(f64, f64v, |a, b| a - b),
        F64Mul => bin!(f64, f64v, |a, b| a * b),
        F64Div => bin!(f64, f64v, |a, b| a / b),
        F64Min => bin!(f64, f64v, |a, b| fmin64(a, b)),
        F64Max => bin!(f64, f64v, |a, b| fmax64(a, b)),

        I32WrapI64 => un!(i64, I32, |a| a as i32),
        I32TruncF32S | I32TruncF64S => {
            let x = pop_float(stack);
            stack.push(I32(trunc(x, I32_LO, I32_HI)? as i32));
        }
        I32TruncF32U | I32TruncF64U => {
            let x = pop_float(stack);
            stack.push(I32(trunc(x, -1.0, U32_HI)? as u32 as i32));
        }
        I64TruncF32S | I64TruncF64S => {
            let x = pop_float(stack);
            stack.push(I64(trunc_i64_s(x)?));
        }
        I64TruncF32U | I64TruncF64U => {
            let x = pop_float(stack);
            stack.push(I64(trunc(x, -1.0, U64_HI)? as u64 as i64));
        }
        I64ExtendI32S => un!(i32, I64, |a| a as i64),
        I64ExtendI32U => un!(i32, I64, |a| a as u32 as i64),
        F32ConvertI32S => un!(i32, f32v, |a| a as f32),
        F32ConvertI32U => un!(i32, f32v, |a| a as u32 as f32),
        F32ConvertI64S => un!(i64, f32v, |a| a as f32),
        F32ConvertI64U => un!(i64, f32v, |a| a as u64 as f32),
        F32DemoteF64 => un!(f64, f32v, |a| a as f32),
        F64ConvertI32S => un!(i32, f64v, |a| a as f64),
        F64ConvertI32U => un!(i32, f64v, |a| a as u32 as f64),
        F64ConvertI64S => un!(i64, f64v, |a| a as f64),
        F64ConvertI64U => un!(i64, f64v, |a| a as u64 as f64),
        F64PromoteF32 => un!(f32, f64v, |a| a as f64),
        I32ReinterpretF32 => {
            if let F32(b) = pop!() {
                stack.push(I32(b as i32));
            }
        }
        I64ReinterpretF64 => {
            if let F64(b) = pop!() {
                stack.push(I64(b as i64));
            }
        }
        F32ReinterpretI32 => un!(i32, F32, |a| a as u32),
        F64ReinterpretI64 => un!(i64, F64, |a| a as u64),
        I32Extend8S => un!(i32, I32, |a| a as i8 as i32),
        I32Extend16S => un!(i32, I32, |a| a as i16 as i32),
        I64Extend8S => un!(i64, I64, |a| a as i8 as i64),
        I64Extend16S => un!(i64, I64, |a| a as i16 as i64),
        I64Extend32S => un!(i64, I64, |a| a as i32 as i64),

        // `as` casts saturate and map NaN to zero, which is exactly the
        // non-trapping conversion semantics.
        I32TruncSatF32S | I32TruncSatF64S => {
            let x = pop_float(stack);
            stack.push(I32(x as i32));
        }
        I32TruncSatF32U | I32TruncSatF64U => {
            let x = pop_float(stack);
            stack.push(I32(x as u32 as i32));
        }
        I64TruncSatF32S | I64TruncSatF64S => {
            let x = pop_float(stack);
            stack.push(I64(x as i64));
        }
        I64TruncSatF32U | I64TruncSatF64U => {
            let x = pop_float(stack);
            stack.push(I64(x as u64 as i64));
        }
    }
    Ok(())
}

/// Pop an f32 or f64 operand, widened to f64 (exact for f32).
fn pop_float(stack: &mut Vec<Value>) -> f64 {
    match stack.pop() {
        Some(Value::F32(b)) => f32::from_bits(b) as f64,
        Some(Value::F64(b)) => f64::from_bits(b),
        _ => 0.0,
    }
}
