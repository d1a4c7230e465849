use super::*;
use crate::exec::HostEnv;
use crate::wasm::parse_module;

fn run(wat_src: &str, entry: &str, args: &[Value]) -> Result<Vec<Value>, Trap> {
    let m = parse_module(&wat::parse_str(wat_src).unwrap()).unwrap();
    let mut store = Store::new(StoreLimits::default());
    let mut env = HostEnv::new();
    let id = store
        .instantiate(&mut env, &m, &mut |_, _| None, true)
        .unwrap();
    let ExternVal::Func(f) = store.export(id, entry).unwrap() else {
        panic!("not a function")
    };
    store.invoke(&mut env, f, args)
}

#[test]
fn recursion_and_branches() {
    let src = r#"(module
      (func $fib (export "fib") (param i32) (result i32)
        local.get 0 i32.const 2 i32.lt_s
        if (result i32) local.get 0
        else
          local.get 0 i32.const 1 i32.sub call $fib
          local.get 0 i32.const 2 i32.sub call $fib
          i32.add
        end))"#;
    assert_eq!(run(src, "fib", &[Value::I32(10)]).unwrap(), vec![Value::I32(55)]);
}

#[test]
fn loops_and_br_table() {
    let src = r#"(module
      (func (export "f") (param i32) (result i32) (local i32)
        block $done
          loop $l
            local.get 0 i32.eqz br_if $done
            local.get 1 local.get 0 i32.add local.set 1
            local.get 0 i32.const 1 i32.sub local.set 0
            br $l
          end
        end
        block $c block $b block $a
          local.get 1 i32.const 3 i32.rem_u
          br_table $a $b $c
        end i32.const 100 return
        end i32.const 200 return
        end i32.const 300))"#;
    // 1+..+5 = 15, 15 % 3 = 0
    assert_eq!(run(src, "f", &[Value::I32(5)]).unwrap(), vec![Value::I32(100)]);
    // 1+..+4 = 10, 10 % 3 = 1
    assert_eq!(run(src, "f", &[Value::I32(4)]).unwrap(), vec![Value::I32(200)]);
}

#[test]
fn multivalue_blocks() {
    let src = r#"(module
      (func $swap (param i32 i32) (result i32 i32) local.get 1 local.get 0)
      (func (export "f") (result i32)
        i32.const 7 i32.const 2
        call $swap
        block (param i32 i32) (result i32) i32.sub end))"#;
    assert_eq!(run(src, "f", &[]).unwrap(), vec![Value::I32(-5)]);
}

#[test]
fn traps_carry_backtrace() {
    let src = r#"(module
      (func $inner (param i32) (result i32) i32.const 1 local.get 0 i32.div_s)
      (func (export "f") (result i32) i32.const 0 call $inner))"#;
    let t = run(src, "f", &[]).unwrap_err();
    assert_eq!(t.kind, TrapKind::IntegerDivideByZero);
    let idx: Vec<u32> = t.backtrace.iter().map(|f| f.func_index).collect();
    assert_eq!(idx, vec![0, 1]);
}

#[test]
fn indirect_call_checks() {
    let src = r#"(module
      (type $t (func (result i32)))
      (table 3 funcref)
      (elem (i32.const 0) $a $b)
      (func $a (result i32) i32.const 11)
      (func $b (param i32) (result i32) local.get 0)
      (func (export "call") (param i32) (result i32)
        local.get 0 call_indirect (type $t)))"#;
    assert_eq!(run(src, "call", &[Value::I32(0)]).unwrap(), vec![Value::I32(11)]);
    assert_eq!(
        run(src, "call", &[Value::I32(1)]).unwrap_err().kind,
        TrapKind::IndirectCallTypeMismatch
    );
    assert_eq!(
        run(src, "call", &[Value::I32(2)]).unwrap_err().kind,
        TrapKind::UninitializedElement
    );
    assert_eq!(
        run(src, "call", &[Value::I32(3)]).unwrap_err().kind,
        TrapKind::UndefinedElement
    );
}

#[test]
fn memory_grow_and_bounds() {
    let src = r#"(module
      (memory 1 3)
      (func (export "grow") (param i32) (result i32) local.get 0 memory.grow)
      (func (export "load") (param i32) (result i32) local.get 0 i32.load))"#;
    assert_eq!(run(src, "grow", &[Value::I32(2)]).unwrap(), vec![Value::I32(1)]);
    assert_eq!(run(src, "grow", &[Value::I32(3)]).unwrap(), vec![Value::I32(-1)]);
    assert_eq!(
        run(src, "load", &[Value::I32(65533)]).unwrap_err().kind,
        TrapKind::MemoryOutOfBounds
    );
}

#[test]
fn fuel_runs_out() {
    let src = r#"(module (func (export "f") (loop $l br $l)))"#;
    let m = parse_module(&wat::parse_str(src).unwrap()).unwrap();
    let mut store = Store::new(StoreLimits {
        fuel: 1_000_000,
        ..StoreLimits::default()
    });
    let mut env = HostEnv::new();
    let id = store.instantiate(&mut env, &m, &mut |_, _| None, true).unwrap();
    let ExternVal::Func(f) = store.export(id, "f").unwrap() else { panic!() };
    assert_eq!(store.invoke(&mut env, f, &[]).unwrap_err().kind, TrapKind::OutOfFuel);
    assert_eq!(store.fuel_used(), 1_000_000);
}

#[test]
fn deep_recursion_exhausts_stack() {
    let src = r#"(module (func $f (export "f") call $f))"#;
    assert_eq!(run(src, "f", &[]).unwrap_err().kind, TrapKind::StackExhausted);
}
