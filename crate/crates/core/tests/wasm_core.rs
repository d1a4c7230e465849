mod common;

use common::{corpus, program};
use proptest::prelude::*;
use rr_reduce_core::candidates::compute_dynamic_set;
use rr_reduce_core::exec::{run_module, ExecLimits};
use rr_reduce_core::merge::merge_with_maps;
use rr_reduce_core::split::split;
use rr_reduce_core::wasm::instr::encode_all;
use rr_reduce_core::wasm::{
    code_size, encode_module, function_body_size, instrument_function_entries, parse_module,
    remap_function_body, validate_module, FunctionIndex, IndexMap, IndexSpace, Instr, MemArg,
    WasmError, WasmModule,
};
use wasmparser::{Parser, Payload};

/// Body sizes as reported by wasmparser, without the size prefix.
fn independent_body_sizes(bytes: &[u8]) -> Vec<usize> {
    Parser::new(0)
        .parse_all(bytes)
        .filter_map(|p| match p.unwrap() {
            Payload::CodeSectionEntry(body) => Some((body.range().end - body.range().start) as usize),
            _ => None,
        })
        .collect()
}

#[test]
fn header_only_module_is_empty() {
    let m = parse_module(b"\0asm\x01\0\0\0").unwrap();
    assert_eq!(m, WasmModule::default());
    assert_eq!(encode_module(&m), b"\0asm\x01\0\0\0");
    assert_eq!(code_size(&m), 0);
}

#[test]
fn running_example_shape() {
    let m = parse_module(&program("m0")).unwrap();
    assert_eq!(m.functions.len(), 3);
    assert_eq!(m.memories.len(), 1);
    assert_eq!(m.exports.len(), 1);
}

#[test]
fn simd_is_rejected() {
    let bytes = wat::parse_str(
        r#"(module (memory 1)
             (func (export "main") (drop (v128.const i64x2 0 0))))"#,
    )
    .unwrap();
    assert_eq!(parse_module(&bytes), Err(WasmError::UnsupportedFeature("simd".into())));
}

#[test]
fn multiple_memories_are_rejected() {
    let bytes = wat::parse_str("(module (memory 1) (memory 1))").unwrap();
    assert!(matches!(parse_module(&bytes), Err(WasmError::UnsupportedFeature(_))));
}

#[test]
fn encoding_round_trips_on_the_corpus() {
    for (name, bytes) in corpus() {
        let m = parse_module(&bytes).unwrap();
        let again = encode_module(&m);
        assert_eq!(parse_module(&again).unwrap(), m, "{name}");
        validate_module(&again).unwrap_or_else(|e| panic!("{name}: {e}"));
        wasmparser::Validator::new().validate_all(&again).unwrap();
    }
}

#[test]
fn sizes_match_an_independent_dump() {
    for (name, bytes) in corpus() {
        let m = parse_module(&bytes).unwrap();
        let dump = independent_body_sizes(&bytes);
        assert_eq!(code_size(&m), dump.iter().sum::<usize>(), "{name}");
        let first = m.num_imported_funcs();
        for (k, size) in dump.iter().enumerate() {
            let f = FunctionIndex(first + k as u32);
            assert_eq!(function_body_size(&m, f).unwrap(), *size, "{name} f={f}");
        }
        let sum: usize = (first..m.num_funcs())
            .map(|f| function_body_size(&m, FunctionIndex(f)).unwrap())
            .sum();
        assert_eq!(sum, code_size(&m), "{name}");
    }
}

#[test]
fn single_body_sizes() {
    // Locals vector (1 byte) + i32.const 1 (2) + i32.const 2 (2) + i32.add (1)
    // + drop (1) + nop (1) + end (1) = 9.
    let bytes = wat::parse_str("(module (func i32.const 1 i32.const 2 i32.add drop nop))").unwrap();
    let m = parse_module(&bytes).unwrap();
    assert_eq!(code_size(&m), 9);
    assert_eq!(function_body_size(&m, FunctionIndex(0)).unwrap(), 9);
}

#[test]
fn imported_functions_have_no_body() {
    let bytes = wat::parse_str(r#"(module (import "host" "putc" (func (param i32))) (func))"#).unwrap();
    let m = parse_module(&bytes).unwrap();
    assert_eq!(function_body_size(&m, FunctionIndex(0)), Err(WasmError::NotDefinedFunction(0)));
}

#[test]
fn target_body_survives_split_and_merge() {
    for (name, bytes) in corpus() {
        let m = parse_module(&bytes).unwrap();
        for t in m.num_imported_funcs()..m.num_funcs() {
            let p = split(&m, FunctionIndex(t)).unwrap();
            let (merged, maps) = merge_with_maps(&p.target_module, &p.remaining_module, &p.wiring).unwrap();
            let back = p.wiring.target_map.then(&maps.target).inverse();
            let at = maps.target.get(IndexSpace::Func, p.wiring.target_map.get(IndexSpace::Func, t).unwrap()).unwrap();
            let merged_body = &merged.defined_func(FunctionIndex(at)).unwrap().code;
            let restored = remap_function_body(merged_body, &back).unwrap();
            assert_eq!(restored, m.defined_func(FunctionIndex(t)).unwrap().code, "{name} t={t}");
        }
    }
}

#[test]
fn split_is_deterministic() {
    let m = parse_module(&program("m0")).unwrap();
    let a = split(&m, FunctionIndex(2)).unwrap();
    let b = split(&m, FunctionIndex(2)).unwrap();
    assert_eq!(encode_module(&a.target_module), encode_module(&b.target_module));
    assert_eq!(encode_module(&a.remaining_module), encode_module(&b.remaining_module));
}

#[test]
fn instrumentation_reports_executed_functions() {
    let m = parse_module(&program("m0")).unwrap();
    let inst = instrument_function_entries(&m).unwrap();
    validate_module(&encode_module(&inst)).unwrap();
    wasmparser::Validator::new().validate_all(&encode_module(&inst)).unwrap();
    let d = compute_dynamic_set(&m, "main", &ExecLimits::default()).unwrap();
    assert_eq!(d.functions, [0, 1, 2].map(FunctionIndex));
}

#[test]
fn instrumentation_preserves_behavior() {
    for (name, bytes) in corpus() {
        let m = parse_module(&bytes).unwrap();
        let inst = encode_module(&instrument_function_entries(&m).unwrap());
        let a = run_module(&bytes, "main", &ExecLimits::default()).unwrap();
        let b = run_module(&inst, "main", &ExecLimits::default()).unwrap();
        assert_eq!((a.status, a.stdout), (b.status, b.stdout), "{name}");
    }
}

fn instr() -> impl Strategy<Value = Instr> {
    prop_oneof![
        any::<i32>().prop_map(Instr::I32Const),
        any::<i64>().prop_map(Instr::I64Const),
        any::<u32>().prop_map(Instr::F32Const),
        (0u32..8).prop_map(Instr::Call),
        (0u32..8).prop_map(Instr::GlobalGet),
        (0u32..8).prop_map(Instr::GlobalSet),
        (0u32..8).prop_map(Instr::LocalGet),
        (0u32..8, 0u32..2).prop_map(|(ty, table)| Instr::CallIndirect { ty, table }),
        (0u32..2).prop_map(Instr::TableGet),
        (0u32..8).prop_map(Instr::RefFunc),
        (any::<u32>(), any::<u32>()).prop_map(|(align, offset)| Instr::Load(
            rr_reduce_core::wasm::LoadOp::I32Load,
            MemArg { align: align % 4, offset }
        )),
        Just(Instr::Drop),
        Just(Instr::Nop),
    ]
}

/// A map that moves every index in `0..8` by `shift`, per space.
fn shifted(shift: u32) -> IndexMap {
    let mut map = IndexMap::default();
    for space in [IndexSpace::Func, IndexSpace::Global, IndexSpace::Type, IndexSpace::Table] {
        for i in 0..8 {
            map.set(space, i, i + shift);
        }
    }
    map
}

proptest! {
    #[test]
    fn identity_remap_is_identity(body in prop::collection::vec(instr(), 0..40)) {
        let mut instrs = body;
        instrs.push(Instr::End);
        let bytes = encode_all(&instrs);
        prop_assert_eq!(remap_function_body(&bytes, &IndexMap::identity()).unwrap(), bytes);
    }

    #[test]
    fn remap_then_inverse_restores(body in prop::collection::vec(instr(), 0..40), shift in 1u32..200) {
        let mut instrs = body;
        instrs.push(Instr::End);
        let bytes = encode_all(&instrs);
        let map = shifted(shift);
        let there = remap_function_body(&bytes, &map).unwrap();
        prop_assert_eq!(remap_function_body(&there, &map.inverse()).unwrap(), bytes);
    }
}
