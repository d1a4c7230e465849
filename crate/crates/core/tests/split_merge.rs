mod common;

use common::{build, corpus, program};
use rr_reduce_core::merge::{merge, MergeError};
use rr_reduce_core::split::{split, validate_partition, Diagnostic, Side, SplitError};
use rr_reduce_core::wasm::{
    encode_module, parse_module, ExternKind, FunctionIndex, ImportKind, WasmModule,
};

fn m0() -> WasmModule {
    parse_module(&program("m0")).unwrap()
}

fn import_names(m: &WasmModule) -> Vec<(String, String)> {
    m.imports.iter().map(|i| (i.module.clone(), i.name.clone())).collect()
}

fn func_exports(m: &WasmModule) -> Vec<String> {
    m.exports
        .iter()
        .filter(|e| e.kind == ExternKind::Func)
        .map(|e| e.name.clone())
        .collect()
}

fn pair(a: &str, b: &str) -> (String, String) {
    (a.to_string(), b.to_string())
}

#[test]
fn leaf_target_of_the_running_example() {
    let p = split(&m0(), FunctionIndex(2)).unwrap();
    let t = &p.target_module;
    assert_eq!(t.functions.len(), 1);
    assert_eq!(import_names(t), [pair("rem", "memory")]);
    assert_eq!(func_exports(t), ["t2"]);

    let r = &p.remaining_module;
    assert_eq!(r.functions.len(), 2);
    assert_eq!(import_names(r), [pair("target", "t2")]);
    assert_eq!(func_exports(r), ["main", "f0", "f1"]);
    assert!(r.exports.iter().any(|e| e.kind == ExternKind::Memory));
    assert_eq!(p.wiring.target_export_name, "t2");
    assert_eq!(validate_partition(&p), vec![]);
}

#[test]
fn middle_target_imports_its_callee() {
    let p = split(&m0(), FunctionIndex(1)).unwrap();
    assert_eq!(p.target_module.functions.len(), 1);
    assert_eq!(import_names(&p.target_module), [pair("rem", "memory"), pair("rem", "f2")]);
    assert_eq!(p.wiring.target_imports, [2]);
    assert_eq!(p.remaining_module.functions.len(), 2);
    assert_eq!(validate_partition(&p), vec![]);
}

#[test]
fn single_function_module() {
    let bytes = wat::parse_str(r#"(module (func (export "main") (result i32) i32.const 5))"#).unwrap();
    let m = parse_module(&bytes).unwrap();
    let p = split(&m, FunctionIndex(0)).unwrap();
    assert!(p.target_module.imports.is_empty());
    assert!(p.remaining_module.functions.is_empty());
    assert_eq!(import_names(&p.remaining_module), [pair("target", "t0")]);
    assert_eq!(validate_partition(&p), vec![]);
    let merged = merge(&p.target_module, &p.remaining_module, &p.wiring).unwrap();
    assert!(merged.imports.is_empty());
    assert_eq!(merged.functions.len(), 1);
}

#[test]
fn imported_or_missing_targets_are_rejected() {
    let bytes = wat::parse_str(r#"(module (import "host" "putc" (func (param i32))) (func))"#).unwrap();
    let m = parse_module(&bytes).unwrap();
    assert_eq!(split(&m, FunctionIndex(0)), Err(SplitError::InvalidTarget(0)));
    assert_eq!(split(&m, FunctionIndex(2)), Err(SplitError::InvalidTarget(2)));
}

#[test]
fn deleted_export_is_diagnosed() {
    let mut p = split(&m0(), FunctionIndex(1)).unwrap();
    p.remaining_module.exports.retain(|e| e.name != "f2");
    assert_eq!(
        validate_partition(&p),
        vec![Diagnostic::UnresolvedImport {
            side: Side::Target,
            module: "rem".into(),
            name: "f2".into(),
        }]
    );
}

#[test]
fn mismatched_import_type_is_diagnosed() {
    let mut p = split(&m0(), FunctionIndex(1)).unwrap();
    // Point the import of f2 at a fresh type with no parameters.
    let ty = p.target_module.intern_type(rr_reduce_core::wasm::FuncType::new([], []));
    for imp in &mut p.target_module.imports {
        if imp.name == "f2" {
            imp.kind = ImportKind::Func(ty);
        }
    }
    let d = validate_partition(&p);
    assert_eq!(d.len(), 1, "{d:?}");
    assert!(
        matches!(&d[0], Diagnostic::TypeMismatch { side: Side::Target, name, .. } if name == "f2"),
        "{d:?}"
    );
}

#[test]
fn merging_an_unknown_import_fails() {
    let mut p = split(&m0(), FunctionIndex(1)).unwrap();
    p.remaining_module.exports.retain(|e| e.name != "f2");
    assert!(matches!(
        merge(&p.target_module, &p.remaining_module, &p.wiring),
        Err(MergeError::UnresolvedImport { .. })
    ));
}

#[test]
fn partitions_of_the_corpus_validate() {
    for (name, bytes) in corpus() {
        let m = parse_module(&bytes).unwrap();
        for t in m.num_imported_funcs()..m.num_funcs() {
            let p = split(&m, FunctionIndex(t)).unwrap();
            assert_eq!(p.target_module.functions.len(), 1, "{name} t={t}");
            assert_eq!(
                p.remaining_module.functions.len() + 1,
                m.functions.len(),
                "{name} t={t}"
            );
            for side in [&p.target_module, &p.remaining_module] {
                wasmparser::Validator::new()
                    .validate_all(&encode_module(side))
                    .unwrap_or_else(|e| panic!("{name} t={t}: {e}"));
            }
        }
    }
}

#[test]
fn candidates_import_only_host_functions() {
    for (name, bytes) in corpus() {
        let m = parse_module(&bytes).unwrap();
        for t in m.num_imported_funcs()..m.num_funcs() {
            let b = build(&m, t, true).unwrap();
            assert!(
                b.candidate.imports.iter().all(|i| i.module == "host"),
                "{name} t={t}: {:?}",
                import_names(&b.candidate)
            );
            assert!(b.candidate.imports.len() <= m.imports.len(), "{name} t={t}");
        }
    }
}

#[test]
fn running_example_candidate_has_no_imports() {
    let m = m0();
    for t in 0..3 {
        let b = build(&m, t, true).unwrap();
        assert!(b.candidate.imports.is_empty(), "t={t}");
        wasmparser::Validator::new().validate_all(&b.bytes).unwrap();
    }
}
