use wasmparser::{Validator, WasmFeatures};

/// The accepted feature set: Wasm 2.0 without SIMD.
pub fn wasm2_features() -> WasmFeatures {
    WasmFeatures::WASM2.difference(WasmFeatures::SIMD | WasmFeatures::RELAXED_SIMD)
}

/// Full validation of an encoded module. Returns the validator's message on
/// failure.
pub fn validate_module(bytes: &[u8]) -> Result<(), String> {
    Validator::new_with_features(wasm2_features())
        .validate_all(bytes)
        .map(|_| ())
        .map_err(|e| e.to_string())
}
