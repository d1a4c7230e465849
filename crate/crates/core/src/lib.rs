//! Shrinks a WebAssembly program down to one suspect function plus
//! generated code that feeds it the inputs it saw in the original run.

pub mod wasm;
pub mod exec;
pub mod split;
pub mod trace;
pub mod merge;
pub mod replay;
pub mod candidates;
pub mod oracle;
pub mod reduce;
pub mod report;
