//! Execution: the interpreter, the plain-run harness, and the boundary
//! recorder for split programs.

mod harness;
pub mod interp;
mod record;

pub(crate) use record::nonzero_runs;

pub use harness::{
    run_module, run_wasm_module, ExecLimits, HarnessError, HostEnv, RunOutcome, RunStatus,
    HOST_MODULE,
};
pub use record::{
    run_partition_recording, run_partition_recording_with, Observation, ObservedState, ObservedValue,
    RecordOptions, Recording,
};
