//! Candidate target functions and the order in which they are tried.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::exec::{run_wasm_module, ExecLimits, HarnessError, RunStatus};
use crate::wasm::{self, FunctionIndex, WasmError, WasmModule};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CandidateSets {
    pub heuristic: Vec<FunctionIndex>,
    pub dynamic: Vec<FunctionIndex>,
    pub all: Vec<FunctionIndex>,
}

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error(transparent)]
    Wasm(#[from] WasmError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Result of the coverage run. A run that traps still reports the
/// functions entered before the trap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicSet {
    pub functions: Vec<FunctionIndex>,
    pub status: RunStatus,
}

/// Defined functions in ascending index order.
pub fn compute_all_set(m: &WasmModule) -> Vec<FunctionIndex> {
    (m.num_imported_funcs()..m.num_funcs()).map(FunctionIndex).collect()
}

/// Defined functions executed when running `entry`, in first-execution
/// order.
pub fn compute_dynamic_set(m: &WasmModule, entry: &str, limits: &ExecLimits) -> Result<DynamicSet, CandidateError> {
    let inst = wasm::instrument_function_entries(m)?;
    let out = run_wasm_module(&inst, entry, limits)?;
    Ok(DynamicSet {
        functions: out
            .coverage
            .into_iter()
            .map(FunctionIndex)
            .filter(|&f| m.is_defined_func(f))
            .collect(),
        status: out.status,
    })
}

/// Every maximal digit run in `engine_output` that names a defined
/// function of `m`, by first occurrence.
pub fn compute_heuristic_set(m: &WasmModule, engine_output: &str) -> Vec<FunctionIndex> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for run in engine_output.split(|c: char| !c.is_ascii_digit()).filter(|s| !s.is_empty()) {
        // Runs too long for u32 cannot be valid indices.
        let Ok(v) = run.parse::<u32>() else { continue };
        let f = FunctionIndex(v);
        if m.is_defined_func(f) && seen.insert(f) {
            out.push(f);
        }
    }
    out
}

pub fn enumerate_candidates(s: &CandidateSets) -> Vec<FunctionIndex> {
    let mut seen = HashSet::new();
    s.heuristic
        .iter()
        .chain(&s.dynamic)
        .chain(&s.all)
        .copied()
        .filter(|f| seen.insert(*f))
        .collect()
}

impl CandidateSets {
    /// The candidates split into priority tiers: heuristic, then dynamic
    /// minus heuristic, then the rest. Empty tiers are kept.
    pub fn tiers(&self) -> [Vec<FunctionIndex>; 3] {
        let order = enumerate_candidates(self);
        let h: HashSet<_> = self.heuristic.iter().collect();
        let d: HashSet<_> = self.dynamic.iter().collect();
        let mut tiers: [Vec<FunctionIndex>; 3] = Default::default();
        for f in order {
            let tier = if h.contains(&f) {
                0
            } else if d.contains(&f) {
                1
            } else {
                2
            };
            tiers[tier].push(f);
        }
        tiers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fi(v: &[u32]) -> Vec<FunctionIndex> {
        v.iter().copied().map(FunctionIndex).collect()
    }

    fn sets(h: &[u32], d: &[u32], a: &[u32]) -> CandidateSets {
        CandidateSets {
            heuristic: fi(h),
            dynamic: fi(d),
            all: fi(a),
        }
    }

    #[test]
    fn enumeration_examples() {
        assert_eq!(enumerate_candidates(&sets(&[2], &[0, 1, 2], &[0, 1, 2])), fi(&[2, 0, 1]));
        assert_eq!(enumerate_candidates(&sets(&[], &[], &[0])), fi(&[0]));
        assert_eq!(enumerate_candidates(&sets(&[1, 0], &[0], &[0, 1, 2])), fi(&[1, 0, 2]));
    }

    #[test]
    fn tiers_partition_the_order() {
        let s = sets(&[2], &[0, 2], &[0, 1, 2, 3]);
        assert_eq!(s.tiers(), [fi(&[2]), fi(&[0]), fi(&[1, 3])]);
    }

    #[test]
    fn empty_module_has_no_candidates() {
        let m = WasmModule::default();
        assert!(compute_all_set(&m).is_empty());
        assert!(compute_heuristic_set(&m, "func 0").is_empty());
    }
}
