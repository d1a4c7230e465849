//! JSON report of a reduction run.

use std::path::Path;

use serde::Serialize;

use crate::reduce::ReductionResult;

#[derive(Debug, Serialize)]
struct Report<'a> {
    summary: String,
    /// `size_all` as a percentage of the input code size.
    pct_all: f64,
    /// `size_target` as a percentage of the input code size.
    pct_target: f64,
    #[serde(flatten)]
    result: &'a ReductionResult,
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        100.0
    } else {
        part as f64 * 100.0 / whole as f64
    }
}

/// One line describing the outcome.
pub fn summary_line(r: &ReductionResult) -> String {
    if !r.succeeded {
        return format!(
            "no reduction: {} candidate(s) tried, output is the input ({} bytes of code), {:.2}s",
            r.attempts.len(),
            r.input_size,
            r.elapsed
        );
    }
    let target = r.target.map_or("?".into(), |t| t.to_string());
    format!(
        "reduced {} -> {} bytes of code ({:.2}%), target function {} is {} bytes ({:.2}%), {} attempt(s), {:.2}s",
        r.input_size,
        r.size_all,
        pct(r.size_all, r.input_size),
        target,
        r.size_target.unwrap_or(0),
        pct(r.size_target.unwrap_or(0), r.input_size),
        r.attempts.len(),
        r.elapsed
    )
}

/// Write the report as JSON to `path` and return the summary line.
pub fn write_report(r: &ReductionResult, path: &Path) -> std::io::Result<String> {
    let summary = summary_line(r);
    // A failed run keeps the whole input, so both ratios are 100%.
    let (pct_all, pct_target) = if r.succeeded {
        (pct(r.size_all, r.input_size), pct(r.size_target.unwrap_or(0), r.input_size))
    } else {
        (100.0, 100.0)
    };
    let report = Report {
        summary: summary.clone(),
        pct_all,
        pct_target,
        result: r,
    };
    let json = serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?;
    std::fs::write(path, json + "\n")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::CandidateSets;

    fn failed() -> ReductionResult {
        ReductionResult {
            output_bytes: vec![0, 97, 115, 109],
            succeeded: false,
            target: None,
            target_export: None,
            target_hash: None,
            size_all: 40,
            size_target: None,
            input_size: 40,
            elapsed: 0.5,
            attempts: Vec::new(),
            candidates: CandidateSets::default(),
            signature: None,
            external: None,
        }
    }

    #[test]
    fn failed_run_reports_full_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_report(&failed(), &path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["pct_all"], 100.0);
        assert_eq!(v["pct_target"], 100.0);
        assert_eq!(v["succeeded"], false);
        assert_eq!(v["input_size"], 40);
        assert!(v.get("output_bytes").is_none());
    }
}
