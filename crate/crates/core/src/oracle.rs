//! Interestingness oracles: user scripts, differential engine runs, and
//! in-process signature checks.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::exec::{run_module, ExecLimits, RunStatus};
use crate::wasm::{self, FunctionIndex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMode {
    /// Run `path <candidate>`; exit code 0 means interesting.
    Script(PathBuf),
    /// Run both engine commands with the candidate path appended.
    Differential { buggy_cmd: String, reference_cmd: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub mode: OracleMode,
    pub timeout: Duration,
    pub env: Vec<(String, String)>,
    /// Extra runs granted to a candidate that was judged uninteresting.
    pub retries: u32,
    /// Divergence class the candidate must reproduce in differential mode.
    /// `None` accepts any divergence.
    pub signature: Option<Divergence>,
}

impl OracleConfig {
    pub fn script(path: impl Into<PathBuf>) -> OracleConfig {
        OracleConfig {
            mode: OracleMode::Script(path.into()),
            timeout: Duration::from_secs(60),
            env: Vec::new(),
            retries: 0,
            signature: None,
        }
    }

    pub fn differential(buggy_cmd: impl Into<String>, reference_cmd: impl Into<String>) -> OracleConfig {
        OracleConfig {
            mode: OracleMode::Differential {
                buggy_cmd: buggy_cmd.into(),
                reference_cmd: reference_cmd.into(),
            },
            ..OracleConfig::script("")
        }
    }
}

/// How the buggy engine's run differs from the reference run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Divergence {
    #[serde(rename = "crash")]
    BuggyCrash,
    #[serde(rename = "status")]
    ExitStatus,
    #[serde(rename = "stdout")]
    Stdout,
}

impl std::str::FromStr for Divergence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "crash" => Ok(Divergence::BuggyCrash),
            "status" => Ok(Divergence::ExitStatus),
            "stdout" => Ok(Divergence::Stdout),
            _ => Err(format!("unknown divergence class `{s}`")),
        }
    }
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Divergence::BuggyCrash => "crash",
            Divergence::ExitStatus => "status",
            Divergence::Stdout => "stdout",
        })
    }
}

/// What one process run looked like.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessSummary {
    pub exit_code: Option<i32>,
    /// Killed by a signal, or exited with a code of 128 or more.
    pub crashed: bool,
    pub stdout: String,
    pub stderr: String,
}

impl ProcessSummary {
    fn from_status(status: ExitStatus, stdout: String, stderr: String) -> ProcessSummary {
        let code = status.code();
        ProcessSummary {
            exit_code: code,
            crashed: code.is_none_or(|c| !(0..128).contains(&c)),
            stdout,
            stderr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleVerdict {
    pub interesting: bool,
    pub buggy_outcome: ProcessSummary,
    pub reference_outcome: Option<ProcessSummary>,
    pub elapsed: f64,
    /// Divergence observed in differential mode.
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle timed out after {0:?}")]
    OracleTimeout(Duration),
    #[error("oracle could not be started: {0}")]
    OracleCrashed(String),
}

/// Anything that can judge a candidate file.
pub trait Oracle: Sync {
    fn check(&self, candidate: &Path) -> Result<OracleVerdict, OracleError>;
}

impl Oracle for OracleConfig {
    fn check(&self, candidate: &Path) -> Result<OracleVerdict, OracleError> {
        let mut verdict = run_oracle(candidate, self)?;
        for _ in 0..self.retries {
            if verdict.interesting {
                break;
            }
            verdict = run_oracle(candidate, self)?;
        }
        Ok(verdict)
    }
}

pub fn run_oracle(candidate: &Path, cfg: &OracleConfig) -> Result<OracleVerdict, OracleError> {
    let started = Instant::now();
    match &cfg.mode {
        OracleMode::Script(script) => {
            let out = run_process(&[script.to_string_lossy().into_owned()], candidate, cfg)?;
            log::debug!("oracle stdout: {}", out.stdout);
            log::debug!("oracle stderr: {}", out.stderr);
            Ok(OracleVerdict {
                interesting: out.exit_code == Some(0),
                buggy_outcome: out,
                reference_outcome: None,
                elapsed: started.elapsed().as_secs_f64(),
                divergence: None,
            })
        }
        OracleMode::Differential {
            buggy_cmd,
            reference_cmd,
        } => {
            let buggy = run_process(&split_command(buggy_cmd)?, candidate, cfg)?;
            let reference = run_process(&split_command(reference_cmd)?, candidate, cfg)?;
            let divergence = classify(&buggy, &reference);
            let interesting = match (divergence, cfg.signature) {
                (Some(d), Some(want)) => d == want,
                (Some(_), None) => true,
                (None, _) => false,
            };
            Ok(OracleVerdict {
                interesting,
                buggy_outcome: buggy,
                reference_outcome: Some(reference),
                elapsed: started.elapsed().as_secs_f64(),
                divergence,
            })
        }
    }
}

/// Divergence class of a buggy/reference pair, if the reference run
/// terminated normally and the runs differ.
pub fn classify(buggy: &ProcessSummary, reference: &ProcessSummary) -> Option<Divergence> {
    if reference.crashed {
        None
    } else if buggy.crashed {
        Some(Divergence::BuggyCrash)
    } else if buggy.exit_code != reference.exit_code {
        Some(Divergence::ExitStatus)
    } else if buggy.stdout != reference.stdout {
        Some(Divergence::Stdout)
    } else {
        None
    }
}

fn split_command(cmd: &str) -> Result<Vec<String>, OracleError> {
    match shlex::split(cmd) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(OracleError::OracleCrashed(format!("cannot parse command `{cmd}`"))),
    }
}

/// Run `argv` with `candidate` appended, capturing output through
/// temporary files so large outputs cannot block the child.
fn run_process(argv: &[String], candidate: &Path, cfg: &OracleConfig) -> Result<ProcessSummary, OracleError> {
    let crashed = |e: std::io::Error| OracleError::OracleCrashed(format!("{}: {e}", argv[0]));
    let out = tempfile::tempfile().map_err(crashed)?;
    let err = tempfile::tempfile().map_err(crashed)?;
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .arg(candidate)
        .envs(cfg.env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::null())
        .stdout(out.try_clone().map_err(crashed)?)
        .stderr(err.try_clone().map_err(crashed)?)
        .spawn()
        .map_err(crashed)?;
    let status = match child.wait_timeout(cfg.timeout).map_err(crashed)? {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(OracleError::OracleTimeout(cfg.timeout));
        }
    };
    Ok(ProcessSummary::from_status(status, read_all(out), read_all(err)))
}

fn read_all(mut f: File) -> String {
    use std::io::{Read, Seek, SeekFrom};
    let mut s = Vec::new();
    let _ = f.seek(SeekFrom::Start(0)).and_then(|_| f.read_to_end(&mut s));
    String::from_utf8_lossy(&s).into_owned()
}

/// A behavior to look for when running a module under the harness.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub entry: String,
    /// Substring of the trap message. `None` means the run must not trap.
    pub trap: Option<String>,
    /// Canonical hash of the function the trap must occur in.
    pub trap_in_body: Option<String>,
    /// Exact expected stdout.
    pub stdout: Option<Vec<u8>>,
    /// Exact expected exit code for normal termination.
    pub exit_code: Option<i32>,
}

impl Signature {
    /// Whether running `bytes` exhibits this signature. Invalid modules
    /// never do.
    pub fn matches(&self, bytes: &[u8], limits: &ExecLimits) -> bool {
        let Ok(out) = run_module(bytes, &self.entry, limits) else {
            return false;
        };
        if let Some(want) = &self.stdout {
            if &out.stdout != want {
                return false;
            }
        }
        match (&out.status, &self.trap) {
            (RunStatus::Trap { message, .. }, Some(want)) => {
                if !message.contains(want.as_str()) {
                    return false;
                }
                match &self.trap_in_body {
                    None => true,
                    Some(hash) => innermost_hash(bytes, &out.stderr).as_deref() == Some(hash.as_str()),
                }
            }
            (RunStatus::NormalExit(c), None) => self.exit_code.is_none_or(|want| want == *c),
            _ => false,
        }
    }
}

/// Canonical hash of the innermost function named in a trap report.
fn innermost_hash(bytes: &[u8], stderr: &[u8]) -> Option<String> {
    let text = String::from_utf8_lossy(stderr);
    let idx: u32 = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("at func "))?
        .parse()
        .ok()?;
    let m = wasm::parse_module(bytes).ok()?;
    wasm::canonical_body_hash(m.defined_func(FunctionIndex(idx)).ok()?).ok()
}

/// In-process oracle backed by a [`Signature`].
#[derive(Debug, Clone)]
pub struct SignatureOracle {
    pub signature: Signature,
    pub limits: ExecLimits,
}

impl Oracle for SignatureOracle {
    fn check(&self, candidate: &Path) -> Result<OracleVerdict, OracleError> {
        let started = Instant::now();
        let bytes = std::fs::read(candidate).map_err(|e| OracleError::OracleCrashed(e.to_string()))?;
        let interesting = self.signature.matches(&bytes, &self.limits);
        Ok(OracleVerdict {
            interesting,
            buggy_outcome: ProcessSummary {
                exit_code: Some(if interesting { 0 } else { 1 }),
                crashed: false,
                stdout: String::new(),
                stderr: String::new(),
            },
            reference_outcome: None,
            elapsed: started.elapsed().as_secs_f64(),
            divergence: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::os::unix::fs::PermissionsExt;

    fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        writeln!(f, "#!/bin/sh\n{body}").unwrap();
        drop(f);
        std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
        p
    }

    #[test]
    fn exit_code_decides_script_verdict() {
        let dir = tempfile::tempdir().unwrap();
        let cand = dir.path().join("c.wasm");
        std::fs::write(&cand, b"").unwrap();
        let yes = script(dir.path(), "yes.sh", "exit 0");
        let no = script(dir.path(), "no.sh", "exit 1");
        assert!(run_oracle(&cand, &OracleConfig::script(yes)).unwrap().interesting);
        assert!(!run_oracle(&cand, &OracleConfig::script(no)).unwrap().interesting);
    }

    #[test]
    fn slow_script_times_out() {
        let dir = tempfile::tempdir().unwrap();
        let slow = script(dir.path(), "slow.sh", "sleep 5");
        let mut cfg = OracleConfig::script(slow);
        cfg.timeout = Duration::from_millis(200);
        let r = run_oracle(&dir.path().join("x"), &cfg);
        assert!(matches!(r, Err(OracleError::OracleTimeout(_))));
    }

    #[test]
    fn missing_script_is_a_crash() {
        let cfg = OracleConfig::script("/nonexistent/oracle");
        assert!(matches!(run_oracle(Path::new("x"), &cfg), Err(OracleError::OracleCrashed(_))));
    }

    #[test]
    fn differential_stdout_divergence() {
        let dir = tempfile::tempdir().unwrap();
        let buggy = script(dir.path(), "buggy.sh", "echo 7");
        let reference = script(dir.path(), "ref.sh", "echo 12");
        let mut cfg = OracleConfig::differential(
            buggy.to_string_lossy().into_owned(),
            reference.to_string_lossy().into_owned(),
        );
        let cand = dir.path().join("c.wasm");
        let v = run_oracle(&cand, &cfg).unwrap();
        assert_eq!(v.divergence, Some(Divergence::Stdout));
        cfg.signature = v.divergence;
        assert!(run_oracle(&cand, &cfg).unwrap().interesting);
        cfg.signature = Some(Divergence::BuggyCrash);
        assert!(!run_oracle(&cand, &cfg).unwrap().interesting);
    }

    #[test]
    fn crashing_reference_is_never_interesting() {
        let dir = tempfile::tempdir().unwrap();
        let buggy = script(dir.path(), "buggy.sh", "echo 7");
        let reference = script(dir.path(), "ref.sh", "kill -9 $$");
        let cfg = OracleConfig::differential(
            buggy.to_string_lossy().into_owned(),
            reference.to_string_lossy().into_owned(),
        );
        let v = run_oracle(&dir.path().join("c"), &cfg).unwrap();
        assert!(v.reference_outcome.unwrap().crashed);
        assert!(!v.interesting);
    }
}
