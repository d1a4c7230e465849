use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rr_reduce_core::exec::{run_module, ExecLimits, HarnessError, RunStatus};
use rr_reduce_core::oracle::{run_oracle, Divergence, OracleConfig, OracleMode, Signature};
use rr_reduce_core::reduce::{hybrid_reduce, reduce_program, ExternalReducer, ReduceError, ReduceOptions};
use rr_reduce_core::report::{summary_line, write_report};
use rr_reduce_core::split::{dump_partition, split, validate_partition};
use rr_reduce_core::wasm::{self, FunctionIndex};

const EXIT_NOT_INTERESTING: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_INTERNAL: u8 = 4;
const EXIT_TRAP: u8 = 134;
const EXIT_EXHAUSTED: u8 = 125;

/// Reduce a WebAssembly program to one function plus replay code.
#[derive(Parser, Debug)]
#[command(name = "rr-reduce", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Cmd>,
    #[command(flatten)]
    reduce: ReduceArgs,
}

#[derive(Args, Debug)]
struct ReduceArgs {
    /// Program to reduce.
    input: Option<PathBuf>,
    /// Oracle script; called with the candidate path, exit 0 means interesting.
    #[arg(long, conflicts_with_all = ["buggy_cmd", "ref_cmd"])]
    oracle: Option<PathBuf>,
    /// Engine command that exhibits the bug; the candidate path is appended.
    #[arg(long, requires = "ref_cmd")]
    buggy_cmd: Option<String>,
    /// Reference engine command; the candidate path is appended.
    #[arg(long, requires = "buggy_cmd")]
    ref_cmd: Option<String>,
    /// Where to write the reduced program.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// External reducer run on the result, e.g. "wasm-reduce {input} -o {output} -c {oracle}".
    #[arg(long)]
    hybrid: Option<String>,
    /// Engine output to search for function indices.
    #[arg(long)]
    engine_log: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Seconds allowed per candidate.
    #[arg(long, default_value_t = 600.0)]
    candidate_timeout: f64,
    /// Seconds allowed per oracle run.
    #[arg(long, default_value_t = 600.0)]
    oracle_timeout: f64,
    /// Extra oracle runs for candidates judged uninteresting.
    #[arg(long, default_value_t = 0)]
    oracle_retries: u32,
    /// Overall time budget in seconds; no new candidate starts after it.
    #[arg(long)]
    budget: Option<f64>,
    /// Instruction budget for every execution.
    #[arg(long)]
    fuel: Option<u64>,
    /// Export that runs the program.
    #[arg(long, default_value = "main")]
    entry: String,
    /// Keep intermediate files under this directory.
    #[arg(long, value_name = "DIR")]
    keep_temps: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write each candidate's reduced trace (implies keeping temporaries).
    #[arg(long)]
    trace_dump: bool,
    /// Environment variables for the oracle, as KEY=VALUE.
    #[arg(long = "env", value_name = "KEY=VALUE")]
    env: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run a program and report its output and status.
    Run {
        file: PathBuf,
        #[arg(long, default_value = "main")]
        entry: String,
        #[arg(long)]
        fuel: Option<u64>,
    },
    /// Split a program around one function and write both halves.
    Split {
        file: PathBuf,
        #[arg(long)]
        target: u32,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Exit 0 if running a program shows the given behavior.
    #[command(hide = true)]
    OracleCheck {
        file: PathBuf,
        #[arg(long, default_value = "main")]
        entry: String,
        /// Expected trap message substring.
        #[arg(long)]
        trap: Option<String>,
        /// Canonical body hash of the function the trap must happen in.
        #[arg(long, requires = "trap")]
        trap_in_body: Option<String>,
        /// Expected exact stdout.
        #[arg(long)]
        stdout: Option<String>,
        /// Expected exit code.
        #[arg(long, conflicts_with = "trap")]
        exit_code: Option<i32>,
        #[arg(long)]
        fuel: Option<u64>,
    },
    /// Exit 0 if two engines diverge on a program.
    #[command(hide = true)]
    DiffCheck {
        file: PathBuf,
        #[arg(long)]
        buggy_cmd: String,
        #[arg(long)]
        ref_cmd: String,
        #[arg(long)]
        signature: Option<Divergence>,
        #[arg(long, default_value_t = 600.0)]
        timeout: f64,
        #[arg(long = "env", value_name = "KEY=VALUE")]
        env: Vec<String>,
    },
    /// Print the canonical body hash of a defined function.
    #[command(hide = true)]
    BodyHash {
        file: PathBuf,
        #[arg(long)]
        func: u32,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Some(cmd) => subcommand(cmd),
        None => reduce(cli.reduce),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<ReduceError>() {
                Some(ReduceError::InputNotInteresting) => EXIT_NOT_INTERESTING,
                Some(ReduceError::InputInvalid(_)) => EXIT_INVALID,
                _ if e.downcast_ref::<HarnessError>().is_some() => EXIT_INVALID,
                _ => EXIT_INTERNAL,
            };
            ExitCode::from(code)
        }
    }
}

fn limits(fuel: Option<u64>) -> ExecLimits {
    let mut l = ExecLimits::default();
    if let Some(f) = fuel {
        l.fuel = f;
    }
    l
}

fn parse_env(env: &[String]) -> Result<Vec<(String, String)>> {
    env.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| anyhow!("expected KEY=VALUE, got `{kv}`"))
        })
        .collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn reduce(args: ReduceArgs) -> Result<u8> {
    let Some(input_path) = args.input else {
        bail!("no input program given (see --help)");
    };
    let input = read(&input_path)?;
    let mode = match (args.oracle, args.buggy_cmd, args.ref_cmd) {
        (Some(script), None, None) => OracleMode::Script(script),
        (None, Some(buggy_cmd), Some(reference_cmd)) => OracleMode::Differential {
            buggy_cmd,
            reference_cmd,
        },
        _ => bail!("give either --oracle or both --buggy-cmd and --ref-cmd"),
    };
    let cfg = OracleConfig {
        mode,
        timeout: Duration::from_secs_f64(args.oracle_timeout),
        env: parse_env(&args.env)?,
        retries: args.oracle_retries,
        signature: None,
    };
    let engine_log = match &args.engine_log {
        Some(p) => Some(String::from_utf8_lossy(&read(p)?).into_owned()),
        None => None,
    };
    let keep_temps = match (args.keep_temps, args.trace_dump) {
        (Some(d), _) => Some(d),
        (None, true) => Some(std::env::temp_dir().join("rr-reduce-temps")),
        (None, false) => None,
    };
    let opts = ReduceOptions {
        jobs: args.jobs.unwrap_or(0),
        per_candidate_timeout: Duration::from_secs_f64(args.candidate_timeout),
        limits: limits(args.fuel),
        engine_log,
        entry: args.entry,
        keep_temps,
        trace_dump: args.trace_dump,
        budget: args.budget.map(Duration::from_secs_f64),
    };
    let result = match &args.hybrid {
        Some(template) => {
            let external = ExternalReducer {
                template: template.clone(),
                timeout: opts.per_candidate_timeout,
                oracle_script: None,
                checker: std::env::current_exe().ok(),
            };
            hybrid_reduce(&input, &cfg, &external, &opts)?
        }
        None => reduce_program(&input, &cfg, &opts)?,
    };
    let output = args.output.unwrap_or_else(|| input_path.with_extension("reduced.wasm"));
    std::fs::write(&output, &result.output_bytes).with_context(|| format!("writing {}", output.display()))?;
    let summary = match &args.report {
        Some(p) => write_report(&result, p).with_context(|| format!("writing {}", p.display()))?,
        None => summary_line(&result),
    };
    println!("{summary}");
    println!("output written to {}", output.display());
    Ok(0)
}

fn subcommand(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Run { file, entry, fuel } => {
            let out = run_module(&read(&file)?, &entry, &limits(fuel))?;
            use std::io::Write;
            std::io::stdout().write_all(&out.stdout)?;
            std::io::stderr().write_all(&out.stderr)?;
            Ok(match out.status {
                RunStatus::NormalExit(c) => c as u8,
                RunStatus::Trap { .. } => EXIT_TRAP,
                RunStatus::ResourceExhausted(_) => EXIT_EXHAUSTED,
            })
        }
        Cmd::Split { file, target, output } => {
            let m = wasm::parse_module(&read(&file)?).map_err(|e| ReduceError::InputInvalid(e.to_string()))?;
            let p = split(&m, FunctionIndex(target))?;
            for d in validate_partition(&p) {
                eprintln!("warning: {d}");
            }
            dump_partition(&p, &output)?;
            println!("wrote {}", output.display());
            Ok(0)
        }
        Cmd::OracleCheck {
            file,
            entry,
            trap,
            trap_in_body,
            stdout,
            exit_code,
            fuel,
        } => {
            let sig = Signature {
                entry,
                trap,
                trap_in_body,
                stdout: stdout.map(String::into_bytes),
                exit_code,
            };
            Ok(if sig.matches(&read(&file)?, &limits(fuel)) { 0 } else { 1 })
        }
        Cmd::DiffCheck {
            file,
            buggy_cmd,
            ref_cmd,
            signature,
            timeout,
            env,
        } => {
            let cfg = OracleConfig {
                timeout: Duration::from_secs_f64(timeout),
                env: parse_env(&env)?,
                signature,
                ..OracleConfig::differential(buggy_cmd, ref_cmd)
            };
            // A timeout counts as uninteresting.
            Ok(match run_oracle(&file, &cfg) {
                Ok(v) if v.interesting => 0,
                _ => 1,
            })
        }
        Cmd::BodyHash { file, func } => {
            let m = wasm::parse_module(&read(&file)?).map_err(|e| ReduceError::InputInvalid(e.to_string()))?;
            println!("{}", wasm::canonical_body_hash(m.defined_func(FunctionIndex(func))?)?);
            Ok(0)
        }
    }
}
