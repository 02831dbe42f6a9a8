//! Live syscall tracer. The real backend is a Linux/x86_64 ptrace
//! SYSCALL-stop loop ([`linux`]); every other platform reports
//! [`TracerError::Unsupported`] so callers can degrade to replay-only
//! operation. The untraced runner ([`run_untraced`]) is portable and
//! supplies outcome baselines.

#[cfg(all(target_os = "linux", target_arch = "x86_64"))]
mod linux;

use std::process::{Command, Stdio};
use std::time::Instant;

use uncertain_core::{PolicyError, PolicySettings};

use crate::outcome::{ExitStatusKind, RunResult};
use crate::replay::DecisionRecord;
use crate::trace::TraceFile;

/// A program to run: argv[0] plus arguments. Bare program names resolve
/// through `PATH`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecSpec {
    pub program: String,
    pub args: Vec<String>,
}

impl ExecSpec {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        ExecSpec {
            program: program.into(),
            args,
        }
    }
}

/// Everything a traced run produces: the child-visible result, the
/// recorded event trace (exactly what the engine saw, per-task ordered),
/// and the engine's decision log. Replaying `trace` with the same
/// settings and seed reproduces `records` byte for byte.
#[derive(Debug)]
pub struct TracedRun {
    pub result: RunResult,
    pub trace: TraceFile,
    pub records: Vec<DecisionRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TracerError {
    #[error("live tracing requires linux/x86_64 (ptrace); this platform is unsupported")]
    Unsupported,
    #[error("failed to spawn {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("ptrace {op} failed: {source}")]
    Ptrace {
        op: &'static str,
        #[source]
        source: std::io::Error,
    },
    #[error("wait on tracee failed: {source}")]
    Wait {
        #[source]
        source: std::io::Error,
    },
    #[error("policy rejected a live event: {0}")]
    Policy(#[from] PolicyError),
    #[error("i/o failure on {what}: {source}")]
    Io {
        what: &'static str,
        #[source]
        source: std::io::Error,
    },
}

/// Runs `spec` under the interference tracer. `watchdog_seconds`, when
/// set, SIGKILLs the child's process group once the budget elapses and
/// reports the run as [`ExitStatusKind::Timeout`].
pub fn run_traced(
    spec: &ExecSpec,
    settings: &PolicySettings,
    seed: u64,
    watchdog_seconds: Option<f64>,
) -> Result<TracedRun, TracerError> {
    #[cfg(all(target_os = "linux", target_arch = "x86_64"))]
    {
        linux::run_traced(spec, settings, seed, watchdog_seconds)
    }
    #[cfg(not(all(target_os = "linux", target_arch = "x86_64")))]
    {
        let _ = (spec, settings, seed, watchdog_seconds);
        Err(TracerError::Unsupported)
    }
}

/// Runs `spec` without interference and captures its stdout — the
/// baseline side of outcome classification.
pub fn run_untraced(spec: &ExecSpec) -> Result<RunResult, TracerError> {
    let start = Instant::now();
    let output = Command::new(&spec.program)
        .args(&spec.args)
        .stdin(Stdio::null())
        .output()
        .map_err(|source| TracerError::Spawn {
            program: spec.program.clone(),
            source,
        })?;
    Ok(RunResult::new(
        exit_kind(&output.status),
        output.stdout,
        start.elapsed().as_secs_f64(),
    ))
}

/// Whether live tracing actually works here — the platform compiles the
/// backend *and* the runtime allows ptrace (containers often do not).
/// Probes by tracing a trivial run at threshold zero.
pub fn ptrace_available() -> bool {
    #[cfg(all(target_os = "linux", target_arch = "x86_64"))]
    {
        linux::probe()
    }
    #[cfg(not(all(target_os = "linux", target_arch = "x86_64")))]
    {
        false
    }
}

fn exit_kind(status: &std::process::ExitStatus) -> ExitStatusKind {
    if let Some(code) = status.code() {
        return ExitStatusKind::Code(code);
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        ExitStatusKind::Signal(status.signal().unwrap_or(0))
    }
    #[cfg(not(unix))]
    {
        ExitStatusKind::Code(-1)
    }
}
