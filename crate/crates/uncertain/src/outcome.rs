//! Run-outcome classification: compare a (possibly traced and perturbed)
//! run against its clean baseline and bucket it as Succeeded, Hampered,
//! or Crashed.

use serde::{Deserialize, Serialize};

/// How a run ended relative to its baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Exit status and stdout match the baseline, within the runtime
    /// budget.
    Succeeded,
    /// Finished without crashing but diverged: different output, or a
    /// different (non-fatal) exit.
    Hampered,
    /// Killed by a signal, exited nonzero where the baseline was clean,
    /// or ran past the runtime budget.
    Crashed,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Succeeded => "succeeded",
            Outcome::Hampered => "hampered",
            Outcome::Crashed => "crashed",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a process exited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatusKind {
    Code(i32),
    Signal(i32),
    /// Killed by the watchdog after exhausting the runtime budget.
    Timeout,
}

/// Observables of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub exit: ExitStatusKind,
    pub stdout: Vec<u8>,
    pub runtime_seconds: f64,
}

impl RunResult {
    pub fn new(exit: ExitStatusKind, stdout: Vec<u8>, runtime_seconds: f64) -> Self {
        RunResult {
            exit,
            stdout,
            runtime_seconds,
        }
    }
}

/// Floor applied to the baseline runtime before computing the budget:
/// trace-stop overhead dominates sub-second programs, and a millisecond
/// baseline would otherwise classify any traced run as over budget.
pub const MIN_BASELINE_RUNTIME: f64 = 0.5;

/// Classifies `run` against `baseline` (captured with threshold 0).
///
/// The runtime budget is `timeout_factor ×
/// max(baseline.runtime_seconds, MIN_BASELINE_RUNTIME)`. Crashed: signal
/// death, timeout, a nonzero exit where the baseline exited zero, or
/// finishing past the budget. Succeeded: same exit status, byte-identical
/// stdout, within budget. Everything else: Hampered.
pub fn classify_outcome(run: &RunResult, baseline: &RunResult, timeout_factor: f64) -> Outcome {
    let budget = timeout_factor * baseline.runtime_seconds.max(MIN_BASELINE_RUNTIME);
    match run.exit {
        ExitStatusKind::Timeout | ExitStatusKind::Signal(_) => Outcome::Crashed,
        ExitStatusKind::Code(_) if run.runtime_seconds > budget => Outcome::Crashed,
        ExitStatusKind::Code(code) => {
            let baseline_zero = baseline.exit == ExitStatusKind::Code(0);
            if code != 0 && baseline_zero {
                Outcome::Crashed
            } else if run.exit == baseline.exit && run.stdout == baseline.stdout {
                Outcome::Succeeded
            } else {
                Outcome::Hampered
            }
        }
    }
}
