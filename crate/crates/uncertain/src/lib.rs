//! Standard-library companion to [`uncertain_core`]: file formats, trace
//! ingestion and generation, replay, reporting, live tracing, and the
//! campaign harness. The `uncertain` binary in this crate exposes it all
//! on the command line.

pub mod cli;
pub mod config;
pub mod fixtures;
pub mod harness;
pub mod outcome;
pub mod replay;
pub mod report;
pub mod scenario;
pub mod strace_import;
pub mod trace;
pub mod tracer;

pub use config::{ConfigError, ConfigMode, PolicyConfig};
pub use outcome::{classify_outcome, Outcome, RunResult};
pub use replay::{replay_trace, DecisionRecord, ReplayOutput, StatsDocument};
pub use scenario::{generate_scenario, Archetype, ScenarioSpec};
pub use trace::{load_trace, save_trace, TraceError, TraceFile, TraceHeader};
