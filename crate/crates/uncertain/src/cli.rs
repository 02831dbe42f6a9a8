//! Command-line front end.
//!
//! One binary, six verbs plus hidden test fixtures:
//!
//! * `replay`   — run a recorded trace through the policy engine
//! * `run`      — trace a live program and interfere (linux/x86_64)
//! * `gen`      — synthesize a scenario trace
//! * `import`   — convert `strace -f` output into a trace
//! * `campaign` — run a corpus through the strategy/threshold matrix
//! * `report`   — tabulate perturbation rates across standard modes
//!
//! Exit codes: `0` success, `2` usage or configuration errors (clap uses
//! `2` for usage errors too), `3` trace/data errors, `4` live tracing
//! unsupported on this platform, `5` spawn/attach failures. `run` exits
//! with the child's status instead: its code, `128 + signal`, or `124`
//! after a watchdog kill.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use uncertain_core::{
    PolicyError, PolicySettings, ProcessEnv, StrategySet, ThresholdMode, ThresholdParams,
};

use crate::config::{ConfigError, ConfigMode, PolicyConfig};
use crate::fixtures;
use crate::harness::{self, CampaignOptions, HarnessError};
use crate::outcome::{classify_outcome, ExitStatusKind, Outcome};
use crate::replay::{replay_trace, write_decision_log, write_stats};
use crate::report::{render_report, standard_modes, Grouping, ReportInput};
use crate::scenario::{generate_scenario, Archetype, ScenarioSpec};
use crate::strace_import::{import_strace, ImportError};
use crate::trace::{load_trace, save_trace, TraceError, TraceFile};
use crate::tracer::{run_traced, run_untraced, ExecSpec, TracerError};

const DEFAULT_OUT_DIR: &str = "uncertain-out";

#[derive(Debug, Parser)]
#[command(
    name = "uncertain",
    version,
    about = "Deterministic syscall-perturbation policy engine",
    max_term_width = 100
)]
struct Cli {
    /// Policy configuration file (JSON).
    #[arg(long, global = true, env = "UNCERTAIN_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,

    /// Base RNG seed. Precedence: this flag, then $UNCERTAIN_SEED, then
    /// the config file's `seed`, then 0.
    #[arg(long, global = true, env = "UNCERTAIN_SEED", value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

/// Per-invocation policy overrides, applied on top of the config file.
#[derive(Debug, Clone, Default, Args)]
struct PolicyFlags {
    /// Pin a static interference threshold in [0, 1].
    #[arg(long, value_name = "T", conflicts_with = "dynamic")]
    threshold: Option<f64>,

    /// Force the dynamic (escalating) threshold even if the config file
    /// pins a static one.
    #[arg(long)]
    dynamic: bool,

    /// Override the strategy set.
    #[arg(long, value_enum, value_name = "SET")]
    strategy_set: Option<StrategySetArg>,

    /// Treat the target as whitelisted: non-intrusive strategies in a
    /// standard (interference-free) environment.
    #[arg(long)]
    whitelisted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategySetArg {
    NonIntrusive,
    Intrusive,
}

impl From<StrategySetArg> for StrategySet {
    fn from(arg: StrategySetArg) -> Self {
        match arg {
            StrategySetArg::NonIntrusive => StrategySet::NonIntrusive,
            StrategySetArg::Intrusive => StrategySet::Intrusive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupBy {
    Archetype,
    Category,
}

impl From<GroupBy> for Grouping {
    fn from(arg: GroupBy) -> Self {
        match arg {
            GroupBy::Archetype => Grouping::ByArchetype,
            GroupBy::Category => Grouping::ByCategory,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay a recorded trace through the policy engine.
    Replay {
        /// Trace file (JSONL) to replay.
        #[arg(long, value_name = "FILE")]
        trace: PathBuf,

        /// Output directory for decisions.jsonl and stats.json.
        #[arg(long, value_name = "DIR", default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,

        #[command(flatten)]
        policy: PolicyFlags,
    },

    /// Run a program under live syscall interference (linux/x86_64).
    Run {
        /// Output directory for trace.jsonl, decisions.jsonl, and
        /// outcome.json.
        #[arg(long, value_name = "DIR", default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,

        /// Kill the target's process group and report a timeout after
        /// this many seconds.
        #[arg(long, value_name = "SECONDS")]
        watchdog: Option<f64>,

        /// Also run an untraced baseline and classify the traced run
        /// (succeeded / hampered / crashed).
        #[arg(long)]
        classify: bool,

        #[command(flatten)]
        policy: PolicyFlags,

        /// Target program and its arguments (separate with `--`).
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            required = true,
            value_name = "PROGRAM"
        )]
        command: Vec<String>,
    },

    /// Generate a synthetic scenario trace.
    Gen {
        /// Scenario archetype (flooder, virus, spyware, trojan_backdoor,
        /// worm, benign_io, benign_cpu).
        #[arg(long, value_parser = parse_archetype, value_name = "ARCHETYPE")]
        archetype: Archetype,

        /// Scenario label; feeds the per-scenario RNG stream, so
        /// different names give different traces.
        #[arg(long, default_value = "scenario", value_name = "NAME")]
        name: String,

        /// Total event count across all synthetic processes.
        #[arg(long, value_name = "N", default_value_t = 10_000)]
        events: u32,

        /// Number of interleaved synthetic processes.
        #[arg(long, value_name = "N", default_value_t = 1)]
        pids: u32,

        /// Output trace file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },

    /// Convert `strace -f` output into a trace file.
    Import {
        /// strace output to read.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,

        /// Output trace file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },

    /// Run a corpus through the six-cell strategy/threshold matrix.
    Campaign {
        /// Corpus manifest (JSON array of entries).
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,

        /// Output directory for journal.jsonl and summary.json. An
        /// existing journal resumes: finished runs are kept, the rest
        /// execute.
        #[arg(long, value_name = "DIR", default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
    },

    /// Replay traces under the three standard modes (static 10%, static
    /// 50%, dynamic) and tabulate perturbation rates.
    Report {
        /// Trace file to include (repeatable).
        #[arg(long = "trace", value_name = "FILE", required = true, num_args = 1..)]
        traces: Vec<PathBuf>,

        /// Row key: one row per input, or per syscall category.
        #[arg(long = "group-by", value_enum, default_value = "archetype")]
        group_by: GroupBy,

        /// Output directory for report.json and report.txt.
        #[arg(long, value_name = "DIR", default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
    },

    /// Internal fixtures: tiny programs with stable syscall patterns,
    /// used by the test suite as live-tracing targets.
    #[command(hide = true)]
    Fixture {
        #[command(subcommand)]
        fixture: FixtureCommand,
    },
}

#[derive(Debug, Subcommand)]
enum FixtureCommand {
    /// Print 16 numbered lines to stdout and exit 0.
    Emit,
    /// Issue `count` single-syscall writes of `bytes` patterned bytes.
    WriteLoop {
        #[arg(long, default_value_t = 64)]
        count: u32,
        #[arg(long, default_value_t = 512)]
        bytes: u32,
    },
    /// nanosleep once; exit 0 on success, else the errno.
    SleepProbe,
    /// Write an ELF header to a scratch file, dup2 stdin, keep writing.
    ElfThenDup,
}

fn parse_archetype(s: &str) -> Result<Archetype, String> {
    Archetype::from_str(s)
}

/// Error carrying its process exit code; messages go to stderr.
#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<ImportError> for CliError {
    fn from(e: ImportError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match &e {
            HarnessError::Corpus { .. } => CliError::config(e.to_string()),
            HarnessError::Io { .. } | HarnessError::Journal { .. } => CliError::data(e.to_string()),
        }
    }
}

impl From<TracerError> for CliError {
    fn from(e: TracerError) -> Self {
        let code = match &e {
            TracerError::Unsupported => 4,
            TracerError::Spawn { .. } | TracerError::Ptrace { .. } | TracerError::Wait { .. } => 5,
            TracerError::Policy(_) | TracerError::Io { .. } => 3,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

/// Parses arguments from the environment, executes, and returns the
/// process exit code. The caller passes it to `std::process::exit`.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("uncertain: {}", e.message);
            e.code
        }
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    // Fixtures are deliberately config-independent: they must behave
    // identically no matter what $UNCERTAIN_CONFIG points at.
    if let Command::Fixture { fixture } = cli.command {
        return Ok(run_fixture(fixture));
    }

    let config = match &cli.config {
        Some(path) => PolicyConfig::load(path)?,
        None => PolicyConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);

    match cli.command {
        Command::Replay { trace, out, policy } => cmd_replay(&config, &policy, seed, &trace, &out),
        Command::Run {
            out,
            watchdog,
            classify,
            policy,
            command,
        } => cmd_run(&config, &policy, seed, &out, watchdog, classify, &command),
        Command::Gen {
            archetype,
            name,
            events,
            pids,
            out,
        } => cmd_gen(seed, archetype, &name, events, pids, &out),
        Command::Import { input, out } => cmd_import(&input, &out),
        Command::Campaign { corpus, out } => cmd_campaign(&config, seed, &corpus, out),
        Command::Report {
            traces,
            group_by,
            out,
        } => cmd_report(&config, seed, &traces, group_by.into(), &out),
        Command::Fixture { .. } => unreachable!("handled above"),
    }
}

/// Settings from the config file with the per-invocation flags applied.
fn effective_settings(
    config: &PolicyConfig,
    flags: &PolicyFlags,
) -> Result<PolicySettings, CliError> {
    let mut settings = config.to_settings();
    if let Some(t) = flags.threshold {
        if !t.is_finite() || !(0.0..=1.0).contains(&t) {
            return Err(CliError::config(format!(
                "--threshold must be in [0, 1], got {t}"
            )));
        }
        settings.mode = ThresholdMode::Static(t);
    }
    if flags.dynamic {
        settings.mode = ThresholdMode::Dynamic(match config.mode {
            ConfigMode::Dynamic(params) => params,
            ConfigMode::StaticThreshold(_) => ThresholdParams::default(),
        });
    }
    if let Some(set) = flags.strategy_set {
        settings.strategy_set = set.into();
    }
    if flags.whitelisted {
        settings.strategy_set = StrategySet::NonIntrusive;
        settings.process_env = ProcessEnv::Standard;
    }
    Ok(settings)
}

fn exit_code_of(kind: ExitStatusKind) -> i32 {
    match kind {
        ExitStatusKind::Code(code) => code,
        ExitStatusKind::Signal(signal) => 128 + signal,
        ExitStatusKind::Timeout => 124,
    }
}

fn outcome_label(outcome: Outcome) -> &'static str {
    match outcome {
        Outcome::Succeeded => "succeeded",
        Outcome::Hampered => "hampered",
        Outcome::Crashed => "crashed",
    }
}

fn cmd_replay(
    config: &PolicyConfig,
    flags: &PolicyFlags,
    seed: u64,
    trace_path: &Path,
    out: &Path,
) -> Result<i32, CliError> {
    let trace = load_trace(trace_path)?;
    let settings = effective_settings(config, flags)?;
    let output = replay_trace(&trace, &settings, seed)?;
    fs::create_dir_all(out)?;
    write_decision_log(&out.join("decisions.jsonl"), &output.records)?;
    write_stats(&out.join("stats.json"), &output.stats)?;
    let (total, in_set, gated, perturbed) = harness::decision_counts(&output.records);
    println!(
        "replayed {total} events: {in_set} in set, {gated} gated, {perturbed} perturbed -> {}",
        out.display()
    );
    Ok(0)
}

fn cmd_run(
    config: &PolicyConfig,
    flags: &PolicyFlags,
    seed: u64,
    out: &Path,
    watchdog: Option<f64>,
    classify: bool,
    command: &[String],
) -> Result<i32, CliError> {
    if let Some(w) = watchdog {
        if !w.is_finite() || w <= 0.0 {
            return Err(CliError::config(format!(
                "--watchdog must be a positive number of seconds, got {w}"
            )));
        }
    }
    let (program, args) = command.split_first().expect("clap requires a program");
    let spec = ExecSpec::new(program.clone(), args.to_vec());

    let mut settings = effective_settings(config, flags)?;
    if flags.whitelisted || config.is_whitelisted(program) {
        settings.strategy_set = StrategySet::NonIntrusive;
        settings.process_env = ProcessEnv::Standard;
    }

    let traced = run_traced(&spec, &settings, seed, watchdog)?;
    fs::create_dir_all(out)?;
    save_trace(&out.join("trace.jsonl"), &traced.trace)?;
    write_decision_log(&out.join("decisions.jsonl"), &traced.records)?;

    let (total, in_set, gated, perturbed) = harness::decision_counts(&traced.records);
    let mut doc = json!({
        "program": program,
        "args": args,
        "exit": traced.result.exit,
        "runtime_seconds": traced.result.runtime_seconds,
        "events": traced.trace.events.len(),
        "decisions": {
            "total": total,
            "in_set": in_set,
            "gated": gated,
            "perturbed": perturbed,
        },
    });
    if classify {
        let baseline = run_untraced(&spec)?;
        let outcome = classify_outcome(&traced.result, &baseline, config.timeout_factor);
        doc["outcome"] = json!(outcome);
        doc["baseline_runtime_seconds"] = json!(baseline.runtime_seconds);
        eprintln!(
            "uncertain: outcome {} (traced {:.3}s, baseline {:.3}s)",
            outcome_label(outcome),
            traced.result.runtime_seconds,
            baseline.runtime_seconds
        );
    }
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(out.join("outcome.json"), text)?;

    // The child's captured stdout is the run's real output; our own
    // summary goes to stderr so pipelines see only the target's bytes.
    std::io::stdout().write_all(&traced.result.stdout)?;
    eprintln!(
        "uncertain: {total} decisions ({perturbed} perturbed); artifacts in {}",
        out.display()
    );
    Ok(exit_code_of(traced.result.exit))
}

fn cmd_gen(
    seed: u64,
    archetype: Archetype,
    name: &str,
    events: u32,
    pids: u32,
    out: &Path,
) -> Result<i32, CliError> {
    let mut spec = ScenarioSpec::new(name, archetype, events);
    spec.pids = pids;
    let trace = generate_scenario(&spec, seed);
    save_trace(out, &trace)?;
    println!("wrote {} events to {}", trace.events.len(), out.display());
    Ok(0)
}

fn cmd_import(input: &Path, out: &Path) -> Result<i32, CliError> {
    let (trace, report) = import_strace(input)?;
    save_trace(out, &trace)?;
    println!(
        "imported {} events from {} lines ({} in-set, {} other, {} joined, {} skipped) -> {}",
        report.events_out,
        report.lines_total,
        report.lines_recognized,
        report.lines_fallback,
        report.lines_joined,
        report.lines_skipped,
        out.display()
    );
    Ok(0)
}

fn cmd_campaign(
    config: &PolicyConfig,
    seed: u64,
    corpus_path: &Path,
    out: PathBuf,
) -> Result<i32, CliError> {
    let corpus = harness::load_corpus(corpus_path)?;
    let opts = CampaignOptions {
        seed_base: seed,
        base_settings: config.to_settings(),
        timeout_factor: config.timeout_factor,
        out_dir: out,
    };
    let run = harness::run_campaign(&corpus, &opts)?;
    print!("{}", run.summary.to_text());
    println!(
        "{} runs total ({} new); journal {}",
        run.summary.total_runs,
        run.new_runs,
        run.journal_path.display()
    );
    Ok(0)
}

fn cmd_report(
    config: &PolicyConfig,
    seed: u64,
    traces: &[PathBuf],
    grouping: Grouping,
    out: &Path,
) -> Result<i32, CliError> {
    let base = config.to_settings();
    let mut inputs = Vec::new();
    for path in traces {
        let trace = load_trace(path)?;
        let group = trace_group(path, &trace);
        for (mode_id, mode) in standard_modes() {
            let mut settings = base.clone();
            settings.mode = mode;
            let replay_seed = harness::run_seed(seed, &group, &mode_id, 0);
            let output = replay_trace(&trace, &settings, replay_seed)?;
            inputs.push(ReportInput {
                group: group.clone(),
                mode: mode_id,
                stats: output.stats,
            });
        }
    }
    let report = render_report(&inputs, grouping);
    fs::create_dir_all(out)?;
    let mut json_text = serde_json::to_string_pretty(&report)?;
    json_text.push('\n');
    fs::write(out.join("report.json"), json_text)?;
    let text = report.to_text();
    fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(0)
}

/// Report row label for a trace: the archetype for generated scenarios
/// (header generator `scenario:<archetype>:…`), else the file stem.
fn trace_group(path: &Path, trace: &TraceFile) -> String {
    if let Some(generator) = &trace.header.generator {
        if let Some(rest) = generator.strip_prefix("scenario:") {
            if let Some((archetype, _)) = rest.split_once(':') {
                return archetype.to_string();
            }
        }
    }
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into())
}

fn run_fixture(fixture: FixtureCommand) -> i32 {
    match fixture {
        FixtureCommand::Emit => fixtures::emit(),
        FixtureCommand::WriteLoop { count, bytes } => fixtures::write_loop(count, bytes),
        FixtureCommand::SleepProbe => fixtures::sleep_probe(),
        FixtureCommand::ElfThenDup => fixtures::elf_then_dup(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use uncertain_core::ProtectionRules;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn threshold_flag_overrides_config_mode() {
        let config = PolicyConfig::default();
        let flags = PolicyFlags {
            threshold: Some(0.25),
            ..PolicyFlags::default()
        };
        let settings = effective_settings(&config, &flags).unwrap();
        assert_eq!(settings.mode, ThresholdMode::Static(0.25));
    }

    #[test]
    fn threshold_flag_rejects_out_of_range() {
        let config = PolicyConfig::default();
        for bad in [-0.1, 1.5, f64::NAN] {
            let flags = PolicyFlags {
                threshold: Some(bad),
                ..PolicyFlags::default()
            };
            let err = effective_settings(&config, &flags).unwrap_err();
            assert_eq!(err.code, 2);
        }
    }

    #[test]
    fn dynamic_flag_restores_dynamic_mode_over_static_config() {
        let config = PolicyConfig {
            mode: ConfigMode::StaticThreshold(0.5),
            ..PolicyConfig::default()
        };
        let flags = PolicyFlags {
            dynamic: true,
            ..PolicyFlags::default()
        };
        let settings = effective_settings(&config, &flags).unwrap();
        assert_eq!(
            settings.mode,
            ThresholdMode::Dynamic(ThresholdParams::default())
        );
    }

    #[test]
    fn whitelisted_flag_forces_nonintrusive_standard() {
        let config = PolicyConfig::default();
        let flags = PolicyFlags {
            whitelisted: true,
            strategy_set: Some(StrategySetArg::Intrusive),
            ..PolicyFlags::default()
        };
        let settings = effective_settings(&config, &flags).unwrap();
        assert_eq!(settings.strategy_set, StrategySet::NonIntrusive);
        assert_eq!(settings.process_env, ProcessEnv::Standard);
    }

    #[test]
    fn exit_code_mapping_covers_all_kinds() {
        assert_eq!(exit_code_of(ExitStatusKind::Code(7)), 7);
        assert_eq!(exit_code_of(ExitStatusKind::Signal(9)), 137);
        assert_eq!(exit_code_of(ExitStatusKind::Timeout), 124);
    }

    #[test]
    fn tracer_errors_map_to_documented_codes() {
        assert_eq!(CliError::from(TracerError::Unsupported).code, 4);
        let spawn = TracerError::Spawn {
            program: "x".into(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        };
        assert_eq!(CliError::from(spawn).code, 5);
    }

    #[test]
    fn trace_group_prefers_scenario_archetype() {
        let mut trace = TraceFile::new(crate::trace::TraceHeader::new(
            "synthetic",
            Some("scenario:virus:lab:n=100".into()),
        ));
        assert_eq!(trace_group(Path::new("/tmp/foo.jsonl"), &trace), "virus");
        trace.header.generator = None;
        assert_eq!(trace_group(Path::new("/tmp/foo.jsonl"), &trace), "foo");
    }

    #[test]
    fn default_config_settings_round_trip_through_flags() {
        // No flags → exactly the config's settings.
        let config = PolicyConfig {
            protected_paths: ProtectionRules::default(),
            ..PolicyConfig::default()
        };
        let settings = effective_settings(&config, &PolicyFlags::default()).unwrap();
        assert_eq!(settings, config.to_settings());
    }
}
