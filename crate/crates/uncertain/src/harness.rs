//! Evaluation-campaign driver: runs every corpus entry through the
//! standard six-cell configuration matrix (two strategy sets × three
//! threshold modes), journals each run as one JSONL line, and
//! aggregates outcome counts and perturbation rates. The journal is the
//! source of truth: an interrupted campaign resumes by skipping triples
//! already recorded, and the summary is always recomputed from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uncertain_core::rng::{fnv1a64, mix};
use uncertain_core::stats::chained_success_probability;
use uncertain_core::{PolicySettings, ProcessEnv, StrategySet, ThresholdMode};

use crate::outcome::{classify_outcome, Outcome, RunResult, MIN_BASELINE_RUNTIME};
use crate::replay::{proxy_outcome, replay_trace, DecisionRecord};
use crate::trace::{load_trace, TraceFile};
use crate::tracer::{run_traced, run_untraced, ExecSpec};

fn default_repetitions() -> u32 {
    15
}

/// One target in the evaluation corpus: either a recorded trace to
/// replay or a program to run under the live tracer. Exactly one of
/// `trace`/`exec` must be set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub id: String,
    /// Path to a trace file (resolved against the manifest's directory).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    /// Program plus arguments to run under the live tracer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec: Option<Vec<String>>,
    /// Whitelisted software runs in the standard environment and only
    /// through the non-intrusive cells.
    #[serde(default)]
    pub whitelisted: bool,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid corpus manifest {path}: {message}")]
    Corpus { path: String, message: String },
    #[error("corrupt journal {path} (line {line}): {message}")]
    Journal {
        path: String,
        line: usize,
        message: String,
    },
}

/// Loads and validates a corpus manifest (a JSON array of entries).
/// Relative trace paths are resolved against the manifest's directory;
/// referenced trace files and explicit program paths must exist.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusEntry>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let corpus_err = |message: String| HarnessError::Corpus {
        path: path.display().to_string(),
        message,
    };
    let mut entries: Vec<CorpusEntry> =
        serde_json::from_str(&text).map_err(|e| corpus_err(e.to_string()))?;
    if entries.is_empty() {
        return Err(corpus_err("manifest lists no entries".into()));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = BTreeSet::new();
    for entry in &mut entries {
        if entry.id.is_empty() {
            return Err(corpus_err("entry with empty id".into()));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(corpus_err(format!("duplicate entry id `{}`", entry.id)));
        }
        if entry.repetitions == 0 {
            return Err(corpus_err(format!(
                "entry `{}` has repetitions = 0",
                entry.id
            )));
        }
        match (&mut entry.trace, &entry.exec) {
            (Some(trace), None) => {
                if trace.is_relative() {
                    *trace = base.join(&trace);
                }
                if !trace.is_file() {
                    return Err(corpus_err(format!(
                        "entry `{}`: trace file {} does not exist",
                        entry.id,
                        trace.display()
                    )));
                }
            }
            (None, Some(exec)) => {
                let Some(program) = exec.first() else {
                    return Err(corpus_err(format!(
                        "entry `{}`: exec is an empty argv",
                        entry.id
                    )));
                };
                // Bare names resolve through PATH at spawn time; explicit
                // paths must exist now.
                if program.contains('/') && !Path::new(program).is_file() {
                    return Err(corpus_err(format!(
                        "entry `{}`: program {} does not exist",
                        entry.id, program
                    )));
                }
            }
            _ => {
                return Err(corpus_err(format!(
                    "entry `{}` must set exactly one of `trace`/`exec`",
                    entry.id
                )));
            }
        }
    }
    Ok(entries)
}

/// One cell of the evaluation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixCell {
    pub id: &'static str,
    pub strategy_set: StrategySet,
    pub mode: ThresholdMode,
}

impl MatrixCell {
    /// The escalation ceiling used for synthetic crash classification —
    /// only dynamic cells can escalate, so only they get one.
    pub fn crash_ceiling(&self) -> Option<f64> {
        match self.mode {
            ThresholdMode::Dynamic(p) => Some(p.t_max),
            ThresholdMode::Static(_) => None,
        }
    }
}

/// The standard six-cell matrix, in journal order.
pub fn campaign_matrix() -> Vec<MatrixCell> {
    let cell = |id, strategy_set, mode| MatrixCell {
        id,
        strategy_set,
        mode,
    };
    vec![
        cell(
            "ni_static10",
            StrategySet::NonIntrusive,
            ThresholdMode::Static(0.10),
        ),
        cell(
            "ni_static50",
            StrategySet::NonIntrusive,
            ThresholdMode::Static(0.50),
        ),
        cell(
            "ni_dynamic",
            StrategySet::NonIntrusive,
            ThresholdMode::default(),
        ),
        cell(
            "intr_static10",
            StrategySet::Intrusive,
            ThresholdMode::Static(0.10),
        ),
        cell(
            "intr_static50",
            StrategySet::Intrusive,
            ThresholdMode::Static(0.50),
        ),
        cell(
            "intr_dynamic",
            StrategySet::Intrusive,
            ThresholdMode::default(),
        ),
    ]
}

/// The cells an entry participates in: whitelisted software is never
/// exposed to the intrusive set.
pub fn matrix_for(whitelisted: bool) -> Vec<MatrixCell> {
    let mut cells = campaign_matrix();
    if whitelisted {
        cells.retain(|c| c.strategy_set == StrategySet::NonIntrusive);
    }
    cells
}

/// Derives the per-run seed from the campaign base and the run's
/// coordinate. Every component feeds through `mix` so neighboring reps
/// and lexically close ids land in unrelated streams.
pub fn run_seed(seed_base: u64, entry_id: &str, config_id: &str, rep: u32) -> u64 {
    mix(seed_base
        ^ mix(fnv1a64(entry_id.as_bytes())
            ^ mix(fnv1a64(config_id.as_bytes()) ^ mix(rep as u64))))
}

/// One completed (or failed) run. Exactly one of `outcome`/`error` is
/// present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JournalRecord {
    pub entry: String,
    pub config: String,
    pub rep: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    /// Synthetic crash site (replay cells only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash_pid: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash_seq: Option<u64>,
    pub total_events: u64,
    pub in_set_events: u64,
    pub gated_events: u64,
    pub perturbed: u64,
    pub overall_rate: f64,
    pub eligible_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JournalRecord {
    fn errored(entry: &str, config: &str, rep: u32, seed: u64, message: String) -> Self {
        JournalRecord {
            entry: entry.into(),
            config: config.into(),
            rep,
            seed,
            outcome: None,
            crash_pid: None,
            crash_seq: None,
            total_events: 0,
            in_set_events: 0,
            gated_events: 0,
            perturbed: 0,
            overall_rate: 0.0,
            eligible_rate: 0.0,
            error: Some(message),
        }
    }
}

/// Decision-log tallies shared by replay and live cells:
/// `(total, in_set, gated, perturbed)`.
pub fn decision_counts(records: &[DecisionRecord]) -> (u64, u64, u64, u64) {
    let mut in_set = 0u64;
    let mut gated = 0u64;
    let mut perturbed = 0u64;
    for r in records {
        if r.name.in_interference_set() {
            in_set += 1;
        }
        if r.roll.is_some() {
            gated += 1;
        }
        if r.is_perturb() {
            perturbed += 1;
        }
    }
    (records.len() as u64, in_set, gated, perturbed)
}

fn rate(numer: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        numer as f64 / denom as f64
    }
}

/// Campaign-wide options. `base_settings` supplies everything the matrix
/// does not override (protection rules, behavior config, delay bounds…).
#[derive(Debug, Clone)]
pub struct CampaignOptions {
    pub seed_base: u64,
    pub base_settings: PolicySettings,
    /// Runtime budget multiplier for live cells.
    pub timeout_factor: f64,
    /// Directory receiving `journal.jsonl` and `summary.json`.
    pub out_dir: PathBuf,
}

/// Aggregate for one (entry, config) cell of the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSummary {
    pub runs: u64,
    pub succeeded: u64,
    pub hampered: u64,
    pub crashed: u64,
    pub errors: u64,
    /// One character per rep in rep order: S/H/C, E for errored runs.
    pub bar: String,
    /// Mean of per-run rates over non-errored runs.
    pub mean_overall_rate: f64,
    pub mean_eligible_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSummary {
    pub seed_base: u64,
    pub total_runs: u64,
    /// entry id → config id → cell.
    pub entries: BTreeMap<String, BTreeMap<String, CellSummary>>,
}

/// What `run_campaign` produced (all paths live under `out_dir`).
#[derive(Debug)]
pub struct CampaignRun {
    pub summary: CampaignSummary,
    /// Runs executed by this invocation (0 for a fully resumed journal).
    pub new_runs: u64,
    pub journal_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Reads a journal, tolerating a torn final line (the write was
/// interrupted); the returned byte length covers only intact records so
/// the caller can truncate before appending.
fn read_journal(path: &Path) -> Result<(Vec<JournalRecord>, u64), HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    let mut valid_len = 0u64;
    let mut offset = 0usize;
    let mut line_no = 0usize;
    for line in text.split_inclusive('\n') {
        line_no += 1;
        offset += line.len();
        let body = line.trim_end_matches('\n');
        if body.is_empty() {
            valid_len = offset as u64;
            continue;
        }
        match serde_json::from_str::<JournalRecord>(body) {
            Ok(record) => {
                records.push(record);
                valid_len = offset as u64;
            }
            Err(e) => {
                let at_eof = offset == text.len();
                if at_eof {
                    // Torn tail from an interrupted append: drop it; the
                    // triple re-runs.
                    break;
                }
                return Err(HarnessError::Journal {
                    path: path.display().to_string(),
                    line: line_no,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok((records, valid_len))
}

/// Per-entry prepared resource, built lazily on the first missing triple.
enum Prepared {
    Trace(Box<TraceFile>),
    Exec {
        spec: ExecSpec,
        baseline: RunResult,
    },
    Failed(String),
}

fn prepare_entry(entry: &CorpusEntry) -> Prepared {
    if let Some(path) = &entry.trace {
        return match load_trace(path) {
            Ok(t) => Prepared::Trace(Box::new(t)),
            Err(e) => Prepared::Failed(e.to_string()),
        };
    }
    let argv = entry.exec.as_ref().expect("validated corpus entry");
    let spec = ExecSpec::new(argv[0].clone(), argv[1..].to_vec());
    match run_untraced(&spec) {
        Ok(baseline) => Prepared::Exec { spec, baseline },
        Err(e) => Prepared::Failed(e.to_string()),
    }
}

/// Runs (or resumes) a campaign. Execution is single-threaded so the
/// journal order — entries in manifest order, cells in matrix order,
/// reps ascending — is reproducible.
pub fn run_campaign(
    corpus: &[CorpusEntry],
    opts: &CampaignOptions,
) -> Result<CampaignRun, HarnessError> {
    fs::create_dir_all(&opts.out_dir).map_err(|source| HarnessError::Io {
        path: opts.out_dir.display().to_string(),
        source,
    })?;
    let journal_path = opts.out_dir.join("journal.jsonl");
    let summary_path = opts.out_dir.join("summary.json");

    let mut records = Vec::new();
    if journal_path.exists() {
        let (existing, valid_len) = read_journal(&journal_path)?;
        for (i, r) in existing.iter().enumerate() {
            let expected = run_seed(opts.seed_base, &r.entry, &r.config, r.rep);
            if r.seed != expected {
                return Err(HarnessError::Journal {
                    path: journal_path.display().to_string(),
                    line: i + 1,
                    message: format!(
                        "seed {} does not match derivation {} — journal belongs to a \
                         different seed base",
                        r.seed, expected
                    ),
                });
            }
        }
        let file = fs::OpenOptions::new()
            .write(true)
            .open(&journal_path)
            .map_err(|source| HarnessError::Io {
                path: journal_path.display().to_string(),
                source,
            })?;
        file.set_len(valid_len).map_err(|source| HarnessError::Io {
            path: journal_path.display().to_string(),
            source,
        })?;
        records = existing;
    }
    let mut done: BTreeSet<(String, String, u32)> = records
        .iter()
        .map(|r| (r.entry.clone(), r.config.clone(), r.rep))
        .collect();

    let mut journal = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&journal_path)
        .map_err(|source| HarnessError::Io {
            path: journal_path.display().to_string(),
            source,
        })?;
    let mut append = |record: &JournalRecord| -> Result<(), HarnessError> {
        let mut line = serde_json::to_string(record).expect("journal records serialize");
        line.push('\n');
        journal
            .write_all(line.as_bytes())
            .and_then(|()| journal.flush())
            .map_err(|source| HarnessError::Io {
                path: journal_path.display().to_string(),
                source,
            })
    };

    let mut new_runs = 0u64;
    for entry in corpus {
        let mut prepared: Option<Prepared> = None;
        for cell in matrix_for(entry.whitelisted) {
            for rep in 0..entry.repetitions {
                let key = (entry.id.clone(), cell.id.to_string(), rep);
                if done.contains(&key) {
                    continue;
                }
                let seed = run_seed(opts.seed_base, &entry.id, cell.id, rep);
                let mut settings = opts.base_settings.clone();
                settings.mode = cell.mode;
                settings.strategy_set = cell.strategy_set;
                settings.process_env = if entry.whitelisted {
                    ProcessEnv::Standard
                } else {
                    ProcessEnv::Uncertain
                };
                let prep = prepared.get_or_insert_with(|| prepare_entry(entry));
                let record = match prep {
                    Prepared::Failed(message) => JournalRecord::errored(
                        &entry.id,
                        cell.id,
                        rep,
                        seed,
                        message.clone(),
                    ),
                    Prepared::Trace(trace) => match replay_trace(trace, &settings, seed) {
                        Err(e) => JournalRecord::errored(
                            &entry.id,
                            cell.id,
                            rep,
                            seed,
                            e.to_string(),
                        ),
                        Ok(output) => {
                            let (outcome, crash) =
                                proxy_outcome(&output.records, cell.crash_ceiling());
                            let (total, in_set, gated, perturbed) =
                                decision_counts(&output.records);
                            JournalRecord {
                                entry: entry.id.clone(),
                                config: cell.id.into(),
                                rep,
                                seed,
                                outcome: Some(outcome),
                                crash_pid: crash.map(|(pid, _)| pid),
                                crash_seq: crash.map(|(_, seq)| seq),
                                total_events: total,
                                in_set_events: in_set,
                                gated_events: gated,
                                perturbed,
                                overall_rate: rate(perturbed, in_set),
                                eligible_rate: rate(perturbed, gated),
                                error: None,
                            }
                        }
                    },
                    Prepared::Exec { spec, baseline } => {
                        let budget = opts.timeout_factor
                            * baseline.runtime_seconds.max(MIN_BASELINE_RUNTIME);
                        match run_traced(spec, &settings, seed, Some(budget)) {
                            Err(e) => JournalRecord::errored(
                                &entry.id,
                                cell.id,
                                rep,
                                seed,
                                e.to_string(),
                            ),
                            Ok(traced) => {
                                let outcome = classify_outcome(
                                    &traced.result,
                                    baseline,
                                    opts.timeout_factor,
                                );
                                let (total, in_set, gated, perturbed) =
                                    decision_counts(&traced.records);
                                JournalRecord {
                                    entry: entry.id.clone(),
                                    config: cell.id.into(),
                                    rep,
                                    seed,
                                    outcome: Some(outcome),
                                    crash_pid: None,
                                    crash_seq: None,
                                    total_events: total,
                                    in_set_events: in_set,
                                    gated_events: gated,
                                    perturbed,
                                    overall_rate: rate(perturbed, in_set),
                                    eligible_rate: rate(perturbed, gated),
                                    error: None,
                                }
                            }
                        }
                    }
                };
                append(&record)?;
                done.insert(key);
                records.push(record);
                new_runs += 1;
            }
        }
    }

    let summary = summarize(opts.seed_base, &records);
    let mut summary_json =
        serde_json::to_string_pretty(&summary).expect("summary serializes");
    summary_json.push('\n');
    fs::write(&summary_path, summary_json).map_err(|source| HarnessError::Io {
        path: summary_path.display().to_string(),
        source,
    })?;
    Ok(CampaignRun {
        summary,
        new_runs,
        journal_path,
        summary_path,
    })
}

/// Recomputes the summary from journal records.
pub fn summarize(seed_base: u64, records: &[JournalRecord]) -> CampaignSummary {
    let mut cells: BTreeMap<String, BTreeMap<String, Vec<&JournalRecord>>> = BTreeMap::new();
    for r in records {
        cells
            .entry(r.entry.clone())
            .or_default()
            .entry(r.config.clone())
            .or_default()
            .push(r);
    }
    let mut entries = BTreeMap::new();
    for (entry, configs) in cells {
        let mut per_config = BTreeMap::new();
        for (config, mut runs) in configs {
            runs.sort_by_key(|r| r.rep);
            let mut cell = CellSummary {
                runs: runs.len() as u64,
                succeeded: 0,
                hampered: 0,
                crashed: 0,
                errors: 0,
                bar: String::with_capacity(runs.len()),
                mean_overall_rate: 0.0,
                mean_eligible_rate: 0.0,
            };
            let mut overall_sum = 0.0;
            let mut eligible_sum = 0.0;
            for r in &runs {
                match r.outcome {
                    Some(Outcome::Succeeded) => {
                        cell.succeeded += 1;
                        cell.bar.push('S');
                    }
                    Some(Outcome::Hampered) => {
                        cell.hampered += 1;
                        cell.bar.push('H');
                    }
                    Some(Outcome::Crashed) => {
                        cell.crashed += 1;
                        cell.bar.push('C');
                    }
                    None => {
                        cell.errors += 1;
                        cell.bar.push('E');
                    }
                }
                if r.outcome.is_some() {
                    overall_sum += r.overall_rate;
                    eligible_sum += r.eligible_rate;
                }
            }
            let measured = cell.runs - cell.errors;
            if measured > 0 {
                cell.mean_overall_rate = overall_sum / measured as f64;
                cell.mean_eligible_rate = eligible_sum / measured as f64;
            }
            per_config.insert(config, cell);
        }
        entries.insert(entry, per_config);
    }
    CampaignSummary {
        seed_base,
        total_runs: records.len() as u64,
        entries,
    }
}

impl CampaignSummary {
    /// Fixed-width outcome table (one line per entry × config).
    pub fn to_text(&self) -> String {
        let entry_w = self
            .entries
            .keys()
            .map(|k| k.len())
            .chain(["entry".len()].into_iter())
            .max()
            .unwrap_or(5);
        let config_w = self
            .entries
            .values()
            .flat_map(|c| c.keys().map(|k| k.len()))
            .chain(["config".len()].into_iter())
            .max()
            .unwrap_or(6);
        let bar_w = self
            .entries
            .values()
            .flat_map(|c| c.values().map(|cell| cell.bar.len()))
            .chain(["outcomes".len()].into_iter())
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<entry_w$}  {:<config_w$}  {:<bar_w$}  {:>4} {:>4} {:>4} {:>4}  {:>8}  {:>8}",
            "entry", "config", "outcomes", "S", "H", "C", "E", "overall", "eligible",
        );
        let width = entry_w + config_w + bar_w + 4 * 5 + 2 * 10 + 4;
        let _ = writeln!(out, "{}", "-".repeat(width));
        for (entry, configs) in &self.entries {
            for (config, cell) in configs {
                let _ = writeln!(
                    out,
                    "{:<entry_w$}  {:<config_w$}  {:<bar_w$}  {:>4} {:>4} {:>4} {:>4}  \
                     {:>7.2}%  {:>7.2}%",
                    entry,
                    config,
                    cell.bar,
                    cell.succeeded,
                    cell.hampered,
                    cell.crashed,
                    cell.errors,
                    cell.mean_overall_rate * 100.0,
                    cell.mean_eligible_rate * 100.0,
                );
            }
        }
        out
    }
}

/// A run of same-threshold gate checks, for the chained-success formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscalationStep {
    pub threshold: f64,
    pub count: u64,
}

/// Probability that a payload survives all steps unperturbed:
/// ∏ (1 − threshold)^count, expanded through the same fold as the core
/// chain so results are bit-identical with the flat form.
pub fn escalation_success_probability(steps: &[EscalationStep]) -> f64 {
    chained_success_probability(
        steps
            .iter()
            .flat_map(|s| std::iter::repeat(s.threshold).take(s.count as usize)),
    )
}
