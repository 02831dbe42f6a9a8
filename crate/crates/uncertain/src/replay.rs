//! Offline replay: run a trace through the policy engine and produce the
//! decision log (one record per trace event), the aggregate statistics
//! document, and — for harness cells with no real process — a synthetic
//! outcome.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uncertain_core::{
    BehaviorEvent, BehaviorKind, Engine, EventOutcome, PassReason, PolicyError, PolicySettings,
    StrategyKind, SyscallCategory, SyscallEvent, SyscallName, Verdict,
};

use crate::outcome::Outcome;
use crate::trace::TraceFile;

/// One decision-log line: the event's identity plus the full decision.
/// (The decision fields are spelled out rather than nested so each log
/// line stays flat and greppable.)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub pid: u32,
    pub seq: u64,
    pub name: SyscallName,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_reason: Option<PassReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_return: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_len: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupt_byte_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redirect_addr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backlog_cap: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_delta: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_used: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roll: Option<f64>,
    /// Behaviors first observed at this event.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub behaviors: Vec<BehaviorEvent>,
}

impl DecisionRecord {
    pub fn from_outcome(event: &SyscallEvent, outcome: &EventOutcome) -> Self {
        let d = &outcome.decision;
        DecisionRecord {
            pid: event.pid,
            seq: event.seq,
            name: event.name,
            verdict: d.verdict,
            pass_reason: d.pass_reason,
            strategy: d.strategy,
            error_code: d.error_code,
            delay_seconds: d.delay_seconds,
            forced_return: d.forced_return,
            reduced_len: d.reduced_len,
            corrupt_byte_count: d.corrupt_byte_count,
            redirect_addr: d.redirect_addr.clone(),
            backlog_cap: d.backlog_cap,
            offset_delta: d.offset_delta,
            threshold_used: d.threshold_used,
            roll: d.roll,
            behaviors: outcome.behaviors.clone(),
        }
    }

    pub fn is_perturb(&self) -> bool {
        self.verdict == Verdict::Perturb
    }
}

/// One numerator/denominator slice of the statistics document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CategoryCell {
    pub events: u64,
    pub perturbed: u64,
    pub rate: f64,
}

impl CategoryCell {
    fn add(&mut self, perturbed: bool) {
        self.events += 1;
        if perturbed {
            self.perturbed += 1;
        }
    }

    fn finish(&mut self) {
        self.rate = if self.events == 0 {
            0.0
        } else {
            self.perturbed as f64 / self.events as f64
        };
    }
}

/// Aggregate statistics over one replay or traced run. The schema is
/// stable: every strategy, pass reason, category, and behavior key is
/// always present, zero-valued when unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsDocument {
    pub seed: u64,
    pub total_events: u64,
    pub in_set_events: u64,
    /// Events that actually rolled the interference gate (in-set,
    /// uncertain env, unprotected, with a feasible strategy).
    pub gated_events: u64,
    pub perturbed: u64,
    /// perturbed / in_set_events.
    pub overall_rate: f64,
    /// perturbed / gated_events — the rate the threshold directly
    /// controls.
    pub eligible_rate: f64,
    /// Network-related slice (the report's "connection related").
    pub connection_related: CategoryCell,
    /// In-set events carrying a buffer length (the report's "buffer
    /// related").
    pub buffer_related: CategoryCell,
    pub by_category: BTreeMap<SyscallCategory, CategoryCell>,
    /// The buffer-carrying slice of each category (reads/writes for
    /// file-related, sends/receives for network-related, …).
    pub buffer_by_category: BTreeMap<SyscallCategory, CategoryCell>,
    pub by_strategy: BTreeMap<StrategyKind, u64>,
    pub by_pass_reason: BTreeMap<PassReason, u64>,
    pub behaviors: BTreeMap<BehaviorKind, u64>,
}

impl StatsDocument {
    pub fn new(seed: u64) -> Self {
        StatsDocument {
            seed,
            total_events: 0,
            in_set_events: 0,
            gated_events: 0,
            perturbed: 0,
            overall_rate: 0.0,
            eligible_rate: 0.0,
            connection_related: CategoryCell::default(),
            buffer_related: CategoryCell::default(),
            by_category: Self::category_map(),
            buffer_by_category: Self::category_map(),
            by_strategy: StrategyKind::ALL.iter().map(|&s| (s, 0)).collect(),
            by_pass_reason: [
                PassReason::StandardEnv,
                PassReason::NotInSet,
                PassReason::Protected,
                PassReason::NoStrategy,
                PassReason::Roll,
            ]
            .into_iter()
            .map(|r| (r, 0))
            .collect(),
            behaviors: [
                BehaviorKind::B1FrequentInvocation,
                BehaviorKind::B2ElfHeaderWrite,
                BehaviorKind::B3StdRedirect,
                BehaviorKind::B4BinaryRenameUnlink,
            ]
            .into_iter()
            .map(|b| (b, 0))
            .collect(),
        }
    }

    fn category_map() -> BTreeMap<SyscallCategory, CategoryCell> {
        [
            SyscallCategory::FileRelated,
            SyscallCategory::NetworkRelated,
            SyscallCategory::ProcessRelated,
            SyscallCategory::Other,
        ]
        .into_iter()
        .map(|c| (c, CategoryCell::default()))
        .collect()
    }

    /// Folds one event/outcome pair into the tallies. Call
    /// [`StatsDocument::finish`] once after the last event.
    pub fn add(&mut self, event: &SyscallEvent, outcome: &EventOutcome) {
        let d = &outcome.decision;
        let perturbed = d.is_perturb();
        self.total_events += 1;
        let in_set = event.name.in_interference_set();
        if in_set {
            self.in_set_events += 1;
        }
        if d.roll.is_some() {
            self.gated_events += 1;
        }
        if perturbed {
            self.perturbed += 1;
            if let Some(s) = d.strategy {
                *self.by_strategy.entry(s).or_insert(0) += 1;
            }
        } else if let Some(r) = d.pass_reason {
            *self.by_pass_reason.entry(r).or_insert(0) += 1;
        }
        let category = event.name.category();
        self.by_category.entry(category).or_default().add(perturbed);
        if category == SyscallCategory::NetworkRelated {
            self.connection_related.add(perturbed);
        }
        if in_set && event.buffer_len.is_some() {
            self.buffer_related.add(perturbed);
            self.buffer_by_category
                .entry(category)
                .or_default()
                .add(perturbed);
        }
        for b in &outcome.behaviors {
            *self.behaviors.entry(b.which).or_insert(0) += 1;
        }
    }

    /// Adds `other`'s tallies into `self` and refreshes the rates. The
    /// seed field keeps `self`'s value (a merged document spans seeds).
    pub fn merge(&mut self, other: &StatsDocument) {
        self.total_events += other.total_events;
        self.in_set_events += other.in_set_events;
        self.gated_events += other.gated_events;
        self.perturbed += other.perturbed;
        let merge_cell = |a: &mut CategoryCell, b: &CategoryCell| {
            a.events += b.events;
            a.perturbed += b.perturbed;
        };
        merge_cell(&mut self.connection_related, &other.connection_related);
        merge_cell(&mut self.buffer_related, &other.buffer_related);
        for (k, v) in &other.by_category {
            merge_cell(self.by_category.entry(*k).or_default(), v);
        }
        for (k, v) in &other.buffer_by_category {
            merge_cell(self.buffer_by_category.entry(*k).or_default(), v);
        }
        for (k, v) in &other.by_strategy {
            *self.by_strategy.entry(*k).or_insert(0) += v;
        }
        for (k, v) in &other.by_pass_reason {
            *self.by_pass_reason.entry(*k).or_insert(0) += v;
        }
        for (k, v) in &other.behaviors {
            *self.behaviors.entry(*k).or_insert(0) += v;
        }
        self.finish();
    }

    /// Computes the derived rates.
    pub fn finish(&mut self) {
        let rate = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        self.overall_rate = rate(self.perturbed, self.in_set_events);
        self.eligible_rate = rate(self.perturbed, self.gated_events);
        self.connection_related.finish();
        self.buffer_related.finish();
        for cell in self.by_category.values_mut() {
            cell.finish();
        }
        for cell in self.buffer_by_category.values_mut() {
            cell.finish();
        }
    }
}

/// Everything a replay produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub records: Vec<DecisionRecord>,
    pub stats: StatsDocument,
}

/// Replays a validated trace against `settings`, deterministically in
/// `(trace, settings, seed)`. Emits one record per trace event.
pub fn replay_trace(
    trace: &TraceFile,
    settings: &PolicySettings,
    seed: u64,
) -> Result<ReplayOutput, PolicyError> {
    let mut engine = Engine::new(settings.clone(), seed);
    let mut records = Vec::with_capacity(trace.events.len());
    let mut stats = StatsDocument::new(seed);
    for event in &trace.events {
        let outcome = engine.process_event(event)?;
        stats.add(event, &outcome);
        records.push(DecisionRecord::from_outcome(event, &outcome));
    }
    stats.finish();
    Ok(ReplayOutput { records, stats })
}

/// Serializes records as JSONL (one line per trace event, trace order).
pub fn decision_log_to_jsonl(records: &[DecisionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_decision_log(path: &Path, records: &[DecisionRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

pub fn load_decision_log(path: &Path) -> std::io::Result<Vec<DecisionRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

pub fn write_stats(path: &Path, stats: &StatsDocument) -> std::io::Result<()> {
    let mut json = serde_json::to_string_pretty(stats)?;
    json.push('\n');
    std::fs::write(path, json)
}

/// Synthetic outcome for replayed traces, where no real process exists:
/// walking the records in order, the run "crashes" at the first perturbed
/// event whose threshold had escalated to `t_max` (dynamic mode only — a
/// perturbation of a call the engine deemed critical), is "hampered" if
/// anything at all was perturbed, and "succeeds" untouched otherwise.
/// Returns the crash site as (pid, seq) when there is one.
pub fn proxy_outcome(
    records: &[DecisionRecord],
    t_max: Option<f64>,
) -> (Outcome, Option<(u32, u64)>) {
    let mut any_perturb = false;
    for r in records {
        if !r.is_perturb() {
            continue;
        }
        any_perturb = true;
        if let (Some(tm), Some(t)) = (t_max, r.threshold_used) {
            if t >= tm {
                return (Outcome::Crashed, Some((r.pid, r.seq)));
            }
        }
    }
    if any_perturb {
        (Outcome::Hampered, None)
    } else {
        (Outcome::Succeeded, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, Archetype, ScenarioSpec};
    use uncertain_core::ThresholdMode;

    fn settings_static(t: f64) -> PolicySettings {
        PolicySettings {
            mode: ThresholdMode::Static(t),
            ..PolicySettings::default()
        }
    }

    #[test]
    fn one_record_per_event_with_thresholds_on_in_set_events() {
        let spec = ScenarioSpec::new("c", Archetype::Apt, 60);
        let trace = generate_scenario(&spec, 3);
        let out = replay_trace(&trace, &PolicySettings::default(), 3).unwrap();
        assert_eq!(out.records.len(), trace.events.len());
        for (r, e) in out.records.iter().zip(&trace.events) {
            assert_eq!((r.pid, r.seq, r.name), (e.pid, e.seq, e.name));
            if e.name.in_interference_set() {
                assert!(r.threshold_used.is_some(), "seq {}", e.seq);
            } else {
                assert_eq!(r.pass_reason, Some(PassReason::NotInSet));
            }
        }
        assert_eq!(out.stats.total_events, 60);
    }

    #[test]
    fn replay_is_deterministic_and_seed_sensitive() {
        let spec = ScenarioSpec::new("d", Archetype::BenignIo, 2_000);
        let trace = generate_scenario(&spec, 5);
        let settings = settings_static(0.5);
        let a = replay_trace(&trace, &settings, 9).unwrap();
        let b = replay_trace(&trace, &settings, 9).unwrap();
        assert_eq!(
            decision_log_to_jsonl(&a.records),
            decision_log_to_jsonl(&b.records)
        );
        assert_eq!(a.stats, b.stats);
        let c = replay_trace(&trace, &settings, 10).unwrap();
        assert_ne!(
            decision_log_to_jsonl(&a.records),
            decision_log_to_jsonl(&c.records)
        );
    }

    #[test]
    fn record_lines_have_the_documented_shape() {
        let spec = ScenarioSpec::new("s", Archetype::BenignCpu, 40);
        let trace = generate_scenario(&spec, 1);
        let out = replay_trace(&trace, &PolicySettings::default(), 1).unwrap();
        let first_other = out
            .records
            .iter()
            .find(|r| r.name == SyscallName::Other)
            .unwrap();
        let json = serde_json::to_string(first_other).unwrap();
        assert_eq!(
            json,
            format!(
                "{{\"pid\":{},\"seq\":{},\"name\":\"other\",\"verdict\":\"pass_through\",\"pass_reason\":\"not_in_set\"}}",
                first_other.pid, first_other.seq
            )
        );
        // Round-trip.
        let back: DecisionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, first_other);
    }

    #[test]
    fn stats_schema_is_stable_even_when_empty() {
        let mut empty = StatsDocument::new(0);
        empty.finish();
        let json = serde_json::to_string(&empty).unwrap();
        for key in [
            "error_return",
            "delay",
            "priority_decrease",
            "silence_success",
            "buffer_reduce",
            "buffer_corrupt",
            "connection_restrict",
            "file_offset_change",
            "standard_env",
            "not_in_set",
            "protected",
            "no_strategy",
            "roll",
            "file_related",
            "network_related",
            "process_related",
            "b1_frequent_invocation",
            "b2_elf_header_write",
            "b3_std_redirect",
            "b4_binary_rename_unlink",
        ] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        let back: StatsDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back, empty);
    }

    #[test]
    fn eligible_rate_tracks_a_static_threshold() {
        let spec = ScenarioSpec::new("r", Archetype::BenignIo, 10_000);
        let trace = generate_scenario(&spec, 21);
        let out = replay_trace(&trace, &settings_static(0.5), 21).unwrap();
        // Benign IO on unprotected paths: every event is in-set and rolls.
        assert_eq!(out.stats.gated_events, out.stats.in_set_events);
        assert_eq!(out.stats.in_set_events, 10_000);
        let rate = out.stats.eligible_rate;
        assert!((rate - 0.5).abs() < 0.015, "rate {rate}");
        // Conservation: every event is either perturbed or accounted to a
        // pass reason.
        let passes: u64 = out.stats.by_pass_reason.values().sum();
        assert_eq!(out.stats.perturbed + passes, out.stats.total_events);
    }

    #[test]
    fn proxy_outcome_distinguishes_the_three_buckets() {
        // Unperturbable: threshold 0 never perturbs.
        let spec = ScenarioSpec::new("p", Archetype::BenignIo, 500);
        let trace = generate_scenario(&spec, 2);
        let quiet = replay_trace(&trace, &settings_static(0.0), 2).unwrap();
        assert_eq!(proxy_outcome(&quiet.records, None), (Outcome::Succeeded, None));

        // Static mode has no escalation concept: perturbations hamper.
        let noisy = replay_trace(&trace, &settings_static(1.0), 2).unwrap();
        let (outcome, site) = proxy_outcome(&noisy.records, None);
        assert_eq!((outcome, site), (Outcome::Hampered, None));

        // Dynamic mode: the staged intrusion crashes at an escalated call.
        let apt = generate_scenario(&ScenarioSpec::new("p2", Archetype::Apt, 60), 7);
        let dyn_out = replay_trace(&apt, &PolicySettings::default(), 7).unwrap();
        let (outcome, site) = proxy_outcome(&dyn_out.records, Some(0.95));
        assert_eq!(outcome, Outcome::Crashed);
        let (pid, seq) = site.unwrap();
        let rec = dyn_out
            .records
            .iter()
            .find(|r| r.pid == pid && r.seq == seq)
            .unwrap();
        assert!(rec.threshold_used.unwrap() >= 0.95);
        assert!(rec.is_perturb());
    }

    #[test]
    fn merged_stats_are_sum_consistent() {
        let a = replay_trace(
            &generate_scenario(&ScenarioSpec::new("a", Archetype::Flooder, 400), 1),
            &settings_static(0.5),
            1,
        )
        .unwrap()
        .stats;
        let b = replay_trace(
            &generate_scenario(&ScenarioSpec::new("b", Archetype::Virus, 300), 2),
            &settings_static(0.5),
            2,
        )
        .unwrap()
        .stats;
        let mut merged = a.clone();
        merged.merge(&b);
        assert_eq!(merged.total_events, a.total_events + b.total_events);
        assert_eq!(merged.perturbed, a.perturbed + b.perturbed);
        assert_eq!(
            merged.connection_related.events,
            a.connection_related.events + b.connection_related.events
        );
        assert_eq!(
            merged.overall_rate,
            merged.perturbed as f64 / merged.in_set_events as f64
        );
        // Identity under empty merge.
        let mut with_empty = a.clone();
        let mut empty = StatsDocument::new(0);
        empty.finish();
        with_empty.merge(&empty);
        assert_eq!(with_empty, a);
    }

    #[test]
    fn log_and_stats_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ScenarioSpec::new("w", Archetype::Virus, 120);
        let trace = generate_scenario(&spec, 4);
        let out = replay_trace(&trace, &settings_static(0.3), 4).unwrap();
        let log = dir.path().join("decisions.jsonl");
        let stats = dir.path().join("stats.json");
        write_decision_log(&log, &out.records).unwrap();
        write_stats(&stats, &out.stats).unwrap();
        let records = load_decision_log(&log).unwrap();
        assert_eq!(records, out.records);
        let text = std::fs::read_to_string(&log).unwrap();
        assert_eq!(text, decision_log_to_jsonl(&out.records));
        let doc: StatsDocument =
            serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
        assert_eq!(doc, out.stats);
    }
}
