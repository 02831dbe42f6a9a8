//! Per-process policy state: counters, Behaviors 1–4 detection, the
//! piecewise dynamic threshold, and the corruption-protection fd registry.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::event::SyscallEvent;
use crate::syscall::SyscallName;

/// Execution environment of a traced process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessEnv {
    Standard,
    Uncertain,
}

/// Which strategy set applies to a process (non-intrusive for whitelisted
/// software, intrusive otherwise).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategySet {
    NonIntrusive,
    Intrusive,
}

/// Which counter gates the dynamic-threshold warmup comparison
/// (`… > warmup`) in rows (b)/(c): the total monitored count (prose
/// reading, default) or the per-name count (formula-subscript reading).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupGate {
    #[default]
    Total,
    PerName,
}

/// Dynamic-threshold parameters; defaults are the reference operating
/// point (10% floor, 95% cap, factor 1.2, trigger share 0.70, warmup 100).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdParams {
    /// Default threshold every process starts with.
    pub t_d: f64,
    /// Escalation ceiling (not 1.0: borderline processes must keep running).
    pub t_max: f64,
    /// Proportionality factor applied to the invocation ratio.
    pub p: f64,
    /// Ratio bound above which an invocation counts as "frequent".
    pub r: f64,
    /// Monitored-call count before dynamic updates activate.
    pub warmup: u64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams {
            t_d: 0.10,
            t_max: 0.95,
            p: 1.2,
            r: 0.70,
            warmup: 100,
        }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !prob(self.t_d) || !prob(self.t_max) || self.t_d > self.t_max {
            return Err(PolicyError::InvalidParams(
                "threshold params require 0 <= t_d <= t_max <= 1",
            ));
        }
        if !(self.p > 0.0) || !self.p.is_finite() {
            return Err(PolicyError::InvalidParams("P must be a finite positive factor"));
        }
        if !prob(self.r) {
            return Err(PolicyError::InvalidParams("r must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Protected-path rules for corruption protection: a path is critical when
/// it starts with any configured prefix or contains any configured keyword.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectionRules {
    pub prefixes: Vec<String>,
    pub keywords: Vec<String>,
}

impl Default for ProtectionRules {
    fn default() -> Self {
        ProtectionRules {
            prefixes: ["/lib", "/usr/lib", "/lib64", "/etc", "/proc", "/sys", "/dev"]
                .into_iter()
                .map(String::from)
                .collect(),
            keywords: [".so", "ld-"].into_iter().map(String::from).collect(),
        }
    }
}

impl ProtectionRules {
    pub fn matches(&self, path: &str) -> bool {
        self.prefixes.iter().any(|p| path.starts_with(p.as_str()))
            || self.keywords.iter().any(|k| path.contains(k.as_str()))
    }
}

/// Configuration for behavior detection and escalation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorConfig {
    /// Directories whose mention in an unlink/rename path marks Behavior 4.
    pub system_binary_dirs: Vec<String>,
    /// Escalate every syscall name (not just the trigger) on Behaviors 2–4.
    pub escalate_all_names: bool,
    /// Strict mode: Behaviors 2–4 set flags only after warmup.
    pub escalate_requires_warmup: bool,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            system_binary_dirs: ["/bin/", "/sbin/", "/usr/bin/", "/usr/sbin/"]
                .into_iter()
                .map(String::from)
                .collect(),
            escalate_all_names: false,
            escalate_requires_warmup: false,
        }
    }
}

/// A malware-indicative behavior signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    B1FrequentInvocation,
    B2ElfHeaderWrite,
    B3StdRedirect,
    B4BinaryRenameUnlink,
}

/// One detected behavior, with the syscall that triggered it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub which: BehaviorKind,
    pub trigger: SyscallName,
}

/// Errors from the policy core.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("unknown syscall name `{0}` (canonical `sys_*` names or `other` expected)")]
    UnknownSyscallName(String),
    #[error("{0} is not in the interference set")]
    NotInInterferenceSet(SyscallName),
    #[error("out-of-order event for pid {pid}: expected seq {expected}, got {got}")]
    OutOfOrderSeq { pid: u32, expected: u64, got: u64 },
    #[error("event pid {event} does not match state pid {state}")]
    PidMismatch { state: u32, event: u32 },
    #[error("invalid event (pid {pid}, seq {seq}): {reason}")]
    InvalidEvent { pid: u32, seq: u64, reason: &'static str },
    #[error("invalid policy parameters: {0}")]
    InvalidParams(&'static str),
}

/// Per-traced-process policy state — the user-space equivalent of what a
/// kernel implementation would hang off the task struct: process_env,
/// strategy_set, fd_list, threshold, plus the per-syscall counters of the
/// dynamic threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessState {
    pub pid: u32,
    pub process_env: ProcessEnv,
    pub strategy_set: StrategySet,
    /// Static per-process threshold; `None` selects the dynamic piecewise
    /// threshold.
    pub static_threshold: Option<f64>,
    /// Protected descriptors (corruption protection).
    pub fd_list: BTreeSet<i32>,
    /// Monitored (interference-set, unprotected) syscall total.
    pub total_syscall_cnt: u64,
    /// Per-name slice of `total_syscall_cnt`.
    pub per_syscall_cnt: BTreeMap<SyscallName, u64>,
    /// Names escalated to t_max by Behaviors 2–4; sticky for process
    /// lifetime.
    pub behavior_flags: BTreeSet<SyscallName>,
    /// Next expected per-pid sequence number.
    pub next_seq: u64,
}

impl ProcessState {
    pub fn new(pid: u32, process_env: ProcessEnv, strategy_set: StrategySet) -> Self {
        ProcessState {
            pid,
            process_env,
            strategy_set,
            static_threshold: None,
            fd_list: BTreeSet::new(),
            total_syscall_cnt: 0,
            per_syscall_cnt: BTreeMap::new(),
            behavior_flags: BTreeSet::new(),
            next_seq: 1,
        }
    }

    pub fn with_static_threshold(mut self, threshold: f64) -> Self {
        self.static_threshold = Some(threshold);
        self
    }

    /// True iff `name` carries a Behavior 2–4 escalation flag.
    pub fn behavior_flag(&self, name: SyscallName) -> bool {
        self.behavior_flags.contains(&name)
    }

    /// Validates that `event` belongs to this process and is the next in
    /// sequence, then advances the expected sequence number.
    pub fn check_and_advance_seq(&mut self, event: &SyscallEvent) -> Result<(), PolicyError> {
        if event.pid != self.pid {
            return Err(PolicyError::PidMismatch {
                state: self.pid,
                event: event.pid,
            });
        }
        if event.seq != self.next_seq {
            return Err(PolicyError::OutOfOrderSeq {
                pid: self.pid,
                expected: self.next_seq,
                got: event.seq,
            });
        }
        self.next_seq += 1;
        Ok(())
    }

    /// The observation pass: sequence validation, counter updates for
    /// interference-set events, Behavior 1–4 detection, and escalation-flag
    /// updates for Behaviors 2–4. Returns every behavior this event
    /// triggered.
    pub fn observe(
        &mut self,
        event: &SyscallEvent,
        params: &ThresholdParams,
        behavior: &BehaviorConfig,
    ) -> Result<Vec<BehaviorEvent>, PolicyError> {
        self.check_and_advance_seq(event)?;
        Ok(self.observe_unsequenced(event, params, behavior))
    }

    /// `observe` minus the sequence bookkeeping — for callers (the engine)
    /// that validate sequencing for *all* events, including the
    /// protected/standard ones that skip counter updates entirely.
    pub fn observe_unsequenced(
        &mut self,
        event: &SyscallEvent,
        params: &ThresholdParams,
        behavior: &BehaviorConfig,
    ) -> Vec<BehaviorEvent> {
        let in_set = event.name.in_interference_set();
        if in_set {
            self.total_syscall_cnt += 1;
            *self.per_syscall_cnt.entry(event.name).or_insert(0) += 1;
        }

        let mut out = Vec::new();
        // Behavior 1: frequent invocation, judged on the post-increment
        // ratio once past warmup. Reported for logging; threshold rows
        // (b)/(c) already carry its whole effect, so no flag is set.
        if in_set
            && self.total_syscall_cnt > params.warmup
            && self.ratio(event.name) > params.r
        {
            out.push(BehaviorEvent {
                which: BehaviorKind::B1FrequentInvocation,
                trigger: event.name,
            });
        }
        // Behavior 2: ELF-magic write (file-write family only).
        if event.name.is_b2_write_family() && event.has_elf_magic() {
            out.push(BehaviorEvent {
                which: BehaviorKind::B2ElfHeaderWrite,
                trigger: event.name,
            });
        }
        // Behavior 3: duplication of a standard stream descriptor.
        if event.name.is_dup_family() && matches!(event.fd, Some(0..=2)) {
            out.push(BehaviorEvent {
                which: BehaviorKind::B3StdRedirect,
                trigger: event.name,
            });
        }
        // Behavior 4: rename/unlink touching a system-binary directory.
        if matches!(event.name, SyscallName::Unlink | SyscallName::Rename)
            && event.path.as_deref().is_some_and(|p| {
                behavior
                    .system_binary_dirs
                    .iter()
                    .any(|d| p.contains(d.as_str()))
            })
        {
            out.push(BehaviorEvent {
                which: BehaviorKind::B4BinaryRenameUnlink,
                trigger: event.name,
            });
        }

        let escalates = out
            .iter()
            .any(|b| b.which != BehaviorKind::B1FrequentInvocation);
        if escalates
            && (!behavior.escalate_requires_warmup || self.total_syscall_cnt > params.warmup)
        {
            if behavior.escalate_all_names {
                self.behavior_flags
                    .extend(SyscallName::INTERFERENCE_SET.iter().copied());
            } else {
                self.behavior_flags.insert(event.name);
            }
        }
        out
    }

    /// `Count_syscall / Count_totalsyscall`; 0 when nothing was counted.
    pub fn ratio(&self, name: SyscallName) -> f64 {
        if self.total_syscall_cnt == 0 {
            return 0.0;
        }
        let per = self.per_syscall_cnt.get(&name).copied().unwrap_or(0);
        per as f64 / self.total_syscall_cnt as f64
    }

    /// The piecewise dynamic threshold, evaluated fresh per invocation with
    /// the default total-count warmup gate. Rows, in order:
    /// (a) escalated name → `t_max`; (b) warmed ∧ `P·ratio ≥ t_max` →
    /// `t_max`; (c) warmed ∧ `ratio > r` ∧ `P·ratio < t_max` → `P·ratio`;
    /// (d) otherwise `t_d`. The result is clamped into `[t_d, t_max]`
    /// (a no-op for the default parameters).
    pub fn threshold(&self, name: SyscallName, params: &ThresholdParams) -> f64 {
        self.threshold_with_gate(name, params, WarmupGate::Total)
    }

    /// [`ProcessState::threshold`] with an explicit warmup-gate mode.
    pub fn threshold_with_gate(
        &self,
        name: SyscallName,
        params: &ThresholdParams,
        gate: WarmupGate,
    ) -> f64 {
        let raw = if self.behavior_flag(name) {
            params.t_max
        } else {
            let gate_count = match gate {
                WarmupGate::Total => self.total_syscall_cnt,
                WarmupGate::PerName => self.per_syscall_cnt.get(&name).copied().unwrap_or(0),
            };
            let warmed = gate_count > params.warmup;
            let ratio = self.ratio(name);
            let p_ratio = params.p * ratio;
            if warmed && p_ratio >= params.t_max {
                params.t_max
            } else if warmed && ratio > params.r && p_ratio < params.t_max {
                p_ratio
            } else {
                params.t_d
            }
        };
        raw.clamp(params.t_d, params.t_max)
    }

    /// The per-event threshold the engine actually uses: the static
    /// per-process value when configured, else the dynamic piecewise one.
    pub fn effective_threshold(
        &self,
        name: SyscallName,
        params: &ThresholdParams,
        gate: WarmupGate,
    ) -> f64 {
        match self.static_threshold {
            Some(t) => t,
            None => self.threshold_with_gate(name, params, gate),
        }
    }

    /// Corruption-protection bookkeeping. Open-family events whose path
    /// matches `rules` add the resulting descriptor; `sys_close` removes
    /// its descriptor; dup-family calls propagate protection from a
    /// protected source to the new descriptor, and `dup2`/`dup3` onto a
    /// protected destination drop the destination (the call implicitly
    /// closes it). Returns whether `fd_list` changed. Events outside these
    /// families (or open-family events lacking a resulting fd) are no-ops.
    pub fn register_fd(&mut self, event: &SyscallEvent, rules: &ProtectionRules) -> bool {
        let returned_fd = event
            .native_return
            .filter(|r| (0..=i32::MAX as i64).contains(r))
            .map(|r| r as i32);
        if event.name.is_open_family() {
            if let (Some(path), Some(fd)) = (event.path.as_deref(), returned_fd) {
                if rules.matches(path) {
                    return self.fd_list.insert(fd);
                }
            }
            return false;
        }
        if event.name == SyscallName::Close {
            if let Some(fd) = event.fd {
                return self.fd_list.remove(&fd);
            }
            return false;
        }
        if event.name.is_dup_family() {
            if let Some(new_fd) = returned_fd {
                let source_protected = event.fd.is_some_and(|src| self.fd_list.contains(&src));
                if source_protected {
                    return self.fd_list.insert(new_fd);
                }
                if matches!(event.name, SyscallName::Dup2 | SyscallName::Dup3) {
                    return self.fd_list.remove(&new_fd);
                }
            }
            return false;
        }
        false
    }

    /// True iff this event is exempt from interference: it carries a
    /// descriptor in `fd_list`, or it is an open-family call for a path
    /// matching the protection rules (the open itself must pass through so
    /// its descriptor can be tracked).
    pub fn is_protected(&self, event: &SyscallEvent, rules: &ProtectionRules) -> bool {
        if let Some(fd) = event.fd {
            if self.fd_list.contains(&fd) {
                return true;
            }
        }
        if event.name.is_open_family() {
            if let Some(path) = event.path.as_deref() {
                return rules.matches(path);
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn st() -> ProcessState {
        ProcessState::new(1, ProcessEnv::Uncertain, StrategySet::Intrusive)
    }

    fn ev(seq: u64, name: SyscallName) -> SyscallEvent {
        SyscallEvent::new(1, seq, name)
    }

    fn observe_all(state: &mut ProcessState, events: &[SyscallEvent]) -> Vec<BehaviorEvent> {
        let params = ThresholdParams::default();
        let cfg = BehaviorConfig::default();
        let mut out = Vec::new();
        for e in events {
            out.extend(state.observe(e, &params, &cfg).unwrap());
        }
        out
    }

    #[test]
    fn counters_track_interference_set_events_only() {
        let mut s = st();
        let events = vec![
            ev(1, SyscallName::Read),
            ev(2, SyscallName::Other),
            ev(3, SyscallName::Write),
            ev(4, SyscallName::Write),
        ];
        observe_all(&mut s, &events);
        assert_eq!(s.total_syscall_cnt, 3);
        assert_eq!(s.per_syscall_cnt[&SyscallName::Write], 2);
        assert_eq!(s.per_syscall_cnt[&SyscallName::Read], 1);
        assert!(!s.per_syscall_cnt.contains_key(&SyscallName::Other));
        // Conservation: total equals the sum of per-name counts.
        assert_eq!(s.total_syscall_cnt, s.per_syscall_cnt.values().sum::<u64>());
    }

    #[test]
    fn out_of_order_and_wrong_pid_events_are_rejected() {
        let mut s = st();
        let params = ThresholdParams::default();
        let cfg = BehaviorConfig::default();
        s.observe(&ev(1, SyscallName::Read), &params, &cfg).unwrap();
        let err = s.observe(&ev(3, SyscallName::Read), &params, &cfg).unwrap_err();
        assert_eq!(
            err,
            PolicyError::OutOfOrderSeq {
                pid: 1,
                expected: 2,
                got: 3
            }
        );
        let foreign = SyscallEvent::new(9, 2, SyscallName::Read);
        assert!(matches!(
            s.observe(&foreign, &params, &cfg),
            Err(PolicyError::PidMismatch { .. })
        ));
    }

    #[test]
    fn ratio_matches_worked_examples() {
        let mut s = st();
        // counts {write: 80, total: 100} → 0.80
        let mut seq = 0;
        let mut push = |name, n: u64, s: &mut ProcessState| {
            for _ in 0..n {
                seq += 1;
                s.observe(
                    &ev(seq, name),
                    &ThresholdParams::default(),
                    &BehaviorConfig::default(),
                )
                .unwrap();
            }
        };
        push(SyscallName::Write, 80, &mut s);
        push(SyscallName::Read, 20, &mut s);
        assert_eq!(s.ratio(SyscallName::Write), 0.80);
        // empty-state convention
        let empty = st();
        assert_eq!(empty.ratio(SyscallName::Write), 0.0);
        // counts {read: 70, write: 30}, name = read → 0.70
        let mut s2 = st();
        let mut seq2 = 0;
        let mut push2 = |name, n: u64, s: &mut ProcessState| {
            for _ in 0..n {
                seq2 += 1;
                s.observe(
                    &ev(seq2, name),
                    &ThresholdParams::default(),
                    &BehaviorConfig::default(),
                )
                .unwrap();
            }
        };
        push2(SyscallName::Read, 70, &mut s2);
        push2(SyscallName::Write, 30, &mut s2);
        assert_eq!(s2.ratio(SyscallName::Read), 0.70);
    }

    /// Drives a state to exact counter values without the observe loop.
    fn state_with_counts(pairs: &[(SyscallName, u64)]) -> ProcessState {
        let mut s = st();
        for (name, n) in pairs {
            s.per_syscall_cnt.insert(*name, *n);
            s.total_syscall_cnt += n;
        }
        s
    }

    #[test]
    fn threshold_matches_worked_examples() {
        let params = ThresholdParams::default();
        // (b): total=200, ratio(write)=0.80 → 1.2·0.8 = 0.96 ≥ 0.95 → t_max.
        let s = state_with_counts(&[(SyscallName::Write, 160), (SyscallName::Read, 40)]);
        assert_eq!(s.ratio(SyscallName::Write), 0.80);
        assert_eq!(s.threshold(SyscallName::Write, &params), 0.95);
        // (c): ratio 0.75 → P·ratio, which is 1.2 × 0.75 in f64
        // (0.8999999999999999; displays as 0.90 at two decimals).
        let s = state_with_counts(&[(SyscallName::Write, 150), (SyscallName::Read, 50)]);
        assert_eq!(s.ratio(SyscallName::Write), 0.75);
        assert_eq!(s.threshold(SyscallName::Write, &params), 1.2f64 * 0.75);
        assert!((s.threshold(SyscallName::Write, &params) - 0.90).abs() < 1e-12);
        // (a): flagged name → t_max regardless of counters.
        let mut s = state_with_counts(&[(SyscallName::Write, 1)]);
        s.behavior_flags.insert(SyscallName::Write);
        assert_eq!(s.threshold(SyscallName::Write, &params), 0.95);
        // (d): warmup not reached (total = 50 ≤ 100) even at ratio 0.9.
        let s = state_with_counts(&[(SyscallName::Write, 45), (SyscallName::Read, 5)]);
        assert_eq!(s.ratio(SyscallName::Write), 0.9);
        assert_eq!(s.threshold(SyscallName::Write, &params), 0.10);
    }

    #[test]
    fn threshold_boundary_cases() {
        let params = ThresholdParams::default();
        // P·ratio == t_max exactly: ratio 19/24 (P = 1.2 → product 0.95
        // bit-exactly in f64) lands in row (b) via ≥.
        let s = state_with_counts(&[(SyscallName::Write, 190), (SyscallName::Read, 50)]);
        assert_eq!(1.2f64 * s.ratio(SyscallName::Write), 0.95);
        assert_eq!(s.threshold(SyscallName::Write, &params), 0.95);
        // The 0.7917 boundary: P·ratio = 0.95004 ≥ t_max → row (b).
        let s = state_with_counts(&[(SyscallName::Write, 7917), (SyscallName::Read, 2083)]);
        assert_eq!(s.ratio(SyscallName::Write), 0.7917);
        assert_eq!(s.threshold(SyscallName::Write, &params), 0.95);
        // Warmup edge: strict >, so total = 100 is cold, 101 is warm.
        let s100 = state_with_counts(&[(SyscallName::Write, 100)]);
        assert_eq!(s100.threshold(SyscallName::Write, &params), 0.10);
        let s101 = state_with_counts(&[(SyscallName::Write, 101)]);
        assert_eq!(s101.threshold(SyscallName::Write, &params), 0.95);
    }

    #[test]
    fn threshold_per_name_gate_mode() {
        let params = ThresholdParams::default();
        // total 140 (> warmup): the total gate is warm, so this lands in
        // row (c) — ratio 110/140 ≈ 0.786 > r, P·ratio ≈ 0.943 < t_max.
        let s = state_with_counts(&[(SyscallName::Write, 110), (SyscallName::Read, 30)]);
        assert_eq!(
            s.threshold_with_gate(SyscallName::Write, &params, WarmupGate::Total),
            1.2f64 * (110.0 / 140.0)
        );
        let cold = state_with_counts(&[(SyscallName::Write, 90), (SyscallName::Read, 12)]);
        assert!(cold.ratio(SyscallName::Write) > 0.7);
        assert_eq!(
            cold.threshold_with_gate(SyscallName::Write, &params, WarmupGate::PerName),
            0.10
        );
        assert_eq!(
            cold.threshold_with_gate(SyscallName::Write, &params, WarmupGate::Total),
            0.95
        );
    }

    #[test]
    fn behavior_b2_elf_header_write() {
        let mut s = st();
        let elf = ev(1, SyscallName::Write).with_buffer(&[0x7f, b'E', b'L', b'F', 2, 1], 64);
        let got = observe_all(&mut s, &[elf]);
        assert_eq!(
            got,
            vec![BehaviorEvent {
                which: BehaviorKind::B2ElfHeaderWrite,
                trigger: SyscallName::Write
            }]
        );
        assert!(s.behavior_flag(SyscallName::Write));
        assert!(!s.behavior_flag(SyscallName::Read));
        // ELF payload through a network send is not B2 (file writes only).
        let mut s2 = st();
        let send = ev(1, SyscallName::Sendto).with_buffer(&[0x7f, b'E', b'L', b'F'], 4);
        assert!(observe_all(&mut s2, &[send]).is_empty());
        assert!(s2.behavior_flags.is_empty());
    }

    #[test]
    fn behavior_b3_std_redirect() {
        let mut s = st();
        let got = observe_all(&mut s, &[ev(1, SyscallName::Dup2).with_fd(0).with_native_return(5)]);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].which, BehaviorKind::B3StdRedirect);
        assert!(s.behavior_flag(SyscallName::Dup2));
        // Source fd 3 is not a standard stream.
        let mut s2 = st();
        assert!(observe_all(&mut s2, &[ev(1, SyscallName::Dup).with_fd(3)]).is_empty());
        // fd 2 (stderr) counts.
        let mut s3 = st();
        assert_eq!(
            observe_all(&mut s3, &[ev(1, SyscallName::Dup3).with_fd(2)]).len(),
            1
        );
    }

    #[test]
    fn behavior_b4_binary_rename_unlink() {
        let mut s = st();
        let got = observe_all(&mut s, &[ev(1, SyscallName::Unlink).with_path("/usr/bin/sudo")]);
        assert_eq!(got[0].which, BehaviorKind::B4BinaryRenameUnlink);
        assert!(s.behavior_flag(SyscallName::Unlink));
        let mut s2 = st();
        let got2 = observe_all(
            &mut s2,
            &[ev(1, SyscallName::Rename).with_path("/bin/ls")],
        );
        assert_eq!(got2[0].which, BehaviorKind::B4BinaryRenameUnlink);
        // /tmp is not a system-binary directory; unlink there is clean.
        let mut s3 = st();
        assert!(observe_all(&mut s3, &[ev(1, SyscallName::Unlink).with_path("/tmp/x")]).is_empty());
        // Behavior detection is name-scoped: write is unaffected (B4 on
        // unlink must not raise sys_write's threshold).
        let params = ThresholdParams::default();
        assert_eq!(s.threshold(SyscallName::Write, &params), params.t_d);
    }

    #[test]
    fn behavior_b1_reports_after_warmup_without_flagging() {
        let params = ThresholdParams::default();
        let cfg = BehaviorConfig::default();
        let mut s = st();
        let mut behaviors = Vec::new();
        for seq in 1..=150 {
            behaviors.extend(
                s.observe(&ev(seq, SyscallName::Sendto), &params, &cfg)
                    .unwrap(),
            );
        }
        // ratio = 1.0 > r from the start, but reports only once past warmup.
        let b1s = behaviors
            .iter()
            .filter(|b| b.which == BehaviorKind::B1FrequentInvocation)
            .count();
        assert_eq!(b1s, 50);
        assert!(s.behavior_flags.is_empty());
        assert_eq!(s.threshold(SyscallName::Sendto, &params), 0.95);
    }

    #[test]
    fn ordinary_read_triggers_nothing() {
        let mut s = st();
        assert!(observe_all(&mut s, &[ev(1, SyscallName::Read).with_fd(4)]).is_empty());
        assert!(s.behavior_flags.is_empty());
    }

    #[test]
    fn escalation_options() {
        let params = ThresholdParams::default();
        // escalate_all_names: one B3 escalates the whole set.
        let mut cfg = BehaviorConfig {
            escalate_all_names: true,
            ..BehaviorConfig::default()
        };
        let mut s = st();
        s.observe(&ev(1, SyscallName::Dup2).with_fd(0), &params, &cfg)
            .unwrap();
        assert!(s.behavior_flag(SyscallName::Read));
        assert_eq!(s.threshold(SyscallName::Read, &params), 0.95);
        // strict warmup gating: the behavior is reported but not flagged
        // while cold.
        cfg = BehaviorConfig {
            escalate_requires_warmup: true,
            ..BehaviorConfig::default()
        };
        let mut s2 = st();
        let got = s2
            .observe(&ev(1, SyscallName::Dup2).with_fd(0), &params, &cfg)
            .unwrap();
        assert_eq!(got.len(), 1);
        assert!(s2.behavior_flags.is_empty());
    }

    #[test]
    fn flags_are_sticky_and_only_raise() {
        let params = ThresholdParams::default();
        let mut s = st();
        s.behavior_flags.insert(SyscallName::Write);
        let before = s.threshold(SyscallName::Write, &params);
        assert_eq!(before, params.t_max);
        // More traffic on other names cannot lower an escalated threshold.
        s.per_syscall_cnt.insert(SyscallName::Read, 5000);
        s.total_syscall_cnt += 5000;
        assert_eq!(s.threshold(SyscallName::Write, &params), params.t_max);
    }

    #[test]
    fn register_fd_tracks_open_close_dup() {
        let rules = ProtectionRules::default();
        let mut s = st();
        // Spec example: open of libc returning fd 3.
        let open = ev(1, SyscallName::Open)
            .with_path("/lib/x86_64-linux-gnu/libc.so.6")
            .with_native_return(3);
        assert!(s.register_fd(&open, &rules));
        assert!(s.fd_list.contains(&3));
        // Non-critical path: unchanged, false.
        let tmp = ev(2, SyscallName::Open)
            .with_path("/tmp/a.txt")
            .with_native_return(4);
        assert!(!s.register_fd(&tmp, &rules));
        // dup of the protected source propagates.
        let dup = ev(3, SyscallName::Dup).with_fd(3).with_native_return(7);
        assert!(s.register_fd(&dup, &rules));
        assert!(s.fd_list.contains(&7));
        // dup2 onto a protected destination drops it (implicit close).
        let clobber = ev(4, SyscallName::Dup2).with_fd(4).with_native_return(7);
        assert!(s.register_fd(&clobber, &rules));
        assert!(!s.fd_list.contains(&7));
        // close removes.
        let close = ev(5, SyscallName::Close).with_fd(3);
        assert!(s.register_fd(&close, &rules));
        assert!(s.fd_list.is_empty());
        // Spec error case: open-family without a resulting fd is a no-op.
        let pending = ev(6, SyscallName::Openat).with_path("/etc/passwd");
        assert!(!s.register_fd(&pending, &rules));
        // Failed open (negative return) registers nothing.
        let failed = ev(7, SyscallName::Openat)
            .with_path("/etc/passwd")
            .with_native_return(-13);
        assert!(!s.register_fd(&failed, &rules));
        assert!(s.fd_list.is_empty());
    }

    #[test]
    fn protection_rules_match_prefixes_and_keywords() {
        let rules = ProtectionRules::default();
        for p in [
            "/lib/x86_64-linux-gnu/libc.so.6",
            "/usr/lib/locale/C.UTF-8",
            "/lib64/ld-linux-x86-64.so.2",
            "/etc/ld.so.cache",
            "/proc/self/maps",
            "/sys/kernel/mm",
            "/dev/null",
            "/opt/vendor/libhelper.so",
            "/home/user/ld-musl.cache",
        ] {
            assert!(rules.matches(p), "{p}");
        }
        for p in ["/tmp/a.txt", "/home/user/notes.md", "/var/log/app.log"] {
            assert!(!rules.matches(p), "{p}");
        }
    }

    #[test]
    fn is_protected_matches_documented_examples() {
        let rules = ProtectionRules::default();
        let mut s = st();
        s.fd_list.insert(3);
        assert!(s.is_protected(&ev(1, SyscallName::Write).with_fd(3), &rules));
        assert!(!s.is_protected(&ev(2, SyscallName::Write).with_fd(4), &rules));
        assert!(!s.is_protected(&ev(3, SyscallName::Nanosleep), &rules));
        // The open of a critical path is itself exempt.
        assert!(s.is_protected(
            &ev(4, SyscallName::Openat).with_path("/etc/ssh/ssh_host_rsa_key"),
            &rules
        ));
        assert!(!s.is_protected(&ev(5, SyscallName::Openat).with_path("/tmp/x"), &rules));
    }

    #[test]
    fn threshold_params_validation() {
        ThresholdParams::default().validate().unwrap();
        let bad = ThresholdParams {
            t_d: 0.5,
            t_max: 0.4,
            ..ThresholdParams::default()
        };
        assert!(bad.validate().is_err());
        let bad_p = ThresholdParams {
            p: 0.0,
            ..ThresholdParams::default()
        };
        assert!(bad_p.validate().is_err());
        let bad_r = ThresholdParams {
            r: 1.5,
            ..ThresholdParams::default()
        };
        assert!(bad_r.validate().is_err());
    }

    #[test]
    fn threshold_clamps_adversarial_params_into_band() {
        // Row (c) with a tiny P would fall below t_d without the clamp.
        let params = ThresholdParams {
            t_d: 0.2,
            t_max: 0.9,
            p: 0.25,
            r: 0.5,
            warmup: 10,
        };
        let s = state_with_counts(&[(SyscallName::Write, 60), (SyscallName::Read, 40)]);
        // ratio 0.6 > r, P·ratio = 0.15 < t_d.
        let t = s.threshold(SyscallName::Write, &params);
        assert_eq!(t, 0.2);
        assert!((params.t_d..=params.t_max).contains(&t));
    }
}
