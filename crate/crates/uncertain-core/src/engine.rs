//! Multi-process orchestration: feeds an ordered event stream through
//! sequence validation, counter/behavior observation, the interference
//! decision, and corruption-protection bookkeeping — one deterministic
//! RNG stream per process.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::decide::{decide, InterferenceDecision, PassReason, PolicySettings, ThresholdMode};
use crate::event::SyscallEvent;
use crate::policy::{BehaviorEvent, PolicyError, ProcessEnv, ProcessState, StrategySet};
use crate::rng::{derive_stream, SplitMix64};

/// Everything one event produced: detected behaviors, the decision, and
/// whether the protected-descriptor registry changed.
#[derive(Debug, Clone, PartialEq)]
pub struct EventOutcome {
    pub behaviors: Vec<BehaviorEvent>,
    pub decision: InterferenceDecision,
    pub fd_changed: bool,
}

struct ProcEntry {
    state: ProcessState,
    rng: SplitMix64,
}

/// The policy engine. Each process gets its own [`ProcessState`] and its
/// own RNG stream derived from `(base_seed, pid)`, so per-pid decision
/// sequences are independent of how streams from different pids
/// interleave.
pub struct Engine {
    settings: PolicySettings,
    base_seed: u64,
    procs: BTreeMap<u32, ProcEntry>,
}

impl Engine {
    pub fn new(settings: PolicySettings, base_seed: u64) -> Self {
        Engine {
            settings,
            base_seed,
            procs: BTreeMap::new(),
        }
    }

    pub fn settings(&self) -> &PolicySettings {
        &self.settings
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    /// The state for `pid`, if that process has been seen or configured.
    pub fn state(&self, pid: u32) -> Option<&ProcessState> {
        self.procs.get(&pid).map(|p| &p.state)
    }

    /// Pids seen so far, ascending.
    pub fn pids(&self) -> Vec<u32> {
        self.procs.keys().copied().collect()
    }

    fn new_entry(&self, pid: u32, env: ProcessEnv, set: StrategySet) -> ProcEntry {
        let mut state = ProcessState::new(pid, env, set);
        if let ThresholdMode::Static(t) = self.settings.mode {
            state.static_threshold = Some(t);
        }
        ProcEntry {
            state,
            rng: SplitMix64::new(derive_stream(self.base_seed, pid as u64)),
        }
    }

    /// Pre-creates (or re-labels, if no events seen yet) the process
    /// `pid` with an explicit environment and strategy set — how
    /// whitelisting and standard-environment assignments reach the
    /// engine. Re-labeling after events have been processed is rejected:
    /// counters and RNG consumption would no longer match the label.
    pub fn configure_process(
        &mut self,
        pid: u32,
        env: ProcessEnv,
        set: StrategySet,
    ) -> Result<(), PolicyError> {
        match self.procs.get_mut(&pid) {
            None => {
                let entry = self.new_entry(pid, env, set);
                self.procs.insert(pid, entry);
                Ok(())
            }
            Some(entry) if entry.state.next_seq == 1 => {
                entry.state.process_env = env;
                entry.state.strategy_set = set;
                Ok(())
            }
            Some(entry) => Err(PolicyError::InvalidEvent {
                pid,
                seq: entry.state.next_seq,
                reason: "process already has events; cannot re-label env/strategy set",
            }),
        }
    }

    /// Runs one event through the full pipeline. Events must arrive in
    /// per-pid `seq` order (`1, 2, 3, …`); streams from different pids
    /// may interleave arbitrarily.
    ///
    /// Pipeline: validate shape and sequence; a standard-environment
    /// process passes immediately (no counters, no fd tracking — the
    /// uncertain machinery never engages). Otherwise corruption-protected
    /// events skip observation but still report their would-be threshold;
    /// unprotected events are observed (counters + behaviors) and then
    /// decided; protection bookkeeping runs last so the event's own
    /// decision reflects the pre-event registry.
    ///
    /// Equivalent to [`Engine::decide_event`] followed by
    /// [`Engine::commit_return`] — live tracers use the split form
    /// because a syscall's return value exists only after the call.
    pub fn process_event(&mut self, event: &SyscallEvent) -> Result<EventOutcome, PolicyError> {
        let mut outcome = self.decide_event(event)?;
        outcome.fd_changed = self.commit_return(event);
        Ok(outcome)
    }

    /// The decision half of the pipeline: validation, sequencing,
    /// observation, and the interference decision — everything that is
    /// known at syscall *entry*. `fd_changed` in the result is always
    /// false; protection bookkeeping happens in [`Engine::commit_return`].
    pub fn decide_event(&mut self, event: &SyscallEvent) -> Result<EventOutcome, PolicyError> {
        event.validate()?;
        if !self.procs.contains_key(&event.pid) {
            let entry = self.new_entry(
                event.pid,
                self.settings.process_env,
                self.settings.strategy_set,
            );
            self.procs.insert(event.pid, entry);
        }
        let settings = &self.settings;
        let entry = self.procs.get_mut(&event.pid).expect("just inserted");
        entry.state.check_and_advance_seq(event)?;

        if entry.state.process_env == ProcessEnv::Standard {
            return Ok(EventOutcome {
                behaviors: Vec::new(),
                decision: InterferenceDecision::pass(PassReason::StandardEnv),
                fd_changed: false,
            });
        }

        let protected = entry.state.is_protected(event, &settings.protection);
        let behaviors = if protected {
            Vec::new()
        } else {
            entry
                .state
                .observe_unsequenced(event, &settings.mode.params(), &settings.behavior)
        };
        let decision = decide(&entry.state, event, settings, &mut entry.rng);
        Ok(EventOutcome {
            behaviors,
            decision,
            fd_changed: false,
        })
    }

    /// The bookkeeping half: corruption-protection registry updates from
    /// the event's return value. Call with the *same* event passed to
    /// [`Engine::decide_event`], with `native_return` filled in once
    /// known (syscall exit). Standard-environment processes track
    /// nothing. Returns whether the registry changed.
    pub fn commit_return(&mut self, event: &SyscallEvent) -> bool {
        let settings = &self.settings;
        match self.procs.get_mut(&event.pid) {
            Some(entry) if entry.state.process_env != ProcessEnv::Standard => {
                entry.state.register_fd(event, &settings.protection)
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::BehaviorKind;
    use crate::syscall::SyscallName;
    use alloc::vec;

    fn ev(pid: u32, seq: u64, name: SyscallName) -> SyscallEvent {
        SyscallEvent::new(pid, seq, name)
    }

    #[test]
    fn processes_are_created_on_first_event_with_defaults() {
        let mut engine = Engine::new(PolicySettings::default(), 42);
        engine.process_event(&ev(5, 1, SyscallName::Read)).unwrap();
        let state = engine.state(5).unwrap();
        assert_eq!(state.process_env, ProcessEnv::Uncertain);
        assert_eq!(state.strategy_set, StrategySet::Intrusive);
        assert_eq!(state.total_syscall_cnt, 1);
        assert_eq!(engine.pids(), vec![5]);
    }

    #[test]
    fn static_mode_pins_every_new_process() {
        let settings = PolicySettings {
            mode: ThresholdMode::Static(0.5),
            ..PolicySettings::default()
        };
        let mut engine = Engine::new(settings, 1);
        let out = engine.process_event(&ev(9, 1, SyscallName::Read)).unwrap();
        assert_eq!(out.decision.threshold_used, Some(0.5));
        assert_eq!(engine.state(9).unwrap().static_threshold, Some(0.5));
    }

    #[test]
    fn sequence_gaps_are_rejected() {
        let mut engine = Engine::new(PolicySettings::default(), 0);
        engine.process_event(&ev(1, 1, SyscallName::Read)).unwrap();
        let err = engine.process_event(&ev(1, 3, SyscallName::Read)).unwrap_err();
        assert_eq!(
            err,
            PolicyError::OutOfOrderSeq {
                pid: 1,
                expected: 2,
                got: 3
            }
        );
        // Other pids are unaffected by pid 1's numbering.
        engine.process_event(&ev(2, 1, SyscallName::Read)).unwrap();
    }

    #[test]
    fn standard_env_process_is_fully_inert() {
        let mut engine = Engine::new(PolicySettings::default(), 7);
        engine
            .configure_process(3, ProcessEnv::Standard, StrategySet::NonIntrusive)
            .unwrap();
        let open = ev(3, 1, SyscallName::Open)
            .with_path("/etc/passwd")
            .with_native_return(4);
        let out = engine.process_event(&open).unwrap();
        assert_eq!(out.decision.pass_reason, Some(PassReason::StandardEnv));
        assert!(!out.fd_changed);
        assert!(out.behaviors.is_empty());
        let state = engine.state(3).unwrap();
        assert_eq!(state.total_syscall_cnt, 0);
        assert!(state.fd_list.is_empty());
    }

    #[test]
    fn relabeling_after_events_is_rejected() {
        let mut engine = Engine::new(PolicySettings::default(), 7);
        engine.process_event(&ev(3, 1, SyscallName::Read)).unwrap();
        let err = engine
            .configure_process(3, ProcessEnv::Standard, StrategySet::NonIntrusive)
            .unwrap_err();
        assert!(matches!(err, PolicyError::InvalidEvent { pid: 3, .. }));
        // Pre-event configuration works, and a second configure before
        // events may still adjust.
        engine
            .configure_process(4, ProcessEnv::Uncertain, StrategySet::NonIntrusive)
            .unwrap();
        engine
            .configure_process(4, ProcessEnv::Uncertain, StrategySet::Intrusive)
            .unwrap();
        assert_eq!(
            engine.state(4).unwrap().strategy_set,
            StrategySet::Intrusive
        );
    }

    #[test]
    fn protected_events_skip_observation_but_report_threshold() {
        let mut engine = Engine::new(PolicySettings::default(), 11);
        let open = ev(8, 1, SyscallName::Openat)
            .with_path("/lib/x86_64-linux-gnu/libc.so.6")
            .with_native_return(3);
        let out = engine.process_event(&open).unwrap();
        assert_eq!(out.decision.pass_reason, Some(PassReason::Protected));
        assert_eq!(out.decision.threshold_used, Some(0.10));
        assert!(out.fd_changed);
        // The protected open did not count.
        assert_eq!(engine.state(8).unwrap().total_syscall_cnt, 0);
        // Reads on the protected descriptor stay uncounted and pass.
        for seq in 2..=50 {
            let out = engine
                .process_event(&ev(8, seq, SyscallName::Read).with_fd(3).with_buffer_len(4096))
                .unwrap();
            assert_eq!(out.decision.pass_reason, Some(PassReason::Protected));
            assert_eq!(out.decision.roll, None);
        }
        assert_eq!(engine.state(8).unwrap().total_syscall_cnt, 0);
        // Closing drops protection; the next read on fd 3 is fair game.
        let out = engine
            .process_event(&ev(8, 51, SyscallName::Close).with_fd(3))
            .unwrap();
        assert_eq!(out.decision.pass_reason, Some(PassReason::Protected));
        assert!(out.fd_changed);
        let out = engine
            .process_event(&ev(8, 52, SyscallName::Read).with_fd(3).with_buffer_len(16))
            .unwrap();
        assert_ne!(out.decision.pass_reason, Some(PassReason::Protected));
        assert_eq!(engine.state(8).unwrap().total_syscall_cnt, 1);
    }

    #[test]
    fn behaviors_flow_through_and_escalate() {
        let mut engine = Engine::new(PolicySettings::default(), 2);
        let elf = ev(1, 1, SyscallName::Write)
            .with_fd(4)
            .with_buffer(&[0x7f, b'E', b'L', b'F'], 4096);
        let out = engine.process_event(&elf).unwrap();
        assert_eq!(out.behaviors.len(), 1);
        assert_eq!(out.behaviors[0].which, BehaviorKind::B2ElfHeaderWrite);
        // The escalation is visible on the *next* write's threshold.
        let out2 = engine
            .process_event(&ev(1, 2, SyscallName::Write).with_fd(4).with_buffer_len(64))
            .unwrap();
        assert_eq!(out2.decision.threshold_used, Some(0.95));
        // …but not on reads.
        let out3 = engine
            .process_event(&ev(1, 3, SyscallName::Read).with_fd(4).with_buffer_len(64))
            .unwrap();
        assert_eq!(out3.decision.threshold_used, Some(0.10));
    }

    #[test]
    fn escalated_writes_perturb_often() {
        // After B2, sys_write sits at t_max = 0.95: over 200 writes the
        // perturbation count must be high (deterministic given the seed).
        let mut engine = Engine::new(PolicySettings::default(), 99);
        engine
            .process_event(
                &ev(1, 1, SyscallName::Write)
                    .with_fd(4)
                    .with_buffer(&[0x7f, b'E', b'L', b'F'], 64),
            )
            .unwrap();
        let mut perturbed = 0;
        for seq in 2..=201 {
            let out = engine
                .process_event(&ev(1, seq, SyscallName::Write).with_fd(4).with_buffer_len(64))
                .unwrap();
            if out.decision.is_perturb() {
                perturbed += 1;
            }
        }
        assert!(perturbed > 170, "perturbed = {perturbed}");
    }

    #[test]
    fn whitelisted_process_receives_only_non_intrusive_strategies() {
        let settings = PolicySettings {
            mode: ThresholdMode::Static(1.0),
            ..PolicySettings::default()
        };
        let mut engine = Engine::new(settings, 5);
        engine
            .configure_process(2, ProcessEnv::Uncertain, StrategySet::NonIntrusive)
            .unwrap();
        for seq in 1..=100 {
            let out = engine
                .process_event(&ev(2, seq, SyscallName::Write).with_buffer_len(64))
                .unwrap();
            assert!(!out.decision.strategy.unwrap().is_intrusive());
        }
    }

    #[test]
    fn per_pid_streams_are_interleaving_invariant() {
        let make_events = |pid: u32| -> Vec<SyscallEvent> {
            (1..=200)
                .map(|seq| ev(pid, seq, SyscallName::Sendto).with_buffer_len(128))
                .collect()
        };
        let run = |order: &[SyscallEvent]| -> Vec<InterferenceDecision> {
            let mut engine = Engine::new(PolicySettings::default(), 1234);
            order
                .iter()
                .map(|e| engine.process_event(e).unwrap().decision)
                .collect()
        };
        let a = make_events(10);
        let b = make_events(20);
        // Sequential: all of pid 10, then all of pid 20.
        let mut seq_order: Vec<SyscallEvent> = a.clone();
        seq_order.extend(b.iter().cloned());
        let seq_dec = run(&seq_order);
        // Interleaved 1:1.
        let mut inter_order = Vec::new();
        for i in 0..200 {
            inter_order.push(a[i].clone());
            inter_order.push(b[i].clone());
        }
        let inter_dec = run(&inter_order);
        // Per-pid decision sequences are identical in both schedules.
        let seq_a: Vec<_> = seq_dec[..200].to_vec();
        let inter_a: Vec<_> = inter_dec.iter().step_by(2).cloned().collect();
        assert_eq!(seq_a, inter_a);
        let seq_b: Vec<_> = seq_dec[200..].to_vec();
        let inter_b: Vec<_> = inter_dec.iter().skip(1).step_by(2).cloned().collect();
        assert_eq!(seq_b, inter_b);
        // And distinct pids see distinct streams (same events, different
        // draws somewhere in 200 decisions).
        assert_ne!(seq_a, seq_b);
    }

    #[test]
    fn engine_runs_are_reproducible() {
        let events: Vec<SyscallEvent> = (1..=500)
            .map(|seq| {
                let name = match seq % 5 {
                    0 => SyscallName::Read,
                    1 => SyscallName::Write,
                    2 => SyscallName::Sendto,
                    3 => SyscallName::Lseek,
                    _ => SyscallName::Other,
                };
                let mut e = ev(33, seq, name);
                if matches!(name, SyscallName::Read | SyscallName::Write | SyscallName::Sendto) {
                    e = e.with_buffer_len(64);
                }
                if name == SyscallName::Lseek {
                    e = e.with_offset((seq as i64) * 8);
                }
                e
            })
            .collect();
        let run = || -> Vec<EventOutcome> {
            let mut engine = Engine::new(PolicySettings::default(), 31415);
            events
                .iter()
                .map(|e| engine.process_event(e).unwrap())
                .collect()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn split_phase_equals_process_event_and_ignores_native_return() {
        // Live tracing decides at syscall entry (no return value yet) and
        // commits bookkeeping at exit. That must match a replay of the
        // completed events exactly.
        let events: Vec<SyscallEvent> = vec![
            ev(1, 1, SyscallName::Openat)
                .with_path("/etc/ld.so.cache")
                .with_native_return(3),
            ev(1, 2, SyscallName::Read).with_fd(3).with_buffer_len(832),
            ev(1, 3, SyscallName::Close).with_fd(3),
            ev(1, 4, SyscallName::Openat)
                .with_path("/tmp/t.txt")
                .with_native_return(4),
            ev(1, 5, SyscallName::Write).with_fd(4).with_buffer_len(64),
            ev(1, 6, SyscallName::Dup).with_fd(4).with_native_return(5),
            ev(1, 7, SyscallName::Write).with_fd(5).with_buffer_len(64),
            ev(1, 8, SyscallName::Close).with_fd(4),
        ];
        let mut replay = Engine::new(PolicySettings::default(), 555);
        let mut live = Engine::new(PolicySettings::default(), 555);
        for e in &events {
            let whole = replay.process_event(e).unwrap();
            // The live side decides before the return value exists…
            let mut entry_view = e.clone();
            entry_view.native_return = None;
            let half = live.decide_event(&entry_view).unwrap();
            assert_eq!(half.decision, whole.decision);
            assert_eq!(half.behaviors, whole.behaviors);
            // …and commits with it filled in.
            let fd_changed = live.commit_return(e);
            assert_eq!(fd_changed, whole.fd_changed);
        }
        assert_eq!(live.state(1).unwrap(), replay.state(1).unwrap());
    }

    #[test]
    fn apt_style_escalation_pattern() {
        // Mirrors the staged-attack narrative: an ELF drop escalates
        // sys_write, stdio duplication escalates sys_dup2, while reads of
        // a credentials file keep the default threshold.
        let mut engine = Engine::new(PolicySettings::default(), 2026);
        let mut seq = 0;
        let next = |seq: &mut u64| {
            *seq += 1;
            *seq
        };
        // Stage 1: drop an implant.
        let out = engine
            .process_event(
                &ev(1, next(&mut seq), SyscallName::Write)
                    .with_fd(5)
                    .with_buffer(&[0x7f, b'E', b'L', b'F', 2, 1, 1, 0], 8192),
            )
            .unwrap();
        assert!(out
            .behaviors
            .iter()
            .any(|b| b.which == BehaviorKind::B2ElfHeaderWrite));
        // Stage 2: wire stdio to a socket, three dups.
        for fd in [0, 1, 2] {
            let out = engine
                .process_event(
                    &ev(1, next(&mut seq), SyscallName::Dup2)
                        .with_fd(fd)
                        .with_native_return(fd as i64 + 10),
                )
                .unwrap();
            assert!(out
                .behaviors
                .iter()
                .any(|b| b.which == BehaviorKind::B3StdRedirect));
        }
        // Stage 3: read a key file in the user's home — unprotected path,
        // unescalated name.
        let out = engine
            .process_event(
                &ev(1, next(&mut seq), SyscallName::Openat)
                    .with_path("/home/victim/.ssh/id_rsa")
                    .with_native_return(6),
            )
            .unwrap();
        assert_ne!(out.decision.pass_reason, Some(PassReason::Protected));
        let read = engine
            .process_event(
                &ev(1, next(&mut seq), SyscallName::Read)
                    .with_fd(6)
                    .with_buffer_len(4096),
            )
            .unwrap();
        assert_eq!(read.decision.threshold_used, Some(0.10));
        // Escalations in place:
        let state = engine.state(1).unwrap();
        assert!(state.behavior_flag(SyscallName::Write));
        assert!(state.behavior_flag(SyscallName::Dup2));
        assert!(!state.behavior_flag(SyscallName::Read));
        let params = crate::policy::ThresholdParams::default();
        assert_eq!(state.threshold(SyscallName::Write, &params), 0.95);
        assert_eq!(state.threshold(SyscallName::Dup2, &params), 0.95);
        assert_eq!(state.threshold(SyscallName::Read, &params), 0.10);
    }
}
