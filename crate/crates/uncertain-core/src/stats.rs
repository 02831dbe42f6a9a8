//! Perturbation accounting: the three report metrics (overall /
//! connection-related / buffer-related perturbation rates), per-strategy
//! and per-pass-reason tallies, and the chained success probability.

use alloc::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decide::{InterferenceDecision, PassReason};
use crate::event::SyscallEvent;
use crate::syscall::{StrategyKind, SyscallCategory};

/// Aggregate perturbation tallies over a decision stream. `merge`-able,
/// so per-process or per-shard tallies can be combined.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbStats {
    /// Every event seen, in and out of the interference set.
    pub total_events: u64,
    /// Events whose syscall belongs to the interference set.
    pub in_set_events: u64,
    /// Perturb verdicts.
    pub perturbed: u64,
    /// Network-related events (the report's "connection-related" slice).
    pub connection_events: u64,
    pub connection_perturbed: u64,
    /// Events carrying a buffer length (the report's "buffer-related"
    /// slice).
    pub buffer_events: u64,
    pub buffer_perturbed: u64,
    pub by_strategy: BTreeMap<StrategyKind, u64>,
    pub by_pass_reason: BTreeMap<PassReason, u64>,
}

impl PerturbStats {
    pub fn new() -> Self {
        PerturbStats::default()
    }

    /// Folds one (event, decision) pair into the tallies.
    pub fn add(&mut self, event: &SyscallEvent, decision: &InterferenceDecision) {
        self.total_events += 1;
        let in_set = event.name.in_interference_set();
        if in_set {
            self.in_set_events += 1;
        }
        let connection = event.name.category() == SyscallCategory::NetworkRelated;
        if connection {
            self.connection_events += 1;
        }
        let buffered = event.buffer_len.is_some();
        if buffered {
            self.buffer_events += 1;
        }
        if decision.is_perturb() {
            self.perturbed += 1;
            if connection {
                self.connection_perturbed += 1;
            }
            if buffered {
                self.buffer_perturbed += 1;
            }
            if let Some(s) = decision.strategy {
                *self.by_strategy.entry(s).or_insert(0) += 1;
            }
        } else if let Some(r) = decision.pass_reason {
            *self.by_pass_reason.entry(r).or_insert(0) += 1;
        }
    }

    /// Adds `other`'s tallies into `self` (commutative, associative).
    pub fn merge(&mut self, other: &PerturbStats) {
        self.total_events += other.total_events;
        self.in_set_events += other.in_set_events;
        self.perturbed += other.perturbed;
        self.connection_events += other.connection_events;
        self.connection_perturbed += other.connection_perturbed;
        self.buffer_events += other.buffer_events;
        self.buffer_perturbed += other.buffer_perturbed;
        for (k, v) in &other.by_strategy {
            *self.by_strategy.entry(*k).or_insert(0) += v;
        }
        for (k, v) in &other.by_pass_reason {
            *self.by_pass_reason.entry(*k).or_insert(0) += v;
        }
    }

    fn rate(numerator: u64, denominator: u64) -> f64 {
        if denominator == 0 {
            0.0
        } else {
            numerator as f64 / denominator as f64
        }
    }

    /// Perturbed fraction of *all* events (the report's "percentage of all
    /// system calls perturbed", as a fraction in [0,1]).
    pub fn overall_rate(&self) -> f64 {
        Self::rate(self.perturbed, self.total_events)
    }

    /// Perturbed fraction of eligible (interference-set) events.
    pub fn in_set_rate(&self) -> f64 {
        Self::rate(self.perturbed, self.in_set_events)
    }

    /// Perturbed fraction of connection-related events.
    pub fn connection_rate(&self) -> f64 {
        Self::rate(self.connection_perturbed, self.connection_events)
    }

    /// Perturbed fraction of buffer-carrying events.
    pub fn buffer_rate(&self) -> f64 {
        Self::rate(self.buffer_perturbed, self.buffer_events)
    }
}

/// Probability that a chain of critical syscalls all pass undisturbed:
/// `∏ (1 − tᵢ)` over the per-call perturbation thresholds, in encounter
/// order. Empty chains succeed with probability 1.
pub fn chained_success_probability<I>(thresholds: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    thresholds.into_iter().fold(1.0, |acc, t| acc * (1.0 - t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decide::{decide, PolicySettings};
    use crate::policy::{ProcessEnv, ProcessState, StrategySet};
    use crate::rng::SplitMix64;
    use crate::syscall::SyscallName;
    use alloc::vec;
    use alloc::vec::Vec;

    fn ev(name: SyscallName) -> SyscallEvent {
        SyscallEvent::new(1, 1, name)
    }

    #[test]
    fn empty_stats_report_zero_rates() {
        let s = PerturbStats::new();
        assert_eq!(s.overall_rate(), 0.0);
        assert_eq!(s.connection_rate(), 0.0);
        assert_eq!(s.buffer_rate(), 0.0);
        assert_eq!(s.in_set_rate(), 0.0);
    }

    #[test]
    fn fifty_of_one_hundred_is_half() {
        let mut s = PerturbStats::new();
        let pass = InterferenceDecision::pass(crate::decide::PassReason::Roll);
        let state = ProcessState::new(1, ProcessEnv::Uncertain, StrategySet::Intrusive)
            .with_static_threshold(1.0);
        let settings = PolicySettings::default();
        for i in 0..100u64 {
            let event = ev(SyscallName::Write).with_buffer_len(32);
            if i < 50 {
                let mut rng = SplitMix64::new(i);
                let d = decide(&state, &event, &settings, &mut rng);
                assert!(d.is_perturb());
                s.add(&event, &d);
            } else {
                s.add(&event, &pass);
            }
        }
        assert_eq!(s.total_events, 100);
        assert_eq!(s.perturbed, 50);
        assert_eq!(s.overall_rate(), 0.5);
        assert_eq!(s.buffer_rate(), 0.5);
        assert_eq!(s.connection_rate(), 0.0);
        assert_eq!(s.connection_events, 0);
        // Strategy tallies account for every perturb.
        assert_eq!(s.by_strategy.values().sum::<u64>(), 50);
        assert_eq!(s.by_pass_reason.values().sum::<u64>(), 50);
    }

    #[test]
    fn category_slices_count_the_right_events() {
        let mut s = PerturbStats::new();
        let pass = InterferenceDecision::pass(crate::decide::PassReason::Roll);
        s.add(&ev(SyscallName::Connect).with_sockaddr("10.0.0.1:80"), &pass);
        s.add(&ev(SyscallName::Sendto).with_buffer_len(64), &pass);
        s.add(&ev(SyscallName::Read).with_buffer_len(64), &pass);
        s.add(&ev(SyscallName::Other), &pass);
        assert_eq!(s.total_events, 4);
        assert_eq!(s.in_set_events, 3);
        assert_eq!(s.connection_events, 2);
        assert_eq!(s.buffer_events, 2);
    }

    #[test]
    fn merge_equals_streaming() {
        let state = ProcessState::new(1, ProcessEnv::Uncertain, StrategySet::Intrusive)
            .with_static_threshold(0.5);
        let settings = PolicySettings::default();
        let mut rng = SplitMix64::new(8);
        let events: Vec<SyscallEvent> = (0..400)
            .map(|i| {
                if i % 3 == 0 {
                    ev(SyscallName::Sendto).with_buffer_len(64)
                } else {
                    ev(SyscallName::Read).with_buffer_len(64)
                }
            })
            .collect();
        let decisions: Vec<_> = events
            .iter()
            .map(|e| decide(&state, e, &settings, &mut rng))
            .collect();
        let mut whole = PerturbStats::new();
        for (e, d) in events.iter().zip(&decisions) {
            whole.add(e, d);
        }
        let mut left = PerturbStats::new();
        let mut right = PerturbStats::new();
        for (i, (e, d)) in events.iter().zip(&decisions).enumerate() {
            if i < 137 {
                left.add(e, d);
            } else {
                right.add(e, d);
            }
        }
        let mut merged = left.clone();
        merged.merge(&right);
        assert_eq!(merged, whole);
        // Commutativity.
        let mut flipped = right.clone();
        flipped.merge(&left);
        assert_eq!(flipped, whole);
    }

    #[test]
    fn static_half_threshold_lands_near_half() {
        // 10 000 eligible events at t = 0.5, one pinned seed: the rate
        // must sit within 3σ ≈ 1.5 pp of 50% (frozen, not flaky).
        let state = ProcessState::new(1, ProcessEnv::Uncertain, StrategySet::Intrusive)
            .with_static_threshold(0.5);
        let settings = PolicySettings::default();
        let mut rng = SplitMix64::new(1);
        let mut s = PerturbStats::new();
        let event = ev(SyscallName::Read).with_buffer_len(64);
        for _ in 0..10_000 {
            let d = decide(&state, &event, &settings, &mut rng);
            s.add(&event, &d);
        }
        let rate = s.overall_rate();
        assert!((rate - 0.5).abs() < 0.015, "rate = {rate}");
    }

    #[test]
    fn chained_probability_matches_direct_product() {
        assert_eq!(chained_success_probability(Vec::new()), 1.0);
        assert_eq!(chained_success_probability(vec![0.0, 0.0]), 1.0);
        assert_eq!(chained_success_probability(vec![1.0, 0.0]), 0.0);
        // The staged-attack chain: one escalated write, three escalated
        // dups, one default-threshold connect-side call.
        let chain = vec![0.95, 0.95, 0.95, 0.95, 0.10];
        let got = chained_success_probability(chain.clone());
        let direct = (1.0 - 0.95f64)
            * (1.0 - 0.95)
            * (1.0 - 0.95)
            * (1.0 - 0.95)
            * (1.0 - 0.10);
        // Bit-identical to the independently coded product…
        assert_eq!(got.to_bits(), direct.to_bits());
        // …and within write-up rounding of the closed-form value.
        let literal = 5.625e-6;
        assert!((got - literal).abs() / literal <= 1e-12, "{got:e}");
        // Frozen bit pattern so any arithmetic reordering is caught.
        assert_eq!(got.to_bits(), 0x3ED797CC39FFD626);
    }

    #[test]
    fn stats_serde_roundtrip() {
        let mut s = PerturbStats::new();
        let pass = InterferenceDecision::pass(crate::decide::PassReason::NotInSet);
        s.add(&ev(SyscallName::Other), &pass);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"not_in_set\":1"));
        let back: PerturbStats = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
