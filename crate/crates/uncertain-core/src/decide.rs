//! The per-event interference decision: gate checks, the perturbation
//! roll, uniform strategy selection, and parameter materialization.
//!
//! The draw order is part of the compatibility contract (documented in the
//! workspace formats reference): for a gated event, first one `f64` roll,
//! then — on perturb — one bounded draw for the strategy index (always,
//! even when only one strategy is applicable), then the chosen strategy's
//! parameter draws.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::event::SyscallEvent;
use crate::policy::{
    BehaviorConfig, ProcessEnv, ProcessState, ProtectionRules, StrategySet, ThresholdParams,
    WarmupGate,
};
use crate::rng::SplitMix64;
use crate::syscall::{applicable_strategies_ext, StrategyKind, SyscallName};

/// How the per-event threshold is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Piecewise per-syscall threshold from live counters.
    Dynamic(ThresholdParams),
    /// One fixed probability for every eligible event.
    Static(f64),
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::Dynamic(ThresholdParams::default())
    }
}

impl ThresholdMode {
    /// The threshold parameters in play (static mode keeps the defaults
    /// for warmup/behavior bookkeeping).
    pub fn params(&self) -> ThresholdParams {
        match *self {
            ThresholdMode::Dynamic(p) => p,
            ThresholdMode::Static(_) => ThresholdParams::default(),
        }
    }
}

/// Where `ConnectionRestrict` points a redirected connection or bind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedirectPolicy {
    /// A fixed sink address, `"ip:port"`.
    Honeypot { addr: String },
    /// A fresh uniformly random RFC-1918 address per decision (port
    /// preserved from the event when known, else 0).
    RandomRfc1918,
}

impl Default for RedirectPolicy {
    fn default() -> Self {
        // Loopback discard service: a safe desk-scale stand-in for the
        // honeypot host.
        RedirectPolicy::Honeypot {
            addr: String::from("127.0.0.1:9"),
        }
    }
}

/// Engine-wide policy knobs. Per-process facts (environment, strategy
/// set, static-threshold override) live on [`ProcessState`]; these fields
/// are the defaults applied to newly seen processes plus the global
/// materialization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySettings {
    pub mode: ThresholdMode,
    /// Strategy set for newly seen processes.
    pub strategy_set: StrategySet,
    /// Environment for newly seen processes.
    pub process_env: ProcessEnv,
    pub protection: ProtectionRules,
    pub behavior: BehaviorConfig,
    pub warmup_gate: WarmupGate,
    /// Inclusive `FileOffsetChange` draw range.
    pub offset_delta_range: (i64, i64),
    pub redirect: RedirectPolicy,
    /// Upper bound of the uniform `Delay` draw, seconds.
    pub max_delay: f64,
    /// Extend `ConnectionRestrict` to `sys_connect` (off by default; the
    /// always-on targets are `sys_bind`/`sys_listen`).
    pub restrict_connect: bool,
    /// When present, only these strategies may be chosen (intersected
    /// with per-syscall applicability).
    pub strategy_filter: Option<Vec<StrategyKind>>,
}

impl Default for PolicySettings {
    fn default() -> Self {
        PolicySettings {
            mode: ThresholdMode::default(),
            strategy_set: StrategySet::Intrusive,
            process_env: ProcessEnv::Uncertain,
            protection: ProtectionRules::default(),
            behavior: BehaviorConfig::default(),
            warmup_gate: WarmupGate::default(),
            offset_delta_range: (-4096, 4096),
            redirect: RedirectPolicy::default(),
            max_delay: 0.1,
            restrict_connect: false,
            strategy_filter: None,
        }
    }
}

/// Decision verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    PassThrough,
    Perturb,
}

/// Why a pass-through event passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassReason {
    /// Process runs in the standard environment.
    StandardEnv,
    /// Syscall is outside the interference set.
    NotInSet,
    /// Corruption protection exempted the event.
    Protected,
    /// No strategy was applicable/feasible for this event.
    NoStrategy,
    /// The roll came up at or above the threshold.
    Roll,
}

/// The engine's verdict for one event, with fully materialized strategy
/// parameters. Exactly the chosen strategy's parameter fields are
/// present; `threshold_used` is present whenever the event reached the
/// threshold gate (every interference-set event of an uncertain-
/// environment process, protected ones included), and `roll` whenever the
/// roll was actually made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceDecision {
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_reason: Option<PassReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_code: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forced_return: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduced_len: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrupt_byte_count: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub redirect_addr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backlog_cap: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_delta: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_used: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roll: Option<f64>,
}

impl InterferenceDecision {
    /// Ungated pass: the event never reached the threshold gate.
    pub fn pass(reason: PassReason) -> Self {
        InterferenceDecision {
            verdict: Verdict::PassThrough,
            pass_reason: Some(reason),
            strategy: None,
            error_code: None,
            delay_seconds: None,
            forced_return: None,
            reduced_len: None,
            corrupt_byte_count: None,
            redirect_addr: None,
            backlog_cap: None,
            offset_delta: None,
            threshold_used: None,
            roll: None,
        }
    }

    /// Pass for an event that reached the gate (threshold known), with or
    /// without an actual roll.
    pub fn pass_gated(reason: PassReason, threshold_used: f64, roll: Option<f64>) -> Self {
        InterferenceDecision {
            threshold_used: Some(threshold_used),
            roll,
            ..InterferenceDecision::pass(reason)
        }
    }

    fn perturb(strategy: StrategyKind, threshold_used: f64, roll: f64) -> Self {
        InterferenceDecision {
            verdict: Verdict::Perturb,
            pass_reason: None,
            strategy: Some(strategy),
            threshold_used: Some(threshold_used),
            roll: Some(roll),
            ..InterferenceDecision::pass(PassReason::Roll)
        }
    }

    pub fn is_perturb(&self) -> bool {
        self.verdict == Verdict::Perturb
    }

    /// Count of materialized parameter fields (invariant checks).
    pub fn param_field_count(&self) -> usize {
        usize::from(self.error_code.is_some())
            + usize::from(self.delay_seconds.is_some())
            + usize::from(self.forced_return.is_some())
            + usize::from(self.reduced_len.is_some())
            + usize::from(self.corrupt_byte_count.is_some())
            + usize::from(self.redirect_addr.is_some())
            + usize::from(self.backlog_cap.is_some())
            + usize::from(self.offset_delta.is_some())
    }
}

/// Strategies actually drawable for this concrete event: name-level
/// applicability, minus buffer strategies when the event has no usable
/// buffer length, intersected with the configured strategy filter.
pub(crate) fn feasible_strategies(
    event: &SyscallEvent,
    strategy_set: StrategySet,
    settings: &PolicySettings,
) -> Vec<StrategyKind> {
    let Ok(mut kinds) = applicable_strategies_ext(event.name, strategy_set, settings.restrict_connect)
    else {
        return Vec::new();
    };
    let buffer_len = event.buffer_len.unwrap_or(0);
    kinds.retain(|k| {
        let feasible = !matches!(k, StrategyKind::BufferReduce | StrategyKind::BufferCorrupt)
            || buffer_len >= 1;
        let selected = settings
            .strategy_filter
            .as_ref()
            .map_or(true, |f| f.contains(k));
        feasible && selected
    });
    kinds
}

/// The threshold in effect for this event: the per-process static
/// override first, then the configured mode.
pub(crate) fn threshold_for(
    state: &ProcessState,
    name: SyscallName,
    settings: &PolicySettings,
) -> f64 {
    if let Some(t) = state.static_threshold {
        return t;
    }
    match settings.mode {
        ThresholdMode::Static(t) => t,
        ThresholdMode::Dynamic(ref params) => {
            state.threshold_with_gate(name, params, settings.warmup_gate)
        }
    }
}

fn parse_port(sockaddr: Option<&str>) -> u16 {
    sockaddr
        .and_then(|s| s.rsplit_once(':'))
        .and_then(|(_, p)| p.parse::<u16>().ok())
        .unwrap_or(0)
}

// RFC-1918 private blocks, in draw order.
const BLOCK_10: u64 = 1 << 24; // 10.0.0.0/8
const BLOCK_172: u64 = 1 << 20; // 172.16.0.0/12
const BLOCK_192: u64 = 1 << 16; // 192.168.0.0/16
/// Size of the uniform RFC-1918 address draw (16 777 216 + 1 048 576 +
/// 65 536).
pub const RFC1918_ADDRESS_COUNT: u64 = BLOCK_10 + BLOCK_172 + BLOCK_192;

/// Maps a draw index in `[0, RFC1918_ADDRESS_COUNT)` to its address:
/// the 10/8 block first, then 172.16/12, then 192.168/16.
pub(crate) fn rfc1918_addr(index: u64, port: u16) -> String {
    debug_assert!(index < RFC1918_ADDRESS_COUNT);
    let (a, b, c, d) = if index < BLOCK_10 {
        (10, (index >> 16) & 0xFF, (index >> 8) & 0xFF, index & 0xFF)
    } else if index < BLOCK_10 + BLOCK_172 {
        let i = index - BLOCK_10;
        (172, 16 + ((i >> 16) & 0x0F), (i >> 8) & 0xFF, i & 0xFF)
    } else {
        let i = index - BLOCK_10 - BLOCK_172;
        (192, 168, (i >> 8) & 0xFF, i & 0xFF)
    };
    alloc::format!("{a}.{b}.{c}.{d}:{port}")
}

fn materialize(
    strategy: StrategyKind,
    event: &SyscallEvent,
    settings: &PolicySettings,
    rng: &mut SplitMix64,
    decision: &mut InterferenceDecision,
) {
    match strategy {
        StrategyKind::ErrorReturn => {
            decision.error_code = Some(-(rng.next_bounded(255) as i32 + 1));
        }
        StrategyKind::Delay => {
            decision.delay_seconds = Some(rng.next_f64() * settings.max_delay);
        }
        StrategyKind::PriorityDecrease => {
            // Marker-only: the live tracer maps this to a niceness drop.
        }
        StrategyKind::SilenceSuccess => {
            let forced = if event.name.returns_write_size() {
                event.buffer_len.unwrap_or(0) as i64
            } else {
                0
            };
            decision.forced_return = Some(forced);
        }
        StrategyKind::BufferReduce => {
            // Feasibility guarantees buffer_len ≥ 1; draw over [0, len).
            let len = event.buffer_len.unwrap_or(0).max(1);
            decision.reduced_len = Some(rng.next_bounded(len));
        }
        StrategyKind::BufferCorrupt => {
            // How many bytes to scribble: [1, min(len, 16)]. The byte
            // values themselves are drawn only at live enactment.
            let len = event.buffer_len.unwrap_or(0).max(1);
            let cap = len.min(16);
            decision.corrupt_byte_count = Some(rng.next_bounded(cap) as u32 + 1);
        }
        StrategyKind::ConnectionRestrict => {
            if event.name == SyscallName::Listen {
                decision.backlog_cap = Some(1);
            } else {
                let port = parse_port(event.sockaddr.as_deref());
                decision.redirect_addr = Some(match settings.redirect {
                    RedirectPolicy::Honeypot { ref addr } => addr.clone(),
                    RedirectPolicy::RandomRfc1918 => {
                        rfc1918_addr(rng.next_bounded(RFC1918_ADDRESS_COUNT), port)
                    }
                });
            }
        }
        StrategyKind::FileOffsetChange => {
            let (lo, hi) = settings.offset_delta_range;
            let mut delta = rng.next_range_i64(lo, hi);
            if let Some(off) = event.offset {
                // Keep the resulting offset non-negative when the current
                // offset is known.
                if off >= 0 && (off as i128 + delta as i128) < 0 {
                    delta = -off;
                }
            }
            decision.offset_delta = Some(delta);
        }
    }
}

/// Decides interference for one event. Pure in everything but the RNG:
/// identical `(state, event, settings, rng-state)` yields the identical
/// decision and identical RNG consumption.
///
/// Gate order: standard environment, interference-set membership,
/// corruption protection, strategy feasibility, then the roll. The RNG is
/// consumed only from the roll onward, so ungated events never disturb
/// the stream.
pub fn decide(
    state: &ProcessState,
    event: &SyscallEvent,
    settings: &PolicySettings,
    rng: &mut SplitMix64,
) -> InterferenceDecision {
    if state.process_env == ProcessEnv::Standard {
        return InterferenceDecision::pass(PassReason::StandardEnv);
    }
    if !event.name.in_interference_set() {
        return InterferenceDecision::pass(PassReason::NotInSet);
    }
    let threshold = threshold_for(state, event.name, settings);
    if state.is_protected(event, &settings.protection) {
        return InterferenceDecision::pass_gated(PassReason::Protected, threshold, None);
    }
    let feasible = feasible_strategies(event, state.strategy_set, settings);
    if feasible.is_empty() {
        return InterferenceDecision::pass_gated(PassReason::NoStrategy, threshold, None);
    }
    let roll = rng.next_f64();
    if roll >= threshold {
        return InterferenceDecision::pass_gated(PassReason::Roll, threshold, Some(roll));
    }
    // One index draw always — single-element lists included — so the
    // stream layout does not depend on applicability details.
    let strategy = feasible[rng.next_bounded(feasible.len() as u64) as usize];
    let mut decision = InterferenceDecision::perturb(strategy, threshold, roll);
    materialize(strategy, event, settings, rng, &mut decision);
    decision
}
