//! Deterministic syscall-perturbation policy core.
//!
//! This crate models an "uncertain environment" for software the platform
//! does not trust: selected syscalls are probabilistically perturbed
//! (error returns, delays, shortened or corrupted buffers, silenced
//! writes, redirected connections, moved file offsets) while whitelisted
//! software runs undisturbed. The decision pipeline is fully deterministic
//! given a seed, so any run can be replayed bit-for-bit.
//!
//! Layering:
//!
//! * [`syscall`] — the 37-name interference set, categories, and
//!   strategy applicability;
//! * [`event`] — the normalized syscall-event record;
//! * [`rng`] — the SplitMix64 stream generator and stream derivation;
//! * [`policy`] — per-process state: counters, behaviors, dynamic
//!   threshold, corruption protection;
//! * [`decide`] — the per-event interference decision (verdict, strategy,
//!   parameters);
//! * [`engine`] — multi-process orchestration over event streams;
//! * [`stats`] — perturbation tallies and derived metrics.
//!
//! The crate is `no_std` (with `alloc`) so the policy core can be embedded
//! in constrained hosts; all IO lives in companion crates.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod decide;
pub mod engine;
pub mod event;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod syscall;

pub use decide::{
    decide, InterferenceDecision, PassReason, PolicySettings, RedirectPolicy, ThresholdMode,
    Verdict,
};
pub use engine::{Engine, EventOutcome};
pub use event::SyscallEvent;
pub use policy::{
    BehaviorConfig, BehaviorEvent, BehaviorKind, PolicyError, ProcessEnv, ProcessState,
    ProtectionRules, StrategySet, ThresholdParams, WarmupGate,
};
pub use rng::SplitMix64;
pub use stats::{chained_success_probability, PerturbStats};
pub use syscall::{
    applicable_strategies, applicable_strategies_ext, SyscallCategory, SyscallName, StrategyKind,
};
