//! The closed syscall registry: 37 interference-set calls in three
//! categories, a catch-all `other`, and per-syscall strategy applicability.
//!
//! The registry stores architecture-neutral canonical names (the 32-bit-only
//! calls `sys_socketcall` and the `*stat64` family are first-class members);
//! [`SyscallName::parse_lenient`] additionally accepts a small alias table so
//! traces captured on either architecture resolve to the same canonical
//! names. Canonical serialized form is the `sys_`-prefixed name; the
//! catch-all serializes as `"other"`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::policy::{PolicyError, StrategySet};

/// Interference-set category of a syscall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyscallCategory {
    FileRelated,
    NetworkRelated,
    ProcessRelated,
    Other,
}

impl fmt::Display for SyscallCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SyscallCategory::FileRelated => "file_related",
            SyscallCategory::NetworkRelated => "network_related",
            SyscallCategory::ProcessRelated => "process_related",
            SyscallCategory::Other => "other",
        };
        f.write_str(s)
    }
}

macro_rules! registry {
    ($( $variant:ident, $canon:literal, $cat:ident ;)*) => {
        /// One name from the closed registry: the 37 interference-set
        /// syscalls plus the catch-all `Other` (never eligible for
        /// interference).
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum SyscallName {
            $( $variant, )*
            /// Any syscall outside the interference set.
            Other,
        }

        impl SyscallName {
            /// Every interference-set member, in registry order.
            pub const INTERFERENCE_SET: &'static [SyscallName] = &[
                $( SyscallName::$variant, )*
            ];

            /// Canonical serialized name (`sys_*`, or `other`).
            pub const fn as_str(self) -> &'static str {
                match self {
                    $( SyscallName::$variant => $canon, )*
                    SyscallName::Other => "other",
                }
            }

            /// Registry category; `Other` for anything outside the set.
            pub const fn category(self) -> SyscallCategory {
                match self {
                    $( SyscallName::$variant => SyscallCategory::$cat, )*
                    SyscallName::Other => SyscallCategory::Other,
                }
            }

            fn from_canonical(s: &str) -> Option<SyscallName> {
                match s {
                    $( $canon => Some(SyscallName::$variant), )*
                    "other" => Some(SyscallName::Other),
                    _ => None,
                }
            }
        }
    };
}

registry! {
    // File related (20).
    Open,      "sys_open",       FileRelated;
    Openat,    "sys_openat",     FileRelated;
    Creat,     "sys_creat",      FileRelated;
    Read,      "sys_read",       FileRelated;
    Readv,     "sys_readv",      FileRelated;
    Write,     "sys_write",      FileRelated;
    Writev,    "sys_writev",     FileRelated;
    Lseek,     "sys_lseek",      FileRelated;
    Close,     "sys_close",      FileRelated;
    Stat,      "sys_stat",       FileRelated;
    Lstat,     "sys_lstat",      FileRelated;
    Fstat,     "sys_fstat",      FileRelated;
    Stat64,    "sys_stat64",     FileRelated;
    Lstat64,   "sys_lstat64",    FileRelated;
    Fstat64,   "sys_fstat64",    FileRelated;
    Dup,       "sys_dup",        FileRelated;
    Dup2,      "sys_dup2",       FileRelated;
    Dup3,      "sys_dup3",       FileRelated;
    Unlink,    "sys_unlink",     FileRelated;
    Rename,    "sys_rename",     FileRelated;
    // Network related (10).
    Bind,      "sys_bind",       NetworkRelated;
    Listen,    "sys_listen",     NetworkRelated;
    Connect,   "sys_connect",    NetworkRelated;
    Accept,    "sys_accept",     NetworkRelated;
    Accept4,   "sys_accept4",    NetworkRelated;
    Sendto,    "sys_sendto",     NetworkRelated;
    Recvfrom,  "sys_recvfrom",   NetworkRelated;
    Sendmsg,   "sys_sendmsg",    NetworkRelated;
    Recvmsg,   "sys_recvmsg",    NetworkRelated;
    Socketcall,"sys_socketcall", NetworkRelated;
    // Process related (7).
    Preadv,    "sys_preadv",     ProcessRelated;
    Pread64,   "sys_pread64",    ProcessRelated;
    Pwritev,   "sys_pwritev",    ProcessRelated;
    Pwrite64,  "sys_pwrite64",   ProcessRelated;
    Fork,      "sys_fork",       ProcessRelated;
    Clone,     "sys_clone",      ProcessRelated;
    Nanosleep, "sys_nanosleep",  ProcessRelated;
}

impl SyscallName {
    /// True iff this is one of the 37 registry entries.
    pub const fn in_interference_set(self) -> bool {
        !matches!(self, SyscallName::Other)
    }

    /// Calls that take a caller buffer (read/write/send/recv families) —
    /// the ones buffer strategies can touch.
    pub const fn takes_buffer(self) -> bool {
        use SyscallName::*;
        matches!(
            self,
            Read | Readv | Write | Writev | Sendto | Recvfrom | Sendmsg | Recvmsg | Preadv
                | Pread64 | Pwritev | Pwrite64
        )
    }

    /// File-write family used for Behavior 2 (ELF-header write) detection.
    pub const fn is_b2_write_family(self) -> bool {
        use SyscallName::*;
        matches!(self, Write | Writev | Pwrite64 | Pwritev)
    }

    /// Calls whose successful return value is the byte count written; a
    /// silenced call of this family fakes `buffer_len` as its return.
    pub const fn returns_write_size(self) -> bool {
        use SyscallName::*;
        matches!(self, Write | Writev | Pwrite64 | Pwritev | Sendto | Sendmsg)
    }

    /// Descriptor-creating open family tracked by corruption protection.
    pub const fn is_open_family(self) -> bool {
        use SyscallName::*;
        matches!(self, Open | Openat | Creat)
    }

    /// Descriptor-duplicating family (propagates protection).
    pub const fn is_dup_family(self) -> bool {
        use SyscallName::*;
        matches!(self, Dup | Dup2 | Dup3)
    }

    /// Strict parse of a canonical name (`sys_*` / `other`).
    pub fn from_canonical_str(s: &str) -> Option<SyscallName> {
        SyscallName::from_canonical(s)
    }

    /// Lenient parse for importers: accepts canonical names, names without
    /// the `sys_` prefix, and a small 32-bit/libc alias table
    /// (`_llseek`/`llseek` → `sys_lseek`, `pread` → `sys_pread64`,
    /// `pwrite` → `sys_pwrite64`, `vfork` → `sys_fork`). Unknown names
    /// return `None` (callers map them to [`SyscallName::Other`]).
    pub fn parse_lenient(s: &str) -> Option<SyscallName> {
        if let Some(n) = SyscallName::from_canonical(s) {
            return Some(n);
        }
        let bare = s.strip_prefix("sys_").unwrap_or(s);
        let canonical = match bare {
            "_llseek" | "llseek" => "lseek",
            "pread" => "pread64",
            "pwrite" => "pwrite64",
            "vfork" => "fork",
            other => other,
        };
        let mut buf = String::with_capacity(4 + canonical.len());
        buf.push_str("sys_");
        buf.push_str(canonical);
        SyscallName::from_canonical(&buf)
    }
}

impl fmt::Display for SyscallName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyscallName {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SyscallName::from_canonical(s).ok_or_else(|| PolicyError::UnknownSyscallName(s.into()))
    }
}

impl Serialize for SyscallName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SyscallName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <&str>::deserialize(deserializer)?;
        SyscallName::from_canonical(s).ok_or_else(|| {
            serde::de::Error::custom(alloc::format!(
                "unknown syscall name `{s}` (canonical `sys_*` names or `other` expected)"
            ))
        })
    }
}

/// Classify a name into its registry category (`Other` when outside the set).
pub fn classify(name: SyscallName) -> SyscallCategory {
    name.category()
}

/// True iff `name` is one of the 37 registry entries.
pub fn in_interference_set(name: SyscallName) -> bool {
    name.in_interference_set()
}

/// An interference strategy kind. `ErrorReturn`, `Delay`, and
/// `PriorityDecrease` form the non-intrusive set; the remainder are
/// intrusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    ErrorReturn,
    Delay,
    PriorityDecrease,
    SilenceSuccess,
    BufferReduce,
    BufferCorrupt,
    ConnectionRestrict,
    FileOffsetChange,
}

impl StrategyKind {
    /// All kinds, in declaration order (stable report schema).
    pub const ALL: &'static [StrategyKind] = &[
        StrategyKind::ErrorReturn,
        StrategyKind::Delay,
        StrategyKind::PriorityDecrease,
        StrategyKind::SilenceSuccess,
        StrategyKind::BufferReduce,
        StrategyKind::BufferCorrupt,
        StrategyKind::ConnectionRestrict,
        StrategyKind::FileOffsetChange,
    ];

    pub const fn is_intrusive(self) -> bool {
        !matches!(
            self,
            StrategyKind::ErrorReturn | StrategyKind::Delay | StrategyKind::PriorityDecrease
        )
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            StrategyKind::ErrorReturn => "error_return",
            StrategyKind::Delay => "delay",
            StrategyKind::PriorityDecrease => "priority_decrease",
            StrategyKind::SilenceSuccess => "silence_success",
            StrategyKind::BufferReduce => "buffer_reduce",
            StrategyKind::BufferCorrupt => "buffer_corrupt",
            StrategyKind::ConnectionRestrict => "connection_restrict",
            StrategyKind::FileOffsetChange => "file_offset_change",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strategies applicable to `name` under the given set, by syscall name
/// alone (event-level feasibility — e.g. a missing buffer length — is
/// layered on in [`crate::decide`]).
///
/// Non-intrusive is always the same three kinds. Intrusive is
/// `{SilenceSuccess}` plus buffer strategies for buffer-taking calls,
/// `ConnectionRestrict` for `sys_bind`/`sys_listen` (optionally
/// `sys_connect`, see [`crate::decide::PolicySettings::restrict_connect`]),
/// and `FileOffsetChange` for `sys_lseek`. Never empty.
///
/// Errors with [`PolicyError::NotInInterferenceSet`] for `other`.
pub fn applicable_strategies(
    name: SyscallName,
    set: StrategySet,
) -> Result<Vec<StrategyKind>, PolicyError> {
    applicable_strategies_ext(name, set, false)
}

/// [`applicable_strategies`] with the `restrict_connect` policy flag:
/// when true, `sys_connect` is also a `ConnectionRestrict` target.
pub fn applicable_strategies_ext(
    name: SyscallName,
    set: StrategySet,
    restrict_connect: bool,
) -> Result<Vec<StrategyKind>, PolicyError> {
    if !name.in_interference_set() {
        return Err(PolicyError::NotInInterferenceSet(name));
    }
    Ok(match set {
        StrategySet::NonIntrusive => {
            alloc::vec![
                StrategyKind::ErrorReturn,
                StrategyKind::Delay,
                StrategyKind::PriorityDecrease,
            ]
        }
        StrategySet::Intrusive => {
            let mut kinds = alloc::vec![StrategyKind::SilenceSuccess];
            if name.takes_buffer() {
                kinds.push(StrategyKind::BufferReduce);
                kinds.push(StrategyKind::BufferCorrupt);
            }
            let restricts_connection = matches!(name, SyscallName::Bind | SyscallName::Listen)
                || (restrict_connect && name == SyscallName::Connect);
            if restricts_connection {
                kinds.push(StrategyKind::ConnectionRestrict);
            }
            if name == SyscallName::Lseek {
                kinds.push(StrategyKind::FileOffsetChange);
            }
            kinds
        }
    })
}
