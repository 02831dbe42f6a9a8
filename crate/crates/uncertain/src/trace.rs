//! The native trace format: JSON-lines with a one-line header followed by
//! one [`SyscallEvent`] per line. Canonical files round-trip
//! byte-identically; per-pid sequence gaps are rejected at load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uncertain_core::SyscallEvent;

pub const TRACE_FORMAT: &str = "uncertain-trace";
pub const TRACE_VERSION: u32 = 1;

/// First line of every trace file. Contains no timestamps or host
/// details: a trace's bytes are a pure function of what produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    /// Architecture the syscall names were observed on (`x86_64`,
    /// `synthetic`, …). Informational; names are canonical regardless.
    pub arch: String,
    /// What produced the trace (e.g. `scenario:apt:n=60`), when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

impl TraceHeader {
    pub fn new(arch: &str, generator: Option<String>) -> Self {
        TraceHeader {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            arch: arch.into(),
            generator,
        }
    }
}

/// A parsed, validated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub events: Vec<SyscallEvent>,
}

/// Trace loading/format errors (CLI exit code 3).
#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace is empty: missing header line")]
    MissingHeader,
    #[error("line 1: not a trace header: {0}")]
    BadHeader(String),
    #[error("unsupported trace version {found} (this build reads version {TRACE_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("line {line}: malformed event: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: out-of-order event for pid {pid}: expected seq {expected}, got {got}")]
    SequenceGap {
        line: usize,
        pid: u32,
        expected: u64,
        got: u64,
    },
    #[error("line {line}: invalid event: {message}")]
    InvalidEvent { line: usize, message: String },
}

impl TraceFile {
    pub fn new(header: TraceHeader) -> Self {
        TraceFile {
            header,
            events: Vec::new(),
        }
    }

    /// Parses and validates trace text (header line + event lines).
    /// Blank lines are not permitted between records; a trailing newline
    /// is.
    pub fn parse(text: &str) -> Result<TraceFile, TraceError> {
        let mut lines = text.lines().enumerate();
        let (_, header_line) = lines.next().ok_or(TraceError::MissingHeader)?;
        let header: TraceHeader = serde_json::from_str(header_line)
            .map_err(|e| TraceError::BadHeader(e.to_string()))?;
        if header.format != TRACE_FORMAT {
            return Err(TraceError::BadHeader(format!(
                "format `{}` is not `{TRACE_FORMAT}`",
                header.format
            )));
        }
        if header.version != TRACE_VERSION {
            return Err(TraceError::VersionMismatch {
                found: header.version,
            });
        }
        let mut events = Vec::new();
        let mut next_seq: std::collections::BTreeMap<u32, u64> = std::collections::BTreeMap::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let event: SyscallEvent =
                serde_json::from_str(line).map_err(|e| TraceError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            event.validate().map_err(|e| TraceError::InvalidEvent {
                line: line_no,
                message: e.to_string(),
            })?;
            let expected = next_seq.entry(event.pid).or_insert(1);
            if event.seq != *expected {
                return Err(TraceError::SequenceGap {
                    line: line_no,
                    pid: event.pid,
                    expected: *expected,
                    got: event.seq,
                });
            }
            *expected += 1;
            events.push(event);
        }
        Ok(TraceFile { header, events })
    }

    /// Canonical serialization: header line, then one compact JSON event
    /// per line, `\n`-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.header).expect("header serializes"));
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn load_trace(path: &Path) -> Result<TraceFile, TraceError> {
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TraceFile::parse(&text)
}

pub fn save_trace(path: &Path, trace: &TraceFile) -> Result<(), TraceError> {
    fs::write(path, trace.to_jsonl()).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })
}
