//! Best-effort importer for textual syscall-tracer output: one decoded
//! call per line (`name(args…) = ret`), optional pid prefixes, optional
//! fd path decoration (`3</tmp/x>`), split `<unfinished …>` /
//! `<… resumed>` pairs. Recognized interference-set calls become full
//! events; everything else parseable degrades to an `other` event;
//! nothing is silently dropped — the report accounts for every line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use uncertain_core::{SyscallEvent, SyscallName};

use crate::trace::{TraceFile, TraceHeader};

/// Per-line accounting for one import. Conservation invariants:
/// `events_out = lines_recognized + lines_fallback` and
/// `lines_total = lines_recognized + lines_fallback + lines_skipped +
/// lines_joined` (each joined pair's first half counts under
/// `lines_joined`, its second half under recognized/fallback).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportReport {
    pub lines_total: u64,
    /// Parsed call lines whose syscall is in the interference set.
    pub lines_recognized: u64,
    /// Parsed call lines for unmodeled syscalls (imported as `other`).
    pub lines_fallback: u64,
    /// Signal/exit notices, blanks, tracer banners, orphaned halves.
    pub lines_skipped: u64,
    /// `<unfinished …>` halves later completed by a resume line.
    pub lines_joined: u64,
    pub events_out: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("cannot read tracer output {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no parseable syscall lines in input ({lines} lines scanned)")]
    NoParseableLines { lines: u64 },
}

/// Imports a tracer-output file.
pub fn import_strace(path: &Path) -> Result<(TraceFile, ImportReport), ImportError> {
    let text = fs::read_to_string(path).map_err(|source| ImportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    import_strace_text(&text)
}

/// Imports tracer output from memory. Lines without a pid prefix are
/// attributed to pid 1.
pub fn import_strace_text(text: &str) -> Result<(TraceFile, ImportReport), ImportError> {
    let importer = Importer::new();
    let mut report = ImportReport::default();
    let mut events: Vec<SyscallEvent> = Vec::new();
    let mut next_seq: BTreeMap<u32, u64> = BTreeMap::new();
    // One in-flight unfinished call per pid (threads interleave).
    let mut pending: BTreeMap<u32, String> = BTreeMap::new();

    for raw in text.lines() {
        report.lines_total += 1;
        let (pid, line) = split_pid(raw.trim_end());
        let pid = pid.unwrap_or(1);
        let line = line.trim_start();
        if line.is_empty() || line.starts_with("+++") || line.starts_with("---") {
            report.lines_skipped += 1;
            continue;
        }
        if let Some(head) = line.strip_suffix("<unfinished ...>") {
            if pending.insert(pid, head.trim_end().to_string()).is_some() {
                // A second unfinished call for the same pid orphans the
                // first half: rebucket it from joined to skipped.
                report.lines_joined -= 1;
                report.lines_skipped += 1;
            }
            report.lines_joined += 1;
            continue;
        }
        let effective = if let Some(caps) = importer.resumed_re.captures(line) {
            match pending.remove(&pid) {
                Some(head) => format!("{head}{}", &caps[2]),
                None => {
                    // Resume with no matching first half.
                    report.lines_skipped += 1;
                    continue;
                }
            }
        } else {
            line.to_string()
        };
        match importer.parse_call(&effective) {
            Some(call) => {
                let seq = next_seq.entry(pid).or_insert(1);
                let event = call.into_event(pid, *seq);
                *seq += 1;
                if event.name.in_interference_set() {
                    report.lines_recognized += 1;
                } else {
                    report.lines_fallback += 1;
                }
                events.push(event);
            }
            None => report.lines_skipped += 1,
        }
    }
    // Unfinished halves never resumed: re-bucket them from joined to
    // skipped so the accounting stays conservative.
    let orphans = pending.len() as u64;
    report.lines_joined -= orphans;
    report.lines_skipped += orphans;

    report.events_out = events.len() as u64;
    if report.events_out == 0 {
        return Err(ImportError::NoParseableLines {
            lines: report.lines_total,
        });
    }
    let trace = TraceFile {
        header: TraceHeader::new("imported", Some("strace-import".into())),
        events,
    };
    Ok((trace, report))
}

/// Chops an optional pid prefix: `[pid 1234] …` or `1234  …`.
fn split_pid(line: &str) -> (Option<u32>, &str) {
    if let Some(rest) = line.strip_prefix("[pid ") {
        if let Some(end) = rest.find(']') {
            if let Ok(pid) = rest[..end].trim().parse() {
                return (Some(pid), &rest[end + 1..]);
            }
        }
    }
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 && line[digits..].starts_with([' ', '\t']) {
        if let Ok(pid) = line[..digits].parse() {
            return (Some(pid), &line[digits..]);
        }
    }
    (None, line)
}

struct ParsedCall {
    name: SyscallName,
    fd: Option<i32>,
    path: Option<String>,
    buffer_prefix: Option<Vec<u8>>,
    buffer_len: Option<u64>,
    sockaddr: Option<String>,
    backlog: Option<u32>,
    offset: Option<i64>,
    ret: Option<i64>,
}

impl ParsedCall {
    fn into_event(self, pid: u32, seq: u64) -> SyscallEvent {
        let mut ev = SyscallEvent::new(pid, seq, self.name);
        ev.fd = self.fd;
        ev.path = self.path;
        if let Some(len) = self.buffer_len {
            ev = ev.with_buffer_len(len);
            if let Some(prefix) = self.buffer_prefix {
                ev = ev.with_buffer(&prefix, len);
            }
        }
        ev.sockaddr = self.sockaddr;
        ev.backlog = self.backlog;
        ev.offset = self.offset;
        ev.native_return = self.ret;
        ev
    }
}

struct Importer {
    call_re: Regex,
    resumed_re: Regex,
    port_re: Regex,
    addr_re: Regex,
}

impl Importer {
    fn new() -> Self {
        Importer {
            // Greedy arg blob: the last `) = ret` on the line wins, so
            // nested parentheses inside arguments survive. The return
            // may carry a `-y`-style decoration (`= 3</etc/passwd>`).
            call_re: Regex::new(r"^(\w+)\((.*)\)\s*=\s*(-?\d+|\?)(?:<[^>]*>)?(?:\s|$)").unwrap(),
            resumed_re: Regex::new(r"^<\.\.\.\s+(\w+)\s+resumed>\s?(.*)$").unwrap(),
            port_re: Regex::new(r"sin6?_port=htons\((\d+)\)").unwrap(),
            addr_re: Regex::new(r#"inet_addr\("([0-9.]+)"\)"#).unwrap(),
        }
    }

    fn parse_call(&self, line: &str) -> Option<ParsedCall> {
        let caps = self.call_re.captures(line)?;
        let raw_name = &caps[1];
        let args_blob = &caps[2];
        let ret = match &caps[3] {
            "?" => None,
            r => r.parse::<i64>().ok(),
        };
        let Some(name) = SyscallName::parse_lenient(raw_name) else {
            // Unmodeled call: keep it as an `other` event so sequence and
            // totals stay faithful.
            return Some(ParsedCall {
                name: SyscallName::Other,
                fd: None,
                path: None,
                buffer_prefix: None,
                buffer_len: None,
                sockaddr: None,
                backlog: None,
                offset: None,
                ret,
            });
        };
        let args = split_args(args_blob);
        let mut call = ParsedCall {
            name,
            fd: None,
            path: None,
            buffer_prefix: None,
            buffer_len: None,
            sockaddr: None,
            backlog: None,
            offset: None,
            ret,
        };

        // First argument: a descriptor for fd-taking calls (with optional
        // `<path>` decoration).
        if takes_fd_first(name) {
            if let Some((fd, deco)) = parse_fd_token(args.first().map(String::as_str).unwrap_or(""))
            {
                call.fd = Some(fd);
                call.path = deco;
            }
        }

        // Path-taking calls: the first string-literal argument.
        if name.is_open_family()
            || matches!(
                name,
                SyscallName::Stat
                    | SyscallName::Lstat
                    | SyscallName::Stat64
                    | SyscallName::Lstat64
                    | SyscallName::Unlink
                    | SyscallName::Rename
            )
        {
            if let Some((bytes, _)) = args.iter().find_map(|a| extract_string(a)) {
                call.path = Some(String::from_utf8_lossy(&bytes).into_owned());
            }
        }

        // Buffer-taking calls: prefix from the first string literal
        // (plain or inside an iovec/msghdr), length from the count
        // argument right after it, else from a non-negative return.
        if name.takes_buffer() {
            let mut string_at = None;
            for (i, a) in args.iter().enumerate() {
                if let Some((bytes, _truncated)) = extract_string(a) {
                    call.buffer_prefix = Some(bytes);
                    string_at = Some(i);
                    break;
                }
            }
            // Flat calls carry a byte count right after the buffer;
            // vectored/message calls carry an iovec count there, so only
            // the transferred total (the return) is meaningful.
            let flat = matches!(
                name,
                SyscallName::Read
                    | SyscallName::Write
                    | SyscallName::Pread64
                    | SyscallName::Pwrite64
                    | SyscallName::Sendto
                    | SyscallName::Recvfrom
            );
            let positional_len = if flat {
                string_at
                    .and_then(|i| args.get(i + 1))
                    .and_then(|a| a.parse::<u64>().ok())
            } else {
                None
            };
            call.buffer_len = positional_len.or(match ret {
                Some(r) if r >= 0 => Some(r as u64),
                _ => None,
            });
            if call.buffer_len.is_none() {
                call.buffer_prefix = None; // canonical events pair them
            }
        }

        // Socket-address calls (input direction only).
        if matches!(
            name,
            SyscallName::Bind | SyscallName::Connect | SyscallName::Sendto | SyscallName::Sendmsg
        ) && args_blob.contains("AF_INET")
        {
            if let (Some(addr), Some(port)) = (
                self.addr_re.captures(args_blob).map(|c| c[1].to_string()),
                self.port_re.captures(args_blob).map(|c| c[1].to_string()),
            ) {
                call.sockaddr = Some(format!("{addr}:{port}"));
            }
        }

        match name {
            SyscallName::Listen => {
                call.backlog = args.get(1).and_then(|a| a.parse().ok());
            }
            SyscallName::Lseek => {
                call.offset = args.get(1).and_then(|a| a.parse().ok());
            }
            _ => {}
        }
        Some(call)
    }
}

/// Calls whose first decoded argument is a file/socket descriptor.
fn takes_fd_first(name: SyscallName) -> bool {
    use SyscallName::*;
    matches!(
        name,
        Read | Readv
            | Write
            | Writev
            | Lseek
            | Close
            | Fstat
            | Fstat64
            | Dup
            | Dup2
            | Dup3
            | Pread64
            | Pwrite64
            | Preadv
            | Pwritev
            | Bind
            | Listen
            | Connect
            | Accept
            | Accept4
            | Sendto
            | Recvfrom
            | Sendmsg
            | Recvmsg
    )
}

/// Parses `3` or `3</tmp/file>` (the `-y` descriptor decoration).
fn parse_fd_token(token: &str) -> Option<(i32, Option<String>)> {
    let token = token.trim();
    let digits = token.len() - token.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let fd: i32 = token[..digits].parse().ok()?;
    let rest = &token[digits..];
    if rest.is_empty() {
        return Some((fd, None));
    }
    let deco = rest
        .strip_prefix('<')
        .and_then(|r| r.strip_suffix('>'))
        .map(String::from);
    // Anything other than a clean decoration means this was not a plain
    // fd token after all (e.g. "3ULL" never occurs, but stay strict).
    if deco.is_none() {
        return None;
    }
    Some((fd, deco))
}

/// Splits a decoded argument blob on top-level commas, respecting
/// quoted strings (with escapes) and (), [], {} nesting.
fn split_args(blob: &str) -> Vec<String> {
    let mut args = Vec::new();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut current = String::new();
    for c in blob.chars() {
        if in_string {
            current.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                current.push(c);
            }
            '(' | '[' | '{' => {
                depth += 1;
                current.push(c);
            }
            ')' | ']' | '}' => {
                depth = depth.saturating_sub(1);
                current.push(c);
            }
            ',' if depth == 0 => {
                args.push(current.trim().to_string());
                current = String::new();
            }
            _ => current.push(c),
        }
    }
    if !current.trim().is_empty() {
        args.push(current.trim().to_string());
    }
    args
}

/// Extracts and decodes the first `"…"` literal inside an argument
/// token, returning the bytes and whether the tracer truncated it
/// (trailing `...`).
fn extract_string(arg: &str) -> Option<(Vec<u8>, bool)> {
    let start = arg.find('"')?;
    let inner = &arg[start + 1..];
    let mut bytes = Vec::new();
    let mut chars = inner.char_indices();
    let mut end = None;
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => {
                end = Some(i);
                break;
            }
            '\\' => {
                let Some((_, esc)) = chars.next() else { break };
                match esc {
                    'n' => bytes.push(b'\n'),
                    't' => bytes.push(b'\t'),
                    'r' => bytes.push(b'\r'),
                    'v' => bytes.push(0x0b),
                    'f' => bytes.push(0x0c),
                    'a' => bytes.push(0x07),
                    'b' => bytes.push(0x08),
                    '0'..='7' => {
                        // Octal: up to three digits total.
                        let mut value = esc as u32 - '0' as u32;
                        let mut taken = 1;
                        let mut lookahead = chars.clone();
                        while taken < 3 {
                            match lookahead.next() {
                                Some((_, d @ '0'..='7')) => {
                                    value = value * 8 + (d as u32 - '0' as u32);
                                    chars.next();
                                    taken += 1;
                                }
                                _ => break,
                            }
                        }
                        bytes.push(value as u8);
                    }
                    'x' => {
                        // Hex: up to two digits.
                        let mut value = 0u32;
                        let mut taken = 0;
                        let mut lookahead = chars.clone();
                        while taken < 2 {
                            match lookahead.next() {
                                Some((_, d)) if d.is_ascii_hexdigit() => {
                                    value = value * 16 + d.to_digit(16).unwrap();
                                    chars.next();
                                    taken += 1;
                                }
                                _ => break,
                            }
                        }
                        bytes.push(value as u8);
                    }
                    other => {
                        let mut buf = [0u8; 4];
                        bytes.extend_from_slice(other.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
            _ => {
                let mut buf = [0u8; 4];
                bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    let truncated = end
        .map(|e| inner[e + 1..].trim_start().starts_with("..."))
        .unwrap_or(true);
    Some((bytes, truncated))
}
