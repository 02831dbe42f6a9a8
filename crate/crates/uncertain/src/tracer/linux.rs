//! ptrace backend (x86_64): a single-threaded SYSCALL-stop loop over the
//! child and everything it forks/clones. Each task stops twice per
//! syscall; the engine decides at the entry stop (argument registers and
//! referenced memory are read there) and the decision is enacted by
//! register/memory rewriting:
//!
//! * `ErrorReturn` / `SilenceSuccess` — the syscall number is replaced
//!   with `-1` at entry (the kernel executes nothing) and `rax` is set to
//!   the injected return at the exit stop.
//! * `Delay` — the tracer sleeps while the task is stopped at entry.
//! * `PriorityDecrease` — niceness 19 via `setpriority`.
//! * `BufferReduce` — the count register (`rdx`) is lowered at entry.
//! * `BufferCorrupt` — outbound buffers are scribbled at entry, inbound
//!   buffers after the kernel filled them at exit.
//! * `ConnectionRestrict` — `sockaddr_in` rewritten to the redirect
//!   address at entry; `listen` backlog capped via `rsi`.
//! * `FileOffsetChange` — `lseek`'s offset register adjusted at entry.
//!
//! Buffer metadata (length, 16-byte prefix) is captured only for the
//! plain transfer calls; iovec-based calls would need unbounded reads to
//! reconstruct, so they carry no buffer fields live. Child stdout/stderr
//! go to unnamed temp files — a stopped tracee must never block on a
//! full pipe the single-threaded tracer is not draining.

use std::collections::BTreeMap;
use std::io::{Read as _, Seek as _, SeekFrom};
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use libc::user_regs_struct;
use nix::errno::Errno;
use nix::sys::ptrace::{self, Options};
use nix::sys::signal::Signal;
use nix::sys::wait::{waitpid, WaitPidFlag, WaitStatus};
use nix::unistd::Pid;
use uncertain_core::engine::{Engine, EventOutcome};
use uncertain_core::rng::derive_stream;
use uncertain_core::{
    InterferenceDecision, PolicySettings, SplitMix64, StrategyKind, SyscallEvent, SyscallName,
    ThresholdMode,
};

use super::{ExecSpec, TracedRun, TracerError};
use crate::outcome::{ExitStatusKind, RunResult};
use crate::replay::DecisionRecord;
use crate::trace::{TraceFile, TraceHeader};

const WORD: usize = 8;
/// Longest path read out of tracee memory.
const PATH_MAX_READ: usize = 4096;
/// Stream tag for the corruption-byte RNG (enactment-only; never part of
/// the replayable contract).
const CORRUPT_STREAM_TAG: u64 = 0x6c69_7665_636f_7272; // "livecorr"

pub(super) fn probe() -> bool {
    let spec = ExecSpec::new("/bin/true", Vec::new());
    let settings = PolicySettings {
        mode: ThresholdMode::Static(0.0),
        ..PolicySettings::default()
    };
    matches!(
        run_traced(&spec, &settings, 0, Some(10.0)),
        Ok(run) if run.result.exit == ExitStatusKind::Code(0)
    )
}

/// x86_64 syscall numbers for the interference set (64-bit ABI: the
/// 32-bit multiplexers and `*64` stat variants do not exist here).
fn syscall_from_nr(nr: u64) -> SyscallName {
    use SyscallName::*;
    match nr {
        0 => Read,
        1 => Write,
        2 => Open,
        3 => Close,
        4 => Stat,
        5 => Fstat,
        6 => Lstat,
        8 => Lseek,
        17 => Pread64,
        18 => Pwrite64,
        19 => Readv,
        20 => Writev,
        32 => Dup,
        33 => Dup2,
        35 => Nanosleep,
        42 => Connect,
        43 => Accept,
        44 => Sendto,
        45 => Recvfrom,
        46 => Sendmsg,
        47 => Recvmsg,
        49 => Bind,
        50 => Listen,
        56 => Clone,
        57 => Fork,
        58 => Fork, // vfork
        82 => Rename,
        85 => Creat,
        87 => Unlink,
        257 => Openat,
        288 => Accept4,
        292 => Dup3,
        295 => Preadv,
        296 => Pwritev,
        _ => Other,
    }
}

fn ptrace_err(op: &'static str) -> impl Fn(Errno) -> TracerError {
    move |e| TracerError::Ptrace {
        op,
        source: std::io::Error::from(e),
    }
}

fn read_mem(pid: Pid, addr: u64, len: usize) -> Option<Vec<u8>> {
    if len == 0 {
        return Some(Vec::new());
    }
    let mut out = Vec::with_capacity(len + WORD);
    let mut pos = addr;
    while out.len() < len {
        let word = ptrace::read(pid, pos as ptrace::AddressType).ok()?;
        out.extend_from_slice(&word.to_ne_bytes());
        pos = pos.checked_add(WORD as u64)?;
    }
    out.truncate(len);
    Some(out)
}

#[allow(unused_unsafe)]
fn write_mem(pid: Pid, addr: u64, bytes: &[u8]) -> bool {
    if bytes.is_empty() {
        return true;
    }
    // Read-modify-write the covering word span so bytes outside the
    // target range survive.
    let start = addr & !(WORD as u64 - 1);
    let end = addr + bytes.len() as u64;
    let span = (end - start).div_ceil(WORD as u64) as usize * WORD;
    let Some(mut buf) = read_mem(pid, start, span) else {
        return false;
    };
    let off = (addr - start) as usize;
    buf[off..off + bytes.len()].copy_from_slice(bytes);
    for (i, chunk) in buf.chunks_exact(WORD).enumerate() {
        let word = libc::c_long::from_ne_bytes(chunk.try_into().expect("word chunk"));
        let at = (start + (i * WORD) as u64) as ptrace::AddressType;
        if unsafe { ptrace::write(pid, at, word) }.is_err() {
            return false;
        }
    }
    true
}

fn read_cstring(pid: Pid, addr: u64) -> Option<String> {
    if addr == 0 {
        return None;
    }
    let mut bytes = Vec::new();
    let mut pos = addr;
    while bytes.len() < PATH_MAX_READ {
        let word = ptrace::read(pid, pos as ptrace::AddressType).ok()?;
        for b in word.to_ne_bytes() {
            if b == 0 {
                return Some(String::from_utf8_lossy(&bytes).into_owned());
            }
            bytes.push(b);
        }
        pos = pos.checked_add(WORD as u64)?;
    }
    Some(String::from_utf8_lossy(&bytes).into_owned())
}

/// Formats an `AF_INET` `sockaddr` as `a.b.c.d:port`; other families
/// yield `None`.
fn decode_sockaddr(pid: Pid, addr: u64, len: u64) -> Option<String> {
    if addr == 0 || len < 8 {
        return None;
    }
    let bytes = read_mem(pid, addr, 8)?;
    let family = u16::from_ne_bytes([bytes[0], bytes[1]]);
    if family != libc::AF_INET as u16 {
        return None;
    }
    let port = u16::from_be_bytes([bytes[2], bytes[3]]);
    Some(format!(
        "{}.{}.{}.{}:{}",
        bytes[4], bytes[5], bytes[6], bytes[7], port
    ))
}

/// Parses `a.b.c.d:port` into raw `sin_port`/`sin_addr` bytes.
fn parse_redirect(addr: &str) -> Option<([u8; 2], [u8; 4])> {
    let (ip, port) = addr.rsplit_once(':')?;
    let port: u16 = port.parse().ok()?;
    let mut octets = [0u8; 4];
    let mut parts = ip.split('.');
    for slot in &mut octets {
        *slot = parts.next()?.parse().ok()?;
    }
    if parts.next().is_some() {
        return None;
    }
    Some((port.to_be_bytes(), octets))
}

/// Plain outbound transfers: buffer contents exist at entry.
fn outbound_buffer(name: SyscallName) -> bool {
    matches!(
        name,
        SyscallName::Write | SyscallName::Pwrite64 | SyscallName::Sendto
    )
}

/// Plain inbound transfers: the kernel fills the buffer, so corruption
/// applies at the exit stop.
fn inbound_buffer(name: SyscallName) -> bool {
    matches!(
        name,
        SyscallName::Read | SyscallName::Pread64 | SyscallName::Recvfrom
    )
}

struct Pending {
    event: SyscallEvent,
    outcome: EventOutcome,
    /// Injected child-visible return (suppressed syscalls).
    fake_return: Option<i64>,
    /// Inbound corruption deferred to the exit stop: buffer address and
    /// byte budget.
    corrupt_exit: Option<(u64, u32)>,
}

struct Tracee {
    seq: u64,
    /// The next syscall stop is the exit half.
    in_exit: bool,
    /// Auto-attached children first stop at the tail of the clone/fork
    /// that created them; that stop carries no new event.
    skip_first: bool,
    pending: Option<Pending>,
}

impl Tracee {
    fn new(skip_first: bool) -> Self {
        Tracee {
            seq: 1,
            in_exit: false,
            skip_first,
            pending: None,
        }
    }
}

struct RunState {
    engine: Engine,
    corrupt_rng: SplitMix64,
    events: Vec<SyscallEvent>,
    records: Vec<DecisionRecord>,
}

impl RunState {
    fn corrupt_bytes(&mut self, n: usize) -> Vec<u8> {
        (0..n)
            .map(|_| self.corrupt_rng.next_bounded(256) as u8)
            .collect()
    }

    /// Records a finished event: child-visible return goes into the
    /// trace, fd bookkeeping runs, and the decision log grows by one.
    fn finish(&mut self, mut pending: Pending, native_return: Option<i64>) {
        if let Some(ret) = native_return {
            pending.event = pending.event.with_native_return(ret);
        }
        self.engine.commit_return(&pending.event);
        self.records
            .push(DecisionRecord::from_outcome(&pending.event, &pending.outcome));
        self.events.push(pending.event);
    }
}

/// Builds the engine-visible event for a syscall entry stop.
fn build_event(pid: Pid, seq: u64, name: SyscallName, regs: &user_regs_struct) -> SyscallEvent {
    let (a0, a1, a2, a4, a5) = (regs.rdi, regs.rsi, regs.rdx, regs.r8, regs.r9);
    let mut ev = SyscallEvent::new(pid.as_raw() as u32, seq, name);
    let fd_arg = a0 as i64;
    let takes_fd = matches!(
        name,
        SyscallName::Read
            | SyscallName::Readv
            | SyscallName::Write
            | SyscallName::Writev
            | SyscallName::Lseek
            | SyscallName::Close
            | SyscallName::Fstat
            | SyscallName::Dup
            | SyscallName::Dup2
            | SyscallName::Dup3
            | SyscallName::Pread64
            | SyscallName::Pwrite64
            | SyscallName::Preadv
            | SyscallName::Pwritev
            | SyscallName::Bind
            | SyscallName::Listen
            | SyscallName::Connect
            | SyscallName::Accept
            | SyscallName::Accept4
            | SyscallName::Sendto
            | SyscallName::Recvfrom
            | SyscallName::Sendmsg
            | SyscallName::Recvmsg
    );
    if takes_fd && (0..=i32::MAX as i64).contains(&fd_arg) {
        ev = ev.with_fd(fd_arg as i32);
    }
    match name {
        SyscallName::Open | SyscallName::Creat | SyscallName::Stat | SyscallName::Lstat
        | SyscallName::Unlink | SyscallName::Rename => {
            if let Some(path) = read_cstring(pid, a0) {
                ev = ev.with_path(path);
            }
        }
        SyscallName::Openat => {
            if let Some(path) = read_cstring(pid, a1) {
                ev = ev.with_path(path);
            }
        }
        SyscallName::Read | SyscallName::Write | SyscallName::Pread64 | SyscallName::Pwrite64
        | SyscallName::Sendto | SyscallName::Recvfrom => {
            let len = a2;
            let cap = (len.min(16)) as usize;
            let prefix = if outbound_buffer(name) && cap > 0 {
                read_mem(pid, a1, cap)
            } else {
                None
            };
            ev = match prefix {
                Some(p) => ev.with_buffer(&p, len),
                None => ev.with_buffer_len(len),
            };
            if name == SyscallName::Sendto {
                if let Some(sa) = decode_sockaddr(pid, a4, a5) {
                    ev = ev.with_sockaddr(sa);
                }
            }
        }
        SyscallName::Bind | SyscallName::Connect => {
            if let Some(sa) = decode_sockaddr(pid, a1, a2) {
                ev = ev.with_sockaddr(sa);
            }
        }
        SyscallName::Listen => {
            ev = ev.with_backlog(a1.min(u32::MAX as u64) as u32);
        }
        SyscallName::Lseek => {
            ev = ev.with_offset(a1 as i64);
        }
        _ => {}
    }
    if ev.validate().is_err() {
        // Unreachable by construction; degrade to a bare event rather
        // than aborting the run.
        return SyscallEvent::new(pid.as_raw() as u32, seq, name);
    }
    ev
}

/// Applies a perturbation at the entry stop. Returns the injected
/// return value (for suppressed calls) and any deferred inbound
/// corruption.
fn enact_entry(
    state: &mut RunState,
    pid: Pid,
    regs: &user_regs_struct,
    name: SyscallName,
    decision: &InterferenceDecision,
) -> (Option<i64>, Option<(u64, u32)>) {
    let Some(strategy) = decision.strategy else {
        return (None, None);
    };
    let mut new_regs = *regs;
    let mut dirty = false;
    let mut fake_return = None;
    let mut corrupt_exit = None;
    let suppress = |r: &mut user_regs_struct, dirty: &mut bool| {
        r.orig_rax = u64::MAX; // syscall -1: the kernel executes nothing
        *dirty = true;
    };
    match strategy {
        StrategyKind::ErrorReturn => {
            suppress(&mut new_regs, &mut dirty);
            fake_return = decision.error_code.map(i64::from);
        }
        StrategyKind::SilenceSuccess => {
            suppress(&mut new_regs, &mut dirty);
            fake_return = decision.forced_return;
        }
        StrategyKind::Delay => {
            if let Some(seconds) = decision.delay_seconds {
                thread::sleep(Duration::from_secs_f64(seconds.max(0.0)));
            }
        }
        StrategyKind::PriorityDecrease => unsafe {
            libc::setpriority(libc::PRIO_PROCESS as _, pid.as_raw() as libc::id_t, 19);
        },
        StrategyKind::BufferReduce => {
            if let Some(reduced) = decision.reduced_len {
                new_regs.rdx = reduced;
                dirty = true;
            }
        }
        StrategyKind::BufferCorrupt => {
            if let Some(n) = decision.corrupt_byte_count {
                if outbound_buffer(name) {
                    let len = (regs.rdx.min(n as u64)) as usize;
                    let garbage = state.corrupt_bytes(len);
                    write_mem(pid, regs.rsi, &garbage);
                } else if inbound_buffer(name) {
                    corrupt_exit = Some((regs.rsi, n));
                }
            }
        }
        StrategyKind::ConnectionRestrict => {
            if let Some(cap) = decision.backlog_cap {
                new_regs.rsi = cap as u64;
                dirty = true;
            } else if let Some(redirect) = decision.redirect_addr.as_deref() {
                if let Some((port_be, ip)) = parse_redirect(redirect) {
                    // sockaddr_in layout: family(2) port(2) addr(4).
                    write_mem(pid, regs.rsi + 2, &port_be);
                    write_mem(pid, regs.rsi + 4, &ip);
                }
            }
        }
        StrategyKind::FileOffsetChange => {
            if let Some(delta) = decision.offset_delta {
                let shifted = (regs.rsi as i64).saturating_add(delta).max(0);
                new_regs.rsi = shifted as u64;
                dirty = true;
            }
        }
    }
    if dirty {
        let _ = ptrace::setregs(pid, new_regs);
    }
    (fake_return, corrupt_exit)
}

fn on_entry(state: &mut RunState, pid: Pid, tracee: &mut Tracee) -> Result<(), TracerError> {
    let Ok(regs) = ptrace::getregs(pid) else {
        return Ok(()); // task is dying; the wait loop will reap it
    };
    let name = syscall_from_nr(regs.orig_rax);
    let event = build_event(pid, tracee.seq, name, &regs);
    tracee.seq += 1;
    let outcome = state.engine.decide_event(&event)?;
    let (fake_return, corrupt_exit) = if outcome.decision.is_perturb() {
        enact_entry(state, pid, &regs, name, &outcome.decision)
    } else {
        (None, None)
    };
    tracee.pending = Some(Pending {
        event,
        outcome,
        fake_return,
        corrupt_exit,
    });
    Ok(())
}

fn on_exit(state: &mut RunState, pid: Pid, tracee: &mut Tracee) {
    let Some(pending) = tracee.pending.take() else {
        return; // nothing decided at entry (spurious stop)
    };
    let Ok(mut regs) = ptrace::getregs(pid) else {
        state.finish(pending, None);
        return;
    };
    let child_ret = match pending.fake_return {
        Some(fake) => {
            regs.rax = fake as u64;
            let _ = ptrace::setregs(pid, regs);
            fake
        }
        None => {
            let ret = regs.rax as i64;
            if let Some((addr, budget)) = pending.corrupt_exit {
                if ret > 0 {
                    let n = (budget as i64).min(ret) as usize;
                    let garbage = state.corrupt_bytes(n);
                    write_mem(pid, addr, &garbage);
                }
            }
            ret
        }
    };
    state.finish(pending, Some(child_ret));
}

fn resume(pid: Pid, sig: Option<Signal>) {
    // ESRCH here means the task died between the stop and our resume;
    // the wait loop observes the death next.
    let _ = ptrace::syscall(pid, sig);
}

pub(super) fn run_traced(
    spec: &ExecSpec,
    settings: &PolicySettings,
    seed: u64,
    watchdog_seconds: Option<f64>,
) -> Result<TracedRun, TracerError> {
    let spool = |what| move |source| TracerError::Io { what, source };
    let mut out_file = tempfile::tempfile().map_err(spool("stdout spool"))?;
    let err_file = tempfile::tempfile().map_err(spool("stderr spool"))?;

    let mut cmd = Command::new(&spec.program);
    cmd.args(&spec.args)
        .stdin(Stdio::null())
        .stdout(out_file.try_clone().map_err(spool("stdout spool"))?)
        .stderr(err_file);
    unsafe {
        cmd.pre_exec(|| {
            // Own process group so the watchdog can kill the whole tree.
            if libc::setpgid(0, 0) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            nix::sys::ptrace::traceme().map_err(std::io::Error::from)?;
            Ok(())
        });
    }
    let start = Instant::now();
    let child = cmd.spawn().map_err(|source| TracerError::Spawn {
        program: spec.program.clone(),
        source,
    })?;
    let main_pid = Pid::from_raw(child.id() as i32);

    let mut state = RunState {
        engine: Engine::new(settings.clone(), seed),
        corrupt_rng: SplitMix64::new(derive_stream(seed, CORRUPT_STREAM_TAG)),
        events: Vec::new(),
        records: Vec::new(),
    };
    let mut tracees: BTreeMap<i32, Tracee> = BTreeMap::new();
    let mut main_exit: Option<ExitStatusKind> = None;

    // First stop: the SIGTRAP raised by the post-TRACEME exec.
    match waitpid(main_pid, Some(WaitPidFlag::__WALL)).map_err(|e| TracerError::Wait {
        source: std::io::Error::from(e),
    })? {
        WaitStatus::Stopped(_, _) => {
            ptrace::setoptions(
                main_pid,
                Options::PTRACE_O_TRACESYSGOOD
                    | Options::PTRACE_O_TRACEFORK
                    | Options::PTRACE_O_TRACEVFORK
                    | Options::PTRACE_O_TRACECLONE
                    | Options::PTRACE_O_EXITKILL,
            )
            .map_err(ptrace_err("setoptions"))?;
            tracees.insert(main_pid.as_raw(), Tracee::new(false));
            resume(main_pid, None);
        }
        WaitStatus::Exited(_, code) => main_exit = Some(ExitStatusKind::Code(code)),
        WaitStatus::Signaled(_, sig, _) => main_exit = Some(ExitStatusKind::Signal(sig as i32)),
        other => {
            return Err(TracerError::Ptrace {
                op: "initial stop",
                source: std::io::Error::other(format!("unexpected first wait: {other:?}")),
            })
        }
    }

    // Watchdog: SIGKILL the child's process group once the budget runs
    // out. Dropping `cancel_tx` (function exit) retires it without
    // firing.
    let fired = Arc::new(AtomicBool::new(false));
    let (cancel_tx, cancel_rx) = mpsc::channel::<()>();
    if let Some(budget) = watchdog_seconds {
        let fired = Arc::clone(&fired);
        let pgid = main_pid.as_raw();
        thread::spawn(move || {
            if let Err(RecvTimeoutError::Timeout) =
                cancel_rx.recv_timeout(Duration::from_secs_f64(budget.max(0.0)))
            {
                fired.store(true, Ordering::SeqCst);
                unsafe {
                    libc::kill(-pgid, libc::SIGKILL);
                }
            }
        });
    }

    while !tracees.is_empty() {
        let status = match waitpid(Some(Pid::from_raw(-1)), Some(WaitPidFlag::__WALL)) {
            Ok(status) => status,
            Err(Errno::ECHILD) => break,
            Err(e) => {
                return Err(TracerError::Wait {
                    source: std::io::Error::from(e),
                })
            }
        };
        match status {
            WaitStatus::PtraceSyscall(pid) => {
                let tracee = tracees
                    .entry(pid.as_raw())
                    .or_insert_with(|| Tracee::new(true));
                if tracee.skip_first {
                    // Tail of the clone/fork that created this task.
                    tracee.skip_first = false;
                } else if !tracee.in_exit {
                    on_entry(&mut state, pid, tracee)?;
                    tracee.in_exit = true;
                } else {
                    on_exit(&mut state, pid, tracee);
                    tracee.in_exit = false;
                }
                resume(pid, None);
            }
            WaitStatus::PtraceEvent(pid, _, _) => {
                // fork/vfork/clone announcement on the parent; the child
                // shows up in its own stop.
                resume(pid, None);
            }
            WaitStatus::Stopped(pid, sig) => {
                if let std::collections::btree_map::Entry::Vacant(slot) =
                    tracees.entry(pid.as_raw())
                {
                    // Auto-attach stop of a new child: absorb the signal.
                    slot.insert(Tracee::new(true));
                    resume(pid, None);
                } else {
                    resume(pid, Some(sig));
                }
            }
            WaitStatus::Exited(pid, code) => {
                if let Some(mut t) = tracees.remove(&pid.as_raw()) {
                    if let Some(pending) = t.pending.take() {
                        state.finish(pending, None);
                    }
                }
                if pid == main_pid {
                    main_exit.get_or_insert(ExitStatusKind::Code(code));
                }
            }
            WaitStatus::Signaled(pid, sig, _) => {
                if let Some(mut t) = tracees.remove(&pid.as_raw()) {
                    if let Some(pending) = t.pending.take() {
                        state.finish(pending, None);
                    }
                }
                if pid == main_pid {
                    main_exit.get_or_insert(ExitStatusKind::Signal(sig as i32));
                }
            }
            _ => {}
        }
    }
    drop(cancel_tx);
    let runtime = start.elapsed().as_secs_f64();

    let exit = if fired.load(Ordering::SeqCst) {
        ExitStatusKind::Timeout
    } else {
        main_exit.unwrap_or(ExitStatusKind::Code(-1))
    };
    let mut stdout = Vec::new();
    out_file
        .seek(SeekFrom::Start(0))
        .and_then(|_| out_file.read_to_end(&mut stdout))
        .map_err(spool("stdout spool"))?;

    let mut trace = TraceFile::new(TraceHeader::new(
        "x86_64",
        Some(format!("live:{}", spec.program)),
    ));
    trace.events = state.events;
    Ok(TracedRun {
        result: RunResult::new(exit, stdout, runtime),
        trace,
        records: state.records,
    })
}
