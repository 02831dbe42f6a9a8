//! Synthetic workload generator: deterministic traces for eight workload
//! archetypes, used by the harness corpus and the statistical tests.
//! `generate_scenario(spec, seed)` is a pure function — identical bytes
//! across runs and platforms.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use uncertain_core::rng::{derive_stream, fnv1a64};
use uncertain_core::{SplitMix64, SyscallEvent, SyscallName};

use crate::trace::{TraceFile, TraceHeader};

/// Workload family. The malicious archetypes mirror classic corpus
/// categories (flooders, viruses, spyware, Trojans, worms) plus a staged
/// multi-phase intrusion; the benign ones exercise the whitelisting and
/// false-positive paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    /// Network flooder: ≥ 90% network-related events.
    Flooder,
    /// File infector: ELF-header writes into program files.
    Virus,
    /// Document harvester: many reads, few large sends after a dup.
    Spyware,
    /// Listening backdoor: bind/listen/accept service loop.
    TrojanBackdoor,
    /// Scanner/propagator: connect sweep plus self-copy writes.
    Worm,
    /// Plain file shuffling on user-writable paths; all in-set.
    BenignIo,
    /// Compute-bound: mostly non-interference-set events.
    BenignCpu,
    /// Staged intrusion: backdoor install, stdio redirection, key-file
    /// reads, exfiltration.
    Apt,
}

impl Archetype {
    pub const ALL: [Archetype; 8] = [
        Archetype::Flooder,
        Archetype::Virus,
        Archetype::Spyware,
        Archetype::TrojanBackdoor,
        Archetype::Worm,
        Archetype::BenignIo,
        Archetype::BenignCpu,
        Archetype::Apt,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Archetype::Flooder => "flooder",
            Archetype::Virus => "virus",
            Archetype::Spyware => "spyware",
            Archetype::TrojanBackdoor => "trojan_backdoor",
            Archetype::Worm => "worm",
            Archetype::BenignIo => "benign_io",
            Archetype::BenignCpu => "benign_cpu",
            Archetype::Apt => "apt",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown archetype `{s}` (expected one of: {})",
                    Archetype::ALL.map(|a| a.as_str()).join(", ")
                )
            })
    }
}

/// What to generate. Mix knobs apply to the archetypes that have one;
/// the rest ignore them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub archetype: Archetype,
    #[serde(default = "default_event_count")]
    pub event_count: u32,
    /// Number of synthetic processes; events are interleaved round-robin.
    #[serde(default = "default_pids")]
    pub pids: u32,
    /// Flooder: share of network events (default 0.95).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_share: Option<f64>,
    /// BenignCpu: share of interference-set events (default 0.05).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_set_share: Option<f64>,
}

fn default_event_count() -> u32 {
    1000
}

fn default_pids() -> u32 {
    1
}

impl ScenarioSpec {
    pub fn new(name: impl Into<String>, archetype: Archetype, event_count: u32) -> Self {
        ScenarioSpec {
            name: name.into(),
            archetype,
            event_count,
            pids: 1,
            network_share: None,
            in_set_share: None,
        }
    }
}

/// Per-pid event emitter: gap-free sequence numbers, monotone synthetic
/// fd allocation, one derived RNG stream.
struct PidGen {
    pid: u32,
    seq: u64,
    rng: SplitMix64,
    next_fd: i32,
}

impl PidGen {
    fn new(pid: u32, scenario_seed: u64) -> Self {
        PidGen {
            pid,
            seq: 0,
            rng: SplitMix64::new(derive_stream(scenario_seed, pid as u64)),
            next_fd: 3,
        }
    }

    fn ev(&mut self, name: SyscallName) -> SyscallEvent {
        self.seq += 1;
        SyscallEvent::new(self.pid, self.seq, name)
    }

    /// Emits an openat and allocates its synthetic return fd.
    fn open(&mut self, path: &str) -> (SyscallEvent, i32) {
        let fd = self.next_fd;
        self.next_fd += 1;
        let ev = self
            .ev(SyscallName::Openat)
            .with_path(path)
            .with_native_return(fd as i64);
        (ev, fd)
    }

    fn alloc_fd(&mut self) -> i32 {
        let fd = self.next_fd;
        self.next_fd += 1;
        fd
    }
}

const ELF_PREFIX: [u8; 8] = [0x7f, b'E', b'L', b'F', 2, 1, 1, 0];

/// Generates one synthetic trace. Pure in `(spec, seed)`.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> TraceFile {
    let scenario_seed = derive_stream(seed, fnv1a64(spec.name.as_bytes()));
    let pids = spec.pids.max(1);
    let total = spec.event_count as usize;
    let mut queues: Vec<VecDeque<SyscallEvent>> = Vec::new();
    for i in 0..pids {
        let pid = 1000 + i;
        // Distribute the budget: the first (total % pids) streams take one
        // extra event.
        let mut budget = total / pids as usize;
        if (i as usize) < total % pids as usize {
            budget += 1;
        }
        let mut g = PidGen::new(pid, scenario_seed);
        let events = match spec.archetype {
            Archetype::Flooder => gen_flooder(&mut g, budget, spec.network_share),
            Archetype::Virus => gen_virus(&mut g, budget),
            Archetype::Spyware => gen_spyware(&mut g, budget),
            Archetype::TrojanBackdoor => gen_trojan(&mut g, budget),
            Archetype::Worm => gen_worm(&mut g, budget),
            Archetype::BenignIo => gen_benign_io(&mut g, budget),
            Archetype::BenignCpu => gen_benign_cpu(&mut g, budget, spec.in_set_share),
            Archetype::Apt => gen_apt(&mut g, budget),
        };
        queues.push(events.into());
    }
    // Round-robin interleave, preserving each pid's order.
    let mut events = Vec::with_capacity(total);
    while queues.iter().any(|q| !q.is_empty()) {
        for q in &mut queues {
            if let Some(ev) = q.pop_front() {
                events.push(ev);
            }
        }
    }
    let header = TraceHeader::new(
        "synthetic",
        Some(format!(
            "scenario:{}:{}:n={}",
            spec.archetype, spec.name, spec.event_count
        )),
    );
    TraceFile { header, events }
}

/// One connect, then a sendto loop with sparse sleeps. The non-network
/// share is spread evenly (error-diffusion), so the ≥ 90% network mix
/// holds exactly, not just in expectation.
fn gen_flooder(g: &mut PidGen, n: usize, network_share: Option<f64>) -> Vec<SyscallEvent> {
    let share = network_share.unwrap_or(0.95).clamp(0.0, 1.0);
    let target = "203.0.113.9:53";
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(
        g.ev(SyscallName::Connect)
            .with_fd(3)
            .with_sockaddr(target)
            .with_native_return(0),
    );
    let mut acc = 0.0f64;
    while out.len() < n {
        acc += 1.0 - share;
        if acc >= 1.0 {
            acc -= 1.0;
            out.push(g.ev(SyscallName::Nanosleep).with_native_return(0));
        } else {
            let len = 64 + g.rng.next_bounded(1408);
            out.push(
                g.ev(SyscallName::Sendto)
                    .with_fd(3)
                    .with_sockaddr(target)
                    .with_buffer(b"AAAAAAAA", len)
                    .with_native_return(len as i64),
            );
        }
    }
    out
}

/// Open → read → ELF-header write → close, one victim program at a time.
fn gen_virus(g: &mut PidGen, n: usize) -> Vec<SyscallEvent> {
    let mut out = Vec::with_capacity(n);
    let mut victim = 0u32;
    while out.len() < n {
        let path = format!("/home/user/bin/app_{victim}");
        victim += 1;
        let (ev, fd) = g.open(&path);
        out.push(ev);
        if out.len() < n {
            out.push(
                g.ev(SyscallName::Read)
                    .with_fd(fd)
                    .with_buffer_len(512)
                    .with_native_return(512),
            );
        }
        if out.len() < n {
            let len = 4096 + g.rng.next_bounded(4096);
            out.push(
                g.ev(SyscallName::Write)
                    .with_fd(fd)
                    .with_buffer(&ELF_PREFIX, len)
                    .with_native_return(len as i64),
            );
        }
        if out.len() < n {
            out.push(g.ev(SyscallName::Close).with_fd(fd).with_native_return(0));
        }
    }
    out
}

/// Harvest loop over document files, then one dup and a few large sends.
fn gen_spyware(g: &mut PidGen, n: usize) -> Vec<SyscallEvent> {
    let mut out = Vec::with_capacity(n);
    let sends = n.min(3);
    let tail = sends + usize::from(n > 3); // dup + sends
    let mut doc = 0u32;
    while out.len() + tail < n {
        let path = format!("/home/user/documents/report_{doc}.txt");
        doc += 1;
        let (ev, fd) = g.open(&path);
        out.push(ev);
        let reads = 1 + g.rng.next_bounded(3) as usize;
        for _ in 0..reads {
            if out.len() + tail >= n {
                break;
            }
            let len = 1024 + g.rng.next_bounded(3072);
            out.push(
                g.ev(SyscallName::Read)
                    .with_fd(fd)
                    .with_buffer_len(len)
                    .with_native_return(len as i64),
            );
        }
        if out.len() + tail < n {
            out.push(g.ev(SyscallName::Close).with_fd(fd).with_native_return(0));
        }
    }
    if n > 3 {
        // Duplicate the staging fd before shipping the archive.
        let dup_src = 3;
        let dup_dst = g.alloc_fd();
        out.push(
            g.ev(SyscallName::Dup)
                .with_fd(dup_src)
                .with_native_return(dup_dst as i64),
        );
    }
    for _ in 0..sends {
        let len = 32768 + g.rng.next_bounded(32768);
        out.push(
            g.ev(SyscallName::Sendmsg)
                .with_fd(3)
                .with_sockaddr("198.51.100.41:8443")
                .with_buffer_len(len)
                .with_native_return(len as i64),
        );
    }
    out
}

/// Bind + listen, then an accept/read/write/close service loop with an
/// occasional outbound beacon.
fn gen_trojan(g: &mut PidGen, n: usize) -> Vec<SyscallEvent> {
    let mut out = Vec::with_capacity(n);
    if out.len() < n {
        out.push(
            g.ev(SyscallName::Bind)
                .with_fd(3)
                .with_sockaddr("0.0.0.0:4444")
                .with_native_return(0),
        );
    }
    if out.len() < n {
        out.push(
            g.ev(SyscallName::Listen)
                .with_fd(3)
                .with_backlog(16)
                .with_native_return(0),
        );
    }
    let mut client = 0u32;
    while out.len() < n {
        client += 1;
        let conn = g.alloc_fd();
        out.push(
            g.ev(SyscallName::Accept)
                .with_fd(3)
                .with_native_return(conn as i64),
        );
        if out.len() < n {
            let len = 16 + g.rng.next_bounded(240);
            out.push(
                g.ev(SyscallName::Read)
                    .with_fd(conn)
                    .with_buffer_len(len)
                    .with_native_return(len as i64),
            );
        }
        if out.len() < n {
            out.push(
                g.ev(SyscallName::Write)
                    .with_fd(conn)
                    .with_buffer(b"OK shell ready\n", 15)
                    .with_native_return(15),
            );
        }
        if out.len() < n {
            out.push(g.ev(SyscallName::Close).with_fd(conn).with_native_return(0));
        }
        if client % 6 == 0 && out.len() < n {
            out.push(
                g.ev(SyscallName::Connect)
                    .with_fd(4)
                    .with_sockaddr("203.0.113.77:8080")
                    .with_native_return(0),
            );
        }
    }
    out
}

/// Connect sweep across a /16 with periodic self-copy drops and sends.
fn gen_worm(g: &mut PidGen, n: usize) -> Vec<SyscallEvent> {
    let mut out = Vec::with_capacity(n);
    let mut copy = 0u32;
    while out.len() < n {
        for _ in 0..3 {
            if out.len() >= n {
                break;
            }
            let b = g.rng.next_bounded(256);
            let c = g.rng.next_bounded(256);
            out.push(
                g.ev(SyscallName::Connect)
                    .with_fd(3)
                    .with_sockaddr(&format!("10.20.{b}.{c}:445"))
                    .with_native_return(-111), // ECONNREFUSED scan noise
            );
        }
        if out.len() < n {
            let path = format!("/tmp/.wrm_{copy}");
            copy += 1;
            let (ev, fd) = g.open(&path);
            out.push(ev);
            if out.len() < n {
                out.push(
                    g.ev(SyscallName::Write)
                        .with_fd(fd)
                        .with_buffer(&ELF_PREFIX, 16384)
                        .with_native_return(16384),
                );
            }
            if out.len() < n {
                out.push(g.ev(SyscallName::Close).with_fd(fd).with_native_return(0));
            }
            if out.len() < n {
                out.push(
                    g.ev(SyscallName::Sendto)
                        .with_fd(3)
                        .with_sockaddr("10.20.0.1:445")
                        .with_buffer_len(16384)
                        .with_native_return(16384),
                );
            }
        }
    }
    out
}

/// Plain open/read/write/lseek/fstat/close churn on user-writable paths.
/// Every event is in the interference set and none touches a protected
/// path, so under a static threshold every event rolls the gate.
fn gen_benign_io(g: &mut PidGen, n: usize) -> Vec<SyscallEvent> {
    let mut out = Vec::with_capacity(n);
    let mut file = 0u32;
    while out.len() < n {
        let path = if file % 2 == 0 {
            format!("/tmp/data_{file}.log")
        } else {
            format!("/home/user/work/notes_{file}.txt")
        };
        file += 1;
        let (ev, fd) = g.open(&path);
        out.push(ev);
        let ops = 3 + g.rng.next_bounded(6);
        for _ in 0..ops {
            if out.len() + 1 >= n {
                break; // leave room for the close
            }
            match g.rng.next_bounded(4) {
                0 => {
                    let len = 40 + g.rng.next_bounded(216);
                    out.push(
                        g.ev(SyscallName::Read)
                            .with_fd(fd)
                            .with_buffer_len(len)
                            .with_native_return(len as i64),
                    );
                }
                1 => {
                    let len = 60 + g.rng.next_bounded(196);
                    out.push(
                        g.ev(SyscallName::Write)
                            .with_fd(fd)
                            .with_buffer(b"log entry: ok\n", len)
                            .with_native_return(len as i64),
                    );
                }
                2 => {
                    let off = g.rng.next_bounded(8192) as i64;
                    out.push(
                        g.ev(SyscallName::Lseek)
                            .with_fd(fd)
                            .with_offset(off)
                            .with_native_return(off),
                    );
                }
                _ => {
                    out.push(g.ev(SyscallName::Fstat).with_fd(fd).with_native_return(0));
                }
            }
        }
        out.push(g.ev(SyscallName::Close).with_fd(fd).with_native_return(0));
    }
    out.truncate(n);
    out
}

/// Mostly out-of-set events; the in-set share (default 5%) is spread
/// evenly by error diffusion so the < 10% bound is exact.
fn gen_benign_cpu(g: &mut PidGen, n: usize, in_set_share: Option<f64>) -> Vec<SyscallEvent> {
    let share = in_set_share.unwrap_or(0.05).clamp(0.0, 1.0);
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0f64;
    let mut toggle = false;
    while out.len() < n {
        acc += share;
        if acc >= 1.0 {
            acc -= 1.0;
            toggle = !toggle;
            if toggle {
                out.push(g.ev(SyscallName::Nanosleep).with_native_return(0));
            } else {
                out.push(
                    g.ev(SyscallName::Read)
                        .with_fd(3)
                        .with_buffer_len(128)
                        .with_native_return(128),
                );
            }
        } else {
            out.push(g.ev(SyscallName::Other).with_native_return(0));
        }
    }
    out
}

/// The staged intrusion, in order: backdoor-config writes including one
/// ELF-magic write, three dup2 calls with source fds 0/1/0, interleaved
/// key-file reads and log writes, then connect + sendto exfiltration.
/// Needs ≥ 24 events per pid; smaller budgets are raised to 24.
fn gen_apt(g: &mut PidGen, budget: usize) -> Vec<SyscallEvent> {
    let n = budget.max(24);
    let mut out = Vec::with_capacity(n);

    // Stage 1: install. Plain config writes, then the backdoor binary
    // itself (the ELF-magic write), mirroring a drop-and-persist step.
    let (ev, fd_cfg) = g.open("/home/user/.backdoor/config");
    out.push(ev);
    for payload in [&b"port=4444\nmode=reverse\n"[..], &b"host=198.51.100.23\n"[..]] {
        out.push(
            g.ev(SyscallName::Write)
                .with_fd(fd_cfg)
                .with_buffer(payload, payload.len() as u64)
                .with_native_return(payload.len() as i64),
        );
    }
    let (ev, fd_bd) = g.open("/home/user/.backdoor/bd");
    out.push(ev);
    out.push(
        g.ev(SyscallName::Write)
            .with_fd(fd_bd)
            .with_buffer(&ELF_PREFIX, 8192)
            .with_native_return(8192),
    );
    out.push(g.ev(SyscallName::Close).with_fd(fd_bd).with_native_return(0));

    // Stage 2: wire the shell to the future socket — three dup2 calls
    // with source fds 0, 1, 0.
    for src in [0, 1, 0] {
        let dst = g.alloc_fd();
        out.push(
            g.ev(SyscallName::Dup2)
                .with_fd(src)
                .with_native_return(dst as i64),
        );
    }

    // Stage 3: harvest. One user key file, one system config (protected
    // under default rules), reads interleaved with log writes.
    let (ev, fd_key) = g.open("/home/user/.ssh/id_rsa");
    out.push(ev);
    let (ev, fd_sys) = g.open("/etc/ssh/sshd_config");
    out.push(ev);
    let sends = (n / 10).max(2);
    let middle = n - out.len() - 4 - sends; // 2 closes + connect + final close
    for i in 0..middle {
        match i % 3 {
            0 => out.push(
                g.ev(SyscallName::Read)
                    .with_fd(fd_key)
                    .with_buffer_len(256)
                    .with_native_return(256),
            ),
            1 => out.push(
                g.ev(SyscallName::Read)
                    .with_fd(fd_sys)
                    .with_buffer_len(256)
                    .with_native_return(256),
            ),
            _ => out.push(
                g.ev(SyscallName::Write)
                    .with_fd(fd_cfg)
                    .with_buffer(b"harvest ok\n", 11)
                    .with_native_return(11),
            ),
        }
    }
    out.push(g.ev(SyscallName::Close).with_fd(fd_key).with_native_return(0));
    out.push(g.ev(SyscallName::Close).with_fd(fd_sys).with_native_return(0));

    // Stage 4: exfiltrate.
    out.push(
        g.ev(SyscallName::Connect)
            .with_fd(9)
            .with_sockaddr("198.51.100.23:443")
            .with_native_return(0),
    );
    for _ in 0..sends {
        let len = 512 + g.rng.next_bounded(512);
        out.push(
            g.ev(SyscallName::Sendto)
                .with_fd(9)
                .with_sockaddr("198.51.100.23:443")
                .with_buffer_len(len)
                .with_native_return(len as i64),
        );
    }
    out.push(g.ev(SyscallName::Close).with_fd(fd_cfg).with_native_return(0));
    debug_assert_eq!(out.len(), n);
    out
}
