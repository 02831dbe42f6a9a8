//! Self-contained tracee fixtures behind the hidden `fixture`
//! subcommand: the test suite re-invokes this binary under the live
//! tracer, so end-to-end runs need no external programs. All payload
//! syscalls go through raw libc so the traced surface stays predictable,
//! and every fixture terminates regardless of injected failures.

use std::io::Error;

fn raw_write(fd: i32, data: &[u8]) -> isize {
    unsafe { libc::write(fd, data.as_ptr().cast(), data.len()) }
}

/// Prints a fixed, deterministic payload to stdout (identity checks:
/// an untouched run must reproduce these bytes exactly). Exit 0.
pub fn emit() -> i32 {
    for i in 0..16u32 {
        let line = format!("fixture emit line {i:02}\n");
        raw_write(1, line.as_bytes());
    }
    0
}

/// Issues `count` raw `write`s of `bytes` patterned bytes to stdout,
/// ignoring failures. Under `Delay` the runtime stretches; under
/// return-faking strategies the output shrinks while the exit stays 0.
pub fn write_loop(count: u32, bytes: u32) -> i32 {
    let payload: Vec<u8> = (0..bytes).map(|i| b'a' + (i % 26) as u8).collect();
    for _ in 0..count {
        raw_write(1, &payload);
    }
    0
}

/// One raw `nanosleep` (100ms), then exit with its errno (0 on
/// success). Everything else this fixture touches at startup is either
/// outside the interference set or protected loader traffic, so an
/// injected `ErrorReturn` on the sleep is visible as the exit code.
pub fn sleep_probe() -> i32 {
    let req = libc::timespec {
        tv_sec: 0,
        tv_nsec: 100_000_000,
    };
    // The raw syscall, not the libc wrapper: glibc routes nanosleep()
    // through clock_nanosleep, which is a different kernel entry point.
    #[cfg(target_os = "linux")]
    let rc = unsafe {
        libc::syscall(
            libc::SYS_nanosleep,
            &req as *const libc::timespec,
            std::ptr::null_mut::<libc::timespec>(),
        )
    };
    #[cfg(not(target_os = "linux"))]
    let rc = unsafe { libc::nanosleep(&req, std::ptr::null_mut()) as i64 };
    if rc == 0 {
        0
    } else {
        Error::last_os_error().raw_os_error().unwrap_or(1)
    }
}

/// Escalation bait: writes an ELF header to a scratch file, then
/// duplicates stdin — the two per-name behavior triggers — followed by a
/// burst of plain writes whose decisions show the raised threshold.
/// Ignores injected failures; exit 0.
pub fn elf_then_dup() -> i32 {
    let path = format!("/tmp/uncertain-fixture-{}.bin\0", std::process::id());
    let elf = [0x7fu8, b'E', b'L', b'F', 2, 1, 1, 0];
    unsafe {
        let fd = libc::open(
            path.as_ptr().cast(),
            libc::O_CREAT | libc::O_WRONLY | libc::O_TRUNC,
            0o600 as libc::c_uint,
        );
        if fd >= 0 {
            libc::write(fd, elf.as_ptr().cast(), elf.len());
            libc::close(fd);
            libc::unlink(path.as_ptr().cast());
        }
        let dup = libc::dup2(0, 9);
        if dup >= 0 {
            libc::close(dup);
        }
    }
    for _ in 0..8 {
        raw_write(1, b"post-escalation write\n");
    }
    0
}
