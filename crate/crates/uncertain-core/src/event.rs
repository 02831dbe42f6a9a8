//! One observed syscall invocation: the event shape that drives strategy
//! decisions. Optional fields are populated per syscall (fd for
//! descriptor-taking calls, path for the open/unlink/rename family, buffer
//! metadata for read/write/send/recv, sockaddr for bind/connect/sendto,
//! backlog for listen, offset for lseek, native return when known).
//!
//! Buffer contents are truncated to a 16-byte prefix: Behavior-2 detection
//! needs only the 4 ELF magic bytes, and full payload capture would be a
//! size and privacy liability.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::policy::PolicyError;
use crate::syscall::SyscallName;

/// Maximum captured buffer prefix, in bytes.
pub const BUFFER_PREFIX_MAX: usize = 16;

/// One observed syscall invocation.
///
/// Field order here is the canonical serialization order of the trace
/// format; optional fields are omitted from serialized lines when absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyscallEvent {
    /// Process identifier (opaque).
    pub pid: u32,
    /// Per-pid sequence number, starting at 1, gap-free.
    pub seq: u64,
    pub name: SyscallName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// First ≤ 16 bytes of a buffer argument, hex-encoded in serialized form.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "hex_prefix")]
    pub buffer_prefix: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_len: Option<u64>,
    /// "ip:port" for bind/connect/sendto-style calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sockaddr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backlog: Option<u32>,
    /// Requested offset for lseek.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<i64>,
    /// Un-perturbed return value when known (replay traces, live exits).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native_return: Option<i64>,
}

impl SyscallEvent {
    pub fn new(pid: u32, seq: u64, name: SyscallName) -> Self {
        SyscallEvent {
            pid,
            seq,
            name,
            fd: None,
            path: None,
            buffer_prefix: None,
            buffer_len: None,
            sockaddr: None,
            backlog: None,
            offset: None,
            native_return: None,
        }
    }

    pub fn with_fd(mut self, fd: i32) -> Self {
        self.fd = Some(fd);
        self
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }

    /// Sets both buffer fields: the stored prefix is truncated to
    /// `BUFFER_PREFIX_MAX` and to `len`.
    pub fn with_buffer(mut self, prefix: &[u8], len: u64) -> Self {
        let take = prefix.len().min(BUFFER_PREFIX_MAX).min(len as usize);
        self.buffer_prefix = Some(prefix[..take].to_vec());
        self.buffer_len = Some(len);
        self
    }

    pub fn with_buffer_len(mut self, len: u64) -> Self {
        self.buffer_len = Some(len);
        self
    }

    pub fn with_sockaddr(mut self, addr: impl Into<String>) -> Self {
        self.sockaddr = Some(addr.into());
        self
    }

    pub fn with_backlog(mut self, backlog: u32) -> Self {
        self.backlog = Some(backlog);
        self
    }

    pub fn with_offset(mut self, offset: i64) -> Self {
        self.offset = Some(offset);
        self
    }

    pub fn with_native_return(mut self, ret: i64) -> Self {
        self.native_return = Some(ret);
        self
    }

    /// Structural invariants of a canonical event:
    /// `buffer_len` present whenever `buffer_prefix` is, prefix no longer
    /// than 16 bytes and no longer than `buffer_len`, `fd ≥ 0`, `seq ≥ 1`.
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.seq == 0 {
            return Err(PolicyError::InvalidEvent {
                pid: self.pid,
                seq: self.seq,
                reason: "seq numbering starts at 1",
            });
        }
        if let Some(prefix) = &self.buffer_prefix {
            if prefix.len() > BUFFER_PREFIX_MAX {
                return Err(PolicyError::InvalidEvent {
                    pid: self.pid,
                    seq: self.seq,
                    reason: "buffer_prefix longer than 16 bytes",
                });
            }
            match self.buffer_len {
                None => {
                    return Err(PolicyError::InvalidEvent {
                        pid: self.pid,
                        seq: self.seq,
                        reason: "buffer_prefix present without buffer_len",
                    });
                }
                Some(len) if (prefix.len() as u64) > len => {
                    return Err(PolicyError::InvalidEvent {
                        pid: self.pid,
                        seq: self.seq,
                        reason: "buffer_prefix longer than buffer_len",
                    });
                }
                Some(_) => {}
            }
        }
        if let Some(fd) = self.fd {
            if fd < 0 {
                return Err(PolicyError::InvalidEvent {
                    pid: self.pid,
                    seq: self.seq,
                    reason: "negative fd",
                });
            }
        }
        Ok(())
    }

    /// True when the buffer prefix starts with the ELF magic `\x7fELF`.
    pub fn has_elf_magic(&self) -> bool {
        self.buffer_prefix
            .as_deref()
            .is_some_and(|p| p.starts_with(&[0x7f, b'E', b'L', b'F']))
    }
}

/// Hex (lowercase, no separator) serde for the optional buffer prefix.
mod hex_prefix {
    use alloc::string::String;
    use alloc::vec::Vec;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, ser: S) -> Result<S::Ok, S::Error> {
        // skip_serializing_if guarantees Some here.
        let bytes = v.as_deref().unwrap_or_default();
        let mut s = String::with_capacity(bytes.len() * 2);
        for b in bytes {
            const HEX: &[u8; 16] = b"0123456789abcdef";
            s.push(HEX[(b >> 4) as usize] as char);
            s.push(HEX[(b & 0xf) as usize] as char);
        }
        ser.serialize_str(&s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Option<Vec<u8>>, D::Error> {
        let s = <&str>::deserialize(de)?;
        if s.len() % 2 != 0 {
            return Err(serde::de::Error::custom("odd-length hex buffer_prefix"));
        }
        let mut out = Vec::with_capacity(s.len() / 2);
        let digits = s.as_bytes();
        for pair in digits.chunks_exact(2) {
            let nibble = |c: u8| -> Result<u8, D::Error> {
                match c {
                    b'0'..=b'9' => Ok(c - b'0'),
                    b'a'..=b'f' => Ok(c - b'a' + 10),
                    b'A'..=b'F' => Ok(c - b'A' + 10),
                    _ => Err(serde::de::Error::custom("non-hex byte in buffer_prefix")),
                }
            };
            out.push((nibble(pair[0])? << 4) | nibble(pair[1])?);
        }
        Ok(Some(out))
    }
}
