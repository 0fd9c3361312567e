//! Record framing and the append-only log file.
//!
//! Each record is `[len: u32 LE][crc32: u32 LE][payload]`, where the payload
//! is one JSON-encoded [`StoredEvent`] and the checksum covers the payload.
//! Sequence numbers start at 1 and increase by one per record.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;

use super::event::StoredEvent;
use super::StoreError;

pub const HEADER_LEN: usize = 8;

pub fn encode(event: &StoredEvent) -> Vec<u8> {
    let payload = serde_json::to_vec(event).expect("events serialize");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// A record cut short by a crash mid-write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TornTail {
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub events: Vec<StoredEvent>,
    /// Length of the prefix made of whole, valid records.
    pub valid_len: u64,
    pub torn: Option<TornTail>,
}

/// Splits a log into events. Damage confined to the final record is a torn
/// tail; damage followed by further data is corruption.
pub fn decode(bytes: &[u8]) -> Result<Decoded, StoreError> {
    let mut events: Vec<StoredEvent> = Vec::new();
    let mut pos = 0usize;
    let mut torn = false;
    while pos < bytes.len() {
        let expected = events.len() as u64 + 1;
        let corrupt = |reason: String| StoreError::Corrupt {
            path: None,
            sequence: expected,
            offset: pos as u64,
            reason,
        };
        if bytes.len() - pos < HEADER_LEN {
            torn = true;
            break;
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes"));
        let start = pos + HEADER_LEN;
        let Some(end) = start.checked_add(len).filter(|&e| e <= bytes.len()) else {
            torn = true;
            break;
        };
        let payload = &bytes[start..end];
        if crc32fast::hash(payload) != crc {
            if end == bytes.len() {
                torn = true;
                break;
            }
            return Err(corrupt("checksum mismatch".into()));
        }
        let event: StoredEvent =
            serde_json::from_slice(payload).map_err(|e| corrupt(format!("undecodable record: {e}")))?;
        if event.sequence != expected {
            return Err(corrupt(format!("found sequence {}", event.sequence)));
        }
        if events.first().is_some_and(|first| first.campaign_id != event.campaign_id) {
            return Err(corrupt(format!("record belongs to campaign `{}`", event.campaign_id)));
        }
        events.push(event);
        pos = end;
    }
    Ok(Decoded {
        events,
        valid_len: pos as u64,
        torn: torn.then(|| TornTail {
            offset: pos as u64,
            bytes: (bytes.len() - pos) as u64,
        }),
    })
}

/// Where encoded records go. `append` must not return before the bytes are
/// durable, and must leave the log unchanged when it fails.
pub trait LogSink: Send {
    fn append(&mut self, bytes: &[u8]) -> io::Result<()>;
}

pub struct FileLog {
    file: File,
    path: PathBuf,
    len: u64,
}

impl FileLog {
    /// Opens (or creates) a log, takes its exclusive lock and returns its
    /// events. A torn tail is cut off the file.
    pub fn open(path: &Path) -> Result<(FileLog, Decoded), StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .map_err(|e| StoreError::io(path, e))?;
        file.try_lock().map_err(|_| StoreError::Locked(path.to_path_buf()))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| StoreError::io(path, e))?;
        let decoded = decode(&bytes).map_err(|e| e.in_file(path))?;
        if let Some(torn) = &decoded.torn {
            tracing::warn!(
                path = %path.display(),
                offset = torn.offset,
                bytes = torn.bytes,
                "discarding torn record at the end of the log"
            );
            file.set_len(decoded.valid_len).map_err(|e| StoreError::io(path, e))?;
            file.sync_data().map_err(|e| StoreError::io(path, e))?;
        }
        let len = decoded.valid_len;
        Ok((
            FileLog {
                file,
                path: path.to_path_buf(),
                len,
            },
            decoded,
        ))
    }

    /// Reads a log without locking or repairing it.
    pub fn read(path: &Path) -> Result<Decoded, StoreError> {
        let bytes = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
        decode(&bytes).map_err(|e| e.in_file(path))
    }

    /// Empties the log.
    pub fn reset(&mut self) -> io::Result<()> {
        self.file.set_len(0)?;
        self.file.sync_data()?;
        self.len = 0;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl LogSink for FileLog {
    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        let result = self
            .file
            .seek(SeekFrom::Start(self.len))
            .and_then(|_| self.file.write_all(bytes))
            .and_then(|_| self.file.sync_data());
        match result {
            Ok(()) => {
                self.len += bytes.len() as u64;
                Ok(())
            }
            Err(e) => {
                let _ = self.file.set_len(self.len);
                Err(e)
            }
        }
    }
}

/// In-memory log, shareable so tests can inspect or replay the bytes.
#[derive(Clone, Default)]
pub struct MemoryLog {
    bytes: Arc<Mutex<Vec<u8>>>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.bytes.lock().clone()
    }
}

impl LogSink for MemoryLog {
    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.bytes.lock().extend_from_slice(bytes);
        Ok(())
    }
}
