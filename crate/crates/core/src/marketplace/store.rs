//! On-disk layout of a data directory:
//!
//! ```text
//! config.toml        deployment configuration
//! events.jsonl       hash-chained event log (source of truth)
//! provenance.jsonl   hash-chained publication records (derived, checked on open)
//! blobs/<sha256>     adapter bundles referenced by publish events
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::event::EventLogEntry;
use crate::bundle::sha256_hex;
use crate::compliance::ProvenanceRecord;

/// Content-addressed storage for adapter bundles.
pub trait BlobStore: Send + Sync {
    fn put(&mut self, bytes: &[u8]) -> io::Result<String>;
    fn get(&self, sha256: &str) -> io::Result<Option<Vec<u8>>>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryBlobs(BTreeMap<String, Vec<u8>>);

impl BlobStore for MemoryBlobs {
    fn put(&mut self, bytes: &[u8]) -> io::Result<String> {
        let key = sha256_hex(bytes);
        self.0.entry(key.clone()).or_insert_with(|| bytes.to_vec());
        Ok(key)
    }

    fn get(&self, sha256: &str) -> io::Result<Option<Vec<u8>>> {
        Ok(self.0.get(sha256).cloned())
    }
}

/// Where committed events go besides memory.
pub trait EventSink: Send + Sync {
    fn append(&mut self, entry: &EventLogEntry, provenance: Option<&ProvenanceRecord>) -> io::Result<()>;

    fn accepts_writes(&self) -> bool {
        true
    }
}

#[derive(Debug, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&mut self, _: &EventLogEntry, _: Option<&ProvenanceRecord>) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join("events.jsonl")
    }

    pub fn provenance_path(&self) -> PathBuf {
        self.root.join("provenance.jsonl")
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join("lock")
    }

    pub fn blobs_dir(&self) -> PathBuf {
        self.root.join("blobs")
    }

    pub fn read_optional(path: &Path) -> io::Result<String> {
        match fs::read_to_string(path) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DirBlobs {
    dir: PathBuf,
}

impl DirBlobs {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl BlobStore for DirBlobs {
    fn put(&mut self, bytes: &[u8]) -> io::Result<String> {
        let key = sha256_hex(bytes);
        let path = self.dir.join(&key);
        if !path.exists() {
            fs::create_dir_all(&self.dir)?;
            let tmp = self.dir.join(format!("{key}.tmp"));
            fs::write(&tmp, bytes)?;
            fs::rename(tmp, &path)?;
        }
        Ok(key)
    }

    fn get(&self, sha256: &str) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.dir.join(sha256)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Appends event and provenance lines, syncing after each write. Holds an
/// exclusive lock on the data directory so only one writer appends.
#[derive(Debug)]
pub struct FileSink {
    events: File,
    provenance: File,
    _lock: File,
}

impl FileSink {
    pub fn open(dir: &DataDir) -> io::Result<Self> {
        fs::create_dir_all(dir.root())?;
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(dir.lock_path())?;
        lock.try_lock().map_err(|_| {
            io::Error::new(
                io::ErrorKind::WouldBlock,
                format!("{} is in use by another writer", dir.root().display()),
            )
        })?;
        let open = |p: PathBuf| OpenOptions::new().create(true).append(true).open(p);
        Ok(Self {
            events: open(dir.events_path())?,
            provenance: open(dir.provenance_path())?,
            _lock: lock,
        })
    }
}

/// Refuses every append; used when a data directory is opened for reading.
#[derive(Debug, Default)]
pub struct ReadOnlySink;

impl EventSink for ReadOnlySink {
    fn append(&mut self, _: &EventLogEntry, _: Option<&ProvenanceRecord>) -> io::Result<()> {
        Err(io::Error::new(io::ErrorKind::PermissionDenied, "opened read-only"))
    }

    fn accepts_writes(&self) -> bool {
        false
    }
}

impl EventSink for FileSink {
    fn append(&mut self, entry: &EventLogEntry, provenance: Option<&ProvenanceRecord>) -> io::Result<()> {
        self.events.write_all(entry.to_line().as_bytes())?;
        self.events.sync_data()?;
        if let Some(record) = provenance {
            let mut line = serde_json::to_string(record).expect("record serializes");
            line.push('\n');
            self.provenance.write_all(line.as_bytes())?;
            self.provenance.sync_data()?;
        }
        Ok(())
    }
}
