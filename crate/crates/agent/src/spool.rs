//! Restart-safe FIFO of pending batches: one JSON file per batch named by a
//! zero-padded sequence number. Appends beyond capacity evict the oldest.

use std::collections::VecDeque;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use miniops_core::Batch;
use serde::Serialize;

const EXT: &str = "batch";

#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    batch: Batch,
    /// Not on disk; lost if the process dies.
    volatile: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Evicted {
    pub batch_id: String,
    pub records: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AppendReport {
    pub evicted: Vec<Evicted>,
    /// The appended batch could not be persisted.
    pub volatile: bool,
}

#[derive(Debug)]
pub struct SpoolBuffer {
    dir: Option<PathBuf>,
    capacity: usize,
    entries: VecDeque<Entry>,
    next_seq: u64,
    fsync: bool,
}

impl SpoolBuffer {
    pub fn in_memory(capacity: usize) -> Self {
        SpoolBuffer {
            dir: None,
            capacity: capacity.max(1),
            entries: VecDeque::new(),
            next_seq: 0,
            fsync: false,
        }
    }

    /// Opens or creates a spool directory and reloads pending batches in
    /// sequence order. Unreadable files are logged and left in place.
    pub fn open(dir: impl AsRef<Path>, capacity: usize) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut found = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(EXT) {
                continue;
            }
            let Some(seq) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            match fs::read(&path).map(|b| serde_json::from_slice::<Batch>(&b)) {
                Ok(Ok(batch)) => found.push(Entry {
                    seq,
                    batch,
                    volatile: false,
                }),
                Ok(Err(e)) => tracing::warn!(path = %path.display(), error = %e, "unreadable spool entry"),
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "unreadable spool entry"),
            }
        }
        found.sort_by_key(|e| e.seq);
        let next_seq = found.last().map_or(0, |e| e.seq + 1);
        let mut spool = SpoolBuffer {
            dir: Some(dir),
            capacity: capacity.max(1),
            entries: found.into(),
            next_seq,
            fsync: true,
        };
        // A smaller capacity after restart applies immediately.
        while spool.entries.len() > spool.capacity {
            spool.evict_front();
        }
        Ok(spool)
    }

    pub fn with_fsync(mut self, fsync: bool) -> Self {
        self.fsync = fsync;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> usize {
        self.entries.iter().map(|e| e.batch.records.len()).sum()
    }

    pub fn batch_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.batch.batch_id.clone()).collect()
    }

    /// Next sequence number; used to derive unique batch ids.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn path_for(&self, seq: u64) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{seq:020}.{EXT}")))
    }

    fn persist(&self, seq: u64, batch: &Batch) -> io::Result<()> {
        let Some(path) = self.path_for(seq) else {
            return Err(io::Error::other("no spool directory"));
        };
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(batch)?)?;
        if self.fsync {
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        if self.fsync {
            if let Some(d) = &self.dir {
                fs::File::open(d)?.sync_all()?;
            }
        }
        Ok(())
    }

    fn remove_file(&self, entry: &Entry) {
        if entry.volatile {
            return;
        }
        if let Some(path) = self.path_for(entry.seq) {
            if let Err(e) = fs::remove_file(&path) {
                tracing::warn!(path = %path.display(), error = %e, "failed to remove spool entry");
            }
        }
    }

    fn evict_front(&mut self) -> Option<Evicted> {
        let e = self.entries.pop_front()?;
        self.remove_file(&e);
        Some(Evicted {
            batch_id: e.batch.batch_id,
            records: e.batch.records.len(),
        })
    }

    pub fn append(&mut self, batch: Batch) -> AppendReport {
        let seq = self.next_seq;
        self.next_seq += 1;
        let volatile = match &self.dir {
            None => true,
            Some(_) => match self.persist(seq, &batch) {
                Ok(()) => false,
                Err(e) => {
                    tracing::warn!(batch = %batch.batch_id, error = %e, "spool write failed; holding batch in memory");
                    true
                }
            },
        };
        self.entries.push_back(Entry { seq, batch, volatile });
        let mut evicted = Vec::new();
        while self.entries.len() > self.capacity {
            evicted.extend(self.evict_front());
        }
        AppendReport {
            evicted,
            volatile: volatile && self.dir.is_some(),
        }
    }

    pub fn front(&self) -> Option<&Batch> {
        self.entries.front().map(|e| &e.batch)
    }

    /// Removes the oldest batch if its id is `batch_id`.
    pub fn remove_acked(&mut self, batch_id: &str) -> bool {
        match self.entries.front() {
            Some(e) if e.batch.batch_id == batch_id => {
                let e = self.entries.pop_front().expect("front exists");
                self.remove_file(&e);
                true
            }
            _ => false,
        }
    }
}
