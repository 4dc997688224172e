//! Append-only log-event store, partitioned by time like the metric store.
//! Each partition persists as `logs/{start:020}.jsonl`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use miniops_core::EpochMs;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::{StoreConfig, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub ts: EpochMs,
    pub server: String,
    pub level: String,
    pub message: String,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogFilter {
    #[serde(default)]
    pub level: Option<String>,
    #[serde(default)]
    pub server: Option<String>,
    /// Case-sensitive substring of the message.
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub from: Option<EpochMs>,
    #[serde(default)]
    pub to: Option<EpochMs>,
}

impl LogFilter {
    pub fn matches(&self, e: &LogEvent) -> bool {
        self.level.as_ref().map_or(true, |l| &e.level == l)
            && self.server.as_ref().map_or(true, |s| &e.server == s)
            && self.contains.as_ref().map_or(true, |c| e.message.contains(c.as_str()))
            && self.from.map_or(true, |f| e.ts >= f)
            && self.to.map_or(true, |t| e.ts < t)
    }
}

#[derive(Default)]
struct LogPartition {
    events: Vec<LogEvent>,
    file: Option<File>,
}

pub struct LogStore {
    config: StoreConfig,
    partitions: RwLock<BTreeMap<i64, LogPartition>>,
}

impl LogStore {
    pub(crate) fn open(config: StoreConfig) -> Result<Self, StoreError> {
        let store = LogStore {
            config,
            partitions: RwLock::new(BTreeMap::new()),
        };
        if let Some(dir) = store.dir() {
            fs::create_dir_all(&dir)?;
            let mut parts = store.partitions.write();
            for entry in fs::read_dir(&dir)? {
                let entry = entry?;
                let name = entry.file_name().to_string_lossy().into_owned();
                let Some(start) = name.strip_suffix(".jsonl").and_then(|s| s.parse::<i64>().ok()) else {
                    continue;
                };
                let mut events = Vec::new();
                for line in BufReader::new(File::open(entry.path())?).lines() {
                    let line = line?;
                    match serde_json::from_str::<LogEvent>(&line) {
                        Ok(e) => events.push(e),
                        // A torn final line from a crash mid-append.
                        Err(_) => tracing::warn!(file = %name, "skipping unreadable log line"),
                    }
                }
                parts.insert(start, LogPartition { events, file: None });
            }
        }
        Ok(store)
    }

    fn dir(&self) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join("logs"))
    }

    fn partition_start(&self, ts: i64) -> i64 {
        ts.div_euclid(self.config.partition_ms) * self.config.partition_ms
    }

    /// Appends events. Events with an empty message are rejected; the count
    /// of stored events is returned.
    pub fn store_logs(&self, events: &[LogEvent]) -> Result<usize, StoreError> {
        let mut grouped: HashMap<i64, Vec<&LogEvent>> = HashMap::new();
        for e in events.iter().filter(|e| !e.message.is_empty()) {
            grouped.entry(self.partition_start(e.ts)).or_default().push(e);
        }
        let mut stored = 0;
        let mut parts = self.partitions.write();
        for (start, evs) in grouped {
            let part = parts.entry(start).or_default();
            if let Some(dir) = self.dir() {
                if part.file.is_none() {
                    part.file = Some(
                        OpenOptions::new()
                            .create(true)
                            .append(true)
                            .open(dir.join(format!("{start:020}.jsonl")))?,
                    );
                }
                let mut buf = Vec::new();
                for e in &evs {
                    serde_json::to_writer(&mut buf, e).map_err(std::io::Error::other)?;
                    buf.push(b'\n');
                }
                let f = part.file.as_mut().expect("log file opened");
                f.write_all(&buf)?;
                if self.config.fsync {
                    f.sync_data()?;
                }
            }
            stored += evs.len();
            part.events.extend(evs.into_iter().cloned());
        }
        Ok(stored)
    }

    /// Matching events ordered by timestamp, insertion order within ties.
    pub fn query_logs(&self, filter: &LogFilter) -> Vec<LogEvent> {
        let parts = self.partitions.read();
        let lo = filter.from.map(|f| self.partition_start(f)).unwrap_or(i64::MIN);
        let hi = filter.to.unwrap_or(i64::MAX);
        let mut out: Vec<LogEvent> = parts
            .range(lo..=hi.max(lo))
            .flat_map(|(_, p)| p.events.iter())
            .filter(|e| filter.matches(e))
            .cloned()
            .collect();
        out.sort_by_key(|e| e.ts);
        out
    }

    pub fn enforce_retention(&self, now: EpochMs) -> Result<Vec<i64>, StoreError> {
        let floor = now.saturating_sub(self.config.log_retention_ms);
        let mut parts = self.partitions.write();
        let dropped: Vec<i64> = parts
            .keys()
            .copied()
            .filter(|s| s + self.config.partition_ms <= floor)
            .collect();
        for s in &dropped {
            parts.remove(s);
            if let Some(dir) = self.dir() {
                let path = dir.join(format!("{s:020}.jsonl"));
                if path.exists() {
                    fs::remove_file(path)?;
                }
            }
        }
        Ok(dropped)
    }

    pub fn len(&self) -> usize {
        self.partitions.read().values().map(|p| p.events.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
