use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use miniops_core::{is_valid_topic, Clock, EpochMs, SystemClock};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::frame;
use crate::segment::{parse_segment_file_name, sync_dir, Segment};
use crate::{QueueError, Result};

pub const DEFAULT_SEGMENT_BYTES: u64 = 8 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct QueueConfig {
    /// Roll to a new segment once the active one would exceed this size.
    pub segment_bytes: u64,
    /// Minimum age (since last append) before a segment may be trimmed.
    pub retention_floor_ms: i64,
    /// Total bytes across all segments; publishes beyond it fail with `StorageFull`.
    pub max_bytes: Option<u64>,
    pub fsync: bool,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            segment_bytes: DEFAULT_SEGMENT_BYTES,
            retention_floor_ms: 0,
            max_bytes: None,
            fsync: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPosition {
    Earliest,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueMessage {
    pub topic: String,
    pub offset: u64,
    pub payload: Vec<u8>,
    pub enqueued_at: EpochMs,
    pub crc: u32,
}

impl QueueMessage {
    pub fn crc_valid(&self) -> bool {
        frame::checksum(&self.payload) == self.crc
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub committed: u64,
    pub lag: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicStats {
    pub topic: String,
    pub start: u64,
    pub head: u64,
    pub segments: usize,
    pub groups: Vec<GroupStats>,
}

#[derive(Serialize, Deserialize)]
struct CommitFile {
    committed: u64,
}

struct TopicLog {
    /// Never empty: the last segment is the active one.
    segments: Vec<Segment>,
}

impl TopicLog {
    fn start(&self) -> u64 {
        self.segments[0].first_offset
    }

    fn head(&self) -> u64 {
        self.segments.last().map_or(0, Segment::next_offset)
    }

    fn segment_for(&self, offset: u64) -> &Segment {
        let idx = self
            .segments
            .partition_point(|s| s.first_offset <= offset)
            .saturating_sub(1);
        &self.segments[idx]
    }
}

struct Topic {
    name: String,
    dir: PathBuf,
    log: RwLock<TopicLog>,
    groups: Mutex<BTreeMap<String, u64>>,
}

impl Topic {
    fn offsets_dir(&self) -> PathBuf {
        self.dir.join("offsets")
    }

    fn write_commit(&self, group: &str, committed: u64) -> Result<()> {
        let dir = self.offsets_dir();
        let tmp = dir.join(format!("{group}.json.tmp"));
        let dst = dir.join(format!("{group}.json"));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(&CommitFile { committed }).map_err(std::io::Error::other)?)?;
        f.sync_all()?;
        fs::rename(&tmp, &dst)?;
        sync_dir(&dir)?;
        Ok(())
    }
}

/// Durable, multi-topic, multi-group log broker rooted at one directory.
pub struct Broker {
    root: PathBuf,
    config: QueueConfig,
    clock: Arc<dyn Clock>,
    topics: RwLock<BTreeMap<String, Arc<Topic>>>,
    used_bytes: AtomicU64,
}

fn is_valid_group(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

/// Position to roll back to if a multi-frame append fails part way.
struct Mark {
    segments: usize,
    last_count: usize,
    last_size: u64,
}

impl Broker {
    pub fn open(root: impl AsRef<Path>, config: QueueConfig) -> Result<Broker> {
        Self::open_with_clock(root, config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(
        root: impl AsRef<Path>,
        config: QueueConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Broker> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut topics = BTreeMap::new();
        let mut used = 0u64;
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !entry.file_type()?.is_dir() || !is_valid_topic(&name) {
                continue;
            }
            let topic = Self::recover_topic(&entry.path(), &name, clock.now_ms())?;
            used += topic.log.read().segments.iter().map(|s| s.size).sum::<u64>();
            topics.insert(name, Arc::new(topic));
        }
        Ok(Broker {
            root,
            config,
            clock,
            topics: RwLock::new(topics),
            used_bytes: AtomicU64::new(used),
        })
    }

    fn recover_topic(dir: &Path, name: &str, now: EpochMs) -> Result<Topic> {
        let mut firsts: Vec<u64> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| parse_segment_file_name(&e.file_name().to_string_lossy()))
            .collect();
        firsts.sort_unstable();
        let mut segments = Vec::with_capacity(firsts.len().max(1));
        for (i, first) in firsts.iter().enumerate() {
            let path = dir.join(crate::segment::segment_file_name(*first));
            let seg = Segment::open(path, *first, i + 1 == firsts.len())?;
            if let Some(prev) = segments.last() {
                let prev: &Segment = prev;
                if prev.next_offset() != seg.first_offset {
                    return Err(QueueError::Corrupt {
                        path: seg.path.display().to_string(),
                        reason: format!(
                            "offset gap: previous segment ends at {}, next starts at {}",
                            prev.next_offset(),
                            seg.first_offset
                        ),
                    });
                }
            }
            segments.push(seg);
        }
        if segments.is_empty() {
            segments.push(Segment::create(dir, 0, now)?);
        }
        let offsets_dir = dir.join("offsets");
        fs::create_dir_all(&offsets_dir)?;
        let mut groups = BTreeMap::new();
        for entry in fs::read_dir(&offsets_dir)? {
            let entry = entry?;
            let fname = entry.file_name().to_string_lossy().into_owned();
            let Some(group) = fname.strip_suffix(".json") else {
                continue;
            };
            let bytes = fs::read(entry.path())?;
            let commit: CommitFile =
                serde_json::from_slice(&bytes).map_err(|e| QueueError::Corrupt {
                    path: entry.path().display().to_string(),
                    reason: e.to_string(),
                })?;
            groups.insert(group.to_string(), commit.committed);
        }
        Ok(Topic {
            name: name.to_string(),
            dir: dir.to_path_buf(),
            log: RwLock::new(TopicLog { segments }),
            groups: Mutex::new(groups),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &QueueConfig {
        &self.config
    }

    fn topic(&self, name: &str) -> Option<Arc<Topic>> {
        self.topics.read().get(name).cloned()
    }

    fn topic_or_create(&self, name: &str) -> Result<Arc<Topic>> {
        if !is_valid_topic(name) {
            return Err(QueueError::InvalidTopic(name.to_string()));
        }
        if let Some(t) = self.topic(name) {
            return Ok(t);
        }
        let mut topics = self.topics.write();
        if let Some(t) = topics.get(name) {
            return Ok(t.clone());
        }
        let dir = self.root.join(name);
        fs::create_dir_all(dir.join("offsets"))?;
        let first = Segment::create(&dir, 0, self.clock.now_ms())?;
        sync_dir(&self.root)?;
        let topic = Arc::new(Topic {
            name: name.to_string(),
            dir,
            log: RwLock::new(TopicLog {
                segments: vec![first],
            }),
            groups: Mutex::new(BTreeMap::new()),
        });
        topics.insert(name.to_string(), topic.clone());
        Ok(topic)
    }

    pub fn topics(&self) -> Vec<String> {
        self.topics.read().keys().cloned().collect()
    }

    pub fn head(&self, topic: &str) -> u64 {
        self.topic(topic).map_or(0, |t| t.log.read().head())
    }

    /// First offset still stored for the topic.
    pub fn start(&self, topic: &str) -> u64 {
        self.topic(topic).map_or(0, |t| t.log.read().start())
    }

    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<u64> {
        let (first, _) = self.publish_batch(topic, &[payload])?;
        Ok(first)
    }

    /// Appends all payloads with one flush; returns (first, last) offsets.
    /// On failure nothing from the batch remains in the log.
    pub fn publish_batch<P: AsRef<[u8]>>(&self, topic: &str, payloads: &[P]) -> Result<(u64, u64)> {
        let t = self.topic_or_create(topic)?;
        let mut log = t.log.write();
        let mark = Self::mark(&log);
        match self.append_locked(&t.dir, &mut log, payloads) {
            Ok(range) => Ok(range),
            Err(e) => {
                self.rollback(&mut log, &mark);
                Err(e)
            }
        }
    }

    /// Publishes records to several topics so that either every topic
    /// receives its payloads or none does. Returns the last offset per topic.
    pub fn publish_atomic<P: AsRef<[u8]>>(
        &self,
        groups: &[(String, Vec<P>)],
    ) -> Result<BTreeMap<String, u64>> {
        let mut by_topic: BTreeMap<&str, Vec<&[u8]>> = BTreeMap::new();
        for (topic, payloads) in groups {
            by_topic
                .entry(topic.as_str())
                .or_default()
                .extend(payloads.iter().map(AsRef::as_ref));
        }
        by_topic.retain(|_, v| !v.is_empty());
        let topics: Vec<Arc<Topic>> = by_topic
            .keys()
            .map(|name| self.topic_or_create(name))
            .collect::<Result<_>>()?;
        // Locks are taken in topic-name order.
        let mut guards: Vec<_> = topics.iter().map(|t| t.log.write()).collect();
        let marks: Vec<Mark> = guards.iter().map(|g| Self::mark(g)).collect();
        let mut out = BTreeMap::new();
        for (i, (name, payloads)) in by_topic.iter().enumerate() {
            match self.append_locked(&topics[i].dir, &mut guards[i], payloads) {
                Ok((_, last)) => {
                    out.insert(name.to_string(), last);
                }
                Err(e) => {
                    for (g, m) in guards.iter_mut().zip(&marks).take(i + 1) {
                        self.rollback(g, m);
                    }
                    return Err(e);
                }
            }
        }
        Ok(out)
    }

    fn mark(log: &TopicLog) -> Mark {
        let last = log.segments.last().expect("topic has an active segment");
        Mark {
            segments: log.segments.len(),
            last_count: last.count() as usize,
            last_size: last.size,
        }
    }

    fn rollback(&self, log: &mut TopicLog, mark: &Mark) {
        while log.segments.len() > mark.segments {
            let seg = log.segments.pop().expect("non-empty");
            self.used_bytes.fetch_sub(seg.size, Ordering::SeqCst);
            let _ = fs::remove_file(&seg.path);
        }
        if let Some(last) = log.segments.last_mut() {
            let grown = last.size.saturating_sub(mark.last_size);
            if let Err(e) = last.truncate_to(mark.last_count).and_then(|_| last.sync()) {
                tracing::error!(error = %e, path = %last.path.display(), "rollback truncate failed");
            }
            self.used_bytes.fetch_sub(grown, Ordering::SeqCst);
        }
    }

    fn append_locked<P: AsRef<[u8]>>(
        &self,
        dir: &Path,
        log: &mut TopicLog,
        payloads: &[P],
    ) -> Result<(u64, u64)> {
        if payloads.is_empty() {
            let head = log.head();
            return Ok((head, head.saturating_sub(1)));
        }
        let now = self.clock.now_ms();
        let first_offset = log.head();
        let total: u64 = payloads
            .iter()
            .map(|p| frame::frame_len(p.as_ref().len()) as u64)
            .sum();
        if let Some(limit) = self.config.max_bytes {
            let used = self.used_bytes.load(Ordering::SeqCst);
            if used + total > limit {
                return Err(QueueError::StorageFull { used, limit });
            }
        }
        let mut buf = Vec::new();
        let mut lens = Vec::new();
        let mut touched_from = log.segments.len() - 1;
        for p in payloads {
            let p = p.as_ref();
            let flen = frame::frame_len(p.len());
            let active = log.segments.last().expect("active segment");
            let pending: u64 = buf.len() as u64;
            if active.size + pending > 0 && active.size + pending + flen as u64 > self.config.segment_bytes {
                if !buf.is_empty() {
                    log.segments
                        .last_mut()
                        .expect("active segment")
                        .append(&buf, &lens, now)?;
                    self.used_bytes.fetch_add(buf.len() as u64, Ordering::SeqCst);
                    buf.clear();
                    lens.clear();
                }
                let next = log.head();
                if self.config.fsync {
                    log.segments.last().expect("active segment").sync()?;
                }
                log.segments.push(Segment::create(dir, next, now)?);
                touched_from = touched_from.min(log.segments.len() - 1);
            }
            let before = buf.len();
            frame::encode_into(&mut buf, p);
            lens.push(buf.len() - before);
        }
        if !buf.is_empty() {
            log.segments
                .last_mut()
                .expect("active segment")
                .append(&buf, &lens, now)?;
            self.used_bytes.fetch_add(buf.len() as u64, Ordering::SeqCst);
        }
        if self.config.fsync {
            for seg in &log.segments[touched_from..] {
                seg.sync()?;
            }
        }
        Ok((first_offset, log.head() - 1))
    }

    pub fn register_group(&self, group: &str, topic: &str, start: StartPosition) -> Result<u64> {
        if !is_valid_group(group) {
            return Err(QueueError::InvalidGroup(group.to_string()));
        }
        let t = self.topic_or_create(topic)?;
        // Holding the log lock keeps trim from racing the new registration.
        let log = t.log.read();
        let mut groups = t.groups.lock();
        if groups.contains_key(group) {
            return Err(QueueError::DuplicateGroup {
                group: group.to_string(),
                topic: topic.to_string(),
            });
        }
        let committed = match start {
            StartPosition::Earliest => log.start(),
            StartPosition::Head => log.head(),
        };
        t.write_commit(group, committed)?;
        groups.insert(group.to_string(), committed);
        Ok(committed)
    }

    fn unknown_group(group: &str, topic: &str) -> QueueError {
        QueueError::UnknownGroup {
            group: group.to_string(),
            topic: topic.to_string(),
        }
    }

    pub fn committed(&self, group: &str, topic: &str) -> Result<u64> {
        let t = self.topic(topic).ok_or_else(|| Self::unknown_group(group, topic))?;
        let committed = t.groups.lock().get(group).copied();
        committed.ok_or_else(|| Self::unknown_group(group, topic))
    }

    /// Messages from the group's committed offset onward. Does not commit.
    pub fn poll(&self, group: &str, topic: &str, max_messages: usize) -> Result<Vec<QueueMessage>> {
        let t = self.topic(topic).ok_or_else(|| Self::unknown_group(group, topic))?;
        let committed = t
            .groups
            .lock()
            .get(group)
            .copied()
            .ok_or_else(|| Self::unknown_group(group, topic))?;
        Self::read_locked(&t, committed, max_messages)
    }

    /// Reads directly by offset, independent of any group.
    pub fn read_from(&self, topic: &str, offset: u64, max_messages: usize) -> Result<Vec<QueueMessage>> {
        match self.topic(topic) {
            Some(t) => Self::read_locked(&t, offset, max_messages),
            None => Ok(Vec::new()),
        }
    }

    fn read_locked(t: &Topic, from: u64, max_messages: usize) -> Result<Vec<QueueMessage>> {
        let log = t.log.read();
        let from = from.max(log.start());
        let to = log.head().min(from.saturating_add(max_messages as u64));
        let mut out = Vec::with_capacity((to.saturating_sub(from)) as usize);
        for offset in from..to {
            let (payload, crc, enqueued_at) = log.segment_for(offset).read(offset)?;
            out.push(QueueMessage {
                topic: t.name.clone(),
                offset,
                payload,
                enqueued_at,
                crc,
            });
        }
        Ok(out)
    }

    /// Advances the group's cursor to `max(previous, offset)` durably.
    pub fn commit(&self, group: &str, topic: &str, offset: u64) -> Result<u64> {
        let t = self.topic(topic).ok_or_else(|| Self::unknown_group(group, topic))?;
        let head = t.log.read().head();
        if offset > head {
            return Err(QueueError::OffsetBeyondHead { offset, head });
        }
        let mut groups = t.groups.lock();
        let current = groups
            .get_mut(group)
            .ok_or_else(|| Self::unknown_group(group, topic))?;
        if offset > *current {
            t.write_commit(group, offset)?;
            *current = offset;
        }
        Ok(*current)
    }

    /// Deletes segments every group has consumed and that have aged past the
    /// retention floor. The active segment is never deleted.
    pub fn trim(&self, topic: &str) -> Result<usize> {
        let Some(t) = self.topic(topic) else {
            return Ok(0);
        };
        let now = self.clock.now_ms();
        let mut log = t.log.write();
        let min_committed = match t.groups.lock().values().min() {
            Some(m) => *m,
            None => return Ok(0),
        };
        let mut removable = 0;
        for seg in &log.segments[..log.segments.len() - 1] {
            let fully_consumed = seg.last_offset().map_or(true, |last| last < min_committed);
            let aged = now - seg.last_append_ms >= self.config.retention_floor_ms;
            if !(fully_consumed && aged) {
                break;
            }
            removable += 1;
        }
        for seg in log.segments.drain(..removable) {
            fs::remove_file(&seg.path)?;
            self.used_bytes.fetch_sub(seg.size, Ordering::SeqCst);
        }
        if removable > 0 {
            sync_dir(&t.dir)?;
        }
        Ok(removable)
    }

    pub fn trim_all(&self) -> Result<usize> {
        let mut n = 0;
        for topic in self.topics() {
            n += self.trim(&topic)?;
        }
        Ok(n)
    }

    pub fn stats(&self) -> Vec<TopicStats> {
        let topics: Vec<Arc<Topic>> = self.topics.read().values().cloned().collect();
        topics
            .iter()
            .map(|t| {
                let log = t.log.read();
                let head = log.head();
                let groups = t
                    .groups
                    .lock()
                    .iter()
                    .map(|(g, c)| GroupStats {
                        group: g.clone(),
                        committed: *c,
                        lag: head.saturating_sub(*c),
                    })
                    .collect();
                TopicStats {
                    topic: t.name.clone(),
                    start: log.start(),
                    head,
                    segments: log.segments.len(),
                    groups,
                }
            })
            .collect()
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes.load(Ordering::SeqCst)
    }
}
