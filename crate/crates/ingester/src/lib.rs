//! Receives gzip JSON batches from agents, validates them as a whole,
//! drops duplicates seen within the dedup window, runs per-topic transform
//! hooks and publishes every record to the queue atomically.

pub mod dedup;
pub mod hooks;
pub mod http;
pub mod sink;

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use flate2::read::GzDecoder;
use miniops_core::{Batch, Clock, Record, RecordError, SystemClock};
use miniops_mqueue::Broker;
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use thiserror::Error;

pub use dedup::{Claim, DedupWindow};
pub use hooks::{DropBelow, HookConfig, Retopic, TagEnrichment, TransformHook};
pub use sink::StoreSink;

pub const DEFAULT_DEDUP_HORIZON_MS: i64 = 24 * 3_600_000;
const MAX_BODY_BYTES: u64 = 64 << 20;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bad gzip payload: {0}")]
    Decompress(String),
    #[error(transparent)]
    Batch(#[from] RecordError),
    #[error("batch {0} is already being ingested")]
    InFlight(String),
    #[error("queue unavailable: {0}")]
    Unavailable(String),
    #[error("hook '{hook_id}' produced an invalid record: {reason}")]
    HookOutput { hook_id: String, reason: String },
}

impl IngestError {
    /// Index of the first offending record, when the batch was rejected
    /// because of one.
    pub fn record_index(&self) -> Option<usize> {
        match self {
            IngestError::Batch(RecordError::InvalidRecord { index, .. }) => Some(*index),
            _ => None,
        }
    }

    /// True when the agent should retry the same batch later.
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::InFlight(_) | IngestError::Unavailable(_))
    }
}

#[derive(Debug, Error)]
#[error("topic '{0}' already has a hook")]
pub struct DuplicateHook(pub String);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub acked: String,
    pub duplicate: bool,
    pub published: usize,
    /// Last offset written per topic.
    pub offsets: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub accepted_batches: u64,
    pub duplicate_batches: u64,
    pub rejected_batches: u64,
    pub unavailable_batches: u64,
    pub published_records: u64,
}

#[derive(Default)]
struct Counters {
    accepted: AtomicU64,
    duplicate: AtomicU64,
    rejected: AtomicU64,
    unavailable: AtomicU64,
    published: AtomicU64,
}

pub struct Ingester {
    broker: Arc<Broker>,
    clock: Arc<dyn Clock>,
    hooks: RwLock<HashMap<String, Arc<dyn TransformHook>>>,
    dedup: Mutex<DedupWindow>,
    available: AtomicBool,
    counters: Counters,
}

pub fn gunzip(raw: &[u8]) -> Result<Vec<u8>, IngestError> {
    let mut out = Vec::new();
    GzDecoder::new(raw)
        .take(MAX_BODY_BYTES + 1)
        .read_to_end(&mut out)
        .map_err(|e| IngestError::Decompress(e.to_string()))?;
    if out.len() as u64 > MAX_BODY_BYTES {
        return Err(IngestError::Decompress("decompressed body too large".into()));
    }
    Ok(out)
}

impl Ingester {
    pub fn new(broker: Arc<Broker>) -> Self {
        Self::with_clock(broker, Arc::new(SystemClock), DEFAULT_DEDUP_HORIZON_MS)
    }

    pub fn with_clock(broker: Arc<Broker>, clock: Arc<dyn Clock>, dedup_horizon_ms: i64) -> Self {
        Ingester {
            broker,
            clock,
            hooks: RwLock::new(HashMap::new()),
            dedup: Mutex::new(DedupWindow::new(dedup_horizon_ms)),
            available: AtomicBool::new(true),
            counters: Counters::default(),
        }
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn register_hook(&self, hook: Box<dyn TransformHook>) -> Result<(), DuplicateHook> {
        let mut hooks = self.hooks.write();
        let topic = hook.input_topic().to_string();
        if hooks.contains_key(&topic) {
            return Err(DuplicateHook(topic));
        }
        tracing::info!(hook = hook.hook_id(), topic = %topic, "hook registered");
        hooks.insert(topic, Arc::from(hook));
        Ok(())
    }

    /// Makes every subsequent batch fail as if the queue were down.
    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::SeqCst);
    }

    pub fn is_available(&self) -> bool {
        self.available.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> IngestStats {
        let c = &self.counters;
        IngestStats {
            accepted_batches: c.accepted.load(Ordering::Relaxed),
            duplicate_batches: c.duplicate.load(Ordering::Relaxed),
            rejected_batches: c.rejected.load(Ordering::Relaxed),
            unavailable_batches: c.unavailable.load(Ordering::Relaxed),
            published_records: c.published.load(Ordering::Relaxed),
        }
    }

    /// Entry point for a gzip-compressed JSON batch.
    pub fn receive_batch(&self, raw: &[u8]) -> Result<Ack, IngestError> {
        let body = gunzip(raw).inspect_err(|_| self.count_err_rejected())?;
        self.receive_json(&body)
    }

    pub fn receive_json(&self, body: &[u8]) -> Result<Ack, IngestError> {
        let batch = Batch::from_json_slice(body).inspect_err(|_| self.count_err_rejected())?;
        self.receive(batch)
    }

    fn count_err_rejected(&self) {
        self.counters.rejected.fetch_add(1, Ordering::Relaxed);
    }

    /// Ingests an already decoded batch. Records are re-checked here so this
    /// path enforces the same contract as the wire path.
    pub fn receive(&self, batch: Batch) -> Result<Ack, IngestError> {
        let result = self.receive_inner(batch);
        let c = &self.counters;
        match &result {
            Ok(ack) if ack.duplicate => c.duplicate.fetch_add(1, Ordering::Relaxed),
            Ok(ack) => {
                c.published.fetch_add(ack.published as u64, Ordering::Relaxed);
                c.accepted.fetch_add(1, Ordering::Relaxed)
            }
            Err(e) if e.is_retryable() => c.unavailable.fetch_add(1, Ordering::Relaxed),
            Err(_) => c.rejected.fetch_add(1, Ordering::Relaxed),
        };
        result
    }

    fn receive_inner(&self, batch: Batch) -> Result<Ack, IngestError> {
        if batch.records.is_empty() {
            return Err(RecordError::Empty.into());
        }
        for (index, r) in batch.records.iter().enumerate() {
            r.check()
                .map_err(|reason| RecordError::InvalidRecord { index, reason })?;
        }
        if !self.is_available() {
            return Err(IngestError::Unavailable("ingester paused".into()));
        }
        let id = batch.batch_id.clone();
        match self.dedup.lock().claim(&id, self.clock.now_ms()) {
            Claim::Claimed => {}
            Claim::Duplicate => {
                return Ok(Ack {
                    acked: id,
                    duplicate: true,
                    published: 0,
                    offsets: BTreeMap::new(),
                })
            }
            Claim::InFlight => return Err(IngestError::InFlight(id)),
        }
        match self.publish(batch.records) {
            Ok((published, offsets)) => {
                self.dedup.lock().complete(&id, self.clock.now_ms());
                Ok(Ack {
                    acked: id,
                    duplicate: false,
                    published,
                    offsets,
                })
            }
            Err(e) => {
                self.dedup.lock().abandon(&id);
                Err(e)
            }
        }
    }

    /// Runs hooks and groups the resulting records by topic, keeping batch
    /// order within each topic.
    pub fn transform(&self, records: Vec<Record>) -> Result<Vec<(String, Vec<Record>)>, IngestError> {
        let mut by_input: Vec<(String, Vec<Record>)> = Vec::new();
        for r in records {
            match by_input.iter_mut().find(|(t, _)| *t == r.topic) {
                Some((_, v)) => v.push(r),
                None => by_input.push((r.topic.clone(), vec![r])),
            }
        }
        let hooks = self.hooks.read().clone();
        let mut out: Vec<(String, Vec<Record>)> = Vec::new();
        for (topic, recs) in by_input {
            let produced = match hooks.get(&topic) {
                Some(h) => {
                    let produced = h.apply(recs);
                    for r in &produced {
                        r.check().map_err(|reason| IngestError::HookOutput {
                            hook_id: h.hook_id().to_string(),
                            reason,
                        })?;
                    }
                    produced
                }
                None => recs,
            };
            for r in produced {
                match out.iter_mut().find(|(t, _)| *t == r.topic) {
                    Some((_, v)) => v.push(r),
                    None => out.push((r.topic.clone(), vec![r])),
                }
            }
        }
        Ok(out)
    }

    fn publish(&self, records: Vec<Record>) -> Result<(usize, BTreeMap<String, u64>), IngestError> {
        let grouped = self.transform(records)?;
        let mut payloads: Vec<(String, Vec<Vec<u8>>)> = Vec::with_capacity(grouped.len());
        let mut count = 0;
        for (topic, recs) in grouped {
            count += recs.len();
            let encoded = recs
                .iter()
                .map(|r| serde_json::to_vec(r).expect("record serializes"))
                .collect();
            payloads.push((topic, encoded));
        }
        if count == 0 {
            return Ok((0, BTreeMap::new()));
        }
        let offsets = self
            .broker
            .publish_atomic(&payloads)
            .map_err(|e| IngestError::Unavailable(e.to_string()))?;
        Ok((count, offsets))
    }
}
