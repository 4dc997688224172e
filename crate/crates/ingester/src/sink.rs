//! Consumer group that drains record topics into the store.
//!
//! Offsets are committed only after the store accepted the records, so a
//! crash between the two replays messages. Metric writes are last-write-wins
//! per (series, ts), which makes the replay invisible for metrics.

use std::collections::HashSet;
use std::sync::Arc;

use miniops_core::Record;
use miniops_mqueue::{Broker, QueueError, StartPosition};
use miniops_tsstore::{Store, StoreError};
use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

pub const STORE_GROUP: &str = "tsstore-writer";

#[derive(Debug, Error)]
pub enum SinkError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PumpReport {
    pub messages: usize,
    pub metric_points: usize,
    pub log_events: usize,
    /// Payloads that were not records; skipped and committed past.
    pub undecodable: usize,
}

pub struct StoreSink {
    broker: Arc<Broker>,
    store: Arc<Store>,
    group: String,
    only: Option<HashSet<String>>,
    joined: Mutex<HashSet<String>>,
}

impl StoreSink {
    /// Consumes every topic present on the broker.
    pub fn new(broker: Arc<Broker>, store: Arc<Store>) -> Self {
        StoreSink {
            broker,
            store,
            group: STORE_GROUP.to_string(),
            only: None,
            joined: Mutex::new(HashSet::new()),
        }
    }

    pub fn only_topics<I: IntoIterator<Item = S>, S: Into<String>>(mut self, topics: I) -> Self {
        self.only = Some(topics.into_iter().map(Into::into).collect());
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    fn join(&self, topic: &str) -> Result<(), SinkError> {
        if self.joined.lock().contains(topic) {
            return Ok(());
        }
        match self.broker.register_group(&self.group, topic, StartPosition::Earliest) {
            Ok(_) | Err(QueueError::DuplicateGroup { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        self.joined.lock().insert(topic.to_string());
        Ok(())
    }

    /// Joins topics that appeared since the last call so their retention
    /// floor includes this group.
    pub fn join_topics(&self) -> Result<(), SinkError> {
        for topic in self.broker.topics() {
            if self.only.as_ref().is_none_or(|o| o.contains(&topic)) {
                self.join(&topic)?;
            }
        }
        Ok(())
    }

    /// Drains up to `max_per_topic` messages from each topic.
    pub fn pump(&self, max_per_topic: usize) -> Result<PumpReport, SinkError> {
        self.join_topics()?;
        let mut report = PumpReport::default();
        let topics: Vec<String> = self.joined.lock().iter().cloned().collect();
        for topic in topics {
            let msgs = self.broker.poll(&self.group, &topic, max_per_topic)?;
            let Some(last) = msgs.last().map(|m| m.offset) else {
                continue;
            };
            let mut records = Vec::with_capacity(msgs.len());
            for m in &msgs {
                match serde_json::from_slice::<Record>(&m.payload) {
                    Ok(r) if r.check().is_ok() => records.push(r),
                    _ => report.undecodable += 1,
                }
            }
            report.messages += msgs.len();
            report.metric_points += records.iter().filter(|r| r.is_metric()).count();
            report.log_events += records.iter().filter(|r| !r.is_metric()).count();
            self.store.ingest_records(&records)?;
            self.broker.commit(&self.group, &topic, last + 1)?;
        }
        Ok(report)
    }

    /// Pumps until every joined topic is fully consumed.
    pub fn drain(&self) -> Result<PumpReport, SinkError> {
        let mut total = PumpReport::default();
        loop {
            let r = self.pump(4096)?;
            if r.messages == 0 {
                return Ok(total);
            }
            total.messages += r.messages;
            total.metric_points += r.metric_points;
            total.log_events += r.log_events;
            total.undecodable += r.undecodable;
        }
    }

    /// Total messages not yet consumed by this group.
    pub fn lag(&self) -> u64 {
        self.broker
            .stats()
            .iter()
            .flat_map(|t| t.groups.iter())
            .filter(|g| g.group == self.group)
            .map(|g| g.lag)
            .sum()
    }
}
