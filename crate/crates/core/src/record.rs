//! Wire representation of the records carried from agents to the queue.
//!
//! A batch travels as gzip-compressed JSON:
//!
//! ```text
//! {"batch_id": "...", "agent_id": "...", "sent_at": 1700000000000,
//!  "records": [{"topic": "metrics", "kind": "metric", "server": "s1",
//!               "name": "cpu.load", "ts": 1700000000000, "value": 0.5,
//!               "tags": {"core": "0"}}]}
//! ```
//!
//! Log records carry `level` and `message` instead of `value`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::{is_valid_topic, EpochMs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RecordBody {
    Metric { value: f64 },
    Log { level: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub topic: String,
    #[serde(flatten)]
    pub body: RecordBody,
    pub server: String,
    pub name: String,
    pub ts: EpochMs,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl Record {
    pub fn metric(
        topic: impl Into<String>,
        server: impl Into<String>,
        name: impl Into<String>,
        ts: EpochMs,
        value: f64,
    ) -> Self {
        Record {
            topic: topic.into(),
            body: RecordBody::Metric { value },
            server: server.into(),
            name: name.into(),
            ts,
            tags: BTreeMap::new(),
        }
    }

    pub fn log(
        topic: impl Into<String>,
        server: impl Into<String>,
        name: impl Into<String>,
        ts: EpochMs,
        level: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Record {
            topic: topic.into(),
            body: RecordBody::Log {
                level: level.into(),
                message: message.into(),
            },
            server: server.into(),
            name: name.into(),
            ts,
            tags: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(key.into(), value.into());
        self
    }

    pub fn value(&self) -> Option<f64> {
        match self.body {
            RecordBody::Metric { value } => Some(value),
            RecordBody::Log { .. } => None,
        }
    }

    pub fn is_metric(&self) -> bool {
        matches!(self.body, RecordBody::Metric { .. })
    }

    /// Semantic checks beyond what the JSON shape enforces.
    pub fn check(&self) -> Result<(), String> {
        if !is_valid_topic(&self.topic) {
            return Err(format!("invalid topic '{}'", self.topic));
        }
        if self.server.is_empty() {
            return Err("empty server".into());
        }
        if self.name.is_empty() {
            return Err("empty name".into());
        }
        match &self.body {
            RecordBody::Metric { value } if !value.is_finite() => Err("non-finite value".into()),
            RecordBody::Log { message, .. } if message.is_empty() => {
                Err("empty log message".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: String,
    pub agent_id: String,
    pub sent_at: EpochMs,
    pub records: Vec<Record>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("malformed batch: {0}")]
    Malformed(String),
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("batch has no records")]
    Empty,
}

impl Batch {
    /// Decodes and validates a batch from JSON bytes, reporting the first
    /// offending record by index.
    pub fn from_json_slice(bytes: &[u8]) -> Result<Batch, RecordError> {
        let value: Value =
            serde_json::from_slice(bytes).map_err(|e| RecordError::Malformed(e.to_string()))?;
        Self::from_json_value(value)
    }

    pub fn from_json_value(mut value: Value) -> Result<Batch, RecordError> {
        let obj = value
            .as_object_mut()
            .ok_or_else(|| RecordError::Malformed("batch is not an object".into()))?;
        let take_str = |obj: &mut serde_json::Map<String, Value>, key: &str| match obj.remove(key) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(RecordError::Malformed(format!("'{key}' must be a string"))),
            None => Err(RecordError::Malformed(format!("missing '{key}'"))),
        };
        let batch_id = take_str(obj, "batch_id")?;
        let agent_id = take_str(obj, "agent_id")?;
        if batch_id.is_empty() {
            return Err(RecordError::Malformed("empty batch_id".into()));
        }
        let sent_at = obj
            .get("sent_at")
            .and_then(Value::as_i64)
            .ok_or_else(|| RecordError::Malformed("'sent_at' must be an integer".into()))?;
        let raw = match obj.remove("records") {
            Some(Value::Array(items)) => items,
            Some(_) => return Err(RecordError::Malformed("'records' must be an array".into())),
            None => return Err(RecordError::Malformed("missing 'records'".into())),
        };
        if raw.is_empty() {
            return Err(RecordError::Empty);
        }
        let mut records = Vec::with_capacity(raw.len());
        for (index, item) in raw.into_iter().enumerate() {
            let record: Record =
                serde_json::from_value(item).map_err(|e| RecordError::InvalidRecord {
                    index,
                    reason: e.to_string(),
                })?;
            record
                .check()
                .map_err(|reason| RecordError::InvalidRecord { index, reason })?;
            records.push(record);
        }
        Ok(Batch {
            batch_id,
            agent_id,
            sent_at,
            records,
        })
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }
}
