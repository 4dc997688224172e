//! Persistence layer: compressed metric storage with a mini-SQL query
//! front end, an append-only log store and a small metadata store.

pub mod codec;
pub mod http;
pub mod logs;
pub mod meta;
pub mod metrics;
pub mod query;
pub mod segment;
pub mod series;
pub mod sql;

use std::path::PathBuf;
use std::sync::Arc;

use miniops_core::{Clock, EpochMs, Record, RecordBody, SystemClock};
use thiserror::Error;

pub use logs::{LogEvent, LogFilter, LogStore};
pub use meta::MetadataStore;
pub use metrics::{MetricStats, MetricStore, SealInfo, WriteReport};
pub use query::{Aggregate, Query, QueryError, QueryResult, Row};
pub use series::{MetricPoint, SeriesKey};
pub use sql::ParseError;

pub const HOUR_MS: i64 = 3_600_000;
pub const DAY_MS: i64 = 24 * HOUR_MS;

#[derive(Debug, Clone)]
pub struct StoreConfig {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub partition_ms: i64,
    pub lateness_grace_ms: i64,
    pub metric_retention_ms: i64,
    pub log_retention_ms: i64,
    pub fsync: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            data_dir: None,
            partition_ms: HOUR_MS,
            lateness_grace_ms: 5 * 60 * 1000,
            metric_retention_ms: 730 * DAY_MS,
            log_retention_ms: 90 * DAY_MS,
            fsync: true,
        }
    }
}

impl StoreConfig {
    pub fn in_memory() -> Self {
        StoreConfig::default()
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        StoreConfig {
            data_dir: Some(dir.into()),
            ..StoreConfig::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Query(QueryError),
    #[error("corrupt store data: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::segment::SegmentError> for StoreError {
    fn from(e: crate::segment::SegmentError) -> Self {
        StoreError::Corrupt(e.to_string())
    }
}

/// The three stores sharing one data directory.
pub struct Store {
    pub metrics: MetricStore,
    pub logs: LogStore,
    pub meta: MetadataStore,
    clock: Arc<dyn Clock>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct RetentionReport {
    pub metric_partitions: Vec<i64>,
    pub log_partitions: Vec<i64>,
}

impl Store {
    pub fn open(config: StoreConfig) -> Result<Store, StoreError> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: StoreConfig, clock: Arc<dyn Clock>) -> Result<Store, StoreError> {
        let meta = match &config.data_dir {
            Some(d) => MetadataStore::open(&d.join("meta"), config.fsync)?,
            None => MetadataStore::in_memory(),
        };
        Ok(Store {
            metrics: MetricStore::open(config.clone(), clock.clone())?,
            logs: LogStore::open(config)?,
            meta,
            clock,
        })
    }

    pub fn now_ms(&self) -> EpochMs {
        self.clock.now_ms()
    }

    pub fn query_sql(&self, text: &str) -> Result<QueryResult, StoreError> {
        let q = sql::parse(text).map_err(|e| StoreError::Query(e.into()))?;
        self.metrics.query(&q)
    }

    /// Writes pipeline records: metrics become points keyed by name, tags
    /// and server; logs become events carrying the record name as `source`.
    pub fn ingest_records(&self, records: &[Record]) -> Result<WriteReport, StoreError> {
        let mut points = Vec::new();
        let mut events = Vec::new();
        for r in records {
            match &r.body {
                RecordBody::Metric { value } => {
                    let tags = r
                        .tags
                        .iter()
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .chain(std::iter::once(("server".to_string(), r.server.clone())));
                    points.push(MetricPoint::new(SeriesKey::new(r.name.clone(), tags), r.ts, *value));
                }
                RecordBody::Log { level, message } => {
                    let mut fields = r.tags.clone();
                    fields.insert("source".into(), r.name.clone());
                    events.push(LogEvent {
                        ts: r.ts,
                        server: r.server.clone(),
                        level: level.clone(),
                        message: message.clone(),
                        fields,
                    });
                }
            }
        }
        let report = self.metrics.write_points(&points)?;
        self.logs.store_logs(&events)?;
        Ok(report)
    }

    pub fn enforce_retention(&self, now: EpochMs) -> Result<RetentionReport, StoreError> {
        Ok(RetentionReport {
            metric_partitions: self.metrics.enforce_retention(now)?,
            log_partitions: self.logs.enforce_retention(now)?,
        })
    }
}
