//! Collection agent: runs scheduled tasks, spools their output as batches
//! on local disk and delivers them to the ingester with retry.

pub mod collect;
pub mod config;
pub mod runtime;
pub mod schedule;
pub mod spool;
pub mod transport;

pub use collect::{builtin, parse_output, run_task, Collector, HostCollector, Outcome, TaskResult};
pub use config::{apply_config, ApplyOutcome, ControlPlaneClient, Registration, TaskSet};
pub use runtime::{Agent, AgentLedger, TickReport};
pub use schedule::{jitter_offset_ms, Scheduler};
pub use spool::{AppendReport, Evicted, SpoolBuffer};
pub use transport::{
    flush, gzip_json, Backoff, BackoffPolicy, DeliveryReport, HttpTransport, SendError, Transport,
};
