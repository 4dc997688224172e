//! Single-node durable message queue.
//!
//! Each topic is an append-only sequence of segment files under
//! `{root}/{topic}/{first_offset:020}.seg`. A segment is a run of frames:
//!
//! ```text
//! [u32 LE payload length][payload bytes][u32 LE CRC32 of payload]
//! ```
//!
//! Consumer groups keep their committed offset (next offset to read) in
//! `{root}/{topic}/offsets/{group}.json` as `{"committed": N}`. Segments are
//! reclaimed only once every registered group has committed past them.

mod broker;
mod error;
pub mod frame;
pub mod http;
mod segment;

pub use broker::{Broker, GroupStats, QueueConfig, QueueMessage, StartPosition, TopicStats};
pub use error::QueueError;

pub type Result<T, E = QueueError> = std::result::Result<T, E>;
