//! Types shared by every stage of the miniops pipeline: the records agents
//! produce, the batches they ship, collection task definitions, attribute
//! selectors, severities and clocks.

pub mod clock;
pub mod record;
pub mod selector;
pub mod severity;
pub mod task;

pub use clock::{Clock, ManualClock, SystemClock};
pub use record::{Batch, Record, RecordBody, RecordError};
pub use selector::{Lookup, Op, Predicate, Selector, SelectorError};
pub use severity::Severity;
pub use task::{
    CollectionTask, ExecutionLog, HttpMethod, Outcome, OutputKind, ParseMode, Schedule, TaskError,
    TaskKind, TaskSet, TaskSpec,
};

/// Milliseconds since the Unix epoch.
pub type EpochMs = i64;

pub const MS_PER_DAY: f64 = 86_400_000.0;

/// Topic names accepted by the queue: `[a-z0-9._-]+`.
pub fn is_valid_topic(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'.' | b'_' | b'-'))
}
