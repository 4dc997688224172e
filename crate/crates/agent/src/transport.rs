//! Delivery of spooled batches to the ingester.

use std::io::Write;
use std::time::Duration;

use flate2::write::GzEncoder;
use flate2::Compression;
use miniops_core::{Batch, EpochMs};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spool::SpoolBuffer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SendError {
    /// Network failure or 5xx; the batch should be retried.
    #[error("ingester unavailable: {0}")]
    Unavailable(String),
    /// The ingester refused the batch permanently.
    #[error("batch rejected ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("acknowledgment for '{got}' does not match batch '{expected}'")]
    AckMismatch { expected: String, got: String },
}

pub trait Transport: Send + Sync {
    /// Returns the acknowledged batch id.
    fn send(&self, batch: &Batch) -> Result<String, SendError>;
}

pub fn gzip_json(batch: &Batch) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::default());
    e.write_all(&serde_json::to_vec(batch).expect("batch serializes"))
        .expect("in-memory write");
    e.finish().expect("in-memory write")
}

#[derive(Deserialize)]
struct AckBody {
    acked: String,
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpTransport {
    /// `base` is the ingester root, e.g. `http://127.0.0.1:7002`.
    pub fn new(base: &str, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds");
        HttpTransport {
            client,
            url: format!("{}/v1/batch", base.trim_end_matches('/')),
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, batch: &Batch) -> Result<String, SendError> {
        let resp = self
            .client
            .post(&self.url)
            .header("content-type", "application/json")
            .header("content-encoding", "gzip")
            .body(gzip_json(batch))
            .send()
            .map_err(|e| SendError::Unavailable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        if status.is_success() {
            let ack: AckBody =
                serde_json::from_str(&text).map_err(|e| SendError::Unavailable(format!("bad ack: {e}")))?;
            Ok(ack.acked)
        } else if status.is_client_error() && status.as_u16() != 408 && status.as_u16() != 429 {
            Err(SendError::Rejected {
                status: status.as_u16(),
                body: text,
            })
        } else {
            Err(SendError::Unavailable(format!("{status}: {text}")))
        }
    }
}

/// Exponential retry delay: `base * factor^attempt`, capped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackoffPolicy {
    pub base_ms: i64,
    pub factor: i64,
    pub cap_ms: i64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            base_ms: 1_000,
            factor: 2,
            cap_ms: 60_000,
        }
    }
}

impl BackoffPolicy {
    pub fn delay_ms(&self, failures: u32) -> i64 {
        let mut d = self.base_ms;
        for _ in 1..failures {
            d = d.saturating_mul(self.factor);
            if d >= self.cap_ms {
                return self.cap_ms;
            }
        }
        d.min(self.cap_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub policy: BackoffPolicy,
    failures: u32,
    not_before: EpochMs,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff::new(BackoffPolicy::default())
    }
}

impl Backoff {
    pub fn new(policy: BackoffPolicy) -> Self {
        Backoff {
            policy,
            failures: 0,
            not_before: EpochMs::MIN,
        }
    }

    pub fn ready(&self, now: EpochMs) -> bool {
        now >= self.not_before
    }

    pub fn failures(&self) -> u32 {
        self.failures
    }

    pub fn not_before(&self) -> EpochMs {
        self.not_before
    }

    fn fail(&mut self, now: EpochMs) {
        self.failures += 1;
        self.not_before = now + self.policy.delay_ms(self.failures);
    }

    fn succeed(&mut self) {
        self.failures = 0;
        self.not_before = EpochMs::MIN;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeliveryReport {
    pub delivered: Vec<String>,
    /// Permanently refused by the ingester and removed from the spool.
    pub rejected: Vec<String>,
    pub error: Option<String>,
    /// Nothing was attempted because the backoff delay had not elapsed.
    pub deferred: bool,
}

/// Sends spooled batches oldest first, stopping at the first retryable
/// failure so delivery order is preserved.
pub fn flush(
    spool: &parking_lot::Mutex<SpoolBuffer>,
    transport: &dyn Transport,
    backoff: &mut Backoff,
    now: EpochMs,
) -> DeliveryReport {
    let mut report = DeliveryReport::default();
    if !backoff.ready(now) {
        report.deferred = true;
        return report;
    }
    loop {
        let Some(batch) = spool.lock().front().cloned() else {
            break;
        };
        let result = transport.send(&batch).and_then(|acked| {
            if acked == batch.batch_id {
                Ok(acked)
            } else {
                Err(SendError::AckMismatch {
                    expected: batch.batch_id.clone(),
                    got: acked,
                })
            }
        });
        match result {
            Ok(id) => {
                // The batch may have been evicted while in flight.
                spool.lock().remove_acked(&id);
                backoff.succeed();
                report.delivered.push(id);
            }
            Err(SendError::Rejected { status, body }) => {
                tracing::error!(batch = %batch.batch_id, status, body = %body, "batch rejected; dropping");
                spool.lock().remove_acked(&batch.batch_id);
                backoff.succeed();
                report.rejected.push(batch.batch_id);
            }
            Err(e) => {
                backoff.fail(now);
                report.error = Some(e.to_string());
                break;
            }
        }
    }
    report
}
