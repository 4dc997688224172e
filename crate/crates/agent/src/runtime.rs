//! The agent proper: scheduler, spool and transport wired together.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use miniops_core::{Batch, Clock, CollectionTask, EpochMs, ExecutionLog};
use parking_lot::Mutex;
use serde::Serialize;

use crate::collect::{Collector, TaskResult};
use crate::config::{apply_config, ApplyOutcome, TaskSet};
use crate::schedule::Scheduler;
use crate::spool::{AppendReport, Evicted, SpoolBuffer};
use crate::transport::{flush, Backoff, BackoffPolicy, DeliveryReport, Transport};

/// Running totals used for end-to-end reconciliation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AgentLedger {
    pub produced_batches: u64,
    pub produced_records: u64,
    pub delivered_batches: u64,
    pub delivered_records: u64,
    pub rejected_batches: u64,
    pub evicted: Vec<Evicted>,
    pub volatile_appends: u64,
}

impl AgentLedger {
    pub fn evicted_records(&self) -> u64 {
        self.evicted.iter().map(|e| e.records as u64).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TickReport {
    pub fired: Vec<String>,
    pub records: usize,
    pub append: Option<AppendReport>,
}

pub struct Agent {
    id: String,
    nonce: String,
    clock: Arc<dyn Clock>,
    collector: Arc<dyn Collector>,
    transport: Arc<dyn Transport>,
    config: Mutex<TaskSet>,
    scheduler: Mutex<Scheduler>,
    spool: Mutex<SpoolBuffer>,
    backoff: Mutex<Backoff>,
    batch_seq: AtomicU64,
    ledger: Mutex<AgentLedger>,
    executions: Mutex<Vec<ExecutionLog>>,
    record_counts: Mutex<std::collections::HashMap<String, usize>>,
}

impl Agent {
    pub fn new(
        id: impl Into<String>,
        spool: SpoolBuffer,
        collector: Arc<dyn Collector>,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let id = id.into();
        let seq = spool.next_seq();
        Agent {
            scheduler: Mutex::new(Scheduler::new(id.clone())),
            nonce: format!("{:016x}", rand::random::<u64>()),
            id,
            clock,
            collector,
            transport,
            config: Mutex::new(TaskSet::default()),
            spool: Mutex::new(spool),
            backoff: Mutex::new(Backoff::default()),
            batch_seq: AtomicU64::new(seq),
            ledger: Mutex::new(AgentLedger::default()),
            executions: Mutex::new(Vec::new()),
            record_counts: Mutex::new(Default::default()),
        }
    }

    /// Fixes the per-boot id component, for reproducible batch ids.
    pub fn with_nonce(mut self, nonce: impl Into<String>) -> Self {
        self.nonce = nonce.into();
        self
    }

    pub fn with_backoff(self, policy: BackoffPolicy) -> Self {
        *self.backoff.lock() = Backoff::new(policy);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config_version(&self) -> u64 {
        self.config.lock().version
    }

    pub fn tasks(&self) -> Vec<CollectionTask> {
        self.config.lock().tasks.clone()
    }

    pub fn apply(&self, incoming: TaskSet) -> ApplyOutcome {
        let mut cfg = self.config.lock();
        let out = apply_config(&mut cfg, incoming);
        if let ApplyOutcome::Applied { .. } = out {
            let keep = cfg.tasks.iter().map(|t| t.task_id.clone()).collect();
            self.scheduler.lock().retain(&keep);
        }
        out
    }

    fn next_batch_id(&self) -> String {
        let seq = self.batch_seq.fetch_add(1, Ordering::SeqCst);
        format!("{}-{}-{seq}", self.id, self.nonce)
    }

    /// Claims the tasks due at `now`.
    fn claim(&self, now: EpochMs) -> Vec<CollectionTask> {
        let tasks = self.config.lock().tasks.clone();
        let due = self.scheduler.lock().tick(&tasks, now);
        tasks.into_iter().filter(|t| due.contains(&t.task_id)).collect()
    }

    /// Spools the records of finished executions as one batch.
    pub fn complete(&self, results: Vec<TaskResult>) -> Option<AppendReport> {
        let mut records = Vec::new();
        {
            let mut sched = self.scheduler.lock();
            let mut execs = self.executions.lock();
            for r in results {
                sched.finish(&r.task_id);
                execs.push(r.execution_log());
                records.extend(r.records);
            }
        }
        if records.is_empty() {
            return None;
        }
        let batch = Batch {
            batch_id: self.next_batch_id(),
            agent_id: self.id.clone(),
            sent_at: self.clock.now_ms(),
            records,
        };
        let n = batch.records.len();
        self.record_counts.lock().insert(batch.batch_id.clone(), n);
        let report = self.spool.lock().append(batch);
        let mut ledger = self.ledger.lock();
        ledger.produced_batches += 1;
        ledger.produced_records += n as u64;
        ledger.volatile_appends += u64::from(report.volatile);
        for e in &report.evicted {
            tracing::warn!(agent = %self.id, batch = %e.batch_id, records = e.records, "spool full; evicted oldest batch");
            self.record_counts.lock().remove(&e.batch_id);
        }
        ledger.evicted.extend(report.evicted.iter().cloned());
        Some(report)
    }

    /// Runs every due task (in parallel across tasks) and waits for them.
    pub fn tick(&self, now: EpochMs) -> TickReport {
        let due = self.claim(now);
        let fired: Vec<String> = due.iter().map(|t| t.task_id.clone()).collect();
        let results: Vec<TaskResult> = if due.len() <= 1 {
            due.iter().map(|t| self.collector.run(t, &self.id, now)).collect()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = due
                    .iter()
                    .map(|t| s.spawn(move || self.collector.run(t, &self.id, now)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("collector panicked")).collect()
            })
        };
        let records = results.iter().map(|r| r.records.len()).sum();
        let append = self.complete(results);
        TickReport { fired, records, append }
    }

    /// Starts due tasks on background threads and returns immediately. A task
    /// still running at the next tick is skipped.
    pub fn tick_background(self: &Arc<Self>, now: EpochMs) -> Vec<String> {
        let due = self.claim(now);
        let fired = due.iter().map(|t| t.task_id.clone()).collect();
        for task in due {
            let agent = Arc::clone(self);
            std::thread::spawn(move || {
                let r = agent.collector.run(&task, &agent.id, now);
                agent.complete(vec![r]);
            });
        }
        fired
    }

    pub fn flush(&self, now: EpochMs) -> DeliveryReport {
        let mut backoff = self.backoff.lock();
        let report = flush(&self.spool, self.transport.as_ref(), &mut backoff, now);
        let mut ledger = self.ledger.lock();
        let mut counts = self.record_counts.lock();
        for id in &report.delivered {
            ledger.delivered_batches += 1;
            ledger.delivered_records += counts.remove(id).unwrap_or(0) as u64;
        }
        for id in &report.rejected {
            ledger.rejected_batches += 1;
            counts.remove(id);
        }
        report
    }

    pub fn backoff(&self) -> Backoff {
        *self.backoff.lock()
    }

    pub fn spool_len(&self) -> usize {
        self.spool.lock().len()
    }

    pub fn spooled_records(&self) -> usize {
        self.spool.lock().records()
    }

    pub fn spooled_batch_ids(&self) -> Vec<String> {
        self.spool.lock().batch_ids()
    }

    pub fn ledger(&self) -> AgentLedger {
        self.ledger.lock().clone()
    }

    pub fn take_executions(&self) -> Vec<ExecutionLog> {
        std::mem::take(&mut *self.executions.lock())
    }
}
