//! Fleet simulator.
//!
//! Spawns in-process agents whose collector emits synthetic metrics, ships
//! their batches over loopback HTTP to a local ingester, pumps the queue into
//! the store, and reconciles what was stored against a ground-truth ledger of
//! every sample produced. Time is virtual and advances one tick at a time.

pub mod generate;
pub mod pipeline;
pub mod scenario;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use miniops_agent::{Agent, Collector, HttpTransport, Outcome, SpoolBuffer, TaskResult, Transport};
use miniops_core::{
    Clock, CollectionTask, EpochMs, ManualClock, OutputKind, ParseMode, Record, Schedule, TaskSet, TaskSpec,
};
use miniops_tsstore::SeriesKey;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use generate::Generators;
pub use pipeline::{preflight, LocalPipeline};
pub use scenario::{
    scripted_saturation, AllScope, Fault, FaultKind, Generator, MetricSpec, Saturation, Scenario, ScenarioError,
    Scope, DEFAULT_T0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub series: String,
    pub server: String,
    pub ts: EpochMs,
    pub value: f64,
}

/// Every sample produced, sorted by (series, ts).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.entries.len() * 64);
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).expect("ledger entry serializes");
            out.push(b'\n');
        }
        out
    }

    pub fn digest(&self) -> String {
        format!("{:08x}", crc32fast::hash(&self.to_jsonl()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub servers: usize,
    pub metrics: usize,
    pub ticks: u64,
    pub produced_records: u64,
    pub produced_batches: u64,
    pub acked_records: u64,
    pub delivered_batches: u64,
    pub rejected_batches: u64,
    pub evicted_batches: u64,
    pub evicted_records: u64,
    /// Batches the ingester turned away while unavailable.
    pub refused_during_outage: u64,
    pub duplicate_batches: u64,
    pub stored_distinct: u64,
    pub missing: u64,
    pub missing_evicted: u64,
    pub unexplained_missing: u64,
    pub evicted_but_stored: u64,
    pub unexpected_stored: u64,
    pub value_mismatches: u64,
    pub reconciled: bool,
    pub undrained_batches: u64,
    pub virtual_ms: i64,
    pub drain_ms: i64,
    pub wall_ms: u64,
    pub ledger_digest: String,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Virtual milliseconds per wall millisecond; `None` runs flat out.
    pub accel: Option<f64>,
    /// Upper bound on virtual time spent emptying spools after the run.
    pub max_drain_s: u64,
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            accel: None,
            max_drain_s: 600,
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()).clamp(2, 16),
        }
    }
}

pub struct SimOutcome {
    pub report: SimReport,
    pub ledger: Ledger,
}

struct SimCollector {
    gens: Generators,
    t0: EpochMs,
    tick_ms: i64,
    servers: HashMap<String, usize>,
    ledger: Mutex<Vec<LedgerEntry>>,
}

impl Collector for SimCollector {
    fn run(&self, task: &CollectionTask, server_id: &str, started_at: EpochMs) -> TaskResult {
        let name = match &task.spec {
            TaskSpec::Exec {
                metric_name: Some(n), ..
            } => n.as_str(),
            _ => task.task_id.as_str(),
        };
        let mut result = TaskResult {
            task_id: task.task_id.clone(),
            server_id: server_id.to_string(),
            started_at,
            duration_ms: 0,
            outcome: Outcome::ExecError,
            records: Vec::new(),
        };
        let (Some(&srv), Some(m)) = (self.servers.get(server_id), self.gens.metric_index(name)) else {
            return result;
        };
        let tick = ((started_at - self.t0) / self.tick_ms).max(0) as u64;
        let value = self.gens.value(srv, m, tick, started_at);
        let series = SeriesKey::new(name, [("server", server_id)]).canonical();
        self.ledger.lock().push(LedgerEntry {
            series,
            server: server_id.to_string(),
            ts: started_at,
            value,
        });
        result.outcome = Outcome::Ok;
        result.records.push(Record::metric(&task.output_topic, server_id, name, started_at, value));
        result
    }
}

fn sim_tasks(s: &Scenario) -> TaskSet {
    let tasks = s
        .metrics
        .iter()
        .map(|m| CollectionTask {
            task_id: m.name.clone(),
            spec: TaskSpec::Exec {
                command: format!("sim {}", m.name),
                parse: ParseMode::Scalar,
                metric_name: Some(m.name.clone()),
            },
            schedule: Schedule {
                period_seconds: (s.tick_ms / 1000) as u32,
                jitter_seconds: 0,
            },
            timeout_ms: 1000,
            output_topic: s.topic.clone(),
            output_kind: OutputKind::Metric,
        })
        .collect();
    TaskSet { version: 1, tasks }
}

/// A scenario bound to its own pipeline and virtual clock.
pub struct Simulation {
    scenario: Scenario,
    clock: ManualClock,
    pipeline: LocalPipeline,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> anyhow::Result<Self> {
        scenario.validate()?;
        let clock = ManualClock::new(scenario.t0());
        let pipeline = LocalPipeline::start(Arc::new(clock.clone()))?;
        Ok(Simulation {
            scenario,
            clock,
            pipeline,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn clock(&self) -> &ManualClock {
        &self.clock
    }

    pub fn pipeline(&self) -> &LocalPipeline {
        &self.pipeline
    }

    pub fn run(&self, opts: &RunOptions) -> anyhow::Result<SimOutcome> {
        let s = &self.scenario;
        let url = self.pipeline.ingester_url();
        preflight(&url)?;
        let wall = Instant::now();
        let t0 = s.t0();
        let tick_ms = s.tick_ms as i64;
        let ids = s.server_ids();
        let collector = Arc::new(SimCollector {
            gens: Generators::new(s.seed, t0, s.metrics.clone()),
            t0,
            tick_ms,
            servers: ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect(),
            ledger: Mutex::new(Vec::new()),
        });
        let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new(&url, Duration::from_secs(10)));
        let clock: Arc<dyn Clock> = Arc::new(self.clock.clone());
        let tasks = sim_tasks(s);
        let agents: Vec<Agent> = ids
            .iter()
            .map(|id| {
                let a = Agent::new(
                    id.clone(),
                    SpoolBuffer::in_memory(s.spool_capacity),
                    collector.clone(),
                    transport.clone(),
                    clock.clone(),
                )
                .with_nonce(format!("s{}", s.seed));
                a.apply(tasks.clone());
                a
            })
            .collect();
        // batch id → (server index, tick time)
        let batches: Mutex<HashMap<String, (usize, EpochMs)>> = Mutex::new(HashMap::new());
        let outage = |t: EpochMs| {
            s.faults
                .iter()
                .any(|f| f.kind == FaultKind::IngesterOutage && f.active(t - t0))
        };
        let paused = |server: &str, t: EpochMs| {
            s.faults
                .iter()
                .any(|f| f.kind == FaultKind::AgentPause && f.active(t - t0) && f.scope.covers(server))
        };
        let workers = opts.workers.max(1).min(agents.len());
        let step = |t: EpochMs, collect: bool| {
            std::thread::scope(|scope| {
                for w in 0..workers {
                    let agents = &agents;
                    let batches = &batches;
                    scope.spawn(move || {
                        for (i, agent) in agents.iter().enumerate().skip(w).step_by(workers) {
                            if paused(agent.id(), t) {
                                continue;
                            }
                            if collect && agent.tick(t).append.is_some() {
                                if let Some(id) = agent.spooled_batch_ids().last() {
                                    batches.lock().insert(id.clone(), (i, t));
                                }
                            }
                            agent.flush(t);
                        }
                    });
                }
            });
        };

        let end = t0 + s.ticks() as i64 * tick_ms;
        for k in 0..s.ticks() as i64 {
            let t = t0 + k * tick_ms;
            self.clock.set(t);
            self.pipeline.ingester.set_available(!outage(t));
            step(t, true);
            self.pipeline.sink.pump(65_536)?;
            if let Some(accel) = opts.accel.filter(|a| *a > 0.0) {
                let target = Duration::from_secs_f64((t - t0 + tick_ms) as f64 / accel / 1000.0);
                if let Some(wait) = target.checked_sub(wall.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
        }
        self.pipeline.ingester.set_available(true);
        let mut t = end;
        while agents.iter().any(|a| a.spool_len() > 0) && t - end < opts.max_drain_s as i64 * 1000 {
            self.clock.set(t);
            step(t, false);
            t += tick_ms;
        }
        self.clock.set(t);
        self.pipeline.sink.drain()?;

        let mut entries = std::mem::take(&mut *collector.ledger.lock());
        entries.sort_by(|a, b| (&a.series, a.ts).cmp(&(&b.series, b.ts)));
        let ledger = Ledger { entries };

        let mut report = SimReport {
            scenario: s.name.clone(),
            seed: s.seed,
            servers: s.servers,
            metrics: s.metrics.len(),
            ticks: s.ticks(),
            virtual_ms: end - t0,
            drain_ms: t - end,
            ledger_digest: ledger.digest(),
            ..SimReport::default()
        };
        let mut evicted_at: HashSet<(String, EpochMs)> = HashSet::new();
        {
            let map = batches.lock();
            for a in &agents {
                let l = a.ledger();
                report.produced_batches += l.produced_batches;
                report.produced_records += l.produced_records;
                report.acked_records += l.delivered_records;
                report.delivered_batches += l.delivered_batches;
                report.rejected_batches += l.rejected_batches;
                report.evicted_batches += l.evicted.len() as u64;
                report.evicted_records += l.evicted_records();
                report.undrained_batches += a.spool_len() as u64;
                for e in &l.evicted {
                    if let Some(&(srv, ts)) = map.get(&e.batch_id) {
                        evicted_at.insert((ids[srv].clone(), ts));
                    }
                }
            }
        }
        let stats = self.pipeline.ingester.stats();
        report.refused_during_outage = stats.unavailable_batches;
        report.duplicate_batches = stats.duplicate_batches;

        let stored: BTreeMap<(String, EpochMs), f64> = self
            .pipeline
            .store
            .metrics
            .scan(None, t0, t + 1)?
            .into_iter()
            .map(|p| ((p.series.canonical(), p.ts), p.value))
            .collect();
        report.stored_distinct = stored.len() as u64;
        let mut expected: HashSet<(String, EpochMs)> = HashSet::with_capacity(ledger.len());
        for e in &ledger.entries {
            let key = (e.series.clone(), e.ts);
            let was_evicted = evicted_at.contains(&(e.server.clone(), e.ts));
            match stored.get(&key) {
                None => {
                    report.missing += 1;
                    if was_evicted {
                        report.missing_evicted += 1;
                    } else {
                        report.unexplained_missing += 1;
                    }
                }
                Some(v) => {
                    if was_evicted {
                        report.evicted_but_stored += 1;
                    }
                    if v.to_bits() != e.value.to_bits() {
                        report.value_mismatches += 1;
                    }
                }
            }
            expected.insert(key);
        }
        report.unexpected_stored = stored.keys().filter(|k| !expected.contains(*k)).count() as u64;
        report.reconciled = report.unexplained_missing == 0
            && report.evicted_but_stored == 0
            && report.unexpected_stored == 0
            && report.value_mismatches == 0
            && report.undrained_batches == 0
            && report.produced_records == ledger.len() as u64
            && report.stored_distinct + report.evicted_records == report.produced_records;
        report.wall_ms = wall.elapsed().as_millis() as u64;
        Ok(SimOutcome { report, ledger })
    }
}

/// Runs `scenario` on a fresh local pipeline.
pub fn run_scenario(scenario: Scenario, opts: &RunOptions) -> anyhow::Result<SimOutcome> {
    Simulation::new(scenario)?.run(opts)
}
