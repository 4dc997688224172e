//! Every subsystem in one process, plus the loops that keep data moving:
//! queue → store pumping, alert evaluation, partition sealing, retention and
//! queue trimming.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::Router;
use miniops_alerting::AlertEngine;
use miniops_controlplane::ControlPlane;
use miniops_core::Clock;
use miniops_incidents::IncidentService;
use miniops_ingester::{Ingester, StoreSink, DEFAULT_DEDUP_HORIZON_MS};
use miniops_mqueue::{Broker, QueueConfig};
use miniops_tsstore::{MetadataStore, Store, StoreConfig};
use tempfile::TempDir;

use crate::{Subsystem, Upstream, Upstreams};

pub struct Stack {
    pub clock: Arc<dyn Clock>,
    pub broker: Arc<Broker>,
    pub store: Arc<Store>,
    pub meta: Arc<MetadataStore>,
    pub controlplane: Arc<ControlPlane>,
    pub ingester: Arc<Ingester>,
    pub sink: StoreSink,
    pub alerts: Arc<AlertEngine>,
    pub incidents: Arc<IncidentService>,
    sink_paused: AtomicBool,
    _scratch: Option<TempDir>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Maintenance {
    pub pumped_messages: usize,
    pub alert_transitions: usize,
    pub sealed_partitions: usize,
    pub dropped_partitions: usize,
    pub trimmed_segments: usize,
}

impl Stack {
    /// With `data_dir` unset the queue lives in a scratch directory and the
    /// store in memory.
    pub fn open(data_dir: Option<&Path>, clock: Arc<dyn Clock>) -> anyhow::Result<Stack> {
        let (scratch, queue_dir) = match data_dir {
            Some(d) => (None, d.join("queue")),
            None => {
                let t = tempfile::tempdir().context("creating scratch queue directory")?;
                let q = t.path().join("queue");
                (Some(t), q)
            }
        };
        let broker = Arc::new(
            Broker::open_with_clock(&queue_dir, QueueConfig::default(), clock.clone())
                .with_context(|| format!("opening queue at {}", queue_dir.display()))?,
        );
        let store_config = match data_dir {
            Some(d) => StoreConfig::at(d.join("store")),
            None => StoreConfig::in_memory(),
        };
        let store =
            Arc::new(Store::open_with_clock(store_config, clock.clone()).context("opening store")?);
        let meta = Arc::new(match data_dir {
            Some(d) => MetadataStore::open(&d.join("services"), true)
                .context("opening service metadata")?,
            None => MetadataStore::in_memory(),
        });
        let incidents = Arc::new(IncidentService::open(meta.clone(), clock.clone()));
        let alerts = Arc::new(AlertEngine::open(
            meta.clone(),
            store.clone(),
            incidents.clone(),
            clock.clone(),
        ));
        Ok(Stack {
            controlplane: Arc::new(ControlPlane::open(meta.clone(), clock.clone())),
            ingester: Arc::new(Ingester::with_clock(
                broker.clone(),
                clock.clone(),
                DEFAULT_DEDUP_HORIZON_MS,
            )),
            sink: StoreSink::new(broker.clone(), store.clone()),
            clock,
            broker,
            store,
            meta,
            alerts,
            incidents,
            sink_paused: AtomicBool::new(false),
            _scratch: scratch,
        })
    }

    pub fn upstreams(&self) -> Upstreams {
        Upstreams::new()
            .with(
                Subsystem::Controlplane,
                Upstream::Local(miniops_controlplane::http::router(
                    self.controlplane.clone(),
                )),
            )
            .with(
                Subsystem::Ingester,
                Upstream::Local(miniops_ingester::http::router(self.ingester.clone())),
            )
            .with(
                Subsystem::Queue,
                Upstream::Local(miniops_mqueue::http::router(self.broker.clone())),
            )
            .with(
                Subsystem::Store,
                Upstream::Local(miniops_tsstore::http::router(self.store.clone())),
            )
            .with(
                Subsystem::Alerting,
                Upstream::Local(miniops_alerting::http::router(self.alerts.clone())),
            )
            .with(
                Subsystem::Incidents,
                Upstream::Local(miniops_incidents::http::router(self.incidents.clone())),
            )
    }

    /// Unauthenticated surface for agents: config polls and batch delivery
    /// under their native `/v1` paths.
    pub fn agent_router(&self) -> Router {
        miniops_controlplane::http::router(self.controlplane.clone())
            .merge(miniops_ingester::http::router(self.ingester.clone()))
    }

    /// Stops the store consumer; the queue keeps accepting and lag grows.
    pub fn pause_sink(&self, paused: bool) {
        self.sink_paused.store(paused, Ordering::SeqCst);
    }

    pub fn pump(&self) -> usize {
        if self.sink_paused.load(Ordering::SeqCst) {
            return 0;
        }
        match self.sink.pump(10_000) {
            Ok(r) => r.messages,
            Err(e) => {
                tracing::warn!(error = %e, "store sink pump failed");
                0
            }
        }
    }

    /// One pass of every periodic job.
    pub fn maintain(&self) -> Maintenance {
        let now = self.clock.now_ms();
        let mut m = Maintenance {
            pumped_messages: self.pump(),
            ..Maintenance::default()
        };
        m.alert_transitions = self.alerts.tick(now).transitions.len();
        match self.store.metrics.seal_due(now) {
            Ok(s) => m.sealed_partitions = s.len(),
            Err(e) => tracing::warn!(error = %e, "sealing failed"),
        }
        match self.store.enforce_retention(now) {
            Ok(r) => m.dropped_partitions = r.metric_partitions.len() + r.log_partitions.len(),
            Err(e) => tracing::warn!(error = %e, "retention failed"),
        }
        match self.broker.trim_all() {
            Ok(n) => m.trimmed_segments = n,
            Err(e) => tracing::warn!(error = %e, "queue trim failed"),
        }
        m
    }

    /// Pumps every `pump_every` and runs the full [`Stack::maintain`] every
    /// `maintain_every` until the returned flag is cleared.
    pub fn spawn_background(
        self: &Arc<Self>,
        pump_every: Duration,
        maintain_every: Duration,
    ) -> Arc<AtomicBool> {
        let running = Arc::new(AtomicBool::new(true));
        let (stack, flag) = (self.clone(), running.clone());
        std::thread::Builder::new()
            .name("miniops-maintenance".into())
            .spawn(move || {
                let mut since = Duration::ZERO;
                while flag.load(Ordering::SeqCst) {
                    if since >= maintain_every {
                        stack.maintain();
                        since = Duration::ZERO;
                    } else {
                        stack.pump();
                    }
                    std::thread::sleep(pump_every);
                    since += pump_every;
                }
            })
            .expect("spawn maintenance thread");
        running
    }
}
