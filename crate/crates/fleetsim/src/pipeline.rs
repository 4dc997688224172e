use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use miniops_core::Clock;
use miniops_ingester::{Ingester, StoreSink, DEFAULT_DEDUP_HORIZON_MS};
use miniops_mqueue::{Broker, QueueConfig};
use miniops_tsstore::{Store, StoreConfig};
use tempfile::TempDir;
use tokio::sync::oneshot;

/// Queue, ingester (served on loopback HTTP), store and the sink between
/// them, all in this process.
pub struct LocalPipeline {
    pub broker: Arc<Broker>,
    pub ingester: Arc<Ingester>,
    pub store: Arc<Store>,
    pub sink: StoreSink,
    pub addr: SocketAddr,
    runtime: tokio::runtime::Runtime,
    shutdown: Option<oneshot::Sender<()>>,
    _dir: TempDir,
}

impl LocalPipeline {
    pub fn start(clock: Arc<dyn Clock>) -> anyhow::Result<Self> {
        let dir = tempfile::tempdir().context("creating queue directory")?;
        let broker = Arc::new(Broker::open(
            dir.path().join("queue"),
            QueueConfig {
                fsync: false,
                ..QueueConfig::default()
            },
        )?);
        let store = Arc::new(Store::open_with_clock(StoreConfig::in_memory(), clock.clone())?);
        let ingester = Arc::new(Ingester::with_clock(broker.clone(), clock, DEFAULT_DEDUP_HORIZON_MS));
        let sink = StoreSink::new(broker.clone(), store.clone());

        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = miniops_ingester::http::router(ingester.clone());
        runtime.spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(LocalPipeline {
            broker,
            ingester,
            store,
            sink,
            addr,
            runtime,
            shutdown: Some(tx),
            _dir: dir,
        })
    }

    pub fn ingester_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for LocalPipeline {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let rt = std::mem::replace(
            &mut self.runtime,
            tokio::runtime::Builder::new_current_thread().build().expect("runtime"),
        );
        rt.shutdown_timeout(Duration::from_secs(2));
    }
}

/// Fails unless the ingester answers on `url`.
pub fn preflight(url: &str) -> anyhow::Result<()> {
    let probe = format!("{}/v1/ingest/stats", url.trim_end_matches('/'));
    let addr: SocketAddr = url
        .trim_start_matches("http://")
        .trim_end_matches('/')
        .parse()
        .with_context(|| format!("ingester address {url}"))?;
    std::net::TcpStream::connect_timeout(&addr, Duration::from_secs(2))
        .with_context(|| format!("ingester unreachable at {probe}"))?;
    Ok(())
}
