use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use miniops_agent::{Agent, ControlPlaneClient, HostCollector, HttpTransport, Registration, SpoolBuffer};
use miniops_core::{Clock, SystemClock};

/// Collection agent daemon.
#[derive(Parser, Debug)]
#[command(name = "miniops-agent", version)]
struct Args {
    #[arg(long, env = "MINIOPS_AGENT_ID")]
    agent_id: String,
    #[arg(long, default_value = "http://127.0.0.1:7000")]
    controlplane_url: String,
    #[arg(long, default_value = "http://127.0.0.1:7000")]
    ingester_url: String,
    #[arg(long, default_value = "./spool")]
    spool_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    spool_capacity: usize,
    #[arg(long, default_value = "default")]
    client: String,
    #[arg(long, default_value = "generic")]
    role: String,
    /// Extra descriptor tags, `key=value`.
    #[arg(long = "tag", value_parser = parse_tag)]
    tags: Vec<(String, String)>,
    #[arg(long, default_value_t = 60)]
    poll_seconds: u64,
}

fn parse_tag(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let args = Args::parse();
    let spool = SpoolBuffer::open(&args.spool_dir, args.spool_capacity)
        .with_context(|| format!("opening spool {}", args.spool_dir.display()))?;
    let cp = ControlPlaneClient::new(&args.controlplane_url, Duration::from_secs(10));
    let transport = Arc::new(HttpTransport::new(&args.ingester_url, Duration::from_secs(30)));
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let agent = Arc::new(Agent::new(
        args.agent_id.clone(),
        spool,
        Arc::new(HostCollector),
        transport,
        clock.clone(),
    ));
    let reg = Registration {
        server_id: args.agent_id.clone(),
        client_name: args.client.clone(),
        role: args.role.clone(),
        tags: args.tags.iter().cloned().collect::<BTreeMap<_, _>>(),
    };
    let mut registered = false;
    let mut next_poll = 0;
    loop {
        let now = clock.now_ms();
        if !registered {
            match cp.register(&reg) {
                Ok(()) => registered = true,
                Err(e) => tracing::warn!(error = %e, "registration failed"),
            }
        }
        if registered && now >= next_poll {
            match cp.fetch_tasks(&args.agent_id) {
                Ok(set) => {
                    let out = agent.apply(set);
                    tracing::debug!(?out, "config poll");
                }
                Err(e) => tracing::warn!(error = %e, "config poll failed"),
            }
            next_poll = now + args.poll_seconds as i64 * 1000;
        }
        agent.tick_background(now);
        let report = agent.flush(now);
        if let Some(e) = report.error {
            tracing::warn!(error = %e, spooled = agent.spool_len(), "delivery failed");
        }
        for log in agent.take_executions() {
            if let Err(e) = cp.report_execution(&log) {
                tracing::debug!(error = %e, "execution report dropped");
            }
        }
        std::thread::sleep(Duration::from_millis(250));
    }
}
