use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::http::{HeaderMap, Method};
use serde::{Deserialize, Serialize};

use crate::{Gateway, Subsystem};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueLag {
    pub topic: String,
    pub group: String,
    pub lag: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    /// `up` when every subsystem is up, else `degraded`.
    pub status: String,
    pub subsystems: BTreeMap<String, String>,
    pub queue_lag: Vec<QueueLag>,
    pub store_partitions: Option<u64>,
}

impl HealthReport {
    pub fn is_up(&self, subsystem: &str) -> bool {
        self.subsystems.get(subsystem).is_some_and(|s| s == "up")
    }

    pub fn lag(&self, topic: &str, group: &str) -> Option<u64> {
        self.queue_lag
            .iter()
            .find(|l| l.topic == topic && l.group == group)
            .map(|l| l.lag)
    }
}

#[derive(Deserialize)]
struct Topics {
    topics: Vec<miniops_mqueue::TopicStats>,
}

pub async fn check(g: &Gateway) -> HealthReport {
    let probes = Subsystem::UPSTREAMS.map(|s| async move {
        let reply = g
            .call(
                s,
                Method::GET,
                s.probe_path(),
                &HeaderMap::new(),
                Bytes::new(),
            )
            .await
            .ok()
            .filter(|r| !r.status.is_server_error());
        (s, reply)
    });
    let mut report = HealthReport {
        status: "up".into(),
        subsystems: BTreeMap::new(),
        queue_lag: Vec::new(),
        store_partitions: None,
    };
    for (s, reply) in futures_join(probes).await {
        report.subsystems.insert(
            s.name().into(),
            if reply.is_some() { "up" } else { "down" }.into(),
        );
        let Some(reply) = reply else {
            report.status = "degraded".into();
            continue;
        };
        match s {
            Subsystem::Queue => {
                if let Ok(t) = serde_json::from_slice::<Topics>(&reply.body) {
                    for topic in t.topics {
                        for grp in topic.groups {
                            report.queue_lag.push(QueueLag {
                                topic: topic.topic.clone(),
                                group: grp.group,
                                lag: grp.lag,
                            });
                        }
                    }
                }
            }
            Subsystem::Store => {
                report.store_partitions = serde_json::from_slice::<serde_json::Value>(&reply.body)
                    .ok()
                    .and_then(|v| v["metrics"]["partitions"].as_u64());
            }
            _ => {}
        }
    }
    report
}

async fn futures_join<F: std::future::Future>(fs: [F; 6]) -> [F::Output; 6] {
    let [a, b, c, d, e, f] = fs;
    let (a, b, c, d, e, f) = tokio::join!(a, b, c, d, e, f);
    [a, b, c, d, e, f]
}
