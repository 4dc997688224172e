//! Versioned task sets pulled from the control plane.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

pub use miniops_core::TaskSet;
use miniops_core::CollectionTask;
use serde::{Deserialize, Serialize};


#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ApplyOutcome {
    Applied {
        version: u64,
        added: Vec<String>,
        removed: Vec<String>,
        changed: Vec<String>,
    },
    Stale {
        current: u64,
        offered: u64,
    },
}

/// Replaces `current` with `incoming` iff the version is newer. Tasks that
/// fail validation are dropped with a warning.
pub fn apply_config(current: &mut TaskSet, incoming: TaskSet) -> ApplyOutcome {
    if incoming.version <= current.version {
        return ApplyOutcome::Stale {
            current: current.version,
            offered: incoming.version,
        };
    }
    let old: BTreeMap<&str, &CollectionTask> =
        current.tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::with_capacity(incoming.tasks.len());
    for t in incoming.tasks {
        if let Err(e) = t.validate() {
            tracing::warn!(task = %t.task_id, error = %e, "ignoring invalid task");
            continue;
        }
        if seen.insert(t.task_id.clone()) {
            tasks.push(t);
        }
    }
    let added = tasks
        .iter()
        .filter(|t| !old.contains_key(t.task_id.as_str()))
        .map(|t| t.task_id.clone())
        .collect();
    let changed = tasks
        .iter()
        .filter(|t| old.get(t.task_id.as_str()).is_some_and(|o| *o != *t))
        .map(|t| t.task_id.clone())
        .collect();
    let removed = old.keys().filter(|id| !seen.contains(**id)).map(|id| id.to_string()).collect();
    *current = TaskSet {
        version: incoming.version,
        tasks,
    };
    ApplyOutcome::Applied {
        version: current.version,
        added,
        removed,
        changed,
    }
}

/// What the agent tells the control plane about itself on start.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub server_id: String,
    pub client_name: String,
    pub role: String,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

pub struct ControlPlaneClient {
    client: reqwest::blocking::Client,
    base: String,
}

impl ControlPlaneClient {
    pub fn new(base: &str, timeout: Duration) -> Self {
        ControlPlaneClient {
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("http client builds"),
            base: base.trim_end_matches('/').to_string(),
        }
    }

    pub fn register(&self, reg: &Registration) -> Result<(), String> {
        let resp = self
            .client
            .post(format!("{}/v1/agents", self.base))
            .json(reg)
            .send()
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(format!("{}: {}", resp.status(), resp.text().unwrap_or_default()))
        }
    }

    pub fn fetch_tasks(&self, agent_id: &str) -> Result<TaskSet, String> {
        let resp = self
            .client
            .get(format!("{}/v1/agents/{agent_id}/tasks", self.base))
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("{}: {}", resp.status(), resp.text().unwrap_or_default()));
        }
        resp.json::<TaskSet>().map_err(|e| e.to_string())
    }

    pub fn report_execution<T: Serialize>(&self, log: &T) -> Result<(), String> {
        let resp = self
            .client
            .post(format!("{}/v1/executions", self.base))
            .json(log)
            .send()
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(resp.status().to_string())
        }
    }
}
