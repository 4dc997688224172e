//! Fleet registry and configuration service.
//!
//! Templates are defined once and target servers through selectors. Each
//! agent has its own config version, bumped whenever the set of tasks
//! compiled for it changes. Registry, templates, versions and execution logs
//! are persisted in the metadata store.

pub mod http;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use miniops_core::{
    Clock, CollectionTask, EpochMs, ExecutionLog, Lookup, Selector, SelectorError, SystemClock, TaskError,
    TaskSet,
};
use miniops_tsstore::{MetadataStore, StoreError};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const NS_SERVERS: &str = "cp.servers";
const NS_TEMPLATES: &str = "cp.templates";
const NS_VERSIONS: &str = "cp.versions";
const NS_EXECUTIONS: &str = "cp.executions";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerDescriptor {
    pub server_id: String,
    pub client_name: String,
    pub role: String,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    #[serde(default)]
    pub last_seen: EpochMs,
}

impl ServerDescriptor {
    pub fn new(server_id: impl Into<String>, client_name: impl Into<String>, role: impl Into<String>) -> Self {
        ServerDescriptor {
            server_id: server_id.into(),
            client_name: client_name.into(),
            role: role.into(),
            tags: BTreeMap::new(),
            last_seen: 0,
        }
    }

    pub fn with_tag(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.tags.insert(k.into(), v.into());
        self
    }

    /// Attribute lookup for selectors: `server_id`, `client_name` (or
    /// `client`), `role`, and `tags.<key>` (or a bare tag key).
    pub fn lookup(&self, field: &str) -> Lookup<'_> {
        match field {
            "server_id" => Lookup::Value(&self.server_id),
            "client_name" | "client" => Lookup::Value(&self.client_name),
            "role" => Lookup::Value(&self.role),
            f => {
                let key = f.strip_prefix("tags.").unwrap_or(f);
                match self.tags.get(key) {
                    Some(v) => Lookup::Value(v),
                    None if f.starts_with("tags.") => Lookup::Absent,
                    None => Lookup::UnknownField,
                }
            }
        }
    }

    pub fn matches(&self, selector: &Selector) -> Result<bool, SelectorError> {
        selector.matches(|f| self.lookup(f))
    }
}

/// Like `ServerDescriptor::matches`, but a bare name that is a tag on some
/// other server counts as absent rather than unknown.
fn matches_in_fleet(
    server: &ServerDescriptor,
    selector: &Selector,
    known_tags: &BTreeSet<String>,
) -> Result<bool, SelectorError> {
    selector.matches(|f| match server.lookup(f) {
        Lookup::UnknownField if known_tags.contains(f) => Lookup::Absent,
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub template_id: String,
    pub task: CollectionTask,
    #[serde(default)]
    pub selector: Selector,
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub created_at: EpochMs,
    #[serde(default)]
    pub updated_at: EpochMs,
}

fn default_true() -> bool {
    true
}

impl TaskTemplate {
    pub fn new(template_id: impl Into<String>, task: CollectionTask, selector: Selector) -> Self {
        TaskTemplate {
            template_id: template_id.into(),
            task,
            selector,
            enabled: true,
            created_at: 0,
            updated_at: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct AgentVersion {
    version: u64,
    /// Template ids compiled at `version`, with the template update stamp.
    compiled: Vec<(String, EpochMs)>,
}

#[derive(Debug, Error)]
pub enum CpError {
    #[error("server_id must not be empty")]
    EmptyServerId,
    #[error("role must not be empty")]
    EmptyRole,
    #[error("template '{0}' already exists")]
    DuplicateTemplate(String),
    #[error("unknown template '{0}'")]
    UnknownTemplate(String),
    #[error("template '{0}' is already disabled")]
    AlreadyDisabled(String),
    #[error("unknown agent '{0}'")]
    UnknownAgent(String),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error("invalid task: {0}")]
    Task(#[from] TaskError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegisterAck {
    pub server_id: String,
    pub version: u64,
    pub version_bumped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionQuery {
    #[serde(default)]
    pub task_id: Option<String>,
    #[serde(default)]
    pub server_id: Option<String>,
    #[serde(default)]
    pub from: Option<EpochMs>,
    #[serde(default)]
    pub to: Option<EpochMs>,
}

impl ExecutionQuery {
    pub fn matches(&self, log: &ExecutionLog) -> bool {
        self.task_id.as_ref().is_none_or(|t| *t == log.task_id)
            && self.server_id.as_ref().is_none_or(|s| *s == log.server_id)
            && self.from.is_none_or(|f| log.started_at >= f)
            && self.to.is_none_or(|t| log.started_at < t)
    }
}

#[derive(Default)]
struct State {
    servers: BTreeMap<String, ServerDescriptor>,
    templates: BTreeMap<String, TaskTemplate>,
    versions: BTreeMap<String, AgentVersion>,
    executions: Vec<ExecutionLog>,
}

impl State {
    fn known_tags(&self) -> BTreeSet<String> {
        self.servers.values().flat_map(|s| s.tags.keys().cloned()).collect()
    }

    fn compile(&self, server: &ServerDescriptor, known: &BTreeSet<String>) -> Vec<&TaskTemplate> {
        self.templates
            .values()
            .filter(|t| t.enabled)
            .filter(|t| matches_in_fleet(server, &t.selector, known).unwrap_or(false))
            .collect()
    }

    fn fingerprint(templates: &[&TaskTemplate]) -> Vec<(String, EpochMs)> {
        templates.iter().map(|t| (t.template_id.clone(), t.updated_at)).collect()
    }
}

pub struct ControlPlane {
    meta: Arc<MetadataStore>,
    clock: Arc<dyn Clock>,
    state: RwLock<State>,
    /// Makes template stamps unique even when the clock does not advance.
    stamp: parking_lot::Mutex<EpochMs>,
}

impl ControlPlane {
    pub fn in_memory() -> Self {
        Self::open(Arc::new(MetadataStore::in_memory()), Arc::new(SystemClock))
    }

    /// Loads persisted state from `meta`.
    pub fn open(meta: Arc<MetadataStore>, clock: Arc<dyn Clock>) -> Self {
        let mut state = State::default();
        for s in meta.list_json::<ServerDescriptor>(NS_SERVERS) {
            state.servers.insert(s.server_id.clone(), s);
        }
        for t in meta.list_json::<TaskTemplate>(NS_TEMPLATES) {
            state.templates.insert(t.template_id.clone(), t);
        }
        for (k, v) in meta.list(NS_VERSIONS) {
            if let Ok(av) = serde_json::from_value(v) {
                state.versions.insert(k, av);
            }
        }
        state.executions = meta.list_json(NS_EXECUTIONS);
        let last_stamp = state.templates.values().map(|t| t.updated_at).max().unwrap_or(0);
        ControlPlane {
            meta,
            clock,
            state: RwLock::new(state),
            stamp: parking_lot::Mutex::new(last_stamp),
        }
    }

    fn next_stamp(&self) -> EpochMs {
        let mut s = self.stamp.lock();
        *s = (*s + 1).max(self.clock.now_ms());
        *s
    }

    /// Recomputes every agent's compiled set and bumps versions that changed.
    /// Returns the ids whose version moved.
    fn reconcile(&self, state: &mut State, only: Option<&str>) -> Result<Vec<String>, CpError> {
        let known = state.known_tags();
        let mut bumped = Vec::new();
        let ids: Vec<String> = match only {
            Some(id) => vec![id.to_string()],
            None => state.servers.keys().cloned().collect(),
        };
        for id in ids {
            let server = &state.servers[&id];
            let fp = State::fingerprint(&state.compile(server, &known));
            let current = state.versions.get(&id);
            if current.is_some_and(|v| v.compiled == fp) {
                continue;
            }
            let next = AgentVersion {
                version: current.map_or(1, |v| v.version + 1),
                compiled: fp,
            };
            self.meta.put_json(NS_VERSIONS, &id, &next)?;
            state.versions.insert(id.clone(), next);
            bumped.push(id);
        }
        Ok(bumped)
    }

    pub fn register_agent(&self, mut desc: ServerDescriptor) -> Result<RegisterAck, CpError> {
        if desc.server_id.is_empty() {
            return Err(CpError::EmptyServerId);
        }
        if desc.role.is_empty() {
            return Err(CpError::EmptyRole);
        }
        desc.last_seen = self.clock.now_ms();
        let mut state = self.state.write();
        let new_tag_keys = desc
            .tags
            .keys()
            .any(|k| !state.servers.values().any(|s| s.tags.contains_key(k)));
        self.meta.put_json(NS_SERVERS, &desc.server_id, &desc)?;
        let id = desc.server_id.clone();
        state.servers.insert(id.clone(), desc);
        // A tag key new to the fleet can change how bare-name selectors
        // resolve elsewhere, so only then is the whole fleet rechecked.
        let scope = if new_tag_keys { None } else { Some(id.as_str()) };
        let bumped = self.reconcile(&mut state, scope)?;
        Ok(RegisterAck {
            version: state.versions[&id].version,
            version_bumped: bumped.contains(&id),
            server_id: id,
        })
    }

    /// Stores the template enabled and returns how many servers it targets.
    /// A disabled template with the same id is replaced.
    pub fn plan_task(&self, mut template: TaskTemplate) -> Result<usize, CpError> {
        template.task.task_id = template.template_id.clone();
        template.task.validate()?;
        let mut state = self.state.write();
        if let Some(existing) = state.templates.get(&template.template_id) {
            if existing.enabled {
                return Err(CpError::DuplicateTemplate(template.template_id));
            }
            template.created_at = existing.created_at;
        } else {
            template.created_at = self.clock.now_ms();
        }
        let known = state.known_tags();
        let mut affected = 0;
        for s in state.servers.values() {
            if matches_in_fleet(s, &template.selector, &known)? {
                affected += 1;
            }
        }
        template.enabled = true;
        template.updated_at = self.next_stamp();
        self.meta.put_json(NS_TEMPLATES, &template.template_id, &template)?;
        state.templates.insert(template.template_id.clone(), template);
        self.reconcile(&mut state, None)?;
        Ok(affected)
    }

    pub fn unplan_task(&self, template_id: &str) -> Result<usize, CpError> {
        let mut state = self.state.write();
        let known = state.known_tags();
        let Some(t) = state.templates.get(template_id) else {
            return Err(CpError::UnknownTemplate(template_id.to_string()));
        };
        if !t.enabled {
            return Err(CpError::AlreadyDisabled(template_id.to_string()));
        }
        let affected = state
            .servers
            .values()
            .filter(|s| matches_in_fleet(s, &t.selector, &known).unwrap_or(false))
            .count();
        let mut t = t.clone();
        t.enabled = false;
        t.updated_at = self.next_stamp();
        self.meta.put_json(NS_TEMPLATES, template_id, &t)?;
        state.templates.insert(template_id.to_string(), t);
        self.reconcile(&mut state, None)?;
        Ok(affected)
    }

    pub fn resolve_targets(&self, selector: &Selector) -> Result<Vec<ServerDescriptor>, CpError> {
        let state = self.state.read();
        let known = state.known_tags();
        let mut out = Vec::new();
        for s in state.servers.values() {
            if matches_in_fleet(s, selector, &known)? {
                out.push(s.clone());
            }
        }
        Ok(out)
    }

    pub fn compile_config(&self, agent_id: &str) -> Result<TaskSet, CpError> {
        let state = self.state.read();
        let server = state
            .servers
            .get(agent_id)
            .ok_or_else(|| CpError::UnknownAgent(agent_id.to_string()))?;
        let known = state.known_tags();
        let tasks = state.compile(server, &known).into_iter().map(|t| t.task.clone()).collect();
        let version = state.versions.get(agent_id).map_or(0, |v| v.version);
        Ok(TaskSet { version, tasks })
    }

    pub fn version(&self, agent_id: &str) -> Option<u64> {
        self.state.read().versions.get(agent_id).map(|v| v.version)
    }

    pub fn servers(&self) -> Vec<ServerDescriptor> {
        self.state.read().servers.values().cloned().collect()
    }

    pub fn server(&self, id: &str) -> Option<ServerDescriptor> {
        self.state.read().servers.get(id).cloned()
    }

    pub fn templates(&self) -> Vec<TaskTemplate> {
        self.state.read().templates.values().cloned().collect()
    }

    pub fn record_execution(&self, log: ExecutionLog) -> Result<(), CpError> {
        let mut state = self.state.write();
        let key = format!("{:020}", state.executions.len());
        self.meta.put_json(NS_EXECUTIONS, &key, &log)?;
        state.executions.push(log);
        Ok(())
    }

    pub fn executions(&self, q: &ExecutionQuery) -> Vec<ExecutionLog> {
        self.state
            .read()
            .executions
            .iter()
            .filter(|l| q.matches(l))
            .cloned()
            .collect()
    }
}
