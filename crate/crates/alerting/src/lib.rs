//! Alert engine.
//!
//! Rules are mini-SQL queries compared against a threshold, either on the
//! latest value per group or on a linear forecast of days left before a
//! capacity bound. Each (rule, group) has at most one open instance; it
//! moves pending → firing → resolved, and its actions run once, at fire
//! time, through a persisted outbox so a crash or an unreachable incident
//! service delays them but never repeats them.

pub mod dispatch;
pub mod forecast;
pub mod http;
pub mod machine;
pub mod source;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use miniops_core::{Clock, EpochMs, Severity, SystemClock};
use miniops_tsstore::sql::ParseError;
use miniops_tsstore::{Aggregate, MetadataStore, Query, StoreError};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dispatch::{IncidentRequest, IncidentSink, NullSink, SinkError};
pub use forecast::{
    days_to_saturation, fit_trend, Direction, ForecastError, Forecaster, OlsForecaster, Trend, DEFAULT_EPSILON,
};
pub use machine::{advance, AlertState};
pub use source::MetricSource;

const NS_RULES: &str = "alerting.rules";
const NS_INSTANCES: &str = "alerting.instances";
const HISTORY_CAP: usize = 10_000;
const DAY_S: u64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Comparator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            ">" => Ok(Comparator::Gt),
            ">=" => Ok(Comparator::Ge),
            "<" => Ok(Comparator::Lt),
            "<=" => Ok(Comparator::Le),
            other => Err(format!("unknown comparator '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionSpec {
    CreateIncident {
        #[serde(default)]
        team_hint: Option<String>,
        /// Placeholders: {server} {metric} {value} {rule} {severity}
        /// {threshold} {group}, plus group-by tags and rule labels.
        title: String,
    },
    LogOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSpec {
    pub capacity_bound: f64,
    #[serde(default = "default_window")]
    pub window_s: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub direction: Option<Direction>,
}

fn default_window() -> u64 {
    14 * DAY_S
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_eval_every() -> u64 {
    60
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRule {
    pub rule_id: String,
    pub source: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub severity: Severity,
    #[serde(default)]
    pub for_duration_s: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every_s: u64,
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
    #[serde(default = "yes")]
    pub enabled: bool,
    /// When set, the compared value is days to saturation.
    #[serde(default)]
    pub forecast: Option<ForecastSpec>,
    /// Extra ticket attributes and title placeholders.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

impl AlertRule {
    pub fn threshold(
        rule_id: impl Into<String>,
        source: impl Into<String>,
        comparator: Comparator,
        threshold: f64,
        severity: Severity,
    ) -> Self {
        AlertRule {
            rule_id: rule_id.into(),
            source: source.into(),
            comparator,
            threshold,
            severity,
            for_duration_s: 0,
            eval_every_s: 60,
            actions: Vec::new(),
            enabled: true,
            forecast: None,
            labels: BTreeMap::new(),
        }
    }

    pub fn with_action(mut self, a: ActionSpec) -> Self {
        self.actions.push(a);
        self
    }

    /// Checks the rule and returns its parsed source query.
    pub fn validate(&self) -> Result<Query, AlertError> {
        let bad = |m: String| Err(AlertError::InvalidRule(m));
        if self.rule_id.trim().is_empty() || self.rule_id.contains('|') {
            return bad("rule_id must be non-empty and must not contain '|'".into());
        }
        if self.eval_every_s < 1 {
            return bad("eval_every_s must be at least 1".into());
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite".into());
        }
        let q = miniops_tsstore::sql::parse(&self.source).map_err(AlertError::Source)?;
        match &self.forecast {
            None if q.aggregate != Aggregate::Last && q.bucket_seconds.is_some() => {
                return bad("source must use last() or a single bucket".into());
            }
            Some(f) if !f.capacity_bound.is_finite() || f.window_s == 0 || !(f.epsilon >= 0.0) => {
                return bad("forecast needs a finite capacity_bound, positive window_s and epsilon >= 0".into());
            }
            _ => {}
        }
        let mut known: BTreeSet<&str> =
            ["server", "metric", "value", "rule", "severity", "threshold", "group"].into();
        known.extend(q.group_by.iter().map(String::as_str));
        known.extend(self.labels.keys().map(String::as_str));
        for a in &self.actions {
            if let ActionSpec::CreateIncident { title, .. } = a {
                if title.trim().is_empty() {
                    return bad("incident title must not be empty".into());
                }
                for name in placeholders(title).map_err(AlertError::InvalidRule)? {
                    if !known.contains(name.as_str()) {
                        return bad(format!("unresolvable placeholder {{{name}}}"));
                    }
                }
            }
        }
        Ok(q)
    }
}

fn placeholders(template: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        let tail = &rest[i + 1..];
        let j = tail.find('}').ok_or("unclosed '{' in title")?;
        out.push(tail[..j].to_string());
        rest = &tail[j + 1..];
    }
    Ok(out)
}

fn render(template: &str, vars: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i + 1..];
        match tail.find('}') {
            Some(j) => {
                let name = &tail[..j];
                match vars.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &tail[j + 1..];
            }
            None => {
                out.push_str(&rest[i..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Work still owed for an instance, persisted with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PendingAction {
    CreateIncident(IncidentRequest),
    Log { message: String },
    Resolved { key: String, resolved_at: EpochMs },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertInstance {
    pub instance_id: String,
    pub rule_id: String,
    pub group: String,
    #[serde(default)]
    pub group_tags: BTreeMap<String, String>,
    pub state: AlertState,
    pub severity: Severity,
    pub first_breach_at: EpochMs,
    pub fired_at: Option<EpochMs>,
    pub resolved_at: Option<EpochMs>,
    pub last_value: f64,
    #[serde(default)]
    pub outbox: Vec<PendingAction>,
    #[serde(default)]
    pub tickets: Vec<String>,
}

impl AlertInstance {
    /// Action idempotency key: rule, group and fire time.
    pub fn fire_key(&self) -> Option<String> {
        self.fired_at.map(|f| format!("{}|{}|{}", self.rule_id, self.group, f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub rule_id: String,
    pub group: String,
    pub from: Option<AlertState>,
    pub to: AlertState,
    pub at: EpochMs,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub evaluations: u64,
    pub skipped_evaluations: u64,
    pub degenerate_windows: u64,
    pub fired: u64,
    pub resolved: u64,
    pub actions_done: u64,
    pub dispatch_failures: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TickReport {
    pub evaluated: Vec<String>,
    pub skipped: Vec<String>,
    pub transitions: Vec<Transition>,
    pub dispatched: usize,
    pub undelivered: usize,
}

#[derive(Debug, Error)]
pub enum AlertError {
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("rule source: {0}")]
    Source(ParseError),
    #[error("unknown rule '{0}'")]
    UnknownRule(String),
    #[error("metric source unavailable: {0}")]
    SourceUnavailable(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Compared value per group, with its tag map.
type Observations = BTreeMap<String, (BTreeMap<String, String>, f64)>;

#[derive(Default)]
struct EngineState {
    /// Open instances plus resolved ones with undelivered actions.
    live: BTreeMap<String, AlertInstance>,
    /// (rule, group) → instance id of the open instance.
    open: HashMap<(String, String), String>,
    history: VecDeque<AlertInstance>,
    next_due: HashMap<String, EpochMs>,
}

pub struct AlertEngine {
    meta: Arc<MetadataStore>,
    source: Arc<dyn MetricSource>,
    sink: Arc<dyn IncidentSink>,
    forecaster: Arc<dyn Forecaster>,
    clock: Arc<dyn Clock>,
    rules: RwLock<BTreeMap<String, Arc<AlertRule>>>,
    state: Mutex<EngineState>,
    stats: Mutex<EngineStats>,
    dispatching: Mutex<()>,
}

impl AlertEngine {
    pub fn new(source: Arc<dyn MetricSource>, sink: Arc<dyn IncidentSink>) -> Self {
        Self::open(Arc::new(MetadataStore::in_memory()), source, sink, Arc::new(SystemClock))
    }

    /// Loads rules and live instances from `meta`.
    pub fn open(
        meta: Arc<MetadataStore>,
        source: Arc<dyn MetricSource>,
        sink: Arc<dyn IncidentSink>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let mut rules = BTreeMap::new();
        for r in meta.list_json::<AlertRule>(NS_RULES) {
            rules.insert(r.rule_id.clone(), Arc::new(r));
        }
        let mut state = EngineState::default();
        for inst in meta.list_json::<AlertInstance>(NS_INSTANCES) {
            if inst.state != AlertState::Resolved {
                state
                    .open
                    .insert((inst.rule_id.clone(), inst.group.clone()), inst.instance_id.clone());
            }
            state.live.insert(inst.instance_id.clone(), inst);
        }
        AlertEngine {
            meta,
            source,
            sink,
            forecaster: Arc::new(OlsForecaster),
            clock,
            rules: RwLock::new(rules),
            state: Mutex::new(state),
            stats: Mutex::new(EngineStats::default()),
            dispatching: Mutex::new(()),
        }
    }

    pub fn with_forecaster(mut self, f: Arc<dyn Forecaster>) -> Self {
        self.forecaster = f;
        self
    }

    pub fn now_ms(&self) -> EpochMs {
        self.clock.now_ms()
    }

    pub fn stats(&self) -> EngineStats {
        self.stats.lock().clone()
    }

    pub fn rules(&self) -> Vec<AlertRule> {
        self.rules.read().values().map(|r| (**r).clone()).collect()
    }

    pub fn rule(&self, id: &str) -> Option<AlertRule> {
        self.rules.read().get(id).map(|r| (**r).clone())
    }

    /// Inserts or replaces a rule. Returns true when it replaced one.
    pub fn put_rule(&self, rule: AlertRule) -> Result<bool, AlertError> {
        rule.validate()?;
        self.meta.put_json(NS_RULES, &rule.rule_id, &rule)?;
        let id = rule.rule_id.clone();
        let replaced = self.rules.write().insert(id.clone(), Arc::new(rule)).is_some();
        self.state.lock().next_due.remove(&id);
        Ok(replaced)
    }

    /// Removes a rule; its open instances resolve now.
    pub fn delete_rule(&self, id: &str) -> Result<Vec<Transition>, AlertError> {
        if self.rules.write().remove(id).is_none() {
            return Err(AlertError::UnknownRule(id.to_string()));
        }
        self.meta.delete(NS_RULES, id)?;
        let now = self.clock.now_ms();
        let mut st = self.state.lock();
        st.next_due.remove(id);
        let groups: Vec<String> = st
            .open
            .keys()
            .filter(|(r, _)| r == id)
            .map(|(_, g)| g.clone())
            .collect();
        let mut out = Vec::new();
        for g in groups {
            if let Some(t) = self.resolve_open(&mut st, id, &g, now, f64::NAN)? {
                out.push(t);
            }
        }
        Ok(out)
    }

    /// Every known instance, optionally filtered by state.
    pub fn alerts(&self, state: Option<AlertState>) -> Vec<AlertInstance> {
        let st = self.state.lock();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for inst in st.live.values().chain(st.history.iter().rev()) {
            if seen.insert(inst.instance_id.clone()) && state.is_none_or(|s| inst.state == s) {
                out.push(inst.clone());
            }
        }
        out
    }

    pub fn undelivered(&self) -> usize {
        self.state.lock().live.values().map(|i| i.outbox.len()).sum()
    }

    fn observe(&self, rule: &AlertRule, now: EpochMs) -> Result<Observations, AlertError> {
        let mut q = rule.validate()?;
        let tags_of = |group: &[String]| -> BTreeMap<String, String> {
            q.group_by.iter().cloned().zip(group.iter().cloned()).collect()
        };
        let mut out = Observations::new();
        match &rule.forecast {
            None => {
                // The source's time range fixes the window width; the window ends now.
                let width = q.to - q.from;
                q.to = now + 1;
                q.from = q.to - width;
                let res = self.source.query(&q).map_err(AlertError::SourceUnavailable)?;
                // Rows are ordered by (group, bucket), so the last row per group is the latest.
                for row in res.rows {
                    let tags = tags_of(&row.group);
                    out.insert(group_key(&tags), (tags, row.value));
                }
            }
            Some(f) => {
                q.to = now + 1;
                q.from = q.to - (f.window_s as i64) * 1000;
                let samples = self.source.samples(&q).map_err(AlertError::SourceUnavailable)?;
                for (group, window) in samples {
                    let tags = tags_of(&group);
                    match self
                        .forecaster
                        .days_to_saturation(&window, now, f.capacity_bound, f.epsilon, f.direction)
                    {
                        Ok(days) => {
                            out.insert(group_key(&tags), (tags, days));
                        }
                        Err(e) => {
                            tracing::warn!(rule = %rule.rule_id, group = %group_key(&tags), "forecast skipped: {e}");
                            self.stats.lock().degenerate_windows += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn breach(rule: &AlertRule, value: f64) -> bool {
        if rule.forecast.is_some() && !value.is_finite() {
            return false;
        }
        rule.comparator.holds(value, rule.threshold)
    }

    /// Evaluates one rule at `now` and applies the resulting transitions.
    /// Groups absent from the result keep their state. Actions are queued,
    /// not performed; see `dispatch`.
    pub fn evaluate_rule(&self, rule: &AlertRule, now: EpochMs) -> Result<Vec<Transition>, AlertError> {
        let obs = match self.observe(rule, now) {
            Ok(o) => o,
            Err(e) => {
                if matches!(e, AlertError::SourceUnavailable(_)) {
                    self.stats.lock().skipped_evaluations += 1;
                }
                return Err(e);
            }
        };
        self.stats.lock().evaluations += 1;
        let for_ms = rule.for_duration_s as i64 * 1000;
        let mut st = self.state.lock();
        let mut out = Vec::new();
        for (group, (tags, value)) in obs {
            let open_id = st.open.get(&(rule.rule_id.clone(), group.clone())).cloned();
            let current = open_id
                .as_ref()
                .and_then(|id| st.live.get(id))
                .map(|i| (i.state, i.first_breach_at));
            let breach = Self::breach(rule, value);
            let mut from = current.map(|c| c.0);
            for to in advance(current, breach, now, for_ms) {
                match to {
                    AlertState::Pending => {
                        let inst = AlertInstance {
                            instance_id: format!("{}|{}|{}", rule.rule_id, group, now),
                            rule_id: rule.rule_id.clone(),
                            group: group.clone(),
                            group_tags: tags.clone(),
                            state: AlertState::Pending,
                            severity: rule.severity,
                            first_breach_at: now,
                            fired_at: None,
                            resolved_at: None,
                            last_value: value,
                            outbox: Vec::new(),
                            tickets: Vec::new(),
                        };
                        st.open
                            .insert((rule.rule_id.clone(), group.clone()), inst.instance_id.clone());
                        st.live.insert(inst.instance_id.clone(), inst);
                    }
                    AlertState::Firing => {
                        let id = st.open[&(rule.rule_id.clone(), group.clone())].clone();
                        let inst = st.live.get_mut(&id).expect("open instance is live");
                        inst.state = AlertState::Firing;
                        inst.fired_at = Some(now);
                        inst.last_value = value;
                        inst.outbox.extend(fire_actions(rule, inst, value));
                        self.stats.lock().fired += 1;
                    }
                    AlertState::Resolved => {
                        self.resolve_open(&mut st, &rule.rule_id, &group, now, value)?;
                    }
                }
                out.push(Transition {
                    rule_id: rule.rule_id.clone(),
                    group: group.clone(),
                    from,
                    to,
                    at: now,
                    value,
                });
                from = Some(to);
            }
            if let Some(id) = st.open.get(&(rule.rule_id.clone(), group.clone())).cloned() {
                let inst = st.live.get_mut(&id).expect("open instance is live");
                inst.last_value = value;
                self.meta.put_json(NS_INSTANCES, &id, inst)?;
            }
        }
        Ok(out)
    }

    fn resolve_open(
        &self,
        st: &mut EngineState,
        rule_id: &str,
        group: &str,
        now: EpochMs,
        value: f64,
    ) -> Result<Option<Transition>, AlertError> {
        let Some(id) = st.open.remove(&(rule_id.to_string(), group.to_string())) else {
            return Ok(None);
        };
        let Some(inst) = st.live.get_mut(&id) else {
            return Ok(None);
        };
        let from = inst.state;
        inst.state = AlertState::Resolved;
        inst.resolved_at = Some(now);
        if value.is_finite() {
            inst.last_value = value;
        }
        if let Some(key) = inst.fire_key() {
            inst.outbox.push(PendingAction::Resolved { key, resolved_at: now });
        }
        self.stats.lock().resolved += 1;
        let inst = inst.clone();
        self.settle(st, inst)?;
        Ok(Some(Transition {
            rule_id: rule_id.to_string(),
            group: group.to_string(),
            from: Some(from),
            to: AlertState::Resolved,
            at: now,
            value,
        }))
    }

    /// Persists a live instance, or retires it to history once it is
    /// resolved with nothing left to deliver.
    fn settle(&self, st: &mut EngineState, inst: AlertInstance) -> Result<(), AlertError> {
        if inst.state == AlertState::Resolved && inst.outbox.is_empty() {
            self.meta.delete(NS_INSTANCES, &inst.instance_id)?;
            st.live.remove(&inst.instance_id);
            st.history.push_back(inst);
            if st.history.len() > HISTORY_CAP {
                st.history.pop_front();
            }
        } else {
            self.meta.put_json(NS_INSTANCES, &inst.instance_id, &inst)?;
            st.live.insert(inst.instance_id.clone(), inst);
        }
        Ok(())
    }

    /// Transitions `rule` would produce at `now`, without applying them.
    pub fn dry_run(&self, rule: &AlertRule, now: EpochMs) -> Result<Vec<Transition>, AlertError> {
        let obs = self.observe(rule, now)?;
        let for_ms = rule.for_duration_s as i64 * 1000;
        let st = self.state.lock();
        let mut out = Vec::new();
        for (group, (_, value)) in obs {
            let current = st
                .open
                .get(&(rule.rule_id.clone(), group.clone()))
                .and_then(|id| st.live.get(id))
                .map(|i| (i.state, i.first_breach_at));
            let mut from = current.map(|c| c.0);
            for to in advance(current, Self::breach(rule, value), now, for_ms) {
                out.push(Transition {
                    rule_id: rule.rule_id.clone(),
                    group: group.clone(),
                    from,
                    to,
                    at: now,
                    value,
                });
                from = Some(to);
            }
        }
        Ok(out)
    }

    /// Delivers queued actions in order, stopping at the first failure of
    /// each instance. Returns how many were delivered.
    pub fn dispatch(&self) -> usize {
        let _one_at_a_time = self.dispatching.lock();
        let pending: Vec<AlertInstance> = self
            .state
            .lock()
            .live
            .values()
            .filter(|i| !i.outbox.is_empty())
            .cloned()
            .collect();
        let mut done = 0;
        for mut inst in pending {
            let mut delivered = 0;
            let mut tickets = Vec::new();
            for action in &inst.outbox {
                let res = match action {
                    PendingAction::CreateIncident(req) => self.sink.create_incident(req).map(|t| tickets.push(t)),
                    PendingAction::Log { message } => {
                        tracing::info!(instance = %inst.instance_id, "{message}");
                        Ok(())
                    }
                    PendingAction::Resolved { key, resolved_at } => self.sink.alert_resolved(key, *resolved_at),
                };
                match res {
                    Ok(()) => delivered += 1,
                    Err(e) => {
                        tracing::warn!(instance = %inst.instance_id, "dispatch failed, will retry: {e}");
                        self.stats.lock().dispatch_failures += 1;
                        break;
                    }
                }
            }
            if delivered == 0 {
                continue;
            }
            done += delivered;
            self.stats.lock().actions_done += delivered as u64;
            let mut st = self.state.lock();
            // The instance may have moved on while the lock was released; merge.
            if let Some(live) = st.live.get(&inst.instance_id) {
                inst = live.clone();
            }
            inst.outbox.drain(..delivered.min(inst.outbox.len()));
            for t in tickets {
                if !inst.tickets.contains(&t) {
                    inst.tickets.push(t);
                }
            }
            if let Err(e) = self.settle(&mut st, inst) {
                tracing::error!("persisting alert instance failed: {e}");
            }
        }
        done
    }

    /// Evaluates every enabled rule that is due, then dispatches.
    pub fn tick(&self, now: EpochMs) -> TickReport {
        let rules: Vec<Arc<AlertRule>> = self.rules.read().values().cloned().collect();
        let mut report = TickReport::default();
        for rule in rules.into_iter().filter(|r| r.enabled) {
            let due = self.state.lock().next_due.get(&rule.rule_id).copied();
            if due.is_some_and(|d| d > now) {
                continue;
            }
            let every = rule.eval_every_s as i64 * 1000;
            let next = match due {
                Some(d) if now - d < every => d + every,
                _ => now + every,
            };
            self.state.lock().next_due.insert(rule.rule_id.clone(), next);
            match self.evaluate_rule(&rule, now) {
                Ok(ts) => {
                    report.evaluated.push(rule.rule_id.clone());
                    report.transitions.extend(ts);
                }
                Err(e) => {
                    tracing::warn!(rule = %rule.rule_id, "evaluation skipped: {e}");
                    report.skipped.push(rule.rule_id.clone());
                }
            }
        }
        report.dispatched = self.dispatch();
        report.undelivered = self.undelivered();
        report
    }
}

fn group_key(tags: &BTreeMap<String, String>) -> String {
    if tags.is_empty() {
        return "*".into();
    }
    tags.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn fire_actions(rule: &AlertRule, inst: &AlertInstance, value: f64) -> Vec<PendingAction> {
    let metric = miniops_tsstore::sql::parse(&rule.source)
        .map(|q| q.metric)
        .unwrap_or_default();
    let mut vars: BTreeMap<String, String> = rule.labels.clone();
    vars.extend(inst.group_tags.clone());
    let server = inst
        .group_tags
        .get("server")
        .or(rule.labels.get("server"))
        .cloned()
        .unwrap_or_else(|| inst.group.clone());
    vars.insert("server".into(), server.clone());
    vars.insert("metric".into(), metric.clone());
    vars.insert("value".into(), fmt_value(value));
    vars.insert("rule".into(), rule.rule_id.clone());
    vars.insert("severity".into(), rule.severity.to_string());
    vars.insert("threshold".into(), fmt_value(rule.threshold));
    vars.insert("group".into(), inst.group.clone());
    let key = inst.fire_key().expect("fired instance has a fire time");
    rule.actions
        .iter()
        .map(|a| match a {
            ActionSpec::CreateIncident { team_hint, title } => {
                let mut attributes = rule.labels.clone();
                attributes.extend(inst.group_tags.clone());
                attributes.insert("server".into(), server.clone());
                attributes.insert("metric".into(), metric.clone());
                attributes.insert("occurred_at".into(), inst.fired_at.unwrap_or_default().to_string());
                attributes.insert("alert_rule".into(), rule.rule_id.clone());
                PendingAction::CreateIncident(IncidentRequest {
                    key: key.clone(),
                    title: render(title, &vars),
                    description: format!(
                        "{} {} {} (value {}) on {}",
                        metric,
                        rule.comparator,
                        fmt_value(rule.threshold),
                        fmt_value(value),
                        inst.group
                    ),
                    severity: rule.severity,
                    team_hint: team_hint.clone(),
                    attributes,
                })
            }
            ActionSpec::LogOnly => PendingAction::Log {
                message: format!(
                    "alert {} firing on {}: {} {} {}",
                    rule.rule_id,
                    inst.group,
                    fmt_value(value),
                    rule.comparator,
                    fmt_value(rule.threshold)
                ),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_render() {
        let vars: BTreeMap<String, String> =
            [("server", "db1"), ("value", "95")].map(|(k, v)| (k.into(), v.into())).into();
        assert_eq!(render("{server} at {value}% {nope}", &vars), "db1 at 95% {nope}");
        assert_eq!(placeholders("a {b} c {d}").unwrap(), vec!["b", "d"]);
        assert!(placeholders("a {b").is_err());
    }

    #[test]
    fn rule_validation() {
        let src = "SELECT last(value) FROM \"cpu\" WHERE ts >= 0 AND ts < 60000 GROUP BY time(1m), server";
        let mut r = AlertRule::threshold("cpu", src, Comparator::Gt, 90.0, Severity::Major);
        r.validate().unwrap();
        r.eval_every_s = 0;
        assert!(r.validate().is_err());
        r.eval_every_s = 1;
        r.source = src.replace("last", "avg");
        assert!(r.validate().is_err());
        r.source = src.into();
        r.actions.push(ActionSpec::CreateIncident {
            team_hint: None,
            title: "{server} {mount}".into(),
        });
        assert!(matches!(r.validate(), Err(AlertError::InvalidRule(m)) if m.contains("mount")));
        r.source = "SELECT last(value FROM".into();
        assert!(matches!(r.validate(), Err(AlertError::Source(_))));
    }

    #[test]
    fn comparators() {
        assert!(Comparator::Gt.holds(95.0, 90.0));
        assert!(!Comparator::Gt.holds(90.0, 90.0));
        assert!(Comparator::Ge.holds(90.0, 90.0));
        assert!(Comparator::Lt.holds(10.0, 30.0));
        assert!(Comparator::Le.holds(30.0, 30.0));
        let c: Comparator = serde_json::from_str("\"<=\"").unwrap();
        assert_eq!(c, Comparator::Le);
    }
}
