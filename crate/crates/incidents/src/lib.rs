//! Incident tickets.
//!
//! Tickets are created by hand or by the alert engine, routed to a team by an
//! ordered list of triage rules, ranked per team by severity and age, and
//! moved through a five-state lifecycle. Every status change leaves an audit
//! comment, so the history can be replayed from the comment list alone.

pub mod http;
pub mod status;

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use miniops_core::{Clock, EpochMs, Lookup, Selector, Severity, SystemClock};
use miniops_tsstore::{MetadataStore, StoreError};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use status::{audit_text, parse_audit, Status};

const NS_TICKETS: &str = "incidents.tickets";
const NS_RULES: &str = "incidents.triage";
const RULES_KEY: &str = "rules";

pub const REQUIRED_ATTRIBUTES: [&str; 4] = ["server", "application", "client", "occurred_at"];
pub const DEFAULT_TEAM: &str = "operations";
pub const PALLIATIVE_PREFIX: &str = "palliative:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub ts: EpochMs,
    pub author: String,
    pub text: String,
}

impl Comment {
    pub fn is_palliative(&self) -> bool {
        self.text.trim_start().starts_with(PALLIATIVE_PREFIX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TicketSource {
    Manual,
    /// `instance` identifies the alert instance that raised the ticket.
    Alert { instance: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentTicket {
    pub ticket_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub attributes: BTreeMap<String, String>,
    pub severity: Severity,
    pub status: Status,
    pub team: Option<String>,
    #[serde(default)]
    pub assignee: Option<String>,
    pub source: TicketSource,
    #[serde(default)]
    pub comments: Vec<Comment>,
    pub created_at: EpochMs,
    #[serde(default)]
    pub revision: u64,
    #[serde(default)]
    pub alert_resolved_at: Option<EpochMs>,
}

impl IncidentTicket {
    /// Ticket attributes plus `severity`, `status`, `team` and `source` for
    /// selectors. Attributes may be addressed bare or as `attributes.<key>`.
    pub fn lookup(&self, field: &str) -> Lookup<'_> {
        match field {
            "severity" => Lookup::Value(self.severity.as_str()),
            "status" => Lookup::Value(self.status.as_str()),
            "team" => self.team.as_deref().map_or(Lookup::Absent, Lookup::Value),
            "source" => Lookup::Value(match self.source {
                TicketSource::Manual => "manual",
                TicketSource::Alert { .. } => "alert",
            }),
            f => {
                let key = f.strip_prefix("attributes.").unwrap_or(f);
                self.attributes.get(key).map_or(Lookup::Absent, |v| Lookup::Value(v))
            }
        }
    }

    pub fn matches(&self, selector: &Selector) -> bool {
        selector.matches(|f| self.lookup(f)).unwrap_or(false)
    }

    /// Status sequence recovered from the audit comments, starting at `new`.
    pub fn replay_status(&self) -> Result<Status, String> {
        let mut st = Status::New;
        for c in &self.comments {
            if let Some((from, to)) = parse_audit(&c.text) {
                if from != st || !from.can_move_to(to) {
                    return Err(format!("audit {from}→{to} does not follow {st}"));
                }
                st = to;
            }
        }
        Ok(st)
    }

    fn push_comment(&mut self, author: &str, text: String, now: EpochMs) -> &Comment {
        let ts = self.comments.last().map_or(now, |c| c.ts.max(now));
        self.comments.push(Comment {
            ts,
            author: author.to_string(),
            text,
        });
        self.comments.last().expect("just pushed")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageRule {
    #[serde(default)]
    pub selector: Selector,
    pub team: String,
    /// Use the classifier's suggestion when it has one.
    #[serde(default)]
    pub defer_to_classifier: bool,
}

impl TriageRule {
    pub fn new(selector: Selector, team: impl Into<String>) -> Self {
        TriageRule {
            selector,
            team: team.into(),
            defer_to_classifier: false,
        }
    }

    pub fn default_rule(team: impl Into<String>) -> Self {
        TriageRule::new(Selector::all(), team)
    }

    pub fn is_default(&self) -> bool {
        self.selector.predicates.is_empty()
    }
}

/// External team suggestion that a triage rule may defer to.
pub trait Classifier: Send + Sync {
    fn suggest(&self, ticket: &IncidentTicket) -> Option<String>;
}

/// Checks that exactly one default rule exists and that it comes last.
pub fn validate_rules(rules: &[TriageRule]) -> Result<(), IncidentError> {
    let defaults: Vec<usize> = rules
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_default())
        .map(|(i, _)| i)
        .collect();
    match defaults.as_slice() {
        [i] if *i + 1 == rules.len() => {}
        [] => return Err(IncidentError::InvalidRules("no default rule".into())),
        [_] => return Err(IncidentError::InvalidRules("default rule must be last".into())),
        _ => return Err(IncidentError::InvalidRules("more than one default rule".into())),
    }
    if let Some(r) = rules.iter().find(|r| r.team.trim().is_empty()) {
        return Err(IncidentError::InvalidRules(format!("rule '{}' has no team", r.selector)));
    }
    Ok(())
}

/// First-match team for `ticket`.
pub fn route(ticket: &IncidentTicket, rules: &[TriageRule], classifier: Option<&dyn Classifier>) -> String {
    for rule in rules {
        if ticket.matches(&rule.selector) {
            if rule.defer_to_classifier {
                if let Some(team) = classifier.and_then(|c| c.suggest(ticket)) {
                    return team;
                }
            }
            return rule.team.clone();
        }
    }
    DEFAULT_TEAM.to_string()
}

/// Queue order: severity descending, then oldest first, then ticket id.
pub fn rank(mut tickets: Vec<IncidentTicket>) -> Vec<IncidentTicket> {
    tickets.sort_by(|a, b| rank_key(a).cmp(&rank_key(b)));
    tickets
}

fn rank_key(t: &IncidentTicket) -> (Reverse<u8>, EpochMs, &str) {
    (Reverse(t.severity.rank()), t.created_at, t.ticket_id.as_str())
}

#[derive(Debug, Error)]
pub enum IncidentError {
    #[error("missing required attributes: {}", .0.join(", "))]
    MissingAttributes(Vec<String>),
    #[error("title must not be empty")]
    EmptyTitle,
    #[error("comment text must not be empty")]
    EmptyComment,
    #[error("unknown ticket '{0}'")]
    UnknownTicket(String),
    #[error("illegal transition {from}→{to}; allowed: {}", fmt_allowed(.allowed))]
    IllegalTransition {
        from: Status,
        to: Status,
        allowed: Vec<Status>,
    },
    #[error("ticket '{0}' is closed")]
    Closed(String),
    #[error("revision conflict: expected {expected}, current {current}")]
    Conflict { expected: u64, current: u64 },
    #[error("invalid triage rules: {0}")]
    InvalidRules(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn fmt_allowed(allowed: &[Status]) -> String {
    if allowed.is_empty() {
        "none".into()
    } else {
        allowed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewTicket {
    #[serde(default = "manual")]
    pub source: TicketSource,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub severity: Severity,
}

fn manual() -> TicketSource {
    TicketSource::Manual
}

#[derive(Debug, Clone, Serialize)]
pub struct Created {
    pub ticket: IncidentTicket,
    /// False when an alert-sourced ticket already existed for the instance.
    pub created: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct TicketFilter {
    pub team: Option<String>,
    pub status: Option<Status>,
    /// Substring of title or description, case-insensitive.
    pub q: Option<String>,
}

impl TicketFilter {
    pub fn matches(&self, t: &IncidentTicket) -> bool {
        self.team.as_ref().is_none_or(|team| t.team.as_ref() == Some(team))
            && self.status.is_none_or(|s| t.status == s)
            && self.q.as_ref().is_none_or(|q| {
                let q = q.to_lowercase();
                t.title.to_lowercase().contains(&q) || t.description.to_lowercase().contains(&q)
            })
    }
}

pub struct IncidentService {
    meta: Arc<MetadataStore>,
    clock: Arc<dyn Clock>,
    tickets: RwLock<BTreeMap<String, Arc<Mutex<IncidentTicket>>>>,
    by_instance: Mutex<HashMap<String, String>>,
    rules: RwLock<Vec<TriageRule>>,
    classifier: RwLock<Option<Arc<dyn Classifier>>>,
    next_id: Mutex<u64>,
    auto_triage: bool,
}

impl IncidentService {
    pub fn in_memory() -> Self {
        Self::open(Arc::new(MetadataStore::in_memory()), Arc::new(SystemClock))
    }

    pub fn open(meta: Arc<MetadataStore>, clock: Arc<dyn Clock>) -> Self {
        let mut tickets = BTreeMap::new();
        let mut by_instance = HashMap::new();
        let mut max_id = 0;
        for t in meta.list_json::<IncidentTicket>(NS_TICKETS) {
            if let TicketSource::Alert { instance } = &t.source {
                by_instance.insert(instance.clone(), t.ticket_id.clone());
            }
            max_id = max_id.max(id_number(&t.ticket_id));
            tickets.insert(t.ticket_id.clone(), Arc::new(Mutex::new(t)));
        }
        let rules = meta
            .get_json::<Vec<TriageRule>>(NS_RULES, RULES_KEY)
            .filter(|r| validate_rules(r).is_ok())
            .unwrap_or_else(|| vec![TriageRule::default_rule(DEFAULT_TEAM)]);
        IncidentService {
            meta,
            clock,
            tickets: RwLock::new(tickets),
            by_instance: Mutex::new(by_instance),
            rules: RwLock::new(rules),
            classifier: RwLock::new(None),
            next_id: Mutex::new(max_id + 1),
            auto_triage: true,
        }
    }

    /// Leaves new tickets in `new` instead of triaging them on creation.
    pub fn without_auto_triage(mut self) -> Self {
        self.auto_triage = false;
        self
    }

    pub fn set_classifier(&self, c: Option<Arc<dyn Classifier>>) {
        *self.classifier.write() = c;
    }

    pub fn rules(&self) -> Vec<TriageRule> {
        self.rules.read().clone()
    }

    pub fn set_rules(&self, rules: Vec<TriageRule>) -> Result<(), IncidentError> {
        validate_rules(&rules)?;
        self.meta.put_json(NS_RULES, RULES_KEY, &rules)?;
        *self.rules.write() = rules;
        Ok(())
    }

    pub fn create_ticket(&self, req: NewTicket) -> Result<Created, IncidentError> {
        let missing: Vec<String> = REQUIRED_ATTRIBUTES
            .iter()
            .filter(|k| req.attributes.get(**k).is_none_or(|v| v.trim().is_empty()))
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(IncidentError::MissingAttributes(missing));
        }
        if req.title.trim().is_empty() {
            return Err(IncidentError::EmptyTitle);
        }

        // Held across insert so two submissions for one instance cannot race.
        let mut by_instance = self.by_instance.lock();
        if let TicketSource::Alert { instance } = &req.source {
            if let Some(id) = by_instance.get(instance) {
                if let Some(t) = self.get(id) {
                    return Ok(Created {
                        ticket: t,
                        created: false,
                    });
                }
            }
        }

        let ticket_id = {
            let mut n = self.next_id.lock();
            let id = format!("INC-{:06}", *n);
            *n += 1;
            id
        };
        let mut ticket = IncidentTicket {
            ticket_id: ticket_id.clone(),
            title: req.title,
            description: req.description,
            attributes: req.attributes,
            severity: req.severity,
            status: Status::New,
            team: None,
            assignee: None,
            source: req.source,
            comments: Vec::new(),
            created_at: self.clock.now_ms(),
            revision: 0,
            alert_resolved_at: None,
        };
        if self.auto_triage {
            self.apply_triage(&mut ticket, "triage");
        }
        self.meta.put_json(NS_TICKETS, &ticket_id, &ticket)?;
        if let TicketSource::Alert { instance } = &ticket.source {
            by_instance.insert(instance.clone(), ticket_id.clone());
        }
        self.tickets
            .write()
            .insert(ticket_id, Arc::new(Mutex::new(ticket.clone())));
        Ok(Created { ticket, created: true })
    }

    fn apply_triage(&self, ticket: &mut IncidentTicket, actor: &str) {
        let classifier = self.classifier.read().clone();
        let team = route(ticket, &self.rules.read(), classifier.as_deref());
        ticket.team = Some(team);
        ticket.status = Status::Triaged;
        let now = self.clock.now_ms();
        ticket.push_comment(actor, audit_text(Status::New, Status::Triaged, actor), now);
    }

    pub fn get(&self, id: &str) -> Option<IncidentTicket> {
        let cell = self.tickets.read().get(id).cloned()?;
        let t = cell.lock().clone();
        Some(t)
    }

    pub fn ticket_for_instance(&self, instance: &str) -> Option<IncidentTicket> {
        let id = self.by_instance.lock().get(instance).cloned()?;
        self.get(&id)
    }

    pub fn list(&self, filter: &TicketFilter) -> Vec<IncidentTicket> {
        let cells: Vec<_> = self.tickets.read().values().cloned().collect();
        cells
            .into_iter()
            .map(|c| c.lock().clone())
            .filter(|t| filter.matches(t))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tickets.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Open tickets of `team` in queue order.
    pub fn rank_queue(&self, team: &str) -> Vec<IncidentTicket> {
        let open = self
            .list(&TicketFilter {
                team: Some(team.to_string()),
                ..Default::default()
            })
            .into_iter()
            .filter(|t| t.status.is_open())
            .collect();
        rank(open)
    }

    /// Runs `f` on the ticket under its lock, bumps the revision and persists.
    fn mutate<F>(&self, id: &str, expected: Option<u64>, f: F) -> Result<IncidentTicket, IncidentError>
    where
        F: FnOnce(&mut IncidentTicket, EpochMs) -> Result<(), IncidentError>,
    {
        let cell = self
            .tickets
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| IncidentError::UnknownTicket(id.to_string()))?;
        let mut guard = cell.lock();
        if let Some(exp) = expected {
            if exp != guard.revision {
                return Err(IncidentError::Conflict {
                    expected: exp,
                    current: guard.revision,
                });
            }
        }
        let mut next = guard.clone();
        f(&mut next, self.clock.now_ms())?;
        next.revision += 1;
        self.meta.put_json(NS_TICKETS, id, &next)?;
        *guard = next.clone();
        Ok(next)
    }

    /// Moves a ticket along the status machine. Entering `triaged` routes it.
    pub fn transition(
        &self,
        id: &str,
        to: Status,
        actor: &str,
        expected_revision: Option<u64>,
    ) -> Result<IncidentTicket, IncidentError> {
        self.mutate(id, expected_revision, |t, now| {
            let from = t.status;
            if !from.can_move_to(to) {
                return Err(IncidentError::IllegalTransition {
                    from,
                    to,
                    allowed: from.successors().to_vec(),
                });
            }
            if to == Status::Triaged {
                self.apply_triage(t, actor);
            } else {
                t.status = to;
                t.push_comment(actor, audit_text(from, to, actor), now);
            }
            Ok(())
        })
    }

    pub fn triage(&self, id: &str, actor: &str) -> Result<IncidentTicket, IncidentError> {
        self.transition(id, Status::Triaged, actor, None)
    }

    pub fn add_comment(
        &self,
        id: &str,
        author: &str,
        text: &str,
        expected_revision: Option<u64>,
    ) -> Result<IncidentTicket, IncidentError> {
        if text.trim().is_empty() {
            return Err(IncidentError::EmptyComment);
        }
        self.mutate(id, expected_revision, |t, now| {
            if t.status == Status::Closed {
                return Err(IncidentError::Closed(t.ticket_id.clone()));
            }
            t.push_comment(author, text.to_string(), now);
            Ok(())
        })
    }

    pub fn assign(
        &self,
        id: &str,
        assignee: Option<&str>,
        actor: &str,
        expected_revision: Option<u64>,
    ) -> Result<IncidentTicket, IncidentError> {
        self.mutate(id, expected_revision, |t, now| {
            if t.status == Status::Closed {
                return Err(IncidentError::Closed(t.ticket_id.clone()));
            }
            t.assignee = assignee.map(str::to_string);
            let text = match assignee {
                Some(a) => format!("assigned to {a} by {actor}"),
                None => format!("unassigned by {actor}"),
            };
            t.push_comment(actor, text, now);
            Ok(())
        })
    }

    /// Notes on the linked ticket that its alert instance resolved. Returns
    /// the ticket only when a comment was added.
    pub fn link_alert_resolution(
        &self,
        instance: &str,
        resolved_at: EpochMs,
    ) -> Result<Option<IncidentTicket>, IncidentError> {
        let Some(id) = self.by_instance.lock().get(instance).cloned() else {
            return Ok(None);
        };
        let mut added = false;
        let res = self.mutate(&id, None, |t, now| {
            if t.alert_resolved_at.is_some() || t.status == Status::Closed {
                return Err(IncidentError::Closed(String::new()));
            }
            t.alert_resolved_at = Some(resolved_at);
            t.push_comment("alerting", format!("source alert resolved at {resolved_at}"), now);
            added = true;
            Ok(())
        });
        match res {
            Ok(t) if added => Ok(Some(t)),
            Ok(_) | Err(IncidentError::Closed(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn id_number(id: &str) -> u64 {
    id.strip_prefix("INC-").and_then(|n| n.parse().ok()).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use miniops_core::{ManualClock, Predicate};

    fn attrs(app: &str) -> BTreeMap<String, String> {
        [("server", "srv-1"), ("application", app), ("client", "acme"), ("occurred_at", "1000")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn req(app: &str, sev: Severity) -> NewTicket {
        NewTicket {
            source: TicketSource::Manual,
            title: format!("{app} down"),
            description: String::new(),
            attributes: attrs(app),
            severity: sev,
        }
    }

    fn service() -> (IncidentService, ManualClock) {
        let clock = ManualClock::new(1_000);
        let svc = IncidentService::open(Arc::new(MetadataStore::in_memory()), Arc::new(clock.clone()));
        (svc, clock)
    }

    #[test]
    fn missing_client_is_named() {
        let (svc, _) = service();
        let mut r = req("oracle", Severity::Major);
        r.attributes.remove("client");
        match svc.create_ticket(r) {
            Err(IncidentError::MissingAttributes(m)) => assert_eq!(m, vec!["client".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oracle_goes_to_db_team() {
        let (svc, _) = service();
        svc.set_rules(vec![
            TriageRule::new(Selector::all().and(Predicate::eq("application", "oracle")), "DB"),
            TriageRule::default_rule("infra"),
        ])
        .unwrap();
        let t = svc.create_ticket(req("oracle", Severity::Major)).unwrap().ticket;
        assert_eq!(t.team.as_deref(), Some("DB"));
        assert_eq!(t.status, Status::Triaged);
        let t = svc.create_ticket(req("nginx", Severity::Major)).unwrap().ticket;
        assert_eq!(t.team.as_deref(), Some("infra"));
    }

    #[test]
    fn rules_need_one_trailing_default() {
        let db = TriageRule::new(Selector::all().and(Predicate::eq("application", "oracle")), "DB");
        assert!(validate_rules(&[db.clone()]).is_err());
        assert!(validate_rules(&[TriageRule::default_rule("a"), db.clone()]).is_err());
        assert!(validate_rules(&[TriageRule::default_rule("a"), TriageRule::default_rule("b")]).is_err());
        assert!(validate_rules(&[db, TriageRule::default_rule("a")]).is_ok());
    }

    #[test]
    fn classifier_is_consulted_only_when_deferred() {
        struct Fixed;
        impl Classifier for Fixed {
            fn suggest(&self, _: &IncidentTicket) -> Option<String> {
                Some("ml".into())
            }
        }
        let (svc, _) = service();
        svc.set_classifier(Some(Arc::new(Fixed)));
        let t = svc.create_ticket(req("x", Severity::Info)).unwrap().ticket;
        assert_eq!(t.team.as_deref(), Some(DEFAULT_TEAM));
        let mut d = TriageRule::default_rule("fallback");
        d.defer_to_classifier = true;
        svc.set_rules(vec![d]).unwrap();
        let t = svc.create_ticket(req("x", Severity::Info)).unwrap().ticket;
        assert_eq!(t.team.as_deref(), Some("ml"));
    }

    #[test]
    fn alert_tickets_are_idempotent() {
        let (svc, _) = service();
        let mut r = req("x", Severity::Critical);
        r.source = TicketSource::Alert { instance: "K".into() };
        let a = svc.create_ticket(r.clone()).unwrap();
        let b = svc.create_ticket(r).unwrap();
        assert!(a.created && !b.created);
        assert_eq!(a.ticket.ticket_id, b.ticket.ticket_id);
        assert_eq!(svc.len(), 1);
    }

    #[test]
    fn lifecycle_and_comments() {
        let (svc, clock) = service();
        let id = svc.create_ticket(req("x", Severity::Minor)).unwrap().ticket.ticket_id;
        let err = svc.transition(&id, Status::Closed, "bob", None).unwrap_err();
        assert!(err.to_string().contains("allowed: in_progress"), "{err}");
        svc.transition(&id, Status::InProgress, "bob", None).unwrap();
        clock.advance(10);
        svc.add_comment(&id, "bob", "palliative: restarted listener", None).unwrap();
        svc.transition(&id, Status::Resolved, "bob", None).unwrap();
        svc.transition(&id, Status::InProgress, "bob", None).unwrap();
        svc.transition(&id, Status::Resolved, "bob", None).unwrap();
        let t = svc.transition(&id, Status::Closed, "bob", None).unwrap();
        assert_eq!(t.replay_status().unwrap(), Status::Closed);
        assert!(t.comments.iter().any(Comment::is_palliative));
        assert!(matches!(
            svc.add_comment(&id, "bob", "late", None),
            Err(IncidentError::Closed(_))
        ));
    }

    #[test]
    fn stale_revision_conflicts() {
        let (svc, _) = service();
        let t = svc.create_ticket(req("x", Severity::Minor)).unwrap().ticket;
        svc.add_comment(&t.ticket_id, "a", "one", Some(t.revision)).unwrap();
        assert!(matches!(
            svc.add_comment(&t.ticket_id, "b", "two", Some(t.revision)),
            Err(IncidentError::Conflict { .. })
        ));
    }

    #[test]
    fn comment_timestamps_never_go_back() {
        let (svc, clock) = service();
        let id = svc.create_ticket(req("x", Severity::Minor)).unwrap().ticket.ticket_id;
        clock.set(5_000);
        svc.add_comment(&id, "a", "later", None).unwrap();
        clock.set(4_000);
        let t = svc.add_comment(&id, "a", "clock stepped back", None).unwrap();
        let ts: Vec<_> = t.comments.iter().map(|c| c.ts).collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]), "{ts:?}");
    }

    #[test]
    fn resolution_link_is_idempotent() {
        let (svc, _) = service();
        assert!(svc.link_alert_resolution("nope", 5).unwrap().is_none());
        let mut r = req("x", Severity::Critical);
        r.source = TicketSource::Alert { instance: "K".into() };
        svc.create_ticket(r).unwrap();
        assert!(svc.link_alert_resolution("K", 5).unwrap().is_some());
        assert!(svc.link_alert_resolution("K", 5).unwrap().is_none());
        let t = svc.ticket_for_instance("K").unwrap();
        assert_eq!(t.comments.iter().filter(|c| c.text.contains("resolved at")).count(), 1);
        assert_eq!(t.status, Status::Triaged);
    }

    #[test]
    fn reload_from_meta() {
        let meta = Arc::new(MetadataStore::in_memory());
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(1));
        let svc = IncidentService::open(meta.clone(), clock.clone());
        let mut r = req("x", Severity::Critical);
        r.source = TicketSource::Alert { instance: "K".into() };
        let first = svc.create_ticket(r.clone()).unwrap().ticket;
        drop(svc);
        let svc = IncidentService::open(meta, clock);
        assert!(!svc.create_ticket(r).unwrap().created);
        let second = svc.create_ticket(req("y", Severity::Info)).unwrap().ticket;
        assert_ne!(first.ticket_id, second.ticket_id);
    }
}
