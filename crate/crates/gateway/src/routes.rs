//! The route table. Dispatch, token checks and the generated route listing
//! all read from it, so the three cannot drift apart.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subsystem {
    Controlplane,
    Ingester,
    Queue,
    Store,
    Alerting,
    Incidents,
    Gateway,
}

impl Subsystem {
    pub const UPSTREAMS: [Subsystem; 6] = [
        Subsystem::Controlplane,
        Subsystem::Ingester,
        Subsystem::Queue,
        Subsystem::Store,
        Subsystem::Alerting,
        Subsystem::Incidents,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subsystem::Controlplane => "controlplane",
            Subsystem::Ingester => "ingester",
            Subsystem::Queue => "queue",
            Subsystem::Store => "store",
            Subsystem::Alerting => "alerting",
            Subsystem::Incidents => "incidents",
            Subsystem::Gateway => "gateway",
        }
    }

    /// Cheap read used by the health check.
    pub fn probe_path(self) -> &'static str {
        match self {
            Subsystem::Controlplane => "/v1/templates",
            Subsystem::Ingester => "/v1/ingest/stats",
            Subsystem::Queue => "/v1/queue",
            Subsystem::Store => "/v1/store/stats",
            Subsystem::Alerting => "/v1/rules",
            Subsystem::Incidents => "/v1/triage-rules",
            Subsystem::Gateway => "/api/health",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Route {
    pub method: &'static str,
    /// Path under `/api`; `{x}` matches one segment.
    pub path: &'static str,
    pub upstream: Subsystem,
    /// Needs the bearer token.
    pub mutating: bool,
    pub summary: &'static str,
}

const fn r(
    method: &'static str,
    path: &'static str,
    upstream: Subsystem,
    mutating: bool,
    summary: &'static str,
) -> Route {
    Route {
        method,
        path,
        upstream,
        mutating,
        summary,
    }
}

use Subsystem::*;

pub const ROUTES: &[Route] = &[
    r(
        "GET",
        "/health",
        Gateway,
        false,
        "per-subsystem status, queue lag per group, store partition count",
    ),
    r("GET", "/routes", Gateway, false, "this table as JSON"),
    r(
        "POST",
        "/agents",
        Controlplane,
        true,
        "register an agent (server descriptor)",
    ),
    r(
        "GET",
        "/agents",
        Controlplane,
        false,
        "list agents, optionally `?selector=`",
    ),
    r(
        "POST",
        "/agents/resolve",
        Controlplane,
        false,
        "resolve a selector document to agents",
    ),
    r(
        "GET",
        "/agents/{id}/tasks",
        Controlplane,
        false,
        "compiled task set for one agent",
    ),
    r(
        "GET",
        "/templates",
        Controlplane,
        false,
        "list task templates",
    ),
    r(
        "POST",
        "/templates",
        Controlplane,
        true,
        "plan (create or replace) a task template",
    ),
    r(
        "DELETE",
        "/templates/{id}",
        Controlplane,
        true,
        "unplan a task template",
    ),
    r(
        "POST",
        "/executions",
        Controlplane,
        true,
        "record an execution log",
    ),
    r(
        "GET",
        "/executions",
        Controlplane,
        false,
        "query execution logs `?task_id=&server_id=&from=&to=`",
    ),
    r("POST", "/batch", Ingester, true, "deliver one agent batch"),
    r("GET", "/ingest/stats", Ingester, false, "ingester counters"),
    r(
        "GET",
        "/queue",
        Queue,
        false,
        "per-topic offsets, segments and group lag",
    ),
    r(
        "POST",
        "/queue/{topic}",
        Queue,
        true,
        "publish one raw message",
    ),
    r("GET", "/queue/{topic}", Queue, false, "poll `?group=&max=`"),
    r(
        "POST",
        "/queue/{topic}/commit",
        Queue,
        true,
        "commit a group offset",
    ),
    r(
        "POST",
        "/queue/{topic}/groups",
        Queue,
        true,
        "register a consumer group",
    ),
    r("POST", "/query", Store, false, "run a mini-SQL query"),
    r(
        "POST",
        "/query/parse",
        Store,
        false,
        "parse and canonicalize a mini-SQL query",
    ),
    r("POST", "/logs/query", Store, false, "filter log events"),
    r("POST", "/logs", Store, true, "write log events"),
    r("POST", "/points", Store, true, "write metric points"),
    r(
        "GET",
        "/store/stats",
        Store,
        false,
        "partition and series counters",
    ),
    r("GET", "/panels", Store, false, "list saved panels"),
    r(
        "POST",
        "/panels",
        Store,
        true,
        "save a panel (query is validated first)",
    ),
    r("DELETE", "/panels/{id}", Store, true, "delete a panel"),
    r("GET", "/rules", Alerting, false, "list alert rules"),
    r(
        "POST",
        "/rules",
        Alerting,
        true,
        "create or replace an alert rule",
    ),
    r(
        "POST",
        "/rules/test",
        Alerting,
        false,
        "dry-run one evaluation of a rule",
    ),
    r(
        "DELETE",
        "/rules/{id}",
        Alerting,
        true,
        "delete an alert rule",
    ),
    r(
        "GET",
        "/alerts",
        Alerting,
        false,
        "alert instances `?state=` plus engine counters",
    ),
    r("POST", "/tickets", Incidents, true, "create a ticket"),
    r(
        "GET",
        "/tickets",
        Incidents,
        false,
        "list tickets `?team=&status=&q=`",
    ),
    r("GET", "/tickets/{id}", Incidents, false, "one ticket"),
    r(
        "POST",
        "/tickets/{id}/transition",
        Incidents,
        true,
        "move a ticket to another status",
    ),
    r(
        "POST",
        "/tickets/{id}/comments",
        Incidents,
        true,
        "append a comment",
    ),
    r(
        "POST",
        "/tickets/{id}/assign",
        Incidents,
        true,
        "set or clear the assignee",
    ),
    r(
        "GET",
        "/teams/{team}/queue",
        Incidents,
        false,
        "ranked open tickets of one team",
    ),
    r(
        "GET",
        "/triage-rules",
        Incidents,
        false,
        "ordered triage rules",
    ),
    r(
        "POST",
        "/triage-rules",
        Incidents,
        true,
        "replace the triage rules",
    ),
];

fn path_matches(pattern: &str, path: &str) -> bool {
    let mut p = pattern.split('/');
    let mut q = path.split('/');
    loop {
        match (p.next(), q.next()) {
            (None, None) => return true,
            (Some(a), Some(b)) => {
                let wildcard = a.starts_with('{') && a.ends_with('}');
                if (wildcard && b.is_empty()) || (!wildcard && a != b) {
                    return false;
                }
            }
            _ => return false,
        }
    }
}

pub enum Lookup {
    Found(&'static Route),
    /// The path exists under other methods.
    WrongMethod(Vec<&'static str>),
    NotFound,
}

/// `path` is relative to `/api`. Literal segments win over `{x}` when both
/// match (`/rules/test` before `/rules/{id}`).
pub fn lookup(method: &str, path: &str) -> Lookup {
    let path = if path.len() > 1 {
        path.trim_end_matches('/')
    } else {
        path
    };
    let mut hits: Vec<&'static Route> = ROUTES
        .iter()
        .filter(|r| path_matches(r.path, path))
        .collect();
    if hits.is_empty() {
        return Lookup::NotFound;
    }
    hits.sort_by_key(|r| r.path.matches('{').count());
    match hits.iter().find(|r| r.method.eq_ignore_ascii_case(method)) {
        Some(r) => Lookup::Found(r),
        None => Lookup::WrongMethod(hits.iter().map(|r| r.method).collect()),
    }
}

/// Markdown listing written to `docs/routes.md`.
pub fn render_markdown() -> String {
    let mut out = String::from(
        "# Gateway routes\n\n\
         Generated by `miniops routes --markdown`; do not edit by hand.\n\n\
         Every route is served under `/api`. Routes marked as mutating need\n\
         `Authorization: Bearer $MINIOPS_TOKEN`. Responses carry `x-request-id`.\n\n\
         | Method | Path | Upstream | Mutating | Summary |\n\
         |---|---|---|---|---|\n",
    );
    for r in ROUTES {
        out.push_str(&format!(
            "| {} | `/api{}` | {} | {} | {} |\n",
            r.method,
            r.path,
            r.upstream.name(),
            if r.mutating { "yes" } else { "no" },
            r.summary
        ));
    }
    out
}
