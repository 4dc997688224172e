//! The `miniops` admin CLI. Everything except `serve`, `sim` and `routes`
//! goes through the gateway's `/api` routes.
//!
//! Exit codes: 0 success, 1 user error (bad arguments, 4xx), 2 transport
//! error (unreachable gateway, 5xx).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use reqwest::blocking::Client as Http;
use reqwest::Method;
use serde_json::{json, Value};

use crate::{routes, ApiConfig, Gateway, Stack, DEFAULT_ADDR, DEFAULT_AGENT_ADDR};

#[derive(Debug)]
pub enum CliError {
    User(String),
    Transport(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Transport(_) => 2,
        }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser, Debug)]
#[command(name = "miniops", version, about = "Admin CLI for the miniops stack")]
pub struct Cli {
    /// Gateway base URL (default http://$MINIOPS_GATEWAY_ADDR).
    #[arg(long, global = true, env = "MINIOPS_GATEWAY_URL")]
    gateway: Option<String>,
    /// Bearer token for mutating calls.
    #[arg(long, global = true, env = "MINIOPS_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Collection templates and agents.
    Fleet {
        #[command(subcommand)]
        cmd: FleetCmd,
    },
    /// Alert rules and instances.
    Alerts {
        #[command(subcommand)]
        cmd: AlertsCmd,
    },
    /// Incident tickets.
    Tickets {
        #[command(subcommand)]
        cmd: TicketsCmd,
    },
    /// Run a mini-SQL query and print the result table.
    Query { sql: String },
    /// Fleet simulation against a private local pipeline.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Per-subsystem status.
    Health,
    /// Run the gateway with every subsystem in-process.
    Serve {
        /// Persist queue, store and metadata here (default: ephemeral).
        #[arg(long, env = "MINIOPS_DATA_DIR")]
        data_dir: Option<PathBuf>,
        /// Listener for agents (config polls and batch delivery).
        #[arg(long, env = "MINIOPS_AGENT_ADDR", default_value = DEFAULT_AGENT_ADDR)]
        agent_addr: String,
        /// Static console build served at `/`.
        #[arg(long)]
        console_dir: Option<PathBuf>,
    },
    /// Print the gateway route table.
    Routes {
        #[arg(long)]
        markdown: bool,
    },
}

#[derive(Subcommand, Debug)]
enum FleetCmd {
    /// Create or replace a template from a JSON file.
    Plan { file: PathBuf },
    /// Remove a template.
    Unplan { template_id: String },
    /// List templates and agents.
    List,
    /// Agents matched by a selector, e.g. `role=db,client=acme`.
    Targets { selector: String },
}

#[derive(Subcommand, Debug)]
enum AlertsCmd {
    List {
        #[arg(long)]
        state: Option<String>,
    },
    /// Dry-run one evaluation of the rule in a JSON file.
    Test { file: PathBuf },
}

#[derive(Subcommand, Debug)]
enum TicketsCmd {
    List {
        #[arg(long)]
        team: Option<String>,
        #[arg(long)]
        status: Option<String>,
        /// Substring filter on title and description.
        #[arg(long)]
        q: Option<String>,
    },
    Show {
        ticket_id: String,
    },
    Comment {
        ticket_id: String,
        text: String,
        #[arg(long, env = "USER", default_value = "cli")]
        author: String,
    },
    /// Move a ticket to another status.
    Move {
        ticket_id: String,
        status: String,
        #[arg(long, env = "USER", default_value = "cli")]
        actor: String,
    },
}

#[derive(Subcommand, Debug)]
enum SimCmd {
    Run {
        scenario: PathBuf,
        #[arg(long)]
        accel: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    0
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    1
                }
            };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let (CliError::User(m) | CliError::Transport(m)) = &e;
            let _ = writeln!(err, "error: {m}");
            e.code()
        }
    }
}

struct Client {
    base: String,
    token: Option<String>,
    http: Http,
}

fn detail(body: &Value) -> String {
    let mut msg = body["error"]
        .as_str()
        .unwrap_or("request failed")
        .to_string();
    for key in ["allowed", "missing"] {
        if let Some(list) = body[key].as_array() {
            let items: Vec<&str> = list.iter().filter_map(Value::as_str).collect();
            msg.push_str(&format!(" ({key}: {})", items.join(", ")));
        }
    }
    msg
}

impl Client {
    fn new(cli: &Cli) -> Client {
        let base = cli.gateway.clone().unwrap_or_else(|| {
            let addr =
                std::env::var("MINIOPS_GATEWAY_ADDR").unwrap_or_else(|_| DEFAULT_ADDR.into());
            format!("http://{addr}")
        });
        Client {
            base: base.trim_end_matches('/').to_string(),
            token: cli.token.clone().filter(|t| !t.is_empty()),
            http: Http::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("http client"),
        }
    }

    fn send(
        &self,
        method: Method,
        path: &str,
        query: &[(&str, &str)],
        body: Option<&Value>,
    ) -> Result<Value, CliError> {
        let mut req = self
            .http
            .request(method, format!("{}/api{path}", self.base))
            .query(query);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().map_err(|e| {
            CliError::Transport(format!("cannot reach gateway at {}: {e}", self.base))
        })?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| CliError::Transport(format!("reading response: {e}")))?;
        let body: Value = if text.trim().is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        if status.is_success() {
            Ok(body)
        } else if status.is_client_error() {
            Err(CliError::User(format!(
                "{} ({})",
                detail(&body),
                status.as_u16()
            )))
        } else {
            Err(CliError::Transport(format!(
                "{} ({})",
                detail(&body),
                status.as_u16()
            )))
        }
    }

    fn get(&self, path: &str, query: &[(&str, &str)]) -> Result<Value, CliError> {
        self.send(Method::GET, path, query, None)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, CliError> {
        self.send(Method::POST, path, &[], Some(body))
    }
}

fn read_json(path: &PathBuf) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::User(format!("{}: invalid JSON: {e}", path.display())))
}

fn io(e: std::io::Error) -> CliError {
    CliError::Transport(format!("writing output: {e}"))
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

/// Left-aligned text table.
pub fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}", w = *w))
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers);
    out.push_str(&line(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
    ));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn emit(
    out: &mut dyn Write,
    json_mode: bool,
    v: &Value,
    human: impl FnOnce() -> String,
) -> CliResult {
    if json_mode {
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(v).unwrap_or_default()
        )
        .map_err(io)
    } else {
        write!(out, "{}", human()).map_err(io)
    }
}

fn strings(headers: &[&str]) -> Vec<String> {
    headers.iter().map(|s| s.to_string()).collect()
}

fn ticket_rows(list: &Value) -> Vec<Vec<String>> {
    list.as_array()
        .map(|ts| {
            ts.iter()
                .map(|t| {
                    vec![
                        cell(&t["ticket_id"]),
                        cell(&t["severity"]),
                        cell(&t["status"]),
                        cell(&t["team"]),
                        cell(&t["assignee"]),
                        cell(&t["title"]),
                    ]
                })
                .collect()
        })
        .unwrap_or_default()
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult {
    let json_mode = cli.json;
    let c = Client::new(&cli);
    match cli.cmd {
        Cmd::Fleet { cmd } => match cmd {
            FleetCmd::Plan { file } => {
                let doc = read_json(&file)?;
                let v = c.post("/templates", &doc)?;
                emit(out, json_mode, &v, || {
                    format!(
                        "planned {} ({} agents affected)\n",
                        cell(&doc["template_id"]),
                        cell(&v["affected"])
                    )
                })
            }
            FleetCmd::Unplan { template_id } => {
                let v = c.send(
                    Method::DELETE,
                    &format!("/templates/{template_id}"),
                    &[],
                    None,
                )?;
                emit(out, json_mode, &v, || format!("unplanned {template_id}\n"))
            }
            FleetCmd::List => {
                let templates = c.get("/templates", &[])?;
                let agents = c.get("/agents", &[])?;
                let v = json!({"templates": templates["templates"], "agents": agents["agents"]});
                emit(out, json_mode, &v, || {
                    let t: Vec<Vec<String>> = v["templates"]
                        .as_array()
                        .into_iter()
                        .flatten()
                        .map(|t| {
                            vec![
                                cell(&t["template_id"]),
                                cell(&t["selector"]),
                                cell(&t["task"]["task_id"]),
                            ]
                        })
                        .collect();
                    let a: Vec<Vec<String>> = v["agents"]
                        .as_array()
                        .into_iter()
                        .flatten()
                        .map(|a| {
                            vec![
                                cell(&a["server_id"]),
                                cell(&a["client_name"]),
                                cell(&a["role"]),
                                cell(&a["version"]),
                            ]
                        })
                        .collect();
                    render_table(&strings(&["TEMPLATE", "SELECTOR", "TASK"]), &t)
                        + "\n"
                        + &render_table(&strings(&["AGENT", "CLIENT", "ROLE", "VERSION"]), &a)
                })
            }
            FleetCmd::Targets { selector } => {
                let v = c.get("/agents", &[("selector", &selector)])?;
                emit(out, json_mode, &v, || {
                    v["agents"]
                        .as_array()
                        .into_iter()
                        .flatten()
                        .map(|a| cell(&a["server_id"]) + "\n")
                        .collect()
                })
            }
        },
        Cmd::Alerts { cmd } => match cmd {
            AlertsCmd::List { state } => {
                let q: Vec<(&str, &str)> =
                    state.as_deref().map(|s| ("state", s)).into_iter().collect();
                let v = c.get("/alerts", &q)?;
                emit(out, json_mode, &v, || {
                    let rows: Vec<Vec<String>> = v["alerts"]
                        .as_array()
                        .into_iter()
                        .flatten()
                        .map(|a| {
                            vec![
                                cell(&a["rule_id"]),
                                cell(&a["group"]),
                                cell(&a["state"]),
                                cell(&a["severity"]),
                                cell(&a["last_value"]),
                            ]
                        })
                        .collect();
                    render_table(
                        &strings(&["RULE", "GROUP", "STATE", "SEVERITY", "VALUE"]),
                        &rows,
                    )
                })
            }
            AlertsCmd::Test { file } => {
                let v = c.post("/rules/test", &read_json(&file)?)?;
                emit(out, json_mode, &v, || {
                    let rows: Vec<Vec<String>> = v["transitions"]
                        .as_array()
                        .into_iter()
                        .flatten()
                        .map(|t| {
                            vec![
                                cell(&t["group"]),
                                cell(&t["from"]),
                                cell(&t["to"]),
                                cell(&t["value"]),
                            ]
                        })
                        .collect();
                    if rows.is_empty() {
                        "no transitions\n".into()
                    } else {
                        render_table(&strings(&["GROUP", "FROM", "TO", "VALUE"]), &rows)
                    }
                })
            }
        },
        Cmd::Tickets { cmd } => match cmd {
            TicketsCmd::List { team, status, q } => {
                let v = match (&team, &status, &q) {
                    (Some(t), None, None) => {
                        let mut v = c.get(&format!("/teams/{t}/queue"), &[])?;
                        v = json!({"tickets": v["tickets"]});
                        v
                    }
                    _ => {
                        let mut params = Vec::new();
                        for (k, val) in [("team", &team), ("status", &status), ("q", &q)] {
                            if let Some(val) = val {
                                params.push((k, val.as_str()));
                            }
                        }
                        c.get("/tickets", &params)?
                    }
                };
                emit(out, json_mode, &v, || {
                    render_table(
                        &strings(&["TICKET", "SEVERITY", "STATUS", "TEAM", "ASSIGNEE", "TITLE"]),
                        &ticket_rows(&v["tickets"]),
                    )
                })
            }
            TicketsCmd::Show { ticket_id } => {
                let v = c.get(&format!("/tickets/{ticket_id}"), &[])?;
                emit(out, json_mode, &v, || {
                    let mut s = format!(
                        "{}  {}\nstatus: {}  severity: {}  team: {}  assignee: {}  revision: {}\n",
                        cell(&v["ticket_id"]),
                        cell(&v["title"]),
                        cell(&v["status"]),
                        cell(&v["severity"]),
                        cell(&v["team"]),
                        cell(&v["assignee"]),
                        cell(&v["revision"]),
                    );
                    if let Some(attrs) = v["attributes"].as_object() {
                        for (k, val) in attrs {
                            s.push_str(&format!("  {k}: {}\n", cell(val)));
                        }
                    }
                    if let Some(d) = v["description"].as_str().filter(|d| !d.is_empty()) {
                        s.push_str(&format!("\n{d}\n"));
                    }
                    for cm in v["comments"].as_array().into_iter().flatten() {
                        s.push_str(&format!(
                            "\n[{}] {}: {}",
                            cell(&cm["ts"]),
                            cell(&cm["author"]),
                            cell(&cm["text"])
                        ));
                    }
                    s.push('\n');
                    s
                })
            }
            TicketsCmd::Comment {
                ticket_id,
                text,
                author,
            } => {
                let v = c.post(
                    &format!("/tickets/{ticket_id}/comments"),
                    &json!({"author": author, "text": text}),
                )?;
                emit(out, json_mode, &v, || {
                    format!(
                        "commented on {ticket_id} (revision {})\n",
                        cell(&v["revision"])
                    )
                })
            }
            TicketsCmd::Move {
                ticket_id,
                status,
                actor,
            } => {
                let v = c.post(
                    &format!("/tickets/{ticket_id}/transition"),
                    &json!({"status": status, "actor": actor}),
                )?;
                emit(out, json_mode, &v, || {
                    format!("{ticket_id} is now {}\n", cell(&v["status"]))
                })
            }
        },
        Cmd::Query { sql } => {
            let v = c
                .post("/query", &json!({"sql": sql}))
                .map_err(|e| match e {
                    CliError::User(m) => {
                        let col = m
                            .split("column ")
                            .nth(1)
                            .and_then(|r| r.split(|ch: char| !ch.is_ascii_digit()).next())
                            .and_then(|n| n.parse::<usize>().ok());
                        match col {
                            Some(col) if col >= 1 => {
                                CliError::User(format!("{m}\n  {sql}\n  {}^", " ".repeat(col - 1)))
                            }
                            _ => CliError::User(m),
                        }
                    }
                    t => t,
                })?;
            emit(out, json_mode, &v, || {
                let headers: Vec<String> = v["columns"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(cell)
                    .collect();
                let rows: Vec<Vec<String>> = v["rows"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|r| r.as_array().into_iter().flatten().map(cell).collect())
                    .collect();
                render_table(&headers, &rows) + &format!("({} rows)\n", rows.len())
            })
        }
        Cmd::Health => {
            let v = c.get("/health", &[])?;
            emit(out, json_mode, &v, || {
                let mut s = format!("status: {}\n", cell(&v["status"]));
                for (k, st) in v["subsystems"].as_object().into_iter().flatten() {
                    s.push_str(&format!("  {k:<13}{}\n", cell(st)));
                }
                s.push_str(&format!(
                    "store partitions: {}\n",
                    cell(&v["store_partitions"])
                ));
                for l in v["queue_lag"].as_array().into_iter().flatten() {
                    s.push_str(&format!(
                        "queue lag {}/{}: {}\n",
                        cell(&l["topic"]),
                        cell(&l["group"]),
                        cell(&l["lag"])
                    ));
                }
                s
            })
        }
        Cmd::Sim { cmd } => match cmd {
            SimCmd::Run {
                scenario,
                accel,
                report,
            } => {
                let doc = read_json(&scenario)?;
                let s: miniops_fleetsim::Scenario = serde_json::from_value(doc)
                    .map_err(|e| CliError::User(format!("scenario: {e}")))?;
                s.validate()
                    .map_err(|e| CliError::User(format!("scenario: {e}")))?;
                let opts = miniops_fleetsim::RunOptions {
                    accel,
                    ..Default::default()
                };
                let outcome = miniops_fleetsim::run_scenario(s, &opts)
                    .map_err(|e| CliError::Transport(format!("simulation failed: {e:#}")))?;
                let v = serde_json::to_value(&outcome.report).unwrap_or_default();
                if let Some(path) = report {
                    std::fs::write(&path, serde_json::to_vec_pretty(&v).unwrap_or_default())
                        .map_err(|e| CliError::User(format!("writing {}: {e}", path.display())))?;
                }
                let r = &outcome.report;
                emit(out, json_mode, &v, || {
                    format!(
                        "scenario {}: produced {} stored {} evicted {} unexplained {} reconciled {}\n",
                        r.scenario, r.produced_records, r.stored_distinct, r.evicted_records, r.unexplained_missing, r.reconciled
                    )
                })?;
                if r.reconciled {
                    Ok(())
                } else {
                    Err(CliError::User("reconciliation failed".into()))
                }
            }
        },
        Cmd::Routes { markdown } => {
            if markdown {
                write!(out, "{}", routes::render_markdown()).map_err(io)
            } else {
                let v = json!({"routes": routes::ROUTES});
                emit(out, true, &v, String::new)
            }
        }
        Cmd::Serve {
            data_dir,
            agent_addr,
            console_dir,
        } => serve(data_dir, &agent_addr, console_dir),
    }
}

fn serve(data_dir: Option<PathBuf>, agent_addr: &str, console_dir: Option<PathBuf>) -> CliResult {
    let mut config = ApiConfig::from_env().map_err(|e| CliError::User(e.to_string()))?;
    config.console_dir = console_dir;
    let stack = Arc::new(
        Stack::open(data_dir.as_deref(), Arc::new(miniops_core::SystemClock))
            .map_err(|e| CliError::User(format!("{e:#}")))?,
    );
    let mut upstreams = stack.upstreams();
    for (s, url) in &config.remote {
        upstreams.set(*s, crate::Upstream::Remote(url.clone()));
    }
    let running = stack.spawn_background(Duration::from_millis(200), Duration::from_secs(1));
    let addr = config.addr;
    let gateway = Gateway::new(config, upstreams);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Transport(e.to_string()))?;
    let result = rt.block_on(async {
        let api = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Transport(format!("binding {addr}: {e}")))?;
        let agents = tokio::net::TcpListener::bind(agent_addr)
            .await
            .map_err(|e| CliError::Transport(format!("binding {agent_addr}: {e}")))?;
        tracing::info!(api = %addr, agents = %agent_addr, "serving");
        let (tx, _) = tokio::sync::broadcast::channel::<()>(1);
        let stop = |tx: &tokio::sync::broadcast::Sender<()>| {
            let mut rx = tx.subscribe();
            async move {
                let _ = rx.recv().await;
            }
        };
        let api_task = tokio::spawn(crate::serve(api, crate::app(gateway), stop(&tx)));
        let agent_task = tokio::spawn(crate::serve(agents, stack.agent_router(), stop(&tx)));
        let _ = tokio::signal::ctrl_c().await;
        let _ = tx.send(());
        let _ = api_task.await;
        let _ = agent_task.await;
        Ok(())
    });
    running.store(false, std::sync::atomic::Ordering::SeqCst);
    stack.maintain();
    result
}
