mod common;

use common::*;
use serde_json::{json, Value};

fn miniops(url: &str, args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["miniops", "--gateway", url, "--token", TOKEN];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = miniops_gateway::cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn running() -> (std::sync::Arc<miniops_gateway::Stack>, Served) {
    let s = stack();
    let served = serve(gateway(&s));
    (s, served)
}

fn seed_points(s: &miniops_gateway::Stack) {
    let pts: Vec<_> = (0..6)
        .map(|i| {
            miniops_tsstore::MetricPoint::new(
                miniops_tsstore::SeriesKey::new(
                    "cpu.load",
                    [("server", if i % 2 == 0 { "s1" } else { "s2" })],
                ),
                T0 - 6000 + i * 1000,
                i as f64,
            )
        })
        .collect();
    s.store.metrics.write_points(&pts).unwrap();
}

#[test]
fn query_prints_table() {
    let (s, g) = running();
    seed_points(&s);
    let (code, out, err) = miniops(
        &g.url(),
        &["query", "SELECT last(value) FROM \"cpu.load\" WHERE server='s1' AND ts >= 0 AND ts < 9999999999999"],
    );
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("time"), "{out}");
    assert!(lines[1].starts_with("----"));
    assert!(lines[2].ends_with(" 4.0"), "{out}");
    assert_eq!(lines.last().unwrap(), &"(1 rows)");
}

#[test]
fn bad_sql_exits_1_with_column() {
    let (_s, g) = running();
    let sql = "SELECT avg(value) WHERE ts >= 0 AND ts < 1";
    let (code, _, err) = miniops(&g.url(), &["query", sql]);
    assert_eq!(code, 1);
    assert!(err.contains("column 19"), "{err}");
    let caret = err.lines().last().unwrap();
    let sql_line = err.lines().rev().nth(1).unwrap();
    let offset = sql_line.find(sql).unwrap();
    assert_eq!(caret.find('^').unwrap() - offset, 18);
    assert_eq!(&sql[18..23], "WHERE");
}

#[test]
fn health_json_parses() {
    let (_s, g) = running();
    let (code, out, _) = miniops(&g.url(), &["--json", "health"]);
    assert_eq!(code, 0);
    let h: miniops_gateway::HealthReport = serde_json::from_str(&out).unwrap();
    assert_eq!(h.status, "up");
    let (code, out, _) = miniops(&g.url(), &["health"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("status: up"));
}

#[test]
fn usage_and_transport_errors() {
    let (code, _, err) = miniops("http://127.0.0.1:1", &["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, _) = miniops("http://127.0.0.1:1", &["tickets"]);
    assert_eq!(code, 1);
    let (code, _, err) = miniops(&dead_url(), &["health"]);
    assert_eq!(code, 2, "{err}");
    let (code, out, _) = miniops(&dead_url(), &["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("tickets"));
}

#[test]
fn upstream_down_is_transport_error() {
    let s = stack();
    let mut ups = s.upstreams();
    ups.set(miniops_gateway::Subsystem::Incidents, remote(&dead_url()));
    let g = serve(gateway_over(ups));
    let (code, _, err) = miniops(&g.url(), &["tickets", "show", "INC-000001"]);
    assert_eq!(code, 2);
    assert!(err.contains("incidents"), "{err}");
}

#[test]
fn ticket_workflow() {
    let (s, g) = running();
    let created = s
        .incidents
        .create_ticket(
            serde_json::from_value(json!({
                "title": "db-1 disk",
                "severity": "critical",
                "attributes": {"server": "db-1", "application": "erp", "client": "acme", "occurred_at": "t"}
            }))
            .unwrap(),
        )
        .unwrap();
    let id = created.ticket.ticket_id.clone();
    let (code, out, _) = miniops(&g.url(), &["tickets", "list", "--team", "operations"]);
    assert_eq!(code, 0);
    assert!(out.contains(&id), "{out}");
    let (code, out, _) = miniops(
        &g.url(),
        &["--json", "tickets", "list", "--team", "operations"],
    );
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["tickets"][0]["ticket_id"], json!(id));

    let (code, _, err) = miniops(
        &g.url(),
        &["tickets", "comment", &id, "looking", "--author", "ana"],
    );
    assert_eq!(code, 0, "{err}");
    let (code, out, _) = miniops(
        &g.url(),
        &["tickets", "move", &id, "in_progress", "--actor", "ana"],
    );
    assert_eq!(code, 0);
    assert!(out.contains("in_progress"));
    let (code, _, err) = miniops(
        &g.url(),
        &["tickets", "move", &id, "triaged", "--actor", "ana"],
    );
    assert_eq!(code, 1);
    assert!(err.contains("allowed: resolved"), "{err}");
    let (code, out, _) = miniops(&g.url(), &["tickets", "show", &id]);
    assert_eq!(code, 0);
    assert!(out.contains("ana: looking"), "{out}");
    assert!(out.contains("status: in_progress"));

    // Without a token the gateway refuses the write.
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = miniops_gateway::cli::run(
        [
            "miniops",
            "--gateway",
            &g.url(),
            "--token",
            "",
            "tickets",
            "comment",
            &id,
            "x",
        ],
        &mut o,
        &mut e,
    );
    assert_eq!(code, 1);
    assert!(String::from_utf8(e).unwrap().contains("401"));
    let (code, _, _) = miniops(&g.url(), &["tickets", "show", "INC-424242"]);
    assert_eq!(code, 1);
}

#[test]
fn fleet_and_alerts() {
    let (s, g) = running();
    for (id, role) in [("s1", "dbms"), ("s2", "web")] {
        s.controlplane
            .register_agent(
                serde_json::from_value(json!({"server_id": id, "client_name": "A", "role": role}))
                    .unwrap(),
            )
            .unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let template = dir.path().join("t.json");
    std::fs::write(
        &template,
        json!({
            "template_id": "table-size",
            "task": {
                "task_id": "", "kind": "exec",
                "spec": {"command": "echo 1", "parse": "scalar"},
                "schedule": {"period_seconds": 600, "jitter_seconds": 30},
                "timeout_ms": 5000, "output_topic": "metrics.db", "output_kind": "metric"
            },
            "selector": [{"field": "role", "op": "eq", "value": "dbms"}]
        })
        .to_string(),
    )
    .unwrap();
    let t = template.to_str().unwrap();
    let (code, out, err) = miniops(&g.url(), &["fleet", "plan", t]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("planned table-size (1 agents affected)"));
    let (code, out, _) = miniops(&g.url(), &["fleet", "targets", "role=dbms"]);
    assert_eq!((code, out.as_str()), (0, "s1\n"));
    let (code, _, _) = miniops(&g.url(), &["fleet", "targets", "colour=red"]);
    assert_eq!(code, 1);
    let (code, out, _) = miniops(&g.url(), &["fleet", "list"]);
    assert_eq!(code, 0);
    assert!(out.contains("table-size") && out.contains("s2"));
    let (code, _, _) = miniops(&g.url(), &["fleet", "unplan", "table-size"]);
    assert_eq!(code, 0);
    let (code, _, _) = miniops(&g.url(), &["fleet", "plan", "/does/not/exist.json"]);
    assert_eq!(code, 1);

    seed_points(&s);
    let rule = dir.path().join("r.json");
    std::fs::write(
        &rule,
        json!({
            "rule_id": "hot",
            "source": "SELECT last(value) FROM \"cpu.load\" WHERE ts >= 0 AND ts < 600000 GROUP BY time(1m), server",
            "comparator": ">", "threshold": 3.0, "severity": "major", "for_duration_s": 0
        })
        .to_string(),
    )
    .unwrap();
    let (code, out, err) = miniops(&g.url(), &["alerts", "test", rule.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("server=s2") && out.contains("firing"), "{out}");
    let (code, out, _) = miniops(&g.url(), &["--json", "alerts", "list"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["alerts"], json!([]));
}

#[test]
fn sim_runs_a_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(
        &path,
        json!({"name": "cli", "seed": 5, "servers": 2, "duration_s": 10,
               "metrics": [{"name": "cpu", "generator": {"type": "constant", "v": 1.0}}]})
        .to_string(),
    )
    .unwrap();
    let report = dir.path().join("r.json");
    let (code, out, err) = miniops(
        "http://unused",
        &[
            "sim",
            "run",
            path.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("reconciled true"), "{out}");
    let r: Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert_eq!(r["stored_distinct"], 20);
}
