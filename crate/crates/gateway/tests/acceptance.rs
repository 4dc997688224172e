//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p miniops-gateway --test acceptance`.

mod common;
#[path = "../../tsstore/tests/support/oracle.rs"]
mod oracle;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use axum::Router;
use miniops_alerting::{
    days_to_saturation, fit_trend, AlertEngine, AlertState, IncidentRequest, IncidentSink,
    SinkError, DEFAULT_EPSILON,
};
use miniops_core::{EpochMs, ManualClock, Predicate, Selector, Severity};
use miniops_fleetsim::{run_scenario, Fault, FaultKind, RunOptions, Scenario, Scope, Simulation};
use miniops_gateway::Stack;
use miniops_incidents::{
    parse_audit, rank, IncidentError, IncidentService, IncidentTicket, NewTicket, Status,
    TicketFilter, TicketSource, TriageRule,
};
use miniops_mqueue::{frame, Broker, QueueConfig, StartPosition};
use miniops_tsstore::{Aggregate, MetricPoint, Query, SeriesKey, Store, StoreConfig, HOUR_MS};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

const DAY: i64 = 86_400_000;
const STEADY: &str = include_str!("../../fleetsim/scenarios/steady.json");
const SQL_CORPUS: &str = include_str!("../../tsstore/tests/data/sql_corpus.json");

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// In-process gateway over a stack with a settable clock.
struct Api {
    rt: tokio::runtime::Runtime,
    app: Router,
    stack: Arc<Stack>,
    clock: ManualClock,
}

impl Api {
    fn new(t0: EpochMs) -> Api {
        let clock = ManualClock::new(t0);
        let stack = Arc::new(Stack::open(None, Arc::new(clock.clone())).unwrap());
        Api {
            rt: tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .unwrap(),
            app: common::gateway(&stack),
            stack,
            clock,
        }
    }

    fn call(&self, method: &str, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let r = self.rt.block_on(common::call(
            &self.app,
            method,
            path,
            body,
            Some(common::TOKEN),
        ));
        (r.status, r.body)
    }

    fn ok(&self, method: &str, path: &str, body: Option<Value>) -> Result<Value, String> {
        let (s, v) = self.call(method, path, body);
        ensure(s.is_success(), || format!("{method} {path} → {s}: {v}"))?;
        Ok(v)
    }
}

fn steady() -> Scenario {
    serde_json::from_str(STEADY).unwrap()
}

// ---------------------------------------------------------------- pipeline

fn end_to_end() -> Check {
    let started = Instant::now();
    let out = run_scenario(steady(), &RunOptions::default()).map_err(|e| e.to_string())?;
    let r = &out.report;
    let wall = started.elapsed();
    ensure(r.servers == 50 && r.metrics == 10 && r.ticks == 120, || {
        format!("scenario shape {r:?}")
    })?;
    ensure(r.stored_distinct == 60_000, || {
        format!("stored {} distinct points", r.stored_distinct)
    })?;
    ensure(r.reconciled, || format!("not reconciled: {r:?}"))?;
    ensure(wall < Duration::from_secs(300), || format!("took {wall:?}"))?;
    Ok(format!(
        "60000 stored, ledger reconciled, {:.1}s",
        wall.as_secs_f64()
    ))
}

fn outage(start_s: u64, end_s: u64) -> Fault {
    Fault {
        kind: FaultKind::IngesterOutage,
        start_s,
        end_s,
        scope: Scope::default(),
    }
}

fn outage_resilience() -> Check {
    let mut s = steady();
    s.faults.push(outage(40, 70));
    let out = run_scenario(s, &RunOptions::default()).map_err(|e| e.to_string())?;
    let r = &out.report;
    ensure(r.refused_during_outage > 0, || {
        "outage refused nothing".into()
    })?;
    ensure(
        r.evicted_records == 0 && r.stored_distinct == r.produced_records && r.reconciled,
        || format!("zero-loss variant: {r:?}"),
    )?;
    let zero_loss = r.produced_records;

    let mut s = steady();
    s.spool_capacity = 10;
    s.faults.push(outage(20, 90));
    let sim = Simulation::new(s).map_err(|e| e.to_string())?;
    let out = sim.run(&RunOptions::default()).map_err(|e| e.to_string())?;
    let r = &out.report;
    ensure(r.evicted_records > 0, || "nothing evicted".into())?;
    ensure(
        r.missing == r.evicted_records && r.unexplained_missing == 0 && r.evicted_but_stored == 0,
        || format!("losses not explained by evictions: {r:?}"),
    )?;
    ensure(r.reconciled, || {
        format!("eviction variant not reconciled: {r:?}")
    })?;

    // Oldest first: per series the lost samples form one run with no stored
    // sample between them.
    let t0 = sim.scenario().t0();
    let stored: std::collections::HashSet<(String, i64)> = sim
        .pipeline()
        .store
        .metrics
        .scan(None, t0, t0 + 10 * DAY)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|p| (p.series.canonical(), p.ts))
        .collect();
    let mut per_series: BTreeMap<&str, Vec<(i64, bool)>> = BTreeMap::new();
    for e in &out.ledger.entries {
        per_series
            .entry(&e.series)
            .or_default()
            .push((e.ts, stored.contains(&(e.series.clone(), e.ts))));
    }
    for (series, samples) in &per_series {
        let lost: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.1)
            .map(|(i, _)| i)
            .collect();
        if let (Some(first), Some(last)) = (lost.first(), lost.last()) {
            ensure(last - first + 1 == lost.len(), || {
                format!("{series}: stored sample inside the evicted run")
            })?;
        }
    }
    Ok(format!(
        "30s outage: {zero_loss}/{zero_loss} stored; capacity 10: {} lost = {} evicted, 0 unexplained",
        r.missing, r.evicted_records
    ))
}

// ------------------------------------------------------------------- queue

fn queue_durability() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = QueueConfig {
        segment_bytes: 256 * frame::frame_len(16) as u64,
        fsync: false,
        ..QueueConfig::default()
    };
    let payload = |i: u64| -> Vec<u8> { [i.to_be_bytes(), (!i).to_be_bytes()].concat() };
    {
        let b = Broker::open(dir.path(), config.clone()).map_err(|e| e.to_string())?;
        b.register_group("a", "events", StartPosition::Earliest)
            .map_err(|e| e.to_string())?;
        b.register_group("b", "events", StartPosition::Earliest)
            .map_err(|e| e.to_string())?;
        for i in 0..10_000u64 {
            b.publish("events", &payload(i))
                .map_err(|e| e.to_string())?;
        }
        let mut seen = 0u64;
        while seen < 10_000 {
            let msgs = b.poll("a", "events", 1000).map_err(|e| e.to_string())?;
            seen += msgs.len() as u64;
            let last = msgs.last().ok_or("group a stalled")?;
            b.commit("a", "events", last.offset + 1)
                .map_err(|e| e.to_string())?;
        }
        // Crash: no destructor, no flush.
        std::mem::forget(b);
    }
    let b = Broker::open(dir.path(), config).map_err(|e| e.to_string())?;
    ensure(b.committed("a", "events").ok() == Some(10_000), || {
        "group a lost its commit".into()
    })?;
    let segments_before = b.stats()[0].segments;
    ensure(segments_before > 1, || "test needs several segments".into())?;
    ensure(b.trim("events").map_err(|e| e.to_string())? == 0, || {
        "trim reclaimed before b committed".into()
    })?;
    let all = b.poll("b", "events", 20_000).map_err(|e| e.to_string())?;
    ensure(all.len() == 10_000, || format!("group b got {}", all.len()))?;
    for (i, m) in all.iter().enumerate() {
        ensure(
            m.offset == i as u64 && m.payload == payload(i as u64) && m.crc_valid(),
            || format!("message {i} wrong or corrupt"),
        )?;
    }
    ensure(b.trim("events").map_err(|e| e.to_string())? == 0, || {
        "trim reclaimed before b committed".into()
    })?;
    b.commit("b", "events", 10_000).map_err(|e| e.to_string())?;
    let reclaimed = b.trim("events").map_err(|e| e.to_string())?;
    ensure(reclaimed > 0, || {
        "trim reclaimed nothing after both committed".into()
    })?;
    Ok(format!(
        "10000 in order after crash, CRC-valid; trim 0 until b committed, then {reclaimed}/{segments_before} segments"
    ))
}

// ------------------------------------------------------------------- store

const METRICS: [&str; 3] = ["cpu.load", "mem.free", "disk.free"];
const SERVERS: [&str; 6] = ["s1", "s2", "s3", "s4", "s5", "s6"];
const CLIENTS: [&str; 3] = ["A", "B", "C"];

fn random_query(rng: &mut StdRng, span: i64) -> Query {
    let agg = Aggregate::ALL[rng.gen_range(0..Aggregate::ALL.len())];
    let a = rng.gen_range(-HOUR_MS..span + HOUR_MS);
    let b = rng.gen_range(-HOUR_MS..span + HOUR_MS);
    let (from, to) = if a < b { (a, b) } else { (b, a + 1) };
    let mut q = Query::new(METRICS[rng.gen_range(0..3)], from, to, agg);
    if rng.gen_bool(0.4) {
        q = q.filter("server", SERVERS[rng.gen_range(0..SERVERS.len())]);
    }
    if rng.gen_bool(0.2) {
        q = q.filter("client", CLIENTS[rng.gen_range(0..CLIENTS.len())]);
    }
    if rng.gen_bool(0.7) {
        q = q.bucket([1, 10, 60, 600, 3600, 7200][rng.gen_range(0..6)]);
        if rng.gen_bool(0.5) {
            q = q.group(["server", "client", "missing"][rng.gen_range(0..3)]);
        }
    }
    q
}

fn query_oracle() -> Check {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5EED);
    let mut cells = 0usize;
    let mut total_points = 0usize;
    for round in 0..5 {
        let store = Store::open_with_clock(
            StoreConfig::in_memory(),
            Arc::new(ManualClock::new(10 * HOUR_MS)),
        )
        .map_err(|e| e.to_string())?;
        let mut scan = oracle::ScanOracle::default();
        let span = 6 * HOUR_MS;
        let n = rng.gen_range(10_000..=100_000);
        let mut batch = Vec::with_capacity(1000);
        for i in 0..n {
            let key = SeriesKey::new(
                METRICS[rng.gen_range(0..3)],
                [
                    ("server", SERVERS[rng.gen_range(0..SERVERS.len())]),
                    ("client", CLIENTS[rng.gen_range(0..CLIENTS.len())]),
                ],
            );
            let ts = rng.gen_range(0..span / 1000) * 1000;
            let v = rng.gen_range(-50.0..100.0);
            scan.write(&key, ts, v);
            batch.push(MetricPoint::new(key, ts, v));
            if batch.len() == 1000 || i + 1 == n {
                store
                    .metrics
                    .write_points(&batch)
                    .map_err(|e| e.to_string())?;
                batch.clear();
            }
            if i % 20_000 == 19_999 {
                store
                    .metrics
                    .seal_partition(rng.gen_range(0..6) * HOUR_MS)
                    .map_err(|e| e.to_string())?;
            }
        }
        total_points += n;
        for _ in 0..200 {
            let q = random_query(&mut rng, span);
            let got = store.metrics.query(&q).map_err(|e| e.to_string())?;
            let want = scan.run(&q);
            ensure(got.rows.len() == want.len(), || {
                format!("round {round}: row count for {}", q.to_sql())
            })?;
            for (g, w) in got.rows.iter().zip(&want) {
                ensure(g.group == w.0 && g.bucket_start == w.1, || {
                    format!("cell key for {}", q.to_sql())
                })?;
                ensure(oracle::close(g.value, w.2, 1e-9), || {
                    format!("{}: {} vs {}", q.to_sql(), g.value, w.2)
                })?;
                cells += 1;
            }
        }
    }
    let took = started.elapsed();
    ensure(took < Duration::from_secs(120), || format!("took {took:?}"))?;
    Ok(format!(
        "1000 queries, {cells} cells over {total_points} points match scan at 1e-9, {:.1}s",
        took.as_secs_f64()
    ))
}

fn compression() -> Check {
    let store = Store::open_with_clock(StoreConfig::in_memory(), Arc::new(ManualClock::new(0)))
        .map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(10);
    let key = SeriesKey::new("net.rx_bytes_total", [("server", "s1")]);
    let mut counter = 5_000_000.0f64;
    let points: Vec<MetricPoint> = (0..10_000)
        .map(|i| {
            counter += rng.gen_range(0..2_000) as f64;
            MetricPoint::new(key.clone(), i * 10_000, counter)
        })
        .collect();
    // Raw baseline measured: each point as i64 ts + f64 value, little endian.
    let raw: Vec<u8> = points
        .iter()
        .flat_map(|p| p.ts.to_le_bytes().into_iter().chain(p.value.to_le_bytes()))
        .collect();
    store
        .metrics
        .write_points(&points)
        .map_err(|e| e.to_string())?;
    let mut sealed = 0usize;
    for start in store.metrics.partition_starts() {
        sealed += store
            .metrics
            .seal_partition(start)
            .map_err(|e| e.to_string())?
            .map(|s| s.bytes)
            .unwrap_or(0);
    }
    let ratio = sealed as f64 / raw.len() as f64;
    ensure(raw.len() == 160_000, || {
        format!("raw baseline {} bytes", raw.len())
    })?;
    ensure(sealed as f64 <= 0.25 * raw.len() as f64, || {
        format!("sealed {sealed} of raw {} ({ratio:.3})", raw.len())
    })?;
    let back = store
        .metrics
        .scan(None, 0, 10_000 * 10_000)
        .map_err(|e| e.to_string())?;
    ensure(
        back.len() == 10_000
            && back
                .iter()
                .zip(&points)
                .all(|(a, b)| a.value == b.value && a.ts == b.ts),
        || "sealed data does not read back".into(),
    )?;
    Ok(format!(
        "{sealed} sealed bytes for 10000 points ({:.2} B/point, {:.3} of raw)",
        sealed as f64 / 10_000.0,
        ratio
    ))
}

fn sql_corpus() -> Check {
    let api = Api::new(common::T0);
    let corpus: Value = serde_json::from_str(SQL_CORPUS).map_err(|e| e.to_string())?;
    let cases = corpus["cases"].as_array().ok_or("corpus has no cases")?;
    ensure(cases.len() >= 50, || format!("only {} cases", cases.len()))?;
    let (mut valid, mut invalid) = (0, 0);
    for c in cases {
        let sql = c["sql"].as_str().ok_or("case without sql")?;
        let (status, body) = api.call("POST", "/api/query/parse", Some(json!({"sql": sql})));
        if c["valid"].as_bool() == Some(true) {
            valid += 1;
            ensure(status == StatusCode::OK, || {
                format!("{sql:?} rejected: {body}")
            })?;
            let canonical = body["canonical"]
                .as_str()
                .ok_or("no canonical form")?
                .to_string();
            let (s2, again) = api.call("POST", "/api/query/parse", Some(json!({"sql": canonical})));
            ensure(
                s2 == StatusCode::OK
                    && again["canonical"] == body["canonical"]
                    && again["query"] == body["query"],
                || format!("{sql:?} is not a fixed point: {canonical:?}"),
            )?;
        } else {
            invalid += 1;
            ensure(
                status == StatusCode::BAD_REQUEST && body["column"] == c["column"],
                || {
                    format!(
                        "{sql:?}: expected column {}, got {status} {body}",
                        c["column"]
                    )
                },
            )?;
        }
    }
    Ok(format!(
        "{valid} valid fixed points, {invalid} invalid at expected columns, via /api/query/parse"
    ))
}

// ---------------------------------------------------------------- forecast

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn forecast() -> Check {
    let base = 1_700_000_000_000;
    let line: Vec<(i64, f64)> = (0..=14 * 24)
        .map(|h| (base + h * DAY / 24, 100.0 - 2.0 * h as f64 / 24.0))
        .collect();
    let exact = days_to_saturation(
        &fit_trend(&line).map_err(|e| e.to_string())?,
        base,
        0.0,
        DEFAULT_EPSILON,
        None,
    );
    ensure((exact - 50.0).abs() / 50.0 <= 1e-6, || {
        format!("noiseless: {exact}")
    })?;

    let mut rng = StdRng::seed_from_u64(7);
    let noisy: Vec<(i64, f64)> = line
        .iter()
        .map(|(t, y)| (*t, y + rng.gen_range(-1.0..1.0)))
        .collect();
    let now = base + 14 * DAY;
    let truth = 36.0;
    let d = days_to_saturation(
        &fit_trend(&noisy).map_err(|e| e.to_string())?,
        now,
        0.0,
        DEFAULT_EPSILON,
        None,
    );
    ensure((d - truth).abs() / truth < 0.02, || {
        format!("noisy: {d} vs {truth}")
    })?;

    for i in 0..100 {
        let n = rng.gen_range(3..200);
        let start: i64 = rng.gen_range(0..2_000_000_000_000);
        let slope = rng.gen_range(-10.0..-0.1);
        let y0 = rng.gen_range(50.0..500.0);
        let window: Vec<(i64, f64)> = (0..n)
            .map(|k| {
                let t = start + k * rng.gen_range(60_000..3_600_000);
                (
                    t,
                    y0 + slope * ((t - start) as f64 / DAY as f64) + rng.gen_range(-0.5..0.5),
                )
            })
            .collect();
        let now = window.last().unwrap().0;
        let bound = rng.gen_range(-100.0..0.0);
        let d = days_to_saturation(
            &fit_trend(&window).unwrap(),
            now,
            bound,
            DEFAULT_EPSILON,
            None,
        );
        let k = rng.gen_range(0.01..1000.0);
        let scaled: Vec<(i64, f64)> = window.iter().map(|(t, y)| (*t, y * k)).collect();
        let ds = days_to_saturation(
            &fit_trend(&scaled).unwrap(),
            now,
            bound * k,
            DEFAULT_EPSILON * k,
            None,
        );
        ensure(
            rel(ds, d) < 1e-9 || (d.is_infinite() && ds.is_infinite()),
            || format!("window {i}: scale {d} vs {ds}"),
        )?;
        let shift = rng.gen_range(-100..100) * DAY + rng.gen_range(0..DAY);
        let shifted: Vec<(i64, f64)> = window.iter().map(|(t, y)| (t + shift, *y)).collect();
        let dsh = days_to_saturation(
            &fit_trend(&shifted).unwrap(),
            now + shift,
            bound,
            DEFAULT_EPSILON,
            None,
        );
        ensure(
            rel(dsh, d) < 1e-6 || (d.is_infinite() && dsh.is_infinite()),
            || format!("window {i}: shift {d} vs {dsh}"),
        )?;
    }
    Ok(format!(
        "noiseless {exact:.9} days, noisy {d:.3} vs 36, 100 windows scale/shift invariant"
    ))
}

// ------------------------------------------------------------------ alerts

fn disk_rule() -> Value {
    json!({
        "rule_id": "disk-full",
        "source": "SELECT last(value) FROM \"disk.used_pct\" WHERE ts >= 0 AND ts < 120000 GROUP BY time(2m), server",
        "comparator": ">", "threshold": 90.0, "severity": "critical", "for_duration_s": 0,
        "actions": [{"type": "create_incident", "team_hint": "infra", "title": "{server}: disk at {value}%"}]
    })
}

fn point(server: &str, ts: i64, v: f64) -> Value {
    serde_json::to_value(MetricPoint::new(
        SeriesKey::new("disk.used_pct", [("server", server)]),
        ts,
        v,
    ))
    .unwrap()
}

/// One evaluation per entry, a minute apart, driven through the gateway.
fn drive(api: &Api, engine: &AlertEngine, pattern: &[bool]) -> Result<(), String> {
    for &breach in pattern {
        let now = api.clock.advance(60_000);
        api.ok(
            "POST",
            "/api/points",
            Some(json!([point("db1", now, if breach { 95.0 } else { 40.0 })])),
        )?;
        engine.tick(now);
    }
    Ok(())
}

fn count(api: &Api, path: &str, key: &str) -> Result<usize, String> {
    Ok(api.ok("GET", path, None)?[key]
        .as_array()
        .map_or(0, Vec::len))
}

struct LostAcks {
    inner: Arc<IncidentService>,
    lost: AtomicUsize,
}

impl IncidentSink for LostAcks {
    fn create_incident(&self, req: &IncidentRequest) -> Result<String, SinkError> {
        let id = self.inner.create_incident(req)?;
        if self
            .lost
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(SinkError("ack lost".into()));
        }
        Ok(id)
    }

    fn alert_resolved(&self, key: &str, at: EpochMs) -> Result<(), SinkError> {
        self.inner.alert_resolved(key, at)
    }
}

struct Down;

impl IncidentSink for Down {
    fn create_incident(&self, _: &IncidentRequest) -> Result<String, SinkError> {
        Err(SinkError("connection refused".into()))
    }

    fn alert_resolved(&self, _: &str, _: EpochMs) -> Result<(), SinkError> {
        Err(SinkError("connection refused".into()))
    }
}

fn alert_fire_once() -> Check {
    let api = Api::new(common::T0);
    api.ok("POST", "/api/rules", Some(disk_rule()))?;
    drive(&api, &api.stack.alerts, &[true; 5])?;
    let (alerts, tickets) = (
        count(&api, "/api/alerts", "alerts")?,
        count(&api, "/api/tickets", "tickets")?,
    );
    ensure((alerts, tickets) == (1, 1), || {
        format!("5 breaches: {alerts} alerts, {tickets} tickets")
    })?;

    let api = Api::new(common::T0);
    api.ok("POST", "/api/rules", Some(disk_rule()))?;
    drive(&api, &api.stack.alerts, &[true, true, false, true, true])?;
    let (alerts, tickets) = (
        count(&api, "/api/alerts", "alerts")?,
        count(&api, "/api/tickets", "tickets")?,
    );
    ensure((alerts, tickets) == (2, 2), || {
        format!("breach-resolve-breach: {alerts} alerts, {tickets} tickets")
    })?;

    // Lost acknowledgements, then a crash with an action still owed.
    let api = Api::new(common::T0);
    let s = &api.stack;
    let open = |sink: Arc<dyn IncidentSink>| {
        AlertEngine::open(s.meta.clone(), s.store.clone(), sink, s.clock.clone())
    };
    let flaky = open(Arc::new(LostAcks {
        inner: s.incidents.clone(),
        lost: AtomicUsize::new(3),
    }));
    flaky
        .put_rule(serde_json::from_value(disk_rule()).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    drive(&api, &flaky, &[true; 6])?;
    ensure(s.incidents.len() == 1 && flaky.undelivered() == 0, || {
        format!(
            "lost acks: {} tickets, {} undelivered",
            s.incidents.len(),
            flaky.undelivered()
        )
    })?;
    drop(flaky);
    let down = open(Arc::new(Down));
    drive(&api, &down, &[false, true, true])?;
    // Owed: the resolve notice for the first instance and the second ticket.
    ensure(down.undelivered() == 2 && s.incidents.len() == 1, || {
        format!(
            "while down: {} undelivered, {} tickets",
            down.undelivered(),
            s.incidents.len()
        )
    })?;
    drop(down);
    let restarted = open(s.incidents.clone());
    drive(&api, &restarted, &[true; 3])?;
    drop(restarted);
    let again = open(s.incidents.clone());
    drive(&api, &again, &[true; 2])?;
    let tickets = s.incidents.list(&TicketFilter::default());
    let resolved = tickets
        .iter()
        .filter(|t| t.alert_resolved_at.is_some())
        .count();
    ensure(
        tickets.len() == 2 && resolved == 1 && again.undelivered() == 0,
        || {
            format!(
                "crash-retry: {} tickets, {resolved} resolved, {} owed",
                tickets.len(),
                again.undelivered()
            )
        },
    )?;
    ensure(again.alerts(Some(AlertState::Firing)).len() == 1, || {
        "one open instance expected".into()
    })?;
    Ok(
        "5 breaches → 1/1; breach-resolve-breach → 2/2; lost acks + crash → no duplicate ticket"
            .into(),
    )
}

// --------------------------------------------------------------- incidents

const APPS: [&str; 4] = ["oracle", "postgres", "nginx", "kafka"];
const CUSTOMERS: [&str; 3] = ["acme", "globex", "initech"];

/// Each condition is (field, allowed values); a ticket matches when all hold.
type OracleRule = (Vec<(&'static str, Vec<String>)>, String);

fn oracle_route(attrs: &BTreeMap<String, String>, sev: Severity, rules: &[OracleRule]) -> String {
    rules
        .iter()
        .find(|(conds, _)| {
            conds.iter().all(|(f, vals)| {
                let actual = if *f == "severity" {
                    Some(sev.as_str().to_string())
                } else {
                    attrs.get(*f).cloned()
                };
                actual.is_some_and(|a| vals.contains(&a))
            })
        })
        .map(|(_, team)| team.clone())
        .expect("default rule matches everything")
}

fn ten_rules(rng: &mut StdRng) -> (Vec<OracleRule>, Vec<TriageRule>) {
    let (mut oracle, mut rules) = (Vec::new(), Vec::new());
    for i in 0..9 {
        let mut conds: Vec<(&'static str, Vec<String>)> = Vec::new();
        let mut sel = Selector::all();
        for (field, pool) in [
            ("application", APPS.as_slice()),
            ("client", CUSTOMERS.as_slice()),
            ("server", SERVERS.as_slice()),
        ] {
            if rng.gen_bool(0.5) {
                let n = rng.gen_range(1..=2);
                let vals: Vec<String> = pool
                    .choose_multiple(rng, n)
                    .map(|s| s.to_string())
                    .collect();
                sel = sel.and(Predicate::is_in(field, vals.clone()));
                conds.push((field, vals));
            }
        }
        if rng.gen_bool(0.3) || conds.is_empty() {
            let s = Severity::ALL.choose(rng).unwrap().as_str().to_string();
            sel = sel.and(Predicate::eq("severity", s.clone()));
            conds.push(("severity", vec![s]));
        }
        oracle.push((conds, format!("team-{i}")));
        rules.push(TriageRule::new(sel, format!("team-{i}")));
    }
    oracle.push((vec![], "fallback".into()));
    rules.push(TriageRule::default_rule("fallback"));
    (oracle, rules)
}

fn ticket_body(attrs: &BTreeMap<String, String>, sev: Severity) -> Value {
    json!({"title": "t", "severity": sev, "attributes": attrs})
}

/// Severity descending, then oldest first, then ticket id.
fn before(a: &IncidentTicket, b: &IncidentTicket) -> std::cmp::Ordering {
    let sev = |t: &IncidentTicket| Severity::ALL.iter().position(|s| *s == t.severity).unwrap();
    sev(a)
        .cmp(&sev(b))
        .reverse()
        .then(a.created_at.cmp(&b.created_at))
        .then(a.ticket_id.cmp(&b.ticket_id))
}

fn triage_and_rank() -> Check {
    let mut rng = StdRng::seed_from_u64(1000);
    let api = Api::new(common::T0);
    let (oracle, rules) = ten_rules(&mut rng);
    ensure(rules.len() == 10, || "rule set size".into())?;
    api.ok(
        "POST",
        "/api/triage-rules",
        Some(serde_json::to_value(&rules).unwrap()),
    )?;
    let mut per_team: HashMap<String, usize> = HashMap::new();
    for i in 0..1000 {
        let attrs: BTreeMap<String, String> = [
            ("server", SERVERS.choose(&mut rng).unwrap().to_string()),
            ("application", APPS.choose(&mut rng).unwrap().to_string()),
            ("client", CUSTOMERS.choose(&mut rng).unwrap().to_string()),
            ("occurred_at", rng.gen_range(0..10_000).to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let sev = *Severity::ALL.choose(&mut rng).unwrap();
        let created = api.ok("POST", "/api/tickets", Some(ticket_body(&attrs, sev)))?;
        let want = oracle_route(&attrs, sev, &oracle);
        ensure(created["ticket"]["team"] == json!(want), || {
            format!(
                "ticket {i}: routed to {} not {want}",
                created["ticket"]["team"]
            )
        })?;
        *per_team.entry(want).or_default() += 1;
    }

    // 20 tickets with deliberate ties on severity and creation time.
    let svc = IncidentService::in_memory();
    let mut tickets = Vec::new();
    for i in 0..20 {
        let sev = [Severity::Critical, Severity::Major, Severity::Minor][i % 3];
        let attrs: BTreeMap<String, String> = [
            ("server", "s1"),
            ("application", "a"),
            ("client", "c"),
            ("occurred_at", "0"),
        ]
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect();
        let mut t = svc
            .create_ticket(NewTicket {
                title: format!("t{i}"),
                attributes: attrs,
                severity: sev,
                ..manual_ticket()
            })
            .map_err(|e| e.to_string())?
            .ticket;
        t.created_at = (i as i64 / 4) * 1000;
        tickets.push(t);
    }
    let mut want = tickets.clone();
    want.sort_by(before);
    let want_ids: Vec<&str> = want.iter().map(|t| t.ticket_id.as_str()).collect();
    for p in 0..5000 {
        let mut perm = tickets.clone();
        perm.shuffle(&mut rng);
        let got = rank(perm);
        let got_ids: Vec<&str> = got.iter().map(|t| t.ticket_id.as_str()).collect();
        ensure(got_ids == want_ids, || {
            format!("permutation {p} ranked differently")
        })?;
    }
    // The served queue agrees with the comparator too.
    let (team, _) = per_team.iter().max_by_key(|(_, n)| **n).unwrap();
    let queue = api.ok("GET", &format!("/api/teams/{team}/queue"), None)?;
    let mut served: Vec<IncidentTicket> =
        serde_json::from_value(queue["tickets"].clone()).map_err(|e| e.to_string())?;
    let listed = served.clone();
    served.sort_by(before);
    ensure(served == listed && listed.len() == per_team[team], || {
        format!("queue of {team} out of order")
    })?;
    Ok(format!(
        "1000 tickets routed as first-match oracle; 5000 permutations of 20 ranked identically; {team} queue ({}) ordered",
        listed.len()
    ))
}

const EDGES: [(Status, Status); 5] = [
    (Status::New, Status::Triaged),
    (Status::Triaged, Status::InProgress),
    (Status::InProgress, Status::Resolved),
    (Status::Resolved, Status::Closed),
    (Status::Resolved, Status::InProgress),
];

fn manual_ticket() -> NewTicket {
    NewTicket {
        title: "disk".into(),
        attributes: [
            ("server", "s1"),
            ("application", "a"),
            ("client", "c"),
            ("occurred_at", "0"),
        ]
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect(),
        severity: Severity::Major,
        source: TicketSource::Manual,
        description: String::new(),
    }
}

fn status_machine() -> Check {
    let fresh = || {
        IncidentService::open(
            Arc::new(miniops_tsstore::MetadataStore::in_memory()),
            Arc::new(ManualClock::new(1)),
        )
        .without_auto_triage()
    };
    // Reach each state along legal edges, then request every target.
    let path = |s: Status| -> Vec<Status> {
        let order = [
            Status::Triaged,
            Status::InProgress,
            Status::Resolved,
            Status::Closed,
        ];
        let n = Status::ALL.iter().position(|x| *x == s).unwrap();
        order[..n].to_vec()
    };
    let mut pairs = 0;
    for from in Status::ALL {
        for to in Status::ALL {
            let svc = fresh();
            let id = svc
                .create_ticket(manual_ticket())
                .map_err(|e| e.to_string())?
                .ticket
                .ticket_id;
            for s in path(from) {
                svc.transition(&id, s, "setup", None)
                    .map_err(|e| e.to_string())?;
            }
            let legal = EDGES.contains(&(from, to));
            match svc.transition(&id, to, "op", None) {
                Ok(t) => ensure(legal && t.status == to, || format!("{from}→{to} accepted"))?,
                Err(IncidentError::IllegalTransition { .. }) => {
                    ensure(!legal, || format!("{from}→{to} rejected"))?
                }
                Err(e) => return Err(format!("{from}→{to}: {e}")),
            }
            pairs += 1;
        }
    }
    let mut rng = StdRng::seed_from_u64(3);
    let svc = fresh();
    for w in 0..100 {
        let id = svc
            .create_ticket(manual_ticket())
            .map_err(|e| e.to_string())?
            .ticket
            .ticket_id;
        let mut state = Status::New;
        for _ in 0..rng.gen_range(1..30) {
            let to = *Status::ALL.choose(&mut rng).unwrap();
            if svc.transition(&id, to, "walker", None).is_ok() {
                state = to;
            }
            if rng.gen_bool(0.3) && state != Status::Closed {
                svc.add_comment(&id, "walker", "status: looks fine", None)
                    .map_err(|e| e.to_string())?;
            }
        }
        let t = svc.get(&id).ok_or("ticket vanished")?;
        // Independent replay of the audit trail.
        let mut replayed = Status::New;
        for c in &t.comments {
            if let Some((from, to)) = parse_audit(&c.text) {
                ensure(from == replayed && EDGES.contains(&(from, to)), || {
                    format!("walk {w}: bad audit {}", c.text)
                })?;
                replayed = to;
            }
        }
        ensure(replayed == state && t.status == state, || {
            format!("walk {w}: replay {replayed} vs {state}")
        })?;
    }
    Ok(format!(
        "{pairs} (state, request) pairs match the edge table; 100 walks replay from audit comments"
    ))
}

// ------------------------------------------------------------------ runner

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("end-to-end effectively-once", end_to_end),
        ("outage resilience", outage_resilience),
        ("queue durability", queue_durability),
        ("query oracle equivalence", query_oracle),
        ("compression", compression),
        ("forecast exactness", forecast),
        ("alert fire-once", alert_fire_once),
        ("triage determinism", triage_and_rank),
        ("status machine", status_machine),
        ("mini-SQL parser corpus", sql_corpus),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<30} {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<30} {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
