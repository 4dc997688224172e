mod support;

use std::sync::Arc;

use miniops_core::ManualClock;
use miniops_tsstore::{Aggregate, MetricPoint, Query, SeriesKey, Store, StoreConfig, HOUR_MS};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use support::oracle::{close, ScanOracle};

const METRICS: [&str; 3] = ["cpu.load", "mem.free", "disk.free"];
const SERVERS: [&str; 6] = ["s1", "s2", "s3", "s4", "s5", "s6"];
const CLIENTS: [&str; 3] = ["A", "B", "C"];

fn random_query(rng: &mut StdRng, span: i64) -> Query {
    let agg = Aggregate::ALL[rng.gen_range(0..6)];
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

fn check(store: &Store, oracle: &ScanOracle, q: &Query) {
    let got = store.metrics.query(q).unwrap();
    let want = oracle.run(q);
    assert_eq!(got.rows.len(), want.len(), "row count for {}", q.to_sql());
    for (g, w) in got.rows.iter().zip(&want) {
        assert_eq!(g.group, w.0, "{}", q.to_sql());
        assert_eq!(g.bucket_start, w.1, "{}", q.to_sql());
        assert!(close(g.value, w.2, 1e-9), "{} got {} want {}", q.to_sql(), g.value, w.2);
    }
}

#[test]
fn random_workloads_match_linear_scan() {
    let mut rng = StdRng::seed_from_u64(0xC0FFEE);
    for round in 0..4 {
        let clock = ManualClock::new(10 * HOUR_MS);
        let store = Store::open_with_clock(StoreConfig::in_memory(), Arc::new(clock)).unwrap();
        let mut oracle = ScanOracle::default();
        let span = 6 * HOUR_MS;
        let n = rng.gen_range(2_000..20_000);
        let mut batch = Vec::new();
        for i in 0..n {
            let key = SeriesKey::new(
                METRICS[rng.gen_range(0..3)],
                [
                    ("server", SERVERS[rng.gen_range(0..SERVERS.len())]),
                    ("client", CLIENTS[rng.gen_range(0..CLIENTS.len())]),
                ],
            );
            // Coarse timestamps force duplicates, exercising last-write-wins.
            let ts = rng.gen_range(0..span / 1000) * 1000;
            let v = rng.gen_range(0.0..100.0);
            oracle.write(&key, ts, v);
            batch.push(MetricPoint::new(key, ts, v));
            if batch.len() == 500 || i + 1 == n {
                store.metrics.write_points(&batch).unwrap();
                batch.clear();
            }
            if i % 3000 == 2999 {
                let start = rng.gen_range(0..6) * HOUR_MS;
                store.metrics.seal_partition(start).unwrap();
            }
        }
        for _ in 0..60 {
            let q = random_query(&mut rng, span);
            check(&store, &oracle, &q);
        }
        assert_eq!(
            store.metrics.distinct_point_count(i64::MIN / 2, i64::MAX / 2).unwrap(),
            oracle.len(),
            "round {round}"
        );
    }
}
