use std::sync::Arc;

use miniops_alerting::{AlertEngine, AlertRule, AlertState, Comparator, ForecastSpec, NullSink, DEFAULT_EPSILON};
use miniops_core::{Clock, Severity};
use miniops_fleetsim::{scripted_saturation, RunOptions, Scenario, Simulation};
use miniops_tsstore::MetadataStore;

const DAY_S: u64 = 86_400;

#[test]
fn disk_ramp_forecast_within_two_percent() {
    let sat = scripted_saturation("disk.free_gb", -2.0, 100.0, 14.0, 1.0).unwrap();
    assert_eq!(sat.saturation_day, 50.0);
    let scenario = Scenario {
        name: "disk-ramp".into(),
        seed: 11,
        servers: 2,
        metrics: vec![sat.metric.clone()],
        tick_ms: 3_600_000,
        duration_s: 14 * DAY_S,
        faults: vec![],
        spool_capacity: 1000,
        topic: "metrics.sim".into(),
        t0: None,
    };
    let sim = Simulation::new(scenario).unwrap();
    let out = sim.run(&RunOptions::default()).unwrap();
    assert!(out.report.reconciled, "{:?}", out.report);

    let now = sim.clock().now_ms();
    let elapsed_days = (now - sim.scenario().t0()) as f64 / (DAY_S as f64 * 1000.0);
    let remaining = sat.saturation_day - elapsed_days;
    let engine = AlertEngine::open(
        Arc::new(MetadataStore::in_memory()),
        sim.pipeline().store.clone(),
        Arc::new(NullSink),
        Arc::new(sim.clock().clone()),
    );
    let mut rule = AlertRule::threshold(
        "disk-days-left",
        "SELECT last(value) FROM \"disk.free_gb\" WHERE ts >= 0 AND ts < 1 GROUP BY time(1h), server",
        Comparator::Lt,
        60.0,
        Severity::Major,
    );
    rule.forecast = Some(ForecastSpec {
        capacity_bound: 0.0,
        window_s: 14 * DAY_S + 1,
        epsilon: DEFAULT_EPSILON,
        direction: None,
    });
    let ts = engine.evaluate_rule(&rule, now).unwrap();
    let firing: Vec<_> = ts.iter().filter(|t| t.to == AlertState::Firing).collect();
    assert_eq!(firing.len(), 2);
    for t in firing {
        let err = (t.value - remaining).abs() / remaining;
        assert!(err < 0.02, "{}: forecast {} vs {remaining} days", t.group, t.value);
    }
}
