use std::collections::BTreeMap;

use miniops_core::EpochMs;
use miniops_tsstore::{Query, QueryResult, Store};

/// Read access to metrics for rule evaluation.
pub trait MetricSource: Send + Sync {
    fn query(&self, q: &Query) -> Result<QueryResult, String>;

    /// Raw samples in `[q.from, q.to)` of series matching `q`'s metric and
    /// filters, grouped by `q.group_by` values and sorted by time.
    fn samples(&self, q: &Query) -> Result<BTreeMap<Vec<String>, Vec<(EpochMs, f64)>>, String>;
}

impl MetricSource for Store {
    fn query(&self, q: &Query) -> Result<QueryResult, String> {
        self.metrics.query(q).map_err(|e| e.to_string())
    }

    fn samples(&self, q: &Query) -> Result<BTreeMap<Vec<String>, Vec<(EpochMs, f64)>>, String> {
        let points = self
            .metrics
            .scan(Some(&q.metric), q.from, q.to)
            .map_err(|e| e.to_string())?;
        let mut out: BTreeMap<Vec<String>, Vec<(EpochMs, f64)>> = BTreeMap::new();
        for p in points {
            if !q.filters.iter().all(|(k, v)| p.series.tag(k) == Some(v.as_str())) {
                continue;
            }
            let group = q
                .group_by
                .iter()
                .map(|g| p.series.tag(g).unwrap_or("").to_string())
                .collect();
            out.entry(group).or_default().push((p.ts, p.value));
        }
        for v in out.values_mut() {
            v.sort_by_key(|(ts, _)| *ts);
        }
        Ok(out)
    }
}
