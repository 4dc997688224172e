#![allow(dead_code)]

//! Brute-force reference for metric queries: keeps every write in order,
//! resolves duplicates by last write, and evaluates queries by linear scan.

use std::collections::{BTreeMap, HashMap};

use miniops_tsstore::{Aggregate, Query, SeriesKey};

#[derive(Default)]
pub struct ScanOracle {
    latest: HashMap<(SeriesKey, i64), f64>,
}

impl ScanOracle {
    pub fn write(&mut self, key: &SeriesKey, ts: i64, value: f64) {
        self.latest.insert((key.clone(), ts), value);
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn points(&self) -> impl Iterator<Item = (&SeriesKey, i64, f64)> {
        self.latest.iter().map(|((k, t), v)| (k, *t, *v))
    }

    /// Rows as (group, bucket_start, value) sorted by (group, bucket_start).
    pub fn run(&self, q: &Query) -> Vec<(Vec<String>, i64, f64)> {
        let width = q.bucket_seconds.map(|s| s as i64 * 1000);
        let mut cells: BTreeMap<(Vec<String>, i64), Vec<(i64, &SeriesKey, f64)>> = BTreeMap::new();
        for ((key, ts), v) in &self.latest {
            if key.name() != q.metric || *ts < q.from || *ts >= q.to {
                continue;
            }
            if !q
                .filters
                .iter()
                .all(|(k, val)| key.tag(k) == Some(val.as_str()))
            {
                continue;
            }
            let group: Vec<String> = q
                .group_by
                .iter()
                .map(|g| key.tag(g).unwrap_or("").to_string())
                .collect();
            let bucket = match width {
                Some(w) => {
                    let mut b = *ts - (*ts % w);
                    if *ts % w < 0 {
                        b -= w;
                    }
                    b
                }
                None => q.from,
            };
            cells
                .entry((group, bucket))
                .or_default()
                .push((*ts, key, *v));
        }
        cells
            .into_iter()
            .map(|((g, b), pts)| {
                let vals: Vec<f64> = pts.iter().map(|p| p.2).collect();
                let n = vals.len() as f64;
                let value = match q.aggregate {
                    Aggregate::Sum => vals.iter().sum(),
                    Aggregate::Count => n,
                    Aggregate::Avg => vals.iter().sum::<f64>() / n,
                    Aggregate::Min => vals.iter().cloned().fold(f64::INFINITY, f64::min),
                    Aggregate::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    Aggregate::Last => {
                        pts.iter()
                            .max_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)))
                            .expect("non-empty cell")
                            .2
                    }
                };
                (g, b, value)
            })
            .collect()
    }
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= rel * a.abs().max(b.abs())
}
