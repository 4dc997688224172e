use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Avg,
    Min,
    Max,
    Sum,
    Count,
    Last,
}

impl Aggregate {
    pub const ALL: [Aggregate; 6] = [
        Aggregate::Avg,
        Aggregate::Min,
        Aggregate::Max,
        Aggregate::Sum,
        Aggregate::Count,
        Aggregate::Last,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregate::Avg => "avg",
            Aggregate::Min => "min",
            Aggregate::Max => "max",
            Aggregate::Sum => "sum",
            Aggregate::Count => "count",
            Aggregate::Last => "last",
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregate {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let lower = s.to_ascii_lowercase();
        Aggregate::ALL
            .into_iter()
            .find(|a| a.as_str() == lower)
            .ok_or(())
    }
}

/// A validated metric query over `[from, to)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub metric: String,
    /// Tag equality conjunction, kept sorted by (key, value) without duplicates.
    pub filters: Vec<(String, String)>,
    pub from: i64,
    pub to: i64,
    pub aggregate: Aggregate,
    pub bucket_seconds: Option<u64>,
    pub group_by: Vec<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("empty time range: from {from} is not before to {to}")]
    EmptyRange { from: i64, to: i64 },
    #[error("bucket width must be positive")]
    ZeroBucket,
    #[error("{0}")]
    Parse(#[from] crate::sql::ParseError),
}

impl Query {
    pub fn new(metric: impl Into<String>, from: i64, to: i64, aggregate: Aggregate) -> Self {
        Query {
            metric: metric.into(),
            filters: Vec::new(),
            from,
            to,
            aggregate,
            bucket_seconds: None,
            group_by: Vec::new(),
        }
    }

    pub fn filter(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.filters.push((key.into(), value.into()));
        self.filters.sort();
        self.filters.dedup();
        self
    }

    pub fn bucket(mut self, seconds: u64) -> Self {
        self.bucket_seconds = Some(seconds);
        self
    }

    pub fn group(mut self, tag: impl Into<String>) -> Self {
        self.group_by.push(tag.into());
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.from >= self.to {
            return Err(QueryError::EmptyRange {
                from: self.from,
                to: self.to,
            });
        }
        if self.bucket_seconds == Some(0) {
            return Err(QueryError::ZeroBucket);
        }
        Ok(())
    }

    /// Start of the bucket holding `ts`; epoch-aligned, or `from` without bucketing.
    pub fn bucket_start(&self, ts: i64) -> i64 {
        match self.bucket_seconds {
            Some(s) => {
                let w = s as i64 * 1000;
                ts.div_euclid(w) * w
            }
            None => self.from,
        }
    }

    pub fn to_sql(&self) -> String {
        crate::sql::print(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Values of the group-by tags, in query order; absent tags are empty.
    pub group: Vec<String>,
    pub bucket_start: i64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl QueryResult {
    pub fn columns_for(q: &Query) -> Vec<String> {
        let mut cols = q.group_by.clone();
        cols.push("time".into());
        cols.push(q.aggregate.as_str().into());
        cols
    }

    /// Rows as JSON arrays matching `columns`.
    pub fn json_rows(&self) -> Vec<serde_json::Value> {
        self.rows
            .iter()
            .map(|r| {
                let mut cells: Vec<serde_json::Value> =
                    r.group.iter().map(|g| serde_json::Value::from(g.as_str())).collect();
                cells.push(r.bucket_start.into());
                cells.push(r.value.into());
                serde_json::Value::Array(cells)
            })
            .collect()
    }
}

/// Running state for one (group, bucket) cell. Points must arrive with
/// series in key order and timestamps ascending within a series so that
/// `last` resolves ties toward the greatest series key.
#[derive(Debug, Clone)]
pub struct Accumulator {
    sum: f64,
    count: u64,
    min: f64,
    max: f64,
    last_ts: i64,
    last: f64,
}

impl Default for Accumulator {
    fn default() -> Self {
        Accumulator {
            sum: 0.0,
            count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            last_ts: i64::MIN,
            last: f64::NAN,
        }
    }
}

impl Accumulator {
    pub fn push(&mut self, ts: i64, v: f64) {
        self.sum += v;
        self.count += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        if ts >= self.last_ts {
            self.last_ts = ts;
            self.last = v;
        }
    }

    pub fn finish(&self, agg: Aggregate) -> Option<f64> {
        if self.count == 0 {
            return None;
        }
        Some(match agg {
            Aggregate::Avg => self.sum / self.count as f64,
            Aggregate::Min => self.min,
            Aggregate::Max => self.max,
            Aggregate::Sum => self.sum,
            Aggregate::Count => self.count as f64,
            Aggregate::Last => self.last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_values() {
        let mut a = Accumulator::default();
        for (t, v) in [(1, 1.0), (2, 2.0), (3, 3.0)] {
            a.push(t, v);
        }
        assert_eq!(a.finish(Aggregate::Avg), Some(2.0));
        assert_eq!(a.finish(Aggregate::Sum), Some(6.0));
        assert_eq!(a.finish(Aggregate::Count), Some(3.0));
        assert_eq!(a.finish(Aggregate::Min), Some(1.0));
        assert_eq!(a.finish(Aggregate::Max), Some(3.0));
        assert_eq!(a.finish(Aggregate::Last), Some(3.0));
        assert_eq!(Accumulator::default().finish(Aggregate::Count), None);
    }

    #[test]
    fn buckets_are_epoch_aligned() {
        let q = Query::new("m", 5_000, 100_000, Aggregate::Avg).bucket(10);
        assert_eq!(q.bucket_start(5_000), 0);
        assert_eq!(q.bucket_start(19_999), 10_000);
        assert_eq!(q.bucket_start(-1), -10_000);
        let q = Query::new("m", 5_000, 100_000, Aggregate::Avg);
        assert_eq!(q.bucket_start(77_000), 5_000);
    }

    #[test]
    fn validation() {
        assert!(Query::new("m", 5, 5, Aggregate::Avg).validate().is_err());
        assert!(Query::new("m", 0, 5, Aggregate::Avg).bucket(0).validate().is_err());
        assert!(Query::new("m", 0, 5, Aggregate::Avg).bucket(1).validate().is_ok());
    }
}
