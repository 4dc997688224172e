use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identity of a metric stream: metric name plus tag pairs sorted by key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "RawKey")]
pub struct SeriesKey {
    name: String,
    tags: Vec<(String, String)>,
}

#[derive(Deserialize)]
struct RawKey {
    name: String,
    #[serde(default)]
    tags: Vec<(String, String)>,
}

impl From<RawKey> for SeriesKey {
    fn from(r: RawKey) -> Self {
        SeriesKey::new(r.name, r.tags)
    }
}

impl SeriesKey {
    /// Later duplicates of a tag key replace earlier ones.
    pub fn new<I, K, V>(name: impl Into<String>, tags: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut sorted: Vec<(String, String)> = Vec::new();
        for (k, v) in tags {
            let (k, v) = (k.into(), v.into());
            match sorted.binary_search_by(|(sk, _)| sk.as_str().cmp(&k)) {
                Ok(i) => sorted[i].1 = v,
                Err(i) => sorted.insert(i, (k, v)),
            }
        }
        SeriesKey {
            name: name.into(),
            tags: sorted,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tags(&self) -> &[(String, String)] {
        &self.tags
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .binary_search_by(|(k, _)| k.as_str().cmp(key))
            .ok()
            .map(|i| self.tags[i].1.as_str())
    }

    pub fn server(&self) -> Option<&str> {
        self.tag("server")
    }

    /// `name{k1=v1,k2=v2}`.
    pub fn canonical(&self) -> String {
        self.to_string()
    }

    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        fn put(out: &mut Vec<u8>, s: &str) {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        put(out, &self.name);
        out.extend_from_slice(&(self.tags.len() as u32).to_le_bytes());
        for (k, v) in &self.tags {
            put(out, k);
            put(out, v);
        }
    }

    pub(crate) fn decode(buf: &[u8], pos: &mut usize) -> Option<SeriesKey> {
        fn u32_at(buf: &[u8], pos: &mut usize) -> Option<u32> {
            let b = buf.get(*pos..*pos + 4)?;
            *pos += 4;
            Some(u32::from_le_bytes(b.try_into().ok()?))
        }
        fn string(buf: &[u8], pos: &mut usize) -> Option<String> {
            let n = u32_at(buf, pos)? as usize;
            let s = std::str::from_utf8(buf.get(*pos..*pos + n)?).ok()?.to_string();
            *pos += n;
            Some(s)
        }
        let name = string(buf, pos)?;
        let n = u32_at(buf, pos)? as usize;
        let mut tags = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            tags.push((string(buf, pos)?, string(buf, pos)?));
        }
        Some(SeriesKey::new(name, tags))
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        f.write_str("{")?;
        for (i, (k, v)) in self.tags.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("}")
    }
}

impl PartialOrd for SeriesKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SeriesKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.name, &self.tags).cmp(&(&other.name, &other.tags))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub series: SeriesKey,
    pub ts: i64,
    pub value: f64,
}

impl MetricPoint {
    pub fn new(series: SeriesKey, ts: i64, value: f64) -> Self {
        MetricPoint { series, ts, value }
    }
}
