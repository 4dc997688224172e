//! Metric storage: hourly partitions, each a mutable buffer backed by a
//! write-ahead log plus at most one sealed, compressed segment.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use miniops_core::{Clock, EpochMs};
use parking_lot::RwLock;
use serde::Serialize;

use crate::query::{Accumulator, Query, QueryError, QueryResult, Row};
use crate::segment::{SealedSegment, SegmentBuilder};
use crate::series::{MetricPoint, SeriesKey};
use crate::{StoreConfig, StoreError};

type SeriesId = u32;

#[derive(Default)]
struct SeriesIndex {
    keys: Vec<SeriesKey>,
    ids: HashMap<SeriesKey, SeriesId>,
    by_metric: HashMap<String, Vec<SeriesId>>,
}

impl SeriesIndex {
    fn intern(&mut self, key: &SeriesKey) -> SeriesId {
        if let Some(id) = self.ids.get(key) {
            return *id;
        }
        let id = self.keys.len() as SeriesId;
        self.keys.push(key.clone());
        self.ids.insert(key.clone(), id);
        self.by_metric.entry(key.name().to_string()).or_default().push(id);
        id
    }
}

struct Partition {
    start: i64,
    end: i64,
    sealed: Option<Arc<SealedSegment>>,
    sealed_ids: HashMap<SeriesId, usize>,
    buffer: HashMap<SeriesId, BTreeMap<i64, f64>>,
    wal: Option<File>,
}

impl Partition {
    fn new(start: i64, end: i64) -> Self {
        Partition {
            start,
            end,
            sealed: None,
            sealed_ids: HashMap::new(),
            buffer: HashMap::new(),
            wal: None,
        }
    }

    /// Distinct points for one series in `[from, to)`; buffered values win.
    fn points(&self, id: SeriesId, from: i64, to: i64) -> Result<Vec<(i64, f64)>, StoreError> {
        let sealed = match (&self.sealed, self.sealed_ids.get(&id)) {
            (Some(seg), Some(&idx)) => {
                let e = &seg.index()[idx];
                if e.max_ts < from || e.min_ts >= to {
                    Vec::new()
                } else {
                    seg.points(idx)?
                        .into_iter()
                        .filter(|(t, _)| *t >= from && *t < to)
                        .collect()
                }
            }
            _ => Vec::new(),
        };
        let Some(buf) = self.buffer.get(&id) else {
            return Ok(sealed);
        };
        if sealed.is_empty() {
            return Ok(buf.range(from..to).map(|(t, v)| (*t, *v)).collect());
        }
        let mut merged: BTreeMap<i64, f64> = sealed.into_iter().collect();
        merged.extend(buf.range(from..to).map(|(t, v)| (*t, *v)));
        Ok(merged.into_iter().collect())
    }

    fn series_ids(&self) -> Vec<SeriesId> {
        let mut ids: Vec<SeriesId> = self
            .sealed_ids
            .keys()
            .chain(self.buffer.keys())
            .copied()
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn buffered_points(&self) -> usize {
        self.buffer.values().map(BTreeMap::len).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WriteReport {
    pub accepted: usize,
    pub rejected_retention: usize,
    pub rejected_invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SealInfo {
    pub partition_start: i64,
    pub series: usize,
    pub points: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MetricStats {
    pub partitions: usize,
    pub sealed_partitions: usize,
    pub series: usize,
    pub buffered_points: usize,
    pub sealed_bytes: usize,
}

pub struct MetricStore {
    config: StoreConfig,
    clock: Arc<dyn Clock>,
    series: RwLock<SeriesIndex>,
    partitions: RwLock<BTreeMap<i64, Arc<RwLock<Partition>>>>,
}

fn frame(payload: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

fn wal_entry(key: &SeriesKey, ts: i64, value: f64, out: &mut Vec<u8>) {
    let mut payload = Vec::with_capacity(64);
    key.encode(&mut payload);
    payload.extend_from_slice(&ts.to_le_bytes());
    payload.extend_from_slice(&value.to_bits().to_le_bytes());
    frame(&payload, out);
}

fn read_wal(path: &Path) -> Result<Vec<(SeriesKey, i64, f64)>, StoreError> {
    let bytes = fs::read(path)?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + 4 <= bytes.len() {
        let n = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let end = pos + 4 + n + 4;
        if end > bytes.len() {
            break;
        }
        let payload = &bytes[pos + 4..pos + 4 + n];
        let crc = u32::from_le_bytes(bytes[pos + 4 + n..end].try_into().unwrap());
        if crc32fast::hash(payload) != crc {
            break;
        }
        let mut p = 0;
        let key = SeriesKey::decode(payload, &mut p)
            .ok_or_else(|| StoreError::Corrupt(format!("{}: bad wal key", path.display())))?;
        let rest = &payload[p..];
        if rest.len() != 16 {
            return Err(StoreError::Corrupt(format!("{}: bad wal entry", path.display())));
        }
        let ts = i64::from_le_bytes(rest[..8].try_into().unwrap());
        let v = f64::from_bits(u64::from_le_bytes(rest[8..].try_into().unwrap()));
        out.push((key, ts, v));
        pos = end;
    }
    if pos < bytes.len() {
        tracing::warn!(path = %path.display(), pos, "ignoring torn wal tail");
    }
    Ok(out)
}

impl MetricStore {
    pub(crate) fn open(config: StoreConfig, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let store = MetricStore {
            config,
            clock,
            series: RwLock::new(SeriesIndex::default()),
            partitions: RwLock::new(BTreeMap::new()),
        };
        if let Some(dir) = store.dir() {
            fs::create_dir_all(dir.join("segments"))?;
            fs::create_dir_all(dir.join("wal"))?;
            store.recover(&dir)?;
        }
        Ok(store)
    }

    fn dir(&self) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join("metrics"))
    }

    fn parse_start(name: &str, ext: &str) -> Option<i64> {
        name.strip_suffix(ext)?.parse().ok()
    }

    fn recover(&self, dir: &Path) -> Result<(), StoreError> {
        let mut parts = self.partitions.write();
        let mut series = self.series.write();
        for entry in fs::read_dir(dir.join("segments"))? {
            let entry = entry?;
            let Some(start) = Self::parse_start(&entry.file_name().to_string_lossy(), ".mops") else {
                continue;
            };
            let seg = SealedSegment::from_bytes(fs::read(entry.path())?)
                .map_err(|e| StoreError::Corrupt(format!("{}: {e}", entry.path().display())))?;
            let mut p = Partition::new(start, seg.t1);
            for (i, e) in seg.index().iter().enumerate() {
                p.sealed_ids.insert(series.intern(&e.key), i);
            }
            p.sealed = Some(Arc::new(seg));
            parts.insert(start, Arc::new(RwLock::new(p)));
        }
        for entry in fs::read_dir(dir.join("wal"))? {
            let entry = entry?;
            let Some(start) = Self::parse_start(&entry.file_name().to_string_lossy(), ".wal") else {
                continue;
            };
            let entries = read_wal(&entry.path())?;
            let part = parts
                .entry(start)
                .or_insert_with(|| {
                    Arc::new(RwLock::new(Partition::new(start, start + self.config.partition_ms)))
                })
                .clone();
            let mut p = part.write();
            for (key, ts, v) in entries {
                let id = series.intern(&key);
                p.buffer.entry(id).or_default().insert(ts, v);
            }
        }
        Ok(())
    }

    pub fn partition_start(&self, ts: i64) -> i64 {
        ts.div_euclid(self.config.partition_ms) * self.config.partition_ms
    }

    pub fn retention_floor(&self, now: EpochMs) -> i64 {
        now.saturating_sub(self.config.metric_retention_ms)
    }

    /// Stores points; duplicates of `(series, ts)` resolve last-write-wins.
    pub fn write_points(&self, points: &[MetricPoint]) -> Result<WriteReport, StoreError> {
        let floor = self.retention_floor(self.clock.now_ms());
        let mut report = WriteReport::default();
        let mut by_partition: BTreeMap<i64, Vec<(SeriesId, &MetricPoint)>> = BTreeMap::new();
        {
            let mut index = self.series.write();
            for p in points {
                if !p.value.is_finite() || p.series.server().is_none() || p.series.name().is_empty() {
                    report.rejected_invalid += 1;
                    continue;
                }
                if p.ts < floor {
                    report.rejected_retention += 1;
                    continue;
                }
                let id = index.intern(&p.series);
                by_partition
                    .entry(self.partition_start(p.ts))
                    .or_default()
                    .push((id, p));
            }
        }
        for (start, pts) in by_partition {
            let part = self.partition(start);
            let mut guard = part.write();
            if let Some(dir) = self.dir() {
                let mut buf = Vec::with_capacity(pts.len() * 64);
                for (_, p) in &pts {
                    wal_entry(&p.series, p.ts, p.value, &mut buf);
                }
                if guard.wal.is_none() {
                    let path = dir.join("wal").join(format!("{start:020}.wal"));
                    guard.wal = Some(OpenOptions::new().create(true).append(true).open(path)?);
                }
                let wal = guard.wal.as_mut().expect("wal opened");
                wal.write_all(&buf)?;
                if self.config.fsync {
                    wal.sync_data()?;
                }
            }
            for (id, p) in pts {
                guard.buffer.entry(id).or_default().insert(p.ts, p.value);
                report.accepted += 1;
            }
        }
        Ok(report)
    }

    fn partition(&self, start: i64) -> Arc<RwLock<Partition>> {
        if let Some(p) = self.partitions.read().get(&start) {
            return p.clone();
        }
        self.partitions
            .write()
            .entry(start)
            .or_insert_with(|| {
                Arc::new(RwLock::new(Partition::new(start, start + self.config.partition_ms)))
            })
            .clone()
    }

    /// Sorts, deduplicates and compresses the partition's points into a new
    /// sealed segment, replacing the buffer and any previous segment.
    pub fn seal_partition(&self, start: i64) -> Result<Option<SealInfo>, StoreError> {
        let Some(part) = self.partitions.read().get(&start).cloned() else {
            return Ok(None);
        };
        let mut p = part.write();
        let ids = p.series_ids();
        let mut keyed: Vec<(SeriesKey, SeriesId)> = {
            let index = self.series.read();
            ids.iter().map(|id| (index.keys[*id as usize].clone(), *id)).collect()
        };
        keyed.sort();
        let mut builder = SegmentBuilder::new(p.start, p.end);
        let mut points = 0;
        let mut series = 0;
        for (key, id) in &keyed {
            let pts = p.points(*id, p.start, p.end)?;
            if pts.is_empty() {
                continue;
            }
            builder.add_series(key, &pts);
            points += pts.len();
            series += 1;
        }
        let bytes = builder.finish();
        let seg = SealedSegment::from_bytes(bytes)
            .map_err(|e| StoreError::Corrupt(format!("freshly built segment: {e}")))?;
        if let Some(dir) = self.dir() {
            let seg_dir = dir.join("segments");
            let tmp = seg_dir.join(format!("{start:020}.mops.tmp"));
            let dst = seg_dir.join(format!("{start:020}.mops"));
            let mut f = File::create(&tmp)?;
            f.write_all(seg.bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &dst)?;
            File::open(&seg_dir)?.sync_all()?;
            p.wal = None;
            let wal = dir.join("wal").join(format!("{start:020}.wal"));
            if wal.exists() {
                fs::remove_file(wal)?;
            }
        }
        let info = SealInfo {
            partition_start: start,
            series,
            points,
            bytes: seg.size_bytes(),
        };
        p.sealed_ids = seg
            .index()
            .iter()
            .enumerate()
            .map(|(i, e)| (self.series.read().ids[&e.key], i))
            .collect();
        p.sealed = Some(Arc::new(seg));
        p.buffer.clear();
        Ok(Some(info))
    }

    /// Seals every partition whose window ended at least the lateness grace ago.
    pub fn seal_due(&self, now: EpochMs) -> Result<Vec<SealInfo>, StoreError> {
        let due: Vec<i64> = self
            .partitions
            .read()
            .iter()
            .filter(|(_, p)| {
                let p = p.read();
                p.end + self.config.lateness_grace_ms <= now && !p.buffer.is_empty()
            })
            .map(|(s, _)| *s)
            .collect();
        let mut out = Vec::new();
        for start in due {
            if let Some(info) = self.seal_partition(start)? {
                out.push(info);
            }
        }
        Ok(out)
    }

    /// Drops partitions whose whole window is older than the retention floor.
    pub fn enforce_retention(&self, now: EpochMs) -> Result<Vec<i64>, StoreError> {
        let floor = self.retention_floor(now);
        let dropped: Vec<i64> = {
            let mut parts = self.partitions.write();
            let starts: Vec<i64> = parts
                .iter()
                .filter(|(_, p)| p.read().end <= floor)
                .map(|(s, _)| *s)
                .collect();
            for s in &starts {
                parts.remove(s);
            }
            starts
        };
        if let Some(dir) = self.dir() {
            for s in &dropped {
                for path in [
                    dir.join("segments").join(format!("{s:020}.mops")),
                    dir.join("wal").join(format!("{s:020}.wal")),
                ] {
                    if path.exists() {
                        fs::remove_file(path)?;
                    }
                }
            }
        }
        Ok(dropped)
    }

    fn matching_series(&self, metric: &str, filters: &[(String, String)]) -> Vec<(SeriesKey, SeriesId)> {
        let index = self.series.read();
        let mut out: Vec<(SeriesKey, SeriesId)> = index
            .by_metric
            .get(metric)
            .into_iter()
            .flatten()
            .map(|id| (&index.keys[*id as usize], *id))
            .filter(|(k, _)| filters.iter().all(|(fk, fv)| k.tag(fk) == Some(fv.as_str())))
            .map(|(k, id)| (k.clone(), id))
            .collect();
        out.sort();
        out
    }

    fn overlapping(&self, from: i64, to: i64) -> Vec<Arc<RwLock<Partition>>> {
        let first = self.partition_start(from);
        self.partitions
            .read()
            .range(first..to)
            .map(|(_, p)| p.clone())
            .collect()
    }

    pub fn query(&self, q: &Query) -> Result<QueryResult, StoreError> {
        q.validate()?;
        let series = self.matching_series(&q.metric, &q.filters);
        let mut cells: BTreeMap<(Vec<String>, i64), Accumulator> = BTreeMap::new();
        if !series.is_empty() {
            let groups: Vec<Vec<String>> = series
                .iter()
                .map(|(k, _)| {
                    q.group_by
                        .iter()
                        .map(|g| k.tag(g).unwrap_or("").to_string())
                        .collect()
                })
                .collect();
            for part in self.overlapping(q.from, q.to) {
                let p = part.read();
                for ((_, id), group) in series.iter().zip(&groups) {
                    for (ts, v) in p.points(*id, q.from, q.to)? {
                        cells
                            .entry((group.clone(), q.bucket_start(ts)))
                            .or_default()
                            .push(ts, v);
                    }
                }
            }
        }
        let rows = cells
            .into_iter()
            .filter_map(|((group, bucket_start), acc)| {
                acc.finish(q.aggregate).map(|value| Row {
                    group,
                    bucket_start,
                    value,
                })
            })
            .collect();
        Ok(QueryResult {
            columns: QueryResult::columns_for(q),
            rows,
        })
    }

    /// Every stored point (after last-write-wins) in `[from, to)`, ordered by
    /// series key then timestamp. Optionally restricted to one metric.
    pub fn scan(&self, metric: Option<&str>, from: i64, to: i64) -> Result<Vec<MetricPoint>, StoreError> {
        let series: Vec<(SeriesKey, SeriesId)> = match metric {
            Some(m) => self.matching_series(m, &[]),
            None => {
                let index = self.series.read();
                let mut all: Vec<_> = index
                    .keys
                    .iter()
                    .enumerate()
                    .map(|(i, k)| (k.clone(), i as SeriesId))
                    .collect();
                all.sort();
                all
            }
        };
        let parts = self.overlapping(from, to);
        let mut out = Vec::new();
        for (key, id) in &series {
            for part in &parts {
                for (ts, value) in part.read().points(*id, from, to)? {
                    out.push(MetricPoint::new(key.clone(), ts, value));
                }
            }
        }
        Ok(out)
    }

    pub fn distinct_point_count(&self, from: i64, to: i64) -> Result<usize, StoreError> {
        let mut n = 0;
        for part in self.overlapping(from, to) {
            let p = part.read();
            for id in p.series_ids() {
                n += p.points(id, from, to)?.len();
            }
        }
        Ok(n)
    }

    pub fn series_keys(&self, metric: Option<&str>) -> Vec<SeriesKey> {
        let index = self.series.read();
        let mut keys: Vec<SeriesKey> = match metric {
            Some(m) => index
                .by_metric
                .get(m)
                .into_iter()
                .flatten()
                .map(|id| index.keys[*id as usize].clone())
                .collect(),
            None => index.keys.clone(),
        };
        keys.sort();
        keys
    }

    pub fn partition_starts(&self) -> Vec<i64> {
        self.partitions.read().keys().copied().collect()
    }

    pub fn sealed_segment(&self, start: i64) -> Option<Arc<SealedSegment>> {
        self.partitions.read().get(&start).and_then(|p| p.read().sealed.clone())
    }

    pub fn stats(&self) -> MetricStats {
        let parts = self.partitions.read();
        let mut s = MetricStats {
            partitions: parts.len(),
            series: self.series.read().keys.len(),
            ..MetricStats::default()
        };
        for p in parts.values() {
            let p = p.read();
            s.buffered_points += p.buffered_points();
            if let Some(seg) = &p.sealed {
                s.sealed_partitions += 1;
                s.sealed_bytes += seg.size_bytes();
            }
        }
        s
    }
}

impl From<QueryError> for StoreError {
    fn from(e: QueryError) -> Self {
        StoreError::Query(e)
    }
}
