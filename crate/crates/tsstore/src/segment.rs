//! Sealed segment file format (`MOPS1`). All integers little-endian.
//!
//! ```text
//! header   "MOPS1" | u8 version=1 | i64 t0 | i64 t1 | u32 series_count
//! blocks   per series:
//!            key:   u32 name_len | name | u32 tag_count | (u32 len | bytes){2 per tag}
//!            u32 point_count
//!            u32 ts_len  | timestamp column (delta-of-delta varints)
//!            u32 val_len | value column (XOR bit-packed)
//! footer   per series: u64 block_offset | u32 block_len | i64 min_ts | i64 max_ts
//! trailer  u64 footer_offset | u32 CRC32 of every preceding byte
//! ```
//!
//! Points cover `[t0, t1)`; timestamps within a series are strictly increasing.

use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::series::SeriesKey;

pub const MAGIC: &[u8; 5] = b"MOPS1";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 5 + 1 + 8 + 8 + 4;
const FOOTER_ENTRY_LEN: usize = 8 + 4 + 8 + 8;
const TRAILER_LEN: usize = 8 + 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("bad magic or version")]
    BadMagic,
    #[error("checksum mismatch")]
    Checksum,
    #[error("malformed segment: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub key: SeriesKey,
    pub count: usize,
    pub min_ts: i64,
    pub max_ts: i64,
    ts_range: (usize, usize),
    val_range: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct SealedSegment {
    pub t0: i64,
    pub t1: i64,
    bytes: Vec<u8>,
    index: Vec<IndexEntry>,
}

pub struct SegmentBuilder {
    t0: i64,
    t1: i64,
    body: Vec<u8>,
    footer: Vec<u8>,
    count: u32,
}

impl SegmentBuilder {
    pub fn new(t0: i64, t1: i64) -> Self {
        let mut body = Vec::with_capacity(4096);
        body.extend_from_slice(MAGIC);
        body.push(VERSION);
        body.extend_from_slice(&t0.to_le_bytes());
        body.extend_from_slice(&t1.to_le_bytes());
        body.extend_from_slice(&0u32.to_le_bytes());
        SegmentBuilder {
            t0,
            t1,
            body,
            footer: Vec::new(),
            count: 0,
        }
    }

    /// `points` must be sorted by strictly increasing timestamp, non-empty,
    /// and inside `[t0, t1)`.
    pub fn add_series(&mut self, key: &SeriesKey, points: &[(i64, f64)]) {
        debug_assert!(!points.is_empty());
        debug_assert!(points.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(points.iter().all(|p| p.0 >= self.t0 && p.0 < self.t1));
        let start = self.body.len();
        key.encode(&mut self.body);
        let ts: Vec<i64> = points.iter().map(|p| p.0).collect();
        let vals: Vec<f64> = points.iter().map(|p| p.1).collect();
        let ts_col = codec::encode_timestamps(&ts);
        let val_col = codec::encode_values(&vals);
        self.body.extend_from_slice(&(points.len() as u32).to_le_bytes());
        self.body.extend_from_slice(&(ts_col.len() as u32).to_le_bytes());
        self.body.extend_from_slice(&ts_col);
        self.body.extend_from_slice(&(val_col.len() as u32).to_le_bytes());
        self.body.extend_from_slice(&val_col);
        let len = self.body.len() - start;
        self.footer.extend_from_slice(&(start as u64).to_le_bytes());
        self.footer.extend_from_slice(&(len as u32).to_le_bytes());
        self.footer.extend_from_slice(&ts[0].to_le_bytes());
        self.footer.extend_from_slice(&ts[ts.len() - 1].to_le_bytes());
        self.count += 1;
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.body[22..26].copy_from_slice(&self.count.to_le_bytes());
        let footer_offset = self.body.len() as u64;
        self.body.extend_from_slice(&self.footer);
        self.body.extend_from_slice(&footer_offset.to_le_bytes());
        let crc = crc32fast::hash(&self.body);
        self.body.extend_from_slice(&crc.to_le_bytes());
        self.body
    }
}

fn u32_at(b: &[u8], pos: usize) -> Result<u32, SegmentError> {
    b.get(pos..pos + 4)
        .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        .ok_or(SegmentError::Malformed("truncated"))
}

fn u64_at(b: &[u8], pos: usize) -> Result<u64, SegmentError> {
    b.get(pos..pos + 8)
        .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
        .ok_or(SegmentError::Malformed("truncated"))
}

impl SealedSegment {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<SealedSegment, SegmentError> {
        if bytes.len() < HEADER_LEN + TRAILER_LEN || &bytes[..5] != MAGIC || bytes[5] != VERSION {
            return Err(SegmentError::BadMagic);
        }
        let trailer = bytes.len() - TRAILER_LEN;
        let crc = u32_at(&bytes, trailer + 8)?;
        if crc32fast::hash(&bytes[..trailer + 8]) != crc {
            return Err(SegmentError::Checksum);
        }
        let t0 = u64_at(&bytes, 6)? as i64;
        let t1 = u64_at(&bytes, 14)? as i64;
        let count = u32_at(&bytes, 22)? as usize;
        let footer = u64_at(&bytes, trailer)? as usize;
        if footer + count * FOOTER_ENTRY_LEN != trailer {
            return Err(SegmentError::Malformed("footer size"));
        }
        let mut index = Vec::with_capacity(count);
        for i in 0..count {
            let e = footer + i * FOOTER_ENTRY_LEN;
            let offset = u64_at(&bytes, e)? as usize;
            let len = u32_at(&bytes, e + 8)? as usize;
            let min_ts = u64_at(&bytes, e + 12)? as i64;
            let max_ts = u64_at(&bytes, e + 20)? as i64;
            if offset + len > footer {
                return Err(SegmentError::Malformed("block bounds"));
            }
            let mut pos = offset;
            let key = SeriesKey::decode(&bytes, &mut pos).ok_or(SegmentError::Malformed("key"))?;
            let n = u32_at(&bytes, pos)? as usize;
            let ts_len = u32_at(&bytes, pos + 4)? as usize;
            let ts_start = pos + 8;
            let val_len = u32_at(&bytes, ts_start + ts_len)? as usize;
            let val_start = ts_start + ts_len + 4;
            if val_start + val_len != offset + len {
                return Err(SegmentError::Malformed("block layout"));
            }
            index.push(IndexEntry {
                key,
                count: n,
                min_ts,
                max_ts,
                ts_range: (ts_start, ts_start + ts_len),
                val_range: (val_start, val_start + val_len),
            });
        }
        Ok(SealedSegment {
            t0,
            t1,
            bytes,
            index,
        })
    }

    pub fn size_bytes(&self) -> usize {
        self.bytes.len()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.index
    }

    pub fn point_count(&self) -> usize {
        self.index.iter().map(|e| e.count).sum()
    }

    pub fn find(&self, key: &SeriesKey) -> Option<usize> {
        self.index.iter().position(|e| &e.key == key)
    }

    pub fn points(&self, series_idx: usize) -> Result<Vec<(i64, f64)>, SegmentError> {
        let e = &self.index[series_idx];
        let ts = codec::decode_timestamps(&self.bytes[e.ts_range.0..e.ts_range.1], e.count)?;
        let vals = codec::decode_values(&self.bytes[e.val_range.0..e.val_range.1], e.count)?;
        Ok(ts.into_iter().zip(vals).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build() -> (Vec<u8>, SeriesKey, Vec<(i64, f64)>) {
        let key = SeriesKey::new("cpu", [("server", "s1")]);
        let pts: Vec<(i64, f64)> = (0..100).map(|i| (i * 1000, (i as f64).sin())).collect();
        let mut b = SegmentBuilder::new(0, 3_600_000);
        b.add_series(&key, &pts);
        b.add_series(&SeriesKey::new("cpu", [("server", "s2")]), &[(5, 1.0)]);
        (b.finish(), key, pts)
    }

    #[test]
    fn round_trip_and_index() {
        let (bytes, key, pts) = build();
        assert_eq!(&bytes[..5], b"MOPS1");
        let seg = SealedSegment::from_bytes(bytes).unwrap();
        assert_eq!(seg.t1, 3_600_000);
        assert_eq!(seg.index().len(), 2);
        assert_eq!(seg.point_count(), 101);
        let i = seg.find(&key).unwrap();
        assert_eq!(seg.index()[i].min_ts, 0);
        assert_eq!(seg.index()[i].max_ts, 99_000);
        assert_eq!(seg.points(i).unwrap(), pts);
    }

    #[test]
    fn corruption_detected() {
        let (mut bytes, _, _) = build();
        bytes[40] ^= 1;
        assert_eq!(SealedSegment::from_bytes(bytes).unwrap_err(), SegmentError::Checksum);
        let (mut bytes, _, _) = build();
        bytes[0] = b'X';
        assert_eq!(SealedSegment::from_bytes(bytes).unwrap_err(), SegmentError::BadMagic);
    }

    #[test]
    fn empty_segment() {
        let seg = SealedSegment::from_bytes(SegmentBuilder::new(0, 10).finish()).unwrap();
        assert_eq!(seg.point_count(), 0);
    }
}
