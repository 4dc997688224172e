use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use miniops_core::EpochMs;

use crate::frame::{self, Decoded, HEADER_LEN, TRAILER_LEN};
use crate::QueueError;

pub(crate) fn segment_file_name(first_offset: u64) -> String {
    format!("{first_offset:020}.seg")
}

pub(crate) fn parse_segment_file_name(name: &str) -> Option<u64> {
    let stem = name.strip_suffix(".seg")?;
    if stem.len() != 20 {
        return None;
    }
    stem.parse().ok()
}

pub(crate) fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

pub(crate) struct Segment {
    pub first_offset: u64,
    pub path: PathBuf,
    file: File,
    /// Byte position of each frame.
    positions: Vec<u64>,
    enqueued_at: Vec<EpochMs>,
    pub size: u64,
    pub last_append_ms: EpochMs,
}

impl Segment {
    pub fn create(dir: &Path, first_offset: u64, now: EpochMs) -> io::Result<Segment> {
        let path = dir.join(segment_file_name(first_offset));
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .create_new(true)
            .open(&path)?;
        sync_dir(dir)?;
        Ok(Segment {
            first_offset,
            path,
            file,
            positions: Vec::new(),
            enqueued_at: Vec::new(),
            size: 0,
            last_append_ms: now,
        })
    }

    /// Scans an existing segment. A torn tail is truncated when `is_last`;
    /// anywhere else a bad frame is corruption.
    pub fn open(path: PathBuf, first_offset: u64, is_last: bool) -> Result<Segment, QueueError> {
        let bytes = fs::read(&path)?;
        let mtime = fs::metadata(&path)?
            .modified()
            .ok()
            .and_then(|m| m.duration_since(UNIX_EPOCH).ok())
            .map(|d| d.as_millis() as EpochMs)
            .unwrap_or(0);
        let mut positions = Vec::new();
        let mut pos = 0usize;
        while pos < bytes.len() {
            match frame::decode(&bytes[pos..]) {
                Decoded::Frame { len, .. } => {
                    positions.push(pos as u64);
                    pos += len;
                }
                bad => {
                    if !is_last {
                        return Err(QueueError::Corrupt {
                            path: path.display().to_string(),
                            reason: format!("{bad:?} at byte {pos}"),
                        });
                    }
                    tracing::warn!(path = %path.display(), pos, "truncating torn segment tail");
                    break;
                }
            }
        }
        let file = OpenOptions::new().read(true).append(true).open(&path)?;
        if pos < bytes.len() {
            file.set_len(pos as u64)?;
            file.sync_all()?;
        }
        let n = positions.len();
        Ok(Segment {
            first_offset,
            path,
            file,
            positions,
            enqueued_at: vec![mtime; n],
            size: pos as u64,
            last_append_ms: mtime,
        })
    }

    pub fn count(&self) -> u64 {
        self.positions.len() as u64
    }

    pub fn next_offset(&self) -> u64 {
        self.first_offset + self.count()
    }

    pub fn last_offset(&self) -> Option<u64> {
        self.next_offset().checked_sub(1).filter(|_| self.count() > 0)
    }

    /// Appends pre-encoded frames; `lens` gives each frame's byte length.
    pub fn append(&mut self, frames: &[u8], lens: &[usize], now: EpochMs) -> io::Result<()> {
        self.file.write_all(frames)?;
        let mut pos = self.size;
        for &len in lens {
            self.positions.push(pos);
            self.enqueued_at.push(now);
            pos += len as u64;
        }
        self.size = pos;
        self.last_append_ms = now;
        Ok(())
    }

    pub fn sync(&self) -> io::Result<()> {
        self.file.sync_data()
    }

    /// Drops every frame from index `keep` onward.
    pub fn truncate_to(&mut self, keep: usize) -> io::Result<()> {
        if keep >= self.positions.len() {
            return Ok(());
        }
        let new_size = self.positions[keep];
        self.file.set_len(new_size)?;
        self.positions.truncate(keep);
        self.enqueued_at.truncate(keep);
        self.size = new_size;
        Ok(())
    }

    pub fn read(&self, offset: u64) -> Result<(Vec<u8>, u32, EpochMs), QueueError> {
        let idx = (offset - self.first_offset) as usize;
        let pos = self.positions[idx];
        let mut header = [0u8; HEADER_LEN];
        self.file.read_exact_at(&mut header, pos)?;
        let n = u32::from_le_bytes(header) as usize;
        let mut body = vec![0u8; n + TRAILER_LEN];
        self.file.read_exact_at(&mut body, pos + HEADER_LEN as u64)?;
        let crc = u32::from_le_bytes(body[n..].try_into().unwrap());
        body.truncate(n);
        if frame::checksum(&body) != crc {
            return Err(QueueError::Corrupt {
                path: self.path.display().to_string(),
                reason: format!("checksum mismatch at offset {offset}"),
            });
        }
        Ok((body, crc, self.enqueued_at[idx]))
    }
}
