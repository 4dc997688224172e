use std::collections::{HashSet, VecDeque};

use miniops_core::EpochMs;

/// Recently accepted batch ids, bucketed by acceptance time so expiry drops
/// whole buckets. An id is remembered for at least `horizon_ms`.
#[derive(Debug)]
pub struct DedupWindow {
    horizon_ms: i64,
    bucket_ms: i64,
    buckets: VecDeque<(EpochMs, HashSet<String>)>,
    in_flight: HashSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    /// Caller owns the id until it calls `complete` or `abandon`.
    Claimed,
    Duplicate,
    InFlight,
}

impl DedupWindow {
    pub fn new(horizon_ms: i64) -> Self {
        let horizon_ms = horizon_ms.max(1);
        DedupWindow {
            horizon_ms,
            bucket_ms: (horizon_ms / 24).max(1),
            buckets: VecDeque::new(),
            in_flight: HashSet::new(),
        }
    }

    pub fn horizon_ms(&self) -> i64 {
        self.horizon_ms
    }

    fn expire(&mut self, now: EpochMs) {
        // A bucket holds ids accepted in [start, start + bucket_ms).
        while let Some((start, _)) = self.buckets.front() {
            if start + self.bucket_ms + self.horizon_ms <= now {
                self.buckets.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.buckets.iter().any(|(_, ids)| ids.contains(id))
    }

    pub fn claim(&mut self, id: &str, now: EpochMs) -> Claim {
        self.expire(now);
        if self.contains(id) {
            Claim::Duplicate
        } else if !self.in_flight.insert(id.to_string()) {
            Claim::InFlight
        } else {
            Claim::Claimed
        }
    }

    pub fn complete(&mut self, id: &str, now: EpochMs) {
        self.in_flight.remove(id);
        let start = now - now.rem_euclid(self.bucket_ms);
        match self.buckets.back_mut() {
            Some((s, ids)) if *s >= start => {
                ids.insert(id.to_string());
            }
            _ => self.buckets.push_back((start, HashSet::from([id.to_string()]))),
        }
    }

    pub fn abandon(&mut self, id: &str) {
        self.in_flight.remove(id);
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(|(_, ids)| ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
