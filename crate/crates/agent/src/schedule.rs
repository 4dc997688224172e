//! Fixed-period scheduling with a per-task stable jitter.
//!
//! A task's slot is remembered as the un-jittered time of its last firing,
//! so jitter shifts the phase once and the period stays exact afterwards.

use std::collections::{BTreeMap, BTreeSet};

use miniops_core::{CollectionTask, EpochMs};

/// FNV-1a over `agent_id`, a separator byte and `task_id`.
fn stable_hash(agent_id: &str, task_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in agent_id.bytes().chain([0xff]).chain(task_id.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Jitter offset in ms, a whole number of seconds below `jitter_seconds`.
pub fn jitter_offset_ms(agent_id: &str, task_id: &str, jitter_seconds: u32) -> i64 {
    if jitter_seconds == 0 {
        return 0;
    }
    (stable_hash(agent_id, task_id) % u64::from(jitter_seconds)) as i64 * 1000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    last_slot: EpochMs,
    running: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Scheduler {
    agent_id: String,
    slots: BTreeMap<String, Slot>,
}

impl Scheduler {
    pub fn new(agent_id: impl Into<String>) -> Self {
        Scheduler {
            agent_id: agent_id.into(),
            slots: BTreeMap::new(),
        }
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    /// Time the task becomes due next, or `None` if it has never fired.
    pub fn next_due(&self, task: &CollectionTask) -> Option<EpochMs> {
        self.slots.get(&task.task_id).map(|s| {
            s.last_slot
                + task.schedule.period_ms()
                + jitter_offset_ms(&self.agent_id, &task.task_id, task.schedule.jitter_seconds)
        })
    }

    fn is_due(&self, task: &CollectionTask, now: EpochMs) -> bool {
        match self.slots.get(&task.task_id) {
            None => true,
            Some(s) if s.running => false,
            Some(_) => self.next_due(task).is_some_and(|d| now >= d),
        }
    }

    /// Ids of tasks due at `now`, without marking them.
    pub fn due<'a, I>(&self, tasks: I, now: EpochMs) -> BTreeSet<String>
    where
        I: IntoIterator<Item = &'a CollectionTask>,
    {
        tasks
            .into_iter()
            .filter(|t| self.is_due(t, now))
            .map(|t| t.task_id.clone())
            .collect()
    }

    /// Returns the due task ids and records that they fired at `now`.
    /// Fired tasks are marked running until `finish` is called.
    pub fn tick<'a, I>(&mut self, tasks: I, now: EpochMs) -> BTreeSet<String>
    where
        I: IntoIterator<Item = &'a CollectionTask>,
    {
        let tasks: Vec<&CollectionTask> = tasks.into_iter().collect();
        let due = self.due(tasks.iter().copied(), now);
        for t in tasks.iter().filter(|t| due.contains(&t.task_id)) {
            let last_slot = match self.slots.get(&t.task_id) {
                None => now,
                Some(_) => now - jitter_offset_ms(&self.agent_id, &t.task_id, t.schedule.jitter_seconds),
            };
            self.slots.insert(
                t.task_id.clone(),
                Slot {
                    last_slot,
                    running: true,
                },
            );
        }
        due
    }

    pub fn finish(&mut self, task_id: &str) {
        if let Some(s) = self.slots.get_mut(task_id) {
            s.running = false;
        }
    }

    pub fn is_running(&self, task_id: &str) -> bool {
        self.slots.get(task_id).is_some_and(|s| s.running)
    }

    /// Forgets tasks not in `keep`; running ones are kept until they finish
    /// so they cannot be double-started by a quick re-add.
    pub fn retain(&mut self, keep: &BTreeSet<String>) {
        self.slots.retain(|id, s| keep.contains(id) || s.running);
    }
}
