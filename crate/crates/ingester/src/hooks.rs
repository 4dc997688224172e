//! Per-topic transform hooks applied before publication.

use std::collections::BTreeMap;

use miniops_core::Record;
use serde::{Deserialize, Serialize};

/// A pure transformation over the records of one input topic. Output records
/// may carry a different topic.
pub trait TransformHook: Send + Sync {
    fn hook_id(&self) -> &str;
    fn input_topic(&self) -> &str;
    fn apply(&self, records: Vec<Record>) -> Vec<Record>;
}

/// Adds fixed tags; existing tags with the same key are overwritten.
#[derive(Debug, Clone)]
pub struct TagEnrichment {
    pub hook_id: String,
    pub topic: String,
    pub tags: BTreeMap<String, String>,
}

impl TransformHook for TagEnrichment {
    fn hook_id(&self) -> &str {
        &self.hook_id
    }

    fn input_topic(&self) -> &str {
        &self.topic
    }

    fn apply(&self, mut records: Vec<Record>) -> Vec<Record> {
        for r in &mut records {
            r.tags.extend(self.tags.clone());
        }
        records
    }
}

/// Drops metric records whose value is below `min_value`. Logs pass through.
#[derive(Debug, Clone)]
pub struct DropBelow {
    pub hook_id: String,
    pub topic: String,
    pub min_value: f64,
}

impl TransformHook for DropBelow {
    fn hook_id(&self) -> &str {
        &self.hook_id
    }

    fn input_topic(&self) -> &str {
        &self.topic
    }

    fn apply(&self, records: Vec<Record>) -> Vec<Record> {
        records
            .into_iter()
            .filter(|r| r.value().is_none_or(|v| v >= self.min_value))
            .collect()
    }
}

/// Moves every record to another topic.
#[derive(Debug, Clone)]
pub struct Retopic {
    pub hook_id: String,
    pub topic: String,
    pub target: String,
}

impl TransformHook for Retopic {
    fn hook_id(&self) -> &str {
        &self.hook_id
    }

    fn input_topic(&self) -> &str {
        &self.topic
    }

    fn apply(&self, mut records: Vec<Record>) -> Vec<Record> {
        for r in &mut records {
            r.topic = self.target.clone();
        }
        records
    }
}

/// Startup configuration form of the shipped hooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HookConfig {
    TagEnrichment {
        hook_id: String,
        topic: String,
        tags: BTreeMap<String, String>,
    },
    DropBelow {
        hook_id: String,
        topic: String,
        min_value: f64,
    },
    Retopic {
        hook_id: String,
        topic: String,
        target: String,
    },
}

impl HookConfig {
    pub fn build(self) -> Box<dyn TransformHook> {
        match self {
            HookConfig::TagEnrichment { hook_id, topic, tags } => {
                Box::new(TagEnrichment { hook_id, topic, tags })
            }
            HookConfig::DropBelow {
                hook_id,
                topic,
                min_value,
            } => Box::new(DropBelow {
                hook_id,
                topic,
                min_value,
            }),
            HookConfig::Retopic { hook_id, topic, target } => Box::new(Retopic { hook_id, topic, target }),
        }
    }
}
