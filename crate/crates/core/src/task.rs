use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{is_valid_topic, EpochMs};

pub const BUILTIN_GENERATORS: [&str; 4] = [
    "cpu_load",
    "mem_free_bytes",
    "disk_free_bytes",
    "proc_count",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Exec,
    HttpProbe,
    BuiltinMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Whole stdout is a single number.
    Scalar,
    /// One record per non-empty line; `key value` pairs for metric output.
    Lines,
    /// Whole stdout is one log message.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    #[default]
    Get,
    Head,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Metric,
    Log,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "snake_case")]
pub enum TaskSpec {
    Exec {
        command: String,
        parse: ParseMode,
        /// Metric name for produced points; defaults to the task id.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metric_name: Option<String>,
    },
    HttpProbe {
        url: String,
        #[serde(default)]
        method: HttpMethod,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
    },
    BuiltinMetric {
        generator: String,
    },
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::Exec { .. } => TaskKind::Exec,
            TaskSpec::HttpProbe { .. } => TaskKind::HttpProbe,
            TaskSpec::BuiltinMetric { .. } => TaskKind::BuiltinMetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub period_seconds: u32,
    #[serde(default)]
    pub jitter_seconds: u32,
}

impl Schedule {
    pub fn every(period_seconds: u32) -> Self {
        Schedule {
            period_seconds,
            jitter_seconds: 0,
        }
    }

    pub fn period_ms(&self) -> i64 {
        i64::from(self.period_seconds) * 1000
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionTask {
    pub task_id: String,
    #[serde(flatten)]
    pub spec: TaskSpec,
    pub schedule: Schedule,
    pub timeout_ms: u64,
    pub output_topic: String,
    pub output_kind: OutputKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("task id is empty")]
    EmptyId,
    #[error("period_seconds must be at least 1")]
    ZeroPeriod,
    #[error("jitter_seconds ({jitter}) must be below period_seconds ({period})")]
    JitterTooLarge { jitter: u32, period: u32 },
    #[error("timeout_ms must be positive")]
    ZeroTimeout,
    #[error("invalid output topic '{0}'")]
    BadTopic(String),
    #[error("invalid task spec: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Timeout,
    ExecError,
}

/// Versioned task list served to an agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub version: u64,
    pub tasks: Vec<CollectionTask>,
}

/// One task execution as reported to the control plane.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub task_id: String,
    pub server_id: String,
    pub started_at: EpochMs,
    pub outcome: Outcome,
    pub duration_ms: u64,
}

impl CollectionTask {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.task_id.is_empty() {
            return Err(TaskError::EmptyId);
        }
        let Schedule {
            period_seconds,
            jitter_seconds,
        } = self.schedule;
        if period_seconds == 0 {
            return Err(TaskError::ZeroPeriod);
        }
        if jitter_seconds >= period_seconds {
            return Err(TaskError::JitterTooLarge {
                jitter: jitter_seconds,
                period: period_seconds,
            });
        }
        if self.timeout_ms == 0 {
            return Err(TaskError::ZeroTimeout);
        }
        if !is_valid_topic(&self.output_topic) {
            return Err(TaskError::BadTopic(self.output_topic.clone()));
        }
        match &self.spec {
            TaskSpec::Exec { command, .. } if command.trim().is_empty() => {
                Err(TaskError::BadSpec("empty command".into()))
            }
            TaskSpec::HttpProbe { url, .. } if url.is_empty() => {
                Err(TaskError::BadSpec("empty url".into()))
            }
            TaskSpec::BuiltinMetric { generator }
                if !BUILTIN_GENERATORS.contains(&generator.as_str()) =>
            {
                Err(TaskError::BadSpec(format!(
                    "unknown generator '{generator}'"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> TaskKind {
        self.spec.kind()
    }
}
