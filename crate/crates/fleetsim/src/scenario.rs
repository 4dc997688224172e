use miniops_core::EpochMs;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed virtual start so ledgers do not depend on the wall clock.
pub const DEFAULT_T0: EpochMs = 1_700_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Generator {
    RandomWalk {
        step: f64,
        #[serde(default)]
        start: f64,
    },
    LinearRamp {
        slope_per_day: f64,
        start: f64,
    },
    Sinusoid {
        period_s: f64,
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
    Constant {
        v: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub generator: Generator,
    /// Uniform noise amplitude added to every sample.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scope {
    All(AllScope),
    Servers(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllScope {
    All,
}

impl Default for Scope {
    fn default() -> Self {
        Scope::All(AllScope::All)
    }
}

impl Scope {
    pub fn covers(&self, server: &str) -> bool {
        match self {
            Scope::All(_) => true,
            Scope::Servers(s) => s.iter().any(|x| x == server),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    IngesterOutage,
    AgentPause,
}

/// Active over `[start_s, end_s)` of virtual time since the scenario start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    #[serde(rename = "type")]
    pub kind: FaultKind,
    pub start_s: u64,
    pub end_s: u64,
    #[serde(default)]
    pub scope: Scope,
}

impl Fault {
    pub fn active(&self, elapsed_ms: i64) -> bool {
        elapsed_ms >= self.start_s as i64 * 1000 && elapsed_ms < self.end_s as i64 * 1000
    }
}

fn default_tick() -> u64 {
    1000
}

fn default_capacity() -> usize {
    10_000
}

fn default_topic() -> String {
    "metrics.sim".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub servers: usize,
    pub metrics: Vec<MetricSpec>,
    #[serde(default = "default_tick")]
    pub tick_ms: u64,
    pub duration_s: u64,
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// Spool capacity per agent, in batches.
    #[serde(default = "default_capacity")]
    pub spool_capacity: usize,
    #[serde(default = "default_topic")]
    pub topic: String,
    #[serde(default)]
    pub t0: Option<EpochMs>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("{0}")]
    Invalid(String),
}

impl Scenario {
    pub fn t0(&self) -> EpochMs {
        self.t0.unwrap_or(DEFAULT_T0)
    }

    pub fn ticks(&self) -> u64 {
        self.duration_s * 1000 / self.tick_ms
    }

    pub fn server_id(i: usize) -> String {
        format!("srv-{i:04}")
    }

    pub fn server_ids(&self) -> Vec<String> {
        (0..self.servers).map(Self::server_id).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.servers == 0 || self.metrics.is_empty() {
            return bad("need at least one server and one metric".into());
        }
        if self.tick_ms < 1000 || self.tick_ms % 1000 != 0 {
            return bad("tick_ms must be a positive multiple of 1000".into());
        }
        if self.tick_ms / 1000 > u64::from(u32::MAX) {
            return bad("tick_ms too large".into());
        }
        if self.duration_s == 0 {
            return bad("duration_s must be positive".into());
        }
        if self.spool_capacity == 0 {
            return bad("spool_capacity must be positive".into());
        }
        if !miniops_core::is_valid_topic(&self.topic) {
            return bad(format!("invalid topic '{}'", self.topic));
        }
        let mut names: Vec<&str> = self.metrics.iter().map(|m| m.name.as_str()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| n.is_empty()) {
            return bad("metric names must be unique and non-empty".into());
        }
        for f in &self.faults {
            if f.start_s >= f.end_s || f.end_s > self.duration_s {
                return bad(format!(
                    "fault window [{}, {}) must be non-empty and within the duration",
                    f.start_s, f.end_s
                ));
            }
        }
        for m in &self.metrics {
            let finite = match m.generator {
                Generator::RandomWalk { step, start } => step.is_finite() && step >= 0.0 && start.is_finite(),
                Generator::LinearRamp { slope_per_day, start } => slope_per_day.is_finite() && start.is_finite(),
                Generator::Sinusoid {
                    period_s,
                    amplitude,
                    offset,
                } => period_s > 0.0 && amplitude.is_finite() && offset.is_finite(),
                Generator::Constant { v } => v.is_finite(),
            };
            if !finite || !(m.noise >= 0.0) || !m.noise.is_finite() {
                return bad(format!("metric '{}' has invalid generator parameters", m.name));
            }
        }
        Ok(())
    }
}

/// A draining resource with a known saturation day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub metric: MetricSpec,
    /// Days from the scenario start until the line reaches zero.
    pub saturation_day: f64,
    pub horizon_days: f64,
}

pub fn scripted_saturation(
    name: &str,
    slope_per_day: f64,
    start: f64,
    horizon_days: f64,
    noise: f64,
) -> Result<Saturation, ScenarioError> {
    if !(slope_per_day < 0.0) {
        return Err(ScenarioError::Invalid(format!(
            "saturation slope must be negative, got {slope_per_day}"
        )));
    }
    if !(start > 0.0) {
        return Err(ScenarioError::Invalid("saturation start value must be positive".into()));
    }
    Ok(Saturation {
        metric: MetricSpec {
            name: name.to_string(),
            generator: Generator::LinearRamp { slope_per_day, start },
            noise,
        },
        saturation_day: start / slope_per_day.abs(),
        horizon_days,
    })
}
