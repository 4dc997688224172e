use miniops_core::EpochMs;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertState {
    Pending,
    Firing,
    Resolved,
}

impl AlertState {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertState::Pending => "pending",
            AlertState::Firing => "firing",
            AlertState::Resolved => "resolved",
        }
    }

    pub fn can_move_to(self, next: AlertState) -> bool {
        matches!(
            (self, next),
            (AlertState::Pending, AlertState::Firing)
                | (AlertState::Pending, AlertState::Resolved)
                | (AlertState::Firing, AlertState::Resolved)
        )
    }
}

impl fmt::Display for AlertState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlertState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(AlertState::Pending),
            "firing" => Ok(AlertState::Firing),
            "resolved" => Ok(AlertState::Resolved),
            _ => Err(format!("unknown alert state '{s}'")),
        }
    }
}

/// States entered by one evaluation of one group.
///
/// `open` is the current non-resolved instance as (state, first breach time).
/// A breach opens a pending instance, which fires once the breach has been
/// seen at every evaluation for at least `for_ms`. Any non-breach resolves.
pub fn advance(
    open: Option<(AlertState, EpochMs)>,
    breach: bool,
    now: EpochMs,
    for_ms: i64,
) -> Vec<AlertState> {
    match (open, breach) {
        (None, false) => vec![],
        (None, true) if for_ms <= 0 => vec![AlertState::Pending, AlertState::Firing],
        (None, true) => vec![AlertState::Pending],
        (Some((AlertState::Pending, first)), true) if now - first >= for_ms => vec![AlertState::Firing],
        (Some(_), true) => vec![],
        (Some(_), false) => vec![AlertState::Resolved],
    }
}
