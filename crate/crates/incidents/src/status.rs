use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    New,
    Triaged,
    InProgress,
    Resolved,
    Closed,
}

impl Status {
    pub const ALL: [Status; 5] = [
        Status::New,
        Status::Triaged,
        Status::InProgress,
        Status::Resolved,
        Status::Closed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::New => "new",
            Status::Triaged => "triaged",
            Status::InProgress => "in_progress",
            Status::Resolved => "resolved",
            Status::Closed => "closed",
        }
    }

    /// Allowed next states. `resolved → in_progress` is the reopen edge.
    pub fn successors(self) -> &'static [Status] {
        match self {
            Status::New => &[Status::Triaged],
            Status::Triaged => &[Status::InProgress],
            Status::InProgress => &[Status::Resolved],
            Status::Resolved => &[Status::Closed, Status::InProgress],
            Status::Closed => &[],
        }
    }

    pub fn can_move_to(self, next: Status) -> bool {
        self.successors().contains(&next)
    }

    pub fn is_open(self) -> bool {
        !matches!(self, Status::Resolved | Status::Closed)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Status::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown status '{s}'"))
    }
}

/// Text of the comment recorded for a status change.
pub fn audit_text(from: Status, to: Status, actor: &str) -> String {
    format!("status: {from}→{to} by {actor}")
}

/// Parses an audit comment back into its transition.
pub fn parse_audit(text: &str) -> Option<(Status, Status)> {
    let rest = text.strip_prefix("status: ")?;
    let (edge, _actor) = rest.split_once(" by ")?;
    let (a, b) = edge.split_once('→')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}
