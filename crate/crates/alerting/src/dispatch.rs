use std::collections::BTreeMap;

use miniops_core::{EpochMs, Severity};
use miniops_incidents::{IncidentError, IncidentService, NewTicket, TicketSource, REQUIRED_ATTRIBUTES};
use serde::{Deserialize, Serialize};

/// A ticket request raised by a firing alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRequest {
    /// rule_id | group key | fired_at
    pub key: String,
    pub title: String,
    pub description: String,
    pub severity: Severity,
    pub team_hint: Option<String>,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("incident sink unavailable: {0}")]
pub struct SinkError(pub String);

/// Where alert actions land. Implementations must be idempotent on `key`.
pub trait IncidentSink: Send + Sync {
    /// Returns the ticket id.
    fn create_incident(&self, req: &IncidentRequest) -> Result<String, SinkError>;

    fn alert_resolved(&self, key: &str, resolved_at: EpochMs) -> Result<(), SinkError>;
}

/// Sink that drops everything; for engines without an incident service.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl IncidentSink for NullSink {
    fn create_incident(&self, req: &IncidentRequest) -> Result<String, SinkError> {
        Ok(req.key.clone())
    }

    fn alert_resolved(&self, _: &str, _: EpochMs) -> Result<(), SinkError> {
        Ok(())
    }
}

impl IncidentSink for IncidentService {
    fn create_incident(&self, req: &IncidentRequest) -> Result<String, SinkError> {
        let mut attributes = req.attributes.clone();
        for k in REQUIRED_ATTRIBUTES {
            attributes.entry(k.to_string()).or_insert_with(|| "unknown".into());
        }
        if let Some(team) = &req.team_hint {
            attributes.insert("team_hint".into(), team.clone());
        }
        let created = self
            .create_ticket(NewTicket {
                source: TicketSource::Alert {
                    instance: req.key.clone(),
                },
                title: req.title.clone(),
                description: req.description.clone(),
                attributes,
                severity: req.severity,
            })
            .map_err(sink_err)?;
        Ok(created.ticket.ticket_id)
    }

    fn alert_resolved(&self, key: &str, resolved_at: EpochMs) -> Result<(), SinkError> {
        self.link_alert_resolution(key, resolved_at).map(|_| ()).map_err(sink_err)
    }
}

fn sink_err(e: IncidentError) -> SinkError {
    SinkError(e.to_string())
}
