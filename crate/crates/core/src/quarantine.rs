//! Quarantine tickets: resources held back for manual de-identification.
//!
//! ```text
//! Quarantined --edit--> InReview --edit--> InReview
//!      |                   |
//!      +----approve/reject-+--> Approved | Rejected
//! ```
//!
//! Approve and reject taken straight from `Quarantined` pass through
//! `InReview` implicitly; both end states are final.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::deid::{self, Applied, DeidError, DeidOutcome, Finding, RuleSet};
use crate::model::{is_index_segment, last_segment, serialize_resource, ElementValue, Resource, ResourceKind};
use crate::vault::{PseudonymVault, Scope};

pub const REDACTED: &str = "[REDACTED]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TicketState {
    Quarantined,
    InReview,
    Approved,
    Rejected,
}

impl fmt::Display for TicketState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TicketState::Quarantined => "quarantined",
            TicketState::InReview => "in-review",
            TicketState::Approved => "approved",
            TicketState::Rejected => "rejected",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditAction {
    Redact,
    ReplacePseudonym,
    ShiftDate,
}

/// A reviewer's requested change. Without `span` the action applies to the
/// whole element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub path: String,
    pub action: EditAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub path: String,
    pub action: EditAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
    pub actor: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TicketError {
    #[error("cannot {op} a ticket in state {from}")]
    IllegalTransition { from: TicketState, op: &'static str },
    #[error("{} findings remain", .0.len())]
    FindingsRemain(Vec<Finding>),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error(transparent)]
    Deid(#[from] DeidError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineTicket {
    pub id: String,
    pub original: Resource,
    /// Findings that blocked automatic clearance.
    pub findings: Vec<Finding>,
    pub state: TicketState,
    pub edits: Vec<Edit>,
    /// Reviewer's copy; discarded on reject.
    pub working: Option<Resource>,
    /// Blocking findings in the working copy after the latest edit.
    pub remaining: Vec<Finding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleared_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketSummary {
    pub id: String,
    pub kind: ResourceKind,
    pub state: TicketState,
    pub findings: usize,
    pub remaining: usize,
}

/// Ticket ids are content-addressed so re-ingesting the same payload lands on
/// the same ticket.
pub fn ticket_id(original: &Resource) -> String {
    let digest = Sha256::digest(serialize_resource(original).as_bytes());
    format!("Q-{}", &hex::encode(digest)[..24])
}

impl QuarantineTicket {
    pub fn new(original: Resource, findings: Vec<Finding>) -> Self {
        QuarantineTicket {
            id: ticket_id(&original),
            working: Some(original.clone()),
            remaining: findings.clone(),
            original,
            findings,
            state: TicketState::Quarantined,
            edits: Vec::new(),
            reason: None,
            cleared_id: None,
        }
    }

    pub fn summary(&self) -> TicketSummary {
        TicketSummary {
            id: self.id.clone(),
            kind: self.original.kind,
            state: self.state,
            findings: self.findings.len(),
            remaining: self.remaining.len(),
        }
    }

    pub fn is_open(&self) -> bool {
        matches!(self.state, TicketState::Quarantined | TicketState::InReview)
    }

    fn require_open(&self, op: &'static str) -> Result<(), TicketError> {
        if self.is_open() {
            Ok(())
        } else {
            Err(TicketError::IllegalTransition { from: self.state, op })
        }
    }

    /// Applies one edit to the working copy and returns the findings still
    /// blocking clearance. On error the ticket is unchanged.
    pub fn apply_edit(
        &mut self,
        edit: EditRequest,
        actor: &str,
        at: DateTime<Utc>,
        rules: &RuleSet,
        vault: &PseudonymVault,
    ) -> Result<Vec<Finding>, TicketError> {
        self.require_open("edit")?;
        let mut working = self.working.clone().unwrap_or_else(|| self.original.clone());
        apply_to(&mut working, &edit, vault)?;
        let remaining = deid::blocking_findings(&working, rules);
        self.working = Some(working);
        self.remaining = remaining.clone();
        self.state = TicketState::InReview;
        self.edits.push(Edit { path: edit.path, action: edit.action, span: edit.span, actor: actor.to_string(), timestamp: at });
        Ok(remaining)
    }

    /// Runs the full pipeline over the working copy. Succeeds only when the
    /// result clears; otherwise the ticket is left as it was.
    pub fn approve(&mut self, rules: &RuleSet, vault: &PseudonymVault) -> Result<(Resource, Vec<Applied>), TicketError> {
        self.require_open("approve")?;
        let working = self.working.clone().unwrap_or_else(|| self.original.clone());
        match deid::deidentify(&working, rules, vault)? {
            DeidOutcome::Cleared { resource, applied } => {
                self.state = TicketState::Approved;
                self.cleared_id = Some(resource.id.clone());
                self.remaining.clear();
                Ok((resource, applied))
            }
            DeidOutcome::Quarantined { ticket } => Err(TicketError::FindingsRemain(ticket.findings)),
        }
    }

    pub fn reject(&mut self, reason: &str) -> Result<(), TicketError> {
        self.require_open("reject")?;
        self.state = TicketState::Rejected;
        self.reason = Some(reason.to_string());
        self.working = None;
        Ok(())
    }
}

fn apply_to(resource: &mut Resource, edit: &EditRequest, vault: &PseudonymVault) -> Result<(), TicketError> {
    let invalid = |m: String| TicketError::InvalidEdit(m);
    let value = resource.element_at(&edit.path).cloned();
    if value.is_none() && !(edit.action == EditAction::Redact && edit.span.is_none()) {
        return Err(invalid(format!("no element at {}", edit.path)));
    }
    let span_text = |v: &ElementValue| -> Result<(String, usize, usize), TicketError> {
        let (s, e) = edit.span.expect("checked by caller");
        let text = v.as_str().ok_or_else(|| invalid(format!("{} is not text", edit.path)))?;
        if s >= e || !text.is_char_boundary(s) || !text.is_char_boundary(e) || e > text.len() {
            return Err(invalid(format!("span {s}..{e} is not valid for {}", edit.path)));
        }
        Ok((text.to_string(), s, e))
    };
    let rebuild = |v: &ElementValue, text: String| match v {
        ElementValue::Narrative(_) => ElementValue::Narrative(text),
        _ => ElementValue::String(text),
    };
    match (edit.action, edit.span) {
        (EditAction::Redact, None) => {
            if resource.paths_under(&edit.path).is_empty() {
                return Err(invalid(format!("no element at {}", edit.path)));
            }
            resource.remove_subtree(&edit.path);
            let mut cur = edit.path.as_str();
            while let Some((parent, _)) = cur.rsplit_once('.') {
                if is_index_segment(last_segment(parent)) && resource.paths_under(parent).is_empty() {
                    resource.remove_subtree(parent);
                }
                cur = parent;
            }
        }
        (EditAction::Redact, Some(_)) => {
            let v = value.expect("checked above");
            let (mut text, s, e) = span_text(&v)?;
            text.replace_range(s..e, REDACTED);
            resource.replace(&edit.path, rebuild(&v, text));
        }
        (EditAction::ReplacePseudonym, span) => {
            let v = value.expect("checked above");
            let source = match span {
                Some(_) => {
                    let (text, s, e) = span_text(&v)?;
                    text[s..e].to_string()
                }
                None => v.text().into_owned(),
            };
            let pseudonym = vault
                .get_or_create(&source, Scope::PatientId)
                .map_err(|e| TicketError::Deid(DeidError::VaultUnavailable(e.to_string())))?;
            let new = match span {
                Some((s, e)) => {
                    let mut text = v.as_str().unwrap_or_default().to_string();
                    text.replace_range(s..e, &pseudonym);
                    rebuild(&v, text)
                }
                None => ElementValue::String(pseudonym),
            };
            resource.replace(&edit.path, new);
        }
        (EditAction::ShiftDate, None) => {
            let v = value.expect("checked above");
            let typed = match &v {
                ElementValue::Date(_) | ElementValue::DateTime(_) => v.clone(),
                other => other
                    .as_str()
                    .and_then(deid::parse_date_like)
                    .ok_or_else(|| invalid(format!("{} does not hold a date", edit.path)))?,
            };
            resource.replace(&edit.path, typed);
        }
        (EditAction::ShiftDate, Some(_)) => {
            return Err(invalid("date shifts apply to whole elements; redact dates inside text".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_resource;
    use crate::vault::VaultKey;

    fn setup() -> (QuarantineTicket, RuleSet, PseudonymVault) {
        let rules = RuleSet::standard();
        let vault = PseudonymVault::in_memory(VaultKey::from_slice(&[0u8; 32]).unwrap());
        let r = parse_resource(
            r#"{"resourceType":"DiagnosticReport","id":"d1","status":"final","subject":{"reference":"Patient/p1"},"conclusion":"Reviewed with Dr. Smith"}"#,
            None,
        )
        .unwrap();
        let findings = deid::blocking_findings(&r, &rules);
        (QuarantineTicket::new(r, findings), rules, vault)
    }

    #[test]
    fn redact_then_approve() {
        let (mut t, rules, vault) = setup();
        assert_eq!(t.findings.len(), 1);
        assert!(t.id.starts_with("Q-") && t.id.len() == 26);
        let edit = EditRequest { path: "conclusion".into(), action: EditAction::Redact, span: None };
        assert_eq!(t.apply_edit(edit, "rev", Utc::now(), &rules, &vault).unwrap(), vec![]);
        assert_eq!(t.state, TicketState::InReview);
        let (resource, _) = t.approve(&rules, &vault).unwrap();
        assert_eq!(t.state, TicketState::Approved);
        assert_eq!(t.cleared_id.as_deref(), Some(resource.id.as_str()));
        assert!(deid::scan(&resource, &rules).is_empty());
    }

    #[test]
    fn span_redaction_keeps_the_rest() {
        let (mut t, rules, vault) = setup();
        let f = t.findings[0].clone();
        let edit = EditRequest { path: f.path, action: EditAction::Redact, span: Some(f.span) };
        assert!(t.apply_edit(edit, "rev", Utc::now(), &rules, &vault).unwrap().is_empty());
        let w = t.working.as_ref().unwrap();
        assert_eq!(w.element_at("conclusion").unwrap().as_str(), Some("Reviewed with [REDACTED]"));
        assert!(w.element_at("conclusion").unwrap().is_narrative());
    }

    #[test]
    fn approve_with_findings_is_refused_and_state_kept() {
        let (mut t, rules, vault) = setup();
        assert!(matches!(t.approve(&rules, &vault), Err(TicketError::FindingsRemain(f)) if f.len() == 1));
        assert_eq!(t.state, TicketState::Quarantined);
    }

    #[test]
    fn reject_is_final() {
        let (mut t, rules, vault) = setup();
        t.reject("not research data").unwrap();
        assert_eq!(t.state, TicketState::Rejected);
        assert!(t.working.is_none());
        let edit = EditRequest { path: "conclusion".into(), action: EditAction::Redact, span: None };
        assert!(matches!(
            t.apply_edit(edit, "rev", Utc::now(), &rules, &vault),
            Err(TicketError::IllegalTransition { from: TicketState::Rejected, .. })
        ));
        assert!(matches!(t.approve(&rules, &vault), Err(TicketError::IllegalTransition { .. })));
        assert!(t.reject("again").is_err());
    }

    #[test]
    fn bad_edits_leave_ticket_untouched() {
        let (mut t, rules, vault) = setup();
        let before = t.clone();
        for edit in [
            EditRequest { path: "nope".into(), action: EditAction::Redact, span: None },
            EditRequest { path: "conclusion".into(), action: EditAction::Redact, span: Some((5, 500)) },
            EditRequest { path: "conclusion".into(), action: EditAction::ShiftDate, span: None },
        ] {
            assert!(matches!(t.apply_edit(edit, "rev", Utc::now(), &rules, &vault), Err(TicketError::InvalidEdit(_))));
        }
        assert_eq!(t, before);
    }

    #[test]
    fn pseudonym_replacement() {
        let (mut t, rules, vault) = setup();
        let f = t.findings[0].clone();
        let edit = EditRequest { path: f.path, action: EditAction::ReplacePseudonym, span: Some(f.span) };
        assert!(t.apply_edit(edit, "rev", Utc::now(), &rules, &vault).unwrap().is_empty());
        assert!(t.working.as_ref().unwrap().element_at("conclusion").unwrap().text().contains("PSN-"));
    }
}
