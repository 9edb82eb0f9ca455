//! The ingest pipeline shared by the HTTP gateway and the batch CLI, so both
//! produce identical bytes for identical input.

use thiserror::Error;

use crate::deid::{self, Applied, DeidError, DeidOutcome, RuleSet};
use crate::model::{parse_resource, serialize_resource, ModelError, Resource, ResourceKind};
use crate::quarantine::QuarantineTicket;
use crate::vault::{PseudonymVault, Scope};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Deid(DeidError),
}

impl From<DeidError> for PipelineError {
    fn from(e: DeidError) -> Self {
        match e {
            DeidError::Model(m) => PipelineError::Model(m),
            other => PipelineError::Deid(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ItemOutcome {
    Cleared { resource: Resource, applied: Vec<Applied> },
    Quarantined { ticket: QuarantineTicket },
}

impl ItemOutcome {
    pub fn is_cleared(&self) -> bool {
        matches!(self, ItemOutcome::Cleared { .. })
    }
}

/// Result of one submitted document. Bundles yield one item per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentOutcome {
    pub kind: ResourceKind,
    pub items: Vec<ItemOutcome>,
    /// Canonical JSON of the whole de-identified document, present only when
    /// every item cleared.
    pub output: Option<String>,
}

impl DocumentOutcome {
    pub fn all_cleared(&self) -> bool {
        self.items.iter().all(ItemOutcome::is_cleared)
    }

    pub fn cleared(&self) -> impl Iterator<Item = &Resource> {
        self.items.iter().filter_map(|i| match i {
            ItemOutcome::Cleared { resource, .. } => Some(resource),
            ItemOutcome::Quarantined { .. } => None,
        })
    }

    pub fn tickets(&self) -> impl Iterator<Item = &QuarantineTicket> {
        self.items.iter().filter_map(|i| match i {
            ItemOutcome::Quarantined { ticket } => Some(ticket),
            ItemOutcome::Cleared { .. } => None,
        })
    }
}

pub fn process_resource(resource: &Resource, rules: &RuleSet, vault: &PseudonymVault) -> Result<DocumentOutcome, PipelineError> {
    let parts = resource.split_bundle()?;
    let mut items = Vec::with_capacity(parts.len());
    for part in &parts {
        items.push(match deid::deidentify(part, rules, vault)? {
            DeidOutcome::Cleared { resource, applied } => ItemOutcome::Cleared { resource, applied },
            DeidOutcome::Quarantined { ticket } => ItemOutcome::Quarantined { ticket: *ticket },
        });
    }
    let mut outcome = DocumentOutcome { kind: resource.kind, items, output: None };
    if outcome.all_cleared() {
        outcome.output = Some(if resource.kind == ResourceKind::Bundle {
            let id = if resource.id.is_empty() {
                String::new()
            } else {
                vault
                    .get_or_create(&format!("Bundle/{}", resource.id), Scope::ResourceId)
                    .map_err(|e| DeidError::VaultUnavailable(e.to_string()))?
            };
            let entries: Vec<Resource> = outcome.cleared().cloned().collect();
            serialize_resource(&deid::assemble_bundle(resource, &id, &entries)?)
        } else {
            serialize_resource(outcome.cleared().next().expect("single resource"))
        });
    }
    Ok(outcome)
}

/// Parses and processes one UTF-8 JSON document.
pub fn process_document(
    text: &str,
    hint: Option<ResourceKind>,
    rules: &RuleSet,
    vault: &PseudonymVault,
) -> Result<DocumentOutcome, PipelineError> {
    let resource = parse_resource(text, hint)?;
    process_resource(&resource, rules, vault)
}
