//! Core of the enclave de-identification gateway: the clinical payload model,
//! PHI scanning and de-identification, the pseudonym vault, the zone policy
//! engine, the hash-chained audit log and quarantine tickets.

pub mod audit;
pub mod clock;
pub mod deid;
pub mod model;
pub mod pipeline;
pub mod policy;
pub mod privilege;
pub mod quarantine;
pub mod storage;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod vault;

pub use audit::{AuditAction, AuditEntry, AuditError, AuditEvent, AuditFilter, AuditLog, VerifyReport};
pub use clock::{Clock, ManualClock, SystemClock};
pub use deid::{
    deidentify, deidentify_dicom, derive_offset, scan, shift_date, DeidError, DeidOutcome, Finding, FindingCategory,
    PatientOffset, RuleSet, Strictness,
};
pub use model::{parse_resource, serialize_resource, DicomTag, ElementValue, ModelError, Resource, ResourceKind};
pub use pipeline::{process_document, process_resource, DocumentOutcome, ItemOutcome, PipelineError};
pub use policy::{
    Channel, Decision, Flag, FlagSet, FlowRequest, Mode, PayloadClass, PolicyParseError, PolicySet, Principal, Verdict, Zone,
};
pub use privilege::{Privilege, PrivilegeSet};
pub use quarantine::{EditAction, EditRequest, QuarantineTicket, TicketError, TicketState};
pub use vault::{PseudonymVault, Scope, VaultEntry, VaultError, VaultKey};
