//! The gateway's operations, independent of HTTP plumbing.
//!
//! Every operation authenticates, checks privileges, consults the zone policy
//! before writing into the enclave, and appends its audit entries before it
//! changes any state. When an audit append fails the operation stops with
//! 503 and nothing is written.

use std::sync::Arc;

use axum::http::{HeaderMap, StatusCode};
use chrono::Duration;
use enclave_gate_core::audit::AuditFilter;
use enclave_gate_core::deid;
use enclave_gate_core::pipeline::PipelineError;
use enclave_gate_core::quarantine::TicketSummary;
use enclave_gate_core::{
    process_document, serialize_resource, AuditAction, AuditEntry, AuditEvent, AuditLog, Channel, Clock, DeidError, Decision,
    EditRequest, FlagSet, FlowRequest, Mode, PayloadClass, PolicySet, Principal, Privilege, PseudonymVault,
    QuarantineTicket, Resource, ResourceKind, RuleSet, TicketError, VaultKey, Verdict, Zone,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{Authenticator, LoginError, Session};
use crate::config::GatewayConfig;
use crate::error::ApiError;
use crate::store::{sha256_hex, valid_bucket, valid_key, Attestation, ObjectStore, StoreError, StoredObject};
use crate::tickets::TicketStore;

pub const ATTESTATION_HEADER: &str = "x-enclave-attestation";
pub const DIGEST_HEADER: &str = "x-content-sha256";
pub const FHIR_BUCKET: &str = "fhir";
pub const DICOM_BUCKET: &str = "dicom";
const ANONYMOUS: &str = "anonymous";

pub struct Gateway {
    pub auth: Authenticator,
    pub audit: Arc<AuditLog>,
    pub vault: Arc<PseudonymVault>,
    pub rules: Arc<RuleSet>,
    pub policy: Arc<PolicySet>,
    pub enclave: ObjectStore,
    pub quarantine: TicketStore,
    pub clock: Arc<dyn Clock>,
    pub max_body_bytes: usize,
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("vault: {0}")]
    Vault(#[from] enclave_gate_core::VaultError),
    #[error("audit log: {0}")]
    Audit(#[from] enclave_gate_core::AuditError),
    #[error(transparent)]
    Policy(#[from] enclave_gate_core::PolicyParseError),
    #[error("rule set: {0}")]
    Rules(#[from] DeidError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("quarantine store: {0}")]
    Quarantine(#[from] std::io::Error),
    #[error(transparent)]
    Users(#[from] crate::auth::BadSecret),
}

#[derive(Debug, Deserialize)]
pub struct LoginRequest {
    pub principal: String,
    pub password: String,
    pub totp: String,
}

#[derive(Debug, Serialize)]
pub struct LoginResponse {
    pub token: String,
    #[serde(flatten)]
    pub session: Session,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestResult {
    /// Pseudonymous ids of the cleared resources.
    pub cleared: Vec<String>,
    /// Enclave locations written, as `bucket/key`.
    pub stored: Vec<String>,
    /// Ticket ids of quarantined resources.
    pub quarantined: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditResult {
    pub id: String,
    pub state: String,
    pub remaining: Vec<enclave_gate_core::Finding>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproveResult {
    pub id: String,
    pub cleared_id: String,
    pub stored: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct RejectRequest {
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Deserialize)]
pub struct PolicyCheckRequest {
    pub from: Zone,
    pub to: Zone,
    pub channel: Channel,
    pub payload: PayloadClass,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub mfa: bool,
    #[serde(default)]
    pub flags: FlagSet,
}

#[derive(Debug, Serialize)]
pub struct PolicyCheckResponse {
    #[serde(flatten)]
    pub decision: Decision,
    pub rule: String,
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(axum::http::header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim()).filter(|t| !t.is_empty())
}

/// Where a cleared resource lives in the enclave store.
pub fn enclave_location(resource: &Resource) -> (&'static str, String) {
    let canonical = serialize_resource(resource);
    let name = if resource.id.is_empty() || !valid_key(&resource.id) {
        format!("sha256-{}", &sha256_hex(canonical.as_bytes())[..32])
    } else {
        resource.id.clone()
    };
    match resource.kind {
        ResourceKind::DicomStudyMeta => (DICOM_BUCKET, format!("{name}.json")),
        kind => (FHIR_BUCKET, format!("{}/{name}.json", kind.as_str())),
    }
}

fn document_ref(body: &[u8]) -> String {
    format!("sha256:{}", &sha256_hex(body)[..16])
}

fn pipeline_error(e: PipelineError) -> ApiError {
    match e {
        PipelineError::Model(m) => ApiError::unprocessable(m.to_string()),
        PipelineError::Deid(DeidError::VaultUnavailable(m)) => ApiError::unavailable(format!("pseudonym vault: {m}")),
        PipelineError::Deid(other) => ApiError::internal(other.to_string()),
    }
}

fn store_error(e: StoreError) -> ApiError {
    match e {
        StoreError::BadBucket(_) | StoreError::BadKey(_) => ApiError::bad_request(e.to_string()),
        other => ApiError::internal(other.to_string()),
    }
}

impl Gateway {
    /// Opens every store named by the configuration.
    pub fn from_config(config: &GatewayConfig, clock: Arc<dyn Clock>) -> Result<Self, StartupError> {
        config.validate()?;
        let key = VaultKey::load(&config.vault_key_path)?;
        let vault = PseudonymVault::open(&config.vault_path, key)?;
        let audit = AuditLog::open(&config.audit_path, clock.clone())?;
        let policy = match &config.policy_path {
            Some(p) => PolicySet::load(p)?,
            None => PolicySet::shipped(),
        };
        let rules = match &config.rules_path {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::standard(),
        };
        let ttl = Duration::seconds(config.session_ttl_secs as i64);
        Ok(Gateway {
            auth: Authenticator::new(config.users.clone(), clock.clone(), ttl)?,
            audit: Arc::new(audit),
            vault: Arc::new(vault),
            rules: Arc::new(rules),
            policy: Arc::new(policy),
            enclave: ObjectStore::open(&config.enclave_root)?,
            quarantine: TicketStore::open(&config.quarantine_root)?,
            clock,
            max_body_bytes: config.max_body_bytes,
        })
    }

    fn record(&self, principal: &str, action: AuditAction, resource_ref: &str, outcome: &str) -> Result<AuditEntry, ApiError> {
        self.audit.append(AuditEvent::new(principal, action, resource_ref, outcome)).map_err(|e| {
            tracing::error!(error = %e, "audit append failed");
            ApiError::unavailable("audit log unavailable")
        })
    }

    fn record_all(&self, events: Vec<AuditEvent>) -> Result<(), ApiError> {
        self.audit.append_all(events).map(drop).map_err(|e| {
            tracing::error!(error = %e, "audit append failed");
            ApiError::unavailable("audit log unavailable")
        })
    }

    /// Resolves the caller's session. Each refusal is audited under `action`.
    pub fn authorize(
        &self,
        headers: &HeaderMap,
        action: AuditAction,
        target: &str,
        privilege: Option<Privilege>,
        require_mfa: bool,
    ) -> Result<Session, ApiError> {
        let Some(session) = bearer(headers).and_then(|t| self.auth.authenticate(t)) else {
            self.record(ANONYMOUS, action, target, "unauthenticated")?;
            return Err(ApiError::unauthorized());
        };
        if require_mfa && !session.mfa_verified {
            self.record(&session.principal, action, target, "mfa-required")?;
            return Err(ApiError::unauthorized());
        }
        if let Some(p) = privilege {
            if !session.privileges.contains(&p) {
                self.record(&session.principal, action, target, "forbidden")?;
                return Err(ApiError::forbidden(format!("{p} privilege required")));
            }
        }
        Ok(session)
    }

    fn flow(&self, session: &Session, channel: Channel, payload: PayloadClass) -> FlowRequest {
        FlowRequest {
            principal: Principal { id: session.principal.clone(), mfa_verified: session.mfa_verified, mode: session.mode },
            from: Zone::HospitalNet,
            to: Zone::Enclave,
            channel,
            payload,
            flags: FlagSet::EMPTY,
        }
    }

    /// Consults the zone policy; a denial is audited and refused.
    fn enforce(&self, session: &Session, target: &str, flow: &FlowRequest) -> Result<(), ApiError> {
        let decision = self.policy.check_flow(flow);
        if decision.verdict == Verdict::Allow {
            return Ok(());
        }
        let rule = decision.deciding_rule();
        self.record(&session.principal, AuditAction::PolicyDeny, target, &format!("deny:{rule}"))?;
        Err(ApiError::forbidden(format!("flow denied by {rule}")))
    }

    pub fn login(&self, req: &LoginRequest) -> Result<LoginResponse, ApiError> {
        match self.auth.login(&req.principal, &req.password, &req.totp) {
            Ok(session) => {
                if let Err(e) = self.record(&session.principal, AuditAction::Login, "session", "ok") {
                    self.auth.revoke(&session.token);
                    return Err(e);
                }
                Ok(LoginResponse { token: session.token.clone(), session })
            }
            Err(e @ (LoginError::BadCredentials | LoginError::LockedOut)) => {
                self.record(&req.principal, AuditAction::LoginFailed, "session", e.audit_outcome())?;
                Err(ApiError::unauthorized())
            }
        }
    }

    /// Runs one submitted document through the pipeline. Cleared resources go
    /// to the enclave store; quarantined ones stay hospital-side as tickets.
    pub fn ingest(
        &self,
        headers: &HeaderMap,
        body: &[u8],
        hint: Option<ResourceKind>,
    ) -> Result<(StatusCode, IngestResult), ApiError> {
        let doc = document_ref(body);
        let session = self.authorize(headers, AuditAction::Ingest, &doc, Some(Privilege::Ingest), false)?;
        let reject = |outcome: &str, err: ApiError| -> ApiError {
            self.record(&session.principal, AuditAction::Ingest, &doc, outcome).err().unwrap_or(err)
        };
        let text = std::str::from_utf8(body).map_err(|_| reject("malformed", ApiError::unprocessable("body is not UTF-8")))?;
        let outcome = match process_document(text, hint, &self.rules, &self.vault) {
            Ok(o) => o,
            Err(e) => {
                let label = if matches!(e, PipelineError::Model(_)) { "malformed" } else { "failed" };
                return Err(reject(label, pipeline_error(e)));
            }
        };
        if hint.is_none() && !outcome.kind.is_fhir() {
            return Err(reject("unsupported-kind", ApiError::unprocessable("not a FHIR resource")));
        }

        let channel = Channel::Fhir;
        let cleared: Vec<&Resource> = outcome.cleared().collect();
        if !cleared.is_empty() {
            self.enforce(&session, &doc, &self.flow(&session, channel, PayloadClass::DeidVerified))?;
        }
        let placed: Vec<(&Resource, &'static str, String)> = cleared
            .iter()
            .map(|r| {
                let (bucket, key) = enclave_location(r);
                (*r, bucket, key)
            })
            .collect();
        let tickets: Vec<&QuarantineTicket> = outcome.tickets().collect();

        let mut events = vec![AuditEvent::new(
            &session.principal,
            AuditAction::Ingest,
            &doc,
            format!("cleared={} quarantined={}", placed.len(), tickets.len()),
        )];
        for (_, bucket, key) in &placed {
            events.push(AuditEvent::new(&session.principal, AuditAction::Cleared, format!("{bucket}/{key}"), "deid-verified"));
        }
        for t in &tickets {
            let findings = t.findings.len();
            events.push(AuditEvent::new(&session.principal, AuditAction::Quarantined, &t.id, format!("findings={findings}")));
        }
        self.record_all(events)?;

        let now = self.clock.now();
        let mut result = IngestResult { cleared: Vec::new(), stored: Vec::new(), quarantined: Vec::new() };
        for (resource, bucket, key) in placed {
            let bytes = serialize_resource(resource);
            if let Err(e) = self.enclave.put(bucket, &key, bytes.as_bytes(), Attestation::DeidVerified, &session.principal, now) {
                let _ = self.record(&session.principal, AuditAction::Cleared, &format!("{bucket}/{key}"), "store-failed");
                return Err(ApiError::internal(e.to_string()));
            }
            result.cleared.push(resource.id.clone());
            result.stored.push(format!("{bucket}/{key}"));
        }
        for t in tickets {
            if let Err(e) = self.quarantine.insert(t.clone()) {
                let _ = self.record(&session.principal, AuditAction::Quarantined, &t.id, "store-failed");
                return Err(ApiError::internal(e.to_string()));
            }
            result.quarantined.push(t.id.clone());
        }
        let status = if result.quarantined.is_empty() { StatusCode::OK } else { StatusCode::ACCEPTED };
        Ok((status, result))
    }

    pub fn list_quarantine(&self, headers: &HeaderMap) -> Result<Vec<TicketSummary>, ApiError> {
        let session = self.authorize(headers, AuditAction::Access, "quarantine", Some(Privilege::Review), false)?;
        self.record(&session.principal, AuditAction::Access, "quarantine", "ok")?;
        Ok(self.quarantine.summaries())
    }

    pub fn get_ticket(&self, headers: &HeaderMap, id: &str) -> Result<QuarantineTicket, ApiError> {
        let session = self.authorize(headers, AuditAction::Access, id, Some(Privilege::Review), false)?;
        let handle = self.quarantine.get(id);
        self.record(&session.principal, AuditAction::Access, id, if handle.is_some() { "ok" } else { "not-found" })?;
        let handle = handle.ok_or_else(|| ApiError::not_found(format!("no ticket {id}")))?;
        let ticket = handle.lock().unwrap_or_else(|p| p.into_inner()).clone();
        Ok(ticket)
    }

    fn ticket_error(&self, principal: &str, action: AuditAction, id: &str, e: TicketError) -> ApiError {
        let (outcome, err) = match &e {
            TicketError::IllegalTransition { .. } => ("illegal-transition", ApiError::conflict(e.to_string())),
            TicketError::FindingsRemain(f) => (
                "findings-remain",
                ApiError::new(StatusCode::PRECONDITION_FAILED, "findings-remain", format!("{} findings remain", f.len())),
            ),
            TicketError::InvalidEdit(m) => ("invalid-edit", ApiError::unprocessable(m.clone())),
            TicketError::Deid(DeidError::VaultUnavailable(m)) => ("failed", ApiError::unavailable(format!("pseudonym vault: {m}"))),
            TicketError::Deid(other) => ("failed", ApiError::internal(other.to_string())),
        };
        self.record(principal, action, id, outcome).err().unwrap_or(err)
    }

    fn with_ticket<T>(
        &self,
        headers: &HeaderMap,
        id: &str,
        action: AuditAction,
        op: impl FnOnce(&Session, &mut QuarantineTicket) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let session = self.authorize(headers, action, id, Some(Privilege::Review), false)?;
        let Some(handle) = self.quarantine.get(id) else {
            self.record(&session.principal, action, id, "not-found")?;
            return Err(ApiError::not_found(format!("no ticket {id}")));
        };
        let mut guard = handle.lock().unwrap_or_else(|p| p.into_inner());
        // work on a copy so a refused or failed step leaves the ticket untouched
        let mut next = guard.clone();
        let value = op(&session, &mut next)?;
        self.quarantine.persist(&next).map_err(|e| ApiError::internal(e.to_string()))?;
        *guard = next;
        Ok(value)
    }

    pub fn edit_ticket(&self, headers: &HeaderMap, id: &str, edit: EditRequest) -> Result<EditResult, ApiError> {
        self.with_ticket(headers, id, AuditAction::ReviewEdit, |session, ticket| {
            let path = edit.path.clone();
            let action = serde_json::to_value(edit.action).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let now = self.clock.now();
            let remaining = ticket
                .apply_edit(edit, &session.principal, now, &self.rules, &self.vault)
                .map_err(|e| self.ticket_error(&session.principal, AuditAction::ReviewEdit, id, e))?;
            self.record(&session.principal, AuditAction::ReviewEdit, &format!("{id}:{path}"), &action)?;
            Ok(EditResult { id: id.to_string(), state: ticket.state.to_string(), remaining })
        })
    }

    pub fn approve_ticket(&self, headers: &HeaderMap, id: &str) -> Result<ApproveResult, ApiError> {
        self.with_ticket(headers, id, AuditAction::Approve, |session, ticket| {
            let (resource, _) = ticket
                .approve(&self.rules, &self.vault)
                .map_err(|e| self.ticket_error(&session.principal, AuditAction::Approve, id, e))?;
            if !deid::scan(&resource, &self.rules).is_empty() {
                return Err(ApiError::internal("approved resource failed its final scan"));
            }
            let (bucket, key) = enclave_location(&resource);
            let location = format!("{bucket}/{key}");
            self.enforce(session, id, &self.flow(session, Channel::Fhir, PayloadClass::DeidVerified))?;
            self.record_all(vec![
                AuditEvent::new(&session.principal, AuditAction::Approve, id, format!("approved:{location}")),
                AuditEvent::new(&session.principal, AuditAction::Cleared, &location, "deid-verified"),
            ])?;
            let bytes = serialize_resource(&resource);
            self.enclave
                .put(bucket, &key, bytes.as_bytes(), Attestation::DeidVerified, &session.principal, self.clock.now())
                .map_err(|e| ApiError::internal(e.to_string()))?;
            Ok(ApproveResult { id: id.to_string(), cleared_id: resource.id.clone(), stored: location })
        })
    }

    pub fn reject_ticket(&self, headers: &HeaderMap, id: &str, reason: &str) -> Result<EditResult, ApiError> {
        self.with_ticket(headers, id, AuditAction::Reject, |session, ticket| {
            ticket.reject(reason).map_err(|e| self.ticket_error(&session.principal, AuditAction::Reject, id, e))?;
            self.record(&session.principal, AuditAction::Reject, id, "rejected")?;
            Ok(EditResult { id: id.to_string(), state: ticket.state.to_string(), remaining: Vec::new() })
        })
    }

    fn object_session(&self, headers: &HeaderMap, action: AuditAction, target: &str) -> Result<Session, ApiError> {
        self.authorize(headers, action, target, Some(Privilege::ObjectRw), true)
    }

    pub fn put_object(&self, headers: &HeaderMap, bucket: &str, key: &str, body: &[u8]) -> Result<StoredObject, ApiError> {
        let target = format!("{bucket}/{key}");
        let session = self.object_session(headers, AuditAction::ObjectPut, &target)?;
        let refuse = |outcome: &str, err: ApiError| -> ApiError {
            self.record(&session.principal, AuditAction::ObjectPut, &target, outcome).err().unwrap_or(err)
        };
        if !valid_bucket(bucket) || !valid_key(key) {
            return Err(refuse("bad-name", ApiError::bad_request("invalid bucket or key")));
        }
        let attestation = headers
            .get(ATTESTATION_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(Attestation::parse)
            .ok_or_else(|| refuse("missing-attestation", ApiError::bad_request(format!("{ATTESTATION_HEADER} header required"))))?;
        let payload = match attestation {
            Attestation::OperatorAttested => PayloadClass::Opaque,
            Attestation::DeidVerified => {
                // the claim is checked, not trusted
                let clean = std::str::from_utf8(body)
                    .ok()
                    .and_then(|t| enclave_gate_core::parse_resource(t, None).ok())
                    .is_some_and(|r| deid::scan(&r, &self.rules).is_empty());
                if !clean {
                    return Err(refuse("not-deid-verified", ApiError::unprocessable("body does not rescan clean")));
                }
                PayloadClass::DeidVerified
            }
        };
        self.enforce(&session, &target, &self.flow(&session, Channel::S3, payload))?;
        let digest = sha256_hex(body);
        self.record(&session.principal, AuditAction::ObjectPut, &target, &format!("{}:{digest}", attestation.as_str()))?;
        self.enclave.put(bucket, key, body, attestation, &session.principal, self.clock.now()).map_err(store_error)
    }

    pub fn get_object(&self, headers: &HeaderMap, bucket: &str, key: &str) -> Result<(StoredObject, Vec<u8>), ApiError> {
        let target = format!("{bucket}/{key}");
        let session = self.object_session(headers, AuditAction::ObjectGet, &target)?;
        let found = self.enclave.get(bucket, key).map_err(store_error)?;
        self.record(&session.principal, AuditAction::ObjectGet, &target, if found.is_some() { "ok" } else { "not-found" })?;
        found.ok_or_else(|| ApiError::not_found(format!("no object {target}")))
    }

    pub fn delete_object(&self, headers: &HeaderMap, bucket: &str, key: &str) -> Result<(), ApiError> {
        let target = format!("{bucket}/{key}");
        let session = self.object_session(headers, AuditAction::ObjectDelete, &target)?;
        let exists = self.enclave.head(bucket, key).map_err(store_error)?.is_some();
        self.record(&session.principal, AuditAction::ObjectDelete, &target, if exists { "ok" } else { "not-found" })?;
        if !exists || !self.enclave.delete(bucket, key).map_err(store_error)? {
            return Err(ApiError::not_found(format!("no object {target}")));
        }
        Ok(())
    }

    pub fn list_objects(&self, headers: &HeaderMap, bucket: &str) -> Result<Vec<StoredObject>, ApiError> {
        let target = format!("objects/{bucket}");
        let session = self.object_session(headers, AuditAction::Access, &target)?;
        let listing = self.enclave.list(bucket).map_err(store_error)?;
        self.record(&session.principal, AuditAction::Access, &target, "ok")?;
        Ok(listing)
    }

    /// `parse` runs only after the caller is authenticated.
    pub fn check_policy(
        &self,
        headers: &HeaderMap,
        parse: impl FnOnce(&Session) -> Result<PolicyCheckRequest, ApiError>,
    ) -> Result<PolicyCheckResponse, ApiError> {
        let session = self.authorize(headers, AuditAction::Access, "policy/check", None, false)?;
        let req = parse(&session)?;
        let flow = FlowRequest {
            principal: Principal { id: session.principal.clone(), mfa_verified: req.mfa, mode: req.mode.unwrap_or(session.mode) },
            from: req.from,
            to: req.to,
            channel: req.channel,
            payload: req.payload,
            flags: req.flags,
        };
        let decision = self.policy.check_flow(&flow);
        let rule = decision.deciding_rule().to_string();
        self.record(&session.principal, AuditAction::Access, "policy/check", &format!("{}:{rule}", decision.verdict))?;
        Ok(PolicyCheckResponse { decision, rule })
    }

    pub fn query_audit(&self, headers: &HeaderMap, filter: &AuditFilter) -> Result<Vec<AuditEntry>, ApiError> {
        let session = self.authorize(headers, AuditAction::Access, "audit", Some(Privilege::Review), false)?;
        self.record(&session.principal, AuditAction::Access, "audit", "ok")?;
        Ok(self.audit.query(filter))
    }

    pub fn verify_audit(&self, headers: &HeaderMap) -> Result<enclave_gate_core::VerifyReport, ApiError> {
        let session = self.authorize(headers, AuditAction::Access, "audit/verify", None, false)?;
        let report = self.audit.verify();
        self.record(&session.principal, AuditAction::Access, "audit/verify", if report.ok { "ok" } else { "corrupt" })?;
        Ok(report)
    }
}
