//! In-process gateway for tests: temporary storage roots, a manual clock,
//! switchable audit and vault sinks, and a request helper that drives the
//! router without a socket.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use chrono::Duration;
use enclave_gate_core::storage::{MemorySink, SwitchableSink};
use enclave_gate_core::{AuditLog, Clock, ManualClock, Mode, PolicySet, Privilege, PseudonymVault, RuleSet, VaultKey};
use http_body_util::BodyExt;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

use crate::auth::{hash_password, Authenticator, UserRecord, DEFAULT_SESSION_TTL};
use crate::state::Gateway;
use crate::store::ObjectStore;
use crate::tickets::TicketStore;
use crate::totp::{totp_at, TotpAlgorithm};

pub const PASSWORD: &str = "correct horse battery staple";
/// Base32 of the RFC 6238 SHA-1 seed.
pub const TOTP_SECRET: &str = "GEZDGNBVGY3TQOJQGEZDGNBVGY3TQOJQ";
pub const VAULT_KEY: [u8; 32] = [0x42; 32];

pub struct Response {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Response {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(name).and_then(|v| v.to_str().ok())
    }
}

pub struct Harness {
    pub gateway: Arc<Gateway>,
    pub router: Router,
    pub clock: Arc<ManualClock>,
    pub audit_failing: Arc<AtomicBool>,
    pub vault_failing: Arc<AtomicBool>,
    pub dir: TempDir,
}

/// Users: `alice` holds every privilege, `rita` only review, `ivan` only
/// ingest, `olga` only object-rw. All share [`PASSWORD`] and [`TOTP_SECRET`].
pub fn users() -> Vec<UserRecord> {
    let hash = hash_password(PASSWORD);
    let all = [Privilege::Ingest, Privilege::Review, Privilege::Reidentify, Privilege::Export, Privilege::ObjectRw];
    [("alice", &all[..]), ("rita", &[Privilege::Review][..]), ("ivan", &[Privilege::Ingest][..]), ("olga", &[Privilege::ObjectRw][..])]
        .into_iter()
        .map(|(name, privs)| UserRecord {
            principal: name.into(),
            password_hash: hash.clone(),
            totp_secret: TOTP_SECRET.into(),
            totp_algorithm: TotpAlgorithm::Sha1,
            totp_digits: 6,
            privileges: privs.iter().copied().collect(),
            mode: Mode::ManagedCluster,
        })
        .collect()
}

impl Harness {
    pub fn new() -> Self {
        Self::with_rules(RuleSet::standard())
    }

    pub fn with_rules(rules: RuleSet) -> Self {
        let dir = tempfile::tempdir().expect("temporary directory");
        let clock = Arc::new(ManualClock::at_unix(1_717_000_000));
        let (audit_sink, audit_failing) = SwitchableSink::new(MemorySink);
        let (vault_sink, vault_failing) = SwitchableSink::new(MemorySink);
        let dyn_clock: Arc<dyn Clock> = clock.clone();
        let gateway = Gateway {
            auth: Authenticator::new(users(), dyn_clock.clone(), DEFAULT_SESSION_TTL).expect("fixture secrets are valid"),
            audit: Arc::new(AuditLog::with_sink(Vec::new(), Box::new(audit_sink), dyn_clock.clone())),
            vault: Arc::new(PseudonymVault::with_sink(VaultKey::from_slice(&VAULT_KEY).expect("32 bytes"), Box::new(vault_sink))),
            rules: Arc::new(rules),
            policy: Arc::new(PolicySet::shipped()),
            enclave: ObjectStore::open(dir.path().join("enclave")).expect("enclave root"),
            quarantine: TicketStore::open(dir.path().join("hospital")).expect("quarantine root"),
            clock: dyn_clock,
            max_body_bytes: 8 * 1024 * 1024,
        };
        let gateway = Arc::new(gateway);
        Harness { router: crate::router(gateway.clone()), gateway, clock, audit_failing, vault_failing, dir }
    }

    pub fn totp(&self) -> String {
        totp_at(b"12345678901234567890", self.clock.now().timestamp() as u64, 6, TotpAlgorithm::Sha1)
    }

    pub fn advance(&self, secs: i64) {
        self.clock.advance(Duration::seconds(secs));
    }

    pub fn fail_audit(&self, failing: bool) {
        self.audit_failing.store(failing, Ordering::SeqCst);
    }

    pub fn fail_vault(&self, failing: bool) {
        self.vault_failing.store(failing, Ordering::SeqCst);
    }

    pub async fn request(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        headers: &[(&str, &str)],
        body: impl Into<Vec<u8>>,
    ) -> Response {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let req = req.body(Body::from(body.into())).expect("valid request");
        let resp = self.router.clone().oneshot(req).await.expect("router is infallible");
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp.into_body().collect().await.expect("body").to_bytes().to_vec();
        Response { status, headers, body }
    }

    pub async fn get(&self, uri: &str, token: Option<&str>) -> Response {
        self.request(Method::GET, uri, token, &[], Vec::new()).await
    }

    pub async fn post_json(&self, uri: &str, token: Option<&str>, body: &Value) -> Response {
        self.request(Method::POST, uri, token, &[("content-type", "application/json")], body.to_string()).await
    }

    pub async fn post_raw(&self, uri: &str, token: Option<&str>, body: &str) -> Response {
        self.request(Method::POST, uri, token, &[("content-type", "application/json")], body.to_string()).await
    }

    /// Logs in with both factors and returns the bearer token.
    pub async fn login(&self, principal: &str) -> String {
        let body = serde_json::json!({ "principal": principal, "password": PASSWORD, "totp": self.totp() });
        let resp = self.post_json("/auth/login", None, &body).await;
        assert_eq!(resp.status, StatusCode::OK, "login for {principal}: {}", String::from_utf8_lossy(&resp.body));
        resp.json()["token"].as_str().expect("token").to_string()
    }

    /// A session for `principal` that lacks the MFA mark.
    pub fn password_only_session(&self, principal: &str) -> String {
        let user = self.gateway.auth.user(principal).expect("fixture user").clone();
        self.gateway.auth.issue_session(&user, false).token
    }
}

impl Default for Harness {
    fn default() -> Self {
        Self::new()
    }
}
