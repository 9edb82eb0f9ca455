//! Two-factor login, server-side sessions and per-principal lockout.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use argon2::password_hash::rand_core::OsRng as HashRng;
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use chrono::{DateTime, Duration, Utc};
use data_encoding::{BASE32_NOPAD, BASE64URL_NOPAD};
use enclave_gate_core::{Clock, Mode, PrivilegeSet};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::totp::{verify_totp_with, TotpAlgorithm};

pub const DEFAULT_SESSION_TTL: Duration = Duration::hours(12);
pub const FAILURE_WINDOW: Duration = Duration::seconds(60);
pub const FAILURE_LIMIT: usize = 5;
pub const LOCKOUT: Duration = Duration::seconds(30);

fn default_digits() -> u32 {
    6
}

fn default_mode() -> Mode {
    Mode::ManagedCluster
}

/// A principal as configured by the operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub principal: String,
    /// Argon2 hash in PHC string form.
    pub password_hash: String,
    /// Base32 (RFC 4648, padding optional), as shown in authenticator enrolment.
    pub totp_secret: String,
    #[serde(default)]
    pub totp_algorithm: TotpAlgorithm,
    #[serde(default = "default_digits")]
    pub totp_digits: u32,
    #[serde(default)]
    pub privileges: PrivilegeSet,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    #[serde(skip)]
    pub token: String,
    pub principal: String,
    pub privileges: PrivilegeSet,
    pub mfa_verified: bool,
    pub mode: Mode,
    pub expires_at: DateTime<Utc>,
}

/// Login failure. The HTTP layer maps every variant to the same response;
/// the distinction only reaches the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LoginError {
    #[error("unauthorized")]
    BadCredentials,
    #[error("unauthorized")]
    LockedOut,
}

impl LoginError {
    pub fn audit_outcome(self) -> &'static str {
        match self {
            LoginError::BadCredentials => "bad-credentials",
            LoginError::LockedOut => "locked-out",
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid TOTP secret for {0}")]
pub struct BadSecret(pub String);

pub fn hash_password(password: &str) -> String {
    let salt = SaltString::generate(&mut HashRng);
    Argon2::default().hash_password(password.as_bytes(), &salt).expect("argon2 with default parameters").to_string()
}

fn password_matches(password: &str, phc: &str) -> bool {
    PasswordHash::new(phc).is_ok_and(|h| Argon2::default().verify_password(password.as_bytes(), &h).is_ok())
}

pub fn decode_totp_secret(text: &str) -> Option<Vec<u8>> {
    let cleaned: String = text.chars().filter(|c| !c.is_whitespace() && *c != '=').collect::<String>().to_ascii_uppercase();
    BASE32_NOPAD.decode(cleaned.as_bytes()).ok().filter(|s| !s.is_empty())
}

/// Fresh 160-bit TOTP secret in base32.
pub fn generate_totp_secret() -> String {
    let mut bytes = [0u8; 20];
    OsRng.fill_bytes(&mut bytes);
    BASE32_NOPAD.encode(&bytes)
}

struct Account {
    record: UserRecord,
    secret: Vec<u8>,
}

#[derive(Default)]
struct Failures {
    recent: VecDeque<DateTime<Utc>>,
    locked_until: Option<DateTime<Utc>>,
}

pub struct Authenticator {
    accounts: HashMap<String, Account>,
    sessions: Mutex<HashMap<String, Session>>,
    failures: Mutex<HashMap<String, Failures>>,
    clock: Arc<dyn Clock>,
    ttl: Duration,
    /// Hash checked for unknown principals so they cost the same as known ones.
    decoy_hash: String,
}

impl Authenticator {
    pub fn new(users: Vec<UserRecord>, clock: Arc<dyn Clock>, ttl: Duration) -> Result<Self, BadSecret> {
        let mut accounts = HashMap::new();
        for record in users {
            let secret = decode_totp_secret(&record.totp_secret).ok_or_else(|| BadSecret(record.principal.clone()))?;
            accounts.insert(record.principal.clone(), Account { record, secret });
        }
        let mut decoy = [0u8; 16];
        OsRng.fill_bytes(&mut decoy);
        Ok(Authenticator {
            accounts,
            sessions: Mutex::new(HashMap::new()),
            failures: Mutex::new(HashMap::new()),
            clock,
            ttl,
            decoy_hash: hash_password(&hex::encode(decoy)),
        })
    }

    /// Checks both factors. Five failures inside a minute lock the principal
    /// for thirty seconds, during which even correct credentials fail.
    pub fn login(&self, principal: &str, password: &str, totp_code: &str) -> Result<Session, LoginError> {
        let now = self.clock.now();
        if self.is_locked(principal, now) {
            return Err(LoginError::LockedOut);
        }
        let account = self.accounts.get(principal);
        let password_ok = password_matches(password, account.map_or(&self.decoy_hash, |a| &a.record.password_hash));
        let totp_ok = account.is_some_and(|a| {
            let unix = u64::try_from(now.timestamp()).unwrap_or(0);
            totp_code.len() == a.record.totp_digits as usize
                && verify_totp_with(&a.secret, totp_code, unix, a.record.totp_algorithm)
        });
        match account {
            Some(a) if password_ok && totp_ok => {
                self.failures.lock().unwrap_or_else(|p| p.into_inner()).remove(principal);
                Ok(self.issue_session(&a.record, true))
            }
            _ => {
                self.record_failure(principal, now);
                Err(LoginError::BadCredentials)
            }
        }
    }

    fn is_locked(&self, principal: &str, now: DateTime<Utc>) -> bool {
        let failures = self.failures.lock().unwrap_or_else(|p| p.into_inner());
        failures.get(principal).and_then(|f| f.locked_until).is_some_and(|until| now < until)
    }

    fn record_failure(&self, principal: &str, now: DateTime<Utc>) {
        let mut failures = self.failures.lock().unwrap_or_else(|p| p.into_inner());
        let f = failures.entry(principal.to_string()).or_default();
        while f.recent.front().is_some_and(|t| now - *t >= FAILURE_WINDOW) {
            f.recent.pop_front();
        }
        f.recent.push_back(now);
        if f.recent.len() >= FAILURE_LIMIT {
            f.recent.clear();
            f.locked_until = Some(now + LOCKOUT);
        }
    }

    /// Creates a session for a configured user without checking credentials.
    /// Login calls this after both factors pass; embedders and tests can use it
    /// directly, for instance to mint a session without the MFA mark.
    pub fn issue_session(&self, user: &UserRecord, mfa_verified: bool) -> Session {
        let mut raw = [0u8; 16];
        OsRng.fill_bytes(&mut raw);
        let session = Session {
            token: BASE64URL_NOPAD.encode(&raw),
            principal: user.principal.clone(),
            privileges: user.privileges.clone(),
            mfa_verified,
            mode: user.mode,
            expires_at: self.clock.now() + self.ttl,
        };
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).insert(session.token.clone(), session.clone());
        session
    }

    pub fn user(&self, principal: &str) -> Option<&UserRecord> {
        self.accounts.get(principal).map(|a| &a.record)
    }

    /// The live session behind a token. Expired sessions are dropped.
    pub fn authenticate(&self, token: &str) -> Option<Session> {
        let now = self.clock.now();
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        match sessions.get(token) {
            Some(s) if now < s.expires_at => Some(s.clone()),
            Some(_) => {
                sessions.remove(token);
                None
            }
            None => None,
        }
    }

    pub fn revoke(&self, token: &str) -> bool {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).remove(token).is_some()
    }
}
