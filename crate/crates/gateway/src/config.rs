use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::UserRecord;

pub const ENV_PREFIX: &str = "ENCLAVE_GATE_";
pub const MAX_SESSION_TTL_SECS: u64 = 30 * 24 * 3600;

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8088))
}

fn default_ttl() -> u64 {
    12 * 3600
}

fn default_body_limit() -> usize {
    64 * 1024 * 1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// De-identified data and attested objects. Never holds originals.
    pub enclave_root: PathBuf,
    /// Quarantined originals, held on the hospital side.
    pub quarantine_root: PathBuf,
    pub vault_path: PathBuf,
    pub vault_key_path: PathBuf,
    pub audit_path: PathBuf,
    /// Zone policy file; the shipped policy when absent.
    #[serde(default)]
    pub policy_path: Option<PathBuf>,
    /// De-identification rule set; the standard set when absent.
    #[serde(default)]
    pub rules_path: Option<PathBuf>,
    #[serde(default = "default_ttl")]
    pub session_ttl_secs: u64,
    #[serde(default = "default_body_limit")]
    pub max_body_bytes: usize,
    #[serde(default)]
    pub users: Vec<UserRecord>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid value for {var}: {message}")]
    Env { var: String, message: String },
    #[error("enclave_root and quarantine_root must be separate, non-nested directories")]
    SharedRoots,
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads the file, then applies `ENCLAVE_GATE_*` variables from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config = Self::from_toml(&text)?;
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    /// Overrides scalar settings from `(name, value)` pairs. Unrelated names
    /// are ignored; users can only come from the file.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let Some(field) = name.strip_prefix(ENV_PREFIX) else { continue };
            let bad = |message: String| ConfigError::Env { var: name.clone(), message };
            match field {
                "LISTEN" => self.listen = value.parse().map_err(|e| bad(format!("{e}")))?,
                "ENCLAVE_ROOT" => self.enclave_root = value.into(),
                "QUARANTINE_ROOT" => self.quarantine_root = value.into(),
                "VAULT_PATH" => self.vault_path = value.into(),
                "VAULT_KEY_PATH" => self.vault_key_path = value.into(),
                "AUDIT_PATH" => self.audit_path = value.into(),
                "POLICY_PATH" => self.policy_path = Some(value.into()),
                "RULES_PATH" => self.rules_path = Some(value.into()),
                "SESSION_TTL_SECS" => self.session_ttl_secs = value.parse().map_err(|e| bad(format!("{e}")))?,
                "MAX_BODY_BYTES" => self.max_body_bytes = value.parse().map_err(|e| bad(format!("{e}")))?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (a, b) = (&self.enclave_root, &self.quarantine_root);
        if a.starts_with(b) || b.starts_with(a) {
            return Err(ConfigError::SharedRoots);
        }
        if self.session_ttl_secs == 0 || self.session_ttl_secs > MAX_SESSION_TTL_SECS {
            return Err(ConfigError::Parse(format!("session_ttl_secs must be in 1..={MAX_SESSION_TTL_SECS}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
        enclave_root = "/srv/enclave"
        quarantine_root = "/srv/hospital/quarantine"
        vault_path = "/srv/hospital/vault.log"
        vault_key_path = "/etc/enclave-gate/vault.key"
        audit_path = "/srv/hospital/audit.log"

        [[users]]
        principal = "alice"
        password_hash = "$argon2id$v=19$m=19456,t=2,p=1$c2FsdHNhbHQ$aGFzaA"
        totp_secret = "GEZDGNBVGY3TQOJQGEZDGNBVGY3TQOJQ"
        privileges = ["ingest", "review"]
    "#;

    #[test]
    fn defaults_and_env_overrides() {
        let mut c = GatewayConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.listen, default_listen());
        assert_eq!(c.session_ttl_secs, 43_200);
        assert_eq!(c.users[0].totp_digits, 6);
        c.apply_env([
            ("ENCLAVE_GATE_LISTEN".to_string(), "0.0.0.0:9000".to_string()),
            ("ENCLAVE_GATE_SESSION_TTL_SECS".to_string(), "600".to_string()),
            ("ENCLAVE_GATE_POLICY_PATH".to_string(), "/etc/zones.policy".to_string()),
            ("PATH".to_string(), "/usr/bin".to_string()),
        ])
        .unwrap();
        assert_eq!(c.listen.port(), 9000);
        assert_eq!(c.session_ttl_secs, 600);
        assert_eq!(c.policy_path.as_deref(), Some(Path::new("/etc/zones.policy")));
        c.validate().unwrap();
        assert!(c.apply_env([("ENCLAVE_GATE_SESSION_TTL_SECS".to_string(), "soon".to_string())]).is_err());
    }

    #[test]
    fn roots_must_not_nest() {
        let mut c = GatewayConfig::from_toml(SAMPLE).unwrap();
        c.quarantine_root = "/srv/enclave/quarantine".into();
        assert!(matches!(c.validate(), Err(ConfigError::SharedRoots)));
        assert!(GatewayConfig::from_toml("enclave_root = 3").is_err());
    }
}
