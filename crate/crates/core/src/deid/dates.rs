//! Per-patient date shifting.

use chrono::Duration;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::DeidError;
use crate::model::ElementValue;

pub const MAX_OFFSET_DAYS: i64 = 364;
/// Used when the digest lands on zero, so a shift never leaves a date unchanged.
pub const ZERO_SUBSTITUTE: i64 = 182;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientOffset {
    pub patient_source_id: String,
    pub offset_days: i64,
}

/// Offset in `[-364, 364] \ {0}`: HMAC-SHA256 of the id under the vault key,
/// read as a big-endian integer, reduced mod 729 and centred on zero.
pub fn derive_offset(patient_source_id: &str, vault_key: &[u8]) -> Result<PatientOffset, DeidError> {
    if vault_key.len() != 32 {
        return Err(DeidError::BadKeyLength(vault_key.len()));
    }
    let mut mac = Hmac::<Sha256>::new_from_slice(vault_key).expect("HMAC takes any key length");
    mac.update(patient_source_id.as_bytes());
    let digest = mac.finalize().into_bytes();
    let modulus = (2 * MAX_OFFSET_DAYS + 1) as u32;
    let reduced = digest.iter().fold(0u32, |acc, b| (acc * 256 + u32::from(*b)) % modulus);
    let mut offset_days = i64::from(reduced) - MAX_OFFSET_DAYS;
    if offset_days == 0 {
        offset_days = ZERO_SUBSTITUTE;
    }
    Ok(PatientOffset { patient_source_id: patient_source_id.to_string(), offset_days })
}

/// Calendar-correct shift of a date or datetime; other values come back unchanged.
pub fn shift_date(value: &ElementValue, offset: &PatientOffset) -> ElementValue {
    let days = Duration::days(offset.offset_days);
    match value {
        ElementValue::Date(d) => ElementValue::Date(*d + days),
        ElementValue::DateTime(dt) => {
            let mut shifted = dt.clone();
            shifted.local += days;
            ElementValue::DateTime(shifted)
        }
        other => other.clone(),
    }
}
