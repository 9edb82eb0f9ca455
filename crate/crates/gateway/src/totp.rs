//! Time-based one-time passwords (RFC 6238) with a one-step window either side.

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;

pub const STEP_SECS: u64 = 30;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TotpAlgorithm {
    #[default]
    Sha1,
    Sha256,
    Sha512,
}

/// HOTP value for one counter, zero-padded to `digits`.
pub fn hotp(secret: &[u8], counter: u64, digits: u32, alg: TotpAlgorithm) -> String {
    let msg = counter.to_be_bytes();
    macro_rules! mac {
        ($d:ty) => {{
            let mut mac = Hmac::<$d>::new_from_slice(secret).expect("HMAC takes any key length");
            mac.update(&msg);
            mac.finalize().into_bytes().to_vec()
        }};
    }
    let digest = match alg {
        TotpAlgorithm::Sha1 => mac!(sha1::Sha1),
        TotpAlgorithm::Sha256 => mac!(sha2::Sha256),
        TotpAlgorithm::Sha512 => mac!(sha2::Sha512),
    };
    let offset = usize::from(digest[digest.len() - 1] & 0x0f);
    let bin = u32::from_be_bytes(digest[offset..offset + 4].try_into().expect("4 bytes")) & 0x7fff_ffff;
    format!("{:0width$}", u64::from(bin) % 10u64.pow(digits), width = digits as usize)
}

pub fn totp_at(secret: &[u8], unix_time: u64, digits: u32, alg: TotpAlgorithm) -> String {
    hotp(secret, unix_time / STEP_SECS, digits, alg)
}

/// SHA-1 verification, the common authenticator-app setting.
pub fn verify_totp(secret: &[u8], code: &str, unix_time: u64) -> bool {
    verify_totp_with(secret, code, unix_time, TotpAlgorithm::Sha1)
}

/// True when `code` matches the previous, current or next step. The digit
/// count is taken from the code (6 to 8). All three candidates are compared
/// in constant time.
pub fn verify_totp_with(secret: &[u8], code: &str, unix_time: u64, alg: TotpAlgorithm) -> bool {
    let digits = code.len() as u32;
    if secret.is_empty() || !(6..=8).contains(&digits) || !code.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    let step = unix_time / STEP_SECS;
    let mut ok = subtle::Choice::from(0);
    for counter in [step.checked_sub(1), Some(step), step.checked_add(1)].into_iter().flatten() {
        ok |= hotp(secret, counter, digits, alg).as_bytes().ct_eq(code.as_bytes());
    }
    ok.into()
}
