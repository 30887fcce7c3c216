use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Outcome codes shared by every endpoint.
///
/// Codes with a wire value travel inside lock ERROR frames; the rest only
/// appear in cloud responses and scenario reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    WrongState,
    DecryptFailed,
    UnknownOpcode,
    AuthFailed,
    NoPendingNonce,
    IntegrityFailed,
    BadRequest,
    SensorAsleep,
    IsolationViolation,
    NoSuchSlot,
    StoreFull,
    AttestationUnavailable,
    BootVerifyFailed,
    BadFrame,
    DebugDisabled,
    PinningBlocked,
    NotRegistered,
    NotOwner,
    AlreadyRegistered,
    NoSuchVersion,
    CloudUnreachable,
    TamperDetected,
    BlockedByIsolation,
    NothingHarvested,
    HarvestMismatch,
    ImpostorDetected,
    RegistryNotEmpty,
    NoIdentity,
    UnexpectedResponse,
    Transport,
}

const WIRE_CODES: [(ErrorCode, u8); 15] = [
    (ErrorCode::WrongState, 0x01),
    (ErrorCode::DecryptFailed, 0x02),
    (ErrorCode::UnknownOpcode, 0x03),
    (ErrorCode::AuthFailed, 0x04),
    (ErrorCode::NoPendingNonce, 0x05),
    (ErrorCode::IntegrityFailed, 0x06),
    (ErrorCode::BadRequest, 0x07),
    (ErrorCode::SensorAsleep, 0x08),
    (ErrorCode::IsolationViolation, 0x09),
    (ErrorCode::NoSuchSlot, 0x0A),
    (ErrorCode::StoreFull, 0x0B),
    (ErrorCode::AttestationUnavailable, 0x0C),
    (ErrorCode::BootVerifyFailed, 0x0D),
    (ErrorCode::BadFrame, 0x0E),
    (ErrorCode::DebugDisabled, 0x0F),
];

const NAMES: [(ErrorCode, &str); 30] = [
    (ErrorCode::WrongState, "WRONG_STATE"),
    (ErrorCode::DecryptFailed, "DECRYPT_FAILED"),
    (ErrorCode::UnknownOpcode, "UNKNOWN_OPCODE"),
    (ErrorCode::AuthFailed, "AUTH_FAILED"),
    (ErrorCode::NoPendingNonce, "NO_PENDING_NONCE"),
    (ErrorCode::IntegrityFailed, "INTEGRITY_FAILED"),
    (ErrorCode::BadRequest, "BAD_REQUEST"),
    (ErrorCode::SensorAsleep, "SENSOR_ASLEEP"),
    (ErrorCode::IsolationViolation, "ISOLATION_VIOLATION"),
    (ErrorCode::NoSuchSlot, "NO_SUCH_SLOT"),
    (ErrorCode::StoreFull, "STORE_FULL"),
    (ErrorCode::AttestationUnavailable, "ATTESTATION_UNAVAILABLE"),
    (ErrorCode::BootVerifyFailed, "BOOT_VERIFY_FAILED"),
    (ErrorCode::BadFrame, "BAD_FRAME"),
    (ErrorCode::DebugDisabled, "DEBUG_DISABLED"),
    (ErrorCode::PinningBlocked, "PINNING_BLOCKED"),
    (ErrorCode::NotRegistered, "NOT_REGISTERED"),
    (ErrorCode::NotOwner, "NOT_OWNER"),
    (ErrorCode::AlreadyRegistered, "ALREADY_REGISTERED"),
    (ErrorCode::NoSuchVersion, "NO_SUCH_VERSION"),
    (ErrorCode::CloudUnreachable, "CLOUD_UNREACHABLE"),
    (ErrorCode::TamperDetected, "TAMPER_DETECTED"),
    (ErrorCode::BlockedByIsolation, "BLOCKED_BY_ISOLATION"),
    (ErrorCode::NothingHarvested, "NOTHING_HARVESTED"),
    (ErrorCode::HarvestMismatch, "HARVEST_MISMATCH"),
    (ErrorCode::ImpostorDetected, "IMPOSTOR_DETECTED"),
    (ErrorCode::RegistryNotEmpty, "REGISTRY_NOT_EMPTY"),
    (ErrorCode::NoIdentity, "NO_IDENTITY"),
    (ErrorCode::UnexpectedResponse, "UNEXPECTED_RESPONSE"),
    (ErrorCode::Transport, "TRANSPORT"),
];

impl ErrorCode {
    pub fn wire_code(self) -> Option<u8> {
        WIRE_CODES.iter().find(|(c, _)| *c == self).map(|(_, b)| *b)
    }

    pub fn from_wire(byte: u8) -> Option<Self> {
        WIRE_CODES.iter().find(|(_, b)| *b == byte).map(|(c, _)| *c)
    }

    pub fn as_str(self) -> &'static str {
        NAMES
            .iter()
            .find(|(c, _)| *c == self)
            .map(|(_, n)| *n)
            .expect("every code is named")
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NAMES
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(c, _)| *c)
            .ok_or_else(|| format!("unknown error code `{s}`"))
    }
}

/// A failure attributed to the protocol step that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StepError {
    pub step: &'static str,
    pub code: ErrorCode,
}

impl StepError {
    pub fn new(step: &'static str, code: ErrorCode) -> Self {
        Self { step, code }
    }

    /// Adapter for `map_err`.
    pub fn at(step: &'static str) -> impl Fn(ErrorCode) -> StepError {
        move |code| StepError { step, code }
    }
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.step, self.code)
    }
}

impl std::error::Error for StepError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for (code, name) in NAMES {
            assert_eq!(code.to_string(), name);
            assert_eq!(name.parse::<ErrorCode>().unwrap(), code);
            assert_eq!(serde_json::to_string(&code).unwrap(), format!("\"{name}\""));
        }
    }

    #[test]
    fn wire_codes_are_unique() {
        for (code, byte) in WIRE_CODES {
            assert_eq!(ErrorCode::from_wire(byte), Some(code));
            assert_eq!(code.wire_code(), Some(byte));
        }
        assert_eq!(ErrorCode::PinningBlocked.wire_code(), None);
        assert_eq!(ErrorCode::from_wire(0xEE), None);
    }
}
