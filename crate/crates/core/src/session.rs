//! Payload protection for session-scoped lock commands.
//!
//! Two modes, chosen by the lock and announced in the SESSION_INIT ack:
//!
//! * ECB: `ecb_encrypt(k, opcode || plaintext)`. No counters, so a captured
//!   frame replays cleanly.
//! * GCM: `counter (u64 LE) || gcm_seal(k, nonce(sender, counter),
//!   opcode || counter, plaintext)`. Receivers reject counters that do not
//!   strictly increase.

use serde::{Deserialize, Serialize};

use crate::cryptobox::{ecb_decrypt, ecb_encrypt, gcm_open, gcm_seal, GcmNonce, SymmetricKey};

pub const LOCK_ENDPOINT: u32 = 0x4C4F_434B;
pub const PEER_ENDPOINT: u32 = 0x5045_4552;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Ecb,
    Gcm,
}

impl SessionMode {
    pub fn to_byte(self) -> u8 {
        match self {
            SessionMode::Ecb => 0,
            SessionMode::Gcm => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(SessionMode::Ecb),
            1 => Some(SessionMode::Gcm),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SessionCipher {
    key: SymmetricKey,
    mode: SessionMode,
    local: u32,
    remote: u32,
    sent: u64,
    received: u64,
}

impl SessionCipher {
    pub fn new(key: SymmetricKey, mode: SessionMode, local: u32, remote: u32) -> Self {
        Self {
            key,
            mode,
            local,
            remote,
            sent: 0,
            received: 0,
        }
    }

    pub fn for_lock(key: SymmetricKey, mode: SessionMode) -> Self {
        Self::new(key, mode, LOCK_ENDPOINT, PEER_ENDPOINT)
    }

    pub fn for_peer(key: SymmetricKey, mode: SessionMode) -> Self {
        Self::new(key, mode, PEER_ENDPOINT, LOCK_ENDPOINT)
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn key(&self) -> &SymmetricKey {
        &self.key
    }

    pub fn seal(&mut self, opcode: u8, plaintext: &[u8]) -> Vec<u8> {
        match self.mode {
            SessionMode::Ecb => {
                let mut m = Vec::with_capacity(plaintext.len() + 1);
                m.push(opcode);
                m.extend_from_slice(plaintext);
                ecb_encrypt(&self.key, &m)
            }
            SessionMode::Gcm => {
                self.sent += 1;
                let counter = self.sent.to_le_bytes();
                let nonce = GcmNonce::from_parts(self.local, self.sent);
                let mut out = counter.to_vec();
                out.extend(gcm_seal(
                    &self.key,
                    &nonce,
                    &aad(opcode, &counter),
                    plaintext,
                ));
                out
            }
        }
    }

    /// `None` on any failure: bad padding, wrong opcode echo, bad tag, stale counter.
    pub fn open(&mut self, opcode: u8, body: &[u8]) -> Option<Vec<u8>> {
        match self.mode {
            SessionMode::Ecb => {
                let m = ecb_decrypt(&self.key, body).ok()?;
                let (&op, rest) = m.split_first()?;
                (op == opcode).then(|| rest.to_vec())
            }
            SessionMode::Gcm => {
                let counter_bytes: [u8; 8] = body.get(..8)?.try_into().ok()?;
                let counter = u64::from_le_bytes(counter_bytes);
                if counter <= self.received {
                    return None;
                }
                let nonce = GcmNonce::from_parts(self.remote, counter);
                let pt =
                    gcm_open(&self.key, &nonce, &aad(opcode, &counter_bytes), &body[8..]).ok()?;
                self.received = counter;
                Some(pt)
            }
        }
    }
}

fn aad(opcode: u8, counter: &[u8; 8]) -> [u8; 9] {
    let mut a = [0u8; 9];
    a[0] = opcode;
    a[1..].copy_from_slice(counter);
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(mode: SessionMode) -> (SessionCipher, SessionCipher) {
        let k = SymmetricKey::from_bytes([3; 16]);
        (
            SessionCipher::for_peer(k, mode),
            SessionCipher::for_lock(k, mode),
        )
    }

    #[test]
    fn both_modes_round_trip() {
        for mode in [SessionMode::Ecb, SessionMode::Gcm] {
            let (mut peer, mut lock) = pair(mode);
            let body = peer.seal(0x04, b"open");
            assert_eq!(lock.open(0x04, &body).unwrap(), b"open");
            let reply = lock.seal(0x84, &[1]);
            assert_eq!(peer.open(0x84, &reply).unwrap(), [1]);
        }
    }

    #[test]
    fn ecb_replays_gcm_does_not() {
        let (mut peer, mut lock) = pair(SessionMode::Ecb);
        let body = peer.seal(0x04, &[]);
        assert!(lock.open(0x04, &body).is_some());
        assert!(lock.open(0x04, &body).is_some());

        let (mut peer, mut lock) = pair(SessionMode::Gcm);
        let body = peer.seal(0x04, &[]);
        assert!(lock.open(0x04, &body).is_some());
        assert!(lock.open(0x04, &body).is_none());
    }

    #[test]
    fn opcode_is_bound() {
        for mode in [SessionMode::Ecb, SessionMode::Gcm] {
            let (mut peer, mut lock) = pair(mode);
            let body = peer.seal(0x04, &[]);
            assert!(lock.open(0x06, &body).is_none());
        }
    }

    #[test]
    fn plaintext_is_rejected() {
        for mode in [SessionMode::Ecb, SessionMode::Gcm] {
            let (_, mut lock) = pair(mode);
            assert!(lock.open(0x04, &[]).is_none());
            assert!(lock.open(0x04, &[0u8; 16]).is_none());
        }
    }

    #[test]
    fn mode_byte() {
        for m in [SessionMode::Ecb, SessionMode::Gcm] {
            assert_eq!(SessionMode::from_byte(m.to_byte()), Some(m));
        }
        assert_eq!(SessionMode::from_byte(2), None);
    }
}
