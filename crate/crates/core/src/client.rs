//! Peer side of the lock protocol, shared by the app and the attacker.

use crate::cryptobox::{Serial, SessionNonce, Signature, SymmetricKey, NONCE_LEN, SERIAL_LEN};
use crate::error::ErrorCode;
use crate::firmware::FirmwarePackage;
use crate::lock::{session_proof, DeviceIdentity};
use crate::session::{SessionCipher, SessionMode};
use crate::transport::LockLink;
use crate::wire::{decode_frame, encode_frame, Command, Frame, Opcode};

/// Plaintext bytes carried by each DFU_DATA frame.
pub const DFU_CHUNK: usize = 480;

pub struct LockClient {
    link: Box<dyn LockLink>,
    session: Option<SessionCipher>,
}

impl Drop for LockClient {
    fn drop(&mut self) {
        self.link.disconnect();
    }
}

impl LockClient {
    pub fn new(link: Box<dyn LockLink>) -> Self {
        Self {
            link,
            session: None,
        }
    }

    pub fn has_session(&self) -> bool {
        self.session.is_some()
    }

    pub fn end_session(&mut self) {
        self.session = None;
    }

    /// Drops the radio connection; the lock ends any live session.
    pub fn hang_up(self) {}

    /// Sends already-encoded bytes and returns the encoded reply.
    pub fn raw(&mut self, bytes: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        self.link.exchange(bytes)
    }

    /// Sends a frame and returns the reply payload, mapping ERROR frames.
    pub fn request(&mut self, cmd: Command, payload: Vec<u8>) -> Result<Vec<u8>, ErrorCode> {
        let frame = Frame::request(cmd, payload).map_err(|_| ErrorCode::BadRequest)?;
        let bytes = encode_frame(&frame).map_err(|_| ErrorCode::BadRequest)?;
        let reply = decode_frame(&self.link.exchange(&bytes)?).map_err(|_| ErrorCode::BadFrame)?;
        if reply.is_error() {
            let code = reply.payload.first().and_then(|b| ErrorCode::from_wire(*b));
            return Err(code.unwrap_or(ErrorCode::UnexpectedResponse));
        }
        if reply.opcode != Opcode::response(cmd) {
            return Err(ErrorCode::UnexpectedResponse);
        }
        Ok(reply.payload)
    }

    pub fn get_random(&mut self) -> Result<(SessionNonce, Serial), ErrorCode> {
        let p = self.request(Command::GetRandom, vec![])?;
        if p.len() != NONCE_LEN + SERIAL_LEN {
            return Err(ErrorCode::UnexpectedResponse);
        }
        Ok((
            p[..NONCE_LEN].try_into().expect("length checked"),
            p[NONCE_LEN..].try_into().expect("length checked"),
        ))
    }

    pub fn session_init(
        &mut self,
        session_key: SymmetricKey,
        nonce: &SessionNonce,
        token: Option<&Signature>,
    ) -> Result<SessionMode, ErrorCode> {
        let mut proof = session_proof(&session_key, nonce);
        if let Some(t) = token {
            proof.extend_from_slice(t.as_bytes());
        }
        let ack = self.request(Command::SessionInit, proof)?;
        let mode = ack
            .first()
            .and_then(|b| SessionMode::from_byte(*b))
            .ok_or(ErrorCode::UnexpectedResponse)?;
        self.session = Some(SessionCipher::for_peer(session_key, mode));
        Ok(mode)
    }

    /// Session-scoped command: payload sealed, reply opened.
    pub fn secure(&mut self, cmd: Command, plaintext: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        let body = self
            .session
            .as_mut()
            .ok_or(ErrorCode::WrongState)?
            .seal(Opcode::request(cmd).to_byte(), plaintext);
        let reply = self.request(cmd, body)?;
        self.session
            .as_mut()
            .ok_or(ErrorCode::WrongState)?
            .open(Opcode::response(cmd).to_byte(), &reply)
            .ok_or(ErrorCode::DecryptFailed)
    }

    /// Seals a session-scoped command without sending it.
    pub fn seal_frame(&mut self, cmd: Command, plaintext: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        let body = self
            .session
            .as_mut()
            .ok_or(ErrorCode::WrongState)?
            .seal(Opcode::request(cmd).to_byte(), plaintext);
        let frame = Frame::request(cmd, body).map_err(|_| ErrorCode::BadRequest)?;
        encode_frame(&frame).map_err(|_| ErrorCode::BadRequest)
    }

    pub fn unlock(&mut self) -> Result<bool, ErrorCode> {
        Ok(self.secure(Command::Unlock, &[])? == [1])
    }

    pub fn enroll(&mut self, identity: &DeviceIdentity) -> Result<(), ErrorCode> {
        let mut pt = identity.serial.to_vec();
        pt.extend_from_slice(identity.key.as_bytes());
        self.secure(Command::Enroll, &pt)?;
        self.session = None;
        Ok(())
    }

    pub fn enroll_finger(&mut self, victim: u64) -> Result<u16, ErrorCode> {
        let r = self.secure(Command::EnrollFinger, &victim.to_le_bytes())?;
        let b: [u8; 2] = r
            .as_slice()
            .try_into()
            .map_err(|_| ErrorCode::UnexpectedResponse)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn enter_dfu(&mut self) -> Result<(), ErrorCode> {
        self.secure(Command::EnterDfu, &[])?;
        self.session = None;
        Ok(())
    }

    /// Streams a package in DFU mode and asks the lock to apply it.
    /// Returns the version the lock reports as installed.
    pub fn send_package(&mut self, pkg: &FirmwarePackage) -> Result<String, ErrorCode> {
        for chunk in pkg.to_bytes().chunks(DFU_CHUNK) {
            self.request(Command::DfuData, chunk.to_vec())?;
        }
        let v = self.request(Command::DfuExecute, vec![])?;
        String::from_utf8(v).map_err(|_| ErrorCode::UnexpectedResponse)
    }

    pub fn attest(&mut self, challenge: &[u8; 16]) -> Result<Vec<u8>, ErrorCode> {
        self.request(Command::AttestReq, challenge.to_vec())
    }
}
