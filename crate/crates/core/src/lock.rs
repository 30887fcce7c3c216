//! The emulated padlock: command state machine, sessions, enrollment, DFU,
//! debug port, attestation beacon and installed-firmware behavior.
//!
//! Frames are handled strictly one at a time; [`SharedLock`] is what the
//! transports and the physical-access handle hold.

use std::sync::{Arc, Mutex, MutexGuard};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::broadcast::BroadcastChannel;
use crate::cryptobox::{
    derive_session_key, ecb_encrypt, sign, verify, Serial, SessionNonce, Signature, SigningKeyPair,
    SymmetricKey, VerificationKey, NONCE_LEN, PUBLIC_LEN, SERIAL_LEN, SIGNATURE_LEN,
};
use crate::error::ErrorCode;
use crate::firmware::{Behavior, FirmwarePackage, MAX_PACKAGE_LEN};
use crate::profile::{EnrollmentKey, SecurityProfile, SessionAuth, WakeMode};
use crate::sensor::{FingerprintImage, Sensor, SensorCommand, SensorError, VictimId};
use crate::session::{SessionCipher, SessionMode};
use crate::wire::{decode_frame, encode_frame, Command, Frame, Opcode, WireError};

pub type SharedLock = Arc<Mutex<Lock>>;

pub const PROOF_LEN: usize = 32;
pub const ATTESTATION_LEN: usize = PUBLIC_LEN + SIGNATURE_LEN + SERIAL_LEN + 32 + SIGNATURE_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceIdentity {
    #[serde(with = "hex::serde")]
    pub serial: Serial,
    pub key: SymmetricKey,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LockState {
    Factory,
    Enrolled,
    SessionActive,
    DfuMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOrigin {
    /// Opened with the enrollment key on an unenrolled lock.
    Factory,
    /// Opened with the device key of an enrolled lock.
    Device,
}

/// Lock state refined by session origin; the unit of the transition table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StateKey {
    Factory,
    Enrolled,
    FactorySession,
    DeviceSession,
    DfuMode,
}

impl StateKey {
    pub const ALL: [StateKey; 5] = [
        StateKey::Factory,
        StateKey::Enrolled,
        StateKey::FactorySession,
        StateKey::DeviceSession,
        StateKey::DfuMode,
    ];

    pub fn lock_state(self) -> LockState {
        match self {
            StateKey::Factory => LockState::Factory,
            StateKey::Enrolled => LockState::Enrolled,
            StateKey::FactorySession | StateKey::DeviceSession => LockState::SessionActive,
            StateKey::DfuMode => LockState::DfuMode,
        }
    }
}

/// Declared effect of a well-formed command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transition {
    Next(StateKey),
    /// State unchanged; the command may succeed or fail for profile reasons.
    Stay,
    Reject(ErrorCode),
}

/// The transition table for an enrolled-capable lock given correctly
/// authenticated inputs. DFU_MODE is only ever entered from a session.
pub fn declared_transition(from: StateKey, opcode: Opcode) -> Transition {
    use StateKey::*;
    use Transition::*;
    if opcode.response || opcode.command == Command::Error {
        return Reject(ErrorCode::UnknownOpcode);
    }
    let session = matches!(from, FactorySession | DeviceSession);
    match opcode.command {
        Command::GetRandom => match from {
            Factory | Enrolled => Stay,
            _ => Reject(ErrorCode::WrongState),
        },
        Command::SessionInit => match from {
            Factory => Next(FactorySession),
            Enrolled => Next(DeviceSession),
            _ => Reject(ErrorCode::WrongState),
        },
        Command::Enroll => match from {
            FactorySession => Next(Enrolled),
            _ => Reject(ErrorCode::WrongState),
        },
        Command::Unlock | Command::EnrollFinger | Command::SensorCmd if session => Stay,
        Command::EnterDfu if session => Next(DfuMode),
        Command::DfuData | Command::DfuExecute if from == DfuMode => match opcode.command {
            Command::DfuData => Stay,
            _ => Next(Enrolled),
        },
        Command::AttestReq => Stay,
        _ => Reject(ErrorCode::WrongState),
    }
}

/// Device signing key issued by the manufacturer, with its certificate.
#[derive(Clone, Debug)]
pub struct AttestationCredential {
    pub signing: SigningKeyPair,
    /// Manufacturer CA signature over the device verification key.
    pub certificate: Signature,
}

/// Everything burned into a lock at manufacture.
#[derive(Clone, Debug)]
pub struct LockProvisioning {
    pub profile: SecurityProfile,
    pub manufacturing_serial: Serial,
    pub factory_key: SymmetricKey,
    /// Per-device enrollment key, used when the profile says `per_device`.
    pub enrollment_key: SymmetricKey,
    pub cloud_token_key: VerificationKey,
    pub firmware_trust: VerificationKey,
    pub attestation: Option<AttestationCredential>,
    pub firmware: FirmwarePackage,
    pub sensor_wrap_key: SymmetricKey,
    pub rng_seed: [u8; 32],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LockEvent {
    SessionEstablished { origin: SessionOrigin },
    SessionRejected,
    Enrolled,
    Unlocked,
    DfuEntered,
    FirmwareInstalled { version: String, behavior: Behavior },
    IntegrityFailed,
    BootVerifyFailed,
    TouchWhileAsleep,
    ImageEmitted,
    BlockedByIsolation,
    DebugDumped,
    DebugRefused,
    EnclosureOpened,
    TamperFlagSet,
    FactoryReset,
}

/// What the debug port gives up.
#[derive(Clone, Debug)]
pub struct DebugDump {
    pub manufacturing_serial: Serial,
    pub identity: Option<DeviceIdentity>,
    pub firmware_image: Vec<u8>,
    pub enrolled_templates: Vec<Vec<u8>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TouchOutcome {
    pub captured: bool,
    pub unlocked: bool,
    pub emitted: bool,
    pub blocked_by_isolation: bool,
}

struct ActiveSession {
    cipher: SessionCipher,
    origin: SessionOrigin,
}

pub struct Lock {
    profile: SecurityProfile,
    manufacturing_serial: Serial,
    factory_key: SymmetricKey,
    enrollment_key: SymmetricKey,
    cloud_token_key: VerificationKey,
    firmware_trust: VerificationKey,
    attestation: Option<AttestationCredential>,
    rng: ChaCha20Rng,
    state: LockState,
    identity: Option<DeviceIdentity>,
    pending_nonce: Option<SessionNonce>,
    session: Option<ActiveSession>,
    dfu_buffer: Vec<u8>,
    firmware: FirmwarePackage,
    bolt_open: bool,
    awake: bool,
    tampered: bool,
    sensor: Sensor,
    broadcast: BroadcastChannel,
    events: Vec<LockEvent>,
}

impl std::fmt::Debug for Lock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lock")
            .field("state", &self.state)
            .field("serial", &hex::encode(self.current_serial()))
            .field("firmware", &self.firmware.manifest)
            .finish_non_exhaustive()
    }
}

fn sensor_error(e: SensorError) -> ErrorCode {
    match e {
        SensorError::Asleep => ErrorCode::SensorAsleep,
        SensorError::IsolationViolation => ErrorCode::IsolationViolation,
        SensorError::NoSuchSlot => ErrorCode::NoSuchSlot,
        SensorError::StoreFull => ErrorCode::StoreFull,
        SensorError::BadCommand => ErrorCode::BadRequest,
    }
}

pub fn error_frame(code: ErrorCode) -> Frame {
    let byte = code
        .wire_code()
        .unwrap_or(ErrorCode::BadRequest.wire_code().expect("wire code"));
    Frame::request(Command::Error, vec![byte]).expect("one-byte payload")
}

/// Session proof: the nonce encrypted under the session key.
pub fn session_proof(session_key: &SymmetricKey, nonce: &SessionNonce) -> Vec<u8> {
    ecb_encrypt(session_key, nonce)
}

/// What the cloud signs to authorize a device session.
pub fn token_message(serial: &Serial, nonce: &SessionNonce) -> Vec<u8> {
    let mut m = serial.to_vec();
    m.extend_from_slice(nonce);
    m
}

impl Lock {
    pub fn new(p: LockProvisioning, broadcast: BroadcastChannel) -> Self {
        let sensor = Sensor::new(p.profile.sensor_class, p.sensor_wrap_key);
        Self {
            profile: p.profile,
            manufacturing_serial: p.manufacturing_serial,
            factory_key: p.factory_key,
            enrollment_key: p.enrollment_key,
            cloud_token_key: p.cloud_token_key,
            firmware_trust: p.firmware_trust,
            attestation: p.attestation,
            rng: ChaCha20Rng::from_seed(p.rng_seed),
            state: LockState::Factory,
            identity: None,
            pending_nonce: None,
            session: None,
            dfu_buffer: Vec::new(),
            firmware: p.firmware,
            bolt_open: false,
            awake: false,
            tampered: false,
            sensor,
            broadcast,
            events: Vec::new(),
        }
    }

    pub fn shared(self) -> SharedLock {
        Arc::new(Mutex::new(self))
    }

    pub fn profile(&self) -> &SecurityProfile {
        &self.profile
    }

    pub fn state(&self) -> LockState {
        self.state
    }

    pub fn state_key(&self) -> StateKey {
        match (self.state, self.session.as_ref().map(|s| s.origin)) {
            (LockState::Factory, _) => StateKey::Factory,
            (LockState::Enrolled, _) => StateKey::Enrolled,
            (LockState::SessionActive, Some(SessionOrigin::Factory)) => StateKey::FactorySession,
            (LockState::SessionActive, _) => StateKey::DeviceSession,
            (LockState::DfuMode, _) => StateKey::DfuMode,
        }
    }

    pub fn identity(&self) -> Option<DeviceIdentity> {
        self.identity
    }

    pub fn manufacturing_serial(&self) -> Serial {
        self.manufacturing_serial
    }

    pub fn bolt_open(&self) -> bool {
        self.bolt_open
    }

    pub fn tampered(&self) -> bool {
        self.tampered
    }

    pub fn installed_firmware(&self) -> &FirmwarePackage {
        &self.firmware
    }

    pub fn events(&self) -> &[LockEvent] {
        &self.events
    }

    pub fn enrolled_fingers(&self) -> usize {
        self.sensor.enrolled_count()
    }

    fn current_serial(&self) -> Serial {
        self.identity
            .map_or(self.manufacturing_serial, |i| i.serial)
    }

    fn base_state(&self) -> LockState {
        if self.identity.is_some() {
            LockState::Enrolled
        } else {
            LockState::Factory
        }
    }

    /// Decodes, handles and re-encodes one frame.
    pub fn handle_bytes(&mut self, bytes: &[u8]) -> Vec<u8> {
        let reply = match decode_frame(bytes) {
            Ok(frame) => self.handle_frame(&frame),
            Err(WireError::UnknownOpcode(_)) => error_frame(ErrorCode::UnknownOpcode),
            Err(_) => error_frame(ErrorCode::BadFrame),
        };
        encode_frame(&reply).expect("lock replies fit in a frame")
    }

    pub fn handle_frame(&mut self, frame: &Frame) -> Frame {
        let op = frame.opcode;
        if op.response || op.command == Command::Error {
            return error_frame(ErrorCode::UnknownOpcode);
        }
        match self.dispatch(op.command, &frame.payload) {
            Ok(payload) => {
                Frame::response(op.command, payload).expect("lock replies fit in a frame")
            }
            Err(code) => error_frame(code),
        }
    }

    fn dispatch(&mut self, cmd: Command, payload: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        match cmd {
            Command::GetRandom => self.cmd_get_random(),
            Command::SessionInit => self.cmd_session_init(payload),
            Command::Enroll => self.cmd_enroll(payload),
            Command::Unlock => {
                self.open_session_payload(cmd, payload)?;
                self.bolt_open = true;
                self.events.push(LockEvent::Unlocked);
                Ok(self.seal_reply(cmd, &[1]))
            }
            Command::EnrollFinger => {
                let pt = self.open_session_payload(cmd, payload)?;
                let victim = u64::from_le_bytes(
                    pt.as_slice()
                        .try_into()
                        .map_err(|_| ErrorCode::BadRequest)?,
                );
                let id = self.with_sensor_powered(|s| {
                    let slot = s.capture(VictimId(victim))?;
                    s.enroll(slot)
                })?;
                Ok(self.seal_reply(cmd, &id.0.to_le_bytes()))
            }
            Command::SensorCmd => {
                let pt = self.open_session_payload(cmd, payload)?;
                let sub = SensorCommand::decode(&pt).map_err(sensor_error)?;
                let body = self.with_sensor_powered(|s| s.execute(sub))?;
                Ok(self.seal_reply(cmd, &body))
            }
            Command::EnterDfu => {
                self.open_session_payload(cmd, payload)?;
                let reply = self.seal_reply(cmd, &[]);
                self.session = None;
                self.dfu_buffer.clear();
                self.state = LockState::DfuMode;
                self.events.push(LockEvent::DfuEntered);
                Ok(reply)
            }
            Command::DfuData => {
                if self.state != LockState::DfuMode {
                    return Err(ErrorCode::WrongState);
                }
                if self.dfu_buffer.len() + payload.len() > MAX_PACKAGE_LEN {
                    return Err(ErrorCode::BadRequest);
                }
                self.dfu_buffer.extend_from_slice(payload);
                Ok((self.dfu_buffer.len() as u32).to_le_bytes().to_vec())
            }
            Command::DfuExecute => self.cmd_dfu_execute(),
            Command::AttestReq => self.cmd_attest(payload),
            Command::Error => Err(ErrorCode::UnknownOpcode),
        }
    }

    fn cmd_get_random(&mut self) -> Result<Vec<u8>, ErrorCode> {
        if !matches!(self.state, LockState::Factory | LockState::Enrolled) {
            return Err(ErrorCode::WrongState);
        }
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        self.pending_nonce = Some(nonce);
        let mut out = nonce.to_vec();
        out.extend_from_slice(&self.current_serial());
        Ok(out)
    }

    fn cmd_session_init(&mut self, payload: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        if !matches!(self.state, LockState::Factory | LockState::Enrolled) {
            return Err(ErrorCode::WrongState);
        }
        let nonce = self.pending_nonce.take().ok_or(ErrorCode::NoPendingNonce)?;
        let (origin, key, serial) = match self.identity {
            None => {
                let key = match self.profile.enrollment_key {
                    EnrollmentKey::HardCoded => self.factory_key,
                    EnrollmentKey::PerDevice => self.enrollment_key,
                };
                (SessionOrigin::Factory, key, self.manufacturing_serial)
            }
            Some(id) => (SessionOrigin::Device, id.key, id.serial),
        };
        let needs_token =
            origin == SessionOrigin::Device && self.profile.session_auth == SessionAuth::MutualAuth;
        let k = derive_session_key(&key, &serial, &nonce);
        let proof_ok = payload.get(..PROOF_LEN) == Some(session_proof(&k, &nonce).as_slice());
        let token_ok = if needs_token {
            payload.len() == PROOF_LEN + SIGNATURE_LEN
                && Signature::from_slice(&payload[PROOF_LEN..]).is_some_and(|sig| {
                    verify(&self.cloud_token_key, &token_message(&serial, &nonce), &sig)
                })
        } else {
            payload.len() == PROOF_LEN
        };
        if !(proof_ok && token_ok) {
            self.events.push(LockEvent::SessionRejected);
            return Err(ErrorCode::AuthFailed);
        }
        let mode = match self.profile.session_auth {
            SessionAuth::OfflineKdf => SessionMode::Ecb,
            SessionAuth::MutualAuth => SessionMode::Gcm,
        };
        self.session = Some(ActiveSession {
            cipher: SessionCipher::for_lock(k, mode),
            origin,
        });
        self.state = LockState::SessionActive;
        self.events.push(LockEvent::SessionEstablished { origin });
        Ok(vec![mode.to_byte()])
    }

    fn cmd_enroll(&mut self, payload: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        if self.state_key() != StateKey::FactorySession {
            return Err(ErrorCode::WrongState);
        }
        let pt = self.open_session_payload(Command::Enroll, payload)?;
        if pt.len() != SERIAL_LEN + 16 {
            return Err(ErrorCode::BadRequest);
        }
        let serial: Serial = pt[..SERIAL_LEN].try_into().expect("length checked");
        let key = SymmetricKey::from_slice(&pt[SERIAL_LEN..]).expect("length checked");
        let reply = self.seal_reply(Command::Enroll, &[]);
        self.identity = Some(DeviceIdentity { serial, key });
        self.session = None;
        self.state = LockState::Enrolled;
        self.events.push(LockEvent::Enrolled);
        Ok(reply)
    }

    fn cmd_dfu_execute(&mut self) -> Result<Vec<u8>, ErrorCode> {
        if self.state != LockState::DfuMode {
            return Err(ErrorCode::WrongState);
        }
        let buffer = std::mem::take(&mut self.dfu_buffer);
        self.state = self.base_state();
        let integrity = FirmwarePackage::from_bytes(&buffer).ok().filter(|pkg| {
            pkg.verify(self.profile.dfu_integrity, &self.firmware_trust)
                .is_ok()
        });
        let Some(pkg) = integrity else {
            self.events.push(LockEvent::IntegrityFailed);
            return Err(ErrorCode::IntegrityFailed);
        };
        self.boot(pkg)?;
        Ok(self.firmware.manifest.version.as_bytes().to_vec())
    }

    /// Secure-boot gate in front of every install.
    fn boot(&mut self, pkg: FirmwarePackage) -> Result<(), ErrorCode> {
        if self.profile.secure_boot && !pkg.signature_valid(&self.firmware_trust) {
            self.events.push(LockEvent::BootVerifyFailed);
            return Err(ErrorCode::BootVerifyFailed);
        }
        self.install(pkg);
        Ok(())
    }

    fn install(&mut self, pkg: FirmwarePackage) {
        self.events.push(LockEvent::FirmwareInstalled {
            version: pkg.manifest.version.clone(),
            behavior: pkg.manifest.behavior,
        });
        self.firmware = pkg;
    }

    fn cmd_attest(&mut self, payload: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        let challenge: [u8; 16] = payload.try_into().map_err(|_| ErrorCode::BadRequest)?;
        let cred = self
            .attestation
            .as_ref()
            .filter(|_| self.profile.attestation)
            .ok_or(ErrorCode::AttestationUnavailable)?;
        let serial = self.current_serial();
        let digest = self.firmware.image_digest();
        let att = Attestation {
            device_key: cred.signing.verification_key(),
            certificate: cred.certificate,
            serial,
            firmware_digest: digest,
            signature: sign(
                &cred.signing,
                &Attestation::message(&serial, &challenge, &digest),
            ),
        };
        Ok(att.to_bytes())
    }

    fn open_session_payload(&mut self, cmd: Command, payload: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        if self.state != LockState::SessionActive {
            return Err(ErrorCode::WrongState);
        }
        let session = self.session.as_mut().ok_or(ErrorCode::WrongState)?;
        session
            .cipher
            .open(Opcode::request(cmd).to_byte(), payload)
            .ok_or(ErrorCode::DecryptFailed)
    }

    fn seal_reply(&mut self, cmd: Command, plaintext: &[u8]) -> Vec<u8> {
        let session = self
            .session
            .as_mut()
            .expect("reply sealed inside a session");
        session
            .cipher
            .seal(Opcode::response(cmd).to_byte(), plaintext)
    }

    fn with_sensor_powered<T>(
        &mut self,
        f: impl FnOnce(&mut Sensor) -> Result<T, SensorError>,
    ) -> Result<T, ErrorCode> {
        self.sensor.set_powered(true);
        let r = f(&mut self.sensor);
        self.sensor.clear_slots();
        self.sensor.set_powered(self.awake);
        r.map_err(sensor_error)
    }

    /// The radio link dropped: any live session ends. DFU mode survives
    /// a reconnect.
    pub fn disconnect(&mut self) {
        self.session = None;
        self.pending_nonce = None;
        if self.state == LockState::SessionActive {
            self.state = self.base_state();
        }
    }

    // Physical world.

    pub fn press_button(&mut self) {
        self.awake = true;
    }

    /// A finger on the sensor. In touch-wake mode contact alone wakes the
    /// lock; otherwise a sleeping lock ignores it. The lock sleeps again after.
    pub fn touch(&mut self, victim: VictimId) -> TouchOutcome {
        if self.profile.wake_mode == WakeMode::Touch {
            self.awake = true;
        }
        let mut out = TouchOutcome::default();
        if !self.awake {
            self.events.push(LockEvent::TouchWhileAsleep);
            return out;
        }
        self.sensor.set_powered(true);
        if let Ok(slot) = self.sensor.capture(victim) {
            out.captured = true;
            if let Ok(Some(_)) = self.sensor.match_slot(slot) {
                self.bolt_open = true;
                out.unlocked = true;
            }
            if self.firmware.manifest.behavior == Behavior::Droplock {
                match self.sensor.get_image(slot) {
                    Ok(image) => {
                        self.broadcast.emit(image);
                        self.events.push(LockEvent::ImageEmitted);
                        out.emitted = true;
                    }
                    Err(_) => {
                        self.events.push(LockEvent::BlockedByIsolation);
                        out.blocked_by_isolation = true;
                    }
                }
            }
        }
        self.sensor.clear_slots();
        self.sensor.set_powered(false);
        self.awake = false;
        out
    }

    fn mark_tamper(&mut self) {
        if self.profile.tamper_evident && !self.tampered {
            self.tampered = true;
            self.events.push(LockEvent::TamperFlagSet);
        }
    }

    pub fn open_enclosure(&mut self) {
        self.events.push(LockEvent::EnclosureOpened);
        self.mark_tamper();
    }

    pub fn debug_dump(&mut self) -> Result<DebugDump, ErrorCode> {
        if !self.profile.debug_port {
            self.events.push(LockEvent::DebugRefused);
            return Err(ErrorCode::DebugDisabled);
        }
        self.events.push(LockEvent::DebugDumped);
        self.mark_tamper();
        Ok(DebugDump {
            manufacturing_serial: self.manufacturing_serial,
            identity: self.identity,
            firmware_image: self.firmware.image.clone(),
            enrolled_templates: self.sensor.stored_templates(),
        })
    }

    /// Chip-off rewrite of the external flash followed by a power cycle.
    /// With secure boot the bootloader refuses an unsigned image and keeps
    /// the previous one.
    pub fn reflash_and_reboot(&mut self, pkg: FirmwarePackage) -> Result<(), ErrorCode> {
        self.mark_tamper();
        self.reboot_volatile();
        self.boot(pkg)
    }

    fn reboot_volatile(&mut self) {
        self.session = None;
        self.pending_nonce = None;
        self.dfu_buffer.clear();
        self.awake = false;
        self.state = self.base_state();
    }

    /// Harness-only: back to the state it left the factory in.
    pub fn factory_reset(&mut self) {
        self.identity = None;
        self.reboot_volatile();
        self.bolt_open = false;
        self.sensor.clear_enrolled();
        self.events.push(LockEvent::FactoryReset);
    }

    /// Harness-only: install without any integrity or boot check.
    pub fn install_unchecked(&mut self, pkg: FirmwarePackage) {
        self.install(pkg);
    }
}

/// Signed statement answering ATTEST_REQ.
///
/// `device_key (32) || certificate (64) || serial (8) || firmware digest (32) || signature (64)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attestation {
    pub device_key: VerificationKey,
    pub certificate: Signature,
    pub serial: Serial,
    pub firmware_digest: [u8; 32],
    pub signature: Signature,
}

impl Attestation {
    pub fn message(serial: &Serial, challenge: &[u8; 16], digest: &[u8; 32]) -> Vec<u8> {
        let mut m = serial.to_vec();
        m.extend_from_slice(challenge);
        m.extend_from_slice(digest);
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ATTESTATION_LEN);
        out.extend_from_slice(self.device_key.as_bytes());
        out.extend_from_slice(self.certificate.as_bytes());
        out.extend_from_slice(&self.serial);
        out.extend_from_slice(&self.firmware_digest);
        out.extend_from_slice(self.signature.as_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != ATTESTATION_LEN {
            return None;
        }
        let (key, rest) = b.split_at(PUBLIC_LEN);
        let (cert, rest) = rest.split_at(SIGNATURE_LEN);
        let (serial, rest) = rest.split_at(SERIAL_LEN);
        let (digest, sig) = rest.split_at(32);
        Some(Self {
            device_key: VerificationKey::from_slice(key).ok()?,
            certificate: Signature::from_slice(cert)?,
            serial: serial.try_into().ok()?,
            firmware_digest: digest.try_into().ok()?,
            signature: Signature::from_slice(sig)?,
        })
    }

    /// Checks the certificate chain and the challenge signature.
    pub fn verify(&self, ca: &VerificationKey, challenge: &[u8; 16]) -> bool {
        verify(ca, self.device_key.as_bytes(), &self.certificate)
            && verify(
                &self.device_key,
                &Attestation::message(&self.serial, challenge, &self.firmware_digest),
                &self.signature,
            )
    }
}

/// Physical access to a lock: what someone holding it can do without the radio.
#[derive(Clone, Debug)]
pub struct PhysicalAccess {
    lock: SharedLock,
}

impl PhysicalAccess {
    pub fn new(lock: SharedLock) -> Self {
        Self { lock }
    }

    fn guard(&self) -> MutexGuard<'_, Lock> {
        self.lock.lock().expect("lock mutex")
    }

    pub fn touch(&self, victim: VictimId) -> TouchOutcome {
        self.guard().touch(victim)
    }

    pub fn press_button(&self) {
        self.guard().press_button()
    }

    pub fn debug_dump(&self) -> Result<DebugDump, ErrorCode> {
        self.guard().debug_dump()
    }

    pub fn open_enclosure(&self) {
        self.guard().open_enclosure()
    }

    pub fn reflash_and_reboot(&self, pkg: FirmwarePackage) -> Result<(), ErrorCode> {
        self.guard().reflash_and_reboot(pkg)
    }

    /// Whether the wake-up button needs pressing; visible from the device itself.
    pub fn needs_button(&self) -> bool {
        self.guard().profile.wake_mode == WakeMode::Button
    }
}

/// The pseudo-image a victim's touch produces; used by tests and reports.
pub fn expected_image(victim: VictimId) -> FingerprintImage {
    FingerprintImage::synthesize(victim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firmware::{Catalog, Manifest};
    use crate::wire::Opcode;

    struct Rig {
        lock: Lock,
        factory_key: SymmetricKey,
        cloud: SigningKeyPair,
        catalog: Catalog,
        peer: Option<SessionCipher>,
    }

    fn rig(profile: SecurityProfile) -> Rig {
        let vendor = SigningKeyPair::from_seed([1; 32]);
        let cloud = SigningKeyPair::from_seed([2; 32]);
        let ca = SigningKeyPair::from_seed([3; 32]);
        let device = SigningKeyPair::from_seed([4; 32]);
        let catalog = Catalog::builtin(&vendor);
        let factory_key = SymmetricKey::from_bytes([0xF0; 16]);
        let certificate = sign(&ca, device.verification_key().as_bytes());
        let p = LockProvisioning {
            profile,
            manufacturing_serial: [0x4D; 8],
            factory_key,
            enrollment_key: SymmetricKey::from_bytes([0xE1; 16]),
            cloud_token_key: cloud.verification_key(),
            firmware_trust: vendor.verification_key(),
            attestation: Some(AttestationCredential {
                signing: device,
                certificate,
            }),
            firmware: catalog.factory_image().clone(),
            sensor_wrap_key: SymmetricKey::from_bytes([0x77; 16]),
            rng_seed: [9; 32],
        };
        Rig {
            lock: Lock::new(p, BroadcastChannel::new()),
            factory_key,
            cloud,
            catalog,
            peer: None,
        }
    }

    impl Rig {
        fn send(&mut self, cmd: Command, payload: Vec<u8>) -> Frame {
            let bytes = encode_frame(&Frame::request(cmd, payload).unwrap()).unwrap();
            decode_frame(&self.lock.handle_bytes(&bytes)).unwrap()
        }

        fn get_random(&mut self) -> (SessionNonce, Serial) {
            let r = self.send(Command::GetRandom, vec![]);
            assert_eq!(r.opcode, Opcode::response(Command::GetRandom));
            (
                r.payload[..16].try_into().unwrap(),
                r.payload[16..].try_into().unwrap(),
            )
        }

        fn open_session(&mut self, key: SymmetricKey, with_token: bool) -> Frame {
            let (nonce, serial) = self.get_random();
            let k = derive_session_key(&key, &serial, &nonce);
            let mut proof = session_proof(&k, &nonce);
            if with_token {
                proof.extend_from_slice(
                    sign(&self.cloud, &token_message(&serial, &nonce)).as_bytes(),
                );
            }
            let r = self.send(Command::SessionInit, proof);
            if !r.is_error() {
                self.peer = Some(SessionCipher::for_peer(
                    k,
                    SessionMode::from_byte(r.payload[0]).unwrap(),
                ));
            }
            r
        }

        fn secure(&mut self, cmd: Command, pt: &[u8]) -> Result<Vec<u8>, ErrorCode> {
            let peer = self.peer.as_mut().unwrap();
            let body = peer.seal(cmd as u8, pt);
            let r = self.send(cmd, body);
            if r.is_error() {
                return Err(ErrorCode::from_wire(r.payload[0]).unwrap());
            }
            Ok(self
                .peer
                .as_mut()
                .unwrap()
                .open(cmd as u8 | 0x80, &r.payload)
                .unwrap())
        }

        fn enroll(&mut self, id: DeviceIdentity) {
            let fk = self.factory_key;
            assert!(!self.open_session(fk, false).is_error());
            let mut pt = id.serial.to_vec();
            pt.extend_from_slice(id.key.as_bytes());
            self.secure(Command::Enroll, &pt).unwrap();
        }

        fn push_package(&mut self, pkg: &FirmwarePackage) -> Frame {
            for chunk in pkg.to_bytes().chunks(480) {
                let r = self.send(Command::DfuData, chunk.to_vec());
                assert!(!r.is_error());
            }
            self.send(Command::DfuExecute, vec![])
        }
    }

    fn err(f: &Frame) -> Option<ErrorCode> {
        f.is_error()
            .then(|| ErrorCode::from_wire(f.payload[0]).unwrap())
    }

    const ID: DeviceIdentity = DeviceIdentity {
        serial: [0x11; 8],
        key: SymmetricKey::from_bytes([0x22; 16]),
    };

    #[test]
    fn unlock_in_factory_is_wrong_state() {
        let mut r = rig(SecurityProfile::vulnerable());
        assert_eq!(
            err(&r.send(Command::Unlock, vec![])),
            Some(ErrorCode::WrongState)
        );
    }

    #[test]
    fn plaintext_unlock_in_session_fails_decryption() {
        let mut r = rig(SecurityProfile::vulnerable());
        r.enroll(ID);
        assert!(!r.open_session(ID.key, false).is_error());
        assert_eq!(
            err(&r.send(Command::Unlock, vec![])),
            Some(ErrorCode::DecryptFailed)
        );
        assert!(!r.lock.bolt_open());
        r.secure(Command::Unlock, &[]).unwrap();
        assert!(r.lock.bolt_open());
    }

    #[test]
    fn nonces_are_fresh_and_session_init_consumes_them() {
        let mut r = rig(SecurityProfile::vulnerable());
        let mut seen = std::collections::HashSet::new();
        for _ in 0..10_000 {
            assert!(seen.insert(r.get_random().0));
        }
        assert_eq!(
            err(&r.send(Command::SessionInit, vec![0; 32])),
            Some(ErrorCode::AuthFailed)
        );
        assert_eq!(
            err(&r.send(Command::SessionInit, vec![0; 32])),
            Some(ErrorCode::NoPendingNonce)
        );
    }

    #[test]
    fn get_random_reports_current_serial() {
        let mut r = rig(SecurityProfile::vulnerable());
        assert_eq!(r.get_random().1, [0x4D; 8]);
        r.enroll(ID);
        assert_eq!(r.get_random().1, ID.serial);
    }

    #[test]
    fn factory_key_enrollment_and_its_limits() {
        let mut r = rig(SecurityProfile::vulnerable());
        r.enroll(ID);
        assert_eq!(r.lock.state(), LockState::Enrolled);
        assert_eq!(r.lock.identity(), Some(ID));
        assert_eq!(
            err(&r.send(Command::Enroll, vec![])),
            Some(ErrorCode::WrongState)
        );
        // the factory key no longer opens anything
        let fk = r.factory_key;
        assert_eq!(err(&r.open_session(fk, false)), Some(ErrorCode::AuthFailed));
        // device session cannot re-enroll
        assert!(!r.open_session(ID.key, false).is_error());
        let mut pt = [0x99u8; 8].to_vec();
        pt.extend_from_slice(&[0x99; 16]);
        assert_eq!(r.secure(Command::Enroll, &pt), Err(ErrorCode::WrongState));
        assert_eq!(r.lock.identity(), Some(ID));
    }

    #[test]
    fn per_device_enrollment_key_rejects_factory_key() {
        let mut p = SecurityProfile::vulnerable();
        p.enrollment_key = EnrollmentKey::PerDevice;
        let mut r = rig(p);
        let fk = r.factory_key;
        assert_eq!(err(&r.open_session(fk, false)), Some(ErrorCode::AuthFailed));
        assert!(!r
            .open_session(SymmetricKey::from_bytes([0xE1; 16]), false)
            .is_error());
    }

    #[test]
    fn mutual_auth_demands_cloud_token_for_device_sessions() {
        let mut r = rig(SecurityProfile::hardened());
        r.lock.profile.enrollment_key = EnrollmentKey::HardCoded;
        r.enroll(ID);
        assert_eq!(
            err(&r.open_session(ID.key, false)),
            Some(ErrorCode::AuthFailed)
        );
        let ack = r.open_session(ID.key, true);
        assert_eq!(ack.payload, [SessionMode::Gcm.to_byte()]);
    }

    #[test]
    fn wrong_key_proof_fails() {
        let mut r = rig(SecurityProfile::vulnerable());
        let bogus = SymmetricKey::from_bytes([0; 16]);
        assert_eq!(
            err(&r.open_session(bogus, false)),
            Some(ErrorCode::AuthFailed)
        );
        assert_eq!(r.lock.state(), LockState::Factory);
    }

    #[test]
    fn replay_accepted_in_ecb_rejected_in_gcm() {
        for (profile, replay_ok) in [
            (SecurityProfile::vulnerable(), true),
            (SecurityProfile::hardened(), false),
        ] {
            let mut r = rig(profile);
            r.lock.profile.enrollment_key = EnrollmentKey::HardCoded;
            r.enroll(ID);
            let token = r.lock.profile.session_auth == SessionAuth::MutualAuth;
            assert!(!r.open_session(ID.key, token).is_error());
            let body = r.peer.as_mut().unwrap().seal(Command::Unlock as u8, &[]);
            assert!(!r.send(Command::Unlock, body.clone()).is_error());
            let again = r.send(Command::Unlock, body);
            assert_eq!(err(&again).is_none(), replay_ok);
            if !replay_ok {
                assert_eq!(err(&again), Some(ErrorCode::DecryptFailed));
            }
        }
    }

    #[test]
    fn enroll_finger_then_touch_matches() {
        let mut r = rig(SecurityProfile::vulnerable());
        r.enroll(ID);
        assert!(!r.open_session(ID.key, false).is_error());
        let id = r
            .secure(Command::EnrollFinger, &42u64.to_le_bytes())
            .unwrap();
        assert_eq!(id, 1u16.to_le_bytes());
        let out = r.lock.touch(VictimId(42));
        assert!(out.unlocked);
        assert!(!r.lock.touch(VictimId(43)).unlocked);
    }

    fn droplock() -> FirmwarePackage {
        FirmwarePackage::with_crc(
            Manifest {
                version: "6.6.6".into(),
                behavior: Behavior::Droplock,
            },
            crate::config::droplock_image().to_vec(),
        )
    }

    fn into_dfu(r: &mut Rig) {
        r.enroll(ID);
        let token = r.lock.profile.session_auth == SessionAuth::MutualAuth;
        assert!(!r.open_session(ID.key, token).is_error());
        r.secure(Command::EnterDfu, &[]).unwrap();
        assert_eq!(r.lock.state(), LockState::DfuMode);
    }

    #[test]
    fn forged_crc_package_accepted_on_vulnerable_lock() {
        let mut r = rig(SecurityProfile::vulnerable());
        into_dfu(&mut r);
        let reply = r.push_package(&droplock());
        assert_eq!(reply.payload, b"6.6.6");
        assert_eq!(
            r.lock.installed_firmware().manifest.behavior,
            Behavior::Droplock
        );
        assert_eq!(r.lock.state(), LockState::Enrolled);
    }

    #[test]
    fn forged_package_rejected_with_signature_integrity() {
        let mut p = SecurityProfile::hardened();
        p.enrollment_key = EnrollmentKey::HardCoded;
        let mut r = rig(p);
        into_dfu(&mut r);
        assert_eq!(
            err(&r.push_package(&droplock())),
            Some(ErrorCode::IntegrityFailed)
        );
        assert_eq!(
            r.lock.installed_firmware().manifest.behavior,
            Behavior::Legitimate
        );
        assert_eq!(r.lock.state(), LockState::Enrolled);
    }

    #[test]
    fn signed_package_accepted_with_signature_integrity() {
        let mut p = SecurityProfile::hardened();
        p.enrollment_key = EnrollmentKey::HardCoded;
        let mut r = rig(p);
        into_dfu(&mut r);
        let pkg = r.catalog.latest().clone();
        assert_eq!(r.push_package(&pkg).payload, b"1.1.0");
    }

    #[test]
    fn secure_boot_catches_what_crc_lets_through() {
        let mut p = SecurityProfile::vulnerable();
        p.secure_boot = true;
        let mut r = rig(p);
        into_dfu(&mut r);
        assert_eq!(
            err(&r.push_package(&droplock())),
            Some(ErrorCode::BootVerifyFailed)
        );
        assert_eq!(
            r.lock.installed_firmware().manifest.behavior,
            Behavior::Legitimate
        );
    }

    #[test]
    fn garbage_dfu_is_integrity_failure() {
        let mut r = rig(SecurityProfile::vulnerable());
        into_dfu(&mut r);
        r.send(Command::DfuData, vec![1, 2, 3]);
        assert_eq!(
            err(&r.send(Command::DfuExecute, vec![])),
            Some(ErrorCode::IntegrityFailed)
        );
    }

    #[test]
    fn droplock_emission_depends_on_class_and_wake() {
        let mut r = rig(SecurityProfile::vulnerable());
        r.lock.install_unchecked(droplock());
        let out = r.lock.touch(VictimId(5));
        assert!(out.emitted);
        let mut rx = r.lock.broadcast.listener();
        assert_eq!(rx.drain(), vec![expected_image(VictimId(5))]);

        let mut p = SecurityProfile::vulnerable();
        p.sensor_class = crate::sensor::IsolationClass::Class2;
        let mut r = rig(p);
        r.lock.install_unchecked(droplock());
        let out = r.lock.touch(VictimId(5));
        assert!(out.blocked_by_isolation && !out.emitted);
        assert_eq!(r.lock.broadcast.len_bytes(), 0);
        assert!(r.lock.events().contains(&LockEvent::BlockedByIsolation));

        let mut p = SecurityProfile::vulnerable();
        p.wake_mode = WakeMode::Button;
        let mut r = rig(p);
        r.lock.install_unchecked(droplock());
        assert!(!r.lock.touch(VictimId(5)).captured);
        r.lock.press_button();
        assert!(r.lock.touch(VictimId(5)).emitted);
        assert!(
            !r.lock.touch(VictimId(5)).captured,
            "lock sleeps again after a touch"
        );
    }

    #[test]
    fn legitimate_firmware_never_emits() {
        let mut r = rig(SecurityProfile::vulnerable());
        for v in 0..10 {
            r.lock.touch(VictimId(v));
        }
        assert_eq!(r.lock.broadcast.len_bytes(), 0);
    }

    #[test]
    fn debug_dump_and_tamper_evidence() {
        let mut r = rig(SecurityProfile::vulnerable());
        r.enroll(ID);
        let dump = r.lock.debug_dump().unwrap();
        assert_eq!(dump.identity, Some(ID));
        assert!(!r.lock.tampered());

        let mut r = rig(SecurityProfile::hardened());
        assert_eq!(r.lock.debug_dump().unwrap_err(), ErrorCode::DebugDisabled);

        let mut p = SecurityProfile::hardened();
        p.debug_port = true;
        let mut r = rig(p);
        assert!(r.lock.debug_dump().is_ok());
        assert!(r.lock.tampered());
        r.lock.factory_reset();
        assert!(r.lock.tampered(), "tamper flag is permanent");
    }

    #[test]
    fn class3_dump_yields_no_usable_templates() {
        let mut p = SecurityProfile::vulnerable();
        p.sensor_class = crate::sensor::IsolationClass::Class3;
        let mut r = rig(p);
        r.enroll(ID);
        assert!(!r.open_session(ID.key, false).is_error());
        r.secure(Command::EnrollFinger, &7u64.to_le_bytes())
            .unwrap();
        let dump = r.lock.debug_dump().unwrap();
        let real = expected_image(VictimId(7)).template().0.to_vec();
        assert_eq!(dump.enrolled_templates.len(), 1);
        assert_ne!(dump.enrolled_templates[0], real);
    }

    #[test]
    fn reflash_respects_secure_boot() {
        let mut r = rig(SecurityProfile::vulnerable());
        r.lock.reflash_and_reboot(droplock()).unwrap();
        assert_eq!(
            r.lock.installed_firmware().manifest.behavior,
            Behavior::Droplock
        );

        let mut p = SecurityProfile::vulnerable();
        p.secure_boot = true;
        let mut r = rig(p);
        assert_eq!(
            r.lock.reflash_and_reboot(droplock()),
            Err(ErrorCode::BootVerifyFailed)
        );
        assert_eq!(
            r.lock.installed_firmware().manifest.behavior,
            Behavior::Legitimate
        );
    }

    #[test]
    fn attestation_beacon() {
        let mut r = rig(SecurityProfile::hardened());
        let challenge = [7u8; 16];
        let reply = r.send(Command::AttestReq, challenge.to_vec());
        let att = Attestation::from_bytes(&reply.payload).unwrap();
        let ca = SigningKeyPair::from_seed([3; 32]).verification_key();
        assert!(att.verify(&ca, &challenge));
        assert!(!att.verify(&ca, &[8u8; 16]));
        assert_eq!(
            att.firmware_digest,
            r.catalog.factory_image().image_digest()
        );

        let mut r = rig(SecurityProfile::vulnerable());
        assert_eq!(
            err(&r.send(Command::AttestReq, challenge.to_vec())),
            Some(ErrorCode::AttestationUnavailable)
        );
    }

    #[test]
    fn response_opcodes_and_bad_frames() {
        let mut r = rig(SecurityProfile::vulnerable());
        let f = Frame::response(Command::Unlock, vec![]).unwrap();
        assert_eq!(
            err(&r.lock.handle_frame(&f)),
            Some(ErrorCode::UnknownOpcode)
        );
        let reply = decode_frame(&r.lock.handle_bytes(&[0xA5, 0x01, 0x00])).unwrap();
        assert_eq!(err(&reply), Some(ErrorCode::BadFrame));
    }
}
