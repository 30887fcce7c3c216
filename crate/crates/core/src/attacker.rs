//! Attacker toolkit: API interception, key extraction, offline enrollment
//! and sessions, forged DFU, broadcast harvesting and physical attacks.
//!
//! Nothing here reads lock or cloud internals. The attacker works from wire
//! frames, API envelopes, broadcast records, the reversed app binary and the
//! documented factory key.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::app::AppBinaryModel;
use crate::broadcast::{BroadcastChannel, BroadcastListener};
use crate::client::LockClient;
use crate::cloud::{ApiEnvelope, SessionKeyGrant, ROUTE_ERROR, ROUTE_HANDSHAKE, ROUTE_SESSION_KEY};
use crate::cryptobox::{
    derive_session_key, ecb_decrypt, Serial, SigningKeyPair, SymmetricKey, BLOCK_LEN,
};
use crate::error::{ErrorCode, StepError};
use crate::firmware::{Behavior, FirmwarePackage, Manifest};
use crate::lock::{DebugDump, DeviceIdentity, Lock, LockProvisioning, PhysicalAccess};
use crate::profile::SecurityProfile;
use crate::sensor::FingerprintImage;
use crate::session::SessionMode;
use crate::transport::CloudLink;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Request,
    Response,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapturedEnvelope {
    pub direction: Direction,
    pub envelope: ApiEnvelope,
}

/// Envelopes seen by the proxy, in the order they crossed it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapturedTraffic {
    records: Vec<CapturedEnvelope>,
}

impl CapturedTraffic {
    pub fn push(&mut self, direction: Direction, envelope: ApiEnvelope) {
        self.records.push(CapturedEnvelope {
            direction,
            envelope,
        });
    }

    pub fn records(&self) -> &[CapturedEnvelope] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub type CaptureLog = Arc<Mutex<CapturedTraffic>>;

/// A proxy between an app and the cloud that records every envelope.
///
/// As a MitM it presents its own certificate, which a pinning app refuses.
/// As a passive tap it relays the vendor's certificate unchanged.
pub struct InterceptingProxy {
    inner: Box<dyn CloudLink>,
    log: CaptureLog,
    presents_vendor_certificate: bool,
}

impl InterceptingProxy {
    pub fn mitm(inner: Box<dyn CloudLink>) -> (Self, CaptureLog) {
        Self::build(inner, false)
    }

    pub fn tap(inner: Box<dyn CloudLink>) -> (Self, CaptureLog) {
        Self::build(inner, true)
    }

    fn build(inner: Box<dyn CloudLink>, presents_vendor_certificate: bool) -> (Self, CaptureLog) {
        let log = CaptureLog::default();
        (
            Self {
                inner,
                log: log.clone(),
                presents_vendor_certificate,
            },
            log,
        )
    }

    fn record(&self, direction: Direction, bytes: &[u8]) {
        if let Some(env) = ApiEnvelope::from_bytes(bytes) {
            self.log.lock().expect("capture log").push(direction, env);
        }
    }
}

impl CloudLink for InterceptingProxy {
    fn call(&mut self, envelope: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        self.record(Direction::Request, envelope);
        let reply = self.inner.call(envelope)?;
        self.record(Direction::Response, &reply);
        Ok(reply)
    }

    fn certificate_pinned(&self) -> bool {
        self.presents_vendor_certificate
    }
}

/// Repacks the app with its bytecode pinning check removed.
pub fn patch_app_pinning(app: &AppBinaryModel) -> AppBinaryModel {
    AppBinaryModel {
        pinning_enforced: false,
        ..app.clone()
    }
}

pub fn extract_static_key(app: &AppBinaryModel) -> SymmetricKey {
    app.embedded_static_key
}

/// A 16-byte ciphertext block seen more than once, with every position
/// as (record index, block index).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRepetition {
    pub block: String,
    pub positions: Vec<(usize, usize)>,
}

pub fn repetition_report(traffic: &CapturedTraffic) -> Vec<BlockRepetition> {
    let mut seen: BTreeMap<[u8; BLOCK_LEN], Vec<(usize, usize)>> = BTreeMap::new();
    for (i, rec) in traffic.records().iter().enumerate() {
        for (j, block) in rec.envelope.body.chunks_exact(BLOCK_LEN).enumerate() {
            seen.entry(block.try_into().expect("exact chunk"))
                .or_default()
                .push((i, j));
        }
    }
    seen.into_iter()
        .filter(|(_, p)| p.len() > 1)
        .map(|(b, positions)| BlockRepetition {
            block: hex::encode(b),
            positions,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub direction: Direction,
    pub route: String,
    pub plaintext: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecryptedTraffic {
    pub transcripts: Vec<Transcript>,
    pub repetitions: Vec<BlockRepetition>,
}

/// Opens a capture with the static API key. Session-protected traffic, or
/// anything the key does not open, fails with DECRYPT_FAILED.
pub fn decrypt_captured(
    traffic: &CapturedTraffic,
    key: &SymmetricKey,
) -> Result<DecryptedTraffic, ErrorCode> {
    let mut transcripts = Vec::new();
    for rec in traffic.records() {
        let env = &rec.envelope;
        if env.route == ROUTE_ERROR {
            continue;
        }
        if env.session_id.is_some() || env.route == ROUTE_HANDSHAKE {
            return Err(ErrorCode::DecryptFailed);
        }
        let pt = ecb_decrypt(key, &env.body).map_err(|_| ErrorCode::DecryptFailed)?;
        let plaintext = String::from_utf8(pt).map_err(|_| ErrorCode::DecryptFailed)?;
        transcripts.push(Transcript {
            direction: rec.direction,
            route: env.route.clone(),
            plaintext,
        });
    }
    Ok(DecryptedTraffic {
        transcripts,
        repetitions: repetition_report(traffic),
    })
}

/// Device identities leaked by decrypted `/session_key` responses.
pub fn recover_identities(decrypted: &DecryptedTraffic) -> Vec<DeviceIdentity> {
    let mut out: Vec<DeviceIdentity> = Vec::new();
    for t in &decrypted.transcripts {
        if t.direction != Direction::Response || t.route != ROUTE_SESSION_KEY {
            continue;
        }
        if let Ok(g) = serde_json::from_str::<SessionKeyGrant>(&t.plaintext) {
            let id = DeviceIdentity {
                serial: g.serial,
                key: g.device_key,
            };
            if !out.contains(&id) {
                out.push(id);
            }
        }
    }
    out
}

/// Package claiming droplock behaviour, protected only by a fresh CRC.
pub fn forge_dfu(image: &[u8], version: &str) -> FirmwarePackage {
    FirmwarePackage::with_crc(
        Manifest {
            version: version.to_string(),
            behavior: Behavior::Droplock,
        },
        image.to_vec(),
    )
}

pub fn harvest_listen(listener: &mut BroadcastListener) -> Vec<FingerprintImage> {
    listener.drain()
}

pub fn physical_dump(access: &PhysicalAccess) -> Result<DebugDump, ErrorCode> {
    access.debug_dump()
}

/// Desolders the flash, writes `pkg`, and powers the lock back up.
pub fn chip_off_flash(access: &PhysicalAccess, pkg: FirmwarePackage) -> Result<(), ErrorCode> {
    access.reflash_and_reboot(pkg)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployLog {
    pub identity: DeviceIdentity,
    pub installed_version: String,
}

pub struct Attacker {
    factory_key: SymmetricKey,
    rng: ChaCha20Rng,
}

impl Attacker {
    pub fn new(factory_key: SymmetricKey, rng_seed: [u8; 32]) -> Self {
        Self {
            factory_key,
            rng: ChaCha20Rng::from_seed(rng_seed),
        }
    }

    pub fn factory_key(&self) -> SymmetricKey {
        self.factory_key
    }

    pub fn choose_identity(&mut self) -> DeviceIdentity {
        DeviceIdentity {
            serial: self.rng.gen(),
            key: SymmetricKey::random(&mut self.rng),
        }
    }

    /// Factory-key session on a fresh lock, then ENROLL with an identity
    /// the attacker picked. The cloud never hears about it.
    pub fn offline_enroll(
        &mut self,
        lock: &mut LockClient,
        serial: Serial,
        key: SymmetricKey,
    ) -> Result<DeviceIdentity, StepError> {
        let (nonce, lock_serial) = lock.get_random().map_err(StepError::at("get_random"))?;
        let k = derive_session_key(&self.factory_key, &lock_serial, &nonce);
        lock.session_init(k, &nonce, None)
            .map_err(StepError::at("session_init"))?;
        let identity = DeviceIdentity { serial, key };
        lock.enroll(&identity).map_err(StepError::at("enroll"))?;
        Ok(identity)
    }

    /// Derives the session key locally from a known identity.
    pub fn offline_session(
        &mut self,
        lock: &mut LockClient,
        identity: &DeviceIdentity,
    ) -> Result<SessionMode, StepError> {
        let (nonce, _) = lock.get_random().map_err(StepError::at("get_random"))?;
        let k = derive_session_key(&identity.key, &identity.serial, &nonce);
        lock.session_init(k, &nonce, None)
            .map_err(StepError::at("session_init"))
    }

    /// offline_enroll, offline_session, ENTER_DFU, forged package, DFU.
    pub fn deploy_droplock(
        &mut self,
        lock: &mut LockClient,
        image: &[u8],
        version: &str,
    ) -> Result<DeployLog, StepError> {
        let chosen = self.choose_identity();
        let identity = self.offline_enroll(lock, chosen.serial, chosen.key)?;
        self.offline_session(lock, &identity)?;
        lock.enter_dfu().map_err(StepError::at("enter_dfu"))?;
        let pkg = forge_dfu(image, version);
        let installed_version = lock
            .send_package(&pkg)
            .map_err(StepError::at("dfu_receive"))?;
        Ok(DeployLog {
            identity,
            installed_version,
        })
    }

    /// A look-alike lock built from scratch: attacker keys, no attestation,
    /// touch wake, raw-image sensor and droplock firmware.
    pub fn build_impostor(
        &mut self,
        image: &[u8],
        version: &str,
        broadcast: BroadcastChannel,
    ) -> Lock {
        let own = SigningKeyPair::generate(&mut self.rng);
        let provisioning = LockProvisioning {
            profile: SecurityProfile::vulnerable(),
            manufacturing_serial: self.rng.gen(),
            factory_key: self.factory_key,
            enrollment_key: SymmetricKey::random(&mut self.rng),
            cloud_token_key: own.verification_key(),
            firmware_trust: own.verification_key(),
            attestation: None,
            firmware: forge_dfu(image, version),
            sensor_wrap_key: SymmetricKey::random(&mut self.rng),
            rng_seed: self.rng.gen(),
        };
        Lock::new(provisioning, broadcast)
    }
}
