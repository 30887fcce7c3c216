//! Emulated vendor cloud: device registry, session-key service, firmware
//! distribution, and the payload envelope that wraps every API call.
//!
//! Envelope bytes: `route_len (u16 LE) || route || has_session (u8)
//! [|| session_id (u64 LE)] || body`. Bodies are JSON once unwrapped.
//!
//! * static ECB: `body = ecb_encrypt(static_key, json)`, no session id.
//! * DH + GCM: a `/handshake` (plaintext X25519 publics) yields a session id
//!   and key; then `body = counter (u64 LE) || gcm_seal(key,
//!   nonce(sender, counter), route || session_id || counter, json)`.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cryptobox::{
    derive_session_key, dh_handshake, ecb_decrypt, ecb_encrypt, gcm_open, gcm_seal, sign, GcmNonce,
    KeyAgreementKeyPair, Serial, SessionNonce, SigningKeyPair, SymmetricKey, PUBLIC_LEN,
};
use crate::error::ErrorCode;
use crate::firmware::{Catalog, FirmwareMeta, FirmwarePackage, IntegrityMeta};
use crate::lock::{token_message, DeviceIdentity};
use crate::profile::{ApiEncryption, DfuIntegrity, EnrollmentKey, SecurityProfile, SessionAuth};

pub const ROUTE_REGISTER: &str = "/register";
pub const ROUTE_SESSION_KEY: &str = "/session_key";
pub const ROUTE_ENROLL_SESSION: &str = "/enroll_session";
pub const ROUTE_FIRMWARE_META: &str = "/firmware/meta";
pub const ROUTE_FIRMWARE_DOWNLOAD: &str = "/firmware/download";
pub const ROUTE_HANDSHAKE: &str = "/handshake";
pub const ROUTE_ERROR: &str = "/error";

pub const CLIENT_ENDPOINT: u32 = 0x434C_4E54;
pub const SERVER_ENDPOINT: u32 = 0x5352_5652;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiEnvelope {
    pub route: String,
    pub session_id: Option<u64>,
    #[serde(with = "hex::serde")]
    pub body: Vec<u8>,
}

impl ApiEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.route.len() + 9 + self.body.len());
        out.extend_from_slice(&(self.route.len() as u16).to_le_bytes());
        out.extend_from_slice(self.route.as_bytes());
        match self.session_id {
            None => out.push(0),
            Some(id) => {
                out.push(1);
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let rlen = usize::from(u16::from_le_bytes(b.get(..2)?.try_into().ok()?));
        let route = std::str::from_utf8(b.get(2..2 + rlen)?).ok()?.to_string();
        let mut pos = 2 + rlen;
        let session_id = match *b.get(pos)? {
            0 => None,
            1 => {
                let id = u64::from_le_bytes(b.get(pos + 1..pos + 9)?.try_into().ok()?);
                pos += 8;
                Some(id)
            }
            _ => return None,
        };
        pos += 1;
        Some(Self {
            route,
            session_id,
            body: b[pos..].to_vec(),
        })
    }
}

/// One side's view of API payload protection.
#[derive(Clone, Debug)]
pub enum ApiCipher {
    Static(SymmetricKey),
    Session {
        id: u64,
        key: SymmetricKey,
        local: u32,
        remote: u32,
        sent: u64,
        received: u64,
    },
}

fn gcm_aad(route: &str, id: u64, counter: &[u8; 8]) -> Vec<u8> {
    let mut a = route.as_bytes().to_vec();
    a.extend_from_slice(&id.to_le_bytes());
    a.extend_from_slice(counter);
    a
}

impl ApiCipher {
    pub fn session(id: u64, key: SymmetricKey, local: u32, remote: u32) -> Self {
        ApiCipher::Session {
            id,
            key,
            local,
            remote,
            sent: 0,
            received: 0,
        }
    }

    pub fn wrap(&mut self, route: &str, plaintext: &[u8]) -> ApiEnvelope {
        match self {
            ApiCipher::Static(key) => ApiEnvelope {
                route: route.to_string(),
                session_id: None,
                body: ecb_encrypt(key, plaintext),
            },
            ApiCipher::Session {
                id,
                key,
                local,
                sent,
                ..
            } => {
                *sent += 1;
                let counter = sent.to_le_bytes();
                let nonce = GcmNonce::from_parts(*local, *sent);
                let mut body = counter.to_vec();
                body.extend(gcm_seal(
                    key,
                    &nonce,
                    &gcm_aad(route, *id, &counter),
                    plaintext,
                ));
                ApiEnvelope {
                    route: route.to_string(),
                    session_id: Some(*id),
                    body,
                }
            }
        }
    }

    pub fn unwrap(&mut self, env: &ApiEnvelope) -> Result<Vec<u8>, ErrorCode> {
        match self {
            ApiCipher::Static(key) => {
                ecb_decrypt(key, &env.body).map_err(|_| ErrorCode::DecryptFailed)
            }
            ApiCipher::Session {
                id,
                key,
                remote,
                received,
                ..
            } => {
                if env.session_id != Some(*id) {
                    return Err(ErrorCode::AuthFailed);
                }
                let counter: [u8; 8] = env
                    .body
                    .get(..8)
                    .and_then(|c| c.try_into().ok())
                    .ok_or(ErrorCode::AuthFailed)?;
                let n = u64::from_le_bytes(counter);
                if n <= *received {
                    return Err(ErrorCode::AuthFailed);
                }
                let nonce = GcmNonce::from_parts(*remote, n);
                let pt = gcm_open(
                    key,
                    &nonce,
                    &gcm_aad(&env.route, *id, &counter),
                    &env.body[8..],
                )
                .map_err(|_| ErrorCode::AuthFailed)?;
                *received = n;
                Ok(pt)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub identity: DeviceIdentity,
    pub registered_owner: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub account: String,
    #[serde(with = "hex::serde")]
    pub serial: Serial,
    pub key: SymmetricKey,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionKeyRequest {
    pub account: String,
    #[serde(with = "hex::serde")]
    pub serial: Serial,
    #[serde(with = "hex::serde")]
    pub nonce: SessionNonce,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionKeyGrant {
    #[serde(with = "hex::serde")]
    pub serial: Serial,
    pub session_key: SymmetricKey,
    /// The device key travels back too; the app never uses it.
    pub device_key: SymmetricKey,
    /// Cloud authorization for `serial || nonce`, present under mutual auth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnrollSessionGrant {
    pub session_key: SymmetricKey,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FirmwareRequest {
    pub version: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FirmwareDownload {
    #[serde(with = "hex::serde")]
    pub package: Vec<u8>,
}

/// Everything the vendor configures its cloud with.
#[derive(Clone, Debug)]
pub struct CloudConfig {
    pub profile: SecurityProfile,
    pub static_key: SymmetricKey,
    pub factory_key: SymmetricKey,
    pub token_signer: SigningKeyPair,
    /// Per-device enrollment keys from manufacturing, by manufacturing serial.
    pub enrollment_keys: HashMap<Serial, SymmetricKey>,
    pub catalog: Catalog,
    pub rng_seed: [u8; 32],
}

struct CloudState {
    registry: BTreeMap<Serial, DeviceRecord>,
    sessions: HashMap<u64, ApiCipher>,
    rng: ChaCha20Rng,
}

pub struct Cloud {
    profile: SecurityProfile,
    static_key: SymmetricKey,
    factory_key: SymmetricKey,
    token_signer: SigningKeyPair,
    enrollment_keys: HashMap<Serial, SymmetricKey>,
    catalog: Catalog,
    online: AtomicBool,
    state: Mutex<CloudState>,
}

impl std::fmt::Debug for Cloud {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cloud")
            .field("registry", &self.registry_len())
            .field("online", &self.is_online())
            .finish_non_exhaustive()
    }
}

fn body_json<T: DeserializeOwned>(body: &[u8]) -> Result<T, ErrorCode> {
    serde_json::from_slice(body).map_err(|_| ErrorCode::BadRequest)
}

impl Cloud {
    pub fn new(c: CloudConfig) -> Self {
        Self {
            profile: c.profile,
            static_key: c.static_key,
            factory_key: c.factory_key,
            token_signer: c.token_signer,
            enrollment_keys: c.enrollment_keys,
            catalog: c.catalog,
            online: AtomicBool::new(true),
            state: Mutex::new(CloudState {
                registry: BTreeMap::new(),
                sessions: HashMap::new(),
                rng: ChaCha20Rng::from_seed(c.rng_seed),
            }),
        }
    }

    pub fn is_online(&self) -> bool {
        self.online.load(Ordering::SeqCst)
    }

    pub fn set_online(&self, online: bool) {
        self.online.store(online, Ordering::SeqCst)
    }

    pub fn registry_len(&self) -> usize {
        self.state.lock().expect("cloud state").registry.len()
    }

    pub fn record(&self, serial: &Serial) -> Option<DeviceRecord> {
        self.state
            .lock()
            .expect("cloud state")
            .registry
            .get(serial)
            .cloned()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn register_device(
        &self,
        account: &str,
        serial: Serial,
        key: SymmetricKey,
    ) -> Result<(), ErrorCode> {
        let mut st = self.state.lock().expect("cloud state");
        if st.registry.contains_key(&serial) {
            return Err(ErrorCode::AlreadyRegistered);
        }
        st.registry.insert(
            serial,
            DeviceRecord {
                identity: DeviceIdentity { serial, key },
                registered_owner: Some(account.to_string()),
            },
        );
        Ok(())
    }

    pub fn request_session_key(
        &self,
        account: &str,
        serial: Serial,
        nonce: SessionNonce,
    ) -> Result<SessionKeyGrant, ErrorCode> {
        let record = self.record(&serial).ok_or(ErrorCode::NotRegistered)?;
        if record.registered_owner.as_deref() != Some(account) {
            return Err(ErrorCode::NotOwner);
        }
        let key = record.identity.key;
        let token = (self.profile.session_auth == SessionAuth::MutualAuth).then(|| {
            hex::encode(sign(&self.token_signer, &token_message(&serial, &nonce)).as_bytes())
        });
        Ok(SessionKeyGrant {
            serial,
            session_key: derive_session_key(&key, &serial, &nonce),
            device_key: key,
            token,
        })
    }

    /// Session key for the first (enrollment) session of a fresh lock.
    pub fn enroll_session_key(
        &self,
        serial: Serial,
        nonce: SessionNonce,
    ) -> Result<SymmetricKey, ErrorCode> {
        let key = match self.profile.enrollment_key {
            EnrollmentKey::HardCoded => self.factory_key,
            EnrollmentKey::PerDevice => *self
                .enrollment_keys
                .get(&serial)
                .ok_or(ErrorCode::NotRegistered)?,
        };
        Ok(derive_session_key(&key, &serial, &nonce))
    }

    pub fn get_firmware(
        &self,
        version: &str,
    ) -> Result<(FirmwarePackage, FirmwareMeta), ErrorCode> {
        let pkg = self.catalog.get(version).ok_or(ErrorCode::NoSuchVersion)?;
        let integrity = match self.profile.dfu_integrity {
            DfuIntegrity::Crc16 => IntegrityMeta::Crc16 {
                crc16: format!("{:04x}", pkg.crc16),
            },
            DfuIntegrity::Signature => {
                let sig = pkg.signature.as_ref().ok_or(ErrorCode::NoSuchVersion)?;
                IntegrityMeta::Signature {
                    signature: hex::encode(sig.signature.as_bytes()),
                    key_id: sig.key_id.clone(),
                }
            }
        };
        let meta = FirmwareMeta {
            version: pkg.manifest.version.clone(),
            behavior: pkg.manifest.behavior,
            integrity,
        };
        Ok((pkg.clone(), meta))
    }

    fn route(&self, route: &str, body: &[u8]) -> Result<Value, ErrorCode> {
        match route {
            ROUTE_REGISTER => {
                let r: RegisterRequest = body_json(body)?;
                self.register_device(&r.account, r.serial, r.key)?;
                Ok(json!({ "ok": true }))
            }
            ROUTE_SESSION_KEY => {
                let r: SessionKeyRequest = body_json(body)?;
                let grant = self.request_session_key(&r.account, r.serial, r.nonce)?;
                Ok(serde_json::to_value(grant).expect("serializable"))
            }
            ROUTE_ENROLL_SESSION => {
                let r: SessionKeyRequest = body_json(body)?;
                if self.record(&r.serial).is_some() {
                    return Err(ErrorCode::AlreadyRegistered);
                }
                let session_key = self.enroll_session_key(r.serial, r.nonce)?;
                Ok(serde_json::to_value(EnrollSessionGrant { session_key }).expect("serializable"))
            }
            ROUTE_FIRMWARE_META => {
                let r: FirmwareRequest = body_json(body)?;
                Ok(serde_json::to_value(self.get_firmware(&r.version)?.1).expect("serializable"))
            }
            ROUTE_FIRMWARE_DOWNLOAD => {
                let r: FirmwareRequest = body_json(body)?;
                let package = self.get_firmware(&r.version)?.0.to_bytes();
                Ok(serde_json::to_value(FirmwareDownload { package }).expect("serializable"))
            }
            _ => Err(ErrorCode::BadRequest),
        }
    }

    fn handshake(&self, client_public: &[u8]) -> Result<ApiEnvelope, ErrorCode> {
        let mut st = self.state.lock().expect("cloud state");
        let kp = KeyAgreementKeyPair::generate(&mut st.rng);
        let key = dh_handshake(&kp, client_public).map_err(|_| ErrorCode::BadRequest)?;
        let id = st.rng.next_u64();
        st.sessions.insert(
            id,
            ApiCipher::session(id, key, SERVER_ENDPOINT, CLIENT_ENDPOINT),
        );
        let mut body = id.to_le_bytes().to_vec();
        body.extend_from_slice(&kp.public_bytes());
        Ok(ApiEnvelope {
            route: ROUTE_HANDSHAKE.into(),
            session_id: None,
            body,
        })
    }

    fn error_envelope(code: ErrorCode) -> Vec<u8> {
        ApiEnvelope {
            route: ROUTE_ERROR.into(),
            session_id: None,
            body: code.as_str().as_bytes().to_vec(),
        }
        .to_bytes()
    }

    /// Serves one serialized envelope.
    pub fn handle(&self, request: &[u8]) -> Vec<u8> {
        let Some(env) = ApiEnvelope::from_bytes(request) else {
            return Self::error_envelope(ErrorCode::BadRequest);
        };
        if env.route == ROUTE_HANDSHAKE {
            return match self.handshake(&env.body) {
                Ok(e) => e.to_bytes(),
                Err(code) => Self::error_envelope(code),
            };
        }
        let mut cipher = match (self.profile.api_encryption, env.session_id) {
            (ApiEncryption::StaticEcb, None) => ApiCipher::Static(self.static_key),
            (ApiEncryption::DhGcm, Some(id)) => {
                match self.state.lock().expect("cloud state").sessions.get(&id) {
                    Some(c) => c.clone(),
                    None => return Self::error_envelope(ErrorCode::AuthFailed),
                }
            }
            (ApiEncryption::StaticEcb, Some(_)) => {
                return Self::error_envelope(ErrorCode::BadRequest)
            }
            (ApiEncryption::DhGcm, None) => return Self::error_envelope(ErrorCode::AuthFailed),
        };
        let plaintext = match cipher.unwrap(&env) {
            Ok(p) => p,
            Err(code) => return Self::error_envelope(code),
        };
        let reply = match self.route(&env.route, &plaintext) {
            Ok(v) => v,
            Err(code) => json!({ "error": code }),
        };
        let out = cipher.wrap(&env.route, reply.to_string().as_bytes());
        if let (ApiCipher::Session { id, .. }, Some(_)) = (&cipher, env.session_id) {
            self.state
                .lock()
                .expect("cloud state")
                .sessions
                .insert(*id, cipher.clone());
        }
        out.to_bytes()
    }
}

/// Client half of `/handshake`: returns the body to send and, given the
/// reply body, the session cipher.
pub fn handshake_reply(
    local: &KeyAgreementKeyPair,
    reply_body: &[u8],
) -> Result<ApiCipher, ErrorCode> {
    if reply_body.len() != 8 + PUBLIC_LEN {
        return Err(ErrorCode::UnexpectedResponse);
    }
    let id = u64::from_le_bytes(reply_body[..8].try_into().expect("length checked"));
    let key = dh_handshake(local, &reply_body[8..]).map_err(|_| ErrorCode::AuthFailed)?;
    Ok(ApiCipher::session(
        id,
        key,
        CLIENT_ENDPOINT,
        SERVER_ENDPOINT,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config;

    fn cloud(profile: SecurityProfile) -> Cloud {
        let signer = SigningKeyPair::from_seed([5; 32]);
        Cloud::new(CloudConfig {
            profile,
            static_key: config::api_static_key(),
            factory_key: config::factory_key(),
            token_signer: SigningKeyPair::from_seed([6; 32]),
            enrollment_keys: HashMap::new(),
            catalog: Catalog::builtin(&signer),
            rng_seed: [1; 32],
        })
    }

    fn client(c: &Cloud, profile: SecurityProfile) -> ApiCipher {
        match profile.api_encryption {
            ApiEncryption::StaticEcb => ApiCipher::Static(config::api_static_key()),
            ApiEncryption::DhGcm => {
                let kp = KeyAgreementKeyPair::from_seed([8; 32]);
                let req = ApiEnvelope {
                    route: ROUTE_HANDSHAKE.into(),
                    session_id: None,
                    body: kp.public_bytes().to_vec(),
                };
                let reply = ApiEnvelope::from_bytes(&c.handle(&req.to_bytes())).unwrap();
                handshake_reply(&kp, &reply.body).unwrap()
            }
        }
    }

    fn call(c: &Cloud, cipher: &mut ApiCipher, route: &str, body: Value) -> Value {
        let env = cipher.wrap(route, body.to_string().as_bytes());
        let reply = ApiEnvelope::from_bytes(&c.handle(&env.to_bytes())).unwrap();
        assert_ne!(
            reply.route,
            ROUTE_ERROR,
            "{:?}",
            String::from_utf8_lossy(&reply.body)
        );
        serde_json::from_slice(&cipher.unwrap(&reply).unwrap()).unwrap()
    }

    #[test]
    fn envelope_round_trip() {
        for sid in [None, Some(0xDEAD_BEEF_u64)] {
            let e = ApiEnvelope {
                route: "/x".into(),
                session_id: sid,
                body: vec![1, 2, 3],
            };
            assert_eq!(ApiEnvelope::from_bytes(&e.to_bytes()).unwrap(), e);
        }
        assert_eq!(
            ApiEnvelope {
                route: "/r".into(),
                session_id: None,
                body: vec![9]
            }
            .to_bytes(),
            [2, 0, b'/', b'r', 0, 9]
        );
    }

    #[test]
    fn static_mode_is_deterministic_session_mode_is_not() {
        let mut s = ApiCipher::Static(config::api_static_key());
        let a = s.wrap("/register", b"same body");
        let b = s.wrap("/register", b"same body");
        assert_eq!(a.body, b.body);
        assert_eq!(a.body.len() % 16, 0);

        let k = SymmetricKey::from_bytes([4; 16]);
        let mut c = ApiCipher::session(7, k, CLIENT_ENDPOINT, SERVER_ENDPOINT);
        let mut srv = ApiCipher::session(7, k, SERVER_ENDPOINT, CLIENT_ENDPOINT);
        let a = c.wrap("/register", b"same body");
        let b = c.wrap("/register", b"same body");
        assert_ne!(a.body, b.body);
        assert_eq!(srv.unwrap(&a).unwrap(), b"same body");
        assert_eq!(srv.unwrap(&b).unwrap(), b"same body");
        assert_eq!(srv.unwrap(&a), Err(ErrorCode::AuthFailed), "replay");
    }

    #[test]
    fn registry_and_session_keys() {
        for profile in [SecurityProfile::vulnerable(), SecurityProfile::hardened()] {
            let c = cloud(profile);
            let mut cipher = client(&c, profile);
            let id = DeviceIdentity {
                serial: [1; 8],
                key: SymmetricKey::from_bytes([2; 16]),
            };
            let reg = json!({"account": "alice", "serial": hex::encode(id.serial), "key": id.key});
            assert_eq!(
                call(&c, &mut cipher, ROUTE_REGISTER, reg.clone())["ok"],
                true
            );
            assert_eq!(
                call(&c, &mut cipher, ROUTE_REGISTER, reg)["error"],
                "ALREADY_REGISTERED"
            );
            let nonce = [3u8; 16];
            let req = |acct: &str, serial: Serial| json!({"account": acct, "serial": hex::encode(serial), "nonce": hex::encode(nonce)});
            let grant: SessionKeyGrant = serde_json::from_value(call(
                &c,
                &mut cipher,
                ROUTE_SESSION_KEY,
                req("alice", id.serial),
            ))
            .unwrap();
            assert_eq!(
                grant.session_key,
                derive_session_key(&id.key, &id.serial, &nonce)
            );
            assert_eq!(
                grant.token.is_some(),
                profile.session_auth == SessionAuth::MutualAuth
            );
            assert_eq!(
                call(
                    &c,
                    &mut cipher,
                    ROUTE_SESSION_KEY,
                    req("mallory", id.serial)
                )["error"],
                "NOT_OWNER"
            );
            assert_eq!(
                call(&c, &mut cipher, ROUTE_SESSION_KEY, req("alice", [9; 8]))["error"],
                "NOT_REGISTERED"
            );
            assert_eq!(c.registry_len(), 1);
        }
    }

    #[test]
    fn firmware_meta_follows_profile() {
        let c = cloud(SecurityProfile::vulnerable());
        let (pkg, meta) = c.get_firmware("1.0.0").unwrap();
        assert_eq!(
            meta.integrity,
            IntegrityMeta::Crc16 {
                crc16: format!("{:04x}", crate::wire::crc16(&pkg.image))
            }
        );
        let c = cloud(SecurityProfile::hardened());
        assert!(matches!(
            c.get_firmware("1.0.0").unwrap().1.integrity,
            IntegrityMeta::Signature { .. }
        ));
        assert_eq!(
            c.get_firmware("0.0.1").unwrap_err(),
            ErrorCode::NoSuchVersion
        );
    }

    #[test]
    fn hardened_cloud_refuses_static_envelopes() {
        let c = cloud(SecurityProfile::hardened());
        let mut s = ApiCipher::Static(config::api_static_key());
        let env = s.wrap(ROUTE_FIRMWARE_META, br#"{"version":"1.0.0"}"#);
        let reply = ApiEnvelope::from_bytes(&c.handle(&env.to_bytes())).unwrap();
        assert_eq!(reply.route, ROUTE_ERROR);
        assert_eq!(reply.body, b"AUTH_FAILED");
    }

    #[test]
    fn static_key_holder_reads_everything_session_key_holder_reads_one_session() {
        let c = cloud(SecurityProfile::hardened());
        let mut a = client(&c, SecurityProfile::hardened());
        let kp = KeyAgreementKeyPair::from_seed([9; 32]);
        let req = ApiEnvelope {
            route: ROUTE_HANDSHAKE.into(),
            session_id: None,
            body: kp.public_bytes().to_vec(),
        };
        let reply = ApiEnvelope::from_bytes(&c.handle(&req.to_bytes())).unwrap();
        let mut b = handshake_reply(&kp, &reply.body).unwrap();
        let ea = a.wrap(ROUTE_FIRMWARE_META, b"{}");
        let eb = b.wrap(ROUTE_FIRMWARE_META, b"{}");
        let ApiCipher::Session { id, key, .. } = &a else {
            panic!()
        };
        let mut observer = ApiCipher::session(*id, *key, SERVER_ENDPOINT, CLIENT_ENDPOINT);
        assert!(observer.unwrap(&ea).is_ok());
        assert!(observer.unwrap(&eb).is_err());
    }
}
