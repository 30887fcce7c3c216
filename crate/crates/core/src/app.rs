//! The vendor's phone app: legitimate enrollment, unlock and FOTA flows.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::client::LockClient;
use crate::cloud::{
    handshake_reply, ApiCipher, ApiEnvelope, EnrollSessionGrant, FirmwareDownload, SessionKeyGrant,
    ROUTE_ENROLL_SESSION, ROUTE_ERROR, ROUTE_FIRMWARE_DOWNLOAD, ROUTE_FIRMWARE_META,
    ROUTE_HANDSHAKE, ROUTE_REGISTER, ROUTE_SESSION_KEY,
};
use crate::cryptobox::{derive_session_key, KeyAgreementKeyPair, Signature, SymmetricKey};
use crate::error::{ErrorCode, StepError};
use crate::firmware::{FirmwareMeta, FirmwarePackage};
use crate::lock::DeviceIdentity;
use crate::profile::{ApiEncryption, EnrollmentKey, Pinning, SecurityProfile};
use crate::transport::CloudLink;

/// What reverse engineering the shipped app reveals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppBinaryModel {
    pub embedded_static_key: SymmetricKey,
    pub factory_key: SymmetricKey,
    /// Pinning check in app bytecode; repacking can clear it.
    pub pinning_enforced: bool,
    /// Pinning inside the native TLS stack, out of reach of repacking.
    pub native_pinning: bool,
    pub api_encryption: ApiEncryption,
    pub enrollment_key: EnrollmentKey,
}

impl AppBinaryModel {
    pub fn official(
        profile: &SecurityProfile,
        static_key: SymmetricKey,
        factory_key: SymmetricKey,
    ) -> Self {
        Self {
            embedded_static_key: static_key,
            factory_key,
            pinning_enforced: true,
            native_pinning: profile.pinning == Pinning::Native,
            api_encryption: profile.api_encryption,
            enrollment_key: profile.enrollment_key,
        }
    }

    pub fn pins(&self) -> bool {
        self.pinning_enforced || self.native_pinning
    }
}

pub struct App {
    binary: AppBinaryModel,
    account: String,
    cloud: Box<dyn CloudLink>,
    api: Option<ApiCipher>,
    rng: ChaCha20Rng,
}

impl App {
    pub fn new(
        binary: AppBinaryModel,
        account: &str,
        cloud: Box<dyn CloudLink>,
        rng_seed: [u8; 32],
    ) -> Self {
        Self {
            binary,
            account: account.to_string(),
            cloud,
            api: None,
            rng: ChaCha20Rng::from_seed(rng_seed),
        }
    }

    pub fn binary(&self) -> &AppBinaryModel {
        &self.binary
    }

    pub fn account(&self) -> &str {
        &self.account
    }

    fn exchange(&mut self, env: &ApiEnvelope) -> Result<ApiEnvelope, ErrorCode> {
        if self.binary.pins() && !self.cloud.certificate_pinned() {
            return Err(ErrorCode::PinningBlocked);
        }
        let raw = self.cloud.call(&env.to_bytes())?;
        let reply = ApiEnvelope::from_bytes(&raw).ok_or(ErrorCode::UnexpectedResponse)?;
        if reply.route == ROUTE_ERROR {
            let code = std::str::from_utf8(&reply.body)
                .ok()
                .and_then(|s| s.parse().ok());
            return Err(code.unwrap_or(ErrorCode::UnexpectedResponse));
        }
        Ok(reply)
    }

    fn api(&mut self) -> Result<&mut ApiCipher, ErrorCode> {
        if self.api.is_none() {
            let cipher = match self.binary.api_encryption {
                ApiEncryption::StaticEcb => ApiCipher::Static(self.binary.embedded_static_key),
                ApiEncryption::DhGcm => {
                    let kp = KeyAgreementKeyPair::generate(&mut self.rng);
                    let reply = self.exchange(&ApiEnvelope {
                        route: ROUTE_HANDSHAKE.into(),
                        session_id: None,
                        body: kp.public_bytes().to_vec(),
                    })?;
                    handshake_reply(&kp, &reply.body)?
                }
            };
            self.api = Some(cipher);
        }
        Ok(self.api.as_mut().expect("just set"))
    }

    /// One API call: wrap, send, unwrap, decode. `{"error": CODE}` replies
    /// become errors.
    pub fn call<T: DeserializeOwned>(
        &mut self,
        route: &str,
        body: &impl Serialize,
    ) -> Result<T, ErrorCode> {
        let plaintext = serde_json::to_vec(body).expect("serializable");
        let env = self.api()?.wrap(route, &plaintext);
        let reply = self.exchange(&env)?;
        let pt = self.api()?.unwrap(&reply)?;
        let v: Value = serde_json::from_slice(&pt).map_err(|_| ErrorCode::UnexpectedResponse)?;
        if let Some(code) = v.get("error").and_then(Value::as_str) {
            return Err(code.parse().unwrap_or(ErrorCode::UnexpectedResponse));
        }
        serde_json::from_value(v).map_err(|_| ErrorCode::UnexpectedResponse)
    }

    /// Factory session, fresh identity, ENROLL, then cloud registration.
    pub fn enroll_flow(&mut self, lock: &mut LockClient) -> Result<DeviceIdentity, StepError> {
        let (nonce, serial) = lock.get_random().map_err(StepError::at("get_random"))?;
        let k = match self.binary.enrollment_key {
            EnrollmentKey::HardCoded => {
                derive_session_key(&self.binary.factory_key, &serial, &nonce)
            }
            EnrollmentKey::PerDevice => {
                let body = json!({"account": self.account, "serial": hex::encode(serial), "nonce": hex::encode(nonce)});
                let g: EnrollSessionGrant = self
                    .call(ROUTE_ENROLL_SESSION, &body)
                    .map_err(StepError::at("enroll_session"))?;
                g.session_key
            }
        };
        lock.session_init(k, &nonce, None)
            .map_err(StepError::at("session_init"))?;
        let identity = DeviceIdentity {
            serial: rand::Rng::gen(&mut self.rng),
            key: SymmetricKey::random(&mut self.rng),
        };
        lock.enroll(&identity).map_err(StepError::at("enroll"))?;
        let body = json!({"account": self.account, "serial": hex::encode(identity.serial), "key": identity.key});
        self.call::<Value>(ROUTE_REGISTER, &body)
            .map_err(StepError::at("register"))?;
        Ok(identity)
    }

    /// GET_RANDOM, cloud session key (and token), SESSION_INIT.
    pub fn open_session(&mut self, lock: &mut LockClient) -> Result<(), StepError> {
        let (nonce, serial) = lock.get_random().map_err(StepError::at("get_random"))?;
        let body = json!({"account": self.account, "serial": hex::encode(serial), "nonce": hex::encode(nonce)});
        let grant: SessionKeyGrant = self
            .call(ROUTE_SESSION_KEY, &body)
            .map_err(StepError::at("session_key"))?;
        let token = grant
            .token
            .as_deref()
            .map(|t| {
                hex::decode(t)
                    .ok()
                    .as_deref()
                    .and_then(Signature::from_slice)
            })
            .map(|t| t.ok_or(StepError::new("session_key", ErrorCode::UnexpectedResponse)))
            .transpose()?;
        lock.session_init(grant.session_key, &nonce, token.as_ref())
            .map_err(StepError::at("session_init"))?;
        Ok(())
    }

    pub fn unlock_flow(&mut self, lock: &mut LockClient) -> Result<bool, StepError> {
        self.open_session(lock)?;
        lock.unlock().map_err(StepError::at("unlock"))
    }

    pub fn enroll_finger_flow(
        &mut self,
        lock: &mut LockClient,
        victim: u64,
    ) -> Result<u16, StepError> {
        self.open_session(lock)?;
        lock.enroll_finger(victim)
            .map_err(StepError::at("enroll_finger"))
    }

    pub fn enter_dfu_flow(&mut self, lock: &mut LockClient) -> Result<(), StepError> {
        self.open_session(lock)?;
        lock.enter_dfu().map_err(StepError::at("enter_dfu"))
    }

    /// Fetches meta and package from the cloud, then pushes it over DFU.
    pub fn fota_flow(&mut self, lock: &mut LockClient, version: &str) -> Result<String, StepError> {
        let req = json!({ "version": version });
        let _meta: FirmwareMeta = self
            .call(ROUTE_FIRMWARE_META, &req)
            .map_err(StepError::at("firmware_meta"))?;
        let dl: FirmwareDownload = self
            .call(ROUTE_FIRMWARE_DOWNLOAD, &req)
            .map_err(StepError::at("firmware_download"))?;
        let pkg = FirmwarePackage::from_bytes(&dl.package)
            .map_err(|_| StepError::new("firmware_download", ErrorCode::UnexpectedResponse))?;
        self.enter_dfu_flow(lock)?;
        lock.send_package(&pkg)
            .map_err(StepError::at("dfu_receive"))
    }
}
