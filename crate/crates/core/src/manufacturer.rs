//! The vendor's key material and production line.
//!
//! Every secret is drawn from one seeded ChaCha20 stream so a whole
//! ecosystem can be rebuilt bit-for-bit from a seed.

use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::app::AppBinaryModel;
use crate::cloud::CloudConfig;
use crate::config;
use crate::cryptobox::{sign, Serial, SigningKeyPair, SymmetricKey, VerificationKey};
use crate::firmware::Catalog;
use crate::lock::{AttestationCredential, LockProvisioning};
use crate::profile::SecurityProfile;

pub struct Manufacturer {
    firmware_signer: SigningKeyPair,
    device_ca: SigningKeyPair,
    cloud_token_signer: SigningKeyPair,
    factory_key: SymmetricKey,
    static_key: SymmetricKey,
    catalog: Catalog,
    enrollment_keys: HashMap<Serial, SymmetricKey>,
    rng: ChaCha20Rng,
}

impl std::fmt::Debug for Manufacturer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Manufacturer")
            .field("firmware_key", &self.firmware_signer.verification_key())
            .field("ca", &self.device_ca.verification_key())
            .finish_non_exhaustive()
    }
}

/// Firmware signing key for a seed; what `locklab dfu` signs with.
pub fn firmware_signer_for_seed(seed: u64) -> SigningKeyPair {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    SigningKeyPair::generate(&mut rng)
}

impl Manufacturer {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let firmware_signer = SigningKeyPair::generate(&mut rng);
        let device_ca = SigningKeyPair::generate(&mut rng);
        let cloud_token_signer = SigningKeyPair::generate(&mut rng);
        let catalog = Catalog::builtin(&firmware_signer);
        Self {
            firmware_signer,
            device_ca,
            cloud_token_signer,
            factory_key: config::factory_key(),
            static_key: config::api_static_key(),
            catalog,
            enrollment_keys: HashMap::new(),
            rng,
        }
    }

    pub fn firmware_key(&self) -> VerificationKey {
        self.firmware_signer.verification_key()
    }

    pub fn ca_key(&self) -> VerificationKey {
        self.device_ca.verification_key()
    }

    pub fn firmware_signer(&self) -> &SigningKeyPair {
        &self.firmware_signer
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn factory_key(&self) -> SymmetricKey {
        self.factory_key
    }

    pub fn next_seed(&mut self) -> [u8; 32] {
        let mut s = [0u8; 32];
        self.rng.fill_bytes(&mut s);
        s
    }

    /// Builds one lock: fresh manufacturing serial, per-device enrollment
    /// key, certified attestation key, factory firmware.
    pub fn provision_lock(&mut self, profile: SecurityProfile) -> LockProvisioning {
        let manufacturing_serial: Serial = self.rng.gen();
        let enrollment_key = SymmetricKey::random(&mut self.rng);
        let device = SigningKeyPair::generate(&mut self.rng);
        let certificate = sign(&self.device_ca, device.verification_key().as_bytes());
        self.enrollment_keys
            .insert(manufacturing_serial, enrollment_key);
        LockProvisioning {
            profile,
            manufacturing_serial,
            factory_key: self.factory_key,
            enrollment_key,
            cloud_token_key: self.cloud_token_signer.verification_key(),
            firmware_trust: self.firmware_signer.verification_key(),
            attestation: Some(AttestationCredential {
                signing: device,
                certificate,
            }),
            firmware: self.catalog.factory_image().clone(),
            sensor_wrap_key: SymmetricKey::random(&mut self.rng),
            rng_seed: self.next_seed(),
        }
    }

    pub fn cloud_config(&mut self, profile: SecurityProfile) -> CloudConfig {
        CloudConfig {
            profile,
            static_key: self.static_key,
            factory_key: self.factory_key,
            token_signer: self.cloud_token_signer.clone(),
            enrollment_keys: self.enrollment_keys.clone(),
            catalog: self.catalog.clone(),
            rng_seed: self.next_seed(),
        }
    }

    pub fn app_binary(&self, profile: &SecurityProfile) -> AppBinaryModel {
        AppBinaryModel::official(profile, self.static_key, self.factory_key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cryptobox::verify;

    #[test]
    fn seeded_and_certified() {
        let mut a = Manufacturer::from_seed(3);
        let mut b = Manufacturer::from_seed(3);
        let pa = a.provision_lock(SecurityProfile::hardened());
        let pb = b.provision_lock(SecurityProfile::hardened());
        assert_eq!(pa.manufacturing_serial, pb.manufacturing_serial);
        assert_eq!(pa.enrollment_key, pb.enrollment_key);
        let cred = pa.attestation.unwrap();
        assert!(verify(
            &a.ca_key(),
            cred.signing.verification_key().as_bytes(),
            &cred.certificate
        ));
        assert_eq!(
            firmware_signer_for_seed(3).verification_key(),
            a.firmware_key()
        );
        let other = a.provision_lock(SecurityProfile::hardened());
        assert_ne!(other.manufacturing_serial, pa.manufacturing_serial);
    }
}
