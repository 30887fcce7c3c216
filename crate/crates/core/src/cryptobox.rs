//! Cryptographic primitives for both profiles.
//!
//! The vulnerable profile uses AES-128-ECB with PKCS#7 padding and the
//! HMAC-SHA-256 session KDF. The hardened profile adds AES-128-GCM, X25519 key
//! agreement and Ed25519 signatures.

use std::fmt;

use aes::cipher::{generic_array::GenericArray, BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use aes_gcm::aead::{Aead, Payload};
use aes_gcm::Aes128Gcm;
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

pub const KEY_LEN: usize = 16;
pub const BLOCK_LEN: usize = 16;
pub const TAG_LEN: usize = 16;
pub const GCM_NONCE_LEN: usize = 12;
pub const SERIAL_LEN: usize = 8;
pub const NONCE_LEN: usize = 16;
pub const PUBLIC_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

pub type Serial = [u8; SERIAL_LEN];
pub type SessionNonce = [u8; NONCE_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("ciphertext length is not a positive multiple of the block size")]
    BadLength,
    #[error("invalid PKCS#7 padding")]
    BadPadding,
    #[error("authentication failed")]
    AuthFailed,
    #[error("invalid public key")]
    InvalidPublic,
    #[error("key material has the wrong length")]
    BadKeyLength,
}

/// 128-bit AES key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SymmetricKey([u8; KEY_LEN]);

impl SymmetricKey {
    pub const fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::BadKeyLength)?;
        Ok(Self(arr))
    }

    pub fn from_hex(text: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(text.trim()).map_err(|_| CryptoError::BadKeyLength)?;
        Self::from_slice(&bytes)
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricKey({})", self.to_hex())
    }
}

impl From<SymmetricKey> for String {
    fn from(key: SymmetricKey) -> Self {
        key.to_hex()
    }
}

impl TryFrom<String> for SymmetricKey {
    type Error = CryptoError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::from_hex(&value)
    }
}

fn cipher(key: &SymmetricKey) -> Aes128 {
    Aes128::new(GenericArray::from_slice(key.as_bytes()))
}

/// Raw single-block AES-128 encryption, no padding.
pub fn aes_encrypt_block(key: &SymmetricKey, block: &[u8; BLOCK_LEN]) -> [u8; BLOCK_LEN] {
    let mut b = GenericArray::clone_from_slice(block);
    cipher(key).encrypt_block(&mut b);
    b.into()
}

pub fn ecb_encrypt(key: &SymmetricKey, plaintext: &[u8]) -> Vec<u8> {
    let pad = BLOCK_LEN - plaintext.len() % BLOCK_LEN;
    let mut buf = Vec::with_capacity(plaintext.len() + pad);
    buf.extend_from_slice(plaintext);
    buf.resize(plaintext.len() + pad, pad as u8);
    let aes = cipher(key);
    for chunk in buf.chunks_exact_mut(BLOCK_LEN) {
        aes.encrypt_block(GenericArray::from_mut_slice(chunk));
    }
    buf
}

pub fn ecb_decrypt(key: &SymmetricKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.is_empty() || !ciphertext.len().is_multiple_of(BLOCK_LEN) {
        return Err(CryptoError::BadLength);
    }
    let mut buf = ciphertext.to_vec();
    let aes = cipher(key);
    for chunk in buf.chunks_exact_mut(BLOCK_LEN) {
        aes.decrypt_block(GenericArray::from_mut_slice(chunk));
    }
    let pad = *buf.last().expect("non-empty") as usize;
    if pad == 0 || pad > BLOCK_LEN || buf[buf.len() - pad..].iter().any(|&b| b as usize != pad) {
        return Err(CryptoError::BadPadding);
    }
    buf.truncate(buf.len() - pad);
    Ok(buf)
}

/// 96-bit GCM nonce laid out as endpoint id (u32 BE) || counter (u64 BE).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GcmNonce([u8; GCM_NONCE_LEN]);

impl GcmNonce {
    pub fn from_parts(endpoint: u32, counter: u64) -> Self {
        let mut n = [0u8; GCM_NONCE_LEN];
        n[..4].copy_from_slice(&endpoint.to_be_bytes());
        n[4..].copy_from_slice(&counter.to_be_bytes());
        Self(n)
    }

    pub fn from_bytes(bytes: [u8; GCM_NONCE_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; GCM_NONCE_LEN] {
        &self.0
    }
}

/// Returns `ciphertext || tag`.
pub fn gcm_seal(
    key: &SymmetricKey,
    nonce: &GcmNonce,
    associated_data: &[u8],
    plaintext: &[u8],
) -> Vec<u8> {
    let aead = Aes128Gcm::new(GenericArray::from_slice(key.as_bytes()));
    aead.encrypt(
        GenericArray::from_slice(nonce.as_bytes()),
        Payload {
            msg: plaintext,
            aad: associated_data,
        },
    )
    .expect("AES-GCM encryption of in-memory buffers cannot fail")
}

pub fn gcm_open(
    key: &SymmetricKey,
    nonce: &GcmNonce,
    associated_data: &[u8],
    sealed: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if sealed.len() < TAG_LEN {
        return Err(CryptoError::AuthFailed);
    }
    let aead = Aes128Gcm::new(GenericArray::from_slice(key.as_bytes()));
    aead.decrypt(
        GenericArray::from_slice(nonce.as_bytes()),
        Payload {
            msg: sealed,
            aad: associated_data,
        },
    )
    .map_err(|_| CryptoError::AuthFailed)
}

/// Session key: first 16 bytes of HMAC-SHA-256(device_key, serial || nonce).
///
/// Lock, cloud and (once it knows the identity) the attacker all compute the
/// same value.
pub fn derive_session_key(
    device_key: &SymmetricKey,
    serial: &Serial,
    nonce: &SessionNonce,
) -> SymmetricKey {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(device_key.as_bytes())
        .expect("HMAC accepts any key length");
    mac.update(serial);
    mac.update(nonce);
    let tag = mac.finalize().into_bytes();
    let mut out = [0u8; KEY_LEN];
    out.copy_from_slice(&tag[..KEY_LEN]);
    SymmetricKey(out)
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// X25519 key pair.
#[derive(Clone)]
pub struct KeyAgreementKeyPair {
    secret: StaticSecret,
    public: PublicKey,
}

impl KeyAgreementKeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let secret = StaticSecret::from(seed);
        let public = PublicKey::from(&secret);
        Self { secret, public }
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public_bytes(&self) -> [u8; PUBLIC_LEN] {
        self.public.to_bytes()
    }
}

impl fmt::Debug for KeyAgreementKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "KeyAgreementKeyPair(public={})",
            hex::encode(self.public_bytes())
        )
    }
}

const DH_LABEL: &[u8] = b"locklab-dh-v1";

/// Both sides derive SHA-256(label || shared secret)[..16]. Low-order points
/// are rejected because they force a predictable shared secret.
pub fn dh_handshake(
    local: &KeyAgreementKeyPair,
    remote_public: &[u8],
) -> Result<SymmetricKey, CryptoError> {
    let remote: [u8; PUBLIC_LEN] = remote_public
        .try_into()
        .map_err(|_| CryptoError::InvalidPublic)?;
    let shared = local.secret.diffie_hellman(&PublicKey::from(remote));
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidPublic);
    }
    let mut h = Sha256::new();
    h.update(DH_LABEL);
    h.update(shared.as_bytes());
    let digest = h.finalize();
    SymmetricKey::from_slice(&digest[..KEY_LEN])
}

/// Ed25519 signing key.
#[derive(Clone)]
pub struct SigningKeyPair {
    signing: SigningKey,
}

impl SigningKeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn verification_key(&self) -> VerificationKey {
        VerificationKey(self.signing.verifying_key().to_bytes())
    }
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKeyPair(vk={})", self.verification_key().key_id())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct VerificationKey([u8; PUBLIC_LEN]);

impl VerificationKey {
    pub fn from_bytes(bytes: [u8; PUBLIC_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        Ok(Self(
            bytes.try_into().map_err(|_| CryptoError::InvalidPublic)?,
        ))
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_LEN] {
        &self.0
    }

    /// Short identifier: hex of the first 8 bytes of SHA-256(key).
    pub fn key_id(&self) -> String {
        hex::encode(&sha256(&self.0)[..8])
    }
}

impl fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerificationKey({})", self.key_id())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    pub fn from_bytes(bytes: [u8; SIGNATURE_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

pub fn sign(key: &SigningKeyPair, message: &[u8]) -> Signature {
    Signature(key.signing.sign(message).to_bytes())
}

/// Returns false for malformed keys as well as bad signatures.
pub fn verify(key: &VerificationKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    vk.verify_strict(message, &sig).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key(byte: u8) -> SymmetricKey {
        SymmetricKey::from_bytes([byte; KEY_LEN])
    }

    #[test]
    fn ecb_repeats_identical_blocks() {
        let k = key(7);
        let ct = ecb_encrypt(&k, &[0x41; 32]);
        assert_eq!(ct.len(), 48);
        assert_eq!(ct[..16], ct[16..32]);
    }

    #[test]
    fn aes_zero_vector() {
        let ct = aes_encrypt_block(&key(0), &[0; 16]);
        assert_eq!(hex::encode(ct), "66e94bd4ef8a2c3b884cfa59ca342b2e");
    }

    #[test]
    fn ecb_decrypt_errors() {
        let k = key(3);
        assert_eq!(ecb_decrypt(&k, &[0; 15]), Err(CryptoError::BadLength));
        assert_eq!(ecb_decrypt(&k, &[]), Err(CryptoError::BadLength));
        // A block whose plaintext ends in 0x00 can never be valid PKCS#7.
        let mut block = [0x11u8; 16];
        block[15] = 0x00;
        let ct = aes_encrypt_block(&k, &block);
        assert_eq!(ecb_decrypt(&k, &ct), Err(CryptoError::BadPadding));
        // ...and neither can one ending in 0x11 (> block size).
        let ct = aes_encrypt_block(&k, &[0x11; 16]);
        assert_eq!(ecb_decrypt(&k, &ct), Err(CryptoError::BadPadding));
    }

    #[test]
    fn ecb_round_trip_lengths() {
        let k = key(9);
        for n in 0..50 {
            let m: Vec<u8> = (0..n as u8).collect();
            let ct = ecb_encrypt(&k, &m);
            assert_eq!(ct.len(), (n / 16 + 1) * 16);
            assert_eq!(ecb_decrypt(&k, &ct).unwrap(), m);
        }
    }

    #[test]
    fn gcm_round_trip_and_tamper() {
        let k = key(1);
        let n = GcmNonce::from_parts(1, 1);
        let sealed = gcm_seal(&k, &n, b"ad", b"hello");
        assert_eq!(sealed.len(), 5 + TAG_LEN);
        assert_eq!(gcm_open(&k, &n, b"ad", &sealed).unwrap(), b"hello");
        for i in 0..sealed.len() {
            let mut t = sealed.clone();
            t[i] ^= 0x80;
            assert_eq!(gcm_open(&k, &n, b"ad", &t), Err(CryptoError::AuthFailed));
        }
        assert_eq!(
            gcm_open(&k, &n, b"other", &sealed),
            Err(CryptoError::AuthFailed)
        );
        assert_eq!(
            gcm_open(&k, &n, b"ad", &sealed[..10]),
            Err(CryptoError::AuthFailed)
        );
        let other = gcm_seal(&k, &GcmNonce::from_parts(1, 2), b"ad", b"hello");
        assert_ne!(sealed, other);
    }

    #[test]
    fn nonce_layout() {
        let n = GcmNonce::from_parts(0x0102_0304, 5);
        assert_eq!(n.as_bytes(), &[1, 2, 3, 4, 0, 0, 0, 0, 0, 0, 0, 5]);
    }

    #[test]
    fn dh_symmetry_and_rejection() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = KeyAgreementKeyPair::generate(&mut rng);
        let b = KeyAgreementKeyPair::generate(&mut rng);
        let ab = dh_handshake(&a, &b.public_bytes()).unwrap();
        let ba = dh_handshake(&b, &a.public_bytes()).unwrap();
        assert_eq!(ab, ba);
        // Nothing an observer can compute from the publics alone matches.
        let mut cat = a.public_bytes().to_vec();
        cat.extend_from_slice(&b.public_bytes());
        assert_ne!(&sha256(&cat)[..16], ab.as_bytes());
        assert_eq!(
            dh_handshake(&a, &[0u8; 31]),
            Err(CryptoError::InvalidPublic)
        );
        assert_eq!(
            dh_handshake(&a, &[0u8; 32]),
            Err(CryptoError::InvalidPublic)
        );
    }

    #[test]
    fn signatures() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let sk = SigningKeyPair::generate(&mut rng);
        let other = SigningKeyPair::generate(&mut rng);
        let sig = sign(&sk, b"firmware");
        assert!(verify(&sk.verification_key(), b"firmware", &sig));
        assert!(!verify(&sk.verification_key(), b"firmwarf", &sig));
        assert!(!verify(&other.verification_key(), b"firmware", &sig));
    }

    #[test]
    fn key_hex_serde() {
        let k = key(0xAB);
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(json, format!("\"{}\"", "ab".repeat(16)));
        assert_eq!(serde_json::from_str::<SymmetricKey>(&json).unwrap(), k);
        assert!(SymmetricKey::from_hex("abcd").is_err());
    }
}
