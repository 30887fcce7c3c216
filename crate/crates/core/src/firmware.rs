//! Firmware update packages and the vendor catalog.
//!
//! Package layout (integers little-endian):
//!
//! ```text
//! "LLFW" | u32 manifest_len | manifest text | u32 image_len | image
//!        | u16 crc16(image) | u8 has_sig [| u8 key_id_len | key_id | sig(64)]
//! ```
//!
//! The manifest is `key=value` lines (`version`, `behavior`). Signatures cover
//! `manifest || image`; the CRC covers the image only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config;
use crate::cryptobox::{
    sha256, sign, verify, Signature, SigningKeyPair, VerificationKey, SIGNATURE_LEN,
};
use crate::profile::DfuIntegrity;
use crate::wire::crc16;

const PACKAGE_MAGIC: &[u8; 4] = b"LLFW";
pub const MAX_PACKAGE_LEN: usize = 256 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FirmwareError {
    #[error("malformed package: {0}")]
    Malformed(&'static str),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("integrity check failed")]
    IntegrityFailed,
    #[error("unknown catalog image `{0}`")]
    UnknownImage(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Legitimate,
    Droplock,
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Behavior::Legitimate => "legitimate",
            Behavior::Droplock => "droplock",
        })
    }
}

impl FromStr for Behavior {
    type Err = FirmwareError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "legitimate" => Ok(Behavior::Legitimate),
            "droplock" => Ok(Behavior::Droplock),
            other => Err(FirmwareError::Manifest(format!(
                "unknown behavior `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub behavior: Behavior,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        format!("version={}\nbehavior={}\n", self.version, self.behavior)
    }

    pub fn parse(text: &str) -> Result<Self, FirmwareError> {
        let mut version = None;
        let mut behavior = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FirmwareError::Manifest(format!("line without `=`: {line}")))?;
            match k.trim() {
                "version" => version = Some(v.trim().to_string()),
                "behavior" => behavior = Some(v.trim().parse()?),
                _ => {}
            }
        }
        Ok(Self {
            version: version.ok_or_else(|| FirmwareError::Manifest("missing version".into()))?,
            behavior: behavior.ok_or_else(|| FirmwareError::Manifest("missing behavior".into()))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackageSignature {
    pub key_id: String,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FirmwarePackage {
    pub manifest: Manifest,
    pub image: Vec<u8>,
    pub crc16: u16,
    pub signature: Option<PackageSignature>,
}

impl FirmwarePackage {
    /// Unsigned package with a freshly computed CRC.
    pub fn with_crc(manifest: Manifest, image: Vec<u8>) -> Self {
        let crc16 = crc16(&image);
        Self {
            manifest,
            image,
            crc16,
            signature: None,
        }
    }

    pub fn signed_message(&self) -> Vec<u8> {
        let mut m = self.manifest.to_text().into_bytes();
        m.extend_from_slice(&self.image);
        m
    }

    pub fn sign_with(mut self, key: &SigningKeyPair) -> Self {
        let signature = sign(key, &self.signed_message());
        self.signature = Some(PackageSignature {
            key_id: key.verification_key().key_id(),
            signature,
        });
        self
    }

    pub fn image_digest(&self) -> [u8; 32] {
        sha256(&self.image)
    }

    pub fn crc_valid(&self) -> bool {
        crc16(&self.image) == self.crc16
    }

    pub fn signature_valid(&self, trust: &VerificationKey) -> bool {
        self.signature
            .as_ref()
            .is_some_and(|s| verify(trust, &self.signed_message(), &s.signature))
    }

    pub fn verify(&self, mode: DfuIntegrity, trust: &VerificationKey) -> Result<(), FirmwareError> {
        let ok = match mode {
            DfuIntegrity::Crc16 => self.crc_valid(),
            DfuIntegrity::Signature => self.signature_valid(trust),
        };
        ok.then_some(()).ok_or(FirmwareError::IntegrityFailed)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest.to_text();
        let mut out = Vec::with_capacity(16 + manifest.len() + self.image.len() + 96);
        out.extend_from_slice(PACKAGE_MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&(self.image.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.image);
        out.extend_from_slice(&self.crc16.to_le_bytes());
        match &self.signature {
            None => out.push(0),
            Some(sig) => {
                out.push(1);
                out.push(sig.key_id.len() as u8);
                out.extend_from_slice(sig.key_id.as_bytes());
                out.extend_from_slice(sig.signature.as_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FirmwareError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != PACKAGE_MAGIC {
            return Err(FirmwareError::Malformed("bad magic"));
        }
        let mlen = r.u32()? as usize;
        let manifest_text = std::str::from_utf8(r.take(mlen)?)
            .map_err(|_| FirmwareError::Malformed("manifest is not UTF-8"))?;
        let manifest = Manifest::parse(manifest_text)?;
        let ilen = r.u32()? as usize;
        let image = r.take(ilen)?.to_vec();
        let crc16 = u16::from_le_bytes(r.take(2)?.try_into().expect("two bytes"));
        let signature = match r.take(1)?[0] {
            0 => None,
            1 => {
                let klen = usize::from(r.take(1)?[0]);
                let key_id = String::from_utf8(r.take(klen)?.to_vec())
                    .map_err(|_| FirmwareError::Malformed("key id is not UTF-8"))?;
                let signature = Signature::from_slice(r.take(SIGNATURE_LEN)?).expect("64 bytes");
                Some(PackageSignature { key_id, signature })
            }
            _ => return Err(FirmwareError::Malformed("bad signature flag")),
        };
        if r.pos != bytes.len() {
            return Err(FirmwareError::Malformed("trailing bytes"));
        }
        Ok(Self {
            manifest,
            image,
            crc16,
            signature,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FirmwareError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(FirmwareError::Malformed("length overflow"))?;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or(FirmwareError::Malformed("truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FirmwareError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("four bytes"),
        ))
    }
}

/// Integrity descriptor as reported by the cloud's metadata route.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntegrityMeta {
    Crc16 { crc16: String },
    Signature { signature: String, key_id: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmwareMeta {
    pub version: String,
    pub behavior: Behavior,
    pub integrity: IntegrityMeta,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CatalogEntry {
    pub version: String,
    pub behavior: Behavior,
    pub image_name: String,
    pub with_crc: bool,
    pub with_signature: bool,
}

/// Parses the catalog manifest: `version behavior image integrity` per line,
/// integrity being `crc16`, `signature` or `crc16+signature`.
pub fn parse_catalog_manifest(text: &str) -> Result<Vec<CatalogEntry>, FirmwareError> {
    let mut entries = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [version, behavior, image, integrity] = fields[..] else {
            return Err(FirmwareError::Manifest(format!(
                "expected 4 fields: {line}"
            )));
        };
        let kinds: Vec<&str> = integrity.split('+').collect();
        if kinds.iter().any(|k| *k != "crc16" && *k != "signature") {
            return Err(FirmwareError::Manifest(format!(
                "unknown integrity `{integrity}`"
            )));
        }
        entries.push(CatalogEntry {
            version: version.to_string(),
            behavior: behavior.parse()?,
            image_name: image.to_string(),
            with_crc: kinds.contains(&"crc16"),
            with_signature: kinds.contains(&"signature"),
        });
    }
    Ok(entries)
}

/// Vendor-published packages, signed where the manifest asks for it.
#[derive(Clone, Debug)]
pub struct Catalog {
    packages: Vec<FirmwarePackage>,
}

impl Catalog {
    pub fn build(
        entries: &[CatalogEntry],
        images: &[(&str, &[u8])],
        signer: &SigningKeyPair,
    ) -> Result<Self, FirmwareError> {
        let mut packages = Vec::with_capacity(entries.len());
        for e in entries {
            let image = images
                .iter()
                .find(|(n, _)| *n == e.image_name)
                .map(|(_, b)| b.to_vec())
                .ok_or_else(|| FirmwareError::UnknownImage(e.image_name.clone()))?;
            let manifest = Manifest {
                version: e.version.clone(),
                behavior: e.behavior,
            };
            let mut pkg = FirmwarePackage::with_crc(manifest, image);
            if !e.with_crc {
                pkg.crc16 = 0;
            }
            if e.with_signature {
                pkg = pkg.sign_with(signer);
            }
            packages.push(pkg);
        }
        Ok(Self { packages })
    }

    pub fn builtin(signer: &SigningKeyPair) -> Self {
        let entries =
            parse_catalog_manifest(config::CATALOG_MANIFEST).expect("built-in manifest parses");
        Self::build(&entries, &config::CATALOG_IMAGES, signer).expect("built-in images present")
    }

    pub fn get(&self, version: &str) -> Option<&FirmwarePackage> {
        self.packages.iter().find(|p| p.manifest.version == version)
    }

    pub fn packages(&self) -> &[FirmwarePackage] {
        &self.packages
    }

    /// First entry; what a fresh lock ships with.
    pub fn factory_image(&self) -> &FirmwarePackage {
        &self.packages[0]
    }

    pub fn latest(&self) -> &FirmwarePackage {
        self.packages.last().expect("catalog is non-empty")
    }

    pub fn published_digests(&self) -> Vec<[u8; 32]> {
        self.packages
            .iter()
            .map(FirmwarePackage::image_digest)
            .collect()
    }
}
