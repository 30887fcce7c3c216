//! Emulated fingerprint reader chip.
//!
//! Isolation classes follow the three-tier biometric model: class 1 hands raw
//! images to whoever asks over its UART, class 2 keeps raw data and matching
//! inside the chip, class 3 additionally wraps stored templates under a
//! chip-local key so a flash dump of the host yields nothing usable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cryptobox::{gcm_open, gcm_seal, sha256, GcmNonce, SymmetricKey};

pub const IMAGE_WIDTH: u16 = 160;
pub const IMAGE_HEIGHT: u16 = 160;
pub const IMAGE_LEN: usize = IMAGE_WIDTH as usize * IMAGE_HEIGHT as usize;
pub const MAX_ENROLLED: usize = 20;
pub const IMAGE_CHUNK: usize = 256;
pub const IMAGE_CHUNKS: u16 = (IMAGE_LEN / IMAGE_CHUNK) as u16;

const GENERATOR_LABEL: &[u8] = b"locklab-fingerprint";
const WRAP_ENDPOINT: u32 = 0x5345_4E53;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SensorError {
    #[error("sensor is asleep")]
    Asleep,
    #[error("raw biometric data is not released at this isolation class")]
    IsolationViolation,
    #[error("no such capture slot")]
    NoSuchSlot,
    #[error("template store full")]
    StoreFull,
    #[error("malformed sensor command")]
    BadCommand,
}

/// Seed standing in for whoever touches the sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VictimId(pub u64);

#[derive(Clone, PartialEq, Eq)]
pub struct FingerprintImage {
    width: u16,
    height: u16,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for FingerprintImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "FingerprintImage({}x{}, sha256={})",
            self.width,
            self.height,
            hex::encode(&sha256(&self.pixels)[..8])
        )
    }
}

impl FingerprintImage {
    /// Deterministic pseudo-image for a victim: SHA-256 in counter mode over
    /// `label || seed (u64 LE) || counter (u32 LE)`, truncated to 160x160.
    pub fn synthesize(victim: VictimId) -> Self {
        let mut pixels = Vec::with_capacity(IMAGE_LEN + 32);
        let mut counter: u32 = 0;
        let mut input = Vec::with_capacity(GENERATOR_LABEL.len() + 12);
        while pixels.len() < IMAGE_LEN {
            input.clear();
            input.extend_from_slice(GENERATOR_LABEL);
            input.extend_from_slice(&victim.0.to_le_bytes());
            input.extend_from_slice(&counter.to_le_bytes());
            pixels.extend_from_slice(&sha256(&input));
            counter += 1;
        }
        pixels.truncate(IMAGE_LEN);
        Self {
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
            pixels,
        }
    }

    pub fn from_parts(width: u16, height: u16, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == usize::from(width) * usize::from(height)).then_some(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    /// Row-major 8-bit grayscale.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn template(&self) -> FingerprintTemplate {
        FingerprintTemplate(sha256(&self.pixels))
    }
}

/// 32-byte digest standing in for extracted minutiae.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FingerprintTemplate(pub [u8; 32]);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum IsolationClass {
    Class1 = 1,
    Class2 = 2,
    Class3 = 3,
}

impl IsolationClass {
    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            1 => Some(Self::Class1),
            2 => Some(Self::Class2),
            3 => Some(Self::Class3),
            _ => None,
        }
    }
}

impl TryFrom<u8> for IsolationClass {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::from_level(v).ok_or_else(|| format!("isolation class must be 1, 2 or 3, got {v}"))
    }
}

impl From<IsolationClass> for u8 {
    fn from(c: IsolationClass) -> Self {
        c.level()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SensorOp {
    Capture,
    GetImage,
    GetTemplate,
    Enroll,
    Match,
}

impl SensorOp {
    pub const ALL: [SensorOp; 5] = [
        SensorOp::Capture,
        SensorOp::GetImage,
        SensorOp::GetTemplate,
        SensorOp::Enroll,
        SensorOp::Match,
    ];

    pub fn exposes_raw_data(self) -> bool {
        self == SensorOp::GetImage
    }

    pub fn permitted_at(self, class: IsolationClass) -> bool {
        !(self.exposes_raw_data() && class != IsolationClass::Class1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnrolledId(pub u16);

#[derive(Clone, Debug)]
enum StoredTemplate {
    Plain(FingerprintTemplate),
    Wrapped { counter: u64, blob: Vec<u8> },
}

#[derive(Clone, Debug)]
pub struct Sensor {
    class: IsolationClass,
    powered: bool,
    slots: Vec<FingerprintImage>,
    enrolled: Vec<(EnrolledId, StoredTemplate)>,
    next_id: u16,
    wrap_key: SymmetricKey,
    wrap_counter: u64,
}

impl Sensor {
    pub fn new(class: IsolationClass, wrap_key: SymmetricKey) -> Self {
        Self {
            class,
            powered: false,
            slots: Vec::new(),
            enrolled: Vec::new(),
            next_id: 1,
            wrap_key,
            wrap_counter: 0,
        }
    }

    pub fn class(&self) -> IsolationClass {
        self.class
    }

    pub fn set_powered(&mut self, powered: bool) {
        self.powered = powered;
    }

    pub fn is_powered(&self) -> bool {
        self.powered
    }

    pub fn capture(&mut self, victim: VictimId) -> Result<SlotId, SensorError> {
        if !self.powered {
            return Err(SensorError::Asleep);
        }
        self.slots.push(FingerprintImage::synthesize(victim));
        Ok(SlotId((self.slots.len() - 1) as u16))
    }

    fn slot(&self, slot: SlotId) -> Result<&FingerprintImage, SensorError> {
        self.slots
            .get(usize::from(slot.0))
            .ok_or(SensorError::NoSuchSlot)
    }

    pub fn get_image(&self, slot: SlotId) -> Result<&FingerprintImage, SensorError> {
        let image = self.slot(slot)?;
        if !SensorOp::GetImage.permitted_at(self.class) {
            return Err(SensorError::IsolationViolation);
        }
        Ok(image)
    }

    pub fn get_template(&self, slot: SlotId) -> Result<FingerprintTemplate, SensorError> {
        Ok(self.slot(slot)?.template())
    }

    pub fn enroll(&mut self, slot: SlotId) -> Result<EnrolledId, SensorError> {
        let template = self.slot(slot)?.template();
        if self.enrolled.len() >= MAX_ENROLLED {
            return Err(SensorError::StoreFull);
        }
        let id = EnrolledId(self.next_id);
        self.next_id += 1;
        let stored = if self.class == IsolationClass::Class3 {
            self.wrap_counter += 1;
            let nonce = GcmNonce::from_parts(WRAP_ENDPOINT, self.wrap_counter);
            StoredTemplate::Wrapped {
                counter: self.wrap_counter,
                blob: gcm_seal(&self.wrap_key, &nonce, &id.0.to_le_bytes(), &template.0),
            }
        } else {
            StoredTemplate::Plain(template)
        };
        self.enrolled.push((id, stored));
        Ok(id)
    }

    fn unwrap_template(
        &self,
        id: EnrolledId,
        stored: &StoredTemplate,
    ) -> Option<FingerprintTemplate> {
        match stored {
            StoredTemplate::Plain(t) => Some(*t),
            StoredTemplate::Wrapped { counter, blob } => {
                let nonce = GcmNonce::from_parts(WRAP_ENDPOINT, *counter);
                let raw = gcm_open(&self.wrap_key, &nonce, &id.0.to_le_bytes(), blob).ok()?;
                Some(FingerprintTemplate(raw.try_into().ok()?))
            }
        }
    }

    /// Exact digest equality against the enrolled set.
    pub fn match_slot(&self, slot: SlotId) -> Result<Option<EnrolledId>, SensorError> {
        let probe = self.slot(slot)?.template();
        Ok(self
            .enrolled
            .iter()
            .find(|(id, stored)| self.unwrap_template(*id, stored) == Some(probe))
            .map(|(id, _)| *id))
    }

    pub fn enrolled_count(&self) -> usize {
        self.enrolled.len()
    }

    /// What a host-side flash dump sees of the template store.
    pub fn stored_templates(&self) -> Vec<Vec<u8>> {
        self.enrolled
            .iter()
            .map(|(_, s)| match s {
                StoredTemplate::Plain(t) => t.0.to_vec(),
                StoredTemplate::Wrapped { blob, .. } => blob.clone(),
            })
            .collect()
    }

    pub fn clear_slots(&mut self) {
        self.slots.clear();
    }

    pub fn clear_enrolled(&mut self) {
        self.enrolled.clear();
        self.next_id = 1;
    }

    /// Executes one SENSOR_CMD and returns the response body.
    pub fn execute(&mut self, command: SensorCommand) -> Result<Vec<u8>, SensorError> {
        match command {
            SensorCommand::Capture { victim } => Ok(self.capture(victim)?.0.to_le_bytes().to_vec()),
            SensorCommand::GetImage { slot, chunk } => {
                if chunk >= IMAGE_CHUNKS {
                    return Err(SensorError::BadCommand);
                }
                let image = self.get_image(slot)?;
                let start = usize::from(chunk) * IMAGE_CHUNK;
                Ok(image.pixels()[start..start + IMAGE_CHUNK].to_vec())
            }
            SensorCommand::GetTemplate { slot } => Ok(self.get_template(slot)?.0.to_vec()),
            SensorCommand::Enroll { slot } => Ok(self.enroll(slot)?.0.to_le_bytes().to_vec()),
            SensorCommand::Match { slot } => Ok(match self.match_slot(slot)? {
                Some(id) => {
                    let mut v = vec![1];
                    v.extend_from_slice(&id.0.to_le_bytes());
                    v
                }
                None => vec![0],
            }),
        }
    }
}

/// SENSOR_CMD payload: sub-opcode byte then little-endian arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensorCommand {
    /// 0x01, victim seed u64.
    Capture { victim: VictimId },
    /// 0x02, slot u16, chunk index u16 (chunks of 256 bytes).
    GetImage { slot: SlotId, chunk: u16 },
    /// 0x03, slot u16.
    GetTemplate { slot: SlotId },
    /// 0x04, slot u16.
    Enroll { slot: SlotId },
    /// 0x05, slot u16.
    Match { slot: SlotId },
}

impl SensorCommand {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9);
        match *self {
            SensorCommand::Capture { victim } => {
                out.push(0x01);
                out.extend_from_slice(&victim.0.to_le_bytes());
            }
            SensorCommand::GetImage { slot, chunk } => {
                out.push(0x02);
                out.extend_from_slice(&slot.0.to_le_bytes());
                out.extend_from_slice(&chunk.to_le_bytes());
            }
            SensorCommand::GetTemplate { slot } => {
                out.push(0x03);
                out.extend_from_slice(&slot.0.to_le_bytes());
            }
            SensorCommand::Enroll { slot } => {
                out.push(0x04);
                out.extend_from_slice(&slot.0.to_le_bytes());
            }
            SensorCommand::Match { slot } => {
                out.push(0x05);
                out.extend_from_slice(&slot.0.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SensorError> {
        let (&sub, args) = bytes.split_first().ok_or(SensorError::BadCommand)?;
        let u16_at = |i: usize| -> Result<u16, SensorError> {
            args.get(i..i + 2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .ok_or(SensorError::BadCommand)
        };
        let cmd = match (sub, args.len()) {
            (0x01, 8) => SensorCommand::Capture {
                victim: VictimId(u64::from_le_bytes(args.try_into().expect("length checked"))),
            },
            (0x02, 4) => SensorCommand::GetImage {
                slot: SlotId(u16_at(0)?),
                chunk: u16_at(2)?,
            },
            (0x03, 2) => SensorCommand::GetTemplate {
                slot: SlotId(u16_at(0)?),
            },
            (0x04, 2) => SensorCommand::Enroll {
                slot: SlotId(u16_at(0)?),
            },
            (0x05, 2) => SensorCommand::Match {
                slot: SlotId(u16_at(0)?),
            },
            _ => return Err(SensorError::BadCommand),
        };
        Ok(cmd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sensor(class: IsolationClass) -> Sensor {
        let mut s = Sensor::new(class, SymmetricKey::from_bytes([0x5A; 16]));
        s.set_powered(true);
        s
    }

    #[test]
    fn capture_is_deterministic_per_victim() {
        let mut s = sensor(IsolationClass::Class1);
        let a = s.capture(VictimId(7)).unwrap();
        let b = s.capture(VictimId(7)).unwrap();
        assert_ne!(a, b);
        assert_eq!(s.get_image(a).unwrap(), s.get_image(b).unwrap());
        let c = s.capture(VictimId(8)).unwrap();
        assert_ne!(s.get_image(a).unwrap(), s.get_image(c).unwrap());
    }

    #[test]
    fn asleep_sensor_refuses_capture() {
        let mut s = Sensor::new(IsolationClass::Class1, SymmetricKey::from_bytes([0; 16]));
        assert_eq!(s.capture(VictimId(1)), Err(SensorError::Asleep));
    }

    #[test]
    fn raw_image_only_at_class_one() {
        for class in [
            IsolationClass::Class1,
            IsolationClass::Class2,
            IsolationClass::Class3,
        ] {
            let mut s = sensor(class);
            let slot = s.capture(VictimId(3)).unwrap();
            let img = s.get_image(slot);
            if class == IsolationClass::Class1 {
                let img = img.unwrap();
                assert_eq!(
                    (img.width(), img.height(), img.pixels().len()),
                    (160, 160, IMAGE_LEN)
                );
            } else {
                assert_eq!(img.unwrap_err(), SensorError::IsolationViolation);
            }
            assert_eq!(
                s.get_image(SlotId(99)).unwrap_err(),
                SensorError::NoSuchSlot
            );
        }
    }

    #[test]
    fn class_monotonicity() {
        let classes = [
            IsolationClass::Class1,
            IsolationClass::Class2,
            IsolationClass::Class3,
        ];
        for op in SensorOp::ALL {
            for pair in classes.windows(2) {
                if op.permitted_at(pair[1]) {
                    assert!(op.permitted_at(pair[0]), "{op:?}");
                }
            }
            if op.exposes_raw_data() {
                assert!(!op.permitted_at(IsolationClass::Class2));
                assert!(!op.permitted_at(IsolationClass::Class3));
            }
        }
    }

    #[test]
    fn template_matches_digest_oracle() {
        let mut s = sensor(IsolationClass::Class2);
        let slot = s.capture(VictimId(11)).unwrap();
        let oracle = sha2::Sha256::digest(FingerprintImage::synthesize(VictimId(11)).pixels());
        use sha2::Digest;
        assert_eq!(
            s.get_template(slot).unwrap().0.as_slice(),
            oracle.as_slice()
        );
        assert_eq!(s.get_template(SlotId(5)), Err(SensorError::NoSuchSlot));
    }

    #[test]
    fn enroll_and_match() {
        for class in [
            IsolationClass::Class1,
            IsolationClass::Class2,
            IsolationClass::Class3,
        ] {
            let mut s = sensor(class);
            let v = s.capture(VictimId(1)).unwrap();
            let id = s.enroll(v).unwrap();
            let again = s.capture(VictimId(1)).unwrap();
            assert_eq!(s.match_slot(again).unwrap(), Some(id));
            let stranger = s.capture(VictimId(2)).unwrap();
            assert_eq!(s.match_slot(stranger).unwrap(), None);
        }
    }

    #[test]
    fn store_full_after_twenty() {
        let mut s = sensor(IsolationClass::Class1);
        for i in 0..MAX_ENROLLED as u64 {
            let slot = s.capture(VictimId(i)).unwrap();
            s.enroll(slot).unwrap();
        }
        let slot = s.capture(VictimId(999)).unwrap();
        assert_eq!(s.enroll(slot), Err(SensorError::StoreFull));
        assert_eq!(s.enroll(SlotId(5000)), Err(SensorError::NoSuchSlot));
    }

    #[test]
    fn class_three_store_is_opaque() {
        let mut plain = sensor(IsolationClass::Class2);
        let mut wrapped = sensor(IsolationClass::Class3);
        for s in [&mut plain, &mut wrapped] {
            let slot = s.capture(VictimId(4)).unwrap();
            s.enroll(slot).unwrap();
        }
        let digest = FingerprintImage::synthesize(VictimId(4))
            .template()
            .0
            .to_vec();
        assert_eq!(plain.stored_templates(), vec![digest.clone()]);
        let dumped = wrapped.stored_templates();
        assert_eq!(dumped.len(), 1);
        assert!(!dumped[0].windows(32).any(|w| w == digest.as_slice()));
    }

    #[test]
    fn command_codec() {
        let cmds = [
            SensorCommand::Capture {
                victim: VictimId(0x0102),
            },
            SensorCommand::GetImage {
                slot: SlotId(3),
                chunk: 99,
            },
            SensorCommand::GetTemplate { slot: SlotId(1) },
            SensorCommand::Enroll { slot: SlotId(2) },
            SensorCommand::Match { slot: SlotId(4) },
        ];
        for c in cmds {
            assert_eq!(SensorCommand::decode(&c.encode()).unwrap(), c);
        }
        assert_eq!(
            SensorCommand::Capture {
                victim: VictimId(1)
            }
            .encode()[0],
            0x01
        );
        assert_eq!(SensorCommand::decode(&[0x09]), Err(SensorError::BadCommand));
        assert_eq!(SensorCommand::decode(&[]), Err(SensorError::BadCommand));
        assert_eq!(
            SensorCommand::decode(&[0x03, 1]),
            Err(SensorError::BadCommand)
        );
    }

    #[test]
    fn chunked_image_reassembles() {
        let mut s = sensor(IsolationClass::Class1);
        let slot = s.capture(VictimId(77)).unwrap();
        let mut out = Vec::new();
        for chunk in 0..IMAGE_CHUNKS {
            out.extend(s.execute(SensorCommand::GetImage { slot, chunk }).unwrap());
        }
        assert_eq!(out, FingerprintImage::synthesize(VictimId(77)).pixels());
        assert_eq!(
            s.execute(SensorCommand::GetImage {
                slot,
                chunk: IMAGE_CHUNKS
            }),
            Err(SensorError::BadCommand)
        );
    }
}
