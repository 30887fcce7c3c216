//! Framing for the emulated BLE UART link.
//!
//! Every message between the lock and a peer is a single frame:
//!
//! ```text
//! +------+--------+-------------+-----------------+-------------+
//! | 0xA5 | opcode | len (u16 LE)| payload (len B) | crc (u16 BE)|
//! +------+--------+-------------+-----------------+-------------+
//! ```
//!
//! The CRC is CRC-16/CCITT-FALSE over `opcode || len || payload`. Responses
//! reuse the request opcode with the high bit set; `0x7F` carries errors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: u8 = 0xA5;
pub const MAX_PAYLOAD: usize = 512;
pub const HEADER_LEN: usize = 4;
pub const CRC_LEN: usize = 2;
pub const RESPONSE_BIT: u8 = 0x80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    FrameTooLarge(usize),
    #[error("frame does not start with the magic byte")]
    BadMagic,
    #[error("declared length does not match the frame size")]
    LengthMismatch,
    #[error("checksum mismatch")]
    BadCrc,
    #[error("unregistered opcode {0:#04x}")]
    UnknownOpcode(u8),
}

/// Registered command codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum Command {
    GetRandom = 0x01,
    SessionInit = 0x02,
    Enroll = 0x03,
    Unlock = 0x04,
    EnrollFinger = 0x05,
    EnterDfu = 0x06,
    DfuData = 0x07,
    DfuExecute = 0x08,
    SensorCmd = 0x09,
    AttestReq = 0x0A,
    Error = 0x7F,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Command::GetRandom,
        Command::SessionInit,
        Command::Enroll,
        Command::Unlock,
        Command::EnrollFinger,
        Command::EnterDfu,
        Command::DfuData,
        Command::DfuExecute,
        Command::SensorCmd,
        Command::AttestReq,
        Command::Error,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| *c as u8 == code)
    }
}

/// A command code plus the request/response direction bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Opcode {
    pub command: Command,
    pub response: bool,
}

impl Opcode {
    pub const fn request(command: Command) -> Self {
        Self {
            command,
            response: false,
        }
    }

    pub const fn response(command: Command) -> Self {
        Self {
            command,
            response: true,
        }
    }

    pub fn to_byte(self) -> u8 {
        let base = self.command as u8;
        if self.response {
            base | RESPONSE_BIT
        } else {
            base
        }
    }

    /// `0x7F` is only valid without the response bit.
    pub fn from_byte(byte: u8) -> Result<Self, WireError> {
        let response = byte & RESPONSE_BIT != 0;
        match Command::from_code(byte & !RESPONSE_BIT) {
            Some(Command::Error) if response => Err(WireError::UnknownOpcode(byte)),
            Some(command) => Ok(Self { command, response }),
            None => Err(WireError::UnknownOpcode(byte)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub opcode: Opcode,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: Opcode, payload: Vec<u8>) -> Result<Self, WireError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(WireError::FrameTooLarge(payload.len()));
        }
        Ok(Self { opcode, payload })
    }

    pub fn request(command: Command, payload: Vec<u8>) -> Result<Self, WireError> {
        Self::new(Opcode::request(command), payload)
    }

    pub fn response(command: Command, payload: Vec<u8>) -> Result<Self, WireError> {
        Self::new(Opcode::response(command), payload)
    }

    pub fn is_error(&self) -> bool {
        self.opcode.command == Command::Error
    }
}

const CRC_TABLE: [u16; 256] = build_crc_table();

const fn build_crc_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut reg = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            reg = if reg & 0x8000 != 0 {
                (reg << 1) ^ 0x1021
            } else {
                reg << 1
            };
            bit += 1;
        }
        table[i] = reg;
        i += 1;
    }
    table
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(0xFFFF, |reg, &byte| {
        (reg << 8) ^ CRC_TABLE[usize::from((reg >> 8) as u8 ^ byte)]
    })
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, WireError> {
    let len = frame.payload.len();
    if len > MAX_PAYLOAD {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + len + CRC_LEN);
    out.push(MAGIC);
    out.push(frame.opcode.to_byte());
    out.extend_from_slice(&(len as u16).to_le_bytes());
    out.extend_from_slice(&frame.payload);
    let crc = crc16(&out[1..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

/// Total encoded size announced by a frame header, for stream readers.
pub fn frame_len_from_header(header: &[u8; HEADER_LEN]) -> Result<usize, WireError> {
    if header[0] != MAGIC {
        return Err(WireError::BadMagic);
    }
    let len = usize::from(u16::from_le_bytes([header[2], header[3]]));
    if len > MAX_PAYLOAD {
        return Err(WireError::FrameTooLarge(len));
    }
    Ok(HEADER_LEN + len + CRC_LEN)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    match bytes.first() {
        Some(&MAGIC) => {}
        Some(_) => return Err(WireError::BadMagic),
        None => return Err(WireError::LengthMismatch),
    }
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(WireError::LengthMismatch);
    }
    let len = usize::from(u16::from_le_bytes([bytes[2], bytes[3]]));
    if bytes.len() != HEADER_LEN + len + CRC_LEN {
        return Err(WireError::LengthMismatch);
    }
    if len > MAX_PAYLOAD {
        return Err(WireError::FrameTooLarge(len));
    }
    let body_end = HEADER_LEN + len;
    let stored = u16::from_be_bytes([bytes[body_end], bytes[body_end + 1]]);
    if crc16(&bytes[1..body_end]) != stored {
        return Err(WireError::BadCrc);
    }
    let opcode = Opcode::from_byte(bytes[1])?;
    Ok(Frame {
        opcode,
        payload: bytes[HEADER_LEN..body_end].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn crc16_bitwise(data: &[u8]) -> u16 {
        let mut reg: u16 = 0xFFFF;
        for &byte in data {
            reg ^= u16::from(byte) << 8;
            for _ in 0..8 {
                reg = if reg & 0x8000 != 0 {
                    (reg << 1) ^ 0x1021
                } else {
                    reg << 1
                };
            }
        }
        reg
    }

    #[test]
    fn crc_check_values() {
        assert_eq!(crc16(b""), 0xFFFF);
        assert_eq!(crc16(b"123456789"), 0x29B1);
        assert_eq!(crc16(&[0x01, 0x00, 0x00]), 0xFBAC);
    }

    #[test]
    fn empty_get_random_encoding() {
        let frame = Frame::request(Command::GetRandom, vec![]).unwrap();
        let bytes = encode_frame(&frame).unwrap();
        assert_eq!(bytes, [0xA5, 0x01, 0x00, 0x00, 0xFB, 0xAC]);
        assert_eq!(decode_frame(&bytes).unwrap(), frame);
    }

    #[test]
    fn oversized_payload_rejected() {
        let err = Frame::request(Command::DfuData, vec![0; 513]).unwrap_err();
        assert_eq!(err, WireError::FrameTooLarge(513));
        let frame = Frame {
            opcode: Opcode::request(Command::DfuData),
            payload: vec![0; 513],
        };
        assert_eq!(encode_frame(&frame), Err(WireError::FrameTooLarge(513)));
        assert!(Frame::request(Command::DfuData, vec![0; 512]).is_ok());
    }

    #[test]
    fn decode_errors_are_distinct() {
        let good = encode_frame(&Frame::request(Command::GetRandom, vec![]).unwrap()).unwrap();

        let mut bad_crc = good.clone();
        *bad_crc.last_mut().unwrap() ^= 0x01;
        assert_eq!(decode_frame(&bad_crc), Err(WireError::BadCrc));

        let mut bad_magic = good.clone();
        bad_magic[0] = 0x00;
        assert_eq!(decode_frame(&bad_magic), Err(WireError::BadMagic));

        assert_eq!(decode_frame(&good[..5]), Err(WireError::LengthMismatch));
        assert_eq!(decode_frame(&[]), Err(WireError::LengthMismatch));

        let mut unknown = vec![MAGIC, 0x42, 0, 0];
        let crc = crc16(&unknown[1..]);
        unknown.extend_from_slice(&crc.to_be_bytes());
        assert_eq!(decode_frame(&unknown), Err(WireError::UnknownOpcode(0x42)));
    }

    #[test]
    fn opcode_table() {
        assert_eq!(
            Opcode::from_byte(0x81).unwrap(),
            Opcode::response(Command::GetRandom)
        );
        assert_eq!(
            Opcode::from_byte(0x7F).unwrap(),
            Opcode::request(Command::Error)
        );
        assert!(Opcode::from_byte(0xFF).is_err());
        assert!(Opcode::from_byte(0x00).is_err());
        assert!(Opcode::from_byte(0x0B).is_err());
        let registered = (0u8..=255)
            .filter(|b| Opcode::from_byte(*b).is_ok())
            .count();
        assert_eq!(registered, 21);
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        let opcodes: Vec<u8> = (0u8..=255)
            .filter(|b| Opcode::from_byte(*b).is_ok())
            .collect();
        (
            proptest::sample::select(opcodes),
            proptest::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD),
        )
            .prop_map(|(op, payload)| Frame {
                opcode: Opcode::from_byte(op).unwrap(),
                payload,
            })
    }

    proptest! {
        #[test]
        fn round_trip(frame in arb_frame()) {
            let bytes = encode_frame(&frame).unwrap();
            prop_assert_eq!(decode_frame(&bytes).unwrap(), frame);
        }

        #[test]
        fn single_bit_flip_never_yields_the_same_frame(frame in arb_frame(), pos in any::<proptest::sample::Index>(), bit in 0u8..8) {
            let mut bytes = encode_frame(&frame).unwrap();
            let idx = pos.index(bytes.len());
            bytes[idx] ^= 1 << bit;
            if let Ok(decoded) = decode_frame(&bytes) {
                prop_assert_ne!(decoded, frame);
            }
        }

        #[test]
        fn crc_matches_bitwise(data in proptest::collection::vec(any::<u8>(), 0..256)) {
            prop_assert_eq!(crc16(&data), crc16_bitwise(&data));
        }
    }
}
