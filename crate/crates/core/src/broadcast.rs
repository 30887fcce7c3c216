//! The covert radio channel a droplock emits harvested images on.
//!
//! Append-only byte log of records `len (u32 LE) || body`, where body is
//! `0x01 || width (u16 LE) || height (u16 LE) || pixels`.

use std::sync::{Arc, Mutex};

use crate::sensor::FingerprintImage;

const IMAGE_RECORD: u8 = 0x01;

#[derive(Clone, Debug, Default)]
pub struct BroadcastChannel {
    log: Arc<Mutex<Vec<u8>>>,
}

impl BroadcastChannel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit(&self, image: &FingerprintImage) {
        let mut body = Vec::with_capacity(5 + image.pixels().len());
        body.push(IMAGE_RECORD);
        body.extend_from_slice(&image.width().to_le_bytes());
        body.extend_from_slice(&image.height().to_le_bytes());
        body.extend_from_slice(image.pixels());
        let mut log = self.log.lock().expect("broadcast lock");
        log.extend_from_slice(&(body.len() as u32).to_le_bytes());
        log.extend_from_slice(&body);
    }

    pub fn len_bytes(&self) -> usize {
        self.log.lock().expect("broadcast lock").len()
    }

    pub fn snapshot(&self) -> Vec<u8> {
        self.log.lock().expect("broadcast lock").clone()
    }

    pub fn listener(&self) -> BroadcastListener {
        BroadcastListener {
            channel: self.clone(),
            cursor: 0,
        }
    }
}

/// A receiver within radio range; remembers how far it has read.
#[derive(Clone, Debug)]
pub struct BroadcastListener {
    channel: BroadcastChannel,
    cursor: usize,
}

impl BroadcastListener {
    /// Everything emitted since the last drain. Malformed records are skipped.
    pub fn drain(&mut self) -> Vec<FingerprintImage> {
        let log = self.channel.snapshot();
        let (images, end) = parse_records(&log, self.cursor);
        self.cursor = end;
        images
    }
}

pub fn parse_records(log: &[u8], mut pos: usize) -> (Vec<FingerprintImage>, usize) {
    let mut out = Vec::new();
    while let Some(len_bytes) = log.get(pos..pos + 4) {
        let len = u32::from_le_bytes(len_bytes.try_into().expect("four bytes")) as usize;
        let Some(body) = log.get(pos + 4..pos + 4 + len) else {
            break;
        };
        pos += 4 + len;
        if body.len() < 5 || body[0] != IMAGE_RECORD {
            continue;
        }
        let w = u16::from_le_bytes([body[1], body[2]]);
        let h = u16::from_le_bytes([body[3], body[4]]);
        if let Some(img) = FingerprintImage::from_parts(w, h, body[5..].to_vec()) {
            out.push(img);
        }
    }
    (out, pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::VictimId;

    #[test]
    fn listener_sees_each_record_once() {
        let ch = BroadcastChannel::new();
        let mut rx = ch.listener();
        assert!(rx.drain().is_empty());
        let a = FingerprintImage::synthesize(VictimId(1));
        let b = FingerprintImage::synthesize(VictimId(2));
        ch.emit(&a);
        ch.emit(&b);
        assert_eq!(rx.drain(), vec![a.clone(), b]);
        assert!(rx.drain().is_empty());
        ch.emit(&a);
        assert_eq!(rx.drain(), vec![a]);
    }

    #[test]
    fn record_layout() {
        let ch = BroadcastChannel::new();
        let img = FingerprintImage::synthesize(VictimId(5));
        ch.emit(&img);
        let raw = ch.snapshot();
        assert_eq!(&raw[..4], &(5 + 25_600u32).to_le_bytes());
        assert_eq!(&raw[4..9], &[0x01, 160, 0, 160, 0]);
        assert_eq!(&raw[9..], img.pixels());
    }

    #[test]
    fn concurrent_readers() {
        let ch = BroadcastChannel::new();
        let img = FingerprintImage::synthesize(VictimId(9));
        let writer = {
            let ch = ch.clone();
            let img = img.clone();
            std::thread::spawn(move || {
                for _ in 0..20 {
                    ch.emit(&img);
                }
            })
        };
        let mut rx = ch.listener();
        let mut seen = 0;
        while seen < 20 {
            seen += rx.drain().len();
        }
        writer.join().unwrap();
        assert_eq!(seen, 20);
    }
}
