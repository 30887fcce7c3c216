//! Byte channels between peers and endpoints.
//!
//! Two interchangeable implementations: an in-process queue pair served by a
//! worker thread, and a loopback TCP stream. Lock traffic is delimited by the
//! frame header itself; cloud traffic by a `u32` LE length prefix.

use std::fmt;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::cloud::Cloud;
use crate::error::ErrorCode;
use crate::lock::{error_frame, SharedLock};
use crate::wire::{encode_frame, frame_len_from_header, HEADER_LEN};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Inproc,
    Loopback,
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportKind::Inproc => "inproc",
            TransportKind::Loopback => "loopback",
        })
    }
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(TransportKind::Inproc),
            "loopback" => Ok(TransportKind::Loopback),
            other => Err(format!(
                "unknown transport `{other}` (expected inproc|loopback)"
            )),
        }
    }
}

/// A peer's radio link to one lock: one encoded frame out, one back.
pub trait LockLink: Send {
    fn exchange(&mut self, frame: &[u8]) -> Result<Vec<u8>, ErrorCode>;

    /// Drops the connection and returns once the lock has noticed.
    fn disconnect(&mut self);
}

/// A client's HTTPS connection to the vendor API.
pub trait CloudLink: Send {
    fn call(&mut self, envelope: &[u8]) -> Result<Vec<u8>, ErrorCode>;

    /// Whether the far end presented the vendor's pinned certificate.
    fn certificate_pinned(&self) -> bool {
        true
    }
}

impl<T: LockLink + ?Sized> LockLink for Box<T> {
    fn exchange(&mut self, frame: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        (**self).exchange(frame)
    }

    fn disconnect(&mut self) {
        (**self).disconnect()
    }
}

impl<T: CloudLink + ?Sized> CloudLink for Box<T> {
    fn call(&mut self, envelope: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        (**self).call(envelope)
    }

    fn certificate_pinned(&self) -> bool {
        (**self).certificate_pinned()
    }
}

pub fn connect_lock(lock: &SharedLock, kind: TransportKind) -> Box<dyn LockLink> {
    match kind {
        TransportKind::Inproc => Box::new(QueueLink::spawn(lock.clone())),
        TransportKind::Loopback => {
            Box::new(StreamLockLink::spawn(lock.clone()).expect("loopback listener"))
        }
    }
}

pub fn connect_cloud(cloud: &Arc<Cloud>, kind: TransportKind) -> Box<dyn CloudLink> {
    match kind {
        TransportKind::Inproc => Box::new(DirectCloudLink {
            cloud: cloud.clone(),
        }),
        TransportKind::Loopback => {
            Box::new(StreamCloudLink::spawn(cloud.clone()).expect("loopback listener"))
        }
    }
}

/// Queue pair with a worker thread owning the lock side.
pub struct QueueLink {
    tx: Sender<Option<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
}

impl QueueLink {
    pub fn spawn(lock: SharedLock) -> Self {
        // `None` is a disconnect, acknowledged with an empty reply
        let (req_tx, req_rx) = channel::<Option<Vec<u8>>>();
        let (resp_tx, resp_rx) = channel::<Vec<u8>>();
        thread::spawn(move || {
            for req in req_rx {
                let mut lock = lock.lock().expect("lock mutex");
                let resp = match req {
                    Some(bytes) => lock.handle_bytes(&bytes),
                    None => {
                        lock.disconnect();
                        Vec::new()
                    }
                };
                drop(lock);
                if resp_tx.send(resp).is_err() {
                    break;
                }
            }
        });
        Self {
            tx: req_tx,
            rx: resp_rx,
        }
    }
}

impl LockLink for QueueLink {
    fn exchange(&mut self, frame: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        self.tx
            .send(Some(frame.to_vec()))
            .map_err(|_| ErrorCode::Transport)?;
        self.rx.recv().map_err(|_| ErrorCode::Transport)
    }

    fn disconnect(&mut self) {
        if self.tx.send(None).is_ok() {
            let _ = self.rx.recv();
        }
    }
}

fn read_frame(stream: &mut TcpStream) -> std::io::Result<Result<Vec<u8>, ()>> {
    let mut header = [0u8; HEADER_LEN];
    stream.read_exact(&mut header)?;
    let Ok(total) = frame_len_from_header(&header) else {
        return Ok(Err(()));
    };
    let mut buf = vec![0u8; total];
    buf[..HEADER_LEN].copy_from_slice(&header);
    stream.read_exact(&mut buf[HEADER_LEN..])?;
    Ok(Ok(buf))
}

/// Loopback byte stream; frames are self-delimiting.
pub struct StreamLockLink {
    stream: TcpStream,
}

impl StreamLockLink {
    pub fn spawn(lock: SharedLock) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        thread::spawn(move || {
            let Ok((mut conn, _)) = listener.accept() else {
                return;
            };
            loop {
                match read_frame(&mut conn) {
                    Ok(Ok(req)) => {
                        let resp = lock.lock().expect("lock mutex").handle_bytes(&req);
                        if conn.write_all(&resp).is_err() {
                            break;
                        }
                    }
                    Ok(Err(())) => {
                        // cannot resynchronise a byte stream after a bad header
                        let bad =
                            encode_frame(&error_frame(ErrorCode::BadFrame)).expect("error frame");
                        let _ = conn.write_all(&bad);
                        break;
                    }
                    Err(_) => break,
                }
            }
            // before `conn` drops, so a peer waiting for EOF sees the session gone
            lock.lock().expect("lock mutex").disconnect();
        });
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl LockLink for StreamLockLink {
    /// Half-closes, then waits for the lock side to close in turn.
    fn disconnect(&mut self) {
        if self.stream.shutdown(std::net::Shutdown::Write).is_ok() {
            let mut sink = Vec::new();
            let _ = self.stream.read_to_end(&mut sink);
        }
    }

    fn exchange(&mut self, frame: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        self.stream
            .write_all(frame)
            .map_err(|_| ErrorCode::Transport)?;
        match read_frame(&mut self.stream) {
            Ok(Ok(resp)) => Ok(resp),
            _ => Err(ErrorCode::Transport),
        }
    }
}

pub struct DirectCloudLink {
    cloud: Arc<Cloud>,
}

impl DirectCloudLink {
    pub fn new(cloud: Arc<Cloud>) -> Self {
        Self { cloud }
    }
}

impl CloudLink for DirectCloudLink {
    fn call(&mut self, envelope: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        if !self.cloud.is_online() {
            return Err(ErrorCode::CloudUnreachable);
        }
        Ok(self.cloud.handle(envelope))
    }
}

fn read_prefixed(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

fn write_prefixed(stream: &mut TcpStream, body: &[u8]) -> std::io::Result<()> {
    stream.write_all(&(body.len() as u32).to_le_bytes())?;
    stream.write_all(body)
}

/// Loopback API connection; an offline cloud drops the connection.
pub struct StreamCloudLink {
    stream: TcpStream,
}

impl StreamCloudLink {
    pub fn spawn(cloud: Arc<Cloud>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        thread::spawn(move || {
            let Ok((mut conn, _)) = listener.accept() else {
                return;
            };
            while let Ok(req) = read_prefixed(&mut conn) {
                if !cloud.is_online() {
                    break;
                }
                if write_prefixed(&mut conn, &cloud.handle(&req)).is_err() {
                    break;
                }
            }
        });
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl CloudLink for StreamCloudLink {
    fn call(&mut self, envelope: &[u8]) -> Result<Vec<u8>, ErrorCode> {
        write_prefixed(&mut self.stream, envelope).map_err(|_| ErrorCode::CloudUnreachable)?;
        read_prefixed(&mut self.stream).map_err(|_| ErrorCode::CloudUnreachable)
    }
}
