//! Desk-scale testbed for smart padlock security.
//!
//! The crate emulates every party of a fingerprint padlock ecosystem (lock,
//! fingerprint sensor, vendor cloud, phone app) together with an attacker
//! toolkit, and runs scripted scenarios that either reproduce the offline
//! "droplock" conversion chain or show which control stops it.
//!
//! Layering, bottom to top:
//!
//! * [`wire`] and [`cryptobox`]: framing, CRC and crypto primitives.
//! * [`sensor`], [`firmware`], [`session`], [`broadcast`]: building blocks the
//!   endpoints share.
//! * [`lock`], [`cloud`], [`app`], [`attacker`]: the parties.
//! * [`harness`]: scenario runner, ablation matrix and reports.

pub mod app;
pub mod attacker;
pub mod broadcast;
pub mod client;
pub mod cloud;
pub mod config;
pub mod cryptobox;
pub mod error;
pub mod firmware;
pub mod harness;
pub mod lock;
pub mod manufacturer;
pub mod profile;
pub mod sensor;
pub mod session;
pub mod transport;
pub mod wire;

pub use error::ErrorCode;
pub use profile::{ControlId, SecurityProfile};
