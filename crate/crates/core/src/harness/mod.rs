//! Scenario runner, ablation matrix, threat-model map and reports.

pub mod matrix;
pub mod report;
pub mod scenario;
pub mod threat;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::app::{App, AppBinaryModel};
use crate::attacker::{harvest_listen, Attacker};
use crate::broadcast::BroadcastChannel;
use crate::client::LockClient;
use crate::cloud::Cloud;
use crate::config;
use crate::cryptobox::VerificationKey;
use crate::lock::{Attestation, Lock, PhysicalAccess, SharedLock, TouchOutcome};
use crate::manufacturer::Manufacturer;
use crate::profile::SecurityProfile;
use crate::sensor::VictimId;
use crate::transport::{connect_cloud, connect_lock, CloudLink, TransportKind};

pub use matrix::{ablation_matrix, MatrixCell, MatrixRow, OutcomeMatrix, Soundness};
pub use report::{FullReport, ScenarioReport};
pub use scenario::{run_scenario, Scenario, ScenarioError, ScenarioLibrary};
pub use threat::ThreatModelMap;

/// One freshly built ecosystem: a manufacturer, its cloud, one lock and
/// the shared radio air the lock broadcasts into.
pub struct World {
    pub profile: SecurityProfile,
    pub seed: u64,
    pub transport: TransportKind,
    manufacturer: Manufacturer,
    cloud: Arc<Cloud>,
    lock: SharedLock,
    air: BroadcastChannel,
    rng: ChaCha20Rng,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("seed", &self.seed)
            .field("transport", &self.transport)
            .finish_non_exhaustive()
    }
}

impl World {
    pub fn new(profile: SecurityProfile, seed: u64, transport: TransportKind) -> Self {
        let mut manufacturer = Manufacturer::from_seed(seed);
        let air = BroadcastChannel::new();
        let lock = Lock::new(manufacturer.provision_lock(profile), air.clone()).shared();
        let cloud = Arc::new(Cloud::new(manufacturer.cloud_config(profile)));
        let rng = ChaCha20Rng::from_seed(manufacturer.next_seed());
        Self {
            profile,
            seed,
            transport,
            manufacturer,
            cloud,
            lock,
            air,
            rng,
        }
    }

    pub fn next_seed(&mut self) -> [u8; 32] {
        self.rng.gen()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn lock(&self) -> &SharedLock {
        &self.lock
    }

    pub fn cloud(&self) -> &Arc<Cloud> {
        &self.cloud
    }

    pub fn air(&self) -> &BroadcastChannel {
        &self.air
    }

    pub fn manufacturer(&self) -> &Manufacturer {
        &self.manufacturer
    }

    pub fn connect(&self, lock: &SharedLock) -> LockClient {
        LockClient::new(connect_lock(lock, self.transport))
    }

    pub fn lock_client(&self) -> LockClient {
        self.connect(&self.lock)
    }

    pub fn cloud_link(&self) -> Box<dyn CloudLink> {
        connect_cloud(&self.cloud, self.transport)
    }

    pub fn app_binary(&self) -> AppBinaryModel {
        self.manufacturer.app_binary(&self.profile)
    }

    pub fn app(&mut self, binary: AppBinaryModel, account: &str, link: Box<dyn CloudLink>) -> App {
        let seed = self.next_seed();
        App::new(binary, account, link, seed)
    }

    pub fn attacker(&mut self) -> Attacker {
        let seed = self.next_seed();
        Attacker::new(config::factory_key(), seed)
    }

    pub fn physical(&self) -> PhysicalAccess {
        PhysicalAccess::new(self.lock.clone())
    }

    pub fn ca_key(&self) -> VerificationKey {
        self.manufacturer.ca_key()
    }

    pub fn published_digests(&self) -> Vec<[u8; 32]> {
        self.manufacturer.catalog().published_digests()
    }

    pub fn scanner(&self) -> Scanner {
        Scanner {
            ca: self.ca_key(),
            published: self.published_digests(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Genuine,
    Unverified,
    FirmwareMismatch,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Genuine => "GENUINE",
            Verdict::Unverified => "UNVERIFIED",
            Verdict::FirmwareMismatch => "FIRMWARE_MISMATCH",
        })
    }
}

/// What a user's phone knows to check a device: the manufacturer CA key
/// and the published firmware digests.
#[derive(Clone, Debug)]
pub struct Scanner {
    pub ca: VerificationKey,
    pub published: Vec<[u8; 32]>,
}

impl Scanner {
    /// Attestation challenge, certificate chain, then firmware digest.
    pub fn scan_device(&self, lock: &mut LockClient, challenge: &[u8; 16]) -> Verdict {
        let Ok(raw) = lock.attest(challenge) else {
            return Verdict::Unverified;
        };
        let Some(att) = Attestation::from_bytes(&raw) else {
            return Verdict::Unverified;
        };
        if !att.verify(&self.ca, challenge) {
            return Verdict::Unverified;
        }
        if !self.published.contains(&att.firmware_digest) {
            return Verdict::FirmwareMismatch;
        }
        Verdict::Genuine
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VictimBehavior {
    #[default]
    TouchImmediately,
    ScanFirst,
}

impl std::str::FromStr for VictimBehavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "touch_immediately" => Ok(VictimBehavior::TouchImmediately),
            "scan_first" => Ok(VictimBehavior::ScanFirst),
            other => Err(format!("unknown victim behavior `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VictimOutcome {
    pub verdict: Option<Verdict>,
    pub touched: bool,
    pub touch: TouchOutcome,
}

/// A victim walks up to a lock. A scan-first victim only touches a
/// GENUINE device. Either way the victim wakes the lock the way it asks
/// (pressing the button if it has one) before touching.
pub fn victim_touch(
    access: &PhysicalAccess,
    radio: &mut LockClient,
    scanner: &Scanner,
    victim: VictimId,
    behavior: VictimBehavior,
    challenge: &[u8; 16],
) -> VictimOutcome {
    let verdict = match behavior {
        VictimBehavior::TouchImmediately => None,
        VictimBehavior::ScanFirst => Some(scanner.scan_device(radio, challenge)),
    };
    if matches!(verdict, Some(v) if v != Verdict::Genuine) {
        return VictimOutcome {
            verdict,
            touched: false,
            touch: TouchOutcome::default(),
        };
    }
    if access.needs_button() {
        access.press_button();
    }
    VictimOutcome {
        verdict,
        touched: true,
        touch: access.touch(victim),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterResult {
    pub victim: VictimId,
    pub outcome: VictimOutcome,
    pub harvested: usize,
    /// Harvested images byte-equal to the victim's own pseudo-image.
    pub harvested_victim: bool,
}

/// A random victim meets an attacker-built impostor droplock.
pub fn impostor_encounter(
    seed: u64,
    behavior: VictimBehavior,
    transport: TransportKind,
) -> EncounterResult {
    let mut world = World::new(SecurityProfile::hardened(), seed, transport);
    let mut attacker = world.attacker();
    let victim = VictimId(world.rng().gen());
    let challenge: [u8; 16] = world.rng().gen();
    let mut listener = world.air().listener();
    let impostor = attacker
        .build_impostor(
            config::droplock_image(),
            config::droplock_version(),
            world.air().clone(),
        )
        .shared();
    let access = PhysicalAccess::new(impostor.clone());
    let mut radio = world.connect(&impostor);
    let outcome = victim_touch(
        &access,
        &mut radio,
        &world.scanner(),
        victim,
        behavior,
        &challenge,
    );
    let images = harvest_listen(&mut listener);
    let expected = crate::lock::expected_image(victim);
    EncounterResult {
        victim,
        outcome,
        harvested: images.len(),
        harvested_victim: !images.is_empty() && images.iter().all(|i| *i == expected),
    }
}

/// Matrix, threat map with verdicts, and droplock_e2e under both presets.
pub fn full_report(
    library: &ScenarioLibrary,
    seed: u64,
    transport: TransportKind,
) -> Result<FullReport, ScenarioError> {
    let matrix = ablation_matrix(library, seed, transport);
    let soundness = matrix.soundness();
    let encounters = 20;
    let (mut aware, mut unaware) = (0, 0);
    for i in 0..encounters {
        let s = seed.wrapping_add(i as u64);
        aware += impostor_encounter(s, VictimBehavior::ScanFirst, transport).harvested;
        unaware += impostor_encounter(s, VictimBehavior::TouchImmediately, transport).harvested;
    }
    let awareness = threat::AwarenessSample {
        encounters,
        aware_harvested: aware,
        unaware_harvested: unaware,
    };
    let e2e = library.get("droplock_e2e")?;
    let scenarios = [
        scenario::RunConfig::new(crate::profile::Preset::Vulnerable, seed),
        scenario::RunConfig::new(crate::profile::Preset::Hardened, seed),
    ]
    .into_iter()
    .map(|mut cfg| {
        cfg.transport = transport;
        run_scenario(e2e, &cfg)
    })
    .collect();
    Ok(FullReport {
        schema: report::FULL_REPORT_SCHEMA.to_string(),
        seed,
        transport,
        control_verdicts: threat::control_verdicts(&matrix, awareness),
        matrix,
        soundness,
        threat_model: ThreatModelMap::droplock(),
        scenarios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn genuine_hardened_lock_scans_genuine() {
        let w = World::new(SecurityProfile::hardened(), 5, TransportKind::Inproc);
        let mut c = w.lock_client();
        assert_eq!(w.scanner().scan_device(&mut c, &[1; 16]), Verdict::Genuine);
    }

    #[test]
    fn vulnerable_lock_is_unverified() {
        let w = World::new(SecurityProfile::vulnerable(), 5, TransportKind::Inproc);
        let mut c = w.lock_client();
        assert_eq!(
            w.scanner().scan_device(&mut c, &[1; 16]),
            Verdict::Unverified
        );
    }

    #[test]
    fn tampered_firmware_is_a_mismatch() {
        let w = World::new(SecurityProfile::hardened(), 5, TransportKind::Inproc);
        let pkg = crate::attacker::forge_dfu(b"not in the catalog", "9.9.9")
            .sign_with(w.manufacturer().firmware_signer());
        w.lock().lock().unwrap().install_unchecked(pkg);
        let mut c = w.lock_client();
        assert_eq!(
            w.scanner().scan_device(&mut c, &[1; 16]),
            Verdict::FirmwareMismatch
        );
    }

    #[test]
    fn aware_victim_walks_away_from_impostor() {
        let r = impostor_encounter(9, VictimBehavior::ScanFirst, TransportKind::Inproc);
        assert_eq!(r.outcome.verdict, Some(Verdict::Unverified));
        assert!(!r.outcome.touched);
        assert_eq!(r.harvested, 0);
        let r = impostor_encounter(9, VictimBehavior::TouchImmediately, TransportKind::Inproc);
        assert_eq!(r.harvested, 1);
        assert!(r.harvested_victim);
    }

    #[test]
    fn aware_victim_touches_genuine_lock() {
        let w = World::new(SecurityProfile::hardened(), 5, TransportKind::Inproc);
        let mut c = w.lock_client();
        let o = victim_touch(
            &w.physical(),
            &mut c,
            &w.scanner(),
            VictimId(3),
            VictimBehavior::ScanFirst,
            &[2; 16],
        );
        assert_eq!(o.verdict, Some(Verdict::Genuine));
        assert!(o.touched && o.touch.captured);
    }
}
