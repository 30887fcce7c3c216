//! Scripted scenarios loaded from TOML fixtures.
//!
//! A scenario is a list of `[[steps]]`, each tagged by `op`, plus
//! `[[expect]]` entries giving the expected outcome per profile. The first
//! failing step aborts the run with `FAILS_AT:<step>:<ERROR>`; the step
//! label is the sub-step that failed (for example `session_init` inside
//! `offline_enroll`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::report::{
    BroadcastSummary, FirmwareSummary, HarvestedImage, ScenarioReport, StepRecord, StepStatus,
    REPORT_SCHEMA,
};
use super::{victim_touch, VictimBehavior, World};
use crate::app::{App, AppBinaryModel};
use crate::attacker::{
    chip_off_flash, decrypt_captured, extract_static_key, forge_dfu, harvest_listen,
    patch_app_pinning, physical_dump, recover_identities, Attacker, CaptureLog, DecryptedTraffic,
    InterceptingProxy,
};
use crate::broadcast::{parse_records, BroadcastListener};
use crate::client::LockClient;
use crate::config;
use crate::cryptobox::{sha256, SymmetricKey};
use crate::error::{ErrorCode, StepError};
use crate::firmware::FirmwarePackage;
use crate::lock::{expected_image, DeviceIdentity, LockEvent, PhysicalAccess, SharedLock};
use crate::profile::{AblationTarget, ControlId, Preset, SecurityProfile};
use crate::sensor::{FingerprintImage, VictimId};
use crate::transport::{CloudLink, TransportKind};

const OWNER_ACCOUNT: &str = "owner@example.test";

const BUILTIN: [(&str, &str); 16] = [
    (
        "droplock_e2e",
        include_str!("../../fixtures/scenarios/droplock_e2e.toml"),
    ),
    (
        "impostor_encounter",
        include_str!("../../fixtures/scenarios/impostor_encounter.toml"),
    ),
    (
        "enrollment_race",
        include_str!("../../fixtures/scenarios/enrollment_race.toml"),
    ),
    (
        "owner_lifecycle",
        include_str!("../../fixtures/scenarios/owner_lifecycle.toml"),
    ),
    (
        "cloud_offline",
        include_str!("../../fixtures/scenarios/cloud_offline.toml"),
    ),
    (
        "stolen_identity",
        include_str!("../../fixtures/scenarios/stolen_identity.toml"),
    ),
    ("row_a", include_str!("../../fixtures/scenarios/row_a.toml")),
    ("row_b", include_str!("../../fixtures/scenarios/row_b.toml")),
    ("row_f", include_str!("../../fixtures/scenarios/row_f.toml")),
    ("row_g", include_str!("../../fixtures/scenarios/row_g.toml")),
    ("row_h", include_str!("../../fixtures/scenarios/row_h.toml")),
    (
        "row_c01",
        include_str!("../../fixtures/scenarios/row_c01.toml"),
    ),
    (
        "row_c02",
        include_str!("../../fixtures/scenarios/row_c02.toml"),
    ),
    (
        "row_c03",
        include_str!("../../fixtures/scenarios/row_c03.toml"),
    ),
    (
        "row_c04",
        include_str!("../../fixtures/scenarios/row_c04.toml"),
    ),
    (
        "row_c06",
        include_str!("../../fixtures/scenarios/row_c06.toml"),
    ),
];

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Succeeds,
    FailsAt { step: String, error: ErrorCode },
}

impl Outcome {
    pub fn fails_at(e: &StepError) -> Self {
        Outcome::FailsAt {
            step: e.step.to_string(),
            error: e.code,
        }
    }

    pub fn succeeded(&self) -> bool {
        *self == Outcome::Succeeds
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Succeeds => f.write_str("SUCCEEDS"),
            Outcome::FailsAt { step, error } => write!(f, "FAILS_AT:{step}:{error}"),
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "SUCCEEDS" {
            return Ok(Outcome::Succeeds);
        }
        let bad = || format!("bad outcome `{s}` (expected SUCCEEDS or FAILS_AT:<step>:<ERROR>)");
        let rest = s.strip_prefix("FAILS_AT:").ok_or_else(bad)?;
        let (step, code) = rest.rsplit_once(':').ok_or_else(bad)?;
        if step.is_empty() {
            return Err(bad());
        }
        Ok(Outcome::FailsAt {
            step: step.to_string(),
            error: code.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfuUntil {
    /// The package must be installed.
    #[default]
    Install,
    /// Passing DFU validation is enough; a later boot refusal still counts.
    Validation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Lock,
    Impostor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    /// Factory-key session and ENROLL with an attacker-chosen identity.
    OfflineEnroll,
    /// Session from a known identity, derived without the cloud.
    OfflineSession,
    Unlock,
    EnterDfu,
    ForgeDfu {
        #[serde(default)]
        version: Option<String>,
    },
    DfuReceive {
        #[serde(default)]
        until: DfuUntil,
    },
    VictimTouch {
        victim: u64,
        #[serde(default)]
        behavior: VictimBehavior,
        #[serde(default)]
        target: Target,
    },
    Harvest,
    OwnerEnroll,
    OwnerUnlock,
    OwnerEnterDfu,
    OwnerFota {
        version: String,
    },
    /// Repacked app through a MitM proxy; the owner unlocks.
    MitmUnlock,
    /// Passive tap on the owner's API traffic; the owner unlocks.
    TapOwnerUnlock,
    ExtractStaticKey,
    DecryptCaptured,
    /// Hands the attacker identities recovered from decrypted traffic.
    UseRecoveredIdentity,
    /// Harness grant: the attacker learns the owner's identity.
    GrantIdentity,
    PhysicalDump,
    OpenEnclosure,
    ChipOffFlash,
    /// Harness prerequisite: droplock firmware installed without checks.
    HarnessInstallDroplock,
    BuildImpostor,
    /// Genuine lock and impostor scanned side by side.
    ImpostorScan,
    CloudOffline,
    EnrollmentRace {
        #[serde(default = "yes")]
        attacker_first: bool,
    },
}

fn yes() -> bool {
    true
}

impl Step {
    pub fn name(&self) -> String {
        serde_json::to_value(self).expect("serializable")["op"]
            .as_str()
            .expect("tagged")
            .to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub profile: Preset,
    #[serde(default)]
    pub ablate: Vec<AblationTarget>,
    pub outcome: Outcome,
    #[serde(default)]
    pub harvested: Option<usize>,
    #[serde(default)]
    pub registry: Option<usize>,
}

impl Expectation {
    pub fn profile(&self) -> SecurityProfile {
        SecurityProfile::preset(self.profile).with_ablations(&self.ablate)
    }
}

/// Marks a scenario as the minimal exploit for one matrix row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSpec {
    pub control: ControlId,
    pub exploit: String,
    /// Outcome when the row's control is hardened.
    pub blocked: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub row: Option<RowSpec>,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// First expectation declared for a profile equal to `profile`.
    pub fn expectation_for(&self, profile: &SecurityProfile) -> Option<&Expectation> {
        self.expect.iter().find(|e| e.profile() == *profile)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("UNKNOWN_SCENARIO: {0}")]
    UnknownScenario(String),
    #[error("invalid scenario {file}: {message}")]
    Invalid { file: String, message: String },
    #[error("reading {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug)]
pub struct ScenarioLibrary {
    scenarios: BTreeMap<String, Scenario>,
}

impl ScenarioLibrary {
    pub fn builtin() -> Self {
        let scenarios = BUILTIN
            .iter()
            .map(|(file, text)| {
                let s = Scenario::parse(text)
                    .unwrap_or_else(|e| panic!("built-in scenario {file}: {e}"));
                (s.name.clone(), s)
            })
            .collect();
        Self { scenarios }
    }

    /// Adds every `*.toml` in `dir`, replacing built-ins of the same name.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), ScenarioError> {
        let io = |source| ScenarioError::Io {
            file: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|source| ScenarioError::Io {
                file: p.display().to_string(),
                source,
            })?;
            let s = Scenario::parse(&text).map_err(|message| ScenarioError::Invalid {
                file: p.display().to_string(),
                message,
            })?;
            self.scenarios.insert(s.name.clone(), s);
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Scenario, ScenarioError> {
        self.scenarios
            .get(name)
            .ok_or_else(|| ScenarioError::UnknownScenario(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.scenarios.keys().map(String::as_str)
    }

    pub fn rows(&self) -> Vec<&Scenario> {
        let mut rows: Vec<&Scenario> = self
            .scenarios
            .values()
            .filter(|s| s.row.is_some())
            .collect();
        rows.sort_by_key(|s| s.row.as_ref().map(|r| r.control));
        rows
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub ablations: Vec<AblationTarget>,
    pub seed: u64,
    pub transport: TransportKind,
}

impl RunConfig {
    pub fn new(preset: Preset, seed: u64) -> Self {
        Self {
            preset,
            ablations: Vec::new(),
            seed,
            transport: TransportKind::Inproc,
        }
    }

    pub fn profile(&self) -> SecurityProfile {
        SecurityProfile::preset(self.preset).with_ablations(&self.ablations)
    }
}

struct Owner {
    app: App,
    identity: Option<DeviceIdentity>,
}

struct Run {
    world: World,
    attacker: Attacker,
    /// The attacker's connection to the lock, kept across steps until
    /// someone else needs the radio.
    attacker_radio: Option<LockClient>,
    identity: Option<DeviceIdentity>,
    forged: Option<FirmwarePackage>,
    listener: BroadcastListener,
    touched: Vec<VictimId>,
    harvested: Vec<FingerprintImage>,
    owner: Option<Owner>,
    capture: Option<CaptureLog>,
    static_key: Option<SymmetricKey>,
    decrypted: Option<DecryptedTraffic>,
    impostor: Option<SharedLock>,
}

type StepResult = Result<String, StepError>;

fn fail(step: &'static str, code: ErrorCode) -> StepError {
    StepError::new(step, code)
}

impl Run {
    fn new(world: World) -> Self {
        let mut world = world;
        let attacker = world.attacker();
        let listener = world.air().listener();
        Self {
            world,
            attacker,
            attacker_radio: None,
            identity: None,
            forged: None,
            listener,
            touched: Vec::new(),
            harvested: Vec::new(),
            owner: None,
            capture: None,
            static_key: None,
            decrypted: None,
            impostor: None,
        }
    }

    fn forged(&mut self) -> FirmwarePackage {
        self.forged
            .get_or_insert_with(|| forge_dfu(config::droplock_image(), config::droplock_version()))
            .clone()
    }

    fn radio(&mut self) -> &mut LockClient {
        if self.attacker_radio.is_none() {
            self.attacker_radio = Some(self.world.lock_client());
        }
        self.attacker_radio.as_mut().expect("just set")
    }

    /// A lock serves one connection at a time; the attacker steps away.
    fn free_radio(&mut self) {
        if let Some(r) = self.attacker_radio.take() {
            r.hang_up();
        }
    }

    fn owner(&mut self) -> &mut Owner {
        if self.owner.is_none() {
            let binary = self.world.app_binary();
            let link = self.world.cloud_link();
            let app = self.world.app(binary, OWNER_ACCOUNT, link);
            self.owner = Some(Owner {
                app,
                identity: None,
            });
        }
        self.owner.as_mut().expect("just set")
    }

    /// Runs an owner flow over its own short-lived connection.
    fn as_owner<T>(
        &mut self,
        f: impl FnOnce(&mut Owner, &mut LockClient) -> Result<T, StepError>,
    ) -> Result<T, StepError> {
        self.free_radio();
        let mut radio = self.world.lock_client();
        let r = f(self.owner(), &mut radio);
        radio.hang_up();
        r
    }

    fn impostor(&mut self) -> SharedLock {
        if self.impostor.is_none() {
            let lock = self.attacker.build_impostor(
                config::droplock_image(),
                config::droplock_version(),
                self.world.air().clone(),
            );
            self.impostor = Some(lock.shared());
        }
        self.impostor.clone().expect("just set")
    }

    /// Owner unlock with the app talking through `link`.
    fn owner_unlock_via(
        &mut self,
        binary: AppBinaryModel,
        link: Box<dyn CloudLink>,
    ) -> Result<bool, ErrorCode> {
        self.free_radio();
        let mut app = self.world.app(binary, OWNER_ACCOUNT, link);
        let mut radio = self.world.lock_client();
        app.unlock_flow(&mut radio).map_err(|e| e.code)
    }

    fn step(&mut self, step: &Step) -> StepResult {
        match step {
            Step::OfflineEnroll => {
                let chosen = self.attacker.choose_identity();
                let id = {
                    let radio = self
                        .attacker_radio
                        .get_or_insert_with(|| self.world.lock_client());
                    self.attacker
                        .offline_enroll(radio, chosen.serial, chosen.key)?
                };
                self.identity = Some(id);
                Ok(format!(
                    "lock enrolled as serial {}; cloud registry has {} entries",
                    hex::encode(id.serial),
                    self.world.cloud().registry_len()
                ))
            }
            Step::OfflineSession => {
                let id = self
                    .identity
                    .ok_or(fail("offline_session", ErrorCode::NoIdentity))?;
                let radio = self
                    .attacker_radio
                    .get_or_insert_with(|| self.world.lock_client());
                let mode = self.attacker.offline_session(radio, &id)?;
                Ok(format!("session active ({mode:?}) without cloud contact"))
            }
            Step::Unlock => {
                let open = self.radio().unlock().map_err(StepError::at("unlock"))?;
                Ok(format!("bolt open: {open}"))
            }
            Step::EnterDfu => {
                self.radio()
                    .enter_dfu()
                    .map_err(StepError::at("enter_dfu"))?;
                Ok("lock in DFU mode".into())
            }
            Step::ForgeDfu { version } => {
                let v = version
                    .clone()
                    .unwrap_or_else(|| config::droplock_version().to_string());
                let pkg = forge_dfu(config::droplock_image(), &v);
                let detail = format!("droplock {v}, crc16 {:04x}, unsigned", pkg.crc16);
                self.forged = Some(pkg);
                Ok(detail)
            }
            Step::DfuReceive { until } => {
                let pkg = self.forged();
                match self.radio().send_package(&pkg) {
                    Ok(v) => Ok(format!("installed {v}")),
                    Err(ErrorCode::BootVerifyFailed) if *until == DfuUntil::Validation => {
                        Ok("passed DFU validation; secure boot refused the image".into())
                    }
                    Err(code) => Err(fail("dfu_receive", code)),
                }
            }
            Step::VictimTouch {
                victim,
                behavior,
                target,
            } => {
                self.free_radio();
                let lock = match target {
                    Target::Lock => self.world.lock().clone(),
                    Target::Impostor => self.impostor(),
                };
                let access = PhysicalAccess::new(lock.clone());
                let mut radio = self.world.connect(&lock);
                let challenge: [u8; 16] = self.world.rng().gen();
                let scanner = self.world.scanner();
                let o = victim_touch(
                    &access,
                    &mut radio,
                    &scanner,
                    VictimId(*victim),
                    *behavior,
                    &challenge,
                );
                if o.touched {
                    self.touched.push(VictimId(*victim));
                }
                let scan = o.verdict.map(|v| format!("scan {v}; ")).unwrap_or_default();
                Ok(format!(
                    "{scan}touched: {}, unlocked: {}, emitted: {}",
                    o.touched, o.touch.unlocked, o.touch.emitted
                ))
            }
            Step::Harvest => {
                let images = harvest_listen(&mut self.listener);
                let n = images.len();
                self.harvested.extend(images);
                if n == 0 {
                    // the attacker only sees silence; the report explains it
                    let blocked = self
                        .world
                        .lock()
                        .lock()
                        .expect("lock mutex")
                        .events()
                        .contains(&LockEvent::BlockedByIsolation);
                    let code = if blocked {
                        ErrorCode::BlockedByIsolation
                    } else {
                        ErrorCode::NothingHarvested
                    };
                    return Err(fail("harvest", code));
                }
                let expected: Vec<FingerprintImage> =
                    self.touched.iter().map(|v| expected_image(*v)).collect();
                if !self.harvested.iter().all(|img| expected.contains(img)) {
                    return Err(fail("harvest", ErrorCode::HarvestMismatch));
                }
                Ok(format!(
                    "{n} image(s) received, byte-equal to the victims' prints"
                ))
            }
            Step::OwnerEnroll => {
                let id = self.as_owner(|o, radio| {
                    let id = o.app.enroll_flow(radio)?;
                    o.identity = Some(id);
                    Ok(id)
                })?;
                Ok(format!(
                    "owner enrolled and registered serial {}",
                    hex::encode(id.serial)
                ))
            }
            Step::OwnerUnlock => {
                let open = self.as_owner(|o, radio| o.app.unlock_flow(radio))?;
                Ok(format!("bolt open: {open}"))
            }
            Step::OwnerEnterDfu => {
                self.as_owner(|o, radio| o.app.enter_dfu_flow(radio))?;
                Ok("owner put the lock in DFU mode".into())
            }
            Step::OwnerFota { version } => {
                let v = self.as_owner(|o, radio| o.app.fota_flow(radio, version))?;
                Ok(format!("installed {v}"))
            }
            Step::MitmUnlock => {
                let patched = patch_app_pinning(&self.world.app_binary());
                let (proxy, log) = InterceptingProxy::mitm(self.world.cloud_link());
                self.capture = Some(log.clone());
                self.owner_unlock_via(patched, Box::new(proxy))
                    .map_err(|c| fail("intercept_api", c))?;
                let n = log.lock().expect("capture log").len();
                Ok(format!("{n} envelopes captured through the MitM proxy"))
            }
            Step::TapOwnerUnlock => {
                let binary = self.world.app_binary();
                let (proxy, log) = InterceptingProxy::tap(self.world.cloud_link());
                self.capture = Some(log.clone());
                self.owner_unlock_via(binary, Box::new(proxy))
                    .map_err(|c| fail("intercept_api", c))?;
                let n = log.lock().expect("capture log").len();
                Ok(format!("{n} envelopes captured"))
            }
            Step::ExtractStaticKey => {
                let k = extract_static_key(&self.world.app_binary());
                self.static_key = Some(k);
                Ok("static API key lifted from the app binary".into())
            }
            Step::DecryptCaptured => {
                let key = self
                    .static_key
                    .unwrap_or_else(|| extract_static_key(&self.world.app_binary()));
                let traffic = self
                    .capture
                    .as_ref()
                    .map(|l| l.lock().expect("capture log").clone())
                    .unwrap_or_default();
                let d =
                    decrypt_captured(&traffic, &key).map_err(|c| fail("decrypt_captured", c))?;
                let ids = recover_identities(&d).len();
                let detail = format!(
                    "{} transcripts, {} repeated blocks, {ids} identities recovered",
                    d.transcripts.len(),
                    d.repetitions.len()
                );
                self.decrypted = Some(d);
                Ok(detail)
            }
            Step::UseRecoveredIdentity => {
                let id = self
                    .decrypted
                    .as_ref()
                    .and_then(|d| recover_identities(d).into_iter().next())
                    .ok_or(fail("use_recovered_identity", ErrorCode::NoIdentity))?;
                self.identity = Some(id);
                Ok(format!(
                    "attacker holds identity for serial {}",
                    hex::encode(id.serial)
                ))
            }
            Step::GrantIdentity => {
                let id = self
                    .owner
                    .as_ref()
                    .and_then(|o| o.identity)
                    .ok_or(fail("grant_identity", ErrorCode::NoIdentity))?;
                self.identity = Some(id);
                Ok("attacker granted the owner's identity".into())
            }
            Step::PhysicalDump => {
                let d =
                    physical_dump(&self.world.physical()).map_err(|c| fail("physical_dump", c))?;
                Ok(format!(
                    "dumped serial {}, identity {}, {} byte firmware, {} templates",
                    hex::encode(d.manufacturing_serial),
                    if d.identity.is_some() {
                        "present"
                    } else {
                        "absent"
                    },
                    d.firmware_image.len(),
                    d.enrolled_templates.len()
                ))
            }
            Step::OpenEnclosure => {
                let access = self.world.physical();
                access.open_enclosure();
                if self.world.lock().lock().expect("lock mutex").tampered() {
                    return Err(fail("open_enclosure", ErrorCode::TamperDetected));
                }
                Ok("enclosure opened and closed without a trace".into())
            }
            Step::ChipOffFlash => {
                let pkg = self.forged();
                chip_off_flash(&self.world.physical(), pkg)
                    .map_err(|c| fail("chip_off_flash", c))?;
                Ok("lock boots the rewritten flash".into())
            }
            Step::HarnessInstallDroplock => {
                let pkg = self.forged();
                self.world
                    .lock()
                    .lock()
                    .expect("lock mutex")
                    .install_unchecked(pkg);
                Ok("droplock firmware installed by the harness".into())
            }
            Step::BuildImpostor => {
                self.impostor();
                Ok("impostor lock built with attacker keys".into())
            }
            Step::ImpostorScan => {
                self.free_radio();
                let impostor = self.impostor();
                let scanner = self.world.scanner();
                let c1: [u8; 16] = self.world.rng().gen();
                let c2: [u8; 16] = self.world.rng().gen();
                let genuine = scanner.scan_device(&mut self.world.lock_client(), &c1);
                let fake = scanner.scan_device(&mut self.world.connect(&impostor), &c2);
                if genuine == super::Verdict::Genuine && fake != super::Verdict::Genuine {
                    return Err(fail("impostor_scan", ErrorCode::ImpostorDetected));
                }
                Ok(format!(
                    "genuine scans {genuine}, impostor scans {fake}: indistinguishable"
                ))
            }
            Step::CloudOffline => {
                self.world.cloud().set_online(false);
                Ok("vendor cloud offline".into())
            }
            Step::EnrollmentRace { attacker_first } => {
                let chosen = self.attacker.choose_identity();
                if *attacker_first {
                    let id = {
                        let radio = self
                            .attacker_radio
                            .get_or_insert_with(|| self.world.lock_client());
                        self.attacker
                            .offline_enroll(radio, chosen.serial, chosen.key)?
                    };
                    self.identity = Some(id);
                    let lost = self.as_owner(|o, radio| o.app.enroll_flow(radio)).err();
                    Ok(format!(
                        "attacker enrolled first; owner enrollment {}",
                        lost.map(|e| format!("failed at {e}"))
                            .unwrap_or_else(|| "succeeded".into())
                    ))
                } else {
                    self.as_owner(|o, radio| {
                        let id = o.app.enroll_flow(radio)?;
                        o.identity = Some(id);
                        Ok(id)
                    })?;
                    let id = {
                        let radio = self
                            .attacker_radio
                            .get_or_insert_with(|| self.world.lock_client());
                        self.attacker
                            .offline_enroll(radio, chosen.serial, chosen.key)?
                    };
                    self.identity = Some(id);
                    Ok("attacker enrolled after the owner".into())
                }
            }
        }
    }
}

/// Runs a scenario against a freshly built world.
pub fn run_scenario(scenario: &Scenario, cfg: &RunConfig) -> ScenarioReport {
    let profile = cfg.profile();
    let mut run = Run::new(World::new(profile, cfg.seed, cfg.transport));
    let mut steps = Vec::with_capacity(scenario.steps.len());
    let mut outcome = Outcome::Succeeds;
    for (index, step) in scenario.steps.iter().enumerate() {
        let op = step.name();
        if !outcome.succeeded() {
            steps.push(StepRecord {
                index,
                op,
                status: StepStatus::Skipped,
                detail: String::new(),
                error: None,
            });
            continue;
        }
        match run.step(step) {
            Ok(detail) => steps.push(StepRecord {
                index,
                op,
                status: StepStatus::Ok,
                detail,
                error: None,
            }),
            Err(e) => {
                outcome = Outcome::fails_at(&e);
                steps.push(StepRecord {
                    index,
                    op,
                    status: StepStatus::Failed,
                    detail: String::new(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let registry = run.world.cloud().registry_len();
    let expectation = scenario.expectation_for(&profile);
    let expectation_met = expectation.is_none_or(|e| {
        e.outcome == outcome
            && e.harvested.is_none_or(|n| n == run.harvested.len())
            && e.registry.is_none_or(|n| n == registry)
    });
    let log = run.world.air().snapshot();
    let (records, _) = parse_records(&log, 0);
    let harvested = run
        .harvested
        .iter()
        .map(|img| HarvestedImage {
            sha256: hex::encode(sha256(img.pixels())),
            width: img.width(),
            height: img.height(),
            victim: run
                .touched
                .iter()
                .find(|v| expected_image(**v) == *img)
                .map(|v| v.0),
        })
        .collect();
    let lock = run.world.lock().lock().expect("lock mutex");
    let fw = lock.installed_firmware();
    ScenarioReport {
        schema: REPORT_SCHEMA.to_string(),
        scenario: scenario.name.clone(),
        preset: cfg.preset,
        ablations: cfg.ablations.clone(),
        profile,
        seed: cfg.seed,
        transport: cfg.transport,
        steps,
        outcome: outcome.clone(),
        expected: expectation.map(|e| e.outcome.clone()),
        expectation_met,
        tamper_detected: lock.tampered(),
        broadcast: BroadcastSummary {
            records: records.len(),
            bytes: log.len(),
        },
        harvested,
        cloud_registry_entries: registry,
        lock_state: lock.state(),
        installed_firmware: FirmwareSummary {
            version: fw.manifest.version.clone(),
            behavior: fw.manifest.behavior,
        },
        events: lock.events().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_text_round_trip() {
        for s in [
            "SUCCEEDS",
            "FAILS_AT:session_init:AUTH_FAILED",
            "FAILS_AT:harvest:BLOCKED_BY_ISOLATION",
        ] {
            assert_eq!(s.parse::<Outcome>().unwrap().to_string(), s);
        }
        assert!("FAILS_AT:AUTH_FAILED".parse::<Outcome>().is_err());
        assert!("FAILS_AT:x:NOPE".parse::<Outcome>().is_err());
    }

    #[test]
    fn builtins_parse() {
        let lib = ScenarioLibrary::builtin();
        assert!(lib.get("droplock_e2e").is_ok());
        assert_eq!(lib.rows().len(), ControlId::ALL.len());
        assert!(matches!(
            lib.get("nope"),
            Err(ScenarioError::UnknownScenario(_))
        ));
    }

    #[test]
    fn unknown_op_is_rejected() {
        let text = "name = \"x\"\n[[steps]]\nop = \"teleport\"\n";
        assert!(Scenario::parse(text).is_err());
    }
}
