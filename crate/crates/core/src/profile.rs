//! Security profiles: the toggle set that separates the vulnerable lock
//! ecosystem from the hardened one, and the controls the ablation matrix flips.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sensor::IsolationClass;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pinning {
    /// Pinning flag in the app bytecode; repacking removes it.
    Patchable,
    /// Pinning inside a native TLS library that repacking does not reach.
    Native,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiEncryption {
    StaticEcb,
    DhGcm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrollmentKey {
    HardCoded,
    PerDevice,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionAuth {
    OfflineKdf,
    MutualAuth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfuIntegrity {
    Crc16,
    Signature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WakeMode {
    Touch,
    Button,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SecurityProfile {
    pub pinning: Pinning,
    pub api_encryption: ApiEncryption,
    pub enrollment_key: EnrollmentKey,
    pub session_auth: SessionAuth,
    pub dfu_integrity: DfuIntegrity,
    pub secure_boot: bool,
    pub sensor_class: IsolationClass,
    pub debug_port: bool,
    pub wake_mode: WakeMode,
    pub attestation: bool,
    pub tamper_evident: bool,
}

impl SecurityProfile {
    /// The shipped configuration of the analysed padlock.
    pub const fn vulnerable() -> Self {
        Self {
            pinning: Pinning::Patchable,
            api_encryption: ApiEncryption::StaticEcb,
            enrollment_key: EnrollmentKey::HardCoded,
            session_auth: SessionAuth::OfflineKdf,
            dfu_integrity: DfuIntegrity::Crc16,
            secure_boot: false,
            sensor_class: IsolationClass::Class1,
            debug_port: true,
            wake_mode: WakeMode::Touch,
            attestation: false,
            tamper_evident: false,
        }
    }

    /// Every recommended control switched on.
    pub const fn hardened() -> Self {
        Self {
            pinning: Pinning::Native,
            api_encryption: ApiEncryption::DhGcm,
            enrollment_key: EnrollmentKey::PerDevice,
            session_auth: SessionAuth::MutualAuth,
            dfu_integrity: DfuIntegrity::Signature,
            secure_boot: true,
            sensor_class: IsolationClass::Class2,
            debug_port: false,
            wake_mode: WakeMode::Button,
            attestation: true,
            tamper_evident: true,
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Vulnerable => Self::vulnerable(),
            Preset::Hardened => Self::hardened(),
        }
    }

    pub fn ablate(&mut self, target: AblationTarget) {
        match target {
            AblationTarget::Control(c) => {
                let hardened = c.is_hardened(self);
                c.set(self, !hardened);
            }
            AblationTarget::Group(group) => {
                for c in group.members() {
                    let hardened = c.is_hardened(self);
                    c.set(self, !hardened);
                }
            }
            AblationTarget::WakeMode => {
                self.wake_mode = match self.wake_mode {
                    WakeMode::Touch => WakeMode::Button,
                    WakeMode::Button => WakeMode::Touch,
                }
            }
        }
    }

    pub fn with_ablations(mut self, targets: &[AblationTarget]) -> Self {
        for t in targets {
            self.ablate(*t);
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Vulnerable,
    Hardened,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Vulnerable => "vulnerable",
            Preset::Hardened => "hardened",
        })
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vulnerable" => Ok(Preset::Vulnerable),
            "hardened" => Ok(Preset::Hardened),
            other => Err(format!(
                "unknown profile `{other}` (expected vulnerable|hardened)"
            )),
        }
    }
}

/// Matrix rows: defenses A, B, F, G, H of the analysed lock plus the
/// threat-model controls that have an executable toggle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControlId {
    A,
    B,
    F,
    G,
    H,
    C01,
    C02,
    C03,
    C04,
    C06,
}

impl ControlId {
    pub const ALL: [ControlId; 10] = [
        ControlId::A,
        ControlId::B,
        ControlId::F,
        ControlId::G,
        ControlId::H,
        ControlId::C01,
        ControlId::C02,
        ControlId::C03,
        ControlId::C04,
        ControlId::C06,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlId::A => "A",
            ControlId::B => "B",
            ControlId::F => "F",
            ControlId::G => "G",
            ControlId::H => "H",
            ControlId::C01 => "C01",
            ControlId::C02 => "C02",
            ControlId::C03 => "C03",
            ControlId::C04 => "C04",
            ControlId::C06 => "C06",
        }
    }

    pub fn defense(self) -> &'static str {
        match self {
            ControlId::A => "certificate pinning",
            ControlId::B => "API payload encryption",
            ControlId::F => "enrollment key",
            ControlId::G => "ephemeral session keys",
            ControlId::H => "DFU checksum",
            ControlId::C01 => "physical protection / tamper evidence",
            ControlId::C02 => "debug capabilities disabled",
            ControlId::C03 => "firmware signing chain of trust",
            ControlId::C04 => "biometric data isolation",
            ControlId::C06 => "wireless device verification",
        }
    }

    pub fn toggle(self) -> &'static str {
        match self {
            ControlId::A => "pinning: patchable -> native",
            ControlId::B => "api_encryption: static_ecb -> dh_gcm",
            ControlId::F => "enrollment_key: hard_coded -> per_device",
            ControlId::G => "session_auth: offline_kdf -> mutual_auth",
            ControlId::H => "dfu_integrity: crc16 -> signature",
            ControlId::C01 => "tamper_evident: false -> true",
            ControlId::C02 => "debug_port: true -> false",
            ControlId::C03 => "secure_boot: false -> true",
            ControlId::C04 => "sensor_class: 1 -> 2",
            ControlId::C06 => "attestation: false -> true",
        }
    }

    pub fn is_hardened(self, p: &SecurityProfile) -> bool {
        match self {
            ControlId::A => p.pinning == Pinning::Native,
            ControlId::B => p.api_encryption == ApiEncryption::DhGcm,
            ControlId::F => p.enrollment_key == EnrollmentKey::PerDevice,
            ControlId::G => p.session_auth == SessionAuth::MutualAuth,
            ControlId::H => p.dfu_integrity == DfuIntegrity::Signature,
            ControlId::C01 => p.tamper_evident,
            ControlId::C02 => !p.debug_port,
            ControlId::C03 => p.secure_boot,
            ControlId::C04 => p.sensor_class != IsolationClass::Class1,
            ControlId::C06 => p.attestation,
        }
    }

    pub fn set(self, p: &mut SecurityProfile, hardened: bool) {
        match self {
            ControlId::A => {
                p.pinning = if hardened {
                    Pinning::Native
                } else {
                    Pinning::Patchable
                }
            }
            ControlId::B => {
                p.api_encryption = if hardened {
                    ApiEncryption::DhGcm
                } else {
                    ApiEncryption::StaticEcb
                }
            }
            ControlId::F => {
                p.enrollment_key = if hardened {
                    EnrollmentKey::PerDevice
                } else {
                    EnrollmentKey::HardCoded
                }
            }
            ControlId::G => {
                p.session_auth = if hardened {
                    SessionAuth::MutualAuth
                } else {
                    SessionAuth::OfflineKdf
                }
            }
            ControlId::H => {
                p.dfu_integrity = if hardened {
                    DfuIntegrity::Signature
                } else {
                    DfuIntegrity::Crc16
                }
            }
            ControlId::C01 => p.tamper_evident = hardened,
            ControlId::C02 => p.debug_port = !hardened,
            ControlId::C03 => p.secure_boot = hardened,
            ControlId::C04 => {
                p.sensor_class = if hardened {
                    IsolationClass::Class2
                } else {
                    IsolationClass::Class1
                }
            }
            ControlId::C06 => p.attestation = hardened,
        }
    }
}

impl fmt::Display for ControlId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControlId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ControlId::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown control `{s}`"))
    }
}

/// Profile fields named as control groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlGroup {
    /// Everything guarding session establishment: F and G.
    SessionAuth,
    /// Everything guarding firmware integrity: H and C03.
    DfuIntegrity,
    Pinning,
    ApiEncryption,
    SensorClass,
    DebugPort,
    Attestation,
    TamperEvident,
}

impl ControlGroup {
    pub fn members(self) -> &'static [ControlId] {
        match self {
            ControlGroup::SessionAuth => &[ControlId::F, ControlId::G],
            ControlGroup::DfuIntegrity => &[ControlId::H, ControlId::C03],
            ControlGroup::Pinning => &[ControlId::A],
            ControlGroup::ApiEncryption => &[ControlId::B],
            ControlGroup::SensorClass => &[ControlId::C04],
            ControlGroup::DebugPort => &[ControlId::C02],
            ControlGroup::Attestation => &[ControlId::C06],
            ControlGroup::TamperEvident => &[ControlId::C01],
        }
    }

    fn name(self) -> &'static str {
        match self {
            ControlGroup::SessionAuth => "session_auth",
            ControlGroup::DfuIntegrity => "dfu_integrity",
            ControlGroup::Pinning => "pinning",
            ControlGroup::ApiEncryption => "api_encryption",
            ControlGroup::SensorClass => "sensor_class",
            ControlGroup::DebugPort => "debug_port",
            ControlGroup::Attestation => "attestation",
            ControlGroup::TamperEvident => "tamper_evident",
        }
    }

    pub const ALL: [ControlGroup; 8] = [
        ControlGroup::SessionAuth,
        ControlGroup::DfuIntegrity,
        ControlGroup::Pinning,
        ControlGroup::ApiEncryption,
        ControlGroup::SensorClass,
        ControlGroup::DebugPort,
        ControlGroup::Attestation,
        ControlGroup::TamperEvident,
    ];
}

/// What `--ablate` accepts: a matrix row id, a profile field group, or the
/// wake mode (which is configuration, not a matrix row).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AblationTarget {
    Control(ControlId),
    Group(ControlGroup),
    WakeMode,
}

impl fmt::Display for AblationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationTarget::Control(c) => f.write_str(c.as_str()),
            AblationTarget::Group(g) => f.write_str(g.name()),
            AblationTarget::WakeMode => f.write_str("wake_mode"),
        }
    }
}

impl FromStr for AblationTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "wake_mode" {
            return Ok(AblationTarget::WakeMode);
        }
        if let Some(g) = ControlGroup::ALL.iter().find(|g| g.name() == s) {
            return Ok(AblationTarget::Group(*g));
        }
        s.parse::<ControlId>()
            .map(AblationTarget::Control)
            .map_err(|_| format!("unknown ablation target `{s}`"))
    }
}

impl TryFrom<String> for AblationTarget {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<AblationTarget> for String {
    fn from(t: AblationTarget) -> Self {
        t.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_opposite_on_every_control() {
        let v = SecurityProfile::vulnerable();
        let h = SecurityProfile::hardened();
        for c in ControlId::ALL {
            assert!(!c.is_hardened(&v), "{c} hardened in vulnerable preset");
            assert!(c.is_hardened(&h), "{c} weak in hardened preset");
        }
        assert_eq!(v.wake_mode, WakeMode::Touch);
        assert_eq!(h.wake_mode, WakeMode::Button);
    }

    #[test]
    fn single_ablation_touches_one_control() {
        for c in ControlId::ALL {
            let p = SecurityProfile::vulnerable().with_ablations(&[AblationTarget::Control(c)]);
            for other in ControlId::ALL {
                assert_eq!(other.is_hardened(&p), other == c);
            }
        }
    }

    #[test]
    fn group_ablation_reverts_session_controls() {
        let p = SecurityProfile::hardened().with_ablations(&["session_auth".parse().unwrap()]);
        assert_eq!(p.session_auth, SessionAuth::OfflineKdf);
        assert_eq!(p.enrollment_key, EnrollmentKey::HardCoded);
        assert!(ControlId::H.is_hardened(&p));
    }

    #[test]
    fn target_parsing() {
        assert_eq!(
            "c04".parse::<AblationTarget>().unwrap(),
            AblationTarget::Control(ControlId::C04)
        );
        assert_eq!("H".parse::<AblationTarget>().unwrap().to_string(), "H");
        assert_eq!(
            "dfu_integrity"
                .parse::<AblationTarget>()
                .unwrap()
                .to_string(),
            "dfu_integrity"
        );
        assert!("C05".parse::<AblationTarget>().is_err());
        assert!("bogus".parse::<Preset>().is_err());
    }
}
