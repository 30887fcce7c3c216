//! Threat-model map: actors, assets and controls of the droplock threat
//! model, each tied to the testbed element that implements it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::matrix::OutcomeMatrix;
use crate::profile::ControlId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Threat {
    pub id: String,
    pub name: String,
    pub testbed: String,
    /// Description reconstructed from context rather than stated outright.
    pub inferred: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub id: String,
    pub name: String,
    pub testbed: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    /// Backed by a profile toggle and matrix rows.
    Executable,
    /// Modelled only as the victim's scan-first behaviour.
    VictimBehavior,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Control {
    pub id: String,
    pub name: String,
    pub kind: ControlKind,
    pub rows: Vec<ControlId>,
    pub testbed: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatModelMap {
    pub goal: String,
    pub goal_name: String,
    pub threats: Vec<Threat>,
    pub assets: Vec<Asset>,
    /// Assets the threat model has but never names.
    pub unenumerated_assets: String,
    pub controls: Vec<Control>,
}

fn threat(id: &str, name: &str, testbed: &str, inferred: bool) -> Threat {
    Threat {
        id: id.into(),
        name: name.into(),
        testbed: testbed.into(),
        inferred,
    }
}

fn asset(id: &str, name: &str, testbed: &str) -> Asset {
    Asset {
        id: id.into(),
        name: name.into(),
        testbed: testbed.into(),
    }
}

fn control(id: &str, name: &str, kind: ControlKind, rows: &[ControlId], testbed: &str) -> Control {
    Control {
        id: id.into(),
        name: name.into(),
        kind,
        rows: rows.to_vec(),
        testbed: testbed.into(),
    }
}

impl ThreatModelMap {
    pub fn droplock() -> Self {
        use ControlKind::*;
        Self {
            goal: "TA04".into(),
            goal_name: "biometric data retrieval".into(),
            threats: vec![
                threat(
                    "TA01",
                    "physical tampering with the device",
                    "open_enclosure, chip_off_flash",
                    false,
                ),
                threat(
                    "TA02",
                    "physical readout and reprogramming interfaces (combined with TA01)",
                    "physical_dump via the debug port",
                    true,
                ),
                threat(
                    "TA03",
                    "wireless attack on the update process",
                    "offline_enroll, offline_session, forge_dfu",
                    false,
                ),
                threat(
                    "TA04",
                    "biometric data retrieval",
                    "harvest_listen on the broadcast channel",
                    false,
                ),
                threat(
                    "TA05",
                    "impostor device",
                    "build_impostor, impostor_scan",
                    false,
                ),
                threat(
                    "TA06",
                    "counterfeit custom-made droplock copying a product",
                    "build_impostor",
                    false,
                ),
            ],
            assets: vec![
                asset("A02", "biometric data", "sensor images and templates"),
                asset("A03", "device", "lock enclosure, debug port, flash"),
                asset("A04", "firmware integrity", "installed FirmwarePackage"),
            ],
            unenumerated_assets:
                "unenumerated: further assets (A01, A05, ...) exist but are not named".into(),
            controls: vec![
                control(
                    "C01",
                    "physical protection / tamper evidence",
                    Executable,
                    &[ControlId::C01],
                    "tamper_evident",
                ),
                control(
                    "C02",
                    "debug capabilities disabled",
                    Executable,
                    &[ControlId::C02],
                    "debug_port",
                ),
                control(
                    "C03",
                    "firmware signing",
                    Executable,
                    &[ControlId::H, ControlId::C03],
                    "dfu_integrity=signature, secure_boot",
                ),
                control(
                    "C04",
                    "biometric data isolation",
                    Executable,
                    &[ControlId::C04],
                    "sensor_class",
                ),
                control(
                    "C05",
                    "user awareness",
                    VictimBehavior,
                    &[],
                    "victim behaviour scan_first",
                ),
                control(
                    "C06",
                    "wireless device verification",
                    Executable,
                    &[ControlId::C06],
                    "attestation",
                ),
            ],
        }
    }

    pub fn to_text(&self, verdicts: &[ControlVerdict]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "threat model: goal {} ({})", self.goal, self.goal_name);
        for t in &self.threats {
            let mark = if t.inferred { " (inferred)" } else { "" };
            let _ = writeln!(s, "  {}  {}{}  -> {}", t.id, t.name, mark, t.testbed);
        }
        for a in &self.assets {
            let _ = writeln!(s, "  {}   {}  -> {}", a.id, a.name, a.testbed);
        }
        let _ = writeln!(s, "  {}", self.unenumerated_assets);
        for c in &self.controls {
            let _ = writeln!(s, "  {}  {}  -> {}", c.id, c.name, c.testbed);
        }
        let _ = writeln!(s, "control verdicts:");
        for v in verdicts {
            let _ = writeln!(s, "  {:<4} {:<11} {}", v.control, v.verdict, v.evidence);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlVerdict {
    pub control: String,
    pub verdict: String,
    pub evidence: String,
}

/// Aware and unaware victims facing the same impostors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AwarenessSample {
    pub encounters: usize,
    pub aware_harvested: usize,
    pub unaware_harvested: usize,
}

/// A matrix row's control is EFFECTIVE when hardening it alone, and the
/// full hardened preset, both block its exploit.
pub fn control_verdicts(matrix: &OutcomeMatrix, awareness: AwarenessSample) -> Vec<ControlVerdict> {
    let mut out: Vec<ControlVerdict> = matrix
        .rows
        .iter()
        .map(|r| {
            let own = format!("ablate:{}", r.control);
            let blocked = |col: &str| {
                r.cells
                    .iter()
                    .find(|c| c.column == col)
                    .is_some_and(|c| !c.exploit_succeeded && c.as_expected)
            };
            let vulnerable_open = r
                .cells
                .iter()
                .find(|c| c.column == "vulnerable")
                .is_some_and(|c| c.exploit_succeeded);
            let effective = vulnerable_open && blocked("hardened") && blocked(&own);
            ControlVerdict {
                control: r.control.to_string(),
                verdict: if effective {
                    "EFFECTIVE"
                } else {
                    "INEFFECTIVE"
                }
                .into(),
                evidence: format!("{} -> {}", r.exploit, r.blocked_outcome),
            }
        })
        .collect();
    let c05 = awareness.aware_harvested == 0 && awareness.unaware_harvested == awareness.encounters;
    out.push(ControlVerdict {
        control: "C05".into(),
        verdict: if c05 { "EFFECTIVE" } else { "INEFFECTIVE" }.into(),
        evidence: format!(
            "{} impostor encounters: aware victims harvested {}, unaware {}",
            awareness.encounters, awareness.aware_harvested, awareness.unaware_harvested
        ),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_control_is_executable_or_behavioral() {
        let m = ThreatModelMap::droplock();
        assert_eq!(m.goal, "TA04");
        assert_eq!(m.controls.len(), 6);
        for c in &m.controls {
            assert!(
                c.kind == ControlKind::VictimBehavior || !c.rows.is_empty(),
                "{}",
                c.id
            );
        }
        assert_eq!(m.threats.len(), 6);
        assert!(m.unenumerated_assets.starts_with("unenumerated"));
    }
}
