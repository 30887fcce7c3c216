//! Report types and their text rendering.
//!
//! The machine-readable form is pretty-printed JSON with a fixed field
//! order and no timestamps, so equal seeds give byte-identical output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::matrix::{OutcomeMatrix, Soundness};
use super::scenario::Outcome;
use super::threat::{ControlVerdict, ThreatModelMap};
use crate::firmware::Behavior;
use crate::lock::{LockEvent, LockState};
use crate::profile::{AblationTarget, Preset, SecurityProfile};
use crate::transport::TransportKind;

pub const REPORT_SCHEMA: &str = "locklab.scenario/1";
pub const FULL_REPORT_SCHEMA: &str = "locklab.report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub op: String,
    pub status: StepStatus,
    pub detail: String,
    /// `step:CODE` of the failing sub-step.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BroadcastSummary {
    pub records: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestedImage {
    pub sha256: String,
    pub width: u16,
    pub height: u16,
    /// The touched victim whose pseudo-image this is byte for byte.
    pub victim: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmwareSummary {
    pub version: String,
    pub behavior: Behavior,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema: String,
    pub scenario: String,
    pub preset: Preset,
    pub ablations: Vec<AblationTarget>,
    pub profile: SecurityProfile,
    pub seed: u64,
    pub transport: TransportKind,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub expected: Option<Outcome>,
    pub expectation_met: bool,
    pub tamper_detected: bool,
    pub broadcast: BroadcastSummary,
    pub harvested: Vec<HarvestedImage>,
    pub cloud_registry_entries: usize,
    pub lock_state: LockState,
    pub installed_firmware: FirmwareSummary,
    pub events: Vec<LockEvent>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Same run with the transport field blanked, for comparing runs that
    /// differ only in how bytes moved.
    pub fn transport_independent(&self) -> Self {
        Self {
            transport: TransportKind::Inproc,
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ablations = if self.ablations.is_empty() {
            String::new()
        } else {
            let a: Vec<String> = self.ablations.iter().map(ToString::to_string).collect();
            format!(" ablate={}", a.join(","))
        };
        let _ = writeln!(
            s,
            "scenario {} profile={}{} seed={} transport={}",
            self.scenario, self.preset, ablations, self.seed, self.transport
        );
        for st in &self.steps {
            let mark = match st.status {
                StepStatus::Ok => "ok  ",
                StepStatus::Failed => "FAIL",
                StepStatus::Skipped => "skip",
            };
            let what = st.error.as_deref().unwrap_or(&st.detail);
            let _ = writeln!(s, "  [{mark}] {:>2} {:<26} {what}", st.index, st.op);
        }
        let _ = writeln!(s, "outcome: {}", self.outcome);
        match &self.expected {
            Some(e) => {
                let _ = writeln!(
                    s,
                    "expected: {e} ({})",
                    if self.expectation_met {
                        "met"
                    } else {
                        "NOT MET"
                    }
                );
            }
            None => {
                let _ = writeln!(s, "expected: (none declared for this profile)");
            }
        }
        let _ = writeln!(
            s,
            "harvested images: {}  broadcast records: {}  cloud registry: {}  tamper: {}",
            self.harvested.len(),
            self.broadcast.records,
            self.cloud_registry_entries,
            if self.tamper_detected {
                "DETECTED"
            } else {
                "none"
            }
        );
        let _ = writeln!(
            s,
            "lock: {:?}, firmware {} ({})",
            self.lock_state, self.installed_firmware.version, self.installed_firmware.behavior
        );
        s
    }
}

/// Everything `locklab report` prints: matrix, threat map with per-control
/// verdicts, and the end-to-end runs with their tamper flags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullReport {
    pub schema: String,
    pub seed: u64,
    pub transport: TransportKind,
    pub matrix: OutcomeMatrix,
    pub soundness: Soundness,
    pub threat_model: ThreatModelMap,
    pub control_verdicts: Vec<ControlVerdict>,
    pub scenarios: Vec<ScenarioReport>,
}

impl FullReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "locklab report  seed={}  transport={}",
            self.seed, self.transport
        );
        let _ = writeln!(s);
        s.push_str(&self.matrix.to_text());
        let _ = writeln!(s, "{}", self.soundness.summary());
        let _ = writeln!(s);
        s.push_str(&self.threat_model.to_text(&self.control_verdicts));
        let _ = writeln!(s);
        for r in &self.scenarios {
            s.push_str(&r.to_text());
            let _ = writeln!(s);
        }
        s
    }
}
