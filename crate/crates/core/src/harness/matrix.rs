//! Exploit-versus-control matrix.
//!
//! Rows are the minimal exploit scenarios, one per control. Columns are the
//! vulnerable preset, the hardened preset, and the vulnerable preset with
//! exactly one control hardened.

use std::fmt::Write as _;
use std::thread;

use serde::{Deserialize, Serialize};

use super::scenario::{run_scenario, Outcome, RunConfig, Scenario, ScenarioLibrary};
use crate::profile::{AblationTarget, ControlId, Preset};
use crate::transport::TransportKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Column {
    Vulnerable,
    Hardened,
    Ablate(ControlId),
}

impl Column {
    pub fn all() -> Vec<Column> {
        let mut v = vec![Column::Vulnerable, Column::Hardened];
        v.extend(ControlId::ALL.iter().map(|c| Column::Ablate(*c)));
        v
    }

    pub fn label(self) -> String {
        match self {
            Column::Vulnerable => "vulnerable".into(),
            Column::Hardened => "hardened".into(),
            Column::Ablate(c) => format!("ablate:{c}"),
        }
    }

    pub fn config(self, seed: u64, transport: TransportKind) -> RunConfig {
        let (preset, ablations) = match self {
            Column::Vulnerable => (Preset::Vulnerable, vec![]),
            Column::Hardened => (Preset::Hardened, vec![]),
            Column::Ablate(c) => (Preset::Vulnerable, vec![AblationTarget::Control(c)]),
        };
        RunConfig {
            preset,
            ablations,
            seed,
            transport,
        }
    }

    pub fn hardens(self, row: ControlId) -> bool {
        match self {
            Column::Vulnerable => false,
            Column::Hardened => true,
            Column::Ablate(c) => c == row,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub column: String,
    pub outcome: Outcome,
    pub exploit_succeeded: bool,
    pub expected_blocked: bool,
    /// Blocked cells must fail with the row's documented outcome; the rest
    /// must succeed.
    pub as_expected: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub control: ControlId,
    pub defense: String,
    pub toggle: String,
    pub exploit: String,
    pub scenario: String,
    pub blocked_outcome: Outcome,
    pub cells: Vec<MatrixCell>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeMatrix {
    pub seed: u64,
    pub transport: TransportKind,
    pub columns: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Soundness {
    pub complete: bool,
    pub vulnerable_all_succeed: bool,
    pub hardened_all_blocked: bool,
    pub ablations_flip_own_row_only: bool,
    pub sound: bool,
}

impl Soundness {
    pub fn summary(&self) -> String {
        let yn = |b: bool| if b { "yes" } else { "NO" };
        format!(
            "soundness: complete={} vulnerable_all_succeed={} hardened_all_blocked={} single_ablation_flips_own_row={} => {}",
            yn(self.complete),
            yn(self.vulnerable_all_succeed),
            yn(self.hardened_all_blocked),
            yn(self.ablations_flip_own_row_only),
            if self.sound { "SOUND" } else { "UNSOUND" }
        )
    }
}

fn run_row(s: &Scenario, seed: u64, transport: TransportKind) -> MatrixRow {
    let spec = s.row.as_ref().expect("row scenario");
    let cells = Column::all()
        .into_iter()
        .map(|col| {
            let outcome = run_scenario(s, &col.config(seed, transport)).outcome;
            let expected_blocked = col.hardens(spec.control);
            let as_expected = if expected_blocked {
                outcome == spec.blocked
            } else {
                outcome.succeeded()
            };
            MatrixCell {
                column: col.label(),
                exploit_succeeded: outcome.succeeded(),
                outcome,
                expected_blocked,
                as_expected,
            }
        })
        .collect();
    MatrixRow {
        control: spec.control,
        defense: spec.control.defense().to_string(),
        toggle: spec.control.toggle().to_string(),
        exploit: spec.exploit.clone(),
        scenario: s.name.clone(),
        blocked_outcome: spec.blocked.clone(),
        cells,
    }
}

/// Runs every row scenario under every column. Rows run on their own
/// threads; each cell builds a fresh world from the same seed.
pub fn ablation_matrix(
    library: &ScenarioLibrary,
    seed: u64,
    transport: TransportKind,
) -> OutcomeMatrix {
    let rows = library.rows();
    let rows = thread::scope(|scope| {
        let handles: Vec<_> = rows
            .iter()
            .map(|s| scope.spawn(move || run_row(s, seed, transport)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("matrix row thread"))
            .collect::<Vec<_>>()
    });
    OutcomeMatrix {
        seed,
        transport,
        columns: Column::all().into_iter().map(Column::label).collect(),
        rows,
    }
}

impl OutcomeMatrix {
    pub fn cell(&self, row: ControlId, column: &str) -> Option<&MatrixCell> {
        self.rows
            .iter()
            .find(|r| r.control == row)?
            .cells
            .iter()
            .find(|c| c.column == column)
    }

    pub fn soundness(&self) -> Soundness {
        let complete = ControlId::ALL.iter().all(|c| {
            self.rows
                .iter()
                .find(|r| r.control == *c)
                .is_some_and(|r| r.cells.len() == self.columns.len())
        });
        let column_ok = |pred: &dyn Fn(&str) -> bool| {
            self.rows
                .iter()
                .flat_map(|r| r.cells.iter())
                .filter(|c| pred(&c.column))
                .all(|c| c.as_expected)
        };
        let vulnerable_all_succeed = column_ok(&|c| c == "vulnerable");
        let hardened_all_blocked = column_ok(&|c| c == "hardened");
        let ablations_flip_own_row_only = column_ok(&|c| c.starts_with("ablate:"));
        Soundness {
            complete,
            vulnerable_all_succeed,
            hardened_all_blocked,
            ablations_flip_own_row_only,
            sound: complete
                && vulnerable_all_succeed
                && hardened_all_blocked
                && ablations_flip_own_row_only,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Grid of `x` (exploit succeeds) and `#` (blocked); `!` marks a cell
    /// that differs from the expected pattern.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let short: Vec<String> = self
            .columns
            .iter()
            .map(|c| match c.as_str() {
                "vulnerable" => "vuln".to_string(),
                "hardened" => "hard".to_string(),
                other => other.trim_start_matches("ablate:").to_string(),
            })
            .collect();
        let _ = write!(s, "{:<5}", "row");
        for c in &short {
            let _ = write!(s, "{c:>5}");
        }
        let _ = writeln!(s, "   exploit");
        for r in &self.rows {
            let _ = write!(s, "{:<5}", r.control.as_str());
            for cell in &r.cells {
                let mark = match (cell.exploit_succeeded, cell.as_expected) {
                    (true, true) => "x",
                    (false, true) => "#",
                    (_, false) => "!",
                };
                let _ = write!(s, "{mark:>5}");
            }
            let _ = writeln!(s, "   {}", r.exploit);
        }
        let _ = writeln!(s, "x = exploit succeeds, # = blocked, ! = unexpected; columns after `hard` harden one control");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "  {:<4} {:<40} blocked as {}",
                r.control.as_str(),
                r.defense,
                r.blocked_outcome
            );
        }
        s
    }
}
