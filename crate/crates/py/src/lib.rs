//! Python bindings: scenarios, the ablation matrix, scans and the wire and
//! crypto primitives. Reports cross the boundary as their JSON text.

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use locklab::cryptobox::{self, SymmetricKey};
use locklab::harness::scenario::RunConfig;
use locklab::harness::{
    self as harness, OutcomeMatrix, ScenarioLibrary, ScenarioReport, VictimBehavior, World,
};
use locklab::profile::{AblationTarget, Preset, SecurityProfile};
use locklab::transport::TransportKind;
use locklab::wire::{self, Frame, Opcode};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: ToString,
{
    s.parse().map_err(value_err)
}

fn key16(bytes: &[u8]) -> PyResult<SymmetricKey> {
    SymmetricKey::from_slice(bytes).map_err(value_err)
}

/// Outcome of one scenario run.
#[pyclass(frozen, module = "locklab_py")]
struct ScenarioResult {
    report: ScenarioReport,
}

#[pymethods]
impl ScenarioResult {
    #[getter]
    fn outcome(&self) -> String {
        self.report.outcome.to_string()
    }

    #[getter]
    fn expected(&self) -> Option<String> {
        self.report.expected.as_ref().map(ToString::to_string)
    }

    #[getter]
    fn expectation_met(&self) -> bool {
        self.report.expectation_met
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.report.seed
    }

    #[getter]
    fn harvested(&self) -> usize {
        self.report.harvested.len()
    }

    #[getter]
    fn cloud_registry_entries(&self) -> usize {
        self.report.cloud_registry_entries
    }

    #[getter]
    fn tamper_detected(&self) -> bool {
        self.report.tamper_detected
    }

    fn to_json(&self) -> String {
        self.report.to_json()
    }

    fn to_text(&self) -> String {
        self.report.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "<ScenarioResult {} seed={} {}>",
            self.report.scenario, self.report.seed, self.report.outcome
        )
    }
}

/// The exploit-versus-control matrix.
#[pyclass(frozen, module = "locklab_py")]
struct Matrix {
    matrix: OutcomeMatrix,
}

#[pymethods]
impl Matrix {
    #[getter]
    fn sound(&self) -> bool {
        self.matrix.soundness().sound
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.matrix.columns.clone()
    }

    #[getter]
    fn rows(&self) -> Vec<String> {
        self.matrix
            .rows
            .iter()
            .map(|r| r.control.to_string())
            .collect()
    }

    /// Observed outcome of one cell, e.g. `cell("H", "ablate:H")`.
    fn cell(&self, row: &str, column: &str) -> PyResult<String> {
        let id = parse(row)?;
        self.matrix
            .cell(id, column)
            .map(|c| c.outcome.to_string())
            .ok_or_else(|| PyKeyError::new_err(format!("{row}/{column}")))
    }

    fn to_json(&self) -> String {
        self.matrix.to_json()
    }

    fn to_text(&self) -> String {
        self.matrix.to_text()
    }
}

#[pyfunction]
fn scenario_names() -> Vec<String> {
    ScenarioLibrary::builtin()
        .names()
        .map(str::to_string)
        .collect()
}

#[pyfunction]
#[pyo3(signature = (name, profile = "vulnerable", ablate = Vec::new(), seed = 1, transport = "inproc"))]
fn run_scenario(
    name: &str,
    profile: &str,
    ablate: Vec<String>,
    seed: u64,
    transport: &str,
) -> PyResult<ScenarioResult> {
    let lib = ScenarioLibrary::builtin();
    let scenario = lib
        .get(name)
        .map_err(|e| PyKeyError::new_err(e.to_string()))?;
    let cfg = RunConfig {
        preset: parse(profile)?,
        ablations: ablate
            .iter()
            .map(|a| parse::<AblationTarget>(a))
            .collect::<PyResult<_>>()?,
        seed,
        transport: parse(transport)?,
    };
    Ok(ScenarioResult {
        report: harness::run_scenario(scenario, &cfg),
    })
}

#[pyfunction]
#[pyo3(signature = (seed = 1, transport = "inproc"))]
fn ablation_matrix(py: Python<'_>, seed: u64, transport: &str) -> PyResult<Matrix> {
    let kind: TransportKind = parse(transport)?;
    let matrix = py.detach(|| harness::ablation_matrix(&ScenarioLibrary::builtin(), seed, kind));
    Ok(Matrix { matrix })
}

/// Full report as JSON text.
#[pyfunction]
#[pyo3(signature = (seed = 1, transport = "inproc"))]
fn full_report(py: Python<'_>, seed: u64, transport: &str) -> PyResult<String> {
    let kind: TransportKind = parse(transport)?;
    py.detach(|| harness::full_report(&ScenarioLibrary::builtin(), seed, kind))
        .map(|r| r.to_json())
        .map_err(value_err)
}

/// Security profile of a preset with ablations, as JSON text.
#[pyfunction]
#[pyo3(signature = (preset, ablate = Vec::new()))]
fn security_profile(preset: &str, ablate: Vec<String>) -> PyResult<String> {
    let targets = ablate
        .iter()
        .map(|a| parse::<AblationTarget>(a))
        .collect::<PyResult<Vec<_>>>()?;
    let p = SecurityProfile::preset(parse::<Preset>(preset)?).with_ablations(&targets);
    serde_json::to_string(&p).map_err(value_err)
}

/// Attestation scan of a lock built with `profile`: GENUINE, UNVERIFIED or
/// FIRMWARE_MISMATCH. `impostor=True` scans an attacker-built look-alike.
#[pyfunction]
#[pyo3(signature = (profile = "hardened", seed = 1, impostor = false))]
fn scan(profile: &str, seed: u64, impostor: bool) -> PyResult<String> {
    if impostor {
        let r = harness::impostor_encounter(seed, VictimBehavior::ScanFirst, TransportKind::Inproc);
        return Ok(r.outcome.verdict.map(|v| v.to_string()).unwrap_or_default());
    }
    let w = World::new(
        SecurityProfile::preset(parse(profile)?),
        seed,
        TransportKind::Inproc,
    );
    let mut radio = w.lock_client();
    Ok(w.scanner().scan_device(&mut radio, &[0x5C; 16]).to_string())
}

#[pyfunction]
fn crc16(data: &[u8]) -> u16 {
    wire::crc16(data)
}

#[pyfunction]
fn encode_frame<'py>(py: Python<'py>, opcode: u8, payload: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let op = Opcode::from_byte(opcode).map_err(value_err)?;
    let frame = Frame::new(op, payload.to_vec()).map_err(value_err)?;
    let bytes = wire::encode_frame(&frame).map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// `(opcode, payload)` of an encoded frame.
#[pyfunction]
fn decode_frame<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(u8, Bound<'py, PyBytes>)> {
    let f = wire::decode_frame(data).map_err(value_err)?;
    Ok((f.opcode.to_byte(), PyBytes::new(py, &f.payload)))
}

#[pyfunction]
fn derive_session_key<'py>(
    py: Python<'py>,
    key: &[u8],
    serial: &[u8],
    nonce: &[u8],
) -> PyResult<Bound<'py, PyBytes>> {
    let serial: [u8; 8] = serial
        .try_into()
        .map_err(|_| value_err("serial must be 8 bytes"))?;
    let nonce: [u8; 16] = nonce
        .try_into()
        .map_err(|_| value_err("nonce must be 16 bytes"))?;
    let k = cryptobox::derive_session_key(&key16(key)?, &serial, &nonce);
    Ok(PyBytes::new(py, k.as_bytes()))
}

#[pyfunction]
fn ecb_encrypt<'py>(
    py: Python<'py>,
    key: &[u8],
    plaintext: &[u8],
) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(
        py,
        &cryptobox::ecb_encrypt(&key16(key)?, plaintext),
    ))
}

#[pyfunction]
fn ecb_decrypt<'py>(
    py: Python<'py>,
    key: &[u8],
    ciphertext: &[u8],
) -> PyResult<Bound<'py, PyBytes>> {
    let pt = cryptobox::ecb_decrypt(&key16(key)?, ciphertext).map_err(value_err)?;
    Ok(PyBytes::new(py, &pt))
}

#[pymodule]
fn locklab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ScenarioResult>()?;
    m.add_class::<Matrix>()?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(ablation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(full_report, m)?)?;
    m.add_function(wrap_pyfunction!(security_profile, m)?)?;
    m.add_function(wrap_pyfunction!(scan, m)?)?;
    m.add_function(wrap_pyfunction!(crc16, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(derive_session_key, m)?)?;
    m.add_function(wrap_pyfunction!(ecb_encrypt, m)?)?;
    m.add_function(wrap_pyfunction!(ecb_decrypt, m)?)?;
    Ok(())
}
