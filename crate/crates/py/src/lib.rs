//! Python bindings for `gka_core`: field arithmetic, honest and adversarial
//! simulations, and cost measurement.

use std::sync::Arc;

use num_bigint::BigUint;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use gka_core::field::{lagrange_interpolate, FieldParams, SecretPolynomial};
use gka_core::harness::{
    self, measure_costs as core_measure_costs, run_attack_family, run_honest_session_with_mode,
    run_membership_scenario, write_cost_csv, AttackFamily, MembershipKind,
};
use gka_core::{AbscissaMode, OpCounts};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn resolve_params(prime: Option<BigUint>, bits: Option<u64>) -> PyResult<Arc<FieldParams>> {
    match (prime, bits) {
        (Some(_), Some(_)) => Err(PyValueError::new_err("give either prime or bits, not both")),
        (Some(p), None) => FieldParams::new(p).map_err(value_error),
        (None, Some(b)) => FieldParams::with_bits(b).map_err(value_error),
        (None, None) => Ok(FieldParams::mersenne61()),
    }
}

fn parse_mode(mode: &str) -> PyResult<AbscissaMode> {
    match mode {
        "identity" => Ok(AbscissaMode::Identity),
        "hashed" => Ok(AbscissaMode::Hashed),
        other => Err(PyValueError::new_err(format!("unknown abscissa mode `{other}`"))),
    }
}

/// A prime field GF(p).
#[pyclass(name = "Field", module = "gka", frozen)]
struct PyField {
    params: Arc<FieldParams>,
}

impl PyField {
    fn poly(&self, coeffs: Vec<BigUint>) -> PyResult<SecretPolynomial> {
        SecretPolynomial::new(coeffs.into_iter().map(|c| self.params.element(c)).collect()).map_err(value_error)
    }
}

#[pymethods]
impl PyField {
    #[new]
    #[pyo3(signature = (prime=None, bits=None))]
    fn new(prime: Option<BigUint>, bits: Option<u64>) -> PyResult<Self> {
        Ok(Self { params: resolve_params(prime, bits)? })
    }

    #[getter]
    fn modulus(&self) -> BigUint {
        self.params.modulus().clone()
    }

    /// Octets per encoded element.
    #[getter]
    fn width(&self) -> usize {
        self.params.width()
    }

    #[getter]
    fn bits(&self) -> u64 {
        self.params.bits()
    }

    fn inv(&self, a: BigUint) -> PyResult<BigUint> {
        self.params.element(a).inv().map(|r| r.value().clone()).map_err(value_error)
    }

    /// Evaluates `coeffs` (lowest degree first) at `x`; returns the value and
    /// the number of field multiplications spent.
    fn eval_horner(&self, coeffs: Vec<BigUint>, x: BigUint) -> PyResult<(BigUint, u64)> {
        let mut ops = OpCounts::default();
        let y = self.poly(coeffs)?.eval_horner(&self.params.element(x), &mut ops).map_err(value_error)?;
        Ok((y.value().clone(), ops.field_mults))
    }

    /// Coefficients (lowest degree first) of the unique polynomial through `points`.
    fn interpolate(&self, points: Vec<(BigUint, BigUint)>) -> PyResult<Vec<BigUint>> {
        let pts: Vec<_> = points.into_iter().map(|(x, y)| (self.params.element(x), self.params.element(y))).collect();
        let poly = lagrange_interpolate(&pts).map_err(value_error)?;
        Ok(poly.coeffs().iter().map(|c| c.value().clone()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Field(p={}, width={})", self.params.modulus(), self.params.width())
    }
}

fn ops_dict<'py>(py: Python<'py>, ops: &OpCounts) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("field_mults", ops.field_mults)?;
    d.set_item("xor_octets", ops.xor_octets)?;
    d.set_item("xor_passes", ops.xor_passes)?;
    d.set_item("hash_calls", ops.hash_calls)?;
    d.set_item("signs", ops.signs)?;
    d.set_item("verifies", ops.verifies)?;
    d.set_item("encrypts", ops.encrypts)?;
    d.set_item("decrypts", ops.decrypts)?;
    Ok(d)
}

fn id_int(id: &gka_core::PartyId) -> BigUint {
    id.element().value().clone()
}

/// Runs one honest session; returns keys per party id plus transcript counts.
#[pyfunction]
#[pyo3(signature = (n, prime=None, bits=None, seed=1, abscissa_mode="identity"))]
fn run_honest_session<'py>(
    py: Python<'py>,
    n: usize,
    prime: Option<BigUint>,
    bits: Option<u64>,
    seed: u64,
    abscissa_mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let params = resolve_params(prime, bits)?;
    let run = run_honest_session_with_mode(n, &params, seed, parse_mode(abscissa_mode)?).map_err(value_error)?;
    let keys = PyDict::new(py);
    for (id, k) in &run.keys {
        keys.set_item(id_int(id), PyBytes::new(py, k.as_bytes()))?;
    }
    let online = PyDict::new(py);
    for (id, ops) in &run.transcript.online_ops {
        online.set_item(id_int(id), ops_dict(py, ops)?)?;
    }
    let t = &run.transcript;
    let d = PyDict::new(py);
    d.set_item("leader", id_int(&run.leader))?;
    d.set_item("keys", keys)?;
    d.set_item("agree", run.all_agree())?;
    d.set_item("unicasts", t.unicasts())?;
    d.set_item("broadcasts", t.broadcasts())?;
    d.set_item("rounds", t.rounds())?;
    d.set_item("total_octets", t.total_octets())?;
    d.set_item("online_ops", online)?;
    Ok(d)
}

/// One cost row per group size.
#[pyfunction]
#[pyo3(signature = (ns, prime=None, bits=None, seed=1))]
fn measure_costs<'py>(
    py: Python<'py>,
    ns: Vec<usize>,
    prime: Option<BigUint>,
    bits: Option<u64>,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let params = resolve_params(prime, bits)?;
    let reports = core_measure_costs(&ns, &params, seed).map_err(value_error)?;
    reports
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("n", r.n)?;
            d.set_item("p_bits", r.p_bits)?;
            d.set_item("width", r.width)?;
            d.set_item("rounds", r.rounds)?;
            d.set_item("leader_octets", r.leader_octets)?;
            d.set_item("user_octets", r.user_octets)?;
            d.set_item("total_octets", r.total_octets)?;
            d.set_item("user_mults", r.user_mults)?;
            d.set_item("user_xor_octets", r.user_xor_octets)?;
            d.set_item("user_xor_passes", r.user_xor_passes)?;
            d.set_item("leader_mults", r.leader_mults)?;
            Ok(d)
        })
        .collect()
}

/// The same measurements rendered as CSV.
#[pyfunction]
#[pyo3(signature = (ns, prime=None, bits=None, seed=1))]
fn cost_csv(ns: Vec<usize>, prime: Option<BigUint>, bits: Option<u64>, seed: u64) -> PyResult<String> {
    let params = resolve_params(prime, bits)?;
    let reports = core_measure_costs(&ns, &params, seed).map_err(value_error)?;
    let mut buf = Vec::new();
    write_cost_csv(&reports, &mut buf).map_err(value_error)?;
    String::from_utf8(buf).map_err(value_error)
}

/// A join (`"join"`) or leave (`"leave"`) after one honest session.
#[pyfunction]
#[pyo3(signature = (kind, n, prime=None, bits=None, seed=1))]
fn run_membership<'py>(
    py: Python<'py>,
    kind: &str,
    n: usize,
    prime: Option<BigUint>,
    bits: Option<u64>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match kind {
        "join" => MembershipKind::Join,
        "leave" => MembershipKind::Leave,
        other => return Err(PyValueError::new_err(format!("unknown membership change `{other}`"))),
    };
    let params = resolve_params(prime, bits)?;
    let r = run_membership_scenario(kind, n, &params, seed).map_err(value_error)?;
    let rejected = PyDict::new(py);
    for (id, e) in &r.rejected {
        rejected.set_item(id_int(id), e.to_string())?;
    }
    let d = PyDict::new(py);
    d.set_item("changed", id_int(&r.changed))?;
    d.set_item("before_key", PyBytes::new(py, r.before_key().as_bytes()))?;
    d.set_item("after_key", PyBytes::new(py, r.after_key().as_bytes()))?;
    d.set_item("after_agrees", r.after_agrees())?;
    d.set_item("members_after", r.after.keys().map(id_int).collect::<Vec<_>>())?;
    d.set_item("rejected", rejected)?;
    Ok(d)
}

/// Runs the attack corpus (or one family); returns `(family, name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (n=4, prime=None, bits=None, seed=1, scenario=None))]
fn run_attacks(
    n: usize,
    prime: Option<BigUint>,
    bits: Option<u64>,
    seed: u64,
    scenario: Option<&str>,
) -> PyResult<Vec<(String, String, bool, String)>> {
    let params = resolve_params(prime, bits)?;
    let results = match scenario {
        Some(s) => run_attack_family(s.parse::<AttackFamily>().map_err(PyValueError::new_err)?, n, &params, seed),
        None => harness::attack_corpus(n, &params, seed),
    }
    .map_err(value_error)?;
    Ok(results.into_iter().map(|r| (r.family.name().to_string(), r.name, r.passed, r.detail)).collect())
}

/// Flips every bit of an honest broadcast; returns the rejection tallies.
#[pyfunction]
#[pyo3(signature = (n, prime=None, bits=None, seed=1))]
fn tamper_sweep<'py>(
    py: Python<'py>,
    n: usize,
    prime: Option<BigUint>,
    bits: Option<u64>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let params = resolve_params(prime, bits)?;
    let r = harness::tamper_sweep(n, &params, seed).map_err(value_error)?;
    let d = PyDict::new(py);
    d.set_item("positions", r.positions)?;
    d.set_item("accepted", r.accepted)?;
    d.set_item("parse_rejections", r.parse_rejections)?;
    d.set_item("signature_rejections", r.signature_rejections)?;
    d.set_item("other_rejections", r.other_rejections)?;
    Ok(d)
}

#[pymodule]
fn gka(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_function(wrap_pyfunction!(run_honest_session, m)?)?;
    m.add_function(wrap_pyfunction!(measure_costs, m)?)?;
    m.add_function(wrap_pyfunction!(cost_csv, m)?)?;
    m.add_function(wrap_pyfunction!(run_membership, m)?)?;
    m.add_function(wrap_pyfunction!(run_attacks, m)?)?;
    m.add_function(wrap_pyfunction!(tamper_sweep, m)?)?;
    Ok(())
}
