//! Python bindings for the core quantum-network toolkit: the analytic
//! calculators plus a JSON-in/JSON-out scenario runner.

// #[pyfunction] expansion inserts PyErr -> PyErr conversions that trip this lint.
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qnetsim::error::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Validation { .. } | Error::Parse(_) | Error::BadParameter(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Werner fidelity after an entanglement swap with local gate noise.
#[pyfunction]
#[pyo3(signature = (f1, f2, p_gate_depol = 0.0))]
fn swap_fidelity(f1: f64, f2: f64, p_gate_depol: f64) -> f64 {
    qnetsim::channels::swap_fidelity(f1, f2, p_gate_depol)
}

/// One BBPSSW purification round on equal inputs: (kept fidelity, success
/// probability).
#[pyfunction]
fn purify_step(f: f64) -> (f64, f64) {
    qnetsim::channels::purify_step(f)
}

/// Werner fidelity after a depolarizing channel of strength p.
#[pyfunction]
fn depolarize_fidelity(f: f64, p: f64) -> f64 {
    qnetsim::channels::depolarize_fidelity(f, p)
}

/// Stored-pair fidelity after dephasing for t seconds.
#[pyfunction]
fn memory_decay(f0: f64, t: f64, t2: f64) -> PyResult<f64> {
    qnetsim::channels::memory_decay(f0, t, t2).map_err(to_py_err)
}

/// Seconds until a stored pair of initial fidelity f0 decays to F = 2/3.
#[pyfunction]
fn t_non_eb(f0: f64, t2: f64) -> f64 {
    qnetsim::channels::t_non_eb(f0, t2)
}

/// QBER of a Werner pair measured in matching bases.
#[pyfunction]
fn qber_from_fidelity(f: f64) -> f64 {
    qnetsim::channels::qber_from_fidelity(f)
}

#[pyfunction]
fn binary_entropy(q: f64) -> f64 {
    qnetsim::metrics::binary_entropy(q)
}

/// BB84-style secret key rate lower bound, clamped at zero.
#[pyfunction]
#[pyo3(signature = (raw_rate_hz, qber, f_ec = 1.0))]
fn secret_key_rate(raw_rate_hz: f64, qber: f64, f_ec: f64) -> f64 {
    qnetsim::metrics::secret_key_rate(
        qnetsim::metrics::SkrParams {
            q_raw_rate_hz: raw_rate_hz,
            f_ec,
        },
        qber,
    )
}

/// Repeaterless capacity bound: (exact -log2(1-eta), small-eta linear form).
#[pyfunction]
fn plob_capacity(eta: f64) -> PyResult<(f64, f64)> {
    qnetsim::metrics::plob_capacity(eta).map_err(to_py_err)
}

/// Surface-code style logical error rate C (p/p_th)^((d+1)/2).
#[pyfunction]
#[pyo3(signature = (p_phys, p_threshold, distance, prefactor = 0.1))]
fn logical_error_rate(p_phys: f64, p_threshold: f64, distance: u32, prefactor: f64) -> f64 {
    qnetsim::metrics::logical_error_rate(qnetsim::metrics::QecParams {
        p_phys,
        p_threshold,
        distance,
        prefactor,
    })
}

/// Probability that every link and every swap in a chain succeeds at once.
#[pyfunction]
fn chain_success_probability(p_links: Vec<f64>, p_swap: f64) -> f64 {
    qnetsim::network_layer::chain_success_probability(&p_links, p_swap)
}

/// Application utility U(R, F) for app_type in {"qkd", "dqc", "dqs"}.
#[pyfunction]
#[pyo3(signature = (app_type, rate, fidelity, f_threshold = None))]
fn utility(app_type: &str, rate: f64, fidelity: f64, f_threshold: Option<f64>) -> PyResult<f64> {
    let app = match app_type {
        "qkd" => qnetsim::qnum::AppType::Qkd,
        "dqc" => qnetsim::qnum::AppType::Dqc,
        "dqs" => qnetsim::qnum::AppType::Dqs,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown app_type `{other}` (expected qkd, dqc, or dqs)"
            )))
        }
    };
    let mut spec = qnetsim::qnum::UtilitySpec::default_for(app);
    if let Some(th) = f_threshold {
        spec.f_threshold = th;
    }
    Ok(qnetsim::qnum::utility(&spec, rate, fidelity))
}

/// Parse and validate a scenario config; raises ValueError on problems.
#[pyfunction]
fn validate_scenario(config_json: &str) -> PyResult<()> {
    qnetsim::scenario::parse_scenario(config_json)
        .map(|_| ())
        .map_err(to_py_err)
}

/// Run a scenario end to end and return the summary document as JSON.
#[pyfunction]
fn run_scenario(config_json: &str) -> PyResult<String> {
    let scenario = qnetsim::scenario::parse_scenario(config_json).map_err(to_py_err)?;
    let run = qnetsim::scenario::run_scenario(&scenario, config_json.as_bytes())
        .map_err(to_py_err)?;
    qnetsim::scenario::summary_json(&run).map_err(to_py_err)
}

/// Per-replication, per-request metrics table as CSV text.
#[pyfunction]
fn run_scenario_csv(config_json: &str) -> PyResult<String> {
    let scenario = qnetsim::scenario::parse_scenario(config_json).map_err(to_py_err)?;
    let run = qnetsim::scenario::run_scenario(&scenario, config_json.as_bytes())
        .map_err(to_py_err)?;
    Ok(qnetsim::scenario::metrics_csv(&run))
}

/// Names of the built-in hardware presets.
#[pyfunction]
fn hardware_presets() -> Vec<String> {
    qnetsim::scenario::PRESET_NAMES
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Built-in example scenarios as {name: config_json}.
#[pyfunction]
fn builtin_examples() -> std::collections::BTreeMap<String, String> {
    qnetsim::scenario::builtin_examples()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[pymodule]
fn qnetsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(swap_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(purify_step, m)?)?;
    m.add_function(wrap_pyfunction!(depolarize_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(memory_decay, m)?)?;
    m.add_function(wrap_pyfunction!(t_non_eb, m)?)?;
    m.add_function(wrap_pyfunction!(qber_from_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(binary_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(secret_key_rate, m)?)?;
    m.add_function(wrap_pyfunction!(plob_capacity, m)?)?;
    m.add_function(wrap_pyfunction!(logical_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(chain_success_probability, m)?)?;
    m.add_function(wrap_pyfunction!(utility, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario_csv, m)?)?;
    m.add_function(wrap_pyfunction!(hardware_presets, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_examples, m)?)?;
    Ok(())
}
