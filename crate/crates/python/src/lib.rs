use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::Serialize;

use ampsize::calibration::{calibrate, format_table};
use ampsize::config::{load_card, load_targets};
use ampsize::device::ProcessCard;
use ampsize::orchestrator::{run_campaign_with, CampaignConfig, ProviderChoice};
use ampsize::plan::{execute_plan, parse_plan, validate_plan};
use ampsize::provider::{reference_plan_for, round0_estimates, topology_of, StaticProvider};
use ampsize::sim::{measure, OperatingPoint, TestbenchConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Round-trips through `json.loads` so callers get plain dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A `str` is taken as JSON text; anything else goes through `json.dumps`.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_str()?.to_string());
    }
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn card(text: Option<&str>) -> PyResult<ProcessCard> {
    text.map_or(Ok(ProcessCard::t180_toy()), |t| load_card(t).map_err(value_err))
}

fn netlist(text: &str) -> PyResult<ampsize::netlist::Netlist> {
    ampsize::netlist::parse_netlist(text).map_err(value_err)
}

/// Parsed netlist as a dict.
#[pyfunction]
fn parse_netlist<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &netlist(text)?)
}

/// Unity-gain measurement: `{metrics, slew, no_crossing, op}`.
#[pyfunction]
#[pyo3(signature = (netlist_text, card_text=None, gbw_target=None))]
fn simulate<'py>(
    py: Python<'py>,
    netlist_text: &str,
    card_text: Option<&str>,
    gbw_target: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let net = netlist(netlist_text)?;
    let card = card(card_text)?;
    let mut tb = TestbenchConfig::default();
    if let Some(g) = gbw_target {
        tb.gbw_target = g;
    }
    let m = py.detach(|| measure(&net, &card, &tb)).map_err(runtime_err)?;
    to_py(
        py,
        &serde_json::json!({ "metrics": m.metrics, "slew": m.slew, "no_crossing": m.no_crossing, "op": m.op }),
    )
}

/// Calibration table of an operating point (dict or JSON text).
#[pyfunction]
fn calibrate_op<'py>(py: Python<'py>, op: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let op: OperatingPoint = serde_json::from_str(&json_text(op)?).map_err(value_err)?;
    to_py(py, &calibrate(&op))
}

/// Same table rendered as fixed-column text.
#[pyfunction]
fn calibration_text(op: &Bound<'_, PyAny>) -> PyResult<String> {
    let op: OperatingPoint = serde_json::from_str(&json_text(op)?).map_err(value_err)?;
    Ok(format_table(&calibrate(&op)))
}

#[pyfunction]
fn reference_plan(topology: &str) -> Option<&'static str> {
    reference_plan_for(&topology.to_ascii_uppercase())
}

/// Executes a plan without simulating. `calib` is a `{device: record}` map,
/// a calibration table or an operating point; round-0 estimates when omitted.
#[pyfunction]
#[pyo3(signature = (netlist_text, targets_text, plan_text=None, calib=None, card_text=None))]
fn plan_exec<'py>(
    py: Python<'py>,
    netlist_text: &str,
    targets_text: &str,
    plan_text: Option<&str>,
    calib: Option<&Bound<'py, PyAny>>,
    card_text: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let net = netlist(netlist_text)?;
    let targets = load_targets(targets_text, Some(&net)).map_err(value_err)?;
    let text = match plan_text {
        Some(t) => t,
        None => reference_plan_for(&topology_of(&net))
            .ok_or_else(|| PyValueError::new_err("no reference plan for this topology"))?,
    };
    let plan = parse_plan(text).map_err(value_err)?;
    let diags = validate_plan(&plan, &net, &targets);
    if !diags.is_empty() {
        let d: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(PyValueError::new_err(d.join("; ")));
    }
    let calib = match calib {
        Some(c) => ampsize::cli::load_calibration(&json_text(c)?).map_err(value_err)?,
        None => round0_estimates(&net, &card(card_text)?),
    };
    let outcome = execute_plan(&plan, &calib, &targets).map_err(runtime_err)?;
    to_py(py, &outcome)
}

/// Static-provider campaign. Returns the campaign result as a dict.
#[pyfunction]
#[pyo3(signature = (netlist_text, targets_text, card_text=None, mu_cox_scale=1.0, max_rounds=16, run_dir=None))]
fn run_campaign<'py>(
    py: Python<'py>,
    netlist_text: &str,
    targets_text: &str,
    card_text: Option<&str>,
    mu_cox_scale: f64,
    max_rounds: usize,
    run_dir: Option<std::path::PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let net = netlist(netlist_text)?;
    let targets = load_targets(targets_text, Some(&net)).map_err(value_err)?;
    let card = card(card_text)?;
    let mut cfg = CampaignConfig::new("<memory>", targets, card.clone());
    cfg.max_rounds = max_rounds;
    cfg.run_dir = run_dir;
    cfg.provider = ProviderChoice::Static { mu_cox_scale };
    let mut provider = StaticProvider::new(card);
    provider.mu_cox_scale = mu_cox_scale;
    let result = py
        .detach(|| run_campaign_with(&cfg, &net, &mut provider, &mut |_| {}))
        .map_err(runtime_err)?;
    to_py(py, &result)
}

#[pymodule]
#[pyo3(name = "ampsize")]
fn ampsize_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(parse_netlist, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_op, m)?)?;
    m.add_function(wrap_pyfunction!(calibration_text, m)?)?;
    m.add_function(wrap_pyfunction!(reference_plan, m)?)?;
    m.add_function(wrap_pyfunction!(plan_exec, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    Ok(())
}
