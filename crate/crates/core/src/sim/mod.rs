//! Circuit simulation: DC operating point, AC loop gain, transient slew and
//! supply power.

mod ac;
mod dc;
pub(crate) mod mna;
mod testbench;
mod tran;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceEval, Region};
use crate::netlist::MosType;

pub use ac::{ac_sweep, loop_metrics, AcRequest, FrequencyResponse, LoopMetrics, Sweep};
pub use dc::{dc_operating_point, dc_operating_point_with};
pub use testbench::{
    ac_loop_metrics, measure, power, transient_slew, unity_gain_netlist, Measurement,
    SlewResult, TestbenchConfig,
};
pub use tran::{max_slope_in_band, transient, SourceStep, Waveform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{analysis} did not converge after {iterations} iterations (max KCL residual {residual:.3e} A)")]
    NonConvergence {
        analysis: String,
        iterations: usize,
        residual: f64,
    },
    #[error("singular matrix: {detail}")]
    SingularMatrix { detail: String },
    #[error("loop gain never crosses unity between {f_start:.3e} Hz and {f_stop:.3e} Hz (|H| at start {start_db:.2} dB)")]
    NoCrossing {
        f_start: f64,
        f_stop: f64,
        start_db: f64,
    },
    #[error("node {0} not found")]
    MissingNode(String),
    #[error("source {0} not found")]
    MissingSource(String),
    #[error("{0}")]
    Invalid(String),
}

/// Per-device operating point. Voltages are polarity-normalised, so for a
/// forward-biased device `vov = vgs - vth` for both types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceOp {
    pub mos_type: MosType,
    pub w: f64,
    pub l: f64,
    pub vgs: f64,
    pub vds: f64,
    pub vsb: f64,
    #[serde(flatten)]
    pub eval: DeviceEval,
}

impl DeviceOp {
    pub fn id(&self) -> f64 {
        self.eval.id
    }
    pub fn gm(&self) -> f64 {
        self.eval.gm
    }
    pub fn gds(&self) -> f64 {
        self.eval.gds
    }
    pub fn vov(&self) -> f64 {
        self.eval.vov
    }
    pub fn vth(&self) -> f64 {
        self.eval.vth
    }
    pub fn region(&self) -> Region {
        self.eval.region
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub node_voltages: IndexMap<String, f64>,
    pub device_ops: IndexMap<String, DeviceOp>,
    /// Current delivered out of each voltage source's + terminal, A.
    pub supply_currents: IndexMap<String, f64>,
    /// Voltage of each source at the solved point, V.
    #[serde(default)]
    pub source_voltages: IndexMap<String, f64>,
    pub max_residual: f64,
    pub iterations: usize,
}

impl OperatingPoint {
    pub fn voltage(&self, node: &str) -> Option<f64> {
        self.node_voltages.get(&node.to_ascii_uppercase()).copied()
    }
}

/// Measured performance. Slots are optional so partial measurements (AC
/// only, DC only) share the type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub av_db: Option<f64>,
    pub gbw_hz: Option<f64>,
    pub pm_deg: Option<f64>,
    pub sr_pos: Option<f64>,
    pub sr_neg: Option<f64>,
    pub power_w: Option<f64>,
}
