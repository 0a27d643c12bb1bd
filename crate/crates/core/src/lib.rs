//! Self-calibrating op-amp sizing: netlist parsing, a built-in MNA
//! simulator, operating-point calibration, a sizing-plan DSL and the
//! feedback loop that ties them together.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod device;
pub mod feedback;
pub mod netlist;
pub mod orchestrator;
pub mod plan;
pub mod prompt;
pub mod provider;
pub mod report;
pub mod sim;
pub mod units;
