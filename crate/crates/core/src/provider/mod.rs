//! Sources of sizing plans: the built-in static provider and an HTTP
//! provider that forwards assembled prompts to a model gateway.

mod http;
mod static_plan;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{extract_block, HttpConfig, HttpProvider, Transport, UreqTransport};
pub use static_plan::{reference_plan_for, round0_estimates, topology_of, StaticProvider};

use crate::calibration::{CalibrationRecord, CalibrationTable};
use crate::feedback::{PredictionError, RoundRecord};
use crate::netlist::Netlist;
use crate::plan::DesignTargets;

/// Everything a provider may read for one round. Round 0 carries no
/// feedback artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderRequest {
    pub round: usize,
    pub netlist: Netlist,
    /// The specification the verdict is checked against.
    pub targets: DesignTargets,
    /// Margin-inflated targets the plan will be executed with.
    pub design_targets: DesignTargets,
    pub previous_plan: Option<String>,
    pub calibration: Option<CalibrationTable>,
    pub errors: Vec<PredictionError>,
    pub history: Vec<RoundRecord>,
}

impl ProviderRequest {
    pub fn round0(netlist: Netlist, targets: DesignTargets) -> Self {
        ProviderRequest {
            round: 0,
            netlist,
            design_targets: targets.clone(),
            targets,
            previous_plan: None,
            calibration: None,
            errors: Vec::new(),
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub plan_text: String,
    /// Round 0 only: initial parameter estimates, shaped like extracted
    /// calibration records.
    pub estimates: Option<IndexMap<String, CalibrationRecord>>,
    /// The prompt that produced the plan, when one was sent.
    pub prompt: Option<String>,
    pub retries: usize,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no reference plan for topology '{topology}'; use the http provider")]
    NoReferencePlan { topology: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("network failure: {0}")]
    Network(String),
    #[error("response has no fenced '{label}' block")]
    NoBlock { label: String },
    #[error("plan rejected after {attempts} attempt(s): {}", diagnostics.join("; "))]
    Rejected { attempts: usize, diagnostics: Vec<String> },
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
}

pub trait PlanProvider {
    fn name(&self) -> &str;
    fn provide(&mut self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}
