//! The round loop: provider, plan execution, simulation, verdict,
//! calibration and margin feedback, with every artifact persisted.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{calibrate, format_table, CalibrationRecord, CalibrationTable};
use crate::device::ProcessCard;
use crate::feedback::{
    check_convergence, compute_errors, derive_design_targets, FeedbackConfig, PredictionError, RoundHistory,
    RoundRecord,
};
use crate::netlist::{parse_netlist, DesignVariables, Netlist, NetlistError};
use crate::plan::{execute_plan, parse_plan, validate_plan, DesignTargets, PlanError};
use crate::prompt::RuleSet;
use crate::provider::{HttpConfig, HttpProvider, PlanProvider, ProviderError, ProviderRequest, StaticProvider};
use crate::sim::{measure, MetricSet, SimError, TestbenchConfig};

pub const DEFAULT_MAX_ROUNDS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderChoice {
    Static {
        /// Scales the round-0 muCox estimates (1 = card values).
        #[serde(default = "one")]
        mu_cox_scale: f64,
    },
    Http(HttpConfig),
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub netlist_path: PathBuf,
    pub targets: DesignTargets,
    pub card: ProcessCard,
    pub provider: ProviderChoice,
    pub max_rounds: usize,
    pub run_dir: Option<PathBuf>,
    pub feedback: FeedbackConfig,
    pub testbench: TestbenchConfig,
}

impl CampaignConfig {
    pub fn new(netlist_path: impl Into<PathBuf>, targets: DesignTargets, card: ProcessCard) -> Self {
        let mut testbench = TestbenchConfig::default();
        if let Some(g) = targets.gbw_hz_min {
            testbench.gbw_target = g;
        }
        CampaignConfig {
            netlist_path: netlist_path.into(),
            targets,
            card,
            provider: ProviderChoice::Static { mu_cox_scale: 1.0 },
            max_rounds: DEFAULT_MAX_ROUNDS,
            run_dir: None,
            feedback: FeedbackConfig::default(),
            testbench,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub converged: bool,
    /// Simulations run, round 0 included.
    pub rounds_used: usize,
    pub final_design: DesignVariables,
    pub final_metrics: MetricSet,
    pub history: RoundHistory,
    /// (earlier, later) rounds that produced identical design variables.
    pub cycle: Option<(usize, usize)>,
    /// Region warnings from every round, prefixed with the round index.
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("config: {0}")]
    Config(String),
    #[error("netlist: {0}")]
    Netlist(#[from] NetlistError),
    #[error("round {round}: provider failed: {source}")]
    Provider { round: usize, source: ProviderError },
    #[error("round {round}: plan rejected: {}", diagnostics.join("; "))]
    Validation { round: usize, diagnostics: Vec<String> },
    #[error("round {round}: plan execution failed: {source}")]
    Plan { round: usize, source: PlanError },
    #[error("round {round}: sized netlist invalid: {source}")]
    Apply { round: usize, source: NetlistError },
    #[error("round {round}: simulation failed: {source}")]
    Simulation { round: usize, source: SimError },
    #[error("i/o on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CampaignError {
    CampaignError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CampaignError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CampaignError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| io_err(path, e))?;
    write(path, &(text + "\n"))
}

pub fn round_dir_name(round: usize) -> String {
    format!("round_{round:02}")
}

/// Document written as `errors.json` in each round directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub errors: Vec<PredictionError>,
    /// Targets the plan was executed with this round.
    pub design_targets: DesignTargets,
    /// Targets derived for the following round.
    pub next_design_targets: DesignTargets,
}

/// Fresh calibration for conducting devices; devices without parameters
/// (cut off) keep the previous round's values so the plan stays executable.
fn merge_calibration(
    fresh: &CalibrationTable,
    previous: &IndexMap<String, CalibrationRecord>,
) -> IndexMap<String, CalibrationRecord> {
    let mut out = fresh.by_device();
    for (name, rec) in out.iter_mut() {
        if rec.is_conducting() {
            continue;
        }
        if let Some(prev) = previous.get(name).filter(|p| p.is_conducting()) {
            rec.mu_cox = prev.mu_cox;
            rec.agm = prev.agm;
            rec.lambda = prev.lambda;
            rec.ro = prev.ro;
        }
    }
    out
}

pub fn make_provider(cfg: &CampaignConfig) -> Result<Box<dyn PlanProvider>, CampaignError> {
    match &cfg.provider {
        ProviderChoice::Static { mu_cox_scale } => {
            let mut p = StaticProvider::new(cfg.card.clone());
            p.mu_cox_scale = *mu_cox_scale;
            Ok(Box::new(p))
        }
        ProviderChoice::Http(h) => HttpProvider::new(h.clone(), RuleSet::builtin(), cfg.feedback)
            .map(|p| Box::new(p) as Box<dyn PlanProvider>)
            .map_err(|e| CampaignError::Config(e.to_string())),
    }
}

/// Reads the netlist from `cfg.netlist_path` and runs with the configured
/// provider.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    let text = fs::read_to_string(&cfg.netlist_path).map_err(|e| io_err(&cfg.netlist_path, e))?;
    let net = parse_netlist(&text)?;
    let mut provider = make_provider(cfg)?;
    run_campaign_with(cfg, &net, provider.as_mut(), &mut |_| {})
}

/// Runs rounds until the base targets are met or `max_rounds` simulations
/// have been spent. `on_round` sees each completed round.
pub fn run_campaign_with(
    cfg: &CampaignConfig,
    net: &Netlist,
    provider: &mut dyn PlanProvider,
    on_round: &mut dyn FnMut(&RoundRecord),
) -> Result<CampaignResult, CampaignError> {
    if cfg.max_rounds < 1 {
        return Err(CampaignError::Config("max_rounds must be >= 1".into()));
    }
    cfg.targets.validate().map_err(CampaignError::Config)?;
    net.validate()?;
    if let Some(dir) = &cfg.run_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_json(&dir.join("campaign.json"), cfg)?;
        write(&dir.join("input.sp"), &net.serialize())?;
    }

    let base = &cfg.targets;
    let mut history = RoundHistory::new();
    let mut design_targets = base.clone();
    let mut calib: IndexMap<String, CalibrationRecord> = IndexMap::new();
    let mut table: Option<CalibrationTable> = None;
    let mut errors: Vec<PredictionError> = Vec::new();
    let mut previous_plan: Option<String> = None;
    let mut warnings = Vec::new();
    let mut cycle = None;
    let mut converged = false;
    let mut final_design = DesignVariables::default();
    let mut final_metrics = MetricSet::default();

    for round in 0..cfg.max_rounds {
        let rdir = cfg.run_dir.as_ref().map(|d| d.join(round_dir_name(round)));
        if let Some(d) = &rdir {
            fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
        }
        let req = ProviderRequest {
            round,
            netlist: net.clone(),
            targets: base.clone(),
            design_targets: design_targets.clone(),
            previous_plan: previous_plan.clone(),
            calibration: table.clone(),
            errors: errors.clone(),
            history: history.rounds().to_vec(),
        };
        let resp = provider
            .provide(&req)
            .map_err(|source| CampaignError::Provider { round, source })?;
        if let (Some(d), Some(p)) = (&rdir, &resp.prompt) {
            write(&d.join("prompt.txt"), p)?;
        }
        if let Some(d) = &rdir {
            write(&d.join("plan.dsl"), &resp.plan_text)?;
        }
        let plan = parse_plan(&resp.plan_text).map_err(|source| CampaignError::Plan { round, source })?;
        let diags = validate_plan(&plan, net, &design_targets);
        if !diags.is_empty() {
            return Err(CampaignError::Validation {
                round,
                diagnostics: diags.iter().map(|d| d.to_string()).collect(),
            });
        }
        if round == 0 {
            calib = resp.estimates.clone().ok_or_else(|| CampaignError::Provider {
                round,
                source: ProviderError::Precondition("round-0 response carries no estimates".into()),
            })?;
        }
        let outcome =
            execute_plan(&plan, &calib, &design_targets).map_err(|source| CampaignError::Plan { round, source })?;
        let sized = net
            .apply_design_variables(&outcome.design)
            .map_err(|source| CampaignError::Apply { round, source })?;
        if let Some(d) = &rdir {
            write_json(&d.join("design.json"), &outcome)?;
            write(&d.join("netlist.sp"), &sized.serialize())?;
        }

        let m = match measure(&sized, &cfg.card, &cfg.testbench) {
            Ok(m) => m,
            Err(source) => {
                if let Some(d) = &rdir {
                    write(&d.join("failure.txt"), &format!("{source}\n"))?;
                }
                return Err(CampaignError::Simulation { round, source });
            }
        };
        let verdict = check_convergence(&m.metrics, base);
        let errs = compute_errors(&outcome.predicted, &m.metrics);
        let fresh = calibrate(&m.op);
        warnings.extend(fresh.warnings.iter().map(|w| format!("round {round}: {w}")));
        let next_targets = derive_design_targets(base, &errs, &cfg.feedback);
        if let Some(d) = &rdir {
            write_json(&d.join("op.json"), &m.op)?;
            write_json(
                &d.join("metrics.json"),
                &serde_json::json!({ "metrics": m.metrics, "slew": m.slew, "no_crossing": m.no_crossing }),
            )?;
            write(&d.join("calibration.txt"), &format_table(&fresh))?;
            write_json(&d.join("calibration.json"), &fresh)?;
            write_json(
                &d.join("errors.json"),
                &ErrorReport {
                    errors: errs.clone(),
                    design_targets: design_targets.clone(),
                    next_design_targets: next_targets.clone(),
                },
            )?;
        }

        if cycle.is_none() && round >= 2 {
            cycle = history.rounds()[..round - 1]
                .iter()
                .find(|r| r.design == outcome.design)
                .map(|r| (r.round, round));
        }
        let rec = RoundRecord {
            round,
            design: outcome.design.clone(),
            predicted: outcome.predicted.clone(),
            measured: m.metrics.clone(),
            errors: errs.clone(),
            verdict: verdict.clone(),
            design_targets: design_targets.clone(),
        };
        on_round(&rec);
        history.push(rec);
        final_design = outcome.design;
        final_metrics = m.metrics;
        if verdict.pass {
            converged = true;
            break;
        }

        calib = merge_calibration(&fresh, &calib);
        table = Some(fresh);
        design_targets = next_targets;
        errors = errs;
        previous_plan = Some(resp.plan_text);
    }

    let result = CampaignResult {
        converged,
        rounds_used: history.len(),
        final_design,
        final_metrics,
        history,
        cycle,
        warnings,
    };
    if let Some(dir) = &cfg.run_dir {
        write_json(&dir.join("result.json"), &result)?;
    }
    Ok(result)
}
