//! Predicted-versus-measured errors, margin-inflated design targets and the
//! convergence verdict.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::netlist::DesignVariables;
use crate::plan::{DesignTargets, Metric};
use crate::sim::MetricSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricKind {
    Linear,
    LogDb,
    Degrees,
}

impl MetricKind {
    pub fn of(m: Metric) -> Self {
        match m {
            Metric::Av => MetricKind::LogDb,
            Metric::Pm => MetricKind::Degrees,
            Metric::Gbw | Metric::SrPos | Metric::SrNeg | Metric::Power => MetricKind::Linear,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            MetricKind::Linear => "%",
            MetricKind::LogDb => "dB",
            MetricKind::Degrees => "deg",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Linear => "LINEAR",
            MetricKind::LogDb => "LOG_DB",
            MetricKind::Degrees => "DEGREES",
        })
    }
}

/// Positive `error` means the plan over-predicted. `error` is `None` when a
/// linear metric was measured as zero and the percentage is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    pub metric: Metric,
    pub kind: MetricKind,
    pub predicted: f64,
    pub measured: f64,
    pub error: Option<f64>,
}

/// One record per metric present in both sets, in canonical metric order.
pub fn compute_errors(predicted: &MetricSet, measured: &MetricSet) -> Vec<PredictionError> {
    let mut out = Vec::new();
    for m in Metric::ALL {
        let (Some(p), Some(x)) = (m.of(predicted), m.of(measured)) else {
            continue;
        };
        let kind = MetricKind::of(m);
        let error = match kind {
            MetricKind::Linear if x == 0.0 => None,
            MetricKind::Linear => Some((p - x) / x * 100.0),
            MetricKind::LogDb | MetricKind::Degrees => Some(p - x),
        };
        out.push(PredictionError {
            metric: m,
            kind,
            predicted: p,
            measured: x,
            error,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub linear_cap_pct: f64,
    pub log_cap_db: f64,
    pub degree_cap: f64,
    pub pm_catastrophe_threshold: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            linear_cap_pct: 200.0,
            log_cap_db: 12.0,
            degree_cap: 20.0,
            pm_catastrophe_threshold: 20.0,
        }
    }
}

/// True when the PM prediction is catastrophically low but the measured PM
/// already meets the base target.
pub fn pm_exception(errors: &[PredictionError], base: &DesignTargets, cfg: &FeedbackConfig) -> bool {
    let Some(target) = base.pm_deg_min else { return false };
    errors
        .iter()
        .find(|e| e.metric == Metric::Pm)
        .is_some_and(|e| e.predicted < cfg.pm_catastrophe_threshold && e.measured >= target)
}

/// Margin-inflated targets for the next round. Recomputed from the latest
/// errors only; under-prediction leaves a target at its base value.
///
/// Power is an upper bound, so its margin applies in the opposite
/// direction: if the plan under-predicted power by X% of the prediction,
/// the plan is asked for `base / (1 + X/100)`.
pub fn derive_design_targets(base: &DesignTargets, errors: &[PredictionError], cfg: &FeedbackConfig) -> DesignTargets {
    let mut out = base.clone();
    let suppress_pm = pm_exception(errors, base, cfg);
    for e in errors {
        let Some(b) = base.get(e.metric) else { continue };
        let Some(err) = e.error else { continue };
        let design = match (e.metric, e.kind) {
            (Metric::Power, _) => {
                let under = (e.measured - e.predicted) / e.predicted * 100.0;
                if e.predicted > 0.0 && under > 0.0 {
                    b / (1.0 + under.min(cfg.linear_cap_pct) / 100.0)
                } else {
                    b
                }
            }
            (Metric::Pm, _) if suppress_pm => b,
            (_, MetricKind::Linear) => b * (1.0 + err.clamp(0.0, cfg.linear_cap_pct) / 100.0),
            (_, MetricKind::LogDb) => b + err.clamp(0.0, cfg.log_cap_db),
            (_, MetricKind::Degrees) => b + err.clamp(0.0, cfg.degree_cap),
        };
        out.set(e.metric, Some(design));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVerdict {
    pub metric: Metric,
    pub target: f64,
    pub measured: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub metrics: Vec<MetricVerdict>,
}

impl Verdict {
    pub fn failing(&self) -> impl Iterator<Item = &MetricVerdict> {
        self.metrics.iter().filter(|m| !m.pass)
    }
}

/// Inclusive comparison against the base targets. A targeted metric that
/// was not measured fails.
pub fn check_convergence(measured: &MetricSet, base: &DesignTargets) -> Verdict {
    let mut metrics = Vec::new();
    for m in Metric::ALL {
        let Some(target) = base.get(m) else { continue };
        let value = m.of(measured);
        let pass = match (m, value) {
            (_, None) => false,
            (Metric::Power, Some(v)) => v <= target,
            (_, Some(v)) => v >= target,
        };
        metrics.push(MetricVerdict {
            metric: m,
            target,
            measured: value,
            pass,
        });
    }
    Verdict {
        pass: metrics.iter().all(|m| m.pass),
        metrics,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub design: DesignVariables,
    pub predicted: MetricSet,
    pub measured: MetricSet,
    pub errors: Vec<PredictionError>,
    pub verdict: Verdict,
    /// Targets the plan was executed against this round.
    pub design_targets: DesignTargets,
}

/// Append-only log of completed rounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundHistory {
    rounds: Vec<RoundRecord>,
}

impl RoundHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics if `rec.round` does not continue the sequence.
    pub fn push(&mut self, rec: RoundRecord) {
        assert_eq!(rec.round, self.rounds.len(), "round indices must be contiguous from 0");
        self.rounds.push(rec);
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn last(&self) -> Option<&RoundRecord> {
        self.rounds.last()
    }
}
