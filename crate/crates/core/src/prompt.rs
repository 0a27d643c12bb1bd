//! Prompt assembly for model-backed providers.
//!
//! Rule texts live in `assets/prompt/` and are loaded as data. Every
//! prompt is a concatenation of named sections whose spans tile the text.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::format_table;
use crate::feedback::{pm_exception, FeedbackConfig, MetricKind, PredictionError};
use crate::plan::{DesignTargets, Metric};
use crate::provider::ProviderRequest;

pub const ROUND0_SECTIONS: [&str; 7] = [
    "1. Device Roles",
    "2. Device Constraints",
    "3. Signal Path",
    "4. Design Equations",
    "5. DC Bias Verification",
    "6. DC OP Consistency",
    "7. Plan Code with initial device estimates",
];

pub const MARGIN_LINEAR: &str = "For linear metrics (GBW, SR+, SR-): if over-predicted by X%, design for (1 + X/100) x target.";
pub const MARGIN_LOG: &str = "For logarithmic metrics (A_v in dB): if over-predicted by Y dB, design for target + Y dB.";
pub const MARGIN_DEG: &str = "For phase margin: if over-predicted by Z deg, design for target + Z deg.";
pub const PM_EXCEPTION: &str = "PM exception: if your predicted PM is catastrophically low but the measured PM passes, \
the PM equation is what is wrong. Keep the measured value and do not resize to fix the prediction.";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("rules asset is empty")]
    EmptyRules,
    #[error("cannot read prompt asset {path}: {message}")]
    Io { path: String, message: String },
    #[error("round-N prompt requested for round 0")]
    Round0,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: String,
    pub grammar: String,
}

impl RuleSet {
    pub fn builtin() -> Self {
        RuleSet {
            rules: include_str!("../assets/prompt/rules.txt").to_string(),
            grammar: include_str!("../assets/prompt/grammar.txt").to_string(),
        }
    }

    /// Reads `rules.txt` and `grammar.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| PromptError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        };
        Ok(RuleSet {
            rules: read("rules.txt")?,
            grammar: read("grammar.txt")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub text: String,
    /// Named byte spans, contiguous and covering `text`.
    pub sections: Vec<(String, Range<usize>)>,
}

impl PromptBundle {
    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| &self.text[r.clone()])
    }
}

#[derive(Default)]
struct Builder {
    text: String,
    sections: Vec<(String, Range<usize>)>,
}

impl Builder {
    fn section(&mut self, name: &str, body: &str) {
        let start = self.text.len();
        self.text.push_str(body);
        if !body.ends_with('\n') {
            self.text.push('\n');
        }
        self.text.push('\n');
        self.sections.push((name.to_string(), start..self.text.len()));
    }

    fn finish(self) -> PromptBundle {
        PromptBundle {
            text: self.text,
            sections: self.sections,
        }
    }
}

/// Display value of a metric with its unit.
pub fn format_metric(m: Metric, v: f64) -> String {
    match m {
        Metric::Av => format!("{v:.2} dB"),
        Metric::Gbw => format!("{:.2} MHz", v / 1e6),
        Metric::Pm => format!("{v:.2} deg"),
        Metric::SrPos | Metric::SrNeg => format!("{:.2} V/us", v / 1e6),
        Metric::Power => format!("{:.4} mW", v * 1e3),
    }
}

pub fn metric_label(m: Metric) -> &'static str {
    match m {
        Metric::Av => "A_v (1 Hz)",
        Metric::Gbw => "GBW",
        Metric::Pm => "PM",
        Metric::SrPos => "SR+",
        Metric::SrNeg => "SR-",
        Metric::Power => "Power",
    }
}

/// One line per set target; unset metrics are omitted.
pub fn format_targets(t: &DesignTargets) -> String {
    let mut s = String::new();
    for m in Metric::ALL {
        let Some(v) = t.get(m) else { continue };
        let rel = if m == Metric::Power { "\u{2264}" } else { "\u{2265}" };
        let _ = writeln!(s, "- {}: {rel} {}", metric_label(m), format_metric(m, v));
    }
    let _ = writeln!(s, "- C_L = {} pF", t.cl * 1e12);
    let _ = writeln!(s, "- Supplies: VDD = {} V, VSS = {} V", t.vdd, t.vss);
    s
}

fn check_rules(rules: &RuleSet) -> Result<(), PromptError> {
    if rules.rules.trim().is_empty() {
        return Err(PromptError::EmptyRules);
    }
    Ok(())
}

fn common_head(b: &mut Builder, req_net: &str, targets: &DesignTargets, rules: &RuleSet) {
    b.section("netlist", &format!("## Netlist\n```\n{req_net}```"));
    b.section("targets", &format!("## Target specifications\n{}", format_targets(targets)));
    b.section("rules", &format!("## Constraint rules\n{}", rules.rules));
    b.section("grammar", &format!("## Plan language\n```\n{}```", rules.grammar));
}

pub fn assemble_round0(net: &crate::netlist::Netlist, targets: &DesignTargets, rules: &RuleSet) -> Result<PromptBundle, PromptError> {
    check_rules(rules)?;
    let mut b = Builder::default();
    b.section(
        "task",
        &format!(
            "# Op-amp sizing, round 0\nSize the {} circuit below to meet every target in one simulation.",
            net.name
        ),
    );
    common_head(&mut b, &net.serialize(), targets, rules);
    let mut out = String::from("## Required answer structure\nAnswer in these sections, in this order:\n");
    for s in ROUND0_SECTIONS {
        let _ = writeln!(out, "### {s}");
    }
    out.push_str(
        "\nSection 7 holds one fenced block labelled `plan` with the sizing plan, and one fenced block \
labelled `estimates` with a JSON object mapping each device to {\"mu_cox\", \"agm\", \"lambda\", \"vth\"} in SI units.\n",
    );
    b.section("structure", &out);
    Ok(b.finish())
}

fn format_errors(errors: &[PredictionError]) -> String {
    let mut s = format!("{:<12} {:>14} {:>14} {:>12}\n", "Metric", "Predicted", "Measured", "Error");
    for e in errors {
        let err = match e.error {
            Some(v) => format!("{v:+.2} {}", e.kind.unit()),
            None => "undefined".to_string(),
        };
        let _ = writeln!(
            s,
            "{:<12} {:>14} {:>14} {:>12}",
            metric_label(e.metric),
            format_metric(e.metric, e.predicted),
            format_metric(e.metric, e.measured),
            err
        );
    }
    s
}

/// Errors above the caps are reported as measured but design for the capped
/// margin, matching the targets the loop derives.
fn margin_lines(errors: &[PredictionError], base: &DesignTargets, suppress_pm: bool, cfg: &FeedbackConfig) -> String {
    let mut s = String::new();
    for e in errors {
        let (Some(err), Some(target)) = (e.error, base.get(e.metric)) else { continue };
        if e.metric == Metric::Power || err <= 0.0 {
            continue;
        }
        if e.metric == Metric::Pm && suppress_pm {
            continue;
        }
        let label = metric_label(e.metric);
        let line = match e.kind {
            MetricKind::Linear => {
                let f = 1.0 + err.min(cfg.linear_cap_pct) / 100.0;
                format!(
                    "{label} over-predicted by {err:.1}%: design for {f:.2} x target ({}).",
                    format_metric(e.metric, target * f)
                )
            }
            MetricKind::LogDb => {
                let m = err.min(cfg.log_cap_db);
                format!(
                    "{label} over-predicted by {err:.2} dB: design for target + {m:.2} dB ({}).",
                    format_metric(e.metric, target + m)
                )
            }
            MetricKind::Degrees => {
                let m = err.min(cfg.degree_cap);
                format!(
                    "{label} over-predicted by {err:.2} deg: design for target + {m:.2} deg ({}).",
                    format_metric(e.metric, target + m)
                )
            }
        };
        s.push_str(&line);
        s.push('\n');
    }
    if s.is_empty() {
        s.push_str("No metric was over-predicted; no margin is required.\n");
    }
    s
}

fn history_table(req: &ProviderRequest) -> String {
    let mut s = format!("{:<6}", "Round");
    for m in Metric::ALL {
        let _ = write!(s, " {:>14}", metric_label(m));
    }
    s.push_str("  Verdict\n");
    for r in &req.history {
        let _ = write!(s, "{:<6}", r.round);
        for m in Metric::ALL {
            let cell = m.of(&r.measured).map_or("-".to_string(), |v| format_metric(m, v));
            let _ = write!(s, " {cell:>14}");
        }
        s.push_str(if r.verdict.pass { "  PASS\n" } else { "  FAIL\n" });
    }
    s
}

pub fn assemble_round_n(req: &ProviderRequest, rules: &RuleSet, cfg: &FeedbackConfig) -> Result<PromptBundle, PromptError> {
    check_rules(rules)?;
    if req.round == 0 {
        return Err(PromptError::Round0);
    }
    let mut b = Builder::default();
    b.section(
        "task",
        &format!(
            "# Op-amp sizing, round {}\nUpdate the sizing plan for {} using the measured results below. \
Keep the device parameters from calibration; do not re-estimate them.",
            req.round, req.netlist.name
        ),
    );
    common_head(&mut b, &req.netlist.serialize(), &req.targets, rules);
    if let Some(plan) = &req.previous_plan {
        b.section("previous_plan", &format!("## Previous plan\n```plan\n{plan}```"));
    }
    if let Some(table) = &req.calibration {
        // triode and cutoff warnings are part of the table text
        b.section("calibration", &format!("## Calibration (from the last DC operating point)\n{}", format_table(table)));
    }
    b.section("errors", &format!("## Predicted vs measured\n{}", format_errors(&req.errors)));
    let suppress = pm_exception(&req.errors, &req.targets, cfg);
    let mut margin = format!("## Margin rules\n{MARGIN_LINEAR}\n{MARGIN_LOG}\n{MARGIN_DEG}\n{PM_EXCEPTION}\n\n");
    if suppress {
        margin.push_str("The PM exception applies this round: the measured PM passes, keep the PM target unchanged.\n");
    }
    margin.push_str(&margin_lines(&req.errors, &req.targets, suppress, cfg));
    b.section("margins", &margin);
    b.section("history", &format!("## History of all rounds\n{}", history_table(req)));
    b.section(
        "structure",
        "## Required answer\nReturn the complete updated plan in one fenced block labelled `plan`.\n",
    );
    Ok(b.finish())
}
