//! Plain-text and CSV reports rebuilt from run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::calibration::{format_table, CalibrationTable};
use crate::feedback::check_convergence;
use crate::netlist::parse_netlist;
use crate::orchestrator::{round_dir_name, CampaignConfig};
use crate::plan::{Metric, PlanOutcome};
use crate::prompt::{format_metric, metric_label};
use crate::sim::MetricSet;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: not a run directory ({reason})")]
    Corrupt { path: String, reason: String },
}

fn corrupt(path: &Path, reason: impl Into<String>) -> ReportError {
    ReportError::Corrupt {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| corrupt(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| corrupt(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRow {
    pub round: usize,
    pub predicted: MetricSet,
    pub measured: MetricSet,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub topology: String,
    pub converged: bool,
    /// Completed simulations, round 0 included.
    pub rounds: usize,
    pub trajectory: Vec<RoundRow>,
    pub calibration: Vec<(usize, CalibrationTable)>,
    /// Set when the campaign stopped on an error in this round.
    pub failed_round: Option<usize>,
}

impl RunSummary {
    pub fn final_metrics(&self) -> Option<&MetricSet> {
        self.trajectory.last().map(|r| &r.measured)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBundle {
    pub runs: Vec<RunSummary>,
}

#[derive(serde::Deserialize)]
struct MetricsDoc {
    metrics: MetricSet,
}

/// Reads `campaign.json`, `input.sp` and every `round_NN/` directory.
pub fn load_run(dir: &Path) -> Result<RunSummary, ReportError> {
    let cfg: CampaignConfig = read_json(&dir.join("campaign.json"))?;
    let input = dir.join("input.sp");
    let net_text = fs::read_to_string(&input).map_err(|e| corrupt(&input, e.to_string()))?;
    let net = parse_netlist(&net_text).map_err(|e| corrupt(&input, e.to_string()))?;
    let mut trajectory = Vec::new();
    let mut calibration = Vec::new();
    let mut failed_round = None;
    for round in 0.. {
        let rdir = dir.join(round_dir_name(round));
        if !rdir.is_dir() {
            break;
        }
        if rdir.join("failure.txt").exists() || !rdir.join("metrics.json").exists() {
            failed_round = Some(round);
            break;
        }
        let outcome: PlanOutcome = read_json(&rdir.join("design.json"))?;
        let m: MetricsDoc = read_json(&rdir.join("metrics.json"))?;
        let table: CalibrationTable = read_json(&rdir.join("calibration.json"))?;
        let pass = check_convergence(&m.metrics, &cfg.targets).pass;
        trajectory.push(RoundRow {
            round,
            predicted: outcome.predicted,
            measured: m.metrics,
            pass,
        });
        calibration.push((round, table));
    }
    if trajectory.is_empty() && failed_round.is_none() {
        return Err(corrupt(dir, "no round directories"));
    }
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        topology: net.name,
        converged: trajectory.last().is_some_and(|r| r.pass),
        rounds: trajectory.len(),
        trajectory,
        calibration,
        failed_round,
    })
}

pub fn build_report(dirs: &[PathBuf]) -> Result<ReportBundle, ReportError> {
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<_, _>>()?;
    Ok(ReportBundle { runs })
}

fn cell(m: Metric, v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format_metric(m, v))
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn render_text(b: &ReportBundle) -> String {
    let mut out = String::from("Convergence\n");
    let mut head = vec!["Topology".to_string(), "Rounds".into(), "Converged".into()];
    head.extend(Metric::ALL.iter().map(|m| metric_label(*m).to_string()));
    let mut rows = vec![head];
    for r in &b.runs {
        let mut row = vec![
            r.topology.clone(),
            r.rounds.to_string(),
            match (r.converged, r.failed_round) {
                (true, _) => "yes".into(),
                (false, Some(k)) => format!("error in round {k}"),
                (false, None) => "no".into(),
            },
        ];
        let fm = r.final_metrics();
        row.extend(Metric::ALL.iter().map(|m| cell(*m, fm.and_then(|s| m.of(s)))));
        rows.push(row);
    }
    out.push_str(&aligned(&rows));

    for r in &b.runs {
        let _ = write!(out, "\nTrajectory: {} ({})\n", r.topology, r.dir.display());
        let mut head = vec!["Round".to_string()];
        for m in Metric::ALL {
            head.push(format!("{} meas", metric_label(m)));
            head.push(format!("{} pred", metric_label(m)));
        }
        head.push("Verdict".into());
        let mut rows = vec![head];
        for t in &r.trajectory {
            let mut row = vec![t.round.to_string()];
            for m in Metric::ALL {
                row.push(cell(m, m.of(&t.measured)));
                row.push(cell(m, m.of(&t.predicted)));
            }
            row.push(if t.pass { "PASS".into() } else { "FAIL".into() });
            rows.push(row);
        }
        out.push_str(&aligned(&rows));
        for (round, table) in &r.calibration {
            let _ = write!(out, "\nCalibration, round {round}\n{}", format_table(table));
        }
    }
    out
}

/// One line per (run, round): measured and predicted metrics in SI units.
pub fn render_csv(b: &ReportBundle) -> String {
    let mut out = String::from("topology,round,pass");
    for m in Metric::ALL {
        let _ = write!(out, ",{m}_measured,{m}_predicted");
    }
    out.push('\n');
    for r in &b.runs {
        for t in &r.trajectory {
            let _ = write!(out, "{},{},{}", r.topology, t.round, t.pass);
            for m in Metric::ALL {
                let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
                let _ = write!(out, ",{},{}", f(m.of(&t.measured)), f(m.of(&t.predicted)));
            }
            out.push('\n');
        }
    }
    out
}
