//! Command-line front end. Exit codes: 0 success or converged, 1 ran but
//! did not converge, 2 usage or configuration error, 3 runtime failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;

use crate::calibration::{calibrate, format_table, CalibrationRecord, CalibrationTable};
use crate::config::{load_card, load_targets};
use crate::device::ProcessCard;
use crate::feedback::RoundRecord;
use crate::netlist::{parse_netlist, Netlist};
use crate::orchestrator::{make_provider, run_campaign_with, CampaignConfig, CampaignError, ProviderChoice};
use crate::plan::{execute_plan, parse_plan, validate_plan, DesignTargets, Metric};
use crate::prompt::{format_metric, metric_label};
use crate::provider::{reference_plan_for, round0_estimates, topology_of, HttpConfig};
use crate::report::{build_report, render_csv, render_text};
use crate::sim::{measure, MetricSet, OperatingPoint, TestbenchConfig};
use crate::units::format_eng;

pub const TOKEN_ENV: &str = "AMPSIZE_TOKEN";

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ampsize", version, about = "Op-amp sizing with simulation-in-the-loop calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a sizing campaign until the targets are met.
    Run(RunArgs),
    /// Simulate a netlist once and write op.json and metrics.json.
    Simulate(SimulateArgs),
    /// Print the calibration table of a saved operating point.
    Calibrate(CalibrateArgs),
    /// Execute a sizing plan against calibration data, without simulating.
    PlanExec(PlanExecArgs),
    /// Summarise one or more run directories.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Static,
    Http,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub netlist: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    /// Process card; the built-in 180 nm toy card when omitted.
    #[arg(long)]
    pub process: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "static")]
    pub provider: ProviderKind,
    /// Gateway URL for the http provider. The bearer token is read from AMPSIZE_TOKEN.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub max_retries: usize,
    #[arg(long, default_value_t = crate::orchestrator::DEFAULT_MAX_ROUNDS)]
    pub max_rounds: usize,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Scale applied to the static provider's round-0 muCox estimates.
    #[arg(long, default_value_t = 1.0)]
    pub mu_cox_scale: f64,
    /// Independent campaigns to run; each gets its own run_NN subdirectory.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub netlist: PathBuf,
    #[arg(long)]
    pub process: Option<PathBuf>,
    /// Only the GBW target is used, to pick the transient step.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Directory for op.json and metrics.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Operating-point JSON as written to op.json.
    #[arg(long)]
    pub op: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PlanExecArgs {
    /// Plan file; the reference plan for the netlist topology when omitted.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub netlist: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub process: Option<PathBuf>,
    /// Calibration: a device map, a calibration table or an operating point.
    /// Round-0 estimates from the process card when omitted.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub run_dirs: Vec<PathBuf>,
    /// Also write the per-round trajectory as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: msg.into(),
    }
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_RUNTIME,
        message: msg.into(),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_net(path: &Path) -> Result<Netlist, CliError> {
    parse_netlist(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_process(path: Option<&Path>) -> Result<ProcessCard, CliError> {
    match path {
        None => Ok(ProcessCard::t180_toy()),
        Some(p) => load_card(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))),
    }
}

fn load_tgts(path: &Path, net: &Netlist) -> Result<DesignTargets, CliError> {
    load_targets(&read(path)?, Some(net)).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn metrics_line(m: &MetricSet) -> String {
    Metric::ALL
        .iter()
        .map(|k| {
            let v = k.of(m).map_or("-".to_string(), |v| format_metric(*k, v));
            format!("{} {v}", metric_label(*k))
        })
        .collect::<Vec<_>>()
        .join(" | ")
}

fn round_line(r: &RoundRecord) -> String {
    let verdict = if r.verdict.pass {
        "PASS".to_string()
    } else {
        let f: Vec<String> = r.verdict.failing().map(|m| m.metric.to_string()).collect();
        format!("FAIL ({})", f.join(", "))
    };
    format!("round {:>2}: {} => {verdict}", r.round, metrics_line(&r.measured))
}

/// Accepts `{device: record}`, a table with `rows`, or an operating point
/// with `device_ops` (calibrated on the fly).
pub fn load_calibration(text: &str) -> Result<IndexMap<String, CalibrationRecord>, String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if v.get("device_ops").is_some() {
        let op: OperatingPoint = serde_json::from_value(v).map_err(|e| e.to_string())?;
        return Ok(calibrate(&op).by_device());
    }
    if v.get("rows").is_some() {
        let t: CalibrationTable = serde_json::from_value(v).map_err(|e| e.to_string())?;
        return Ok(t.by_device());
    }
    serde_json::from_value(v).map_err(|e| e.to_string())
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let net = load_net(&a.netlist)?;
    let targets = load_tgts(&a.targets, &net)?;
    let card = load_process(a.process.as_deref())?;
    if a.repeat == 0 {
        return Err(usage("--repeat must be at least 1"));
    }
    let mut cfg = CampaignConfig::new(&a.netlist, targets, card);
    cfg.max_rounds = a.max_rounds;
    cfg.provider = match a.provider {
        ProviderKind::Static => ProviderChoice::Static {
            mu_cox_scale: a.mu_cox_scale,
        },
        ProviderKind::Http => {
            let endpoint = a
                .endpoint
                .clone()
                .ok_or_else(|| usage("--provider http needs --endpoint"))?;
            let mut h = HttpConfig::new(endpoint);
            h.max_retries = a.max_retries;
            h.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
            ProviderChoice::Http(h)
        }
    };
    let mut all_converged = true;
    for k in 0..a.repeat {
        cfg.run_dir = a.run_dir.as_ref().map(|d| {
            if a.repeat > 1 {
                d.join(format!("run_{:02}", k + 1))
            } else {
                d.clone()
            }
        });
        if a.repeat > 1 {
            let _ = writeln!(out, "== campaign {} of {}", k + 1, a.repeat);
        }
        let mut provider = make_provider(&cfg).map_err(|e| usage(e.to_string()))?;
        let result = run_campaign_with(&cfg, &net, provider.as_mut(), &mut |r| {
            let _ = writeln!(out, "{}", round_line(r));
        })
        .map_err(|e| match e {
            CampaignError::Config(_) => usage(e.to_string()),
            _ => runtime(e.to_string()),
        })?;
        for w in &result.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        if let Some((a, b)) = result.cycle {
            let _ = writeln!(out, "note: round {b} repeated the design of round {a}");
        }
        if result.converged {
            let _ = writeln!(out, "converged in {} round(s)", result.rounds_used);
        } else {
            all_converged = false;
            let _ = writeln!(out, "not converged after {} round(s)", result.rounds_used);
        }
    }
    Ok(if all_converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let net = load_net(&a.netlist)?;
    let card = load_process(a.process.as_deref())?;
    let mut tb = TestbenchConfig::default();
    if let Some(p) = &a.targets {
        if let Some(g) = load_tgts(p, &net)?.gbw_hz_min {
            tb.gbw_target = g;
        }
    }
    let m = measure(&net, &card, &tb).map_err(|e| runtime(e.to_string()))?;
    let _ = writeln!(out, "{}", metrics_line(&m.metrics));
    if let Some(nc) = &m.no_crossing {
        let _ = writeln!(out, "warning: {nc}");
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        write_file(&dir.join("op.json"), &to_json(&m.op))?;
        write_file(
            &dir.join("metrics.json"),
            &to_json(&serde_json::json!({ "metrics": m.metrics, "slew": m.slew, "no_crossing": m.no_crossing })),
        )?;
        let _ = writeln!(out, "wrote {}", dir.display());
    }
    Ok(EXIT_OK)
}

fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let text = read(&a.op)?;
    let op: OperatingPoint =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", a.op.display())))?;
    let table = calibrate(&op);
    if a.json {
        let _ = write!(out, "{}", to_json(&table));
    } else {
        let _ = write!(out, "{}", format_table(&table));
    }
    Ok(EXIT_OK)
}

fn cmd_plan_exec(a: &PlanExecArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let net = load_net(&a.netlist)?;
    let targets = load_tgts(&a.targets, &net)?;
    let text = match &a.plan {
        Some(p) => read(p)?,
        None => {
            let topo = topology_of(&net);
            reference_plan_for(&topo)
                .ok_or_else(|| usage(format!("no reference plan for topology '{topo}'; pass --plan")))?
                .to_string()
        }
    };
    let plan = parse_plan(&text).map_err(|e| usage(e.to_string()))?;
    let diags = validate_plan(&plan, &net, &targets);
    if !diags.is_empty() {
        let d: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(usage(format!("plan rejected:\n  {}", d.join("\n  "))));
    }
    let calib = match &a.calib {
        Some(p) => load_calibration(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => round0_estimates(&net, &load_process(a.process.as_deref())?),
    };
    let outcome = execute_plan(&plan, &calib, &targets).map_err(|e| runtime(e.to_string()))?;
    if a.json {
        let _ = write!(out, "{}", to_json(&outcome));
        return Ok(EXIT_OK);
    }
    let d = &outcome.design;
    let _ = writeln!(out, "Design");
    for (n, w) in &d.widths {
        let l = d.lengths.get(n).map_or(String::new(), |l| format!(" L={}", format_eng(*l)));
        let _ = writeln!(out, "  {n} W={}{l}", format_eng(*w));
    }
    for (n, l) in d.lengths.iter().filter(|(n, _)| !d.widths.contains_key(*n)) {
        let _ = writeln!(out, "  {n} L={}", format_eng(*l));
    }
    for (n, v) in d.passives.iter().chain(&d.bias_currents) {
        let _ = writeln!(out, "  {n} = {}", format_eng(*v));
    }
    let _ = writeln!(out, "Predicted");
    for m in Metric::ALL {
        if let Some(v) = m.of(&outcome.predicted) {
            let _ = writeln!(out, "  {} = {}", metric_label(m), format_metric(m, v));
        }
    }
    let _ = writeln!(out, "Bindings");
    for (k, v) in &outcome.bindings {
        let _ = writeln!(out, "  {k} = {}", format_eng(*v));
    }
    Ok(EXIT_OK)
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let b = build_report(&a.run_dirs).map_err(|e| usage(e.to_string()))?;
    let _ = write!(out, "{}", render_text(&b));
    if let Some(p) = &a.csv {
        write_file(p, &render_csv(&b))?;
    }
    Ok(EXIT_OK)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Calibrate(a) => cmd_calibrate(a, out),
        Command::PlanExec(a) => cmd_plan_exec(a, out),
        Command::Report(a) => cmd_report(a, out),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let sink: &mut dyn Write = if informational { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return if informational { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}
