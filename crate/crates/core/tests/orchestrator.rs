use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use ampsize::config::load_targets;
use ampsize::device::ProcessCard;
use ampsize::feedback::FeedbackConfig;
use ampsize::netlist::{parse_netlist, Netlist};
use ampsize::orchestrator::{
    round_dir_name, run_campaign, run_campaign_with, CampaignConfig, CampaignError, ErrorReport, ProviderChoice,
};
use ampsize::plan::{DesignTargets, REFERENCE_2SMC};
use ampsize::prompt::RuleSet;
use ampsize::provider::{round0_estimates, HttpConfig, HttpProvider, StaticProvider, Transport};

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/netlists").join(name)
}

fn fixture(name: &str) -> Netlist {
    parse_netlist(&std::fs::read_to_string(fixture_path(name)).unwrap()).unwrap()
}

fn targets(n: &Netlist, extra: &str) -> DesignTargets {
    load_targets(&format!("av = 60\ngbw = 100meg\npm = 60\nsr = 50meg\ncl = 1p\n{extra}"), Some(n)).unwrap()
}

fn config(name: &str, t: DesignTargets, scale: f64) -> CampaignConfig {
    let mut cfg = CampaignConfig::new(fixture_path(name), t, ProcessCard::t180_toy());
    cfg.provider = ProviderChoice::Static { mu_cox_scale: scale };
    cfg
}

#[test]
fn infeasible_single_round_reports_not_converged() {
    let n = fixture("2smc_n.sp");
    let t = load_targets("av = 200\ngbw = 100meg\npm = 60\nsr = 50meg\ncl = 1p\n", Some(&n)).unwrap();
    let mut cfg = config("2smc_n.sp", t, 1.0);
    cfg.max_rounds = 1;
    let r = run_campaign(&cfg).unwrap();
    assert!(!r.converged);
    assert_eq!(r.rounds_used, 1);
    assert_eq!(r.history.len(), 1);
}

#[test]
fn zero_rounds_is_a_config_error() {
    let n = fixture("2smc_n.sp");
    let mut cfg = config("2smc_n.sp", targets(&n, ""), 1.0);
    cfg.max_rounds = 0;
    assert!(matches!(run_campaign(&cfg), Err(CampaignError::Config(_))));
}

#[test]
fn floating_node_aborts_round_zero() {
    let n = fixture("2smc_n.sp");
    let text = n.serialize().replace(".end", "CX OUT NF 1p\n.end");
    let bad = parse_netlist(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("2smc_n.sp", targets(&n, ""), 1.0);
    cfg.run_dir = Some(dir.path().to_path_buf());
    let mut p = StaticProvider::new(ProcessCard::t180_toy());
    let err = run_campaign_with(&cfg, &bad, &mut p, &mut |_| {}).unwrap_err();
    match &err {
        CampaignError::Simulation { round: 0, source } => assert!(source.to_string().contains("NF"), "{source}"),
        other => panic!("{other}"),
    }
    let failure = std::fs::read_to_string(dir.path().join("round_00/failure.txt")).unwrap();
    assert!(failure.contains("NF"));
    assert!(!dir.path().join("result.json").exists());
}

fn expect_files(dir: &Path, names: &[&str]) {
    for n in names {
        assert!(dir.join(n).is_file(), "missing {}", dir.join(n).display());
    }
}

#[test]
fn run_directory_layout_and_replay() {
    let n = fixture("2smc_n.sp");
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("2smc_n.sp", targets(&n, ""), 4.0);
    cfg.run_dir = Some(dir.path().to_path_buf());
    let first = run_campaign(&cfg).unwrap();
    assert!(first.converged);
    assert!(first.rounds_used > 1);
    expect_files(dir.path(), &["campaign.json", "input.sp", "result.json"]);
    for k in 0..first.rounds_used {
        let rd = dir.path().join(round_dir_name(k));
        expect_files(
            &rd,
            &[
                "plan.dsl",
                "design.json",
                "netlist.sp",
                "op.json",
                "metrics.json",
                "calibration.txt",
                "calibration.json",
                "errors.json",
            ],
        );
        assert!(!rd.join("prompt.txt").exists(), "static provider writes no prompt");
    }
    assert!(!dir.path().join(round_dir_name(first.rounds_used)).exists());

    // errors.json chains: next targets of round k are the design targets of round k + 1
    let report = |k: usize| -> ErrorReport {
        let p = dir.path().join(round_dir_name(k)).join("errors.json");
        serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
    };
    for k in 0..first.rounds_used - 1 {
        assert_eq!(report(k).next_design_targets, report(k + 1).design_targets);
    }
    assert_eq!(report(0).design_targets, cfg.targets);

    let saved: CampaignConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("campaign.json")).unwrap()).unwrap();
    assert_eq!(saved, cfg);
    let mut replay_cfg = saved;
    replay_cfg.run_dir = None;
    let replay = run_campaign(&replay_cfg).unwrap();
    assert_eq!(replay, first);
}

#[test]
fn verdicts_use_base_targets() {
    let n = fixture("2smc_n.sp");
    let r = run_campaign(&config("2smc_n.sp", targets(&n, ""), 4.0)).unwrap();
    let base = targets(&n, "");
    for rec in r.history.rounds() {
        assert_eq!(rec.verdict, ampsize::feedback::check_convergence(&rec.measured, &base));
    }
    assert!(r.history.rounds().iter().skip(1).any(|rec| rec.design_targets != base));
}

#[test]
fn observer_sees_every_round() {
    let n = fixture("2smc_n.sp");
    let cfg = config("2smc_n.sp", targets(&n, ""), 0.25);
    let mut p = StaticProvider::new(ProcessCard::t180_toy());
    p.mu_cox_scale = 0.25;
    let mut seen = Vec::new();
    let r = run_campaign_with(&cfg, &n, &mut p, &mut |rec| seen.push(rec.round)).unwrap();
    assert_eq!(seen, (0..r.rounds_used).collect::<Vec<_>>());
}

#[derive(Clone)]
struct Canned(Rc<RefCell<Vec<String>>>);

impl Transport for Canned {
    fn post(&self, _url: &str, _body: &str, _token: Option<&str>) -> Result<String, String> {
        let text = self.0.borrow_mut().remove(0);
        Ok(serde_json::json!({ "text": text }).to_string())
    }
}

#[test]
fn http_campaign_persists_prompts() {
    let n = fixture("2smc_n.sp");
    let mut est = serde_json::Map::new();
    for (k, r) in round0_estimates(&n, &ProcessCard::t180_toy()) {
        let v = serde_json::json!({"mu_cox": r.mu_cox.unwrap() * 4.0, "agm": r.agm, "lambda": r.lambda, "vth": r.vth});
        est.insert(k, v);
    }
    let round0 = format!(
        "```plan\n{REFERENCE_2SMC}```\n```estimates\n{}\n```",
        serde_json::Value::Object(est)
    );
    let later = format!("```plan\n{REFERENCE_2SMC}```");
    let answers = Rc::new(RefCell::new(vec![round0, later.clone(), later.clone(), later]));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("2smc_n.sp", targets(&n, ""), 1.0);
    let http_cfg = HttpConfig::new("http://gateway.invalid");
    cfg.provider = ProviderChoice::Http(http_cfg.clone());
    cfg.run_dir = Some(dir.path().to_path_buf());
    let mut p = HttpProvider::with_transport(
        http_cfg,
        RuleSet::builtin(),
        FeedbackConfig::default(),
        Box::new(Canned(answers.clone())),
    )
    .unwrap();
    let r = run_campaign_with(&cfg, &n, &mut p, &mut |_| {}).unwrap();
    assert!(r.converged);
    assert!(r.rounds_used >= 2);
    let p1 = std::fs::read_to_string(dir.path().join("round_01/prompt.txt")).unwrap();
    assert!(p1.contains("## Predicted vs measured"));
    assert!(p1.contains("over-predicted"));
    assert!(dir.path().join("round_00/prompt.txt").is_file());
}
