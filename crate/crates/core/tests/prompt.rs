use std::path::PathBuf;

use ampsize::calibration::{CalibrationRecord, CalibrationTable};
use ampsize::config::load_targets;
use ampsize::device::Region;
use ampsize::feedback::{compute_errors, FeedbackConfig};
use ampsize::netlist::{parse_netlist, MosType, Netlist};
use ampsize::plan::{DesignTargets, REFERENCE_2SMC};
use ampsize::prompt::{
    assemble_round0, assemble_round_n, PromptBundle, PromptError, RuleSet, MARGIN_DEG, MARGIN_LINEAR, MARGIN_LOG,
    PM_EXCEPTION, ROUND0_SECTIONS,
};
use ampsize::provider::ProviderRequest;
use ampsize::sim::MetricSet;

fn net() -> Netlist {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/netlists/2smc_n.sp");
    parse_netlist(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn targets(n: &Netlist) -> DesignTargets {
    load_targets("av = 60\ngbw = 100meg\npm = 60\nsr = 50meg\ncl = 1p\n", Some(n)).unwrap()
}

fn assert_tiles(b: &PromptBundle) {
    let mut at = 0;
    for (name, r) in &b.sections {
        assert_eq!(r.start, at, "section {name} leaves a gap");
        at = r.end;
    }
    assert_eq!(at, b.text.len());
}

fn gbw_set(v: f64) -> MetricSet {
    MetricSet {
        gbw_hz: Some(v),
        ..MetricSet::default()
    }
}

fn round1(errors_from: (MetricSet, MetricSet), calibration: Option<CalibrationTable>) -> ProviderRequest {
    let n = net();
    let t = targets(&n);
    let mut req = ProviderRequest::round0(n, t);
    req.round = 1;
    req.previous_plan = Some(REFERENCE_2SMC.to_string());
    req.errors = compute_errors(&errors_from.0, &errors_from.1);
    req.calibration = calibration;
    req
}

#[test]
fn round0_has_each_header_once() {
    let n = net();
    let b = assemble_round0(&n, &targets(&n), &RuleSet::builtin()).unwrap();
    for h in ROUND0_SECTIONS {
        assert_eq!(b.text.matches(h).count(), 1, "{h}");
    }
    assert_tiles(&b);
    assert!(b.section("netlist").unwrap().contains("M8 OUT N2 VDD VDD PMOS"));
}

#[test]
fn round0_is_deterministic() {
    let n = net();
    let t = targets(&n);
    let a = assemble_round0(&n, &t, &RuleSet::builtin()).unwrap();
    let b = assemble_round0(&n, &t, &RuleSet::builtin()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn targets_section_uses_inequalities_and_skips_unset() {
    let n = net();
    let b = assemble_round0(&n, &targets(&n), &RuleSet::builtin()).unwrap();
    let t = b.section("targets").unwrap();
    assert!(t.contains("\u{2265} 60.00 dB"), "{t}");
    assert!(t.contains("\u{2265} 100.00 MHz"), "{t}");
    assert!(!t.contains("Power"), "{t}");
}

#[test]
fn empty_rules_are_rejected() {
    let n = net();
    let rules = RuleSet {
        rules: "  \n".into(),
        grammar: RuleSet::builtin().grammar,
    };
    assert_eq!(assemble_round0(&n, &targets(&n), &rules).unwrap_err(), PromptError::EmptyRules);
}

#[test]
fn round_n_states_margin_rules_and_triggered_margin() {
    let req = round1((gbw_set(187e6), gbw_set(100e6)), None);
    let b = assemble_round_n(&req, &RuleSet::builtin(), &FeedbackConfig::default()).unwrap();
    assert_tiles(&b);
    let m = b.section("margins").unwrap();
    for s in [MARGIN_LINEAR, MARGIN_LOG, MARGIN_DEG, PM_EXCEPTION] {
        assert!(m.contains(s));
    }
    assert!(m.contains("GBW over-predicted by 87.0%: design for 1.87 x target (187.00 MHz)"), "{m}");
    assert!(b.section("previous_plan").unwrap().contains("plan reference_2smc"));
}

#[test]
fn round_n_caps_reported_margin() {
    let req = round1((gbw_set(500e6), gbw_set(100e6)), None);
    let b = assemble_round_n(&req, &RuleSet::builtin(), &FeedbackConfig::default()).unwrap();
    assert!(b.section("margins").unwrap().contains("by 400.0%: design for 3.00 x target (300.00 MHz)"));
}

#[test]
fn round_n_without_over_prediction() {
    let req = round1((gbw_set(90e6), gbw_set(100e6)), None);
    let b = assemble_round_n(&req, &RuleSet::builtin(), &FeedbackConfig::default()).unwrap();
    assert!(b.section("margins").unwrap().contains("No metric was over-predicted; no margin is required."));
}

#[test]
fn round_n_carries_region_warnings() {
    let rec = CalibrationRecord {
        device: "M5".into(),
        mos_type: MosType::Nmos,
        w: 2e-6,
        l: 0.2e-6,
        id: 14.2e-6,
        vov: 0.083,
        vds: 0.056,
        gm: 145e-6,
        region: Region::Triode,
        mu_cox: Some(412e-6),
        agm: Some(0.425),
        lambda: Some(13.0),
        ro: Some(5.4e3),
        vth: 0.43,
    };
    let table = CalibrationTable {
        rows: vec![rec],
        warnings: vec!["M5 in TRIODE (|Vds|=56mV < Vov=83mV)".into()],
    };
    let req = round1((gbw_set(90e6), gbw_set(100e6)), Some(table));
    let b = assemble_round_n(&req, &RuleSet::builtin(), &FeedbackConfig::default()).unwrap();
    assert!(b.section("calibration").unwrap().contains("WARNING: M5 in TRIODE"));
}

#[test]
fn round_n_refuses_round_zero() {
    let n = net();
    let req = ProviderRequest::round0(n.clone(), targets(&n));
    assert_eq!(
        assemble_round_n(&req, &RuleSet::builtin(), &FeedbackConfig::default()).unwrap_err(),
        PromptError::Round0
    );
}

#[test]
fn rules_load_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("rules.txt"), "Only rule.\n").unwrap();
    std::fs::write(dir.path().join("grammar.txt"), "plan := ...\n").unwrap();
    let r = RuleSet::load(dir.path()).unwrap();
    assert_eq!(r.rules, "Only rule.\n");
    assert!(RuleSet::load(&dir.path().join("missing")).is_err());
}
