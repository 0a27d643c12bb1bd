use proptest::prelude::*;

use ampsize::calibration::{extract_device, DeviceMeasurement};
use ampsize::device::{eval_mosfet, ProcessCard, Region};
use ampsize::feedback::{compute_errors, derive_design_targets, FeedbackConfig};
use ampsize::netlist::{parse_netlist, MosType};
use ampsize::plan::{execute_plan, parse_plan, DesignTargets, Metric};
use ampsize::provider::round0_estimates;
use ampsize::sim::MetricSet;
use ampsize::units::{format_exact, parse_si};

fn mos_type() -> impl Strategy<Value = MosType> {
    prop_oneof![Just(MosType::Nmos), Just(MosType::Pmos)]
}

fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(floor)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    // Analytic small-signal conductances against central differences, in
    // every region, away from the region boundaries where they kink.
    #[test]
    fn conductances_match_finite_differences(
        t in mos_type(),
        w in 0.5e-6..50e-6f64,
        l in 0.18e-6..2e-6f64,
        vgs in 0.0..1.6f64,
        vds in -1.6..1.6f64,
        vsb in 0.0..0.8f64,
    ) {
        let card = ProcessCard::t180_toy();
        let s = t.sign();
        let (vgs, vds, vsb) = (s * vgs, s * vds, s * vsb);
        let e = eval_mosfet(&card, t, w, l, vgs, vds, vsb);
        let h = 1e-7;
        let i = |g: f64, d: f64, b: f64| eval_mosfet(&card, t, w, l, g, d, b);
        let probes = [i(vgs - h, vds, vsb), i(vgs + h, vds, vsb), i(vgs, vds - h, vsb),
            i(vgs, vds + h, vsb), i(vgs, vds, vsb - h), i(vgs, vds, vsb + h)];
        // skip points whose stencil straddles a region change or a reversal
        prop_assume!(probes.iter().all(|p| p.region == e.region && p.reversed == e.reversed));
        prop_assume!(e.region != Region::Cutoff);
        let id = |p: &ampsize::device::DeviceEval| p.drain_current(t);
        let gm = (id(&probes[1]) - id(&probes[0])) / (2.0 * h);
        let gds = (id(&probes[3]) - id(&probes[2])) / (2.0 * h);
        let gmb = -(id(&probes[5]) - id(&probes[4])) / (2.0 * h);
        let floor = 1e-9;
        prop_assert!(rel_close(gm, e.gm, 1e-4, floor), "gm {} vs {}", gm, e.gm);
        prop_assert!(rel_close(gds, e.gds, 1e-4, floor), "gds {} vs {}", gds, e.gds);
        prop_assert!(rel_close(gmb, e.gmb, 1e-4, floor), "gmb {} vs {}", gmb, e.gmb);
    }

    // Drain current is continuous across the triode/saturation boundary
    // and through Vds = 0.
    #[test]
    fn current_is_continuous(
        t in mos_type(),
        w in 0.5e-6..50e-6f64,
        l in 0.18e-6..2e-6f64,
        vov in 0.02..1.0f64,
        vsb in 0.0..0.5f64,
    ) {
        let card = ProcessCard::t180_toy();
        let s = t.sign();
        let p = card.params(t);
        let vth = eval_mosfet(&card, t, w, l, s * 1.0, s * 0.5, s * vsb).vth;
        let vgs = s * (vth + vov);
        let eps = 1e-9;
        let at = |vds: f64| eval_mosfet(&card, t, w, l, vgs, s * vds, s * vsb).drain_current(t);
        let scale = 0.5 * p.mu0_cox * w / l * vov * vov;
        prop_assert!((at(vov + eps) - at(vov - eps)).abs() <= 1e-6 * scale);
        prop_assert!((at(eps) - at(-eps)).abs() <= 1e-6 * scale);
    }

    // Extracted parameters reproduce the measurement they came from.
    #[test]
    fn calibration_closes(
        t in mos_type(),
        w in 0.2e-6..100e-6f64,
        l in 0.18e-6..4e-6f64,
        id in 1e-7..1e-3f64,
        vov in 0.01..0.8f64,
        agm in 0.2..1.0f64,
        lambda in 0.01..2.0f64,
    ) {
        let m = DeviceMeasurement {
            mos_type: t, w, l, id, vov, vds: vov + 0.2,
            gm: agm * 2.0 * id / vov, gds: lambda * id, vth: 0.45,
        };
        let r = extract_device("MX", &m);
        prop_assert_eq!(r.region, Region::Sat);
        let mu = r.mu_cox.unwrap();
        prop_assert!(rel_close(0.5 * mu * w / l * vov * vov, id, 1e-12, 0.0));
        prop_assert!(rel_close(r.agm.unwrap() * 2.0 * id / vov, m.gm, 1e-12, 0.0));
        prop_assert!(rel_close(r.lambda.unwrap(), lambda, 1e-12, 0.0));
        prop_assert!(rel_close(r.ro.unwrap() * m.gds, 1.0, 1e-12, 0.0));
    }

    // A mirror scales its reference width by the current and length ratios,
    // whatever numbers the plan text carries.
    #[test]
    fn mirror_formula_survives_any_literals(
        iref in 1e-6..200e-6f64,
        iout in 1e-6..2e-3f64,
        vov in 0.05..0.4f64,
        lref in 0.18e-6..2e-6f64,
    ) {
        let net = parse_netlist(
            "VDD VDD 0 1.8\nIREF VDD B 10u\nM6 B B 0 0 NMOS W=2u L=0.5u\nM5 O B 0 0 NMOS W=2u L=0.5u\nR1 VDD O 1k\n",
        ).unwrap();
        let text = format!(
            "plan mirror_check for TEST\nclassify M6 independent\nclassify M5 mirror of M6\n\
             let Iref = {}\nlet Iout = {}\nlength M6 = {}\n\
             size independent M6 current=Iref vov={}\nsize mirror M5 from M6 carrying Iout\n",
            format_exact(iref), format_exact(iout), format_exact(lref), format_exact(vov),
        );
        let plan = parse_plan(&text).unwrap();
        let calib = round0_estimates(&net, &ProcessCard::t180_toy());
        let targets = DesignTargets {
            av_db_min: None, gbw_hz_min: None, pm_deg_min: None, sr_pos_min: None,
            sr_neg_min: None, power_max: None, vdd: 1.8, vss: 0.0, cl: 1e-12,
        };
        let out = execute_plan(&plan, &calib, &targets).unwrap();
        let d = &out.design;
        prop_assert_eq!(d.lengths["M5"], d.lengths["M6"]);
        prop_assert!(rel_close(d.widths["M5"], d.widths["M6"] * iout / iref, 1e-12, 0.0));
    }

    // Arbitrary text never panics the parsers.
    #[test]
    fn parsers_do_not_panic(s in "\\PC{0,200}") {
        let _ = parse_plan(&s);
        let _ = parse_netlist(&s);
        let _ = parse_si(&s);
    }

    #[test]
    fn si_text_roundtrips(v in prop::num::f64::NORMAL) {
        prop_assert_eq!(parse_si(&format_exact(v)), Some(v));
    }

    // More over-prediction never lowers a design target, and no target
    // drops below its base (or above it, for the power bound).
    #[test]
    fn margins_are_monotone(
        meas in 10.0..1000.0f64,
        over_a in -50.0..300.0f64,
        extra in 0.0..100.0f64,
        metric in prop::sample::select(Metric::ALL.to_vec()),
    ) {
        let cfg = FeedbackConfig::default();
        let base = DesignTargets {
            av_db_min: Some(60.0), gbw_hz_min: Some(100e6), pm_deg_min: Some(60.0),
            sr_pos_min: Some(50e6), sr_neg_min: Some(50e6), power_max: Some(1e-3),
            vdd: 0.9, vss: -0.9, cl: 1e-12,
        };
        let design = |over: f64| {
            let mut p = MetricSet::default();
            let mut m = MetricSet::default();
            *metric.slot(&mut m) = Some(meas);
            // for power, "over" is how far measurement exceeds the prediction
            *metric.slot(&mut p) = Some(if metric == Metric::Power { meas / (1.0 + over.max(-50.0) / 100.0) } else { meas * (1.0 + over / 100.0) });
            derive_design_targets(&base, &compute_errors(&p, &m), &cfg).get(metric).unwrap()
        };
        let (a, b) = (design(over_a), design(over_a + extra));
        let b0 = base.get(metric).unwrap();
        if metric == Metric::Power {
            prop_assert!(b <= a * (1.0 + 1e-12) && a <= b0);
        } else {
            prop_assert!(b >= a * (1.0 - 1e-12) && a >= b0);
        }
    }
}
