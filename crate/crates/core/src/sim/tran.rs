//! Fixed-step backward-Euler transient analysis.

use std::collections::HashMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::dc::dc_operating_point_with;
use super::mna::{mos_terminals, solve_with_fallback, Companion, System};
use super::{OperatingPoint, SimError};
use crate::device::ProcessCard;
use crate::netlist::{InstanceKind, Netlist};

/// A source that holds `before` for t < 0 and `after` for t >= 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStep {
    pub source: String,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Step response observed at `probe`. Capacitances (explicit and device)
/// are linearised at the pre-step operating point.
pub fn transient(
    net: &Netlist,
    card: &ProcessCard,
    steps: &[SourceStep],
    probe: &str,
    dt: f64,
    t_stop: f64,
) -> Result<(Waveform, OperatingPoint), SimError> {
    if !(dt > 0.0) || !(t_stop > 0.0) {
        return Err(SimError::Invalid(format!(
            "transient needs dt > 0 and t_stop > 0 (got {dt:e}, {t_stop:e})"
        )));
    }
    let probe = probe.to_ascii_uppercase();
    if !net.has_node(&probe) {
        return Err(SimError::MissingNode(probe));
    }
    let before: HashMap<String, f64> = steps
        .iter()
        .map(|s| (s.source.to_ascii_uppercase(), s.before))
        .collect();
    let after: HashMap<String, f64> = steps
        .iter()
        .map(|s| (s.source.to_ascii_uppercase(), s.after))
        .collect();
    let op0 = dc_operating_point_with(net, card, &before, None)?;

    let mut sys = System::new(net, card);
    sys.set_overrides(after);
    let mut x = DVector::zeros(sys.topo.size());
    for (node, &i) in &sys.topo.nodes {
        x[i] = op0.node_voltages[node];
    }
    for (name, &k) in &sys.topo.vsrc {
        x[k] = -op0.supply_currents[name];
    }

    let mut caps = Vec::new();
    for inst in &net.instances {
        match &inst.kind {
            InstanceKind::Capacitor { a, b, farads } => {
                caps.push((sys.topo.idx(a), sys.topo.idx(b), *farads))
            }
            InstanceKind::Mosfet(m) => {
                let e = &op0.device_ops[&inst.name].eval;
                let t = mos_terminals(&sys.topo, m);
                let (d, g, s, b) = (t.d, t.g, t.s, t.b);
                caps.push((g, s, e.cgs));
                caps.push((g, d, e.cgd));
                caps.push((d, b, e.cdb));
                caps.push((s, b, e.csb));
            }
            _ => {}
        }
    }
    caps.retain(|c| c.2 > 0.0 && c.0 != c.1);

    let pi = sys.topo.idx(&probe);
    let read = |x: &DVector<f64>| pi.map_or(0.0, |i| x[i]);
    let n = (t_stop / dt).ceil() as usize;
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    times.push(0.0);
    values.push(read(&x));
    for k in 1..=n {
        sys.companion = Some(Companion {
            caps: caps.clone(),
            x_prev: x.clone(),
            dt,
        });
        let out = solve_with_fallback(&mut sys, x.clone()).map_err(|e| match e {
            SimError::NonConvergence { iterations, residual, .. } => SimError::NonConvergence {
                analysis: format!("transient step {k} (t = {:.4e} s)", k as f64 * dt),
                iterations,
                residual,
            },
            e => e,
        })?;
        x = out.x;
        times.push(k as f64 * dt);
        values.push(read(&x));
    }
    Ok((Waveform { times, values }, op0))
}

/// Largest |dv/dt| over segments whose midpoint lies inside the 10%..90%
/// band between `v_start` and `v_end`.
pub fn max_slope_in_band(w: &Waveform, v_start: f64, v_end: f64) -> f64 {
    let span = v_end - v_start;
    if span == 0.0 {
        return 0.0;
    }
    let mut best: f64 = 0.0;
    for k in 1..w.times.len() {
        let mid = 0.5 * (w.values[k] + w.values[k - 1]);
        let frac = (mid - v_start) / span;
        if (0.1..=0.9).contains(&frac) {
            let s = (w.values[k] - w.values[k - 1]) / (w.times[k] - w.times[k - 1]);
            best = best.max(s.abs());
        }
    }
    best
}
