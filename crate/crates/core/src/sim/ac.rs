//! Small-signal AC analysis linearised at a solved operating point.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::mna::{Topology, GMIN_DS};
use super::{OperatingPoint, SimError};
use crate::netlist::{InstanceKind, Netlist};

/// Logarithmic sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub f_start: f64,
    pub f_stop: f64,
    pub points_per_decade: usize,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            f_start: 1.0,
            f_stop: 100e9,
            points_per_decade: 40,
        }
    }
}

impl Sweep {
    pub fn frequencies(&self) -> Vec<f64> {
        let decades = (self.f_stop / self.f_start).log10();
        let n = (decades * self.points_per_decade as f64).round() as usize;
        (0..=n)
            .map(|k| self.f_start * 10f64.powf(k as f64 / self.points_per_decade as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    /// (Hz, gain) with strictly increasing frequency.
    pub points: Vec<(f64, Complex64)>,
}

impl FrequencyResponse {
    /// Phase in degrees, unwrapped along the sweep starting from the
    /// principal value at the first point.
    pub fn unwrapped_phase_deg(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.points.len());
        for (_, h) in &self.points {
            let mut p = h.arg().to_degrees();
            if let Some(&prev) = out.last() {
                while p - prev > 180.0 {
                    p -= 360.0;
                }
                while p - prev < -180.0 {
                    p += 360.0;
                }
            }
            out.push(p);
        }
        out
    }
}

/// What to excite and what to observe. The transfer is
/// `sign * V(output) / V(stimulus)`.
#[derive(Debug, Clone)]
pub struct AcRequest {
    pub stimulus: String,
    pub output: String,
    pub invert: bool,
    /// MOSFETs whose gate capacitances connect to a different node than the
    /// gate that controls their current (used to cut a feedback loop).
    pub gate_cap_node: HashMap<String, String>,
    pub sweep: Sweep,
}

struct SmallSignal<'a> {
    net: &'a Netlist,
    op: &'a OperatingPoint,
    topo: Topology,
    req: &'a AcRequest,
}

impl SmallSignal<'_> {
    fn solve(&self, f: f64) -> Result<Complex64, SimError> {
        let n = self.topo.size();
        let w = 2.0 * PI * f;
        let jw = Complex64::new(0.0, w);
        let mut a = DMatrix::<Complex64>::zeros(n, n);
        let mut rhs = DVector::<Complex64>::zeros(n);
        let idx = |node: &str| self.topo.idx(node);
        let mut stamp = |r: Option<usize>, c: Option<usize>, v: Complex64| {
            if let (Some(r), Some(c)) = (r, c) {
                a[(r, c)] += v;
            }
        };
        let admittance =
            |stamp: &mut dyn FnMut(Option<usize>, Option<usize>, Complex64), p: Option<usize>, q: Option<usize>, y: Complex64| {
                stamp(p, p, y);
                stamp(q, q, y);
                stamp(p, q, -y);
                stamp(q, p, -y);
            };

        for inst in &self.net.instances {
            match &inst.kind {
                InstanceKind::Resistor { a: p, b: q, ohms } => {
                    admittance(&mut stamp, idx(p), idx(q), Complex64::new(1.0 / ohms, 0.0))
                }
                InstanceKind::Capacitor { a: p, b: q, farads } => {
                    admittance(&mut stamp, idx(p), idx(q), jw * *farads)
                }
                InstanceKind::CurrentSource { .. } => {}
                InstanceKind::VoltageSource { pos, neg, .. } => {
                    let k = self.topo.vsrc[&inst.name];
                    let (ip, ineg) = (idx(pos), idx(neg));
                    let one = Complex64::new(1.0, 0.0);
                    stamp(ip, Some(k), one);
                    stamp(ineg, Some(k), -one);
                    stamp(Some(k), ip, one);
                    stamp(Some(k), ineg, -one);
                    if inst.name == self.req.stimulus {
                        rhs[k] = one;
                    }
                }
                InstanceKind::Mosfet(m) => {
                    let dop = self.op.device_ops.get(&inst.name).ok_or_else(|| {
                        SimError::Invalid(format!("no operating point for {}", inst.name))
                    })?;
                    let e = &dop.eval;
                    let (d, g, s, b) = (idx(&m.drain), idx(&m.gate), idx(&m.source), idx(&m.bulk));
                    let gds = e.gds + GMIN_DS;
                    for (col, val) in [(d, gds), (g, e.gm), (s, -(e.gm + gds + e.gmb)), (b, e.gmb)] {
                        stamp(d, col, Complex64::new(val, 0.0));
                        stamp(s, col, Complex64::new(-val, 0.0));
                    }
                    let gc = match self.req.gate_cap_node.get(&inst.name) {
                        Some(node) => idx(node),
                        None => g,
                    };
                    admittance(&mut stamp, gc, s, jw * e.cgs);
                    admittance(&mut stamp, gc, d, jw * e.cgd);
                    admittance(&mut stamp, d, b, jw * e.cdb);
                    admittance(&mut stamp, s, b, jw * e.csb);
                }
            }
        }
        let lu = a.lu();
        let x = lu.solve(&rhs).ok_or_else(|| SimError::SingularMatrix {
            detail: format!("AC matrix singular at {f:.3e} Hz"),
        })?;
        let out = idx(&self.req.output)
            .map(|i| x[i])
            .ok_or_else(|| SimError::MissingNode(self.req.output.clone()))?;
        if !out.re.is_finite() || !out.im.is_finite() {
            return Err(SimError::SingularMatrix {
                detail: format!("AC solution not finite at {f:.3e} Hz"),
            });
        }
        Ok(if self.req.invert { -out } else { out })
    }
}

/// Sweep the transfer function described by `req` around `op`.
pub fn ac_sweep(
    net: &Netlist,
    op: &OperatingPoint,
    req: &AcRequest,
) -> Result<FrequencyResponse, SimError> {
    match net.instance(&req.stimulus).map(|i| &i.kind) {
        Some(InstanceKind::VoltageSource { .. }) => {}
        _ => return Err(SimError::MissingSource(req.stimulus.clone())),
    }
    if !net.has_node(&req.output) {
        return Err(SimError::MissingNode(req.output.clone()));
    }
    let ss = SmallSignal {
        net,
        op,
        topo: Topology::new(net),
        req,
    };
    let points = req
        .sweep
        .frequencies()
        .into_iter()
        .map(|f| ss.solve(f).map(|h| (f, h)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrequencyResponse { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopMetrics {
    pub av_db: f64,
    pub gbw_hz: f64,
    pub pm_deg: f64,
}

/// Gain at the first sweep point, first unity crossing (log-log
/// interpolated) and phase margin there.
pub fn loop_metrics(resp: &FrequencyResponse) -> Result<LoopMetrics, SimError> {
    let pts = &resp.points;
    let (f0, h0) = *pts.first().ok_or_else(|| SimError::Invalid("empty response".into()))?;
    let f_stop = pts.last().map(|p| p.0).unwrap_or(f0);
    let av_db = 20.0 * h0.norm().log10();
    let phase = resp.unwrapped_phase_deg();
    let no_crossing = SimError::NoCrossing {
        f_start: f0,
        f_stop,
        start_db: av_db,
    };
    if h0.norm() < 1.0 {
        return Err(no_crossing);
    }
    for k in 0..pts.len() - 1 {
        let (fa, ha) = pts[k];
        let (fb, hb) = pts[k + 1];
        let (ma, mb) = (ha.norm().ln(), hb.norm().ln());
        if ma >= 0.0 && mb < 0.0 {
            let t = ma / (ma - mb);
            let lf = fa.ln() + t * (fb.ln() - fa.ln());
            let ph = phase[k] + t * (phase[k + 1] - phase[k]);
            let mut pm = 180.0 + ph;
            while pm > 180.0 {
                pm -= 360.0;
            }
            while pm <= -180.0 {
                pm += 360.0;
            }
            return Ok(LoopMetrics {
                av_db,
                gbw_hz: lf.exp(),
                pm_deg: pm,
            });
        }
    }
    Err(no_crossing)
}
