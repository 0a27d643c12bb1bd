//! Real-valued MNA assembly and the damped Newton solver shared by DC and
//! transient analyses.

use std::collections::HashMap;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};

use super::SimError;
use crate::device::{eval_mosfet, DeviceEval, ProcessCard};
use crate::netlist::{InstanceKind, Mosfet, Netlist, GROUND};

/// Drain-source leakage added to every MOSFET so cut-off stacks keep a
/// non-singular Jacobian.
pub(crate) const GMIN_DS: f64 = 1e-12;
pub(crate) const VTOL: f64 = 1e-9;
pub(crate) const ITOL: f64 = 1e-9;
const MAX_ITER: usize = 200;
const MAX_HALVINGS: usize = 20;

/// Unknown layout: non-ground node voltages first, then one branch current
/// per voltage source.
#[derive(Debug, Clone)]
pub(crate) struct Topology {
    pub nodes: IndexMap<String, usize>,
    pub vsrc: IndexMap<String, usize>,
}

impl Topology {
    pub fn new(net: &Netlist) -> Self {
        let mut nodes = IndexMap::new();
        for n in &net.nodes {
            if n != GROUND {
                let k = nodes.len();
                nodes.insert(n.clone(), k);
            }
        }
        let mut vsrc = IndexMap::new();
        let base = nodes.len();
        for inst in &net.instances {
            if matches!(inst.kind, InstanceKind::VoltageSource { .. }) {
                let k = base + vsrc.len();
                vsrc.insert(inst.name.clone(), k);
            }
        }
        Topology { nodes, vsrc }
    }

    pub fn size(&self) -> usize {
        self.nodes.len() + self.vsrc.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn idx(&self, node: &str) -> Option<usize> {
        self.nodes.get(node).copied()
    }
}

/// Nodes without a DC path to ground through resistors, voltage sources or
/// MOSFET channels. Any such node makes the DC matrix singular.
pub(crate) fn floating_nodes(net: &Netlist) -> Vec<String> {
    let names: Vec<&String> = net.nodes.iter().collect();
    let index: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut parent: Vec<usize> = (0..names.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut union = |a: &str, b: &str| {
        let (ra, rb) = (find(&mut parent, index[a]), find(&mut parent, index[b]));
        parent[ra] = rb;
    };
    for inst in &net.instances {
        match &inst.kind {
            InstanceKind::Resistor { a, b, .. } => union(a, b),
            InstanceKind::VoltageSource { pos, neg, .. } => union(pos, neg),
            InstanceKind::Mosfet(m) => union(&m.drain, &m.source),
            _ => {}
        }
    }
    let Some(&g) = index.get(GROUND) else {
        return names.iter().map(|s| s.to_string()).collect();
    };
    let root = find(&mut parent, g);
    (0..names.len())
        .filter(|&i| find(&mut parent, i) != root)
        .map(|i| names[i].clone())
        .collect()
}

/// Backward-Euler companion data for the transient solver.
#[derive(Debug, Clone)]
pub(crate) struct Companion {
    /// (node a, node b, capacitance); `None` is ground.
    pub caps: Vec<(Option<usize>, Option<usize>, f64)>,
    pub x_prev: DVector<f64>,
    pub dt: f64,
}

pub(crate) struct System<'a> {
    pub net: &'a Netlist,
    pub card: &'a ProcessCard,
    pub topo: Topology,
    pub gmin: f64,
    /// Source values replacing the netlist's (by instance name). Set
    /// through `set_overrides` so the resolved stamps stay in sync.
    pub overrides: HashMap<String, f64>,
    pub companion: Option<Companion>,
    stamps: Vec<Stamp>,
}

pub(crate) struct Terminals {
    pub d: Option<usize>,
    pub g: Option<usize>,
    pub s: Option<usize>,
    pub b: Option<usize>,
}

/// Instance with node names resolved to unknown indices.
enum Stamp {
    Conductance { a: Option<usize>, b: Option<usize>, g: f64 },
    Current { pos: Option<usize>, neg: Option<usize>, nominal: f64, value: f64, name: String },
    Voltage { pos: Option<usize>, neg: Option<usize>, k: usize, nominal: f64, value: f64, name: String },
    Mos { t: Terminals, mos_type: crate::netlist::MosType, w: f64, l: f64, name: String },
}

pub(crate) fn mos_terminals(topo: &Topology, m: &Mosfet) -> Terminals {
    Terminals {
        d: topo.idx(&m.drain),
        g: topo.idx(&m.gate),
        s: topo.idx(&m.source),
        b: topo.idx(&m.bulk),
    }
}

fn v(x: &DVector<f64>, i: Option<usize>) -> f64 {
    i.map_or(0.0, |k| x[k])
}

/// Physical (vgs, vds, vsb) of a MOSFET at solution `x`.
pub(crate) fn mos_bias(x: &DVector<f64>, t: &Terminals) -> (f64, f64, f64) {
    let (vd, vg, vs, vb) = (v(x, t.d), v(x, t.g), v(x, t.s), v(x, t.b));
    (vg - vs, vd - vs, vs - vb)
}

impl<'a> System<'a> {
    pub fn new(net: &'a Netlist, card: &'a ProcessCard) -> Self {
        let topo = Topology::new(net);
        let stamps = net
            .instances
            .iter()
            .filter_map(|inst| match &inst.kind {
                InstanceKind::Resistor { a, b, ohms } => Some(Stamp::Conductance {
                    a: topo.idx(a),
                    b: topo.idx(b),
                    g: 1.0 / ohms,
                }),
                InstanceKind::Capacitor { .. } => None,
                InstanceKind::CurrentSource { pos, neg, amps } => Some(Stamp::Current {
                    pos: topo.idx(pos),
                    neg: topo.idx(neg),
                    nominal: *amps,
                    value: *amps,
                    name: inst.name.clone(),
                }),
                InstanceKind::VoltageSource { pos, neg, volts } => Some(Stamp::Voltage {
                    pos: topo.idx(pos),
                    neg: topo.idx(neg),
                    k: topo.vsrc[&inst.name],
                    nominal: *volts,
                    value: *volts,
                    name: inst.name.clone(),
                }),
                InstanceKind::Mosfet(m) => Some(Stamp::Mos {
                    t: mos_terminals(&topo, m),
                    mos_type: m.mos_type,
                    w: m.w,
                    l: m.l,
                    name: inst.name.clone(),
                }),
            })
            .collect();
        System {
            net,
            card,
            topo,
            gmin: 0.0,
            overrides: HashMap::new(),
            companion: None,
            stamps,
        }
    }

    pub fn set_overrides(&mut self, overrides: HashMap<String, f64>) {
        for s in &mut self.stamps {
            if let Stamp::Current { nominal, value, name, .. } | Stamp::Voltage { nominal, value, name, .. } = s {
                *value = overrides.get(name.as_str()).copied().unwrap_or(*nominal);
            }
        }
        self.overrides = overrides;
    }

    /// Residual F(x) and, if requested, the Jacobian dF/dx.
    pub fn assemble(&self, x: &DVector<f64>, want_jacobian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let n = self.topo.size();
        let mut f = DVector::zeros(n);
        let mut j = want_jacobian.then(|| DMatrix::zeros(n, n));

        let add_f = |f: &mut DVector<f64>, i: Option<usize>, val: f64| {
            if let Some(i) = i {
                f[i] += val;
            }
        };
        fn add_j(j: &mut Option<DMatrix<f64>>, r: Option<usize>, c: Option<usize>, val: f64) {
            if let (Some(j), Some(r), Some(c)) = (j.as_mut(), r, c) {
                j[(r, c)] += val;
            }
        }
        fn conductance(j: &mut Option<DMatrix<f64>>, a: Option<usize>, b: Option<usize>, g: f64) {
            add_j(j, a, a, g);
            add_j(j, b, b, g);
            add_j(j, a, b, -g);
            add_j(j, b, a, -g);
        }

        for st in &self.stamps {
            match st {
                &Stamp::Conductance { a, b, g } => {
                    let i = g * (v(x, a) - v(x, b));
                    add_f(&mut f, a, i);
                    add_f(&mut f, b, -i);
                    conductance(&mut j, a, b, g);
                }
                &Stamp::Current { pos, neg, value, .. } => {
                    add_f(&mut f, pos, value);
                    add_f(&mut f, neg, -value);
                }
                &Stamp::Voltage { pos, neg, k, value, .. } => {
                    let ibr = x[k];
                    add_f(&mut f, pos, ibr);
                    add_f(&mut f, neg, -ibr);
                    f[k] += v(x, pos) - v(x, neg) - value;
                    let k = Some(k);
                    add_j(&mut j, pos, k, 1.0);
                    add_j(&mut j, neg, k, -1.0);
                    add_j(&mut j, k, pos, 1.0);
                    add_j(&mut j, k, neg, -1.0);
                }
                Stamp::Mos { t, mos_type, w, l, .. } => {
                    let (vgs, vds, vsb) = mos_bias(x, t);
                    let e = eval_mosfet(self.card, *mos_type, *w, *l, vgs, vds, vsb);
                    let id = e.drain_current(*mos_type) + GMIN_DS * vds;
                    add_f(&mut f, t.d, id);
                    add_f(&mut f, t.s, -id);
                    if j.is_some() {
                        let gds = e.gds + GMIN_DS;
                        // dId/d(vd, vg, vs, vb)
                        let partials = [
                            (t.d, gds),
                            (t.g, e.gm),
                            (t.s, -(e.gm + gds + e.gmb)),
                            (t.b, e.gmb),
                        ];
                        for (col, g) in partials {
                            add_j(&mut j, t.d, col, g);
                            add_j(&mut j, t.s, col, -g);
                        }
                    }
                }
            }
        }

        if self.gmin > 0.0 {
            for i in 0..self.topo.num_nodes() {
                f[i] += self.gmin * x[i];
                if let Some(j) = j.as_mut() {
                    j[(i, i)] += self.gmin;
                }
            }
        }

        if let Some(c) = &self.companion {
            for &(a, b, cap) in &c.caps {
                let g = cap / c.dt;
                let dv = v(x, a) - v(x, b) - (v(&c.x_prev, a) - v(&c.x_prev, b));
                add_f(&mut f, a, g * dv);
                add_f(&mut f, b, -g * dv);
                conductance(&mut j, a, b, g);
            }
        }
        (f, j)
    }

    /// Largest KCL residual over node rows.
    pub fn kcl_residual(&self, f: &DVector<f64>) -> f64 {
        (0..self.topo.num_nodes()).fold(0.0, |m, i| m.max(f[i].abs()))
    }

    pub fn device_evals(&self, x: &DVector<f64>) -> Vec<(String, (f64, f64, f64), DeviceEval)> {
        self.stamps
            .iter()
            .filter_map(|st| match st {
                Stamp::Mos { t, mos_type, w, l, name } => {
                    let (vgs, vds, vsb) = mos_bias(x, t);
                    let e = eval_mosfet(self.card, *mos_type, *w, *l, vgs, vds, vsb);
                    Some((name.clone(), (vgs, vds, vsb), e))
                }
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug)]
pub(crate) struct NewtonOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
}

fn norm2(f: &DVector<f64>) -> f64 {
    f.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn solve_linear(j: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, SimError> {
    let scale = j.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lu = j.lu();
    let u = lu.u();
    let min_pivot = (0..u.nrows()).fold(f64::INFINITY, |m, i| m.min(u[(i, i)].abs()));
    if !(min_pivot > scale * 1e-20) {
        return Err(SimError::SingularMatrix {
            detail: format!("pivot {min_pivot:.3e} relative to matrix scale {scale:.3e}"),
        });
    }
    let dx = lu.solve(rhs).ok_or_else(|| SimError::SingularMatrix {
        detail: "LU solve failed".into(),
    })?;
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(SimError::SingularMatrix {
            detail: "non-finite solution".into(),
        });
    }
    Ok(dx)
}

/// Damped Newton: halve the step until the residual norm decreases.
pub(crate) fn newton(sys: &System<'_>, x0: DVector<f64>) -> Result<NewtonOutcome, SimError> {
    let nn = sys.topo.num_nodes();
    let mut x = x0;
    let (mut f, _) = sys.assemble(&x, false);
    let mut fnorm = norm2(&f);
    for iter in 1..=MAX_ITER {
        let (_, j) = sys.assemble(&x, true);
        let dx = solve_linear(j.unwrap(), &(-&f))?;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &x + alpha * &dx;
            let (ft, _) = sys.assemble(&trial, false);
            let nt = norm2(&ft);
            if nt.is_finite() && (nt < fnorm || nt < 0.1 * ITOL) {
                accepted = Some((trial, ft, nt));
                break;
            }
            alpha *= 0.5;
        }
        // no decrease found: take the smallest step and keep going
        let (xn, fnew, nnew) = accepted.unwrap_or_else(|| {
            let trial = &x + alpha * &dx;
            let (ft, _) = sys.assemble(&trial, false);
            let nt = norm2(&ft);
            (trial, ft, nt)
        });
        let step = (0..nn).fold(0.0_f64, |m, i| m.max((alpha * dx[i]).abs()));
        x = xn;
        f = fnew;
        fnorm = nnew;
        let resid = sys.kcl_residual(&f);
        let vrow_ok = (nn..sys.topo.size()).all(|k| f[k].abs() < VTOL);
        if step < VTOL && resid < ITOL && vrow_ok {
            return Ok(NewtonOutcome {
                x,
                iterations: iter,
            });
        }
    }
    Err(SimError::NonConvergence {
        analysis: "newton".into(),
        iterations: MAX_ITER,
        residual: sys.kcl_residual(&f),
    })
}

/// Newton, falling back to gmin stepping 1e-3 S .. 1e-12 S, then a final
/// solve without gmin.
pub(crate) fn solve_with_fallback(
    sys: &mut System<'_>,
    x0: DVector<f64>,
) -> Result<NewtonOutcome, SimError> {
    let base_gmin = sys.gmin;
    match newton(sys, x0.clone()) {
        Ok(out) => return Ok(out),
        Err(SimError::SingularMatrix { .. }) | Err(SimError::NonConvergence { .. }) => {}
        Err(e) => return Err(e),
    }
    let mut x = x0;
    let mut last_err = None;
    for exp in 3..=12 {
        sys.gmin = base_gmin + 10f64.powi(-exp);
        match newton(sys, x.clone()) {
            Ok(out) => x = out.x,
            Err(e) => last_err = Some(e),
        }
    }
    sys.gmin = base_gmin;
    let result = newton(sys, x);
    match (result, last_err) {
        (Ok(out), _) => Ok(out),
        (Err(SimError::NonConvergence { iterations, residual, .. }), _) => {
            Err(SimError::NonConvergence {
                analysis: "newton after gmin stepping".into(),
                iterations,
                residual,
            })
        }
        (Err(e), _) => Err(e),
    }
}
