use std::collections::HashMap;

use indexmap::IndexMap;
use nalgebra::DVector;

use super::mna::{floating_nodes, solve_with_fallback, System};
use super::{DeviceOp, OperatingPoint, SimError};
use crate::device::ProcessCard;
use crate::netlist::{InstanceKind, Netlist, GROUND};

/// DC operating point from an all-zero initial guess.
pub fn dc_operating_point(net: &Netlist, card: &ProcessCard) -> Result<OperatingPoint, SimError> {
    dc_operating_point_with(net, card, &HashMap::new(), None)
}

/// DC operating point with source overrides and an optional initial guess
/// (node name -> voltage).
pub fn dc_operating_point_with(
    net: &Netlist,
    card: &ProcessCard,
    overrides: &HashMap<String, f64>,
    guess: Option<&OperatingPoint>,
) -> Result<OperatingPoint, SimError> {
    let has_source = net.instances.iter().any(|i| {
        matches!(
            i.kind,
            InstanceKind::VoltageSource { .. } | InstanceKind::CurrentSource { .. }
        )
    });
    if !has_source {
        return Err(SimError::Invalid("netlist has no independent source".into()));
    }
    let floating = floating_nodes(net);
    if !floating.is_empty() {
        return Err(SimError::SingularMatrix {
            detail: format!("no DC path to ground from node(s) {}", floating.join(", ")),
        });
    }
    for name in overrides.keys() {
        if net.instance(name).is_none() {
            return Err(SimError::MissingSource(name.clone()));
        }
    }

    let mut sys = System::new(net, card);
    sys.set_overrides(overrides.clone());
    let mut x0 = DVector::zeros(sys.topo.size());
    if let Some(g) = guess {
        for (node, &i) in &sys.topo.nodes {
            if let Some(v) = g.node_voltages.get(node) {
                x0[i] = *v;
            }
        }
    }
    let out = solve_with_fallback(&mut sys, x0)?;
    Ok(build_op(&sys, &out.x, out.iterations))
}

pub(crate) fn build_op(sys: &System<'_>, x: &DVector<f64>, iterations: usize) -> OperatingPoint {
    let (f, _) = sys.assemble(x, false);
    let mut node_voltages = IndexMap::new();
    for n in &sys.net.nodes {
        let v = if n == GROUND { 0.0 } else { x[sys.topo.nodes[n]] };
        node_voltages.insert(n.clone(), v);
    }
    let mut device_ops = IndexMap::new();
    for (name, (vgs, vds, vsb), eval) in sys.device_evals(x) {
        let m = sys.net.instance(&name).and_then(|i| i.as_mosfet()).unwrap();
        let s = m.mos_type.sign();
        device_ops.insert(
            name,
            DeviceOp {
                mos_type: m.mos_type,
                w: m.w,
                l: m.l,
                vgs: s * vgs,
                vds: s * vds,
                vsb: s * vsb,
                eval,
            },
        );
    }
    let mut supply_currents = IndexMap::new();
    let mut source_voltages = IndexMap::new();
    for (name, &k) in &sys.topo.vsrc {
        supply_currents.insert(name.clone(), -x[k]);
        if let Some(InstanceKind::VoltageSource { volts, .. }) = sys.net.instance(name).map(|i| &i.kind) {
            let v = sys.overrides.get(name).copied().unwrap_or(*volts);
            source_voltages.insert(name.clone(), v);
        }
    }
    OperatingPoint {
        node_voltages,
        device_ops,
        supply_currents,
        source_voltages,
        max_residual: sys.kcl_residual(&f),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;

    #[test]
    fn divider() {
        let net = parse_netlist("V1 in 0 1\nR1 in mid 1k\nR2 mid 0 1k").unwrap();
        let op = dc_operating_point(&net, &ProcessCard::t180_toy()).unwrap();
        assert!((op.voltage("mid").unwrap() - 0.5).abs() < 1e-12);
        assert!((op.supply_currents["V1"] - 0.5e-3).abs() < 1e-12);
        assert!(op.max_residual < 1e-9);
    }

    #[test]
    fn floating_gate_is_singular() {
        let net = parse_netlist("VDD vdd 0 1.8\nM1 vdd g 0 0 NMOS W=1u L=1u").unwrap();
        let err = dc_operating_point(&net, &ProcessCard::t180_toy()).unwrap_err();
        match err {
            SimError::SingularMatrix { detail } => assert!(detail.contains('G'), "{detail}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn no_source() {
        let net = parse_netlist("R1 a 0 1k").unwrap();
        assert!(matches!(
            dc_operating_point(&net, &ProcessCard::t180_toy()),
            Err(SimError::Invalid(_))
        ));
    }
}
