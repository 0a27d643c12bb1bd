use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Classification, DesignTargets, Metric, SetTarget, SizingPlan};
use crate::netlist::{InstanceKind, Netlist};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

fn diag(code: &str, message: String) -> Diagnostic {
    Diagnostic {
        code: code.into(),
        message,
    }
}

/// Check a parsed plan against the netlist it will size and the targets it
/// must predict. An empty result means the plan is acceptable.
pub fn validate_plan(plan: &SizingPlan, net: &Netlist, targets: &DesignTargets) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    for (name, _) in net.mosfets() {
        if !plan.classifications.contains_key(name) {
            out.push(diag("coverage", format!("netlist device {name} is not classified")));
        }
    }
    for (dev, class) in &plan.classifications {
        let Some(m) = net.instance(dev).and_then(|i| i.as_mosfet()) else {
            out.push(diag("coverage", format!("plan classifies {dev}, which is not a MOSFET in the netlist")));
            continue;
        };
        let Some(parent) = class.parent() else { continue };
        let Some(p) = net.instance(parent).and_then(|i| i.as_mosfet()) else {
            continue;
        };
        if p.mos_type != m.mos_type {
            out.push(diag(
                "type",
                format!("{dev} ({}) is tied to {parent} of the other type ({})", m.mos_type, p.mos_type),
            ));
        }
        if matches!(class, Classification::Mirror { .. }) && m.l != p.l {
            out.push(diag(
                "mirror-length",
                format!(
                    "mirror {dev} has L={:e} m in the netlist but its reference {parent} has L={:e} m",
                    m.l, p.l
                ),
            ));
        }
    }

    // acyclicity is a parse-time invariant; re-check in case the plan was built by hand
    for dev in plan.classifications.keys() {
        let mut cur = dev.as_str();
        for _ in 0..=plan.classifications.len() {
            match plan.classifications.get(cur).and_then(|c| c.parent()) {
                Some(p) => cur = p,
                None => break,
            }
        }
        if plan.classifications.get(cur).and_then(|c| c.parent()).is_some() {
            out.push(diag("cycle", format!("{dev} is part of a mirror reference cycle")));
        }
    }

    for m in Metric::ALL {
        if targets.get(m).is_some() && !plan.predictions.contains_key(&m) {
            out.push(diag("prediction", format!("target {m} is set but the plan has no 'predict {m}'")));
        }
    }

    for (target, name) in plan.sets() {
        let kind = net.instance(name).map(|i| &i.kind);
        let ok = match target {
            SetTarget::Passive => matches!(
                kind,
                Some(InstanceKind::Resistor { .. } | InstanceKind::Capacitor { .. })
            ),
            SetTarget::Source => matches!(
                kind,
                Some(InstanceKind::CurrentSource { .. } | InstanceKind::VoltageSource { .. })
            ),
        };
        if !ok {
            let what = match target {
                SetTarget::Passive => "resistor or capacitor",
                SetTarget::Source => "source",
            };
            out.push(diag("set", format!("set target {name} is not a {what} in the netlist")));
        }
    }
    out
}
