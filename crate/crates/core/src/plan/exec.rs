use std::collections::HashMap;
use std::f64::consts::PI;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::parser::bind_key;
use super::{
    BinOp, Classification, Cmp, DesignTargets, Expr, Item, PlanError, SetTarget, SizeDirective,
    SizingPlan,
};
use crate::calibration::CalibrationRecord;
use crate::netlist::DesignVariables;
use crate::sim::MetricSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub design: DesignVariables,
    pub predicted: MetricSet,
    /// Every value the plan bound, in evaluation order.
    pub bindings: IndexMap<String, f64>,
}

struct Ctx<'a> {
    calib: &'a IndexMap<String, CalibrationRecord>,
    targets: &'a DesignTargets,
    env: HashMap<String, f64>,
    order: IndexMap<String, f64>,
}

impl Ctx<'_> {
    fn record(&self, dev: &str) -> Result<&CalibrationRecord, PlanError> {
        self.calib.get(dev).ok_or_else(|| PlanError::UnboundCalibration {
            device: dev.to_string(),
            param: "record".into(),
        })
    }

    fn calib_field(&self, dev: &str, field: &str) -> Result<f64, PlanError> {
        let r = self.record(dev)?;
        let missing = || PlanError::UnboundCalibration {
            device: dev.to_string(),
            param: field.to_string(),
        };
        match field {
            "mu_cox" => r.mu_cox.ok_or_else(missing),
            "agm" => r.agm.ok_or_else(missing),
            "lambda" => r.lambda.ok_or_else(missing),
            "ro" => r.ro.ok_or_else(missing),
            "vth" => Ok(r.vth),
            "l" => Ok(r.l),
            "w" => Ok(r.w),
            "polarity" => Ok(r.mos_type.sign()),
            _ => Err(missing()),
        }
    }

    fn target(&self, field: &str) -> Result<f64, PlanError> {
        let t = self.targets;
        let v = match field {
            "av" => t.av_db_min,
            "gbw" => t.gbw_hz_min,
            "pm" => t.pm_deg_min,
            "sr_pos" => t.sr_pos_min,
            "sr_neg" => t.sr_neg_min,
            "sr" => match (t.sr_pos_min, t.sr_neg_min) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
            "power" => t.power_max,
            "cl" => Some(t.cl),
            _ => None,
        };
        v.ok_or_else(|| PlanError::UnboundTarget {
            name: field.to_string(),
        })
    }

    fn lookup(&self, path: &[String]) -> Result<f64, PlanError> {
        match path {
            [name] if name == "pi" => Ok(PI),
            [ns, dev, field] if ns == "calib" => self.calib_field(&dev.to_ascii_uppercase(), field),
            [ns, field] if ns == "target" => self.target(field),
            [ns, field] if ns == "supply" => Ok(match field.as_str() {
                "vdd" => self.targets.vdd,
                _ => self.targets.vss,
            }),
            _ => {
                let key = bind_key(path);
                self.env.get(&key).copied().ok_or(PlanError::Circular {
                    pos: super::Pos { line: 0, col: 0 },
                    name: key,
                })
            }
        }
    }

    fn eval(&self, e: &Expr, binding: &str) -> Result<f64, PlanError> {
        Ok(match e {
            Expr::Num(v) => *v,
            Expr::Ref { path, .. } => self.lookup(path)?,
            Expr::Neg(a) => -self.eval(a, binding)?,
            Expr::Bin(op, a, b) => {
                let (x, y) = (self.eval(a, binding)?, self.eval(b, binding)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(PlanError::DivisionByZero {
                                binding: binding.to_string(),
                            });
                        }
                        x / y
                    }
                    BinOp::Pow => x.powf(y),
                }
            }
            Expr::Call { name, args, .. } => {
                let v: Vec<f64> = args
                    .iter()
                    .map(|a| self.eval(a, binding))
                    .collect::<Result<_, _>>()?;
                match name.as_str() {
                    "pi" => PI,
                    "sqrt" => v[0].sqrt(),
                    "abs" => v[0].abs(),
                    "atan" => v[0].atan(),
                    "tan" => v[0].tan(),
                    "exp" => v[0].exp(),
                    "ln" => v[0].ln(),
                    "log10" => v[0].log10(),
                    "pow" => v[0].powf(v[1]),
                    "parallel" => {
                        if v[0] + v[1] == 0.0 {
                            return Err(PlanError::DivisionByZero {
                                binding: binding.to_string(),
                            });
                        }
                        v[0] * v[1] / (v[0] + v[1])
                    }
                    "min" => v.iter().copied().fold(f64::INFINITY, f64::min),
                    "max" => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    "clamp" => v[0].max(v[1]).min(v[2]),
                    _ => f64::NAN,
                }
            }
        })
    }

    fn eval_bound(&self, e: &Expr, binding: &str) -> Result<f64, PlanError> {
        let v = self.eval(e, binding)?;
        if !v.is_finite() {
            return Err(PlanError::NonFinite {
                binding: binding.to_string(),
                value: v,
            });
        }
        Ok(v)
    }

    fn bind(&mut self, key: String, v: f64) {
        self.env.insert(key.clone(), v);
        self.order.insert(key, v);
    }

    fn truth(&self, lhs: &Expr, cmp: Cmp, rhs: &Expr) -> Result<bool, PlanError> {
        let (a, b) = (self.eval_bound(lhs, "if")?, self.eval_bound(rhs, "if")?);
        Ok(match cmp {
            Cmp::Ge => a >= b,
            Cmp::Gt => a > b,
            Cmp::Le => a <= b,
            Cmp::Lt => a < b,
        })
    }
}

fn width_checked(dev: &str, w: f64) -> Result<f64, PlanError> {
    if !w.is_finite() {
        return Err(PlanError::NonFinite {
            binding: format!("width.{dev}"),
            value: w,
        });
    }
    if w <= 0.0 {
        return Err(PlanError::NegativeWidth {
            device: dev.to_string(),
            value: w,
        });
    }
    Ok(w)
}

fn run(plan: &SizingPlan, ctx: &mut Ctx<'_>, items: &[Item]) -> Result<(), PlanError> {
    for item in items {
        match item {
            Item::Let { name, expr, .. } => {
                let v = ctx.eval_bound(expr, name)?;
                ctx.bind(name.clone(), v);
            }
            Item::If {
                lhs,
                cmp,
                rhs,
                then,
                otherwise,
                ..
            } => {
                if ctx.truth(lhs, *cmp, rhs)? {
                    run(plan, ctx, then)?;
                } else {
                    run(plan, ctx, otherwise)?;
                }
            }
            Item::Length { device, expr, .. } => {
                if plan.classifications[device].parent().is_some() {
                    // alias of the reference length, already tied
                    continue;
                }
                let key = format!("length.{device}");
                let l = ctx.eval_bound(expr, &key)?;
                if l <= 0.0 {
                    return Err(PlanError::NonPositiveLength {
                        device: device.clone(),
                        value: l,
                    });
                }
                for d in plan.classifications.keys() {
                    if plan.root_of(d) == device {
                        ctx.bind(format!("length.{d}"), l);
                    }
                }
            }
            Item::Size { directive, .. } => {
                let dev = directive.device();
                let wkey = format!("width.{dev}");
                let l = ctx.env[&format!("length.{dev}")];
                let (w, current) = match directive {
                    SizeDirective::Independent { current, vov, .. } => {
                        let i = ctx.eval_bound(current, &format!("current.{dev}"))?;
                        let vov = ctx.eval_bound(vov, &format!("vov.{dev}"))?;
                        let mu = ctx.calib_field(dev, "mu_cox")?;
                        let den = mu * vov * vov;
                        if den == 0.0 {
                            return Err(PlanError::DivisionByZero { binding: wkey });
                        }
                        (2.0 * i * l / den, i)
                    }
                    SizeDirective::Mirror { reference, current, .. } => {
                        let i = ctx.eval_bound(current, &format!("current.{dev}"))?;
                        let w_ref = ctx.env[&format!("width.{reference}")];
                        let i_ref = ctx.env[&format!("current.{reference}")];
                        let l_ref = ctx.env[&format!("length.{reference}")];
                        if i_ref == 0.0 {
                            return Err(PlanError::DivisionByZero { binding: wkey });
                        }
                        (w_ref * (i / i_ref) * (l / l_ref), i)
                    }
                    SizeDirective::Matched { partner, .. } => (
                        ctx.env[&format!("width.{partner}")],
                        ctx.env[&format!("current.{partner}")],
                    ),
                };
                let w = width_checked(dev, w)?;
                ctx.bind(wkey, w);
                ctx.bind(format!("current.{dev}"), current);
            }
            Item::Set {
                target, name, expr, ..
            } => {
                let ns = match target {
                    SetTarget::Passive => "passive",
                    SetTarget::Source => "source",
                };
                let key = format!("{ns}.{name}");
                let v = ctx.eval_bound(expr, &key)?;
                ctx.bind(key, v);
            }
        }
    }
    Ok(())
}

/// Run a plan against calibration records (or round-0 estimates) and
/// design targets. Independent devices get W = 2 Id L / (muCox Vov^2),
/// mirrors W = Wref (I / Iref) (L / Lref) with L = Lref, matched devices
/// copy their partner. Predictions are evaluated last.
pub fn execute_plan(
    plan: &SizingPlan,
    calib: &IndexMap<String, CalibrationRecord>,
    targets: &DesignTargets,
) -> Result<PlanOutcome, PlanError> {
    let mut ctx = Ctx {
        calib,
        targets,
        env: HashMap::new(),
        order: IndexMap::new(),
    };
    let explicit = plan.explicit_lengths();
    for d in plan.classifications.keys() {
        let root = plan.root_of(d);
        if !explicit.contains(&root) {
            let l = ctx.calib_field(root, "l")?;
            ctx.env.insert(format!("length.{d}"), l);
        }
    }
    run(plan, &mut ctx, &plan.body)?;

    let mut predicted = MetricSet::default();
    for (m, e) in &plan.predictions {
        let key = format!("predict.{m}");
        let v = ctx.eval_bound(e, &key)?;
        *m.slot(&mut predicted) = Some(v);
        ctx.order.insert(key, v);
    }

    let mut design = DesignVariables::default();
    for d in plan.classifications.keys() {
        design.widths.insert(d.clone(), ctx.env[&format!("width.{d}")]);
        design.lengths.insert(d.clone(), ctx.env[&format!("length.{d}")]);
        design
            .branch_currents
            .insert(d.clone(), ctx.env[&format!("current.{d}")]);
    }
    for item in &plan.body {
        if let Item::Set { target, name, .. } = item {
            let (ns, map) = match target {
                SetTarget::Passive => ("passive", &mut design.passives),
                SetTarget::Source => ("source", &mut design.bias_currents),
            };
            map.insert(name.clone(), ctx.env[&format!("{ns}.{name}")]);
        }
    }
    debug_assert!(plan
        .classifications
        .iter()
        .all(|(d, c)| !matches!(c, Classification::Mirror { reference } if design.lengths[d] != design.lengths[reference])));
    Ok(PlanOutcome {
        design,
        predicted,
        bindings: ctx.order,
    })
}
