//! Sizing plans: a small DSL whose directives encode the device
//! classification rules (independent, mirror, matched), plus its executor
//! and netlist validator.
//!
//! ```text
//! plan ref2 for 2SMC
//! classify M1 independent
//! classify M2 matched M1
//! length M1 = 0.5u
//! let gm1 = 2*pi*target.gbw*passive.Cc
//! size independent M1 current=Id1 vov=Vov1
//! size mirror M4 from M3 carrying Id1
//! set passive.Cc = 0.5p
//! predict gbw = gm1/(2*pi*passive.Cc)
//! ```

mod exec;
mod lexer;
mod parser;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exec::{execute_plan, PlanOutcome};
pub use parser::parse_plan;
pub use validate::{validate_plan, Diagnostic};

/// Reference plan for the two-stage Miller OTA (both input polarities).
pub const REFERENCE_2SMC: &str = include_str!("../../assets/plans/2smc.plan");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("{pos}: syntax error: {message}")]
    Syntax { pos: Pos, message: String },
    #[error("{pos}: '{name}' is used before it is bound")]
    Circular { pos: Pos, name: String },
    #[error("{pos}: '{name}' is already bound")]
    DuplicateBinding { pos: Pos, name: String },
    #[error("{pos}: device {device} is not classified")]
    Unclassified { pos: Pos, device: String },
    #[error("device {device} is classified more than once")]
    DuplicateClassification { device: String },
    #[error("{pos}: {device} is classified {classified} but sized as {directive}")]
    DirectiveMismatch {
        pos: Pos,
        device: String,
        classified: String,
        directive: String,
    },
    #[error("device {device} is classified but never sized")]
    Unsized { device: String },
    #[error("{pos}: device {device} is sized twice")]
    DuplicateSize { pos: Pos, device: String },
    #[error("mirror reference cycle: {}", cycle.join(" -> "))]
    MirrorCycle { cycle: Vec<String> },
    #[error("{pos}: {device} must use the channel length of its reference {reference}")]
    MirrorLengthMismatch {
        pos: Pos,
        device: String,
        reference: String,
    },
    #[error("{pos}: unknown name '{name}'")]
    UnknownName { pos: Pos, name: String },
    #[error("{pos}: function {name} takes {expected} argument(s), got {found}")]
    Arity {
        pos: Pos,
        name: String,
        expected: String,
        found: usize,
    },
    #[error("division by zero while evaluating '{binding}'")]
    DivisionByZero { binding: String },
    #[error("'{binding}' evaluated to {value}")]
    NonFinite { binding: String, value: f64 },
    #[error("width of {device} is {value:e} (must be > 0)")]
    NegativeWidth { device: String, value: f64 },
    #[error("length of {device} is {value:e} (must be > 0)")]
    NonPositiveLength { device: String, value: f64 },
    #[error("calibration parameter {param} of {device} is not available")]
    UnboundCalibration { device: String, param: String },
    #[error("target {name} is not set")]
    UnboundTarget { name: String },
}

/// Specification a plan sizes for. Minima are inclusive; power is an upper
/// bound. Unset metrics are not targeted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTargets {
    pub av_db_min: Option<f64>,
    pub gbw_hz_min: Option<f64>,
    pub pm_deg_min: Option<f64>,
    pub sr_pos_min: Option<f64>,
    pub sr_neg_min: Option<f64>,
    pub power_max: Option<f64>,
    pub vdd: f64,
    pub vss: f64,
    pub cl: f64,
}

impl DesignTargets {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("av_db_min", self.av_db_min),
            ("gbw_hz_min", self.gbw_hz_min),
            ("pm_deg_min", self.pm_deg_min),
            ("sr_pos_min", self.sr_pos_min),
            ("sr_neg_min", self.sr_neg_min),
            ("power_max", self.power_max),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(format!("{name} must be > 0 (got {v})"));
                }
            }
        }
        if !(self.vdd > self.vss) {
            return Err(format!("vdd ({}) must exceed vss ({})", self.vdd, self.vss));
        }
        if !(self.cl > 0.0) {
            return Err(format!("cl must be > 0 (got {})", self.cl));
        }
        Ok(())
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Av => self.av_db_min,
            Metric::Gbw => self.gbw_hz_min,
            Metric::Pm => self.pm_deg_min,
            Metric::SrPos => self.sr_pos_min,
            Metric::SrNeg => self.sr_neg_min,
            Metric::Power => self.power_max,
        }
    }

    pub fn set(&mut self, m: Metric, v: Option<f64>) {
        let slot = match m {
            Metric::Av => &mut self.av_db_min,
            Metric::Gbw => &mut self.gbw_hz_min,
            Metric::Pm => &mut self.pm_deg_min,
            Metric::SrPos => &mut self.sr_pos_min,
            Metric::SrNeg => &mut self.sr_neg_min,
            Metric::Power => &mut self.power_max,
        };
        *slot = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Av,
    Gbw,
    Pm,
    SrPos,
    SrNeg,
    Power,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Av,
        Metric::Gbw,
        Metric::Pm,
        Metric::SrPos,
        Metric::SrNeg,
        Metric::Power,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Av => "av",
            Metric::Gbw => "gbw",
            Metric::Pm => "pm",
            Metric::SrPos => "sr_pos",
            Metric::SrNeg => "sr_neg",
            Metric::Power => "power",
        }
    }

    pub fn from_key(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.key() == s)
    }

    pub fn of(self, m: &crate::sim::MetricSet) -> Option<f64> {
        match self {
            Metric::Av => m.av_db,
            Metric::Gbw => m.gbw_hz,
            Metric::Pm => m.pm_deg,
            Metric::SrPos => m.sr_pos,
            Metric::SrNeg => m.sr_neg,
            Metric::Power => m.power_w,
        }
    }

    pub fn slot(self, m: &mut crate::sim::MetricSet) -> &mut Option<f64> {
        match self {
            Metric::Av => &mut m.av_db,
            Metric::Gbw => &mut m.gbw_hz,
            Metric::Pm => &mut m.pm_deg,
            Metric::SrPos => &mut m.sr_pos,
            Metric::SrNeg => &mut m.sr_neg,
            Metric::Power => &mut m.power_w,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Dotted name: `x`, `pi`, `calib.M1.mu_cox`, `width.M3`.
    Ref { path: Vec<String>, pos: Pos },
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call { name: String, args: Vec<Expr>, pos: Pos },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Classification {
    Independent,
    Mirror { reference: String },
    Matched { partner: String },
}

impl Classification {
    pub fn kind(&self) -> &'static str {
        match self {
            Classification::Independent => "independent",
            Classification::Mirror { .. } => "mirror",
            Classification::Matched { .. } => "matched",
        }
    }

    /// The device whose geometry this one derives from.
    pub fn parent(&self) -> Option<&str> {
        match self {
            Classification::Independent => None,
            Classification::Mirror { reference } => Some(reference),
            Classification::Matched { partner } => Some(partner),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SizeDirective {
    Independent { device: String, current: Expr, vov: Expr },
    Mirror { device: String, reference: String, current: Expr },
    Matched { device: String, partner: String },
}

impl SizeDirective {
    pub fn device(&self) -> &str {
        match self {
            SizeDirective::Independent { device, .. }
            | SizeDirective::Mirror { device, .. }
            | SizeDirective::Matched { device, .. } => device,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetTarget {
    Passive,
    Source,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Let { name: String, expr: Expr, pos: Pos },
    If {
        lhs: Expr,
        cmp: Cmp,
        rhs: Expr,
        then: Vec<Item>,
        otherwise: Vec<Item>,
        pos: Pos,
    },
    Length { device: String, expr: Expr, pos: Pos },
    Size { directive: SizeDirective, pos: Pos },
    Set { target: SetTarget, name: String, expr: Expr, pos: Pos },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizingPlan {
    pub name: String,
    pub topology: String,
    pub classifications: indexmap::IndexMap<String, Classification>,
    /// Statements and directives in source order.
    pub body: Vec<Item>,
    pub predictions: indexmap::IndexMap<Metric, Expr>,
    /// The text the plan was parsed from.
    pub source: String,
}

impl SizingPlan {
    /// Devices with an explicit `length` statement.
    pub fn explicit_lengths(&self) -> Vec<&str> {
        self.body
            .iter()
            .filter_map(|i| match i {
                Item::Length { device, .. } => Some(device.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn size_directives(&self) -> impl Iterator<Item = &SizeDirective> {
        self.body.iter().filter_map(|i| match i {
            Item::Size { directive, .. } => Some(directive),
            _ => None,
        })
    }

    pub fn sets(&self) -> impl Iterator<Item = (SetTarget, &str)> {
        self.body.iter().filter_map(|i| match i {
            Item::Set { target, name, .. } => Some((*target, name.as_str())),
            _ => None,
        })
    }

    /// Follow mirror/matched links to the root independent device.
    pub fn root_of<'a>(&'a self, device: &'a str) -> &'a str {
        let mut cur = device;
        for _ in 0..=self.classifications.len() {
            match self.classifications.get(cur).and_then(|c| c.parent()) {
                Some(p) => cur = p,
                None => break,
            }
        }
        cur
    }
}
