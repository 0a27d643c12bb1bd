//! SPICE-subset netlist parsing and serialization.
//!
//! Grammar, one instance per logical line:
//!
//! ```text
//! .title 2SMC-N
//! * comment
//! M<name> <d> <g> <s> <b> NMOS|PMOS W=<v> L=<v>
//! R<name> <n1> <n2> <ohms>
//! C<name> <n1> <n2> <farads>
//! I<name> <n+> <n-> [DC] <amps>      current flows n+ -> source -> n-
//! V<name> <n+> <n-> [DC] <volts>
//! + continuation of the previous line
//! .end
//! ```
//!
//! Identifiers are case-insensitive and stored upper case. Ground is `0`.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{format_exact, parse_si};

pub const GROUND: &str = "0";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetlistError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: unknown device prefix '{prefix}'")]
    UnknownPrefix {
        line: usize,
        column: usize,
        prefix: char,
    },
    #[error("line {line}: {name} expects {expected} terminals, found {found}")]
    Arity {
        line: usize,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate instance name {name}")]
    DuplicateName { line: usize, name: String },
    #[error("netlist has no ground node '0'")]
    NoGround,
    #[error("netlist is empty")]
    Empty,
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("{name}: value {value} must be positive")]
    NonPositive { name: String, value: f64 },
    #[error("{name} is a {kind}; cannot set {what}")]
    WrongKind {
        name: String,
        kind: &'static str,
        what: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum MosType {
    #[serde(rename = "NMOS")]
    Nmos,
    #[serde(rename = "PMOS")]
    Pmos,
}

impl MosType {
    /// +1 for NMOS, -1 for PMOS.
    pub fn sign(self) -> f64 {
        match self {
            MosType::Nmos => 1.0,
            MosType::Pmos => -1.0,
        }
    }
}

impl fmt::Display for MosType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MosType::Nmos => "NMOS",
            MosType::Pmos => "PMOS",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mosfet {
    pub mos_type: MosType,
    pub drain: String,
    pub gate: String,
    pub source: String,
    pub bulk: String,
    pub w: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum InstanceKind {
    Mosfet(Mosfet),
    Resistor { a: String, b: String, ohms: f64 },
    Capacitor { a: String, b: String, farads: f64 },
    CurrentSource { pos: String, neg: String, amps: f64 },
    VoltageSource { pos: String, neg: String, volts: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub name: String,
    pub kind: InstanceKind,
}

impl Instance {
    pub fn terminals(&self) -> Vec<&str> {
        match &self.kind {
            InstanceKind::Mosfet(m) => vec![&m.drain, &m.gate, &m.source, &m.bulk],
            InstanceKind::Resistor { a, b, .. } | InstanceKind::Capacitor { a, b, .. } => {
                vec![a, b]
            }
            InstanceKind::CurrentSource { pos, neg, .. }
            | InstanceKind::VoltageSource { pos, neg, .. } => vec![pos, neg],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            InstanceKind::Mosfet(_) => "MOSFET",
            InstanceKind::Resistor { .. } => "resistor",
            InstanceKind::Capacitor { .. } => "capacitor",
            InstanceKind::CurrentSource { .. } => "current source",
            InstanceKind::VoltageSource { .. } => "voltage source",
        }
    }

    pub fn as_mosfet(&self) -> Option<&Mosfet> {
        match &self.kind {
            InstanceKind::Mosfet(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub name: String,
    /// Ordered by first appearance, ground included.
    pub nodes: IndexSet<String>,
    pub instances: Vec<Instance>,
}

/// Width, length, passive and source overrides produced by a sizing plan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignVariables {
    pub widths: IndexMap<String, f64>,
    pub lengths: IndexMap<String, f64>,
    pub passives: IndexMap<String, f64>,
    /// Applied to current sources of the same name.
    pub bias_currents: IndexMap<String, f64>,
    /// Named branch currents the plan sized devices for (informational, not applied).
    #[serde(default)]
    pub branch_currents: IndexMap<String, f64>,
}

impl Netlist {
    pub fn instance(&self, name: &str) -> Option<&Instance> {
        let key = name.to_ascii_uppercase();
        self.instances.iter().find(|i| i.name == key)
    }

    fn instance_mut(&mut self, name: &str) -> Option<&mut Instance> {
        let key = name.to_ascii_uppercase();
        self.instances.iter_mut().find(|i| i.name == key)
    }

    pub fn mosfets(&self) -> impl Iterator<Item = (&str, &Mosfet)> {
        self.instances
            .iter()
            .filter_map(|i| i.as_mosfet().map(|m| (i.name.as_str(), m)))
    }

    pub fn has_node(&self, node: &str) -> bool {
        self.nodes.contains(&node.to_ascii_uppercase())
    }

    /// Voltage sources with one terminal on ground, keyed by name, valued by
    /// the rail voltage they establish.
    pub fn supplies(&self) -> BTreeMap<String, f64> {
        self.instances
            .iter()
            .filter_map(|i| match &i.kind {
                InstanceKind::VoltageSource { neg, volts, .. } if neg == GROUND => {
                    Some((i.name.clone(), *volts))
                }
                InstanceKind::VoltageSource { pos, volts, .. } if pos == GROUND => {
                    Some((i.name.clone(), -*volts))
                }
                _ => None,
            })
            .collect()
    }

    /// Append an instance, registering its nodes. Used by testbench builders.
    pub fn push(&mut self, inst: Instance) -> Result<(), NetlistError> {
        if self.instance(&inst.name).is_some() {
            return Err(NetlistError::DuplicateName {
                line: 0,
                name: inst.name,
            });
        }
        for t in inst.terminals() {
            self.nodes.insert(t.to_string());
        }
        self.instances.push(inst);
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Instance> {
        let key = name.to_ascii_uppercase();
        let idx = self.instances.iter().position(|i| i.name == key)?;
        Some(self.instances.remove(idx))
    }

    /// Set the value of a two-terminal instance (R, C, I, V).
    pub fn set_value(&mut self, name: &str, value: f64) -> Result<(), NetlistError> {
        let inst = self
            .instance_mut(name)
            .ok_or_else(|| NetlistError::UnknownDevice(name.to_ascii_uppercase()))?;
        match &mut inst.kind {
            InstanceKind::Resistor { ohms: v, .. } | InstanceKind::Capacitor { farads: v, .. } => {
                if !(value > 0.0) {
                    return Err(NetlistError::NonPositive {
                        name: inst.name.clone(),
                        value,
                    });
                }
                *v = value;
            }
            InstanceKind::CurrentSource { amps: v, .. }
            | InstanceKind::VoltageSource { volts: v, .. } => *v = value,
            InstanceKind::Mosfet(_) => {
                return Err(NetlistError::WrongKind {
                    name: inst.name.clone(),
                    kind: "MOSFET",
                    what: "a scalar value",
                })
            }
        }
        Ok(())
    }

    /// Checks every structural invariant of a parsed netlist.
    pub fn validate(&self) -> Result<(), NetlistError> {
        if self.instances.is_empty() {
            return Err(NetlistError::Empty);
        }
        if !self.nodes.contains(GROUND) {
            return Err(NetlistError::NoGround);
        }
        let mut seen = IndexSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.name.as_str()) {
                return Err(NetlistError::DuplicateName {
                    line: 0,
                    name: inst.name.clone(),
                });
            }
            for t in inst.terminals() {
                if !self.nodes.contains(t) {
                    return Err(NetlistError::Syntax {
                        line: 0,
                        column: 0,
                        message: format!("{} references undeclared node {t}", inst.name),
                    });
                }
            }
            let bad = match &inst.kind {
                InstanceKind::Mosfet(m) if !(m.w > 0.0) => Some(m.w),
                InstanceKind::Mosfet(m) if !(m.l > 0.0) => Some(m.l),
                InstanceKind::Resistor { ohms: v, .. } | InstanceKind::Capacitor { farads: v, .. }
                    if !(*v > 0.0) =>
                {
                    Some(*v)
                }
                _ => None,
            };
            if let Some(value) = bad {
                return Err(NetlistError::NonPositive {
                    name: inst.name.clone(),
                    value,
                });
            }
        }
        Ok(())
    }

    /// Returns a copy with the plan's design variables written in.
    pub fn apply_design_variables(&self, dv: &DesignVariables) -> Result<Netlist, NetlistError> {
        let mut out = self.clone();
        for (name, &w) in &dv.widths {
            out.set_mosfet_dim(name, Some(w), None)?;
        }
        for (name, &l) in &dv.lengths {
            out.set_mosfet_dim(name, None, Some(l))?;
        }
        for (name, &v) in &dv.passives {
            let inst = out
                .instance(name)
                .ok_or_else(|| NetlistError::UnknownDevice(name.to_ascii_uppercase()))?;
            if !matches!(
                inst.kind,
                InstanceKind::Resistor { .. } | InstanceKind::Capacitor { .. }
            ) {
                return Err(NetlistError::WrongKind {
                    name: inst.name.clone(),
                    kind: inst.kind_name(),
                    what: "a passive value",
                });
            }
            out.set_value(name, v)?;
        }
        for (name, &v) in &dv.bias_currents {
            let inst = out
                .instance(name)
                .ok_or_else(|| NetlistError::UnknownDevice(name.to_ascii_uppercase()))?;
            if !matches!(inst.kind, InstanceKind::CurrentSource { .. }) {
                return Err(NetlistError::WrongKind {
                    name: inst.name.clone(),
                    kind: inst.kind_name(),
                    what: "a bias current",
                });
            }
            if !(v > 0.0) {
                return Err(NetlistError::NonPositive {
                    name: name.to_ascii_uppercase(),
                    value: v,
                });
            }
            out.set_value(name, v)?;
        }
        Ok(out)
    }

    fn set_mosfet_dim(
        &mut self,
        name: &str,
        w: Option<f64>,
        l: Option<f64>,
    ) -> Result<(), NetlistError> {
        let inst = self
            .instance_mut(name)
            .ok_or_else(|| NetlistError::UnknownDevice(name.to_ascii_uppercase()))?;
        let inst_name = inst.name.clone();
        let kind = inst.kind_name();
        let InstanceKind::Mosfet(m) = &mut inst.kind else {
            return Err(NetlistError::WrongKind {
                name: inst_name,
                kind,
                what: "W/L",
            });
        };
        for v in w.iter().chain(l.iter()) {
            if !(*v > 0.0) {
                return Err(NetlistError::NonPositive {
                    name: inst_name,
                    value: *v,
                });
            }
        }
        if let Some(w) = w {
            m.w = w;
        }
        if let Some(l) = l {
            m.l = l;
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Netlist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, ".title {}", self.name)?;
        for inst in &self.instances {
            match &inst.kind {
                InstanceKind::Mosfet(m) => writeln!(
                    f,
                    "{} {} {} {} {} {} W={} L={}",
                    inst.name,
                    m.drain,
                    m.gate,
                    m.source,
                    m.bulk,
                    m.mos_type,
                    format_exact(m.w),
                    format_exact(m.l)
                )?,
                InstanceKind::Resistor { a, b, ohms: v }
                | InstanceKind::Capacitor { a, b, farads: v } => {
                    writeln!(f, "{} {} {} {}", inst.name, a, b, format_exact(*v))?
                }
                InstanceKind::CurrentSource { pos, neg, amps: v }
                | InstanceKind::VoltageSource { pos, neg, volts: v } => {
                    writeln!(f, "{} {} {} {}", inst.name, pos, neg, format_exact(*v))?
                }
            }
        }
        writeln!(f, ".end")
    }
}

struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

/// Parse netlist text. The name comes from `.title`, or `UNNAMED` if absent.
pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    let logical = join_continuations(text)?;
    let mut name = None;
    let mut nodes = IndexSet::new();
    let mut instances: Vec<Instance> = Vec::new();

    for tokens in logical {
        let first = &tokens[0];
        let head = first.text.to_ascii_uppercase();
        if let Some(directive) = head.strip_prefix('.') {
            match directive {
                "TITLE" => {
                    let rest: Vec<&str> = tokens[1..].iter().map(|t| t.text).collect();
                    if rest.is_empty() {
                        return Err(syntax(first, ".title needs a name"));
                    }
                    name = Some(rest.join(" ").to_ascii_uppercase());
                }
                "END" => break,
                _ => return Err(syntax(first, &format!("unsupported directive {}", first.text))),
            }
            continue;
        }
        let inst = parse_instance(&tokens)?;
        if instances.iter().any(|i| i.name == inst.name) {
            return Err(NetlistError::DuplicateName {
                line: first.line,
                name: inst.name,
            });
        }
        for t in inst.terminals() {
            nodes.insert(t.to_string());
        }
        instances.push(inst);
    }

    if instances.is_empty() {
        return Err(NetlistError::Empty);
    }
    let net = Netlist {
        name: name.unwrap_or_else(|| "UNNAMED".to_string()),
        nodes,
        instances,
    };
    net.validate()?;
    Ok(net)
}

fn syntax(tok: &Token<'_>, message: &str) -> NetlistError {
    NetlistError::Syntax {
        line: tok.line,
        column: tok.column,
        message: message.to_string(),
    }
}

fn join_continuations(text: &str) -> Result<Vec<Vec<Token<'_>>>, NetlistError> {
    let mut out: Vec<Vec<Token<'_>>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split(';').next().unwrap_or("");
        let trimmed = content.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        let mut toks = tokenize(content, line);
        if trimmed.starts_with('+') {
            let Some(prev) = out.last_mut() else {
                return Err(NetlistError::Syntax {
                    line,
                    column: raw.len() - trimmed.len() + 1,
                    message: "continuation line with nothing to continue".into(),
                });
            };
            // drop the '+' itself (it may be glued to the first token)
            let first = toks.remove(0);
            if first.text.len() > 1 {
                prev.push(Token {
                    text: &first.text[1..],
                    line,
                    column: first.column + 1,
                });
            }
            prev.extend(toks);
        } else {
            out.push(toks);
        }
    }
    Ok(out)
}

fn tokenize(content: &str, line: usize) -> Vec<Token<'_>> {
    let mut toks = Vec::new();
    let mut start = None;
    for (i, c) in content.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                toks.push(Token {
                    text: &content[s..i],
                    line,
                    column: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        toks.push(Token {
            text: &content[s..],
            line,
            column: s + 1,
        });
    }
    toks
}

fn parse_value(tok: &Token<'_>) -> Result<f64, NetlistError> {
    parse_si(tok.text).ok_or_else(|| syntax(tok, &format!("invalid value '{}'", tok.text)))
}

fn check_identifier(tok: &Token<'_>) -> Result<String, NetlistError> {
    let ok = tok
        .text
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '#' | '!' | '<' | '>' | '[' | ']'));
    if !ok || tok.text.contains('=') {
        return Err(syntax(tok, &format!("invalid identifier '{}'", tok.text)));
    }
    Ok(tok.text.to_ascii_uppercase())
}

fn parse_instance(tokens: &[Token<'_>]) -> Result<Instance, NetlistError> {
    let first = &tokens[0];
    let name = check_identifier(first)?;
    let prefix = name.chars().next().unwrap_or(' ');
    let line = first.line;
    // positional tokens are the ones before any key=value parameter
    let positional: Vec<&Token<'_>> = tokens[1..]
        .iter()
        .take_while(|t| !t.text.contains('='))
        .collect();
    let params: Vec<&Token<'_>> = tokens[1 + positional.len()..].iter().collect();

    let arity = |expected: usize, found: usize| NetlistError::Arity {
        line,
        name: name.clone(),
        expected,
        found,
    };

    let kind = match prefix {
        'M' => {
            // d g s b model
            if positional.len() != 5 {
                let found = positional.len().saturating_sub(1);
                return Err(arity(4, found));
            }
            let model = positional[4].text.to_ascii_uppercase();
            let mos_type = match model.as_str() {
                "NMOS" => MosType::Nmos,
                "PMOS" => MosType::Pmos,
                _ => {
                    return Err(syntax(
                        positional[4],
                        &format!("unknown model '{}', expected NMOS or PMOS", positional[4].text),
                    ))
                }
            };
            let mut w = None;
            let mut l = None;
            for p in &params {
                let (k, v) = p.text.split_once('=').unwrap_or((p.text, ""));
                let value = parse_si(v).ok_or_else(|| {
                    syntax(p, &format!("invalid value in parameter '{}'", p.text))
                })?;
                match k.to_ascii_uppercase().as_str() {
                    "W" => w = Some(value),
                    "L" => l = Some(value),
                    other => return Err(syntax(p, &format!("unknown MOSFET parameter '{other}'"))),
                }
            }
            let (Some(w), Some(l)) = (w, l) else {
                return Err(syntax(first, "MOSFET requires both W= and L="));
            };
            InstanceKind::Mosfet(Mosfet {
                mos_type,
                drain: check_identifier(positional[0])?,
                gate: check_identifier(positional[1])?,
                source: check_identifier(positional[2])?,
                bulk: check_identifier(positional[3])?,
                w,
                l,
            })
        }
        'R' | 'C' | 'I' | 'V' => {
            if let Some(p) = params.first() {
                return Err(syntax(p, &format!("unexpected parameter '{}'", p.text)));
            }
            let mut pos = positional.clone();
            if matches!(prefix, 'I' | 'V')
                && pos.len() == 4
                && pos[2].text.eq_ignore_ascii_case("DC")
            {
                pos.remove(2);
            }
            if pos.len() != 3 {
                return Err(arity(2, pos.len().saturating_sub(1)));
            }
            let a = check_identifier(pos[0])?;
            let b = check_identifier(pos[1])?;
            let v = parse_value(pos[2])?;
            match prefix {
                'R' => InstanceKind::Resistor { a, b, ohms: v },
                'C' => InstanceKind::Capacitor { a, b, farads: v },
                'I' => InstanceKind::CurrentSource {
                    pos: a,
                    neg: b,
                    amps: v,
                },
                _ => InstanceKind::VoltageSource {
                    pos: a,
                    neg: b,
                    volts: v,
                },
            }
        }
        other => {
            return Err(NetlistError::UnknownPrefix {
                line,
                column: first.column,
                prefix: other,
            })
        }
    };
    let inst = Instance { name, kind };
    if let InstanceKind::Resistor { ohms: v, .. } | InstanceKind::Capacitor { farads: v, .. } =
        &inst.kind
    {
        if !(*v > 0.0) {
            return Err(NetlistError::NonPositive {
                name: inst.name,
                value: *v,
            });
        }
    }
    Ok(inst)
}
