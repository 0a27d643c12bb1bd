use std::collections::HashSet;

use indexmap::IndexMap;

use super::lexer::{lex, Tok};
use super::{
    BinOp, Classification, Cmp, Expr, Item, Metric, PlanError, Pos, SetTarget, SizeDirective,
    SizingPlan,
};

pub(crate) const CALIB_FIELDS: [&str; 8] = ["mu_cox", "agm", "lambda", "vth", "ro", "l", "w", "polarity"];
pub(crate) const TARGET_FIELDS: [&str; 8] = ["av", "gbw", "pm", "sr_pos", "sr_neg", "sr", "power", "cl"];
pub(crate) const SUPPLY_FIELDS: [&str; 2] = ["vdd", "vss"];

/// (name, min args, max args)
pub(crate) const FUNCTIONS: [(&str, usize, usize); 13] = [
    ("pi", 0, 0),
    ("sqrt", 1, 1),
    ("abs", 1, 1),
    ("atan", 1, 1),
    ("tan", 1, 1),
    ("exp", 1, 1),
    ("ln", 1, 1),
    ("log10", 1, 1),
    ("pow", 2, 2),
    ("parallel", 2, 2),
    ("min", 1, usize::MAX),
    ("max", 1, usize::MAX),
    ("clamp", 3, 3),
];

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
}

fn syntax(pos: Pos, message: impl Into<String>) -> PlanError {
    PlanError::Syntax {
        pos,
        message: message.into(),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.bump();
        }
    }

    fn expect(&mut self, want: Tok) -> Result<Pos, PlanError> {
        let (t, pos) = self.bump();
        if t == want {
            Ok(pos)
        } else {
            Err(syntax(pos, format!("expected {}, found {}", want.describe(), t.describe())))
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), PlanError> {
        match self.bump() {
            (Tok::Ident(s), p) => Ok((s, p)),
            (t, p) => Err(syntax(p, format!("expected a name, found {}", t.describe()))),
        }
    }

    fn device(&mut self) -> Result<(String, Pos), PlanError> {
        let (s, p) = self.ident()?;
        Ok((s.to_ascii_uppercase(), p))
    }

    fn keyword(&mut self, kw: &str) -> Result<Pos, PlanError> {
        match self.bump() {
            (Tok::Ident(s), p) if s == kw => Ok(p),
            (t, p) => Err(syntax(p, format!("expected '{kw}', found {}", t.describe()))),
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn end_of_statement(&mut self) -> Result<(), PlanError> {
        match self.peek() {
            Tok::Newline | Tok::Eof => {
                self.bump();
                Ok(())
            }
            Tok::RBrace => Ok(()),
            t => Err(syntax(self.pos(), format!("expected end of line, found {}", t.describe()))),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, PlanError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, PlanError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, PlanError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, PlanError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, PlanError> {
        let (t, pos) = self.bump();
        match t {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            args.push(self.expr()?);
                            if *self.peek() == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    return Ok(Expr::Call { name, args, pos });
                }
                let mut path = vec![name];
                while *self.peek() == Tok::Dot {
                    self.bump();
                    path.push(self.ident()?.0);
                }
                Ok(Expr::Ref { path, pos })
            }
            t => Err(syntax(pos, format!("expected an expression, found {}", t.describe()))),
        }
    }

    fn cmp(&mut self) -> Result<Cmp, PlanError> {
        let (t, pos) = self.bump();
        Ok(match t {
            Tok::Ge => Cmp::Ge,
            Tok::Gt => Cmp::Gt,
            Tok::Le => Cmp::Le,
            Tok::Lt => Cmp::Lt,
            t => return Err(syntax(pos, format!("expected a comparison, found {}", t.describe()))),
        })
    }

    fn let_item(&mut self, pos: Pos) -> Result<Item, PlanError> {
        let (name, _) = self.ident()?;
        self.expect(Tok::Assign)?;
        let expr = self.expr()?;
        self.end_of_statement()?;
        Ok(Item::Let { name, expr, pos })
    }

    fn block(&mut self) -> Result<Vec<Item>, PlanError> {
        self.expect(Tok::LBrace)?;
        let mut items = Vec::new();
        loop {
            self.skip_newlines();
            match self.peek() {
                Tok::RBrace => {
                    self.bump();
                    return Ok(items);
                }
                Tok::Ident(s) if s == "let" => {
                    let pos = self.bump().1;
                    items.push(self.let_item(pos)?);
                }
                Tok::Ident(s) if s == "if" => {
                    let pos = self.bump().1;
                    items.push(self.if_item(pos)?);
                }
                t => {
                    return Err(syntax(
                        self.pos(),
                        format!("only let and if are allowed inside a branch, found {}", t.describe()),
                    ))
                }
            }
        }
    }

    fn if_item(&mut self, pos: Pos) -> Result<Item, PlanError> {
        let lhs = self.expr()?;
        let cmp = self.cmp()?;
        let rhs = self.expr()?;
        let then = self.block()?;
        let otherwise = if self.eat_keyword("else") {
            if self.eat_keyword("if") {
                let p = self.pos();
                vec![self.if_item(p)?]
            } else {
                self.block()?
            }
        } else {
            Vec::new()
        };
        if *self.peek() != Tok::RBrace {
            self.end_of_statement()?;
        }
        Ok(Item::If {
            lhs,
            cmp,
            rhs,
            then,
            otherwise,
            pos,
        })
    }

    fn size_item(&mut self) -> Result<SizeDirective, PlanError> {
        let (kind, kpos) = self.ident()?;
        let (device, _) = self.device()?;
        let d = match kind.as_str() {
            "independent" => {
                let mut current = None;
                let mut vov = None;
                for _ in 0..2 {
                    let (key, p) = self.ident()?;
                    self.expect(Tok::Assign)?;
                    let e = self.expr()?;
                    let slot = match key.as_str() {
                        "current" => &mut current,
                        "vov" => &mut vov,
                        _ => return Err(syntax(p, format!("expected current= or vov=, found '{key}'"))),
                    };
                    if slot.replace(e).is_some() {
                        return Err(syntax(p, format!("{key}= given twice")));
                    }
                }
                SizeDirective::Independent {
                    device,
                    current: current.unwrap(),
                    vov: vov.unwrap(),
                }
            }
            "mirror" => {
                self.keyword("from")?;
                let (reference, _) = self.device()?;
                self.keyword("carrying")?;
                let current = self.expr()?;
                SizeDirective::Mirror {
                    device,
                    reference,
                    current,
                }
            }
            "matched" => {
                self.eat_keyword("with");
                let (partner, _) = self.device()?;
                SizeDirective::Matched { device, partner }
            }
            _ => {
                return Err(syntax(
                    kpos,
                    format!("expected independent, mirror or matched, found '{kind}'"),
                ))
            }
        };
        self.end_of_statement()?;
        Ok(d)
    }
}

/// Structural pass output before binding analysis.
struct Raw {
    name: String,
    topology: String,
    classifications: IndexMap<String, (Classification, Pos)>,
    body: Vec<Item>,
    predictions: IndexMap<Metric, (Expr, Pos)>,
}

fn parse_raw(text: &str) -> Result<Raw, PlanError> {
    let mut p = Parser { toks: lex(text)?, i: 0 };
    p.skip_newlines();
    p.keyword("plan")?;
    let (name, _) = p.ident()?;
    p.keyword("for")?;
    let (topology, _) = p.ident()?;
    p.end_of_statement()?;

    let mut raw = Raw {
        name,
        topology,
        classifications: IndexMap::new(),
        body: Vec::new(),
        predictions: IndexMap::new(),
    };
    loop {
        p.skip_newlines();
        let (t, pos) = p.bump();
        let kw = match t {
            Tok::Eof => break,
            Tok::Ident(s) => s,
            t => return Err(syntax(pos, format!("expected a statement, found {}", t.describe()))),
        };
        match kw.as_str() {
            "classify" => {
                let (device, _) = p.device()?;
                let (kind, kp) = p.ident()?;
                let c = match kind.as_str() {
                    "independent" => Classification::Independent,
                    "mirror" => {
                        p.eat_keyword("of");
                        Classification::Mirror {
                            reference: p.device()?.0,
                        }
                    }
                    "matched" => {
                        p.eat_keyword("with");
                        Classification::Matched {
                            partner: p.device()?.0,
                        }
                    }
                    _ => {
                        return Err(syntax(
                            kp,
                            format!("expected independent, mirror or matched, found '{kind}'"),
                        ))
                    }
                };
                p.end_of_statement()?;
                if raw.classifications.insert(device.clone(), (c, pos)).is_some() {
                    return Err(PlanError::DuplicateClassification { device });
                }
            }
            "length" => {
                let (device, _) = p.device()?;
                p.expect(Tok::Assign)?;
                let expr = p.expr()?;
                p.end_of_statement()?;
                raw.body.push(Item::Length { device, expr, pos });
            }
            "let" => raw.body.push(p.let_item(pos)?),
            "if" => raw.body.push(p.if_item(pos)?),
            "size" => {
                let directive = p.size_item()?;
                raw.body.push(Item::Size { directive, pos });
            }
            "set" => {
                let (ns, np) = p.ident()?;
                let target = match ns.as_str() {
                    "passive" => SetTarget::Passive,
                    "source" => SetTarget::Source,
                    _ => return Err(syntax(np, format!("expected passive. or source., found '{ns}'"))),
                };
                p.expect(Tok::Dot)?;
                let (name, _) = p.device()?;
                p.expect(Tok::Assign)?;
                let expr = p.expr()?;
                p.end_of_statement()?;
                raw.body.push(Item::Set {
                    target,
                    name,
                    expr,
                    pos,
                });
            }
            "predict" => {
                let (key, kp) = p.ident()?;
                let m = Metric::from_key(&key)
                    .ok_or_else(|| syntax(kp, format!("unknown metric '{key}'")))?;
                p.expect(Tok::Assign)?;
                let expr = p.expr()?;
                p.end_of_statement()?;
                if raw.predictions.insert(m, (expr, pos)).is_some() {
                    return Err(PlanError::DuplicateBinding {
                        pos,
                        name: format!("predict.{key}"),
                    });
                }
            }
            other => return Err(syntax(pos, format!("unknown statement '{other}'"))),
        }
    }
    Ok(raw)
}

fn check_classes(raw: &Raw) -> Result<(), PlanError> {
    for (dev, (c, pos)) in &raw.classifications {
        if let Some(parent) = c.parent() {
            if !raw.classifications.contains_key(parent) {
                return Err(PlanError::Unclassified {
                    pos: *pos,
                    device: parent.to_string(),
                });
            }
        }
        let mut seen = vec![dev.clone()];
        let mut cur = dev.as_str();
        while let Some(parent) = raw.classifications.get(cur).and_then(|(c, _)| c.parent()) {
            if let Some(k) = seen.iter().position(|s| s == parent) {
                let mut cycle: Vec<String> = seen[k..].to_vec();
                cycle.push(parent.to_string());
                return Err(PlanError::MirrorCycle { cycle });
            }
            seen.push(parent.to_string());
            cur = parent;
        }
    }

    let mut sized: HashSet<&str> = HashSet::new();
    for item in &raw.body {
        match item {
            Item::Size { directive, pos } => {
                let dev = directive.device();
                let Some((class, _)) = raw.classifications.get(dev) else {
                    return Err(PlanError::Unclassified {
                        pos: *pos,
                        device: dev.to_string(),
                    });
                };
                let ok = match (class, directive) {
                    (Classification::Independent, SizeDirective::Independent { .. }) => true,
                    (Classification::Mirror { reference: a }, SizeDirective::Mirror { reference: b, .. }) => a == b,
                    (Classification::Matched { partner: a }, SizeDirective::Matched { partner: b, .. }) => a == b,
                    _ => false,
                };
                if !ok {
                    let directive_desc = match directive {
                        SizeDirective::Independent { .. } => "independent".to_string(),
                        SizeDirective::Mirror { reference, .. } => format!("mirror from {reference}"),
                        SizeDirective::Matched { partner, .. } => format!("matched with {partner}"),
                    };
                    let class_desc = match class {
                        Classification::Independent => "independent".to_string(),
                        Classification::Mirror { reference } => format!("mirror of {reference}"),
                        Classification::Matched { partner } => format!("matched with {partner}"),
                    };
                    return Err(PlanError::DirectiveMismatch {
                        pos: *pos,
                        device: dev.to_string(),
                        classified: class_desc,
                        directive: directive_desc,
                    });
                }
                if !sized.insert(dev) {
                    return Err(PlanError::DuplicateSize {
                        pos: *pos,
                        device: dev.to_string(),
                    });
                }
            }
            Item::Length { device, expr, pos } => {
                let Some((class, _)) = raw.classifications.get(device) else {
                    return Err(PlanError::Unclassified {
                        pos: *pos,
                        device: device.clone(),
                    });
                };
                if let Some(parent) = class.parent() {
                    let alias = matches!(expr, Expr::Ref { path, .. }
                        if path.len() == 2 && path[0] == "length" && path[1].eq_ignore_ascii_case(parent));
                    if !alias {
                        return Err(PlanError::MirrorLengthMismatch {
                            pos: *pos,
                            device: device.clone(),
                            reference: parent.to_string(),
                        });
                    }
                }
            }
            _ => {}
        }
    }
    for dev in raw.classifications.keys() {
        if !sized.contains(dev.as_str()) {
            return Err(PlanError::Unsized { device: dev.clone() });
        }
    }
    let mut explicit = HashSet::new();
    for item in &raw.body {
        if let Item::Length { device, pos, .. } = item {
            if raw.classifications[device].0.parent().is_none() && !explicit.insert(device.as_str()) {
                return Err(PlanError::DuplicateBinding {
                    pos: *pos,
                    name: format!("length.{device}"),
                });
            }
        }
    }
    Ok(())
}

/// Name-resolution state for the ordered-binding check.
#[derive(Clone)]
struct Scope<'a> {
    bound: HashSet<String>,
    classes: &'a IndexMap<String, (Classification, Pos)>,
}

impl Scope<'_> {
    fn root<'b>(&'b self, dev: &'b str) -> &'b str {
        let mut cur = dev;
        while let Some(p) = self.classes.get(cur).and_then(|(c, _)| c.parent()) {
            cur = p;
        }
        cur
    }

    fn check_expr(&self, e: &Expr) -> Result<(), PlanError> {
        match e {
            Expr::Num(_) => Ok(()),
            Expr::Neg(a) => self.check_expr(a),
            Expr::Bin(_, a, b) => {
                self.check_expr(a)?;
                self.check_expr(b)
            }
            Expr::Call { name, args, pos } => {
                let Some(&(_, lo, hi)) = FUNCTIONS.iter().find(|f| f.0 == name) else {
                    return Err(PlanError::UnknownName {
                        pos: *pos,
                        name: format!("{name}()"),
                    });
                };
                if args.len() < lo || args.len() > hi {
                    let expected = if lo == hi {
                        lo.to_string()
                    } else if hi == usize::MAX {
                        format!("at least {lo}")
                    } else {
                        format!("{lo}..{hi}")
                    };
                    return Err(PlanError::Arity {
                        pos: *pos,
                        name: name.clone(),
                        expected,
                        found: args.len(),
                    });
                }
                args.iter().try_for_each(|a| self.check_expr(a))
            }
            Expr::Ref { path, pos } => self.check_ref(path, *pos),
        }
    }

    fn check_ref(&self, path: &[String], pos: Pos) -> Result<(), PlanError> {
        let unknown = || PlanError::UnknownName {
            pos,
            name: path.join("."),
        };
        let device_known = |d: &str| self.classes.contains_key(&d.to_ascii_uppercase());
        match path {
            [name] if name == "pi" => Ok(()),
            [name] => {
                if self.bound.contains(name) {
                    Ok(())
                } else {
                    Err(PlanError::Circular {
                        pos,
                        name: name.clone(),
                    })
                }
            }
            [ns, dev, field] if ns == "calib" => {
                if device_known(dev) && CALIB_FIELDS.contains(&field.as_str()) {
                    Ok(())
                } else {
                    Err(unknown())
                }
            }
            [ns, field] if ns == "target" && TARGET_FIELDS.contains(&field.as_str()) => Ok(()),
            [ns, field] if ns == "supply" && SUPPLY_FIELDS.contains(&field.as_str()) => Ok(()),
            [ns, dev] if ["width", "length", "current"].contains(&ns.as_str()) => {
                if !device_known(dev) {
                    return Err(unknown());
                }
                let key = bind_key(path);
                if self.bound.contains(&key) {
                    Ok(())
                } else {
                    Err(PlanError::Circular { pos, name: key })
                }
            }
            [ns, _] if ns == "passive" || ns == "source" => {
                let key = bind_key(path);
                if self.bound.contains(&key) {
                    Ok(())
                } else {
                    Err(PlanError::Circular { pos, name: key })
                }
            }
            _ => Err(unknown()),
        }
    }

    fn bind(&mut self, key: String, pos: Pos) -> Result<(), PlanError> {
        if !self.bound.insert(key.clone()) {
            return Err(PlanError::DuplicateBinding { pos, name: key });
        }
        Ok(())
    }

    fn check_items(&mut self, items: &[Item]) -> Result<(), PlanError> {
        for item in items {
            match item {
                Item::Let { name, expr, pos } => {
                    if name == "pi" {
                        return Err(PlanError::DuplicateBinding {
                            pos: *pos,
                            name: name.clone(),
                        });
                    }
                    self.check_expr(expr)?;
                    self.bind(name.clone(), *pos)?;
                }
                Item::If {
                    lhs,
                    rhs,
                    then,
                    otherwise,
                    ..
                } => {
                    self.check_expr(lhs)?;
                    self.check_expr(rhs)?;
                    let mut a = self.clone();
                    a.check_items(then)?;
                    let mut b = self.clone();
                    b.check_items(otherwise)?;
                    self.bound = a.bound.intersection(&b.bound).cloned().collect();
                }
                Item::Length { device, expr, pos } => {
                    self.check_expr(expr)?;
                    if self.classes[device].0.parent().is_none() {
                        self.bind(format!("length.{device}"), *pos)?;
                        let followers: Vec<String> = self
                            .classes
                            .keys()
                            .filter(|d| *d != device && self.root(d) == device)
                            .cloned()
                            .collect();
                        for d in followers {
                            self.bound.insert(format!("length.{d}"));
                        }
                    }
                }
                Item::Size { directive, pos } => {
                    let dev = directive.device();
                    match directive {
                        SizeDirective::Independent { current, vov, .. } => {
                            self.check_expr(current)?;
                            self.check_expr(vov)?;
                            let lk = format!("length.{dev}");
                            if !self.bound.contains(&lk) {
                                return Err(PlanError::Circular { pos: *pos, name: lk });
                            }
                        }
                        SizeDirective::Mirror { reference, current, .. } => {
                            self.check_expr(current)?;
                            let wk = format!("width.{reference}");
                            if !self.bound.contains(&wk) {
                                return Err(PlanError::Circular { pos: *pos, name: wk });
                            }
                        }
                        SizeDirective::Matched { partner, .. } => {
                            let wk = format!("width.{partner}");
                            if !self.bound.contains(&wk) {
                                return Err(PlanError::Circular { pos: *pos, name: wk });
                            }
                        }
                    }
                    self.bind(format!("width.{dev}"), *pos)?;
                    self.bind(format!("current.{dev}"), *pos)?;
                }
                Item::Set {
                    target,
                    name,
                    expr,
                    pos,
                } => {
                    self.check_expr(expr)?;
                    let ns = match target {
                        SetTarget::Passive => "passive",
                        SetTarget::Source => "source",
                    };
                    self.bind(format!("{ns}.{name}"), *pos)?;
                }
            }
        }
        Ok(())
    }
}

/// Canonical environment key for a dotted reference.
pub(crate) fn bind_key(path: &[String]) -> String {
    match path {
        [name] => name.clone(),
        [ns, dev] => format!("{ns}.{}", dev.to_ascii_uppercase()),
        [ns, dev, field] => format!("{ns}.{}.{field}", dev.to_ascii_uppercase()),
        _ => path.join("."),
    }
}

/// Parse a plan and check its structural invariants: complete and
/// consistent classification, acyclic mirror references, mirror lengths
/// tied to their reference, and that every name is bound before use.
pub fn parse_plan(text: &str) -> Result<SizingPlan, PlanError> {
    let raw = parse_raw(text)?;
    check_classes(&raw)?;

    let mut scope = Scope {
        bound: HashSet::new(),
        classes: &raw.classifications,
    };
    let explicit: HashSet<&str> = raw
        .body
        .iter()
        .filter_map(|i| match i {
            Item::Length { device, .. } => Some(device.as_str()),
            _ => None,
        })
        .collect();
    let unbound_roots: Vec<String> = raw
        .classifications
        .keys()
        .filter(|d| !explicit.contains(scope.root(d)))
        .map(|d| format!("length.{d}"))
        .collect();
    scope.bound.extend(unbound_roots);
    scope.check_items(&raw.body)?;
    for (expr, _) in raw.predictions.values() {
        scope.check_expr(expr)?;
    }

    Ok(SizingPlan {
        name: raw.name,
        topology: raw.topology,
        classifications: raw
            .classifications
            .into_iter()
            .map(|(k, (c, _))| (k, c))
            .collect(),
        body: raw.body,
        predictions: raw.predictions.into_iter().map(|(k, (e, _))| (k, e)).collect(),
        source: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = "\
plan mini for CM
classify M1 independent
classify M2 mirror of M1
classify M3 matched M1
length M1 = 0.5u
let id = 10u
size independent M1 current=id vov=0.2
size mirror M2 from M1 carrying 2*id
size matched M3 with M1
predict power = 3*id*1.8
";

    #[test]
    fn parses_minimal_plan() {
        let p = parse_plan(MINI).unwrap();
        assert_eq!(p.classifications.len(), 3);
        assert_eq!(p.size_directives().count(), 3);
        assert!(p.predictions.contains_key(&Metric::Power));
    }

    #[test]
    fn unbound_let() {
        let text = MINI.replace("let id = 10u", "let id = k\nlet k = 1");
        assert!(matches!(parse_plan(&text), Err(PlanError::Circular { name, .. }) if name == "k"));
    }

    #[test]
    fn unclassified() {
        let text = MINI.replace("classify M3 matched M1\n", "");
        assert!(matches!(parse_plan(&text), Err(PlanError::Unclassified { device, .. }) if device == "M3"));
    }

    #[test]
    fn mirror_length_statement_rejected() {
        let text = MINI.replace("let id", "length M2 = 1u\nlet id");
        assert!(matches!(parse_plan(&text), Err(PlanError::MirrorLengthMismatch { .. })));
        let alias = MINI.replace("let id", "length M2 = length.M1\nlet id");
        assert!(parse_plan(&alias).is_ok());
    }

    #[test]
    fn mirror_cycle() {
        let text = MINI.replace("classify M1 independent", "classify M1 mirror of M2");
        assert!(matches!(parse_plan(&text), Err(PlanError::MirrorCycle { .. })));
    }

    #[test]
    fn mirror_before_reference() {
        let text = "plan x for CM\nclassify M1 independent\nclassify M2 mirror of M1\n\
                    size mirror M2 from M1 carrying 1u\nsize independent M1 current=1u vov=0.2\n";
        assert!(matches!(parse_plan(text), Err(PlanError::Circular { name, .. }) if name == "width.M1"));
    }

    #[test]
    fn directive_mismatch() {
        let text = MINI.replace("size matched M3 with M1", "size independent M3 current=id vov=0.2");
        assert!(matches!(parse_plan(&text), Err(PlanError::DirectiveMismatch { .. })));
    }

    #[test]
    fn branches_bind_intersection() {
        let text = MINI.replace(
            "let id = 10u",
            "if 1 >= 2 {\n let id = 10u\n let only = 1\n} else {\n let id = 20u\n}",
        );
        assert!(parse_plan(&text).is_ok());
        let bad = text.replace("predict power = 3*id*1.8", "predict power = only");
        assert!(matches!(parse_plan(&bad), Err(PlanError::Circular { .. })));
    }

    #[test]
    fn syntax_position() {
        match parse_plan("plan x for CM\nlet a = (1 +\n") {
            Err(PlanError::Syntax { pos, .. }) => assert!(pos.line >= 2),
            e => panic!("{e:?}"),
        }
    }
}
