use super::{PlanError, Pos};
use crate::units::parse_si;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Num(f64),
    Dot,
    Comma,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Assign,
    Ge,
    Gt,
    Le,
    Lt,
    Newline,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Num(v) => format!("number {v}"),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
            t => format!("'{}'", t.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::Dot => ".",
            Tok::Comma => ",",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Caret => "^",
            Tok::Assign => "=",
            Tok::Ge => ">=",
            Tok::Gt => ">",
            Tok::Le => "<=",
            Tok::Lt => "<",
            _ => "?",
        }
    }
}

/// Newlines inside parentheses are dropped so long expressions can wrap.
pub(crate) fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, PlanError> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    for (li, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let pos = Pos {
                line: li + 1,
                col: i + 1,
            };
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            // topology names such as 2SMC may start with a digit
            let after_for = matches!(out.last(), Some((Tok::Ident(w), _)) if w == "for");
            if after_for && c.is_ascii_alphanumeric() {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '-') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
                continue;
            }
            if c.is_ascii_digit() || (c == '.'&& chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len()
                    && (chars[i] == 'e' || chars[i] == 'E')
                    && chars
                        .get(i + 1)
                        .is_some_and(|d| d.is_ascii_digit() || ((*d == '-' || *d == '+') && chars.get(i + 2).is_some_and(|e| e.is_ascii_digit())))
                {
                    i += 2;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    i += 1;
                }
                let lit: String = chars[start..i].iter().collect();
                let v = parse_si(&lit).ok_or_else(|| PlanError::Syntax {
                    pos,
                    message: format!("bad number '{lit}'"),
                })?;
                out.push((Tok::Num(v), pos));
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
                continue;
            }
            let next = chars.get(i + 1).copied();
            let (tok, len) = match (c, next) {
                ('>', Some('=')) => (Tok::Ge, 2),
                ('<', Some('=')) => (Tok::Le, 2),
                ('>', _) => (Tok::Gt, 1),
                ('<', _) => (Tok::Lt, 1),
                ('.', _) => (Tok::Dot, 1),
                (',', _) => (Tok::Comma, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                ('{', _) => (Tok::LBrace, 1),
                ('}', _) => (Tok::RBrace, 1),
                ('+', _) => (Tok::Plus, 1),
                ('-', _) => (Tok::Minus, 1),
                ('*', _) => (Tok::Star, 1),
                ('/', _) => (Tok::Slash, 1),
                ('^', _) => (Tok::Caret, 1),
                ('=', _) => (Tok::Assign, 1),
                _ => {
                    return Err(PlanError::Syntax {
                        pos,
                        message: format!("unexpected character '{c}'"),
                    })
                }
            };
            match tok {
                Tok::LParen => depth += 1,
                Tok::RParen => depth = depth.saturating_sub(1),
                _ => {}
            }
            out.push((tok, pos));
            i += len;
        }
        if depth == 0 {
            out.push((
                Tok::Newline,
                Pos {
                    line: li + 1,
                    col: chars.len() + 1,
                },
            ));
        }
    }
    let end = Pos {
        line: text.lines().count() + 1,
        col: 1,
    };
    out.push((Tok::Eof, end));
    Ok(out)
}
