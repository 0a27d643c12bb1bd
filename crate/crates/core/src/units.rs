//! SI value parsing and display helpers.
//!
//! Everything inside the crate is in base SI units. Scale suffixes are only
//! accepted at the text boundary (netlists, plans, config files).

/// Parse a number with an optional SPICE scale suffix
/// (`f p n u m k meg g t`, case-insensitive).
///
/// Returns `None` if the text is not a complete number.
pub fn parse_si(text: &str) -> Option<f64> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    let split = numeric_prefix_len(t);
    if split == 0 {
        return None;
    }
    let (num, suffix) = t.split_at(split);
    let base: f64 = num.parse().ok()?;
    let exp = scale_exponent(suffix)?;
    if exp == 0 {
        return Some(base);
    }
    // reparse with the exponent folded in so "20u" is the double nearest 2e-5
    if !num.contains(['e', 'E']) {
        return format!("{num}e{exp}").parse().ok();
    }
    Some(base * 10f64.powi(exp))
}

/// Length in bytes of the longest prefix of `t` that looks like a float
/// literal (sign, digits, point, exponent).
pub(crate) fn numeric_prefix_len(t: &str) -> usize {
    let b = t.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let digits_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i == digits_start || (i == digits_start + 1 && b[digits_start] == b'.') {
        return 0;
    }
    // exponent only if followed by digits, so "1e" style suffixes are rejected
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        let exp_start = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    i
}

/// Power of ten for a scale suffix; `None` for anything unrecognised.
pub(crate) fn scale_exponent(suffix: &str) -> Option<i32> {
    let s = suffix.to_ascii_lowercase();
    Some(match s.as_str() {
        "" => 0,
        "f" => -15,
        "p" => -12,
        "n" => -9,
        "u" => -6,
        "m" => -3,
        "k" => 3,
        "meg" => 6,
        "g" => 9,
        "t" => 12,
        _ => return None,
    })
}

/// Shortest text that parses back to exactly `v`.
pub fn format_exact(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let plain = format!("{v}");
    let sci = format!("{v:e}");
    if plain.len() <= sci.len() {
        plain
    } else {
        sci
    }
}

/// Engineering notation with an SI prefix, e.g. `314.159u`.
pub fn format_eng(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    const PREFIXES: [(f64, &str); 9] = [
        (1e12, "T"),
        (1e9, "G"),
        (1e6, "M"),
        (1e3, "k"),
        (1.0, ""),
        (1e-3, "m"),
        (1e-6, "u"),
        (1e-9, "n"),
        (1e-12, "p"),
    ];
    let a = v.abs();
    for (scale, p) in PREFIXES {
        if a >= scale * 0.9995 {
            return format!("{:.3}{}", v / scale, p);
        }
    }
    format!("{:.3}f", v / 1e-15)
}
