//! Flat `key = value` config files for process cards and design targets.
//!
//! `#` starts a comment. Numeric values accept SPICE scale suffixes.

use indexmap::IndexMap;
use thiserror::Error;

use crate::device::{DeviceParams, ProcessCard};
use crate::netlist::Netlist;
use crate::plan::DesignTargets;
use crate::units::parse_si;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("line {line}: '{key}' is set twice")]
    Duplicate { key: String, line: usize },
    #[error("line {line}: '{key}' is not a number: {value}")]
    NotANumber { key: String, value: String, line: usize },
    #[error("missing key(s): {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("unknown key(s): {}", .0.join(", "))]
    Unknown(Vec<String>),
    #[error("{0}")]
    Invalid(String),
}

/// Parsed key-value file. Keys are lower-cased; line numbers are kept for
/// error messages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: IndexMap<String, (String, usize)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = k.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if entries.contains_key(&key) {
                return Err(ConfigError::Duplicate { key, line: i + 1 });
            }
            entries.insert(key, (v.trim().to_string(), i + 1));
        }
        Ok(KvFile { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let Some((v, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        parse_si(v).map(Some).ok_or_else(|| ConfigError::NotANumber {
            key: key.to_string(),
            value: v.clone(),
            line: *line,
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn reject_unknown(&self, known: &[String]) -> Result<(), ConfigError> {
        let unknown: Vec<String> = self
            .keys()
            .filter(|k| !known.iter().any(|n| n == k))
            .map(str::to_string)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(unknown))
        }
    }
}

const DEVICE_KEYS: [&str; 10] = [
    "mu0cox", "vth0", "gamma", "phif2", "theta", "lambdal", "cox", "covl", "cj", "ldrain",
];

fn device_params(kv: &KvFile, prefix: &str, missing: &mut Vec<String>) -> Result<DeviceParams, ConfigError> {
    let mut vals = [0.0; 10];
    for (slot, key) in vals.iter_mut().zip(DEVICE_KEYS) {
        let full = format!("{prefix}.{key}");
        match kv.number(&full)? {
            Some(v) => *slot = v,
            None => missing.push(full),
        }
    }
    let [mu0_cox, vth0, gamma, phi_f2, theta, lambda_l, cox_area, covl, cj, ldrain] = vals;
    Ok(DeviceParams {
        mu0_cox,
        vth0,
        gamma,
        phi_f2,
        theta,
        lambda_l,
        cox_area,
        covl,
        cj,
        ldrain,
    })
}

/// Process card from `name = ...` plus `nmos.<key>` / `pmos.<key>` for
/// every device parameter.
pub fn load_card(text: &str) -> Result<ProcessCard, ConfigError> {
    let kv = KvFile::parse(text)?;
    let mut known = vec!["name".to_string()];
    for p in ["nmos", "pmos"] {
        known.extend(DEVICE_KEYS.iter().map(|k| format!("{p}.{k}")));
    }
    kv.reject_unknown(&known)?;
    let mut missing = Vec::new();
    let nmos = device_params(&kv, "nmos", &mut missing)?;
    let pmos = device_params(&kv, "pmos", &mut missing)?;
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    let card = ProcessCard {
        name: kv.get("name").unwrap_or("unnamed").to_string(),
        nmos,
        pmos,
    };
    card.validate().map_err(ConfigError::Invalid)?;
    Ok(card)
}

pub fn card_to_text(card: &ProcessCard) -> String {
    let mut s = format!("name = {}\n", card.name);
    for (prefix, p) in [("nmos", &card.nmos), ("pmos", &card.pmos)] {
        let vals = [
            p.mu0_cox, p.vth0, p.gamma, p.phi_f2, p.theta, p.lambda_l, p.cox_area, p.covl, p.cj, p.ldrain,
        ];
        for (k, v) in DEVICE_KEYS.iter().zip(vals) {
            s.push_str(&format!("{prefix}.{k} = {v:e}\n"));
        }
    }
    s
}

/// Lowest and highest rail among grounded voltage sources (ground included).
pub fn netlist_rails(net: &Netlist) -> (f64, f64) {
    net.supplies()
        .values()
        .fold((0.0_f64, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

const TARGET_KEYS: [&str; 10] = [
    "av", "gbw", "pm", "sr", "sr_pos", "sr_neg", "power", "cl", "vdd", "vss",
];

/// Targets: `av` (dB), `gbw` (Hz), `pm` (deg), `sr` or `sr_pos`/`sr_neg`
/// (V/s), `power` (W, upper bound), `cl` (F, required), `vdd`/`vss` (V,
/// default to the netlist rails when `net` is given).
pub fn load_targets(text: &str, net: Option<&Netlist>) -> Result<DesignTargets, ConfigError> {
    let kv = KvFile::parse(text)?;
    let known: Vec<String> = TARGET_KEYS.iter().map(|k| k.to_string()).collect();
    kv.reject_unknown(&known)?;
    let sr = kv.number("sr")?;
    let rails = net.map(netlist_rails);
    let vdd = kv.number("vdd")?.or(rails.map(|r| r.1));
    let vss = kv.number("vss")?.or(rails.map(|r| r.0));
    let cl = kv.number("cl")?;
    let mut missing = Vec::new();
    for (k, v) in [("cl", cl), ("vdd", vdd), ("vss", vss)] {
        if v.is_none() {
            missing.push(k.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    let t = DesignTargets {
        av_db_min: kv.number("av")?,
        gbw_hz_min: kv.number("gbw")?,
        pm_deg_min: kv.number("pm")?,
        sr_pos_min: kv.number("sr_pos")?.or(sr),
        sr_neg_min: kv.number("sr_neg")?.or(sr),
        power_max: kv.number("power")?,
        vdd: vdd.unwrap_or_default(),
        vss: vss.unwrap_or_default(),
        cl: cl.unwrap_or_default(),
    };
    t.validate().map_err(ConfigError::Invalid)?;
    Ok(t)
}

pub fn targets_to_text(t: &DesignTargets) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("av", t.av_db_min),
        ("gbw", t.gbw_hz_min),
        ("pm", t.pm_deg_min),
        ("sr_pos", t.sr_pos_min),
        ("sr_neg", t.sr_neg_min),
        ("power", t.power_max),
    ] {
        if let Some(v) = v {
            s.push_str(&format!("{k} = {v:e}\n"));
        }
    }
    s.push_str(&format!("cl = {:e}\nvdd = {:e}\nvss = {:e}\n", t.cl, t.vdd, t.vss));
    s
}
