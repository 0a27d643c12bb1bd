//! Per-device parameter extraction from a solved operating point.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::device::Region;
use crate::netlist::MosType;
use crate::sim::{DeviceOp, OperatingPoint};

/// Bias quantities a record is extracted from. Magnitudes, so PMOS values
/// are positive for a conducting device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceMeasurement {
    pub mos_type: MosType,
    pub w: f64,
    pub l: f64,
    pub id: f64,
    pub vov: f64,
    pub vds: f64,
    pub gm: f64,
    pub gds: f64,
    pub vth: f64,
}

impl From<&DeviceOp> for DeviceMeasurement {
    fn from(op: &DeviceOp) -> Self {
        DeviceMeasurement {
            mos_type: op.mos_type,
            w: op.w,
            l: op.l,
            id: op.eval.id.abs(),
            vov: op.eval.vov,
            vds: op.vds,
            gm: op.eval.gm.abs(),
            gds: op.eval.gds,
            vth: op.eval.vth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub device: String,
    #[serde(rename = "type")]
    pub mos_type: MosType,
    pub w: f64,
    pub l: f64,
    pub id: f64,
    pub vov: f64,
    pub vds: f64,
    pub gm: f64,
    pub region: Region,
    /// The four extracted parameters (plus ro) are absent for cut-off devices.
    pub mu_cox: Option<f64>,
    pub agm: Option<f64>,
    pub lambda: Option<f64>,
    pub ro: Option<f64>,
    pub vth: f64,
}

impl CalibrationRecord {
    pub fn is_conducting(&self) -> bool {
        self.mu_cox.is_some()
    }
}

/// muCox = 2 Id L / (W Vov^2), agm = gm Vov / (2 Id), lambda = gds / Id,
/// ro = 1 / gds. Devices with no current or Vov <= 0 get a CUTOFF record
/// without parameters.
pub fn extract_device(name: &str, m: &DeviceMeasurement) -> CalibrationRecord {
    let conducting = m.id > 0.0 && m.vov > 0.0;
    let region = if !conducting {
        Region::Cutoff
    } else if m.vds.abs() < m.vov {
        Region::Triode
    } else {
        Region::Sat
    };
    let (mu_cox, agm, lambda, ro) = if conducting {
        (
            Some(2.0 * m.id * m.l / (m.w * m.vov * m.vov)),
            Some(m.gm * m.vov / (2.0 * m.id)),
            Some(m.gds / m.id),
            (m.gds > 0.0).then(|| 1.0 / m.gds),
        )
    } else {
        (None, None, None, None)
    };
    CalibrationRecord {
        device: name.to_string(),
        mos_type: m.mos_type,
        w: m.w,
        l: m.l,
        id: m.id,
        vov: m.vov,
        vds: m.vds,
        gm: m.gm,
        region,
        mu_cox,
        agm,
        lambda,
        ro,
        vth: m.vth,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub rows: Vec<CalibrationRecord>,
    pub warnings: Vec<String>,
}

impl CalibrationTable {
    pub fn get(&self, device: &str) -> Option<&CalibrationRecord> {
        self.rows.iter().find(|r| r.device == device)
    }

    /// Records keyed by device name, the shape sizing plans read.
    pub fn by_device(&self) -> IndexMap<String, CalibrationRecord> {
        self.rows
            .iter()
            .map(|r| (r.device.clone(), r.clone()))
            .collect()
    }
}

/// One row per MOSFET in operating-point order, with region warnings.
pub fn calibrate(op: &OperatingPoint) -> CalibrationTable {
    let rows = op
        .device_ops
        .iter()
        .map(|(name, d)| extract_device(name, &DeviceMeasurement::from(d)))
        .collect();
    let mut t = CalibrationTable {
        rows,
        warnings: Vec::new(),
    };
    t.warnings = flag_regions(&t);
    t
}

/// One warning per device not in saturation.
pub fn flag_regions(table: &CalibrationTable) -> Vec<String> {
    table
        .rows
        .iter()
        .filter_map(|r| match r.region {
            Region::Sat => None,
            Region::Triode => Some(format!(
                "{} in TRIODE (|Vds|={:.0}mV < Vov={:.0}mV)",
                r.device,
                r.vds.abs() * 1e3,
                r.vov * 1e3
            )),
            Region::Cutoff => Some(format!(
                "{} in CUTOFF (Vov={:.0}mV, Ids={:.3}uA)",
                r.device,
                r.vov * 1e3,
                r.id * 1e6
            )),
        })
        .collect()
}

const HEADER: [&str; 13] = [
    "Dev",
    "Type",
    "W/L(um/um)",
    "Ids(uA)",
    "Vov(mV)",
    "Vds(mV)",
    "gm(uS)",
    "Region",
    "uCox(uA/V^2)",
    "a_gm",
    "lam(1/V)",
    "ro(kOhm)",
    "Vth(mV)",
];

fn opt(v: Option<f64>, scale: f64, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.*}", prec, v * scale))
}

/// Fixed-column text table followed by any warning lines.
pub fn format_table(table: &CalibrationTable) -> String {
    let mut rows: Vec<Vec<String>> = vec![HEADER.iter().map(|s| s.to_string()).collect()];
    for r in &table.rows {
        rows.push(vec![
            r.device.clone(),
            r.mos_type.to_string(),
            format!("{:.1}/{:.2}", r.w * 1e6, r.l * 1e6),
            format!("{:.2}", r.id * 1e6),
            format!("{:.1}", r.vov * 1e3),
            format!("{:.1}", r.vds.abs() * 1e3),
            format!("{:.2}", r.gm * 1e6),
            r.region.to_string(),
            opt(r.mu_cox, 1e6, 1),
            opt(r.agm, 1.0, 3),
            opt(r.lambda, 1.0, 4),
            opt(r.ro, 1e-3, 1),
            format!("{:.1}", r.vth * 1e3),
        ]);
    }
    let widths: Vec<usize> = (0..HEADER.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    if !table.warnings.is_empty() {
        out.push('\n');
        for w in &table.warnings {
            let _ = writeln!(out, "WARNING: {w}");
        }
    }
    out
}
