//! Built-in MOSFET model.
//!
//! Square law with mobility degradation, channel-length modulation and body
//! effect:
//!
//! ```text
//! sat:    Id = 1/2 * k'/(1 + theta*Vov) * (W/L) * Vov^2 * (1 + lambda*Vds)
//! triode: Id = k'/(1 + theta*Vov) * (W/L) * (Vov*Vds - Vds^2/2) * (1 + lambda*Vds)
//! Vth = Vth0 + gamma*(sqrt(2phiF + Vsb) - sqrt(2phiF)),  lambda = lambdaL / L
//! ```
//!
//! The current is C1-continuous at Vds = Vov. All conductances are exact
//! partial derivatives of the implemented current.

use serde::{Deserialize, Serialize};

use crate::netlist::MosType;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Low-field transconductance factor, A/V^2.
    pub mu0_cox: f64,
    pub vth0: f64,
    /// Body-effect coefficient, V^0.5.
    pub gamma: f64,
    /// Twice the Fermi potential, V.
    pub phi_f2: f64,
    /// Mobility degradation, 1/V.
    pub theta: f64,
    /// lambda * L product, m/V.
    pub lambda_l: f64,
    /// Gate oxide capacitance per area, F/m^2.
    pub cox_area: f64,
    /// Overlap capacitance per width, F/m.
    pub covl: f64,
    /// Junction capacitance per area, F/m^2.
    pub cj: f64,
    /// Drain/source diffusion extent, m.
    pub ldrain: f64,
}

impl DeviceParams {
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.mu0_cox > 0.0, "mu0cox must be > 0"),
            (self.theta >= 0.0, "theta must be >= 0"),
            (self.lambda_l >= 0.0, "lambdal must be >= 0"),
            (self.cox_area >= 0.0, "cox must be >= 0"),
            (self.covl >= 0.0, "covl must be >= 0"),
            (self.cj >= 0.0, "cj must be >= 0"),
            (self.ldrain >= 0.0, "ldrain must be >= 0"),
            (self.phi_f2 > 0.0, "phif2 must be > 0"),
            (self.gamma >= 0.0, "gamma must be >= 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(msg.to_string());
            }
        }
        Ok(())
    }

    pub fn lambda(&self, l: f64) -> f64 {
        self.lambda_l / l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessCard {
    pub name: String,
    pub nmos: DeviceParams,
    pub pmos: DeviceParams,
}

impl ProcessCard {
    /// The shipped 180 nm-like toy card. Configuration defaults, nothing more.
    pub fn t180_toy() -> Self {
        ProcessCard {
            name: "T180-toy".to_string(),
            nmos: DeviceParams {
                mu0_cox: 300e-6,
                vth0: 0.45,
                gamma: 0.45,
                phi_f2: 0.8,
                theta: 1.5,
                lambda_l: 0.04e-6,
                cox_area: 8.5e-3,
                covl: 0.35e-9,
                cj: 1.0e-3,
                ldrain: 0.5e-6,
            },
            pmos: DeviceParams {
                mu0_cox: 80e-6,
                vth0: 0.45,
                gamma: 0.4,
                phi_f2: 0.8,
                theta: 1.0,
                lambda_l: 0.05e-6,
                cox_area: 8.5e-3,
                covl: 0.35e-9,
                cj: 1.1e-3,
                ldrain: 0.5e-6,
            },
        }
    }

    pub fn params(&self, t: MosType) -> &DeviceParams {
        match t {
            MosType::Nmos => &self.nmos,
            MosType::Pmos => &self.pmos,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.nmos.validate().map_err(|e| format!("nmos: {e}"))?;
        self.pmos.validate().map_err(|e| format!("pmos: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "CUTOFF")]
    Cutoff,
    #[serde(rename = "TRIODE")]
    Triode,
    #[serde(rename = "SAT")]
    Sat,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Region::Cutoff => "CUTOFF",
            Region::Triode => "TRIODE",
            Region::Sat => "SAT",
        })
    }
}

/// Device evaluation at one bias point.
///
/// Voltages (`vth`, `vov`) and `id` are in the polarity-normalised frame:
/// positive for a conducting device of either type. `gm`, `gds` and `gmb`
/// are the partials of the terminal drain current with respect to
/// `Vgs`, `Vds` and `Vbs`; they are identical in both frames. Capacitances
/// are referred to the physical terminals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceEval {
    pub id: f64,
    pub gm: f64,
    pub gds: f64,
    pub gmb: f64,
    pub vth: f64,
    pub vov: f64,
    pub region: Region,
    pub cgs: f64,
    pub cgd: f64,
    pub cdb: f64,
    pub csb: f64,
    /// Drain and source exchanged roles (normalised Vds < 0).
    pub reversed: bool,
}

impl DeviceEval {
    /// Current flowing into the drain terminal, signed.
    pub fn drain_current(&self, t: MosType) -> f64 {
        t.sign() * self.id
    }
}

/// Body-effect threshold and dVth/dVsb. Below a small fraction of phiF2 the
/// square root is continued linearly so forward bulk bias stays finite.
fn threshold(p: &DeviceParams, vsb: f64) -> (f64, f64) {
    let s_min = 0.05 * p.phi_f2;
    let s = p.phi_f2 + vsb;
    let (root, droot) = if s >= s_min {
        (s.sqrt(), 0.5 / s.sqrt())
    } else {
        let r = s_min.sqrt();
        (r + (s - s_min) * 0.5 / r, 0.5 / r)
    };
    (
        p.vth0 + p.gamma * (root - p.phi_f2.sqrt()),
        p.gamma * droot,
    )
}

struct Forward {
    id: f64,
    gm: f64,
    gds: f64,
    gmb: f64,
    vth: f64,
    vov: f64,
    region: Region,
}

/// NMOS-frame evaluation with vds >= 0.
fn forward(p: &DeviceParams, w: f64, l: f64, vgs: f64, vds: f64, vsb: f64) -> Forward {
    let (vth, dvth) = threshold(p, vsb);
    let vov = vgs - vth;
    if vov <= 0.0 {
        return Forward {
            id: 0.0,
            gm: 0.0,
            gds: 0.0,
            gmb: 0.0,
            vth,
            vov,
            region: Region::Cutoff,
        };
    }
    let beta = p.mu0_cox * w / l;
    let lambda = p.lambda(l);
    let d = 1.0 + p.theta * vov;
    let m = 1.0 + lambda * vds;
    let (id, gm, gds, region) = if vds >= vov {
        let core = 0.5 * beta * vov * vov / d;
        let dcore = beta * vov * (2.0 + p.theta * vov) / (2.0 * d * d);
        (core * m, dcore * m, core * lambda, Region::Sat)
    } else {
        let q = vov * vds - 0.5 * vds * vds;
        let core = beta * q / d;
        let dcore_dvov = beta * (vds / d - p.theta * q / (d * d));
        let dcore_dvds = beta * (vov - vds) / d;
        (
            core * m,
            dcore_dvov * m,
            dcore_dvds * m + core * lambda,
            Region::Triode,
        )
    };
    Forward {
        id,
        gm,
        gds,
        gmb: gm * dvth,
        vth,
        vov,
        region,
    }
}

/// Evaluate a MOSFET. Terminal voltages are physical (PMOS Vgs is negative
/// when the device is on).
pub fn eval_mosfet(
    card: &ProcessCard,
    t: MosType,
    w: f64,
    l: f64,
    vgs: f64,
    vds: f64,
    vsb: f64,
) -> DeviceEval {
    let p = card.params(t);
    let s = t.sign();
    let (vgs, vds, vsb) = (s * vgs, s * vds, s * vsb);

    let reversed = vds < 0.0;
    let (id, gm, gds, gmb, f) = if !reversed {
        let f = forward(p, w, l, vgs, vds, vsb);
        (f.id, f.gm, f.gds, f.gmb, f)
    } else {
        // drain acts as source: Id(vgs, vds, vbs) = -F(vgs - vds, -vds, vbs - vds)
        let f = forward(p, w, l, vgs - vds, -vds, vsb + vds);
        (-f.id, -f.gm, f.gm + f.gds + f.gmb, -f.gmb, f)
    };

    let cwl = w * l * p.cox_area;
    let cov = p.covl * w;
    let (c_src, c_drn) = match f.region {
        Region::Sat => (2.0 / 3.0 * cwl + cov, cov),
        Region::Triode => (0.5 * cwl + cov, 0.5 * cwl + cov),
        Region::Cutoff => (cov, cov),
    };
    let cj = p.cj * w * p.ldrain;
    let (cgs, cgd) = if reversed { (c_drn, c_src) } else { (c_src, c_drn) };

    DeviceEval {
        id,
        gm,
        gds,
        gmb,
        vth: f.vth,
        vov: f.vov,
        region: f.region,
        cgs,
        cgd,
        cdb: cj,
        csb: cj,
        reversed,
    }
}
