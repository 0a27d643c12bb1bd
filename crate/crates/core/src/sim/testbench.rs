//! Unity-gain testbench around an op-amp netlist with ports INP/INN/OUT.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ac::{ac_sweep, loop_metrics, AcRequest, FrequencyResponse, Sweep};
use super::dc::dc_operating_point_with;
use super::tran::{max_slope_in_band, transient, SourceStep};
use super::{MetricSet, OperatingPoint, SimError};
use crate::device::ProcessCard;
use crate::netlist::{Instance, InstanceKind, Netlist, GROUND};

pub const CM_SOURCE: &str = "VTB_CM";
pub const FB_SOURCE: &str = "VTB_FB";
pub const AC_SOURCE: &str = "VTB_AC";
const TB_PREFIX: &str = "VTB_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbenchConfig {
    pub inp: String,
    pub inn: String,
    pub out: String,
    /// Input common mode; mid-rail when unset.
    pub vcm: Option<f64>,
    /// Transient step; 0.4 (Vdd - Vss) when unset.
    pub step_amplitude: Option<f64>,
    pub sweep: Sweep,
    /// Sets the transient timestep and horizon.
    pub gbw_target: f64,
    pub steps_per_period: f64,
    pub horizon_periods: f64,
}

impl Default for TestbenchConfig {
    fn default() -> Self {
        TestbenchConfig {
            inp: "INP".into(),
            inn: "INN".into(),
            out: "OUT".into(),
            vcm: None,
            step_amplitude: None,
            sweep: Sweep::default(),
            gbw_target: 100e6,
            steps_per_period: 200.0,
            horizon_periods: 50.0,
        }
    }
}

/// (lowest, highest) rail voltage, ground included.
fn rails(net: &Netlist) -> (f64, f64) {
    net.supplies()
        .iter()
        .filter(|(n, _)| !n.starts_with(TB_PREFIX))
        .fold((0.0_f64, 0.0_f64), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)))
}

impl TestbenchConfig {
    pub fn vcm_for(&self, net: &Netlist) -> f64 {
        self.vcm.unwrap_or_else(|| {
            let (lo, hi) = rails(net);
            0.5 * (lo + hi)
        })
    }

    pub fn amplitude_for(&self, net: &Netlist) -> f64 {
        self.step_amplitude.unwrap_or_else(|| {
            let (lo, hi) = rails(net);
            0.4 * (hi - lo)
        })
    }
}

fn vsrc(name: &str, pos: &str, neg: &str, volts: f64) -> Instance {
    Instance {
        name: name.into(),
        kind: InstanceKind::VoltageSource {
            pos: pos.into(),
            neg: neg.into(),
            volts,
        },
    }
}

fn port_check(net: &Netlist, cfg: &TestbenchConfig) -> Result<(), SimError> {
    for p in [&cfg.inp, &cfg.inn, &cfg.out] {
        if !net.has_node(p) {
            return Err(SimError::MissingNode(p.to_ascii_uppercase()));
        }
    }
    Ok(())
}

/// Adds the common-mode source on the non-inverting input and the 0 V
/// feedback source tying OUT to the inverting input.
pub fn unity_gain_netlist(net: &Netlist, cfg: &TestbenchConfig) -> Result<Netlist, SimError> {
    port_check(net, cfg)?;
    let mut tb = net.clone();
    let (inp, inn, out) = (
        cfg.inp.to_ascii_uppercase(),
        cfg.inn.to_ascii_uppercase(),
        cfg.out.to_ascii_uppercase(),
    );
    tb.push(vsrc(CM_SOURCE, &inp, GROUND, cfg.vcm_for(net)))
        .and_then(|_| tb.push(vsrc(FB_SOURCE, &out, &inn, 0.0)))
        .map_err(|e| SimError::Invalid(e.to_string()))?;
    Ok(tb)
}

/// Loop gain with the loop opened at the inverting input. `tb` is the
/// unity-gain netlist and `op` its operating point.
pub fn ac_loop_metrics(
    tb: &Netlist,
    op: &OperatingPoint,
    cfg: &TestbenchConfig,
) -> Result<(MetricSet, FrequencyResponse), SimError> {
    let inn = cfg.inn.to_ascii_uppercase();
    let out = cfg.out.to_ascii_uppercase();
    let mut open = tb.clone();
    open.remove(FB_SOURCE)
        .ok_or_else(|| SimError::MissingSource(FB_SOURCE.into()))?;
    open.push(vsrc(AC_SOURCE, &inn, GROUND, 0.0))
        .map_err(|e| SimError::Invalid(e.to_string()))?;
    let gate_cap_node: HashMap<String, String> = open
        .mosfets()
        .filter(|(_, m)| m.gate == inn)
        .map(|(n, _)| (n.to_string(), out.clone()))
        .collect();
    let req = AcRequest {
        stimulus: AC_SOURCE.into(),
        output: out,
        invert: true,
        gate_cap_node,
        sweep: cfg.sweep,
    };
    let resp = ac_sweep(&open, op, &req)?;
    let m = loop_metrics(&resp)?;
    Ok((
        MetricSet {
            av_db: Some(m.av_db),
            gbw_hz: Some(m.gbw_hz),
            pm_deg: Some(m.pm_deg),
            ..MetricSet::default()
        },
        resp,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlewResult {
    pub sr_pos: f64,
    pub sr_neg: f64,
    /// Set when the step amplitude is zero and both slopes are reported as 0.
    pub degenerate: bool,
    pub amplitude: f64,
}

/// Rising and falling large-signal steps on the common-mode input of the
/// unity-gain buffer built from `net`.
pub fn transient_slew(
    net: &Netlist,
    card: &ProcessCard,
    cfg: &TestbenchConfig,
) -> Result<SlewResult, SimError> {
    let tb = unity_gain_netlist(net, cfg)?;
    let vcm = cfg.vcm_for(net);
    let a = cfg.amplitude_for(net);
    if a == 0.0 {
        return Ok(SlewResult {
            sr_pos: 0.0,
            sr_neg: 0.0,
            degenerate: true,
            amplitude: 0.0,
        });
    }
    let dt = 1.0 / (cfg.gbw_target * cfg.steps_per_period);
    let t_stop = cfg.horizon_periods / cfg.gbw_target;
    let (lo, hi) = (vcm - 0.5 * a, vcm + 0.5 * a);
    let slope = |from: f64, to: f64| -> Result<f64, SimError> {
        let end = dc_operating_point_with(
            &tb,
            card,
            &HashMap::from([(CM_SOURCE.to_string(), to)]),
            None,
        )?;
        let step = SourceStep {
            source: CM_SOURCE.into(),
            before: from,
            after: to,
        };
        let (w, start) = transient(&tb, card, &[step], &cfg.out, dt, t_stop)?;
        let v0 = start.voltage(&cfg.out).unwrap_or(0.0);
        let v1 = end.voltage(&cfg.out).unwrap_or(0.0);
        Ok(max_slope_in_band(&w, v0, v1))
    };
    Ok(SlewResult {
        sr_pos: slope(lo, hi)?,
        sr_neg: slope(hi, lo)?,
        degenerate: false,
        amplitude: a,
    })
}

/// Power drawn from the rail sources: sum of V * I over grounded voltage
/// sources, testbench sources excluded.
pub fn power(op: &OperatingPoint, net: &Netlist) -> f64 {
    net.supplies()
        .keys()
        .filter(|n| !n.starts_with(TB_PREFIX))
        .map(|n| {
            let i = op.supply_currents.get(n).copied().unwrap_or(0.0);
            let v = op.source_voltages.get(n).copied().unwrap_or(0.0);
            v * i
        })
        .sum()
}

/// Full measurement of an op-amp netlist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Operating point of the unity-gain testbench.
    pub op: OperatingPoint,
    pub metrics: MetricSet,
    pub slew: SlewResult,
    /// Set when the loop gain never reached unity; GBW and PM are absent.
    pub no_crossing: Option<String>,
    #[serde(skip)]
    pub response: Option<FrequencyResponse>,
}

pub fn measure(net: &Netlist, card: &ProcessCard, cfg: &TestbenchConfig) -> Result<Measurement, SimError> {
    let tb = unity_gain_netlist(net, cfg)?;
    let op = dc_operating_point_with(&tb, card, &HashMap::new(), None)?;
    let (mut metrics, response, no_crossing) = match ac_loop_metrics(&tb, &op, cfg) {
        Ok((m, r)) => (m, Some(r), None),
        Err(e @ SimError::NoCrossing { start_db, .. }) => (
            MetricSet {
                av_db: Some(start_db),
                ..MetricSet::default()
            },
            None,
            Some(e.to_string()),
        ),
        Err(e) => return Err(e),
    };
    let slew = transient_slew(net, card, cfg)?;
    metrics.sr_pos = Some(slew.sr_pos);
    metrics.sr_neg = Some(slew.sr_neg);
    metrics.power_w = Some(power(&op, &tb));
    Ok(Measurement {
        op,
        metrics,
        slew,
        no_crossing,
        response,
    })
}
