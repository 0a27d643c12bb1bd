use indexmap::IndexMap;

use super::{PlanProvider, ProviderError, ProviderRequest, ProviderResponse};
use crate::calibration::CalibrationRecord;
use crate::device::{ProcessCard, Region};
use crate::netlist::Netlist;
use crate::plan::REFERENCE_2SMC;

/// Round-0 transconductance-efficiency guess for every device.
pub const AGM_ESTIMATE: f64 = 0.7;

/// Topology family from the netlist title: `2SMC_N` -> `2SMC`.
pub fn topology_of(net: &Netlist) -> String {
    let name = net.name.to_ascii_uppercase();
    name.split(['_', '-']).next().unwrap_or_default().to_string()
}

pub fn reference_plan_for(topology: &str) -> Option<&'static str> {
    match topology {
        "2SMC" => Some(REFERENCE_2SMC),
        _ => None,
    }
}

/// Card-derived estimates: muCox = mu0Cox, vth = Vth0, agm fixed,
/// lambda = lambdaL / L, geometry from the netlist. Bias fields are zero.
pub fn round0_estimates(net: &Netlist, card: &ProcessCard) -> IndexMap<String, CalibrationRecord> {
    net.mosfets()
        .map(|(name, m)| {
            let p = card.params(m.mos_type);
            let rec = CalibrationRecord {
                device: name.to_string(),
                mos_type: m.mos_type,
                w: m.w,
                l: m.l,
                id: 0.0,
                vov: 0.0,
                vds: 0.0,
                gm: 0.0,
                region: Region::Sat,
                mu_cox: Some(p.mu0_cox),
                agm: Some(AGM_ESTIMATE),
                lambda: Some(p.lambda(m.l)),
                ro: None,
                vth: p.vth0,
            };
            (name.to_string(), rec)
        })
        .collect()
}

/// Deterministic provider: the shipped reference plan in round 0, the same
/// plan text in every later round.
#[derive(Debug, Clone)]
pub struct StaticProvider {
    card: ProcessCard,
    /// Multiplies every round-0 muCox estimate.
    pub mu_cox_scale: f64,
}

impl StaticProvider {
    pub fn new(card: ProcessCard) -> Self {
        StaticProvider {
            card,
            mu_cox_scale: 1.0,
        }
    }

    pub fn round0(&self, net: &Netlist) -> Result<ProviderResponse, ProviderError> {
        let topology = topology_of(net);
        let plan = reference_plan_for(&topology).ok_or(ProviderError::NoReferencePlan { topology })?;
        let mut estimates = round0_estimates(net, &self.card);
        for r in estimates.values_mut() {
            r.mu_cox = r.mu_cox.map(|v| v * self.mu_cox_scale);
        }
        Ok(ProviderResponse {
            plan_text: plan.to_string(),
            estimates: Some(estimates),
            prompt: None,
            retries: 0,
        })
    }

    pub fn round_n(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        if req.round == 0 {
            return Err(ProviderError::Precondition("round-N request with round index 0".into()));
        }
        let plan = req
            .previous_plan
            .clone()
            .ok_or_else(|| ProviderError::Precondition("round-N request without a previous plan".into()))?;
        Ok(ProviderResponse {
            plan_text: plan,
            estimates: None,
            prompt: None,
            retries: 0,
        })
    }
}

impl PlanProvider for StaticProvider {
    fn name(&self) -> &str {
        "static"
    }

    fn provide(&mut self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        if req.round == 0 {
            self.round0(&req.netlist)
        } else {
            self.round_n(req)
        }
    }
}
