use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{PlanProvider, ProviderError, ProviderRequest, ProviderResponse};
use crate::calibration::CalibrationRecord;
use crate::device::Region;
use crate::feedback::FeedbackConfig;
use crate::netlist::Netlist;
use crate::plan::{parse_plan, validate_plan};
use crate::prompt::{assemble_round0, assemble_round_n, RuleSet};

/// Blocking POST of a JSON body, returning the response body.
pub trait Transport {
    fn post(&self, url: &str, body: &str, token: Option<&str>) -> Result<String, String>;
}

#[derive(Debug, Clone)]
pub struct UreqTransport {
    pub timeout: Duration,
}

impl Default for UreqTransport {
    fn default() -> Self {
        UreqTransport {
            timeout: Duration::from_secs(600),
        }
    }
}

impl Transport for UreqTransport {
    fn post(&self, url: &str, body: &str, token: Option<&str>) -> Result<String, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    /// Never persisted; supplied from the environment at run time.
    #[serde(skip)]
    pub token: Option<String>,
    pub max_retries: usize,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            token: None,
            max_retries: 2,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

#[derive(Deserialize)]
struct Estimate {
    mu_cox: f64,
    agm: f64,
    lambda: f64,
    vth: f64,
}

/// Body of the first fenced block whose info string is `label`.
pub fn extract_block(text: &str, label: &str) -> Option<String> {
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if line.trim_start().strip_prefix("```").map(str::trim) == Some(label) {
            let mut body = String::new();
            for l in lines.by_ref() {
                if l.trim_start().starts_with("```") {
                    return Some(body);
                }
                body.push_str(l);
                body.push('\n');
            }
            return None;
        }
    }
    None
}

fn parse_estimates(text: &str, net: &Netlist) -> Result<IndexMap<String, CalibrationRecord>, Vec<String>> {
    let raw: IndexMap<String, Estimate> =
        serde_json::from_str(text).map_err(|e| vec![format!("estimates block is not valid JSON: {e}")])?;
    let raw: IndexMap<String, Estimate> = raw.into_iter().map(|(k, v)| (k.to_ascii_uppercase(), v)).collect();
    let mut out = IndexMap::new();
    let mut diags = Vec::new();
    for (name, m) in net.mosfets() {
        let Some(e) = raw.get(name) else {
            diags.push(format!("estimates block has no entry for {name}"));
            continue;
        };
        if !(e.mu_cox > 0.0 && e.agm > 0.0 && e.lambda >= 0.0 && e.vth.is_finite()) {
            diags.push(format!("estimates for {name} must have mu_cox > 0, agm > 0, lambda >= 0"));
            continue;
        }
        out.insert(
            name.to_string(),
            CalibrationRecord {
                device: name.to_string(),
                mos_type: m.mos_type,
                w: m.w,
                l: m.l,
                id: 0.0,
                vov: 0.0,
                vds: 0.0,
                gm: 0.0,
                region: Region::Sat,
                mu_cox: Some(e.mu_cox),
                agm: Some(e.agm),
                lambda: Some(e.lambda),
                ro: None,
                vth: e.vth,
            },
        );
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(diags)
    }
}

/// Provider backed by a model gateway speaking `{prompt}` -> `{text}`.
/// Each request is self-contained; nothing is kept between rounds.
pub struct HttpProvider {
    pub config: HttpConfig,
    pub rules: RuleSet,
    pub feedback: FeedbackConfig,
    transport: Box<dyn Transport>,
}

impl HttpProvider {
    pub fn new(config: HttpConfig, rules: RuleSet, feedback: FeedbackConfig) -> Result<Self, ProviderError> {
        Self::with_transport(config, rules, feedback, Box::new(UreqTransport::default()))
    }

    pub fn with_transport(
        config: HttpConfig,
        rules: RuleSet,
        feedback: FeedbackConfig,
        transport: Box<dyn Transport>,
    ) -> Result<Self, ProviderError> {
        if config.endpoint.trim().is_empty() {
            return Err(ProviderError::Config("http provider needs an endpoint".into()));
        }
        Ok(HttpProvider {
            config,
            rules,
            feedback,
            transport,
        })
    }

    fn check(&self, req: &ProviderRequest, text: &str) -> Result<ProviderResponse, Vec<String>> {
        let plan_text = extract_block(text, "plan").ok_or_else(|| vec!["no fenced `plan` block in the answer".to_string()])?;
        let plan = parse_plan(&plan_text).map_err(|e| vec![e.to_string()])?;
        let diags: Vec<String> = validate_plan(&plan, &req.netlist, &req.design_targets)
            .iter()
            .map(|d| d.to_string())
            .collect();
        if !diags.is_empty() {
            return Err(diags);
        }
        let estimates = if req.round == 0 {
            let block = extract_block(text, "estimates")
                .ok_or_else(|| vec!["no fenced `estimates` block in the round-0 answer".to_string()])?;
            Some(parse_estimates(&block, &req.netlist)?)
        } else {
            None
        };
        Ok(ProviderResponse {
            plan_text,
            estimates,
            prompt: None,
            retries: 0,
        })
    }
}

impl PlanProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn provide(&mut self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let bundle = if req.round == 0 {
            assemble_round0(&req.netlist, &req.targets, &self.rules)?
        } else {
            assemble_round_n(req, &self.rules, &self.feedback)?
        };
        let mut prompt = bundle.text;
        let mut last = Vec::new();
        for attempt in 0..=self.config.max_retries {
            let body = serde_json::to_string(&WireRequest { prompt: &prompt }).expect("string serializes");
            let raw = self
                .transport
                .post(&self.config.endpoint, &body, self.config.token.as_deref())
                .map_err(ProviderError::Network)?;
            let wire: WireResponse =
                serde_json::from_str(&raw).map_err(|e| ProviderError::Network(format!("malformed response: {e}")))?;
            match self.check(req, &wire.text) {
                Ok(mut resp) => {
                    resp.retries = attempt;
                    resp.prompt = Some(prompt);
                    return Ok(resp);
                }
                Err(diags) => {
                    prompt.push_str(&format!("## Previous answer rejected (attempt {})\n", attempt + 1));
                    for d in &diags {
                        prompt.push_str(&format!("- {d}\n"));
                    }
                    prompt.push_str("Fix these problems and answer again in full.\n\n");
                    last = diags;
                }
            }
        }
        Err(ProviderError::Rejected {
            attempts: self.config.max_retries + 1,
            diagnostics: last,
        })
    }
}
