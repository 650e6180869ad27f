//! Scenario-driven synthesis of vulnerable/fixed function pairs.
//!
//! Four roles run in sequence on the synthesis backend (context modeler,
//! vulnerable implementer, auditor/fixer, reviewer) and a fifth judgment comes
//! from a distinct validator backend. A sample is accepted only when both the
//! reviewer and the validator approve.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::structured::{first_code_block, parse_block, parse_yes_no};
use crate::agents::{AgentError, Asker, PromptSet};
use crate::llm::Gateway;
use crate::model::{normalize_code, CweId, FunctionPair, ModelError, PairFields, Provenance, StatusTag};
use crate::report::Top25;

/// Most recent contexts shown to the modeler; uniqueness is still checked
/// against the whole history.
pub const HISTORY_WINDOW: usize = 50;
/// Context generations per `model_context` call before giving up.
pub const CONTEXT_ATTEMPTS: u32 = 3;
/// Full-chain attempts per requested sample.
pub const SAMPLE_ATTEMPTS: u32 = 3;
pub const SYNTH_SOURCE: &str = "rvg";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RvgError {
    #[error("no fresh scenario for {cwe} after {attempts} attempts")]
    UniquenessExhausted { cwe: CweId, attempts: u32 },
    #[error("remediation is identical to the vulnerable code")]
    RemediationIdentical,
    #[error("validator backend {0:?} is the synthesis backend")]
    SameBackend(String),
    #[error("invalid scenario context: {0}")]
    InvalidContext(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl RvgError {
    pub fn is_budget_exceeded(&self) -> bool {
        matches!(self, RvgError::Agent(e) if e.is_budget_exceeded())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioContext {
    pub cwe: CweId,
    pub language: String,
    pub tech_stack: String,
    pub user_roles: Vec<String>,
    pub functionality: String,
    pub attack_vector: String,
}

impl ScenarioContext {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("language", &self.language),
            ("tech_stack", &self.tech_stack),
            ("functionality", &self.functionality),
            ("attack_vector", &self.attack_vector),
        ];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(format!("{name} is empty"));
            }
        }
        if self.user_roles.is_empty() || self.user_roles.iter().any(|r| r.trim().is_empty()) {
            return Err("user_roles is empty".into());
        }
        Ok(())
    }

    /// The tuple that must not repeat within a run.
    pub fn uniqueness_key(&self) -> (&str, &str, &str) {
        (&self.language, &self.tech_stack, &self.functionality)
    }

    fn history_line(&self) -> String {
        format!("- {} | {} | {}", self.language, self.tech_stack, self.functionality)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Review {
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisOutcome {
    /// Absent only when no context could be produced at all.
    pub context: Option<ScenarioContext>,
    pub pair: Option<FunctionPair>,
    pub attempts: u32,
    pub failure_reason: Option<String>,
}

impl SynthesisOutcome {
    pub fn accepted(&self) -> bool {
        self.pair.is_some()
    }
}

#[derive(Clone)]
pub struct Synthesizer {
    asker: Asker,
    top25: Arc<Top25>,
}

impl Synthesizer {
    pub fn new(gateway: Arc<Gateway>, synth_backend: &str, prompts: Arc<PromptSet>) -> Self {
        Synthesizer {
            asker: Asker::new(gateway, synth_backend, prompts),
            top25: Arc::new(Top25::default_2024()),
        }
    }

    pub fn with_top25(mut self, top25: Top25) -> Self {
        self.top25 = Arc::new(top25);
        self
    }

    pub fn synth_backend(&self) -> &str {
        &self.asker.backend
    }

    fn cwe_name(&self, cwe: CweId) -> String {
        self.top25.name(cwe).unwrap_or("").to_string()
    }

    fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        self.asker.prompts.render(name, vars)
    }

    /// Modeler prompt for one generation. `avoid` lists tuples rejected
    /// earlier in the same call.
    pub fn modeler_prompt(&self, cwe: CweId, history: &[ScenarioContext], avoid: &[ScenarioContext]) -> String {
        let start = history.len().saturating_sub(HISTORY_WINDOW);
        let window: Vec<String> = history[start..].iter().map(ScenarioContext::history_line).collect();
        let window = if window.is_empty() { "(none)".to_string() } else { window.join("\n") };
        let mut avoid_text = String::new();
        if !avoid.is_empty() {
            avoid_text.push_str("These were already used and must not be repeated:\n");
            for c in avoid {
                let _ = writeln!(avoid_text, "{}", c.history_line());
            }
        }
        self.render(
            "modeler",
            &[
                ("cwe", &cwe.to_string()),
                ("cwe_name", &self.cwe_name(cwe)),
                ("history", &window),
                ("avoid", &avoid_text),
            ],
        )
    }

    pub fn model_context(&self, cwe: CweId, history: &[ScenarioContext]) -> Result<ScenarioContext, RvgError> {
        let mut avoid = Vec::new();
        for _ in 0..CONTEXT_ATTEMPTS {
            let prompt = self.modeler_prompt(cwe, history, &avoid);
            let ctx = self.asker.ask("modeler", &prompt, |t| parse_context(t, cwe))?;
            let key = ctx.uniqueness_key();
            if history.iter().all(|h| h.uniqueness_key() != key) {
                return Ok(ctx);
            }
            tracing::debug!(%cwe, ?key, "scenario collides with history");
            avoid.push(ctx);
        }
        Err(RvgError::UniquenessExhausted {
            cwe,
            attempts: CONTEXT_ATTEMPTS,
        })
    }

    pub fn implementer_prompt(&self, ctx: &ScenarioContext) -> String {
        self.render(
            "implementer",
            &[
                ("cwe", &ctx.cwe.to_string()),
                ("cwe_name", &self.cwe_name(ctx.cwe)),
                ("language", &ctx.language),
                ("tech_stack", &ctx.tech_stack),
                ("user_roles", &ctx.user_roles.join(", ")),
                ("functionality", &ctx.functionality),
                ("attack_vector", &ctx.attack_vector),
            ],
        )
    }

    pub fn implement_vulnerable(&self, ctx: &ScenarioContext) -> Result<String, RvgError> {
        ctx.validate().map_err(RvgError::InvalidContext)?;
        let prompt = self.implementer_prompt(ctx);
        Ok(self.asker.ask("implementer", &prompt, parse_code)?)
    }

    pub fn fixer_prompt(&self, vuln_code: &str, ctx: &ScenarioContext) -> String {
        self.render(
            "fixer",
            &[
                ("language", &ctx.language),
                ("tech_stack", &ctx.tech_stack),
                ("functionality", &ctx.functionality),
                ("vuln_code", vuln_code),
            ],
        )
    }

    /// Remediated version of `vuln_code`. A remediation that normalizes to the
    /// same text as the input is refused.
    pub fn audit_and_fix(&self, vuln_code: &str, ctx: &ScenarioContext) -> Result<String, RvgError> {
        ctx.validate().map_err(RvgError::InvalidContext)?;
        let prompt = self.fixer_prompt(vuln_code, ctx);
        let fixed = self.asker.ask("fixer", &prompt, parse_code)?;
        if normalize_code(&fixed) == normalize_code(vuln_code) {
            return Err(RvgError::RemediationIdentical);
        }
        Ok(fixed)
    }

    pub fn reviewer_prompt(&self, vuln: &str, fixed: &str, cwe: CweId, language: &str) -> String {
        self.render(
            "reviewer",
            &[
                ("cwe", &cwe.to_string()),
                ("cwe_name", &self.cwe_name(cwe)),
                ("language", language),
                ("vuln_code", vuln),
                ("fixed_code", fixed),
            ],
        )
    }

    fn judge(&self, asker: &Asker, role_id: &str, vuln: &str, fixed: &str, cwe: CweId, language: &str) -> Result<Review, RvgError> {
        let prompt = self.reviewer_prompt(vuln, fixed, cwe, language);
        match asker.ask(role_id, &prompt, parse_review) {
            Ok(r) => Ok(r),
            Err(AgentError::ParseFailure { .. }) => Ok(Review::Rejected),
            Err(e) => Err(e.into()),
        }
    }

    /// Approved only when the weakness is present in `vuln` and mitigated in
    /// `fixed`. Unparseable replies count as a rejection.
    pub fn review_remediation(&self, vuln: &str, fixed: &str, cwe: CweId, language: &str) -> Result<Review, RvgError> {
        self.judge(&self.asker, "reviewer", vuln, fixed, cwe, language)
    }

    /// The same judgment on an independent backend.
    pub fn cross_validate(&self, pair: &FunctionPair, validator_backend: &str) -> Result<Review, RvgError> {
        if validator_backend == self.asker.backend {
            return Err(RvgError::SameBackend(validator_backend.to_string()));
        }
        let cwe = pair
            .primary_cwe()
            .ok_or_else(|| RvgError::InvalidRequest(format!("pair {} has no CWE", pair.id())))?;
        let validator = Asker::new(self.asker.gateway.clone(), validator_backend, self.asker.prompts.clone());
        self.judge(&validator, "validator", pair.vuln_code(), pair.fixed_code(), cwe, &pair.language)
    }

    fn attempt_sample(
        &self,
        cwe: CweId,
        validator_backend: &str,
        history: &mut Vec<ScenarioContext>,
        context: &mut Option<ScenarioContext>,
    ) -> Result<FunctionPair, RvgError> {
        let ctx = self.model_context(cwe, history)?;
        history.push(ctx.clone());
        *context = Some(ctx.clone());
        let vuln = self.implement_vulnerable(&ctx)?;
        let fixed = self.audit_and_fix(&vuln, &ctx)?;
        if self.review_remediation(&vuln, &fixed, cwe, &ctx.language)? == Review::Rejected {
            return Err(RvgError::InvalidRequest("reviewer rejected the remediation".into()));
        }
        let mut pair = FunctionPair::new(PairFields {
            source: SYNTH_SOURCE.to_string(),
            cve: None,
            cwes: vec![cwe],
            language: ctx.language.to_ascii_lowercase(),
            commit_message: Some(commit_message(&ctx, &self.cwe_name(cwe))),
            vuln_code: vuln,
            fixed_code: fixed,
            provenance: Provenance::Synthesized,
        })?;
        if self.cross_validate(&pair, validator_backend)? == Review::Rejected {
            return Err(RvgError::InvalidRequest("validator rejected the pair".into()));
        }
        pair.mark(StatusTag::Verified);
        Ok(pair)
    }

    /// Generates `n` samples for `cwe`, sequentially, extending `history` with
    /// every context produced. Only budget exhaustion aborts the run; any other
    /// failure is recorded on its outcome after [`SAMPLE_ATTEMPTS`] tries.
    pub fn synthesize(
        &self,
        cwe: CweId,
        n: usize,
        validator_backend: &str,
        history: &mut Vec<ScenarioContext>,
    ) -> Result<Vec<SynthesisOutcome>, RvgError> {
        if n == 0 {
            return Err(RvgError::InvalidRequest("n must be at least 1".into()));
        }
        if validator_backend == self.asker.backend {
            return Err(RvgError::SameBackend(validator_backend.to_string()));
        }
        let mut outcomes = Vec::with_capacity(n);
        for _ in 0..n {
            let mut context = None;
            let mut outcome = None;
            let mut last_reason = String::new();
            for attempt in 1..=SAMPLE_ATTEMPTS {
                match self.attempt_sample(cwe, validator_backend, history, &mut context) {
                    Ok(pair) => {
                        outcome = Some(SynthesisOutcome {
                            context: context.clone(),
                            pair: Some(pair),
                            attempts: attempt,
                            failure_reason: None,
                        });
                        break;
                    }
                    Err(e) if e.is_budget_exceeded() => return Err(e),
                    Err(e) => {
                        tracing::info!(%cwe, attempt, error = %e, "synthesis attempt failed");
                        last_reason = e.to_string();
                    }
                }
            }
            outcomes.push(outcome.unwrap_or(SynthesisOutcome {
                context,
                pair: None,
                attempts: SAMPLE_ATTEMPTS,
                failure_reason: Some(last_reason),
            }));
        }
        Ok(outcomes)
    }

    /// Runs [`Self::synthesize`] for several `(cwe, n)` requests concurrently,
    /// each with its own history. Results follow the order of `requests`.
    pub fn synthesize_many(
        &self,
        requests: &[(CweId, usize)],
        validator_backend: &str,
        workers: usize,
    ) -> Result<Vec<(CweId, Vec<SynthesisOutcome>)>, RvgError> {
        let job = || {
            requests
                .par_iter()
                .map(|&(cwe, n)| {
                    let mut history = Vec::new();
                    self.synthesize(cwe, n, validator_backend, &mut history).map(|o| (cwe, o))
                })
                .collect::<Vec<_>>()
        };
        let results = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            Ok(pool) => pool.install(job),
            Err(_) => job(),
        };
        results.into_iter().collect()
    }
}

fn commit_message(ctx: &ScenarioContext, cwe_name: &str) -> String {
    let name = if cwe_name.is_empty() { String::new() } else { format!(" ({cwe_name})") };
    format!(
        "Fix {}{} in {} ({})",
        ctx.cwe, name, ctx.functionality, ctx.tech_stack
    )
}

pub fn parse_context(text: &str, cwe: CweId) -> Result<ScenarioContext, String> {
    let fields = parse_block(text)?;
    let get = |k: &str| -> Result<String, String> {
        fields
            .get(k)
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| format!("missing or empty {k}"))
    };
    let ctx = ScenarioContext {
        cwe,
        language: get("LANGUAGE")?,
        tech_stack: get("TECH_STACK")?,
        user_roles: get("USER_ROLES")?
            .split([',', '\n'])
            .map(|r| r.trim().to_string())
            .filter(|r| !r.is_empty())
            .collect(),
        functionality: get("FUNCTIONALITY")?,
        attack_vector: get("ATTACK_VECTOR")?,
    };
    ctx.validate()?;
    Ok(ctx)
}

fn parse_code(text: &str) -> Result<String, String> {
    match first_code_block(text) {
        Some(code) if !code.trim().is_empty() => Ok(code),
        Some(_) => Err("fenced code block is empty".into()),
        None => Err("no fenced code block".into()),
    }
}

pub fn parse_review(text: &str) -> Result<Review, String> {
    let fields = parse_block(text)?;
    let flag = |k: &str| -> Result<bool, String> {
        let v = fields.get(k).ok_or_else(|| format!("missing {k}"))?;
        parse_yes_no(v).ok_or_else(|| format!("{k} must be yes or no"))
    };
    Ok(if flag("PRESENT")? && flag("MITIGATED")? {
        Review::Approved
    } else {
        Review::Rejected
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisReportRow {
    pub cwe: CweId,
    pub requested: usize,
    pub accepted: usize,
    pub failed: usize,
    pub mean_attempts: f64,
}

pub fn synthesis_report(runs: &[(CweId, Vec<SynthesisOutcome>)]) -> Vec<SynthesisReportRow> {
    runs.iter()
        .map(|(cwe, outcomes)| {
            let accepted = outcomes.iter().filter(|o| o.accepted()).count();
            let total: u32 = outcomes.iter().map(|o| o.attempts).sum();
            SynthesisReportRow {
                cwe: *cwe,
                requested: outcomes.len(),
                accepted,
                failed: outcomes.len() - accepted,
                mean_attempts: if outcomes.is_empty() { 0.0 } else { f64::from(total) / outcomes.len() as f64 },
            }
        })
        .collect()
}

pub fn synthesis_report_csv(rows: &[SynthesisReportRow]) -> String {
    let mut out = String::from("cwe,requested,accepted,failed,mean_attempts\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{:.2}", r.cwe, r.requested, r.accepted, r.failed, r.mean_attempts);
    }
    out
}
