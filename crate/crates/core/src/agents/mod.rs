//! LLM agents: relevance filtering and auditor/critic/consensus verification.
//!
//! Every agent reply must contain a block between `===BEGIN_ASSESSMENT===`
//! and `===END_ASSESSMENT===` lines holding `KEY: value` pairs. A reply that
//! cannot be parsed is re-asked with an explicit correction note, up to
//! [`PARSE_ATTEMPTS`] replies in total.

pub mod curation;
pub mod prompts;
pub mod structured;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{AgentRequest, Gateway, GatewayError};
use crate::model::FunctionPair;
pub use prompts::PromptSet;

pub const PARSE_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Auditor,
    Critic,
    Consensus,
    Relevance,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Auditor => "auditor",
            AgentRole::Critic => "critic",
            AgentRole::Consensus => "consensus",
            AgentRole::Relevance => "relevance",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SecurityFix,
    NotSecurityFix,
    Undetermined,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::SecurityFix => "security_fix",
            Verdict::NotSecurityFix => "not_security_fix",
            Verdict::Undetermined => "undetermined",
        }
    }
}

impl FromStr for Verdict {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().trim_end_matches('.').to_ascii_lowercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "security_fix" => Ok(Verdict::SecurityFix),
            "not_security_fix" | "not_a_security_fix" => Ok(Verdict::NotSecurityFix),
            "undetermined" => Ok(Verdict::Undetermined),
            _ => Err(format!("unknown verdict {s:?}")),
        }
    }
}

/// Structured verdict of one agent role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAssessment {
    pub role: AgentRole,
    pub verdict: Verdict,
    pub evidence: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
}

impl AgentAssessment {
    /// Enforces: score present iff consensus (and ≤ 3); evidence non-empty
    /// for auditor and critic.
    pub fn new(role: AgentRole, verdict: Verdict, evidence: String, score: Option<u8>) -> Result<Self, String> {
        match (role, score) {
            (AgentRole::Consensus, None) => return Err("consensus requires a score".into()),
            (AgentRole::Consensus, Some(s)) if s > 3 => return Err(format!("score {s} outside 0..=3")),
            (AgentRole::Consensus, Some(_)) => {}
            (_, Some(_)) => return Err(format!("{role} assessments carry no score")),
            (_, None) => {}
        }
        if matches!(role, AgentRole::Auditor | AgentRole::Critic) && evidence.trim().is_empty() {
            return Err(format!("{role} evidence is empty"));
        }
        Ok(AgentAssessment {
            role,
            verdict,
            evidence,
            score,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("{role}: unparseable reply after {attempts} attempt(s): {reason}")]
    ParseFailure { role: String, attempts: u32, reason: String },
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl AgentError {
    pub fn is_budget_exceeded(&self) -> bool {
        matches!(self, AgentError::Gateway(GatewayError::BudgetExceeded(_)))
    }
}

/// Sends prompts for one backend and re-asks on unparseable replies.
#[derive(Clone)]
pub struct Asker {
    pub gateway: Arc<Gateway>,
    pub backend: String,
    pub prompts: Arc<PromptSet>,
}

impl Asker {
    pub fn new(gateway: Arc<Gateway>, backend: &str, prompts: Arc<PromptSet>) -> Self {
        Asker {
            gateway,
            backend: backend.to_string(),
            prompts,
        }
    }

    /// The prompt sent on parse round `round` (1-based).
    pub fn prompt_for_round(&self, prompt: &str, round: u32, last_error: &str) -> String {
        if round == 1 {
            return prompt.to_string();
        }
        let note = self.prompts.render(
            "reask",
            &[
                ("error", last_error),
                ("attempt", &round.to_string()),
                ("max_attempts", &PARSE_ATTEMPTS.to_string()),
            ],
        );
        format!("{prompt}{note}")
    }

    pub fn ask<T>(&self, role_id: &str, prompt: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, AgentError> {
        let mut last_error = String::new();
        for round in 1..=PARSE_ATTEMPTS {
            let text = self.prompt_for_round(prompt, round, &last_error);
            let response = self.gateway.complete(&AgentRequest::new(role_id, &self.backend, text))?;
            match parse(&response.text) {
                Ok(v) => return Ok(v),
                Err(e) => last_error = e,
            }
        }
        Err(AgentError::ParseFailure {
            role: role_id.to_string(),
            attempts: PARSE_ATTEMPTS,
            reason: last_error,
        })
    }
}

pub(crate) fn or_none(v: Option<&str>) -> String {
    match v.map(str::trim) {
        Some(s) if !s.is_empty() => s.to_string(),
        _ => "(none)".to_string(),
    }
}

pub(crate) fn cwe_list(pair: &FunctionPair) -> String {
    if pair.cwes.is_empty() {
        "(none)".to_string()
    } else {
        pair.cwes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
    }
}

/// Unified line diff from the vulnerable to the fixed function.
pub fn unified_diff(vuln: &str, fixed: &str) -> String {
    similar::TextDiff::from_lines(vuln, fixed)
        .unified_diff()
        .context_radius(3)
        .header("vulnerable", "fixed")
        .to_string()
}
