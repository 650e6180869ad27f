//! Relevance filtering and the auditor → critic → consensus verification chain.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::structured::{parse_block, parse_yes_no};
use super::{cwe_list, or_none, unified_diff, AgentAssessment, AgentError, AgentRole, Asker, PromptSet, Verdict};
use crate::llm::Gateway;
use crate::model::{FunctionPair, StatusTag};

pub const DEFAULT_THRESHOLD: u8 = 2;
pub const MAX_SCORE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Keep,
    Drop,
}

/// One line of the assessment log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedAssessment {
    pub pair_id: String,
    #[serde(flatten)]
    pub assessment: AgentAssessment,
}

/// A pair whose pipeline stopped on a gateway error other than budget
/// exhaustion. The pair is returned untouched so a later run can retry it.
#[derive(Debug, Clone)]
pub struct PairFailure {
    pub pair: FunctionPair,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOutput {
    pub survivors: Vec<FunctionPair>,
    /// Pairs tagged `rejected` (score below threshold) or `unverifiable`.
    pub rejected: Vec<FunctionPair>,
    pub failures: Vec<PairFailure>,
    pub log: Vec<LoggedAssessment>,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutput {
    pub kept: Vec<FunctionPair>,
    pub dropped: Vec<FunctionPair>,
    pub failures: Vec<PairFailure>,
}

#[derive(Clone)]
pub struct CurationAgents {
    asker: Asker,
}

impl CurationAgents {
    pub fn new(gateway: Arc<Gateway>, backend: &str, prompts: Arc<PromptSet>) -> Self {
        CurationAgents {
            asker: Asker::new(gateway, backend, prompts),
        }
    }

    pub fn backend(&self) -> &str {
        &self.asker.backend
    }

    fn base_vars(pair: &FunctionPair) -> Vec<(&'static str, String)> {
        vec![
            ("source", pair.source().to_string()),
            ("cve", or_none(pair.cve())),
            ("cwes", cwe_list(pair)),
            ("commit_message", or_none(pair.commit_message.as_deref())),
            ("language", pair.language.clone()),
            ("vuln_code", pair.vuln_code().to_string()),
            ("fixed_code", pair.fixed_code().to_string()),
            ("diff", unified_diff(pair.vuln_code(), pair.fixed_code())),
        ]
    }

    fn render(&self, name: &str, vars: &[(&'static str, String)]) -> String {
        let borrowed: Vec<(&str, &str)> = vars.iter().map(|(k, v)| (*k, v.as_str())).collect();
        self.asker.prompts.render(name, &borrowed)
    }

    pub fn relevance_prompt(&self, pair: &FunctionPair) -> String {
        self.render("relevance", &Self::base_vars(pair))
    }

    pub fn audit_prompt(&self, pair: &FunctionPair) -> String {
        self.render("auditor", &Self::base_vars(pair))
    }

    pub fn critique_prompt(&self, pair: &FunctionPair, auditor: &AgentAssessment) -> String {
        let mut vars = Self::base_vars(pair);
        vars.push(("auditor_verdict", auditor.verdict.as_str().to_string()));
        vars.push(("auditor_evidence", auditor.evidence.clone()));
        self.render("critic", &vars)
    }

    pub fn consensus_prompt(&self, pair: &FunctionPair, auditor: &AgentAssessment, critic: &AgentAssessment) -> String {
        let mut vars = Self::base_vars(pair);
        vars.push(("auditor_verdict", auditor.verdict.as_str().to_string()));
        vars.push(("auditor_evidence", auditor.evidence.clone()));
        vars.push(("critic_verdict", critic.verdict.as_str().to_string()));
        vars.push(("critic_evidence", critic.evidence.clone()));
        self.render("consensus", &vars)
    }

    /// Single-pass judgment without touching the pair's status.
    pub fn judge_relevance(&self, pair: &FunctionPair) -> Result<Relevance, AgentError> {
        check_codes(pair)?;
        let prompt = self.relevance_prompt(pair);
        self.asker.ask("relevance", &prompt, parse_relevance)
    }

    /// Judges relevance and records the outcome on the pair: `filtered` on
    /// keep, `rejected` on drop, `unverifiable` (and drop) when the reply never
    /// parses. Only gateway errors are returned as errors.
    pub fn relevance_filter(&self, pair: &mut FunctionPair) -> Result<Relevance, AgentError> {
        match self.judge_relevance(pair) {
            Ok(Relevance::Keep) => {
                pair.mark(StatusTag::Filtered);
                Ok(Relevance::Keep)
            }
            Ok(Relevance::Drop) => {
                pair.mark(StatusTag::Rejected);
                Ok(Relevance::Drop)
            }
            Err(AgentError::ParseFailure { .. }) => {
                pair.mark(StatusTag::Unverifiable);
                Ok(Relevance::Drop)
            }
            Err(e) => Err(e),
        }
    }

    pub fn audit(&self, pair: &FunctionPair) -> Result<AgentAssessment, AgentError> {
        let prompt = self.audit_prompt(pair);
        self.asker.ask("auditor", &prompt, |t| parse_verdict_block(t, AgentRole::Auditor))
    }

    pub fn critique(&self, pair: &FunctionPair, auditor: &AgentAssessment) -> Result<AgentAssessment, AgentError> {
        if auditor.role != AgentRole::Auditor {
            return Err(AgentError::PreconditionViolation(format!(
                "critique needs an auditor assessment, got {}",
                auditor.role
            )));
        }
        let prompt = self.critique_prompt(pair, auditor);
        self.asker.ask("critic", &prompt, |t| parse_verdict_block(t, AgentRole::Critic))
    }

    pub fn consensus(&self, pair: &FunctionPair, prior: &[AgentAssessment]) -> Result<AgentAssessment, AgentError> {
        let pick = |role: AgentRole| -> Result<&AgentAssessment, AgentError> {
            let found: Vec<_> = prior.iter().filter(|a| a.role == role).collect();
            match found.as_slice() {
                [one] => Ok(*one),
                _ => Err(AgentError::PreconditionViolation(format!(
                    "consensus needs exactly one {role} assessment, got {}",
                    found.len()
                ))),
            }
        };
        let auditor = pick(AgentRole::Auditor)?;
        let critic = pick(AgentRole::Critic)?;
        if prior.len() != 2 {
            return Err(AgentError::PreconditionViolation(format!(
                "consensus expects only auditor and critic assessments, got {}",
                prior.len()
            )));
        }
        let prompt = self.consensus_prompt(pair, auditor, critic);
        self.asker.ask("consensus", &prompt, parse_consensus)
    }

    /// Full chain for one pair. Returns every assessment obtained, plus the
    /// error that stopped the chain if any.
    pub fn verify_pair(&self, pair: &FunctionPair) -> (Vec<AgentAssessment>, Result<u8, AgentError>) {
        let mut log = Vec::with_capacity(3);
        let auditor = match self.audit(pair) {
            Ok(a) => a,
            Err(e) => return (log, Err(e)),
        };
        log.push(auditor.clone());
        let critic = match self.critique(pair, &auditor) {
            Ok(c) => c,
            Err(e) => return (log, Err(e)),
        };
        log.push(critic.clone());
        match self.consensus(pair, &[auditor, critic]) {
            Ok(c) => {
                let score = c.score.unwrap_or(0);
                log.push(c);
                (log, Ok(score))
            }
            Err(e) => (log, Err(e)),
        }
    }

    /// Verifies every pair with up to `workers` pipelines in flight. Output
    /// order follows input order regardless of scheduling.
    pub fn verify_corpus(&self, corpus: Vec<FunctionPair>, threshold: u8, workers: usize) -> Result<VerifyOutput, AgentError> {
        if threshold > MAX_SCORE {
            return Err(AgentError::PreconditionViolation(format!(
                "threshold {threshold} outside 0..={MAX_SCORE}"
            )));
        }
        let results = run_pool(workers, || corpus.par_iter().map(|p| self.verify_pair(p)).collect::<Vec<_>>());
        if let Some(e) = results.iter().find_map(|(_, r)| r.as_ref().err().filter(|e| e.is_budget_exceeded())) {
            return Err(e.clone());
        }
        let mut out = VerifyOutput::default();
        for (mut pair, (assessments, result)) in corpus.into_iter().zip(results) {
            out.log.extend(assessments.into_iter().map(|assessment| LoggedAssessment {
                pair_id: pair.id().to_string(),
                assessment,
            }));
            match result {
                Ok(score) if score >= threshold => {
                    pair.mark(StatusTag::Verified);
                    out.survivors.push(pair);
                }
                Ok(_) => {
                    pair.mark(StatusTag::Rejected);
                    out.rejected.push(pair);
                }
                Err(AgentError::ParseFailure { .. }) => {
                    pair.mark(StatusTag::Unverifiable);
                    out.rejected.push(pair);
                }
                Err(e) => out.failures.push(PairFailure {
                    pair,
                    error: e.to_string(),
                }),
            }
        }
        Ok(out)
    }

    /// Relevance filter over a corpus, concurrent like [`Self::verify_corpus`].
    pub fn filter_corpus(&self, corpus: Vec<FunctionPair>, workers: usize) -> Result<FilterOutput, AgentError> {
        let results = run_pool(workers, || {
            corpus
                .par_iter()
                .map(|p| self.judge_relevance(p))
                .collect::<Vec<_>>()
        });
        if let Some(e) = results.iter().find_map(|r| r.as_ref().err().filter(|e| e.is_budget_exceeded())) {
            return Err(e.clone());
        }
        let mut out = FilterOutput::default();
        for (mut pair, result) in corpus.into_iter().zip(results) {
            match result {
                Ok(Relevance::Keep) => {
                    pair.mark(StatusTag::Filtered);
                    out.kept.push(pair);
                }
                Ok(Relevance::Drop) => {
                    pair.mark(StatusTag::Rejected);
                    out.dropped.push(pair);
                }
                Err(AgentError::ParseFailure { .. }) => {
                    pair.mark(StatusTag::Unverifiable);
                    out.dropped.push(pair);
                }
                Err(e) => out.failures.push(PairFailure {
                    pair,
                    error: e.to_string(),
                }),
            }
        }
        Ok(out)
    }
}

fn run_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

fn check_codes(pair: &FunctionPair) -> Result<(), AgentError> {
    if pair.vuln_code().trim().is_empty() || pair.fixed_code().trim().is_empty() {
        return Err(AgentError::PreconditionViolation(format!("pair {} lacks code", pair.id())));
    }
    Ok(())
}

pub fn parse_relevance(text: &str) -> Result<Relevance, String> {
    let fields = parse_block(text)?;
    let security = fields
        .get("SECURITY")
        .ok_or("missing SECURITY")
        .and_then(|v| parse_yes_no(v).ok_or("SECURITY must be yes or no"))?;
    if !security {
        return Ok(Relevance::Drop);
    }
    let contained = fields
        .get("SELF_CONTAINED")
        .ok_or("missing SELF_CONTAINED")
        .and_then(|v| parse_yes_no(v).ok_or("SELF_CONTAINED must be yes or no"))?;
    Ok(if contained { Relevance::Keep } else { Relevance::Drop })
}

pub fn parse_verdict_block(text: &str, role: AgentRole) -> Result<AgentAssessment, String> {
    let fields = parse_block(text)?;
    let verdict: Verdict = fields.get("VERDICT").ok_or("missing VERDICT")?.parse()?;
    let evidence = fields.get("EVIDENCE").cloned().unwrap_or_default();
    AgentAssessment::new(role, verdict, evidence, None)
}

pub fn parse_consensus(text: &str) -> Result<AgentAssessment, String> {
    let fields = parse_block(text)?;
    let raw = fields.get("SCORE").ok_or("missing SCORE")?;
    let score: u8 = raw
        .trim()
        .parse()
        .map_err(|_| format!("SCORE {raw:?} is not an integer in 0..=3"))?;
    let verdict = match fields.get("VERDICT") {
        Some(v) => v.parse()?,
        None => Verdict::Undetermined,
    };
    let evidence = fields.get("EVIDENCE").cloned().unwrap_or_default();
    AgentAssessment::new(AgentRole::Consensus, verdict, evidence, Some(score))
}
