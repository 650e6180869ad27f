//! Run configuration: one JSON document shared by all stages. Relative paths
//! resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::curation::DEFAULT_THRESHOLD;
use crate::benchmark::{DEFAULT_QUOTA, DEFAULT_RATIOS};
use crate::llm::{BackendSpec, Gateway, GatewayConfig, Transcript};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub max_requests: u64,
    pub max_prompt_chars: Option<u64>,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_in_flight: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let g = GatewayConfig::default();
        BudgetConfig {
            max_requests: g.max_requests,
            max_prompt_chars: g.max_prompt_chars,
            max_attempts: g.max_attempts,
            base_delay_ms: g.base_delay.as_millis() as u64,
            max_in_flight: g.max_in_flight,
        }
    }
}

impl BudgetConfig {
    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            max_attempts: self.max_attempts,
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_requests: self.max_requests,
            max_prompt_chars: self.max_prompt_chars,
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NvdSection {
    pub base_url: Option<String>,
    pub cache: Option<PathBuf>,
    pub ttl_days: i64,
    /// Share of distinct CVE lookups allowed to fail before aborting.
    pub failure_budget: f64,
    /// Spacing between NVD requests; derived from the API key when unset.
    pub request_interval_ms: Option<u64>,
}

impl Default for NvdSection {
    fn default() -> Self {
        NvdSection {
            base_url: None,
            cache: None,
            ttl_days: crate::nvd::DEFAULT_TTL_DAYS,
            failure_budget: 0.05,
            request_interval_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset names, most trusted first; decides which copy survives merged dedup.
    pub priority: Vec<String>,
    /// Adapter config files by dataset name, overriding the shipped ones.
    pub adapters: BTreeMap<String, PathBuf>,
    pub backends: Vec<BackendSpec>,
    /// Backend for relevance filtering and verification.
    pub curation_backend: Option<String>,
    pub synth_backend: Option<String>,
    pub validator_backend: Option<String>,
    pub consensus_threshold: u8,
    pub quota: usize,
    pub top25: Option<PathBuf>,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub budget: BudgetConfig,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub prompts_dir: Option<PathBuf>,
    pub nvd: NvdSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            priority: Vec::new(),
            adapters: BTreeMap::new(),
            backends: Vec::new(),
            curation_backend: None,
            synth_backend: None,
            validator_backend: None,
            consensus_threshold: DEFAULT_THRESHOLD,
            quota: DEFAULT_QUOTA,
            top25: None,
            seed: 0,
            split_ratios: DEFAULT_RATIOS,
            budget: BudgetConfig::default(),
            workers: 4,
            output_dir: PathBuf::from("out"),
            prompts_dir: None,
            nvd: NvdSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let unreadable = |message: String| ConfigError::Unreadable {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.adapters.values_mut().for_each(fix);
        for b in &mut self.backends {
            if let BackendSpec::Scripted { script, .. } = b {
                fix(script);
            }
        }
        if let Some(p) = self.top25.as_mut() {
            fix(p);
        }
        if let Some(p) = self.prompts_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.nvd.cache.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Checks value ranges, name references and that referenced input paths exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.consensus_threshold > crate::agents::curation::MAX_SCORE {
            return bad(format!("consensus_threshold {} outside 0..=3", self.consensus_threshold));
        }
        if self.quota == 0 {
            return bad("quota must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.nvd.failure_budget) {
            return bad("nvd.failure_budget must lie in [0, 1]".into());
        }
        crate::benchmark::check_ratios(self.split_ratios).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for name in &self.priority {
            if !seen.insert(name) {
                return bad(format!("dataset {name:?} listed twice in priority"));
            }
        }
        let mut names = std::collections::HashSet::new();
        for b in &self.backends {
            if !names.insert(b.name()) {
                return bad(format!("backend {:?} defined twice", b.name()));
            }
            if let BackendSpec::Scripted { script, .. } = b {
                if !script.exists() {
                    return bad(format!("script {} does not exist", script.display()));
                }
            }
        }
        for (role, name) in [
            ("curation_backend", &self.curation_backend),
            ("synth_backend", &self.synth_backend),
            ("validator_backend", &self.validator_backend),
        ] {
            if let Some(n) = name {
                if !names.contains(n.as_str()) {
                    return bad(format!("{role} {n:?} is not defined in backends"));
                }
            }
        }
        if let (Some(s), Some(v)) = (&self.synth_backend, &self.validator_backend) {
            if s == v {
                return bad("synth_backend and validator_backend must differ".into());
            }
        }
        let paths = self
            .adapters
            .values()
            .chain(self.top25.iter())
            .chain(self.prompts_dir.iter());
        for p in paths {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Gateway with every configured backend registered.
    pub fn gateway(&self, transcript: Transcript) -> Result<Gateway, ConfigError> {
        let mut gw = Gateway::new(self.budget.gateway_config(), transcript);
        for spec in &self.backends {
            let backend = spec
                .build()
                .map_err(|e| ConfigError::Invalid(format!("backend {:?}: {e}", spec.name())))?;
            gw.register(spec.name(), backend);
        }
        Ok(gw)
    }

    pub fn prompts(&self) -> Result<Arc<crate::agents::PromptSet>, ConfigError> {
        match &self.prompts_dir {
            Some(dir) => crate::agents::PromptSet::with_overrides(dir)
                .map(Arc::new)
                .map_err(|e| ConfigError::Invalid(format!("prompts_dir: {e}"))),
            None => Ok(Arc::new(crate::agents::PromptSet::default())),
        }
    }

    pub fn top25(&self) -> Result<crate::report::Top25, ConfigError> {
        match &self.top25 {
            Some(p) => crate::report::Top25::from_path(p).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(crate::report::Top25::default_2024()),
        }
    }
}
