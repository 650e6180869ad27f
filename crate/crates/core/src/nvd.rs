//! CWE reconciliation against the NVD CVE API 2.0, with a local
//! append-only cache.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{parse_cve, CweId, FunctionPair, StatusTag};

pub const DEFAULT_BASE_URL: &str = "https://services.nvd.nist.gov";
pub const API_PATH: &str = "/rest/json/cves/2.0";
pub const DEFAULT_TTL_DAYS: i64 = 30;
/// Public NVD guidance: 5 requests per 30 s without a key, 50 with one.
pub const INTERVAL_WITHOUT_KEY: Duration = Duration::from_secs(6);
pub const INTERVAL_WITH_KEY: Duration = Duration::from_millis(600);

#[derive(Debug, Error)]
pub enum NvdError {
    #[error("malformed CVE identifier {0:?}")]
    MalformedCve(String),
    #[error("NVD unavailable: {0}")]
    NvdUnavailable(String),
    #[error("{0} is unknown to NVD")]
    NotFound(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct NvdConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    /// Minimum spacing between requests; derived from `api_key` when unset.
    pub request_interval: Option<Duration>,
    pub max_attempts: u32,
    pub retry_delay: Duration,
    pub timeout: Duration,
    pub cache_path: Option<PathBuf>,
    pub ttl: chrono::Duration,
}

impl Default for NvdConfig {
    fn default() -> Self {
        NvdConfig {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: None,
            request_interval: None,
            max_attempts: 3,
            retry_delay: Duration::from_secs(2),
            timeout: Duration::from_secs(30),
            cache_path: None,
            ttl: chrono::Duration::days(DEFAULT_TTL_DAYS),
        }
    }
}

impl NvdConfig {
    /// Defaults with `NVD_API_KEY` taken from the environment.
    pub fn from_env() -> Self {
        NvdConfig {
            api_key: std::env::var("NVD_API_KEY").ok().filter(|k| !k.is_empty()),
            ..Self::default()
        }
    }

    pub fn interval(&self) -> Duration {
        self.request_interval.unwrap_or(if self.api_key.is_some() {
            INTERVAL_WITH_KEY
        } else {
            INTERVAL_WITHOUT_KEY
        })
    }
}

/// One cache line. `found == false` records a CVE the NVD does not know.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub cve: String,
    pub found: bool,
    pub cwes: Vec<CweId>,
    /// Category-only values such as `NVD-CWE-noinfo`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    pub fetched_at: DateTime<Utc>,
}

/// Append-only JSONL store; the latest line for a CVE wins.
#[derive(Debug, Default)]
pub struct NvdCache {
    path: Option<PathBuf>,
    entries: HashMap<String, CacheEntry>,
}

impl NvdCache {
    pub fn memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, NvdError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let lines: Vec<CacheEntry> = crate::jsonl::read(path).map_err(|e| NvdError::Cache {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            })?;
            for e in lines {
                entries.insert(e.cve.clone(), e);
            }
        }
        Ok(NvdCache {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for `cve` if it is younger than `ttl` at `now`.
    pub fn get(&self, cve: &str, now: DateTime<Utc>, ttl: chrono::Duration) -> Option<&CacheEntry> {
        self.entries.get(cve).filter(|e| now - e.fetched_at < ttl)
    }

    pub fn put(&mut self, entry: CacheEntry) -> Result<(), NvdError> {
        if let Some(path) = &self.path {
            let io_err = |source| NvdError::Cache {
                path: path.clone(),
                source,
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io_err)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
            let line = serde_json::to_string(&entry).expect("cache entry serializes");
            writeln!(f, "{line}").map_err(io_err)?;
        }
        self.entries.insert(entry.cve.clone(), entry);
        Ok(())
    }
}

pub struct NvdClient {
    config: NvdConfig,
    agent: ureq::Agent,
    cache: Mutex<NvdCache>,
    last_request: Mutex<Option<Instant>>,
    requests: Mutex<u64>,
}

impl NvdClient {
    pub fn new(config: NvdConfig) -> Result<Self, NvdError> {
        let cache = match &config.cache_path {
            Some(p) => NvdCache::open(p)?,
            None => NvdCache::memory(),
        };
        Ok(Self::with_cache(config, cache))
    }

    pub fn with_cache(config: NvdConfig, cache: NvdCache) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        NvdClient {
            config,
            agent,
            cache: Mutex::new(cache),
            last_request: Mutex::new(None),
            requests: Mutex::new(0),
        }
    }

    /// HTTP requests issued so far (cache hits excluded).
    pub fn requests_made(&self) -> u64 {
        *self.requests.lock().unwrap()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    /// CWE identifiers the NVD currently records for `cve` (possibly empty),
    /// served from the cache when a fresh entry exists.
    pub fn fetch_cwe(&self, cve: &str) -> Result<Vec<CweId>, NvdError> {
        self.lookup(cve).map(|e| e.cwes)
    }

    /// Full cache entry for `cve`, fetching when needed.
    pub fn lookup(&self, cve: &str) -> Result<CacheEntry, NvdError> {
        let cve = parse_cve(cve).map_err(|_| NvdError::MalformedCve(cve.to_string()))?;
        let now = Utc::now();
        if let Some(hit) = self.cache.lock().unwrap().get(&cve, now, self.config.ttl) {
            return if hit.found {
                Ok(hit.clone())
            } else {
                Err(NvdError::NotFound(cve))
            };
        }
        let entry = self.fetch_remote(&cve)?;
        self.cache.lock().unwrap().put(entry.clone())?;
        if entry.found {
            Ok(entry)
        } else {
            Err(NvdError::NotFound(cve))
        }
    }

    fn throttle(&self) {
        let mut last = self.last_request.lock().unwrap();
        if let Some(prev) = *last {
            let wait = self.config.interval().saturating_sub(prev.elapsed());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        *last = Some(Instant::now());
    }

    fn fetch_remote(&self, cve: &str) -> Result<CacheEntry, NvdError> {
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), API_PATH);
        let mut last_error = String::new();
        for attempt in 1..=self.config.max_attempts.max(1) {
            if attempt > 1 {
                std::thread::sleep(self.config.retry_delay * 2u32.pow(attempt - 2));
            }
            self.throttle();
            *self.requests.lock().unwrap() += 1;
            let mut call = self.agent.get(&url).query("cveId", cve);
            if let Some(key) = &self.config.api_key {
                call = call.header("apiKey", key);
            }
            let mut resp = match call.call() {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    tracing::warn!(cve, attempt, error = %last_error, "NVD request failed");
                    continue;
                }
            };
            let status = resp.status().as_u16();
            match status {
                200 => {}
                404 => return Ok(not_found(cve)),
                403 | 429 | 500..=599 => {
                    last_error = format!("HTTP {status}");
                    tracing::warn!(cve, attempt, status, "NVD request throttled or failed");
                    continue;
                }
                _ => return Err(NvdError::NvdUnavailable(format!("HTTP {status} for {cve}"))),
            }
            let body: serde_json::Value = match resp.body_mut().read_json() {
                Ok(v) => v,
                Err(e) => {
                    last_error = format!("malformed response: {e}");
                    continue;
                }
            };
            return Ok(parse_response(cve, &body));
        }
        Err(NvdError::NvdUnavailable(format!(
            "{cve}: {} attempt(s) failed, last error: {last_error}",
            self.config.max_attempts
        )))
    }
}

fn not_found(cve: &str) -> CacheEntry {
    CacheEntry {
        cve: cve.to_string(),
        found: false,
        cwes: Vec::new(),
        categories: Vec::new(),
        fetched_at: Utc::now(),
    }
}

/// Extracts `weaknesses[].description[].value` from an API 2.0 response.
pub fn parse_response(cve: &str, body: &serde_json::Value) -> CacheEntry {
    let vulns = body.get("vulnerabilities").and_then(|v| v.as_array());
    let total = body.get("totalResults").and_then(|v| v.as_u64()).unwrap_or(0);
    let Some(item) = vulns.and_then(|v| v.first()).filter(|_| total > 0) else {
        return not_found(cve);
    };
    let mut cwes = Vec::new();
    let mut categories = Vec::new();
    let weaknesses = item.pointer("/cve/weaknesses").and_then(|w| w.as_array());
    for w in weaknesses.into_iter().flatten() {
        let descs = w.get("description").and_then(|d| d.as_array());
        for d in descs.into_iter().flatten() {
            let Some(value) = d.get("value").and_then(|v| v.as_str()) else {
                continue;
            };
            match value.parse::<CweId>() {
                Ok(c) if !cwes.contains(&c) => cwes.push(c),
                Ok(_) => {}
                Err(_) if !categories.iter().any(|c| c == value) => categories.push(value.to_string()),
                Err(_) => {}
            }
        }
    }
    CacheEntry {
        cve: cve.to_string(),
        found: true,
        cwes,
        categories,
        fetched_at: Utc::now(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub matched: usize,
    pub mismatched_corrected: usize,
    pub cve_absent: usize,
    pub nvd_unresolved: usize,
}

impl SourceCounts {
    pub fn examined(&self) -> usize {
        self.matched + self.mismatched_corrected + self.cve_absent + self.nvd_unresolved
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub sources: BTreeMap<String, SourceCounts>,
    pub total_corrected: usize,
}

impl MismatchReport {
    pub fn examined(&self) -> usize {
        self.sources.values().map(SourceCounts::examined).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,matched,mismatched_corrected,cve_absent,nvd_unresolved\n");
        for (source, c) in &self.sources {
            let _ = writeln!(
                out,
                "{source},{},{},{},{}",
                c.matched, c.mismatched_corrected, c.cve_absent, c.nvd_unresolved
            );
        }
        out
    }
}

/// Replaces each record's CWE labels with the NVD's when they differ.
///
/// Records without a CVE are left alone. Records whose CVE is unknown, has
/// only category values or no CWE at all, or could not be fetched keep their
/// labels and count as unresolved. Fetch failures abort the run only when
/// their share of distinct CVEs exceeds `failure_budget`.
pub fn reconcile(
    mut corpus: Vec<FunctionPair>,
    client: &NvdClient,
    failure_budget: f64,
) -> Result<(Vec<FunctionPair>, MismatchReport), NvdError> {
    let cves: BTreeSet<String> = corpus.iter().filter_map(|p| p.cve().map(str::to_string)).collect();
    let mut resolved: HashMap<String, Option<Vec<CweId>>> = HashMap::new();
    let mut failures = 0usize;
    let mut last_failure = String::new();
    for cve in &cves {
        let value = match client.lookup(cve) {
            Ok(e) if !e.cwes.is_empty() => Some(e.cwes),
            Ok(_) | Err(NvdError::NotFound(_)) => None,
            Err(e @ NvdError::NvdUnavailable(_)) => {
                failures += 1;
                last_failure = e.to_string();
                None
            }
            Err(e) => return Err(e),
        };
        resolved.insert(cve.clone(), value);
    }
    if !cves.is_empty() && failures as f64 / cves.len() as f64 > failure_budget {
        return Err(NvdError::NvdUnavailable(format!(
            "{failures} of {} CVE lookups failed (budget {failure_budget}); last: {last_failure}",
            cves.len()
        )));
    }

    let mut report = MismatchReport::default();
    for pair in &mut corpus {
        let counts = report.sources.entry(pair.source().to_string()).or_default();
        let Some(cve) = pair.cve() else {
            counts.cve_absent += 1;
            continue;
        };
        match resolved.get(cve).and_then(Option::as_ref) {
            None => counts.nvd_unresolved += 1,
            Some(nvd) => {
                let current: BTreeSet<_> = pair.cwes.iter().collect();
                let fresh: BTreeSet<_> = nvd.iter().collect();
                if current == fresh {
                    counts.matched += 1;
                } else {
                    pair.cwes = nvd.clone();
                    counts.mismatched_corrected += 1;
                    report.total_corrected += 1;
                }
                pair.mark(StatusTag::Reconciled);
            }
        }
    }
    Ok((corpus, report))
}
