//! Balanced benchmark assembly, leakage removal and stratified splits.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CweId, Digest256, Fingerprint, FunctionPair, Provenance, StatusTag};

pub const DEFAULT_QUOTA: usize = 50;
pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];
pub const RATIO_TOLERANCE: f64 = 1e-9;
/// Group key for records without any CWE label.
pub const NO_CWE: &str = "none";
const RATIO_SCALE: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub cwe: CweId,
    pub shortfall: usize,
}

impl fmt::Display for Shortfall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} short by {}", self.cwe, self.shortfall)
    }
}

fn list(shortfalls: &[Shortfall]) -> String {
    shortfalls.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchmarkError {
    #[error("insufficient samples: {}", list(.0))]
    InsufficientSamples(Vec<Shortfall>),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("bad split ratios: {0}")]
    BadRatios(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaEntry {
    pub cwe: CweId,
    pub quota: usize,
    pub real_available: usize,
    pub synth_available: usize,
    pub synth_needed: usize,
}

impl QuotaEntry {
    pub fn shortfall(&self) -> usize {
        self.synth_needed.saturating_sub(self.synth_available)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaPlan {
    pub entries: Vec<QuotaEntry>,
}

impl QuotaPlan {
    pub fn shortfalls(&self) -> Vec<Shortfall> {
        self.entries
            .iter()
            .filter(|e| e.shortfall() > 0)
            .map(|e| Shortfall {
                cwe: e.cwe,
                shortfall: e.shortfall(),
            })
            .collect()
    }

    /// Synthesized samples still required per CWE.
    pub fn synth_needed(&self) -> Vec<(CweId, usize)> {
        self.entries.iter().filter(|e| e.synth_needed > 0).map(|e| (e.cwe, e.synth_needed)).collect()
    }
}

fn by_primary_cwe(pairs: &[FunctionPair]) -> HashMap<CweId, Vec<usize>> {
    let mut map: HashMap<CweId, Vec<usize>> = HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        if let Some(c) = p.primary_cwe() {
            map.entry(c).or_default().push(i);
        }
    }
    map
}

fn check_top25(top25: &[CweId]) -> Result<(), BenchmarkError> {
    if top25.is_empty() {
        return Err(BenchmarkError::PreconditionViolation("CWE list is empty".into()));
    }
    let unique: HashSet<_> = top25.iter().collect();
    if unique.len() != top25.len() {
        return Err(BenchmarkError::PreconditionViolation("CWE list has duplicates".into()));
    }
    Ok(())
}

pub fn quota_plan(real: &[FunctionPair], synthesized: &[FunctionPair], top25: &[CweId], quota: usize) -> QuotaPlan {
    let real_by = by_primary_cwe(real);
    let synth_by = by_primary_cwe(synthesized);
    let count = |m: &HashMap<CweId, Vec<usize>>, c: &CweId| m.get(c).map_or(0, Vec::len);
    QuotaPlan {
        entries: top25
            .iter()
            .map(|c| {
                let real_available = count(&real_by, c);
                QuotaEntry {
                    cwe: *c,
                    quota,
                    real_available,
                    synth_available: count(&synth_by, c),
                    synth_needed: quota.saturating_sub(real_available),
                }
            })
            .collect(),
    }
}

/// Selects exactly `quota` pairs per listed CWE, keyed by primary CWE: real
/// pairs first in input order, then synthesized ones. Every deficient CWE is
/// reported before anything is selected.
pub fn assemble(
    real: &[FunctionPair],
    synthesized: &[FunctionPair],
    top25: &[CweId],
    quota: usize,
) -> Result<Vec<FunctionPair>, BenchmarkError> {
    check_top25(top25)?;
    if let Some(p) = real
        .iter()
        .chain(synthesized)
        .find(|p| !(p.has(StatusTag::Verified) || p.has(StatusTag::Reviewed)) || p.is_terminal())
    {
        return Err(BenchmarkError::PreconditionViolation(format!(
            "pair {} is neither verified nor reviewed",
            p.id()
        )));
    }
    let plan = quota_plan(real, synthesized, top25, quota);
    let shortfalls = plan.shortfalls();
    if !shortfalls.is_empty() {
        return Err(BenchmarkError::InsufficientSamples(shortfalls));
    }
    let real_by = by_primary_cwe(real);
    let synth_by = by_primary_cwe(synthesized);
    let mut out = Vec::with_capacity(quota * top25.len());
    for entry in &plan.entries {
        let take_real = entry.real_available.min(quota);
        let reals = real_by.get(&entry.cwe).into_iter().flatten().take(take_real).map(|&i| &real[i]);
        let synths = synth_by
            .get(&entry.cwe)
            .into_iter()
            .flatten()
            .take(quota - take_real)
            .map(|&i| &synthesized[i]);
        for p in reals.chain(synths) {
            let mut p = p.clone();
            p.mark(StatusTag::Benchmark);
            out.push(p);
        }
    }
    Ok(out)
}

/// Every (benchmark id, training id) whose pair fingerprints coincide, in
/// benchmark order then training order.
pub fn leakage_check(benchmark: &[FunctionPair], training: &[FunctionPair]) -> Vec<(String, String)> {
    let mut train_by: HashMap<Fingerprint, Vec<&str>> = HashMap::new();
    for t in training {
        train_by.entry(t.fingerprint()).or_default().push(t.id());
    }
    let mut out = Vec::new();
    for b in benchmark {
        for t in train_by.get(&b.fingerprint()).into_iter().flatten() {
            out.push((b.id().to_string(), t.to_string()));
        }
    }
    out
}

/// Training records whose fingerprint does not appear in the benchmark.
pub fn remove_leakage(training: Vec<FunctionPair>, benchmark: &[FunctionPair]) -> Vec<FunctionPair> {
    let bench: HashSet<Fingerprint> = benchmark.iter().map(FunctionPair::fingerprint).collect();
    training.into_iter().filter(|t| !bench.contains(&t.fingerprint())).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<FunctionPair>,
    pub validation: Vec<FunctionPair>,
    pub test: Vec<FunctionPair>,
}

impl Splits {
    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }
}

pub fn check_ratios(ratios: [f64; 3]) -> Result<(), BenchmarkError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(BenchmarkError::BadRatios(format!("{ratios:?} has a negative or non-finite entry")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > RATIO_TOLERANCE {
        return Err(BenchmarkError::BadRatios(format!("{ratios:?} sums to {sum}")));
    }
    Ok(())
}

/// Largest-remainder apportionment of `n` records; equal remainders favour
/// train, then validation, then test.
pub fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let scaled = ratios.map(|r| (r * RATIO_SCALE).round() as u128);
    let total: u128 = scaled.iter().sum();
    if total == 0 {
        return [n, 0, 0];
    }
    let n128 = n as u128;
    let mut counts = scaled.map(|s| (n128 * s / total) as usize);
    let rems = scaled.map(|s| n128 * s % total);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    let leftover = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(leftover) {
        counts[i] += 1;
    }
    counts
}

pub fn group_key(pair: &FunctionPair) -> String {
    pair.primary_cwe().map_or_else(|| NO_CWE.to_string(), |c| c.to_string())
}

fn group_rng(seed: u64, key: &str) -> ChaCha20Rng {
    let mut material = seed.to_le_bytes().to_vec();
    material.extend_from_slice(key.as_bytes());
    ChaCha20Rng::from_seed(Digest256::of(&material).0)
}

/// Stratified split by primary CWE. Each group is shuffled with its own
/// seeded generator and apportioned by [`apportion`]; every output list keeps
/// the input order.
pub fn split_export(corpus: Vec<FunctionPair>, ratios: [f64; 3], seed: u64) -> Result<Splits, BenchmarkError> {
    check_ratios(ratios)?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.iter().enumerate() {
        groups.entry(group_key(p)).or_default().push(i);
    }
    let mut assignment = vec![0u8; corpus.len()];
    for (key, mut idx) in groups {
        idx.shuffle(&mut group_rng(seed, &key));
        let [train, val, _] = apportion(idx.len(), ratios);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = if pos < train {
                0
            } else if pos < train + val {
                1
            } else {
                2
            };
        }
    }
    let mut out = Splits::default();
    for (p, a) in corpus.into_iter().zip(assignment) {
        match a {
            0 => out.train.push(p),
            1 => out.validation.push(p),
            _ => out.test.push(p),
        }
    }
    Ok(out)
}

/// SHA-256 over the sorted, distinct pair fingerprints.
pub fn fingerprint_set_digest(pairs: &[FunctionPair]) -> String {
    let set: BTreeSet<String> = pairs.iter().map(|p| p.fingerprint().to_hex()).collect();
    let joined = set.into_iter().collect::<Vec<_>>().join("\n");
    Digest256::of(joined.as_bytes()).to_hex()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CweCounts {
    pub real: usize,
    pub synthesized: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub quota: usize,
    pub cwes: BTreeMap<String, CweCounts>,
    pub total: usize,
    pub fingerprint_digest: String,
}

pub fn benchmark_manifest(benchmark: &[FunctionPair], quota: usize) -> BenchmarkManifest {
    let mut cwes: BTreeMap<String, CweCounts> = BTreeMap::new();
    for p in benchmark {
        let c = cwes.entry(group_key(p)).or_default();
        match p.provenance {
            Provenance::Real => c.real += 1,
            Provenance::Synthesized => c.synthesized += 1,
        }
    }
    BenchmarkManifest {
        quota,
        cwes,
        total: benchmark.len(),
        fingerprint_digest: fingerprint_set_digest(benchmark),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub stratification: String,
    pub counts: BTreeMap<String, usize>,
    /// Per group: train, validation, test.
    pub groups: BTreeMap<String, [usize; 3]>,
    pub fingerprint_digests: BTreeMap<String, String>,
}

pub fn split_manifest(splits: &Splits, ratios: [f64; 3], seed: u64) -> SplitManifest {
    let mut groups: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let parts = [("train", &splits.train), ("validation", &splits.validation), ("test", &splits.test)];
    for (slot, (_, list)) in parts.iter().enumerate() {
        for p in list.iter() {
            groups.entry(group_key(p)).or_default()[slot] += 1;
        }
    }
    SplitManifest {
        seed,
        ratios,
        stratification: "primary_cwe".into(),
        counts: parts.iter().map(|(n, l)| (n.to_string(), l.len())).collect(),
        groups,
        fingerprint_digests: parts.iter().map(|(n, l)| (n.to_string(), fingerprint_set_digest(l))).collect(),
    }
}
