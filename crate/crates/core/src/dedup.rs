//! Exact duplicate removal over whitespace-normalized code.
//!
//! Three stages run in a fixed order:
//!
//! 1. complete-pair duplicates: the same (vulnerable, fixed) pair seen more
//!    than once, first occurrence kept;
//! 2. self-identical pairs: vulnerable and fixed code are the same;
//! 3. cross-matched conflicts: a pair whose vulnerable code is another pair's
//!    fixed code. The pair with the contradicted *vulnerable* label is the one
//!    removed, and matches are judged against the stage-entry snapshot so the
//!    result never depends on order.
//!
//! Every stage preserves the relative order of its survivors.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Fingerprint, FunctionPair, StatusTag};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DedupError {
    #[error("dataset {0:?} is not listed in the priority order")]
    UnknownDataset(String),
    #[error("dataset {0:?} is empty; overlap is undefined")]
    EmptyCorpus(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    CompletePair,
    SelfIdentical,
    CrossMatched,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::CompletePair, Stage::SelfIdentical, Stage::CrossMatched];

    pub fn title(self) -> &'static str {
        match self {
            Stage::CompletePair => "Complete Pair Duplication",
            Stage::SelfIdentical => "Self-Identical Duplication",
            Stage::CrossMatched => "Cross-Matched Conflict",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub initial: usize,
    pub remaining: usize,
    pub removed: usize,
}

impl StageCounts {
    pub fn new(initial: usize, removed: usize) -> Self {
        StageCounts {
            initial,
            remaining: initial - removed,
            removed,
        }
    }

    /// `removed / initial`, or 0 for an empty stage.
    pub fn removed_pct(&self) -> f64 {
        if self.initial == 0 {
            0.0
        } else {
            self.removed as f64 / self.initial as f64
        }
    }
}

/// Stage counts for one dataset (or for `Total` / `merged`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub scope: String,
    pub stages: [StageCounts; 3],
}

impl DedupReport {
    pub fn stage(&self, stage: Stage) -> StageCounts {
        self.stages[stage as usize]
    }

    /// Row-wise sum, as used for the `Total` line.
    pub fn sum<'a>(scope: &str, reports: impl IntoIterator<Item = &'a DedupReport>) -> DedupReport {
        let mut stages = [StageCounts::default(); 3];
        for r in reports {
            for (acc, s) in stages.iter_mut().zip(r.stages.iter()) {
                acc.initial += s.initial;
                acc.remaining += s.remaining;
                acc.removed += s.removed;
            }
        }
        DedupReport {
            scope: scope.to_string(),
            stages,
        }
    }

    /// Checks `initial - removed == remaining` and the stage chaining identity.
    pub fn is_consistent(&self) -> bool {
        self.stages.iter().all(|s| s.initial - s.removed == s.remaining && s.removed <= s.initial)
            && self.stages.windows(2).all(|w| w[1].initial == w[0].remaining)
    }
}

fn fingerprints(corpus: &[FunctionPair]) -> Vec<Fingerprint> {
    corpus.par_iter().map(FunctionPair::fingerprint).collect()
}

fn retain_by_mask(corpus: Vec<FunctionPair>, keep: &[bool]) -> (Vec<FunctionPair>, usize) {
    let before = corpus.len();
    let out: Vec<_> = corpus
        .into_iter()
        .zip(keep)
        .filter_map(|(p, &k)| k.then_some(p))
        .collect();
    let removed = before - out.len();
    (out, removed)
}

/// Stage 1: keep the first pair of every (vuln_fp, fixed_fp) group.
pub fn dedup_complete_pairs(corpus: Vec<FunctionPair>) -> (Vec<FunctionPair>, usize) {
    let fps = fingerprints(&corpus);
    let mut seen = HashSet::with_capacity(fps.len());
    let keep: Vec<bool> = fps.iter().map(|fp| seen.insert(*fp)).collect();
    retain_by_mask(corpus, &keep)
}

/// Stage 2: drop pairs whose normalized vulnerable and fixed code coincide.
pub fn dedup_self_identical(corpus: Vec<FunctionPair>) -> (Vec<FunctionPair>, usize) {
    let keep: Vec<bool> = fingerprints(&corpus).iter().map(|fp| fp.vuln_fp != fp.fixed_fp).collect();
    retain_by_mask(corpus, &keep)
}

/// Stage 3: drop every pair whose vulnerable code equals the fixed code of a
/// different pair in the stage-entry corpus.
pub fn dedup_cross_matched(corpus: Vec<FunctionPair>) -> (Vec<FunctionPair>, usize) {
    let fps = fingerprints(&corpus);
    let mut fixed_counts: HashMap<_, usize> = HashMap::with_capacity(fps.len());
    for fp in &fps {
        *fixed_counts.entry(fp.fixed_fp).or_default() += 1;
    }
    let keep: Vec<bool> = fps
        .iter()
        .map(|fp| {
            let hits = fixed_counts.get(&fp.vuln_fp).copied().unwrap_or(0);
            // a pair never conflicts with itself
            let others = hits - usize::from(fp.vuln_fp == fp.fixed_fp);
            others == 0
        })
        .collect();
    retain_by_mask(corpus, &keep)
}

/// Runs the three stages in order, returning survivors and a chained report.
pub fn dedup_all_stages(scope: &str, corpus: Vec<FunctionPair>) -> (Vec<FunctionPair>, DedupReport) {
    let n0 = corpus.len();
    let (c1, r1) = dedup_complete_pairs(corpus);
    let n1 = c1.len();
    let (c2, r2) = dedup_self_identical(c1);
    let n2 = c2.len();
    let (c3, r3) = dedup_cross_matched(c2);
    let report = DedupReport {
        scope: scope.to_string(),
        stages: [StageCounts::new(n0, r1), StageCounts::new(n1, r2), StageCounts::new(n2, r3)],
    };
    debug_assert!(report.is_consistent());
    (c3, report)
}

pub const TOTAL_SCOPE: &str = "Total";
pub const MERGED_SCOPE: &str = "merged";

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    /// Survivors of the cross-dataset pass, tagged `deduped`.
    pub merged: Vec<FunctionPair>,
    /// Per-dataset survivors of the intra-dataset pass, in priority order.
    pub intra: Vec<(String, Vec<FunctionPair>)>,
    /// One row per dataset in priority order, then `Total` (sum of the
    /// dataset rows), then `merged` (the rerun over the concatenation).
    pub reports: Vec<DedupReport>,
}

impl DedupOutcome {
    pub fn report(&self, scope: &str) -> Option<&DedupReport> {
        self.reports.iter().find(|r| r.scope == scope)
    }
}

/// Intra-dataset dedup per source, then all three stages again over the
/// priority-ordered concatenation so cross-dataset duplicates resolve in
/// favour of the higher-priority source.
pub fn run_dedup_pipeline(
    corpora: BTreeMap<String, Vec<FunctionPair>>,
    priority: &[String],
) -> Result<DedupOutcome, DedupError> {
    if let Some(name) = corpora.keys().find(|k| !priority.contains(k)) {
        return Err(DedupError::UnknownDataset(name.clone()));
    }
    let mut corpora = corpora;
    let mut intra = Vec::new();
    let mut reports = Vec::new();
    for name in priority {
        let Some(corpus) = corpora.remove(name) else { continue };
        let (survivors, report) = dedup_all_stages(name, corpus);
        reports.push(report);
        intra.push((name.clone(), survivors));
    }
    reports.push(DedupReport::sum(TOTAL_SCOPE, &reports));

    let concatenated: Vec<FunctionPair> = intra.iter().flat_map(|(_, c)| c.iter().cloned()).collect();
    let (mut merged, merged_report) = dedup_all_stages(MERGED_SCOPE, concatenated);
    reports.push(merged_report);
    for p in &mut merged {
        p.mark(StatusTag::Deduped);
    }
    Ok(DedupOutcome {
        merged,
        intra,
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCell {
    /// Records of the row dataset whose pair fingerprint appears in the column dataset.
    pub shared: usize,
    /// Size of the row dataset.
    pub total: usize,
}

impl OverlapCell {
    pub fn fraction(&self) -> f64 {
        self.shared as f64 / self.total as f64
    }
}

/// Cross-dataset overlap. Cell (A, B) divides by |A|, so the matrix is
/// asymmetric whenever dataset sizes differ. The diagonal is undefined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub datasets: Vec<String>,
    pub cells: BTreeMap<(String, String), OverlapCell>,
}

impl OverlapMatrix {
    pub fn cell(&self, row: &str, col: &str) -> Option<OverlapCell> {
        self.cells.get(&(row.to_string(), col.to_string())).copied()
    }

    pub fn fraction(&self, row: &str, col: &str) -> Option<f64> {
        self.cell(row, col).map(|c| c.fraction())
    }
}

/// Overlap between already intra-deduplicated corpora, rows in the given order.
pub fn overlap_matrix<'a, I>(corpora: I) -> Result<OverlapMatrix, DedupError>
where
    I: IntoIterator<Item = (&'a str, &'a [FunctionPair])>,
{
    let entries: Vec<(&str, Vec<Fingerprint>)> = corpora
        .into_iter()
        .map(|(name, c)| (name, fingerprints(c)))
        .collect();
    if let Some((name, _)) = entries.iter().find(|(_, fps)| fps.is_empty()) {
        return Err(DedupError::EmptyCorpus(name.to_string()));
    }
    let sets: Vec<HashSet<Fingerprint>> = entries.iter().map(|(_, fps)| fps.iter().copied().collect()).collect();
    let mut cells = BTreeMap::new();
    for (i, (row, row_fps)) in entries.iter().enumerate() {
        for (j, (col, _)) in entries.iter().enumerate() {
            if i == j {
                continue;
            }
            let shared = row_fps.iter().filter(|fp| sets[j].contains(fp)).count();
            cells.insert(
                (row.to_string(), col.to_string()),
                OverlapCell {
                    shared,
                    total: row_fps.len(),
                },
            );
        }
    }
    Ok(OverlapMatrix {
        datasets: entries.iter().map(|(n, _)| n.to_string()).collect(),
        cells,
    })
}
