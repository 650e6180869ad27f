//! Analytical tables: CWE distributions, imbalance ratios, and the
//! duplication summary. Every percentage is re-derived from integer counts
//! at render time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dedup::{DedupReport, OverlapMatrix, Stage};
use crate::model::{CweId, FunctionPair};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("distribution has no CWE with a positive count")]
    EmptyDistribution,
    #[error("cannot read Top-25 list {path}: {reason}")]
    Top25Unreadable { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableFormat {
    #[default]
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            other => Err(format!("unknown table format {other:?} (csv|markdown)")),
        }
    }
}

/// `num / den` as hundredths of a percent, rounded half up. Zero when `den` is zero.
pub fn percent_hundredths(num: usize, den: usize) -> u64 {
    if den == 0 {
        return 0;
    }
    let (num, den) = (num as u128, den as u128);
    ((2 * num * 10_000 + den) / (2 * den)) as u64
}

/// `"94.36"` for 177842 / 188474.
pub fn format_percent(num: usize, den: usize) -> String {
    let h = percent_hundredths(num, den);
    format!("{}.{:02}", h / 100, h % 100)
}

/// `188635` → `"188,635"`.
pub fn format_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[derive(Debug, Clone, Deserialize)]
struct Top25Entry {
    cwe: CweId,
    name: String,
}

/// The MITRE Top-25 list the benchmark covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Top25 {
    entries: Vec<(CweId, String)>,
}

impl Top25 {
    /// The 2024 list shipped in `data/top25_2024.json`.
    pub fn default_2024() -> Self {
        Self::parse(include_str!("../data/top25_2024.json")).expect("shipped Top-25 list parses")
    }

    /// Either a JSON array of `{cwe, name}` objects, or one CWE per line.
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.trim_start().starts_with('[') {
            let entries: Vec<Top25Entry> = serde_json::from_str(text).map_err(|e| e.to_string())?;
            return Ok(Top25 {
                entries: entries.into_iter().map(|e| (e.cwe, e.name)).collect(),
            });
        }
        let mut entries = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            entries.push((line.parse::<CweId>().map_err(|e| e.to_string())?, String::new()));
        }
        Ok(Top25 { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self, ReportError> {
        let err = |reason: String| ReportError::Top25Unreadable {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::parse(&text).map_err(err)
    }

    pub fn cwes(&self) -> Vec<CweId> {
        self.entries.iter().map(|(c, _)| *c).collect()
    }

    pub fn contains(&self, cwe: CweId) -> bool {
        self.entries.iter().any(|(c, _)| *c == cwe)
    }

    pub fn name(&self, cwe: CweId) -> Option<&str> {
        self.entries
            .iter()
            .find(|(c, _)| *c == cwe)
            .map(|(_, n)| n.as_str())
            .filter(|n| !n.is_empty())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionRow {
    pub cwe: CweId,
    pub count: usize,
    pub top25: bool,
    pub share: f64,
}

/// Per-CWE counts. A record with k labels adds one to each of its k CWEs.
/// Sorted by count descending, then CWE number ascending.
pub fn cwe_distribution(corpus: &[FunctionPair], top25: &[CweId]) -> Vec<DistributionRow> {
    let mut counts: BTreeMap<CweId, usize> = BTreeMap::new();
    for pair in corpus {
        for cwe in &pair.cwes {
            *counts.entry(*cwe).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    let mut rows: Vec<DistributionRow> = counts
        .into_iter()
        .map(|(cwe, count)| DistributionRow {
            cwe,
            count,
            top25: top25.contains(&cwe),
            share: count as f64 / total as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.cwe.cmp(&b.cwe)));
    rows
}

/// `round(max / min)` over positive counts, rendered `"N:1"`.
pub fn imbalance_ratio(rows: &[DistributionRow]) -> Result<String, ReportError> {
    let positive = rows.iter().map(|r| r.count).filter(|&c| c > 0);
    let (max, min) = positive.fold((None, None), |(mx, mn): (Option<usize>, Option<usize>), c| {
        (Some(mx.map_or(c, |m| m.max(c))), Some(mn.map_or(c, |m| m.min(c))))
    });
    match (max, min) {
        (Some(max), Some(min)) => {
            let ratio = (2 * max as u128 + min as u128) / (2 * min as u128);
            Ok(format!("{ratio}:1"))
        }
        _ => Err(ReportError::EmptyDistribution),
    }
}

pub fn distribution_table(rows: &[DistributionRow], format: TableFormat) -> String {
    let total: usize = rows.iter().map(|r| r.count).sum();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("cwe,count,share_pct,top25\n");
            for r in rows {
                let _ = writeln!(out, "{},{},{},{}", r.cwe, r.count, format_percent(r.count, total), r.top25);
            }
        }
        TableFormat::Markdown => {
            out.push_str("| CWE | Count | Share | Top 25 |\n|---|---:|---:|:---:|\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {}% | {} |",
                    r.cwe,
                    format_thousands(r.count),
                    format_percent(r.count, total),
                    if r.top25 { "yes" } else { "" }
                );
            }
        }
    }
    out
}

/// The duplication table, one row per report in the given order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicationSummary {
    pub rows: Vec<DedupReport>,
}

pub fn duplication_summary(reports: &[DedupReport]) -> DuplicationSummary {
    DuplicationSummary {
        rows: reports.to_vec(),
    }
}

impl DuplicationSummary {
    /// `"177,842 (94.36%)"`.
    pub fn removed_cell(report: &DedupReport, stage: Stage) -> String {
        let s = report.stage(stage);
        format!("{} ({}%)", format_thousands(s.removed), format_percent(s.removed, s.initial))
    }

    /// The nine cells of one row: initial, after, removed (%) per stage.
    pub fn cells(report: &DedupReport) -> Vec<String> {
        Stage::ALL
            .iter()
            .flat_map(|&stage| {
                let s = report.stage(stage);
                [
                    format_thousands(s.initial),
                    format_thousands(s.remaining),
                    Self::removed_cell(report, stage),
                ]
            })
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| Dataset |");
        for stage in Stage::ALL {
            let first = if stage == Stage::CompletePair { "Initial" } else { "Remain" };
            let _ = write!(out, " {} {first} | After | Removed (%) |", stage.title());
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(9));
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "| {} | {} |", r.scope, Self::cells(r).join(" | "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset");
        for prefix in ["complete_pair", "self_identical", "cross_matched"] {
            let _ = write!(out, ",{prefix}_initial,{prefix}_after,{prefix}_removed,{prefix}_removed_pct");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&csv_field(&r.scope));
            for s in &r.stages {
                let _ = write!(out, ",{},{},{},{}", s.initial, s.remaining, s.removed, format_percent(s.removed, s.initial));
            }
            out.push('\n');
        }
        out
    }

    pub fn render(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Csv => self.to_csv(),
            TableFormat::Markdown => self.to_markdown(),
        }
    }
}

/// Row/column dataset headers, percentage cells to two decimals, empty diagonal.
pub fn overlap_csv(matrix: &OverlapMatrix) -> String {
    let mut out = String::from("dataset");
    for d in &matrix.datasets {
        out.push(',');
        out.push_str(&csv_field(d));
    }
    out.push('\n');
    for row in &matrix.datasets {
        out.push_str(&csv_field(row));
        for col in &matrix.datasets {
            out.push(',');
            if let Some(c) = matrix.cell(row, col) {
                out.push_str(&format_percent(c.shared, c.total));
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
