//! Loading heterogeneous source datasets into [`FunctionPair`] records.
//!
//! Each source is described by an [`AdapterConfig`], a small JSON document
//! mapping unified field names to source columns (CSV) or dotted key paths
//! (JSONL). Rows are emitted in input order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tracing::warn;

use crate::model::{parse_cve, CweId, FunctionPair, PairFields, Provenance, StatusTag};

pub const VULN_CODE: &str = "vuln_code";
pub const FIXED_CODE: &str = "fixed_code";
const KNOWN_FIELDS: [&str; 6] = [VULN_CODE, FIXED_CODE, "cve", "cwes", "language", "commit_message"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CweParseRule {
    /// A JSON array, or a string such as `['CWE-79', 'CWE-20']` or `CWE-79;CWE-20`.
    #[default]
    List,
    Single,
    /// The dataset carries no CWE labels.
    Absent,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdapterConfig {
    pub dataset_name: String,
    pub field_map: BTreeMap<String, String>,
    #[serde(default)]
    pub language_default: Option<String>,
    #[serde(default)]
    pub cwe_parse_rule: CweParseRule,
}

const BUILTIN_ADAPTERS: [(&str, &str); 7] = [
    ("bigvul", include_str!("../adapters/bigvul.json")),
    ("cleanvul", include_str!("../adapters/cleanvul.json")),
    ("cvefixes", include_str!("../adapters/cvefixes.json")),
    ("diversevul", include_str!("../adapters/diversevul.json")),
    ("primevul", include_str!("../adapters/primevul.json")),
    ("safecoder", include_str!("../adapters/safecoder.json")),
    ("vulnpatchpairs", include_str!("../adapters/vulnpatchpairs.json")),
];

impl AdapterConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.dataset_name.trim().is_empty() {
            return Err(IngestError::InvalidConfig("dataset_name is empty".into()));
        }
        for required in [VULN_CODE, FIXED_CODE] {
            if !self.field_map.contains_key(required) {
                return Err(IngestError::InvalidConfig(format!("field_map must map {required}")));
            }
        }
        if let Some(unknown) = self.field_map.keys().find(|k| !KNOWN_FIELDS.contains(&k.as_str())) {
            return Err(IngestError::InvalidConfig(format!("unknown unified field {unknown:?}")));
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::FileUnreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let cfg: AdapterConfig = serde_json::from_str(&text)
            .map_err(|e| IngestError::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// One of the shipped adapters, by lowercase dataset name.
    pub fn builtin(name: &str) -> Option<Self> {
        let key = name.to_ascii_lowercase();
        BUILTIN_ADAPTERS
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, text)| serde_json::from_str(text).expect("shipped adapter configs parse"))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN_ADAPTERS.iter().map(|(n, _)| *n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    #[default]
    Strict,
    Lenient,
}

impl FromStr for LoadMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(LoadMode::Strict),
            "lenient" => Ok(LoadMode::Lenient),
            other => Err(format!("unknown load mode {other:?}")),
        }
    }
}

/// A row that could not become a [`FunctionPair`]. `row` is 1-based and
/// counts data rows only (CSV header and blank JSONL lines excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {reason}")]
    FileUnreadable { path: PathBuf, reason: String },
    #[error("unsupported input format for {0} (expected .jsonl, .json, .ndjson or .csv)")]
    UnsupportedFormat(PathBuf),
    #[error("mapped key {key:?} (for {field}) is absent from every row")]
    SchemaMismatch { field: String, key: String },
    #[error("row {}: {}", .0.row, .0.message)]
    Row(RowError),
    #[error("invalid adapter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Default)]
pub struct LoadOutput {
    pub pairs: Vec<FunctionPair>,
    pub row_errors: Vec<RowError>,
}

enum Format {
    Jsonl,
    Csv,
}

fn detect_format(path: &Path) -> Result<Format, IngestError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("jsonl" | "json" | "ndjson") => Ok(Format::Jsonl),
        Some("csv") => Ok(Format::Csv),
        _ => Err(IngestError::UnsupportedFormat(path.to_path_buf())),
    }
}

type RawRow = Result<Map<String, Value>, String>;

fn read_rows(path: &Path, format: Format) -> Result<Vec<RawRow>, IngestError> {
    let unreadable = |e: &dyn std::fmt::Display| IngestError::FileUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let file = File::open(path).map_err(|e| unreadable(&e))?;
    let mut rows = Vec::new();
    match format {
        Format::Jsonl => {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| unreadable(&e))?;
                if line.trim().is_empty() {
                    continue;
                }
                rows.push(match serde_json::from_str::<Value>(&line) {
                    Ok(Value::Object(map)) => Ok(map),
                    Ok(_) => Err("row is not a JSON object".to_string()),
                    Err(e) => Err(format!("invalid JSON: {e}")),
                });
            }
        }
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
            let headers = reader.headers().map_err(|e| unreadable(&e))?.clone();
            for record in reader.records() {
                rows.push(match record {
                    Ok(rec) => Ok(headers
                        .iter()
                        .zip(rec.iter())
                        .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                        .collect()),
                    Err(e) => Err(format!("malformed CSV record: {e}")),
                });
            }
        }
    }
    Ok(rows)
}

/// Exact key first, then a dotted path into nested objects.
fn lookup<'a>(row: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    if let Some(v) = row.get(key) {
        return Some(v);
    }
    let mut parts = key.split('.');
    let mut cur = row.get(parts.next()?)?;
    for part in parts {
        cur = cur.as_object()?.get(part)?;
    }
    Some(cur)
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        other => Some(other.to_string()),
    }
}

fn is_blank_marker(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || ["nan", "none", "null", "n/a"].iter().any(|m| t.eq_ignore_ascii_case(m))
}

/// NVD category placeholders carry no weakness number.
fn is_category_only(s: &str) -> bool {
    s.trim().to_ascii_uppercase().starts_with("NVD-CWE-")
}

enum CweToken {
    Cwe(CweId),
    Malformed(String),
}

fn cwe_tokens(value: &Value, rule: CweParseRule) -> Vec<CweToken> {
    let raw: Vec<String> = match (rule, value) {
        (CweParseRule::Absent, _) => return Vec::new(),
        (_, Value::Array(items)) => items.iter().filter_map(as_text).collect(),
        (CweParseRule::Single, v) => as_text(v).into_iter().collect(),
        (CweParseRule::List, v) => match as_text(v) {
            Some(s) => s
                .split(|c: char| c == ',' || c == ';' || c == '|' || c.is_whitespace())
                .map(|t| t.trim_matches(|c: char| matches!(c, '[' | ']' | '\'' | '"')).to_string())
                .collect(),
            None => Vec::new(),
        },
    };
    raw.into_iter()
        .filter(|t| !is_blank_marker(t) && !is_category_only(t))
        .map(|t| match t.parse::<CweId>() {
            Ok(c) => CweToken::Cwe(c),
            Err(_) => CweToken::Malformed(t),
        })
        .collect()
}

fn convert_row(
    row: &Map<String, Value>,
    row_no: usize,
    config: &AdapterConfig,
    mode: LoadMode,
) -> Result<FunctionPair, String> {
    let field = |name: &str| {
        config
            .field_map
            .get(name)
            .and_then(|key| lookup(row, key))
            .and_then(as_text)
    };
    let code = |name: &str| match field(name) {
        Some(c) if !c.is_empty() => Ok(c),
        _ => Err(format!("missing or empty {name}")),
    };
    let vuln_code = code(VULN_CODE)?;
    let fixed_code = code(FIXED_CODE)?;

    let mut cwes = Vec::new();
    if let Some(v) = config.field_map.get("cwes").and_then(|key| lookup(row, key)) {
        for token in cwe_tokens(v, config.cwe_parse_rule) {
            match token {
                CweToken::Cwe(c) if !cwes.contains(&c) => cwes.push(c),
                CweToken::Cwe(_) => {}
                CweToken::Malformed(t) if mode == LoadMode::Strict => {
                    return Err(format!("malformed CWE {t:?}"))
                }
                CweToken::Malformed(t) => {
                    warn!(dataset = %config.dataset_name, row = row_no, "dropping malformed CWE {t:?}")
                }
            }
        }
    }

    let cve = match field("cve").filter(|s| !is_blank_marker(s)) {
        None => None,
        Some(s) => match parse_cve(&s) {
            Ok(c) => Some(c),
            Err(_) if mode == LoadMode::Strict => return Err(format!("malformed CVE {s:?}")),
            Err(_) => {
                warn!(dataset = %config.dataset_name, row = row_no, "dropping malformed CVE {s:?}");
                None
            }
        },
    };

    let language = field("language")
        .filter(|s| !is_blank_marker(s))
        .or_else(|| config.language_default.clone())
        .unwrap_or_else(|| "unknown".to_string())
        .trim()
        .to_lowercase();

    let mut pair = FunctionPair::new(PairFields {
        source: config.dataset_name.clone(),
        cve,
        cwes,
        language,
        commit_message: field("commit_message").filter(|s| !is_blank_marker(s)),
        vuln_code,
        fixed_code,
        provenance: Provenance::Real,
    })
    .map_err(|e| e.to_string())?;
    pair.mark(StatusTag::Ingested);
    Ok(pair)
}

/// Loads one dataset file. JSONL or CSV is chosen by extension.
pub fn load_dataset(path: &Path, config: &AdapterConfig, mode: LoadMode) -> Result<LoadOutput, IngestError> {
    config.validate()?;
    let rows = read_rows(path, detect_format(path)?)?;

    let parsed: Vec<&Map<String, Value>> = rows.iter().filter_map(|r| r.as_ref().ok()).collect();
    if !parsed.is_empty() {
        for (field, key) in &config.field_map {
            if !parsed.iter().any(|row| lookup(row, key).is_some()) {
                return Err(IngestError::SchemaMismatch {
                    field: field.clone(),
                    key: key.clone(),
                });
            }
        }
    }

    let mut out = LoadOutput::default();
    for (i, row) in rows.iter().enumerate() {
        let row_no = i + 1;
        let result = row.clone().and_then(|r| convert_row(&r, row_no, config, mode));
        match result {
            Ok(pair) => out.pairs.push(pair),
            Err(message) => {
                let err = RowError { row: row_no, message };
                if mode == LoadMode::Strict {
                    return Err(IngestError::Row(err));
                }
                out.row_errors.push(err);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn config() -> AdapterConfig {
        serde_json::from_value(serde_json::json!({
            "dataset_name": "fixture",
            "field_map": {
                "vuln_code": "before",
                "fixed_code": "after",
                "cve": "meta.cve",
                "cwes": "cwe",
                "commit_message": "msg"
            },
            "language_default": "C",
            "cwe_parse_rule": "list"
        }))
        .unwrap()
    }

    fn minimal() -> AdapterConfig {
        let mut cfg = config();
        cfg.field_map.retain(|k, _| [VULN_CODE, FIXED_CODE, "cwes"].contains(&k.as_str()));
        cfg
    }

    fn write_tmp(ext: &str, body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_complete_jsonl() {
        let f = write_tmp(
            ".jsonl",
            r#"{"before":"int a;","after":"int b;","meta":{"cve":"CVE-2020-0001"},"cwe":["CWE-79"],"msg":"fix xss"}
{"before":"x","after":"y","meta":{"cve":null},"cwe":"['CWE-20', 'CWE-119']"}

{"before":"p","after":"q","cwe":[]}
"#,
        );
        let out = load_dataset(f.path(), &config(), LoadMode::Strict).unwrap();
        assert_eq!(out.pairs.len(), 3);
        assert!(out.row_errors.is_empty());
        let p = &out.pairs[0];
        assert_eq!(p.cve(), Some("CVE-2020-0001"));
        assert_eq!(p.cwes, vec!["CWE-79".parse().unwrap()]);
        assert_eq!(p.language, "c");
        assert_eq!(p.source(), "fixture");
        assert!(p.has(StatusTag::Ingested));
        assert_eq!(out.pairs[1].cwes.len(), 2);
        assert_eq!(out.pairs[1].cve(), None);
    }

    #[test]
    fn lenient_mode_collects_row_errors() {
        let f = write_tmp(
            ".jsonl",
            r#"{"before":"a","after":"b","cwe":"CWE-79"}
{"after":"b","cwe":"CWE-79"}
not json
{"before":"c","after":"d","cwe":"CWE-x1"}
"#,
        );
        let out = load_dataset(f.path(), &minimal(), LoadMode::Lenient).unwrap();
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.row_errors.len(), 2);
        assert_eq!(out.row_errors[0].row, 2);
        assert!(out.row_errors[0].message.contains("vuln_code"));
        // malformed CWE dropped, row kept
        assert!(out.pairs[1].cwes.is_empty());

        let err = load_dataset(f.path(), &minimal(), LoadMode::Strict).unwrap_err();
        assert!(matches!(err, IngestError::Row(RowError { row: 2, .. })));
    }

    #[test]
    fn strict_mode_rejects_malformed_cwe() {
        let f = write_tmp(".jsonl", "{\"before\":\"c\",\"after\":\"d\",\"cwe\":\"CWE-x1\"}\n");
        let err = load_dataset(f.path(), &minimal(), LoadMode::Strict).unwrap_err();
        assert!(err.to_string().contains("malformed CWE"));
    }

    #[test]
    fn category_only_labels_are_not_errors() {
        let f = write_tmp(".jsonl", "{\"before\":\"c\",\"after\":\"d\",\"cwe\":\"NVD-CWE-Other\"}\n");
        let out = load_dataset(f.path(), &minimal(), LoadMode::Strict).unwrap();
        assert!(out.pairs[0].cwes.is_empty());
    }

    #[test]
    fn identical_rows_share_id() {
        let line = "{\"before\":\"a\",\"after\":\"b\",\"cwe\":\"CWE-1\"}\n";
        let f = write_tmp(".jsonl", &line.repeat(2));
        let out = load_dataset(f.path(), &minimal(), LoadMode::Strict).unwrap();
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[0].id(), out.pairs[1].id());
    }

    #[test]
    fn csv_with_quoted_multiline_fields() {
        let f = write_tmp(
            ".csv",
            "before,after,cwe,msg,meta.cve\n\"int f() {\n  return 0;\n}\",\"int f() {\n  return 1;\n}\",CWE-125,\"say \"\"hi\"\"\",CVE-2018-12345\n",
        );
        let out = load_dataset(f.path(), &config(), LoadMode::Strict).unwrap();
        assert_eq!(out.pairs.len(), 1);
        let p = &out.pairs[0];
        assert_eq!(p.vuln_code(), "int f() {\n  return 0;\n}");
        assert_eq!(p.commit_message.as_deref(), Some("say \"hi\""));
        assert_eq!(p.cve(), Some("CVE-2018-12345"));
    }

    #[test]
    fn schema_mismatch_when_key_never_present() {
        let f = write_tmp(".jsonl", "{\"before\":\"a\",\"after_code\":\"b\",\"cwe\":\"\"}\n");
        let err = load_dataset(f.path(), &minimal(), LoadMode::Lenient).unwrap_err();
        assert!(matches!(err, IngestError::SchemaMismatch { ref key, .. } if key == "after"));
    }

    #[test]
    fn unreadable_and_unsupported() {
        let err = load_dataset(Path::new("/nonexistent/x.jsonl"), &config(), LoadMode::Strict).unwrap_err();
        assert!(matches!(err, IngestError::FileUnreadable { .. }));
        let err = load_dataset(Path::new("x.parquet"), &config(), LoadMode::Strict).unwrap_err();
        assert!(matches!(err, IngestError::UnsupportedFormat(_)));
    }

    #[test]
    fn builtin_adapters_validate() {
        let names: Vec<_> = AdapterConfig::builtin_names().collect();
        assert_eq!(names.len(), 7);
        for name in names {
            let cfg = AdapterConfig::builtin(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.dataset_name, name);
        }
        assert_eq!(
            AdapterConfig::builtin("VulnPatchPairs").unwrap().cwe_parse_rule,
            CweParseRule::Absent
        );
    }

    #[test]
    fn config_requires_code_fields() {
        let mut cfg = config();
        cfg.field_map.remove("fixed_code");
        assert!(matches!(cfg.validate(), Err(IngestError::InvalidConfig(_))));
    }
}
