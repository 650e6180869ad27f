//! Unified record schema shared by every pipeline stage.
//!
//! A [`FunctionPair`] is one vulnerable function plus its fixed version. Its
//! `id` is a digest over the source name and the raw code, while its
//! [`Fingerprint`] is a digest over whitespace-stripped code only, so the same
//! change found in two datasets has two ids but one fingerprint.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("vuln_code and fixed_code must both be non-empty")]
    EmptyCode,
    #[error("malformed CWE identifier: {0:?}")]
    MalformedCwe(String),
    #[error("malformed CVE identifier: {0:?}")]
    MalformedCve(String),
    #[error("synthesized pair {0} must not carry a CVE")]
    SynthesizedWithCve(String),
    #[error("record id {found} does not match derived id {expected}")]
    IdMismatch { expected: String, found: String },
}

/// Removes every character with the Unicode `White_Space` property.
pub fn normalize_code(code: &str) -> String {
    code.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Lowercase hex SHA-256 of `source \0 vuln_code \0 fixed_code`.
pub fn derive_id(source: &str, vuln_code: &str, fixed_code: &str) -> Result<String, ModelError> {
    if vuln_code.is_empty() || fixed_code.is_empty() {
        return Err(ModelError::EmptyCode);
    }
    let mut hasher = Sha256::new();
    hasher.update(source.as_bytes());
    hasher.update([0u8]);
    hasher.update(vuln_code.as_bytes());
    hasher.update([0u8]);
    hasher.update(fixed_code.as_bytes());
    Ok(hex::encode(hasher.finalize()))
}

/// A 256-bit digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub fn of(bytes: &[u8]) -> Self {
        let out = Sha256::digest(bytes);
        let mut buf = [0u8; 32];
        buf.copy_from_slice(out.as_slice());
        Digest256(buf)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Digest of the whitespace-normalized code.
pub fn code_digest(code: &str) -> Digest256 {
    Digest256::of(normalize_code(code).as_bytes())
}

/// Content identity used for every duplication and leakage decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint {
    pub vuln_fp: Digest256,
    pub fixed_fp: Digest256,
}

impl Fingerprint {
    pub fn to_hex(&self) -> String {
        format!("{}:{}", self.vuln_fp, self.fixed_fp)
    }
}

pub fn fingerprint(pair: &FunctionPair) -> Fingerprint {
    Fingerprint {
        vuln_fp: code_digest(&pair.vuln_code),
        fixed_fp: code_digest(&pair.fixed_code),
    }
}

/// A CWE number, rendered `CWE-<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CweId(u32);

impl CweId {
    pub fn new(number: u32) -> Option<Self> {
        (number >= 1).then_some(CweId(number))
    }

    pub fn number(self) -> u32 {
        self.0
    }
}

impl fmt::Display for CweId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CWE-{}", self.0)
    }
}

impl FromStr for CweId {
    type Err = ModelError;

    /// Accepts `CWE-79`, `cwe-079`, `CWE_79` and bare `79`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = match t.get(..4) {
            Some(p) if p.eq_ignore_ascii_case("cwe-") || p.eq_ignore_ascii_case("cwe_") => &t[4..],
            _ => t,
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ModelError::MalformedCwe(s.to_string()));
        }
        digits
            .parse::<u32>()
            .ok()
            .and_then(CweId::new)
            .ok_or_else(|| ModelError::MalformedCwe(s.to_string()))
    }
}

impl Serialize for CweId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CweId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Validates and canonicalizes `CVE-<year>-<number>` (year 4 digits, number ≥ 4 digits).
pub fn parse_cve(s: &str) -> Result<String, ModelError> {
    let t = s.trim().to_ascii_uppercase();
    let mut parts = t.splitn(3, '-');
    let ok = matches!(
        (parts.next(), parts.next(), parts.next()),
        (Some("CVE"), Some(year), Some(num))
            if year.len() == 4
                && year.bytes().all(|b| b.is_ascii_digit())
                && num.len() >= 4
                && num.bytes().all(|b| b.is_ascii_digit())
    );
    if ok {
        Ok(t)
    } else {
        Err(ModelError::MalformedCve(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Real,
    Synthesized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusTag {
    Ingested,
    Reconciled,
    Deduped,
    Filtered,
    Verified,
    Reviewed,
    Benchmark,
    Rejected,
    Unverifiable,
}

impl StatusTag {
    pub fn is_terminal(self) -> bool {
        matches!(self, StatusTag::Rejected | StatusTag::Unverifiable)
    }
}

/// One vulnerable function and its fix.
///
/// `id`, `source`, `cve` and the two code fields are fixed at construction so
/// the id invariant cannot drift; labels and status are free to change.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionPair {
    id: String,
    source: String,
    cve: Option<String>,
    pub cwes: Vec<CweId>,
    pub language: String,
    pub commit_message: Option<String>,
    vuln_code: String,
    fixed_code: String,
    pub provenance: Provenance,
    pub status: BTreeSet<StatusTag>,
    /// Fields not part of the schema, preserved on round-trip.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Builder-style constructor arguments for [`FunctionPair`].
#[derive(Debug, Clone, Default)]
pub struct PairFields {
    pub source: String,
    pub cve: Option<String>,
    pub cwes: Vec<CweId>,
    pub language: String,
    pub commit_message: Option<String>,
    pub vuln_code: String,
    pub fixed_code: String,
    pub provenance: Provenance,
}

impl FunctionPair {
    pub fn new(fields: PairFields) -> Result<Self, ModelError> {
        let id = derive_id(&fields.source, &fields.vuln_code, &fields.fixed_code)?;
        let cve = fields.cve.as_deref().map(parse_cve).transpose()?;
        if fields.provenance == Provenance::Synthesized && cve.is_some() {
            return Err(ModelError::SynthesizedWithCve(id));
        }
        Ok(FunctionPair {
            id,
            source: fields.source,
            cve,
            cwes: fields.cwes,
            language: fields.language,
            commit_message: fields.commit_message,
            vuln_code: fields.vuln_code,
            fixed_code: fields.fixed_code,
            provenance: fields.provenance,
            status: BTreeSet::new(),
            extra: Map::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn source(&self) -> &str {
        &self.source
    }
    pub fn cve(&self) -> Option<&str> {
        self.cve.as_deref()
    }
    pub fn vuln_code(&self) -> &str {
        &self.vuln_code
    }
    pub fn fixed_code(&self) -> &str {
        &self.fixed_code
    }

    /// First listed CWE, used as the stratification and quota key.
    pub fn primary_cwe(&self) -> Option<CweId> {
        self.cwes.first().copied()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint(self)
    }

    /// Adds a status tag. Returns false (and changes nothing) once the pair
    /// carries a terminal tag.
    pub fn mark(&mut self, tag: StatusTag) -> bool {
        if self.is_terminal() {
            return false;
        }
        self.status.insert(tag);
        true
    }

    pub fn has(&self, tag: StatusTag) -> bool {
        self.status.contains(&tag)
    }

    pub fn is_terminal(&self) -> bool {
        self.status.iter().any(|t| t.is_terminal())
    }
}

#[derive(Deserialize)]
struct RawPair {
    id: Option<String>,
    source: String,
    #[serde(default)]
    cve: Option<String>,
    #[serde(default)]
    cwes: Vec<CweId>,
    #[serde(default)]
    language: String,
    #[serde(default)]
    commit_message: Option<String>,
    vuln_code: String,
    fixed_code: String,
    #[serde(default)]
    provenance: Provenance,
    #[serde(default)]
    status: BTreeSet<StatusTag>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

impl<'de> Deserialize<'de> for FunctionPair {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawPair::deserialize(d)?;
        let mut pair = FunctionPair::new(PairFields {
            source: raw.source,
            cve: raw.cve,
            cwes: raw.cwes,
            language: raw.language,
            commit_message: raw.commit_message,
            vuln_code: raw.vuln_code,
            fixed_code: raw.fixed_code,
            provenance: raw.provenance,
        })
        .map_err(serde::de::Error::custom)?;
        if let Some(found) = raw.id {
            if found != pair.id {
                return Err(serde::de::Error::custom(ModelError::IdMismatch {
                    expected: pair.id,
                    found,
                }));
            }
        }
        pair.status = raw.status;
        pair.extra = raw.extra;
        Ok(pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(source: &str, v: &str, f: &str) -> FunctionPair {
        FunctionPair::new(PairFields {
            source: source.into(),
            vuln_code: v.into(),
            fixed_code: f.into(),
            language: "c".into(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_code("int f( ) {\n}"), "intf(){}");
        assert_eq!(normalize_code(""), "");
        assert_eq!(normalize_code("a\tb\r\n c"), "abc");
        // NBSP, ideographic space, line separator
        assert_eq!(normalize_code("a\u{00A0}b\u{3000}c\u{2028}d"), "abcd");
        // zero-width space is not White_Space
        assert_eq!(normalize_code("a\u{200B}b"), "a\u{200B}b");
    }

    #[test]
    fn derive_id_golden() {
        // Pinned from Python: hashlib.sha256(b"bigvul\0int f(){return 0;}\0int f(){return 1;}").hexdigest()
        let id = derive_id("bigvul", "int f(){return 0;}", "int f(){return 1;}").unwrap();
        assert_eq!(id, "fca255c141c194fb020af5ed7c0f74df0a58fd7812a0a8fced365d307215d3d8");
    }

    #[test]
    fn derive_id_rules() {
        let a = derive_id("a", "x", "y").unwrap();
        assert_eq!(a, derive_id("a", "x", "y").unwrap());
        assert_ne!(a, derive_id("b", "x", "y").unwrap());
        // separators keep field boundaries distinct
        assert_ne!(derive_id("a", "xy", "z").unwrap(), derive_id("a", "x", "yz").unwrap());
        assert_eq!(derive_id("a", "", "y"), Err(ModelError::EmptyCode));
        assert_eq!(derive_id("a", "x", ""), Err(ModelError::EmptyCode));
    }

    #[test]
    fn fingerprint_ignores_indentation_and_source() {
        let a = pair("bigvul", "int f() {\n  return 0;\n}", "int f() { return 1; }");
        let b = pair("cvefixes", "int f(){return 0;}", "int f(){\n\treturn 1;\n}");
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.id(), b.id());
        let same = pair("x", "int a;", "int  a;");
        let fp = same.fingerprint();
        assert_eq!(fp.vuln_fp, fp.fixed_fp);
    }

    #[test]
    fn cwe_parse_and_render() {
        assert_eq!("CWE-79".parse::<CweId>().unwrap().to_string(), "CWE-79");
        assert_eq!("cwe-022".parse::<CweId>().unwrap().to_string(), "CWE-22");
        assert_eq!("119".parse::<CweId>().unwrap().number(), 119);
        for bad in ["CWE-0", "CWE-", "NVD-CWE-Other", "CWE-7a", "", "CWE--1"] {
            assert!(bad.parse::<CweId>().is_err(), "{bad}");
        }
    }

    #[test]
    fn cve_validation() {
        assert_eq!(parse_cve(" cve-2020-0001 ").unwrap(), "CVE-2020-0001");
        assert_eq!(parse_cve("CVE-2021-123456").unwrap(), "CVE-2021-123456");
        assert!(parse_cve("CVE-BAD").is_err());
        assert!(parse_cve("CVE-20-0001").is_err());
        assert!(parse_cve("CVE-2020-01").is_err());
    }

    #[test]
    fn synthesized_pairs_reject_cve() {
        let err = FunctionPair::new(PairFields {
            source: "rvg".into(),
            cve: Some("CVE-2020-0001".into()),
            vuln_code: "a".into(),
            fixed_code: "b".into(),
            provenance: Provenance::Synthesized,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, ModelError::SynthesizedWithCve(_)));
    }

    #[test]
    fn terminal_tags_freeze_status() {
        let mut p = pair("s", "a", "b");
        assert!(p.mark(StatusTag::Ingested));
        assert!(p.mark(StatusTag::Rejected));
        assert!(!p.mark(StatusTag::Verified));
        assert!(!p.has(StatusTag::Verified));
    }

    #[test]
    fn json_round_trip_preserves_unknown_fields() {
        let line = r#"{"source":"bigvul","cve":"CVE-2019-1234","cwes":["CWE-119"],"language":"c","commit_message":"fix","vuln_code":"a b","fixed_code":"a  c","provenance":"real","status":["ingested"],"project":"linux","commit_id":"abc"}"#;
        let p: FunctionPair = serde_json::from_str(line).unwrap();
        assert_eq!(p.extra.get("project").unwrap(), "linux");
        let out = serde_json::to_string(&p).unwrap();
        let back: FunctionPair = serde_json::from_str(&out).unwrap();
        assert_eq!(p, back);
        assert!(out.contains(r#""commit_id":"abc""#));
        assert!(out.starts_with(r#"{"id":""#));
    }

    #[test]
    fn json_rejects_tampered_id() {
        let line = r#"{"id":"00","source":"s","vuln_code":"a","fixed_code":"b"}"#;
        let err = serde_json::from_str::<FunctionPair>(line).unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_idempotent_and_shrinking(s in "\\PC*") {
                let once = normalize_code(&s);
                prop_assert_eq!(normalize_code(&once), once.clone());
                prop_assert!(once.chars().count() <= s.chars().count());
            }

            #[test]
            fn cwe_round_trip(n in 1u32..1_000_000) {
                let c = CweId::new(n).unwrap();
                prop_assert_eq!(c.to_string().parse::<CweId>().unwrap(), c);
            }
        }
    }
}
