//! Fixtures and reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;
use vulncurate::model::{CweId, FunctionPair, PairFields, Provenance, StatusTag};

pub fn cwe(s: &str) -> CweId {
    s.parse().unwrap()
}

pub fn pair(source: &str, vuln: &str, fixed: &str, cwes: &[&str]) -> FunctionPair {
    FunctionPair::new(PairFields {
        source: source.into(),
        cwes: cwes.iter().map(|c| cwe(c)).collect(),
        language: "c".into(),
        vuln_code: vuln.into(),
        fixed_code: fixed.into(),
        ..Default::default()
    })
    .unwrap()
}

pub fn verified(mut p: FunctionPair) -> FunctionPair {
    p.mark(StatusTag::Verified);
    p
}

pub fn synthesized(vuln: &str, fixed: &str, c: &str) -> FunctionPair {
    let mut p = FunctionPair::new(PairFields {
        source: "rvg".into(),
        cwes: vec![cwe(c)],
        language: "python".into(),
        vuln_code: vuln.into(),
        fixed_code: fixed.into(),
        provenance: Provenance::Synthesized,
        ..Default::default()
    })
    .unwrap();
    p.mark(StatusTag::Verified);
    p
}

/// Tags a pair with its position so survivors can be compared by identity.
pub fn tag(mut p: FunctionPair, idx: usize) -> FunctionPair {
    p.extra.insert("idx".into(), Value::from(idx));
    p
}

pub fn idx(p: &FunctionPair) -> usize {
    p.extra["idx"].as_u64().unwrap() as usize
}

/// Whitespace stripping written out independently of the library.
pub fn strip(code: &str) -> String {
    let mut out = String::with_capacity(code.len());
    for c in code.chars() {
        if !c.is_whitespace() {
            out.push(c);
        }
    }
    out
}

/// Direct O(n²) normalized-text comparison for the three dedup stages.
/// Each function returns the positions (into its input) that survive.
pub mod oracle {
    use super::strip;
    use vulncurate::model::FunctionPair;

    fn texts(corpus: &[FunctionPair]) -> Vec<(String, String)> {
        corpus.iter().map(|p| (strip(p.vuln_code()), strip(p.fixed_code()))).collect()
    }

    pub fn complete_pair(corpus: &[FunctionPair]) -> Vec<usize> {
        let t = texts(corpus);
        (0..t.len()).filter(|&i| (0..i).all(|j| t[j] != t[i])).collect()
    }

    pub fn self_identical(corpus: &[FunctionPair]) -> Vec<usize> {
        let t = texts(corpus);
        (0..t.len()).filter(|&i| t[i].0 != t[i].1).collect()
    }

    pub fn cross_matched(corpus: &[FunctionPair]) -> Vec<usize> {
        let t = texts(corpus);
        (0..t.len())
            .filter(|&i| (0..t.len()).all(|j| j == i || t[j].1 != t[i].0))
            .collect()
    }

    pub fn pick(corpus: &[FunctionPair], keep: &[usize]) -> Vec<FunctionPair> {
        keep.iter().map(|&i| corpus[i].clone()).collect()
    }
}

const SPACES: [&str; 7] = [" ", "  ", "\t", "\n", "\r\n", "\u{a0}", "\u{3000}"];

/// Re-renders `base` with random whitespace between its tokens.
fn dress(base: &str, rng: &mut ChaCha20Rng) -> String {
    let mut out = String::new();
    for (i, tok) in base.split(' ').enumerate() {
        if i > 0 && rng.random_bool(0.8) {
            out.push_str(SPACES[rng.random_range(0..SPACES.len())]);
        }
        out.push_str(tok);
    }
    if rng.random_bool(0.3) {
        out.push('\n');
    }
    out
}

/// Random corpus of at most `max` pairs drawn from a small pool of code
/// bodies, so complete duplicates, self-identical pairs and cross matches
/// all occur. Every pair carries its position as `idx`.
pub fn random_corpus(rng: &mut ChaCha20Rng, max: usize) -> Vec<FunctionPair> {
    let n = rng.random_range(0..=max);
    let pool_size = (n / 3).max(2);
    let pool: Vec<String> = (0..pool_size)
        .map(|k| format!("int f{k} ( int x ) {{ return x + {} ; }}", k % 7))
        .collect();
    let sources = ["bigvul", "cvefixes", "primevul"];
    let mut out: Vec<FunctionPair> = Vec::with_capacity(n);
    for i in 0..n {
        let roll: f64 = rng.random();
        let p = if roll < 0.2 && !out.is_empty() {
            let j = rng.random_range(0..out.len());
            let prev = &out[j];
            let source = sources[rng.random_range(0..sources.len())];
            pair(source, &dress(&strip_to_spaced(prev.vuln_code()), rng), &dress(&strip_to_spaced(prev.fixed_code()), rng), &["CWE-787"])
        } else {
            let v = &pool[rng.random_range(0..pool.len())];
            let f = if roll < 0.3 { v.clone() } else { pool[rng.random_range(0..pool.len())].clone() };
            let source = sources[rng.random_range(0..sources.len())];
            pair(source, &dress(v, rng), &dress(&f, rng), &["CWE-787"])
        };
        out.push(tag(p, i));
    }
    out
}

/// Collapses any whitespace run to one space so a dressed text can be dressed again.
fn strip_to_spaced(code: &str) -> String {
    code.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn shuffled(mut corpus: Vec<FunctionPair>, rng: &mut ChaCha20Rng) -> Vec<FunctionPair> {
    corpus.shuffle(rng);
    corpus
}

/// Assessment block in the shape the agents are asked to produce.
pub fn block(lines: &str) -> String {
    format!("Reasoning.\n===BEGIN_ASSESSMENT===\n{lines}\n===END_ASSESSMENT===\n")
}

/// Local HTTP responder shaped like the NVD CVE API. Unknown CVEs get
/// `totalResults: 0`; CVEs in `fail` get HTTP 503.
pub struct NvdStub {
    pub base_url: String,
    pub hits: Arc<AtomicUsize>,
}

pub fn nvd_stub(map: HashMap<String, Vec<String>>, fail: Vec<String>) -> NvdStub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) | Err(_) => break,
                    Ok(_) if line == "\r\n" => break,
                    Ok(_) => {}
                }
            }
            let cve = request_line
                .split_whitespace()
                .nth(1)
                .and_then(|p| p.split("cveId=").nth(1))
                .unwrap_or("")
                .to_string();
            let (status, body) = if fail.contains(&cve) {
                ("503 Service Unavailable", "{}".to_string())
            } else if let Some(values) = map.get(&cve) {
                let descs: Vec<Value> = values.iter().map(|v| serde_json::json!({"lang": "en", "value": v})).collect();
                let body = serde_json::json!({
                    "totalResults": 1,
                    "vulnerabilities": [{"cve": {"id": cve, "weaknesses": [{"source": "nvd@nist.gov", "type": "Primary", "description": descs}]}}]
                });
                ("200 OK", body.to_string())
            } else {
                ("200 OK", r#"{"totalResults":0,"vulnerabilities":[]}"#.to_string())
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    NvdStub { base_url, hits }
}

pub fn nvd_map(items: &[(&str, &[&str])]) -> HashMap<String, Vec<String>> {
    items
        .iter()
        .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
        .collect()
}
