//! Curation pipeline for function-level vulnerability-fix datasets.
//!
//! Stages communicate through unified JSONL files of [`model::FunctionPair`]
//! records: ingest, CWE reconciliation against NVD, three-stage exact
//! deduplication, LLM relevance filtering and multi-agent verification,
//! scenario-driven synthesis of missing CWEs, and balanced benchmark assembly
//! with leakage removal and stratified splits.

pub mod model;
pub mod dedup;
pub mod ingest;
pub mod jsonl;
pub mod report;
pub mod llm;
pub mod agents;
pub mod rvg;
pub mod nvd;
pub mod benchmark;
pub mod review;
pub mod config;
pub mod manifest;
