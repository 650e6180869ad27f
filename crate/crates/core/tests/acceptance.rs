//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use vulncurate::agents::curation::CurationAgents;
use vulncurate::agents::{AgentAssessment, AgentRole, PromptSet, Verdict};
use vulncurate::benchmark::{self, BenchmarkError};
use vulncurate::dedup::{self, DedupReport, Stage, StageCounts};
use vulncurate::llm::{Gateway, GatewayConfig, ScriptBuilder, Transcript};
use vulncurate::model::{normalize_code, FunctionPair, StatusTag};
use vulncurate::nvd::{self, NvdClient, NvdConfig};
use vulncurate::report::{self, DistributionRow, DuplicationSummary, Top25};
use vulncurate::review::{correctness, ReviewSession, ReviewState, SessionManifest, VerdictInput};
use vulncurate::rvg::{self, RvgError, Synthesizer};

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fast_gateway() -> Gateway {
    let cfg = GatewayConfig {
        base_delay: Duration::ZERO,
        ..GatewayConfig::default()
    };
    Gateway::new(cfg, Transcript::memory())
}

// ---------------------------------------------------------------------------
// Deduplication
// ---------------------------------------------------------------------------

fn dedup_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(0x5eed_0001);
    let mut discrepancies = 0usize;
    let mut checked = 0usize;
    for _ in 0..100 {
        let corpus = random_corpus(&mut rng, 500);
        let want1 = oracle::pick(&corpus, &oracle::complete_pair(&corpus));
        let (got1, r1) = dedup::dedup_complete_pairs(corpus.clone());
        let want2 = oracle::pick(&want1, &oracle::self_identical(&want1));
        let (got2, r2) = dedup::dedup_self_identical(want1.clone());
        let want3 = oracle::pick(&want2, &oracle::cross_matched(&want2));
        let (got3, r3) = dedup::dedup_cross_matched(want2.clone());
        for (got, want, removed, before) in [
            (&got1, &want1, r1, corpus.len()),
            (&got2, &want2, r2, want1.len()),
            (&got3, &want3, r3, want2.len()),
        ] {
            let g: Vec<usize> = got.iter().map(idx).collect();
            let w: Vec<usize> = want.iter().map(idx).collect();
            if g != w || removed != before - want.len() {
                discrepancies += 1;
            }
            checked += 1;
        }
        let (all, _) = dedup::dedup_all_stages("x", corpus);
        if all.iter().map(idx).collect::<Vec<_>>() != want3.iter().map(idx).collect::<Vec<_>>() {
            discrepancies += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(discrepancies == 0, format!("{discrepancies} discrepancies over {checked} stage runs"))?;
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("100 corpora, {checked} stage runs, 0 discrepancies, {:.1}s", elapsed.as_secs_f64()))
}

fn dedup_idempotence_and_permutation() -> Outcome {
    let mut rng = rng(0x5eed_0002);
    for case in 0..1000 {
        let corpus = random_corpus(&mut rng, 120);
        let (survivors, report) = dedup::dedup_all_stages("x", corpus.clone());
        ensure(report.is_consistent(), format!("case {case}: inconsistent report"))?;
        let (again, second) = dedup::dedup_all_stages("x", survivors.clone());
        ensure(again == survivors, format!("case {case}: second pass changed survivors"))?;
        ensure(
            second.stages.iter().all(|s| s.removed == 0),
            format!("case {case}: second pass removed records"),
        )?;
        let (perm_survivors, perm_report) = dedup::dedup_all_stages("x", shuffled(corpus, &mut rng));
        ensure(perm_report == report, format!("case {case}: counts changed under permutation"))?;
        let fps = |c: &[FunctionPair]| {
            let mut v: Vec<String> = c.iter().map(|p| p.fingerprint().to_hex()).collect();
            v.sort();
            v
        };
        ensure(
            fps(&perm_survivors) == fps(&survivors),
            format!("case {case}: surviving fingerprints changed under permutation"),
        )?;
    }
    Ok("1000 corpora: idempotent, counts permutation-invariant".into())
}

fn duplication_table_percentages() -> Outcome {
    let row = |scope: &str, initial: usize, r1: usize, r2: usize, r3: usize| {
        let s1 = StageCounts::new(initial, r1);
        let s2 = StageCounts::new(s1.remaining, r2);
        let s3 = StageCounts::new(s2.remaining, r3);
        DedupReport {
            scope: scope.into(),
            stages: [s1, s2, s3],
        }
    };
    let bigvul = row("BigVul", 188_635, 161, 177_842, 351);
    let summary = report::duplication_summary(std::slice::from_ref(&bigvul));
    let expected_cells = [
        (Stage::CompletePair, "161 (0.08%)"),
        (Stage::SelfIdentical, "177,842 (94.36%)"),
        (Stage::CrossMatched, "351 (3.30%)"),
    ];
    let mut mismatches = Vec::new();
    for (stage, want) in expected_cells {
        let got = DuplicationSummary::removed_cell(&summary.rows[0], stage);
        if got != want {
            mismatches.push(format!("{:?}: got {got:?}, expected {want:?}", stage));
        }
    }
    let after: Vec<String> = DuplicationSummary::cells(&bigvul);
    ensure(
        after[1] == "188,474" && after[4] == "10,632" && after[7] == "10,281",
        format!("after-counts {after:?}"),
    )?;
    ensure(mismatches.is_empty(), mismatches.join("; "))?;
    Ok("BigVul removed cells match".into())
}

fn overlap_asymmetry() -> Outcome {
    let a: Vec<_> = (0..10).map(|i| pair("a", &format!("v{i}"), &format!("f{i}"), &[])).collect();
    let b: Vec<_> = (3..33).map(|i| pair("b", &format!("v {i}"), &format!("f\t{i}"), &[])).collect();
    let m = dedup::overlap_matrix([("A", a.as_slice()), ("B", b.as_slice())]).map_err(|e| e.to_string())?;
    let ab = m.cell("A", "B").unwrap();
    let ba = m.cell("B", "A").unwrap();
    ensure((ab.shared, ab.total) == (7, 10), format!("(A,B) counts {ab:?}"))?;
    ensure((ba.shared, ba.total) == (7, 30), format!("(B,A) counts {ba:?}"))?;
    ensure(ab.fraction() == 0.7, format!("(A,B) = {}", ab.fraction()))?;
    ensure(ba.fraction() == 7.0 / 30.0, format!("(B,A) = {}", ba.fraction()))?;
    ensure(format!("{:.4}", ba.fraction()) == "0.2333", "(B,A) does not round to 0.2333")?;
    Ok(format!("(A,B)={:.2} (B,A)={:.4}", ab.fraction(), ba.fraction()))
}

fn imbalance_ratio() -> Outcome {
    let counts = [
        3484, 3003, 3003, 2822, 2318, 1911, 1378, 1215, 1141, 1085, 762, 644, 620, 523, 494, 485, 318, 246, 184,
        179, 158, 100, 98, 71, 21,
    ];
    let total: usize = counts.iter().sum();
    let rows: Vec<DistributionRow> = Top25::default_2024()
        .cwes()
        .into_iter()
        .zip(counts)
        .map(|(cwe, count)| DistributionRow {
            cwe,
            count,
            top25: true,
            share: count as f64 / total as f64,
        })
        .collect();
    ensure(rows.len() == 25, "expected 25 rows")?;
    let got = report::imbalance_ratio(&rows).map_err(|e| e.to_string())?;
    ensure(got == "166:1", format!("got {got}"))?;
    Ok(got)
}

// ---------------------------------------------------------------------------
// Agents
// ---------------------------------------------------------------------------

/// 20 pairs with consensus scores `i % 4`, every reply keyed by exact prompt digest.
fn consensus_fixture() -> (Vec<FunctionPair>, ScriptBuilder, BTreeMap<String, u8>) {
    let pairs: Vec<FunctionPair> = (0..20)
        .map(|i| pair("t", &format!("int g{i}(char*b){{b[9]=0;}}"), &format!("int g{i}(char*b){{if(n<9)b[n]=0;}}"), &["CWE-787"]))
        .collect();
    let probe = CurationAgents::new(Arc::new(fast_gateway()), "m", Arc::new(PromptSet::default()));
    let mut script = ScriptBuilder::new();
    let mut scores = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        let aud = AgentAssessment::new(AgentRole::Auditor, Verdict::SecurityFix, format!("bounds check {i}"), None).unwrap();
        let cri = AgentAssessment::new(AgentRole::Critic, Verdict::SecurityFix, format!("agrees {i}"), None).unwrap();
        let score = (i % 4) as u8;
        script.respond("auditor", &probe.audit_prompt(p), block(&format!("VERDICT: security_fix\nEVIDENCE: bounds check {i}")));
        script.respond("critic", &probe.critique_prompt(p, &aud), block(&format!("VERDICT: security_fix\nEVIDENCE: agrees {i}")));
        script.respond("consensus", &probe.consensus_prompt(p, &aud, &cri), block(&format!("SCORE: {score}\nVERDICT: security_fix")));
        scores.insert(p.id().to_string(), score);
    }
    (pairs, script, scores)
}

fn consensus_determinism_and_monotonicity() -> Outcome {
    let (pairs, script, scores) = consensus_fixture();
    let run = |threshold: u8, workers: usize| {
        let gw = fast_gateway().with_backend("m", Arc::new(script.build()));
        let agents = CurationAgents::new(Arc::new(gw), "m", Arc::new(PromptSet::default()));
        let out = agents.verify_corpus(pairs.clone(), threshold, workers).map_err(|e| e.to_string())?;
        if !out.failures.is_empty() {
            return Err(format!("{} failures", out.failures.len()));
        }
        let survivors: Vec<String> = out.survivors.iter().map(|p| p.id().to_string()).collect();
        let snapshot = serde_json::to_string(&(
            &out.survivors,
            &out.rejected,
            &out.log,
        ))
        .unwrap();
        Ok::<_, String>((survivors, snapshot))
    };
    let mut sets: Vec<BTreeSet<String>> = Vec::new();
    for threshold in 0..=3u8 {
        let (reference, reference_snapshot) = run(threshold, 1)?;
        for workers in [1, 4] {
            for rep in 0..5 {
                let (_, snap) = run(threshold, workers)?;
                ensure(
                    snap == reference_snapshot,
                    format!("threshold {threshold}, workers {workers}, run {rep}: output differs"),
                )?;
            }
        }
        let expected: Vec<String> = pairs
            .iter()
            .filter(|p| scores[p.id()] >= threshold)
            .map(|p| p.id().to_string())
            .collect();
        ensure(reference == expected, format!("threshold {threshold}: survivors differ from score subset"))?;
        sets.push(reference.into_iter().collect());
    }
    for t in 1..sets.len() {
        ensure(sets[t].is_subset(&sets[t - 1]), format!("survivors({t}) not within survivors({})", t - 1))?;
    }
    let sizes: Vec<usize> = sets.iter().map(BTreeSet::len).collect();
    Ok(format!("survivor counts by threshold 0..3: {sizes:?}; 5 runs x workers {{1,4}} identical"))
}

fn rvg_end_to_end() -> Outcome {
    let cwe798 = cwe("CWE-798");
    let ctx_reply = |f: &str| {
        block(&format!(
            "LANGUAGE: python\nTECH_STACK: flask\nUSER_ROLES: admin, guest\nFUNCTIONALITY: {f}\nATTACK_VECTOR: read the source"
        ))
    };
    let funcs = ["f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8"];
    let probe_gw = fast_gateway();
    let probe = Synthesizer::new(Arc::new(probe_gw), "synth", Arc::new(PromptSet::default()));
    let mut s = ScriptBuilder::new();
    for f in funcs {
        s.respond_any("modeler", ctx_reply(f));
    }
    let approve = block("PRESENT: yes\nMITIGATED: yes\nEVIDENCE: env lookup");
    let reject = block("PRESENT: yes\nMITIGATED: no\nEVIDENCE: still hardcoded");
    s.respond_any("reviewer", approve.clone());
    s.respond_any("validator", approve);
    for f in funcs {
        let ctx = rvg::parse_context(&ctx_reply(f), cwe798).unwrap();
        let vuln = format!("def {f}():\n    PASSWORD = 'hunter2'\n    return PASSWORD");
        let fixed = format!("def {f}():\n    PASSWORD = os.environ['PW']\n    return PASSWORD");
        s.respond("implementer", &probe.implementer_prompt(&ctx), format!("```python\n{vuln}\n```"));
        s.respond("fixer", &probe.fixer_prompt(&vuln, &ctx), format!("```python\n{fixed}\n```"));
        let judge_prompt = probe.reviewer_prompt(&vuln, &fixed, cwe798, "python");
        match f {
            "f3" | "f7" | "f8" => {
                s.respond("reviewer", &judge_prompt, reject.clone());
            }
            "f6" => {
                s.respond("validator", &judge_prompt, reject.clone());
            }
            _ => {}
        }
    }
    // f1, f2 accepted; f3 rejected then f4; f5; f6, f7, f8 all rejected.
    let scripted_accepted = 4;
    let gw = fast_gateway()
        .with_backend("synth", Arc::new(s.build()))
        .with_backend("judge", Arc::new(s.build()));
    let synth = Synthesizer::new(Arc::new(gw), "synth", Arc::new(PromptSet::default()));
    let mut history = Vec::new();
    let outcomes = synth.synthesize(cwe798, 5, "judge", &mut history).map_err(|e| e.to_string())?;
    ensure(outcomes.len() == 5, format!("{} outcomes", outcomes.len()))?;
    let accepted: Vec<_> = outcomes.iter().filter(|o| o.accepted()).collect();
    ensure(
        accepted.len() >= scripted_accepted,
        format!("{} accepted, scripted {scripted_accepted}", accepted.len()),
    )?;
    let mut keys = HashSet::new();
    for o in &accepted {
        let p = o.pair.as_ref().unwrap();
        ensure(
            normalize_code(p.vuln_code()) != normalize_code(p.fixed_code()),
            format!("pair {} has identical normalized code", p.id()),
        )?;
        let ctx = o.context.as_ref().ok_or("accepted outcome without context")?;
        let key = ctx.uniqueness_key();
        ensure(keys.insert((key.0.to_string(), key.1.to_string(), key.2.to_string())), "repeated scenario tuple")?;
        ensure(p.has(StatusTag::Verified) && p.cve().is_none(), "accepted pair not verified or carries a CVE")?;
    }
    let any = outcomes[0].pair.clone().unwrap();
    ensure(
        matches!(synth.cross_validate(&any, "synth"), Err(RvgError::SameBackend(_))),
        "cross_validate with the synthesis backend did not error",
    )?;
    ensure(
        matches!(synth.synthesize(cwe798, 1, "synth", &mut history), Err(RvgError::SameBackend(_))),
        "synthesize with the synthesis backend as validator did not error",
    )?;
    Ok(format!("5 outcomes, {} accepted (scripted {scripted_accepted}), SameBackend raised", accepted.len()))
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

fn benchmark_assembly() -> Outcome {
    let top25 = Top25::default_2024().cwes();
    let mut rng = rng(0x5eed_0003);
    let mut real = Vec::new();
    let mut synth = Vec::new();
    let mut real_counts = HashMap::new();
    for (k, c) in top25.iter().enumerate() {
        let name = c.to_string();
        let n_real = if k < 20 { rng.random_range(50..80) } else { rng.random_range(5..45) };
        real_counts.insert(*c, n_real);
        for i in 0..n_real {
            real.push(verified(pair("bigvul", &format!("r {name} {i}"), &format!("r {name} {i} fix"), &[&name])));
        }
        for i in 0..60 {
            synth.push(synthesized(&format!("s {name} {i}"), &format!("s {name} {i} fix"), &name));
        }
    }
    // interleave so input order is not grouped by CWE
    let mut real = shuffled(real, &mut rng);
    real.iter_mut().enumerate().for_each(|(i, p)| {
        p.extra.insert("idx".into(), serde_json::Value::from(i));
    });
    let bench = benchmark::assemble(&real, &synth, &top25, 50).map_err(|e| e.to_string())?;
    ensure(bench.len() == 1250, format!("{} pairs", bench.len()))?;
    for c in &top25 {
        let picked: Vec<&FunctionPair> = bench.iter().filter(|p| p.primary_cwe() == Some(*c)).collect();
        ensure(picked.len() == 50, format!("{c}: {} pairs", picked.len()))?;
        let n_real = real_counts[c].min(50);
        let reals: Vec<&&FunctionPair> = picked.iter().filter(|p| p.source() == "bigvul").collect();
        ensure(reals.len() == n_real, format!("{c}: {} real, expected {n_real}", reals.len()))?;
        ensure(
            picked[..n_real].iter().all(|p| p.source() == "bigvul"),
            format!("{c}: synthesized pair placed before real ones"),
        )?;
        let want: Vec<usize> = real.iter().filter(|p| p.primary_cwe() == Some(*c)).take(n_real).map(idx).collect();
        let got: Vec<usize> = reals.iter().map(|p| idx(p)).collect();
        ensure(got == want, format!("{c}: real pairs are not the first {n_real} in input order"))?;
        ensure(picked.iter().all(|p| p.has(StatusTag::Benchmark)), format!("{c}: untagged pair"))?;
    }

    let deficient: Vec<FunctionPair> = Vec::new();
    let mut expected: Vec<(String, usize)> = top25[20..]
        .iter()
        .map(|c| (c.to_string(), 50 - real_counts[c]))
        .collect();
    expected.sort();
    match benchmark::assemble(&real, &deficient, &top25, 50) {
        Err(BenchmarkError::InsufficientSamples(list)) => {
            let mut got: Vec<(String, usize)> = list.iter().map(|s| (s.cwe.to_string(), s.shortfall)).collect();
            got.sort();
            ensure(got == expected, format!("shortfall listing {got:?}, expected {expected:?}"))?;
        }
        other => return Err(format!("deficient fixture did not abort: {:?}", other.map(|b| b.len()))),
    }
    Ok("1250 pairs, 50 per CWE, real-first; deficient fixture lists all 5 shortfalls".into())
}

fn leakage_removal() -> Outcome {
    let mut rng = rng(0x5eed_0004);
    for case in 0..200 {
        let bench = random_corpus(&mut rng, 60);
        let mut training = random_corpus(&mut rng, 120);
        // copy some benchmark pairs into training, re-dressed and under another source
        for p in bench.iter().filter(|_| rng.random_bool(0.3)) {
            training.push(pair("other", &format!(" {}\n", p.vuln_code()), &format!("\t{}", p.fixed_code()), &[]));
        }
        let clean = benchmark::remove_leakage(training.clone(), &bench);
        let leaks = benchmark::leakage_check(&bench, &clean);
        ensure(leaks.is_empty(), format!("case {case}: {} leaks remain", leaks.len()))?;
        let bench_texts: HashSet<(String, String)> = bench.iter().map(|p| (strip(p.vuln_code()), strip(p.fixed_code()))).collect();
        let kept = training
            .iter()
            .filter(|t| !bench_texts.contains(&(strip(t.vuln_code()), strip(t.fixed_code()))))
            .count();
        ensure(kept == clean.len(), format!("case {case}: removed more than the leaking records"))?;
    }
    Ok("200 random cases, no leakage after removal".into())
}

fn stratified_splits() -> Outcome {
    let sizes = [("CWE-79", 310), ("CWE-787", 240), ("CWE-89", 170), ("CWE-416", 130), ("CWE-20", 90), ("CWE-22", 47), ("CWE-352", 13)];
    let mut corpus = Vec::new();
    for (c, n) in sizes {
        for i in 0..n {
            corpus.push(pair("s", &format!("{c} v {i}"), &format!("{c} f {i}"), &[c]));
        }
    }
    ensure(corpus.len() == 1000, "fixture size")?;
    let ratios = [0.70, 0.15, 0.15];
    let corpus = shuffled(corpus, &mut rng(9));
    let splits = benchmark::split_export(corpus.clone(), ratios, 42).map_err(|e| e.to_string())?;
    ensure(splits.counts().iter().sum::<usize>() == 1000, "records lost")?;
    let mut worst = 0.0f64;
    for (c, n) in sizes {
        let per = [&splits.train, &splits.validation, &splits.test].map(|s| s.iter().filter(|p| p.primary_cwe() == Some(cwe(c))).count());
        for (k, got) in per.iter().enumerate() {
            let dev = (*got as f64 - ratios[k] * n as f64).abs();
            worst = worst.max(dev);
            ensure(dev < 1.0, format!("{c} split {k}: {got} vs {:.2}", ratios[k] * n as f64))?;
        }
    }
    let again = benchmark::split_export(corpus.clone(), ratios, 42).map_err(|e| e.to_string())?;
    let ids = |s: &benchmark::Splits| {
        [&s.train, &s.validation, &s.test].map(|v| v.iter().map(|p| p.id().to_string()).collect::<BTreeSet<_>>())
    };
    ensure(ids(&again) == ids(&splits), "same seed gave different membership")?;
    let other = benchmark::split_export(corpus, ratios, 43).map_err(|e| e.to_string())?;
    ensure(ids(&other) != ids(&splits), "a different seed gave identical membership")?;

    let ten: Vec<_> = (0..10).map(|i| pair("s", &format!("t{i}"), &format!("u{i}"), &["CWE-94"])).collect();
    let small = benchmark::split_export(ten, ratios, 1).map_err(|e| e.to_string())?;
    ensure(small.counts() == [7, 2, 1], format!("10-record stratum split {:?}", small.counts()))?;
    Ok(format!("max per-stratum deviation {worst:.2}; seed-stable; 10 -> 7/2/1"))
}

// ---------------------------------------------------------------------------
// Review
// ---------------------------------------------------------------------------

fn review_arithmetic_and_replay() -> Outcome {
    let pool: Vec<_> = (0..275).map(|i| pair("benchmark", &format!("rv{i}"), &format!("rf{i}"), &["CWE-79"])).collect();
    let manifest = SessionManifest {
        pool: pool.iter().map(|p| p.id().to_string()).collect(),
        seed: 7,
        reviewers: vec!["r1".into(), "r2".into(), "r3".into()],
        reviews_per_pair: 1,
        sample_size: None,
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("verdicts.jsonl");
    let session = ReviewSession::open(manifest.clone(), pool.clone(), &log).map_err(|e| e.to_string())?;
    let mut submitted = 0usize;
    for reviewer in ["r1", "r2", "r3"] {
        while let Some(p) = session.next_assignment(reviewer).map_err(|e| e.to_string())? {
            let bad = submitted >= 253;
            session
                .submit_verdict(VerdictInput {
                    pair_id: p.id().to_string(),
                    reviewer: reviewer.into(),
                    genuine: true,
                    self_contained: !(bad && submitted.is_multiple_of(2)),
                    cwe_correct: !(bad && submitted % 2 == 1),
                    notes: None,
                })
                .map_err(|e| e.to_string())?;
            submitted += 1;
        }
    }
    ensure(submitted == 275, format!("{submitted} verdicts"))?;
    let state = session.snapshot();
    let c = correctness(&state.verdicts).map_err(|e| e.to_string())?;
    ensure((c - 0.92).abs() < 1e-12, format!("correctness {c}"))?;
    ensure(session.progress().correctness == Some(c), "progress disagrees")?;

    let replayed = ReviewState::replay(&manifest, &state.verdicts).map_err(|e| e.to_string())?;
    ensure(replayed == state, "replay of the verdict list differs")?;
    drop(session);
    let reopened = ReviewSession::open(manifest, pool, &log).map_err(|e| e.to_string())?;
    ensure(reopened.snapshot() == state, "reopening the log gave a different state")?;
    Ok(format!("275 verdicts, 253 correct, correctness {c:.2}; replay identical"))
}

// ---------------------------------------------------------------------------
// Hermeticity
// ---------------------------------------------------------------------------

fn hermeticity() -> Outcome {
    for var in ["LLM_API_KEY", "LLM_BASE_URL", "NVD_API_KEY", "OPENAI_API_KEY"] {
        ensure(std::env::var_os(var).is_none(), format!("{var} is set"))?;
    }
    let live = vulncurate::llm::BackendSpec::Openai {
        name: "live".into(),
        model: "m".into(),
        base_url: None,
    };
    ensure(live.build().is_err(), "a live backend could be built without credentials")?;

    let stub = nvd_stub(nvd_map(&[("CVE-2021-0001", &["CWE-79"])]), vec![]);
    let cfg = NvdConfig {
        base_url: stub.base_url.clone(),
        request_interval: Some(Duration::ZERO),
        retry_delay: Duration::from_millis(1),
        ..NvdConfig::default()
    };
    ensure(cfg.api_key.is_none(), "NVD key configured")?;
    let client = NvdClient::new(cfg).map_err(|e| e.to_string())?;
    let corpus = vec![vulncurate::model::FunctionPair::new(vulncurate::model::PairFields {
        source: "s".into(),
        cve: Some("CVE-2021-0001".into()),
        cwes: vec![cwe("CWE-20")],
        vuln_code: "a".into(),
        fixed_code: "b".into(),
        ..Default::default()
    })
    .unwrap()];
    let (out, _) = nvd::reconcile(corpus, &client, 0.0).map_err(|e| e.to_string())?;
    ensure(out[0].cwes == vec![cwe("CWE-79")], "stub label not applied")?;
    ensure(stub.base_url.starts_with("http://127.0.0.1:"), "stub is not local")?;

    let (pairs, script, _) = consensus_fixture();
    let gw = Arc::new(fast_gateway().with_backend("m", Arc::new(script.build())));
    CurationAgents::new(gw.clone(), "m", Arc::new(PromptSet::default()))
        .verify_corpus(pairs, 2, 2)
        .map_err(|e| e.to_string())?;
    ensure(gw.backend_kinds().iter().all(|(_, k)| *k == "scripted"), "non-scripted backend registered")?;

    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests");
    let mut offenders = Vec::new();
    for entry in walk(std::path::Path::new(dir)) {
        let text = std::fs::read_to_string(&entry).unwrap_or_default();
        for (n, line) in text.lines().enumerate() {
            for scheme in [format!("{}://", "http"), format!("{}://", "https")] {
                for (pos, _) in line.match_indices(&scheme) {
                    let rest = &line[pos + scheme.len()..];
                    if !(rest.starts_with("127.0.0.1") || rest.starts_with("localhost") || rest.starts_with('{')) {
                        offenders.push(format!("{}:{}", entry.display(), n + 1));
                    }
                }
            }
        }
    }
    ensure(offenders.is_empty(), format!("non-local URLs in tests: {offenders:?}"))?;
    Ok(format!("no credentials; NVD stub served {} request(s) on localhost; scripted backends only", stub.hits.load(std::sync::atomic::Ordering::SeqCst)))
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else if p.extension().is_some_and(|x| x == "rs") {
            out.push(p);
        }
    }
    out
}

fn main() {
    // Credentials must never reach the suite.
    for var in ["LLM_API_KEY", "LLM_BASE_URL", "NVD_API_KEY", "OPENAI_API_KEY"] {
        std::env::remove_var(var);
    }
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 12] = [
        ("dedup oracle equivalence", dedup_oracle_equivalence),
        ("dedup idempotence and permutation-invariant counts", dedup_idempotence_and_permutation),
        ("duplication table percentage rendering", duplication_table_percentages),
        ("overlap asymmetry", overlap_asymmetry),
        ("imbalance ratio", imbalance_ratio),
        ("consensus determinism and monotonicity", consensus_determinism_and_monotonicity),
        ("synthesis end to end with scripted backends", rvg_end_to_end),
        ("benchmark assembly", benchmark_assembly),
        ("leakage removal", leakage_removal),
        ("stratified splits", stratified_splits),
        ("review arithmetic and replay", review_arithmetic_and_replay),
        ("hermeticity", hermeticity),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.2}s)"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason} ({secs:.2}s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
