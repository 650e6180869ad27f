use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vulncurate::agents::curation::CurationAgents;
use vulncurate::benchmark;
use vulncurate::config::RunConfig;
use vulncurate::dedup::{overlap_matrix, run_dedup_pipeline};
use vulncurate::ingest::{load_dataset, AdapterConfig, LoadMode};
use vulncurate::jsonl;
use vulncurate::llm::{Gateway, Transcript};
use vulncurate::manifest::StageManifest;
use vulncurate::model::{CweId, FunctionPair, Provenance};
use vulncurate::nvd::{reconcile, NvdClient, NvdConfig};
use vulncurate::report::{self, TableFormat};
use vulncurate::review::{ReviewSession, SessionManifest};
use vulncurate::rvg::{synthesis_report, synthesis_report_csv, Synthesizer};

#[derive(Parser)]
#[command(name = "vulncurate", version, about = "Curate vulnerability-fix datasets into training sets and a balanced benchmark")]
struct Cli {
    /// Run configuration (JSON). Flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw dataset into unified JSONL.
    Ingest(IngestArgs),
    /// Reconcile CWE labels against the NVD.
    NvdSync(NvdArgs),
    /// Three-stage deduplication, per dataset and merged.
    Dedup(DedupArgs),
    /// LLM relevance filter.
    Filter(AgentArgs),
    /// Auditor, critic and consensus verification.
    Verify(VerifyArgs),
    /// Generate synthetic pairs for under-represented CWEs.
    Synthesize(SynthArgs),
    /// Build the balanced benchmark and remove leakage from training data.
    Assemble(AssembleArgs),
    /// Stratified train/validation/test split.
    Split(SplitArgs),
    /// CWE distribution table and imbalance ratio.
    Stats(StatsArgs),
    /// Serve the human review API.
    ReviewServe(ReviewArgs),
    /// Human review commands.
    Review {
        #[command(subcommand)]
        command: ReviewCommand,
    },
}

#[derive(Subcommand)]
enum ReviewCommand {
    /// Serve the human review API.
    Serve(ReviewArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Dataset name; selects the shipped adapter unless --adapter is given.
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    adapter: Option<PathBuf>,
    #[arg(long, default_value = "lenient")]
    mode: LoadMode,
}

#[derive(Args)]
struct NvdArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    nvd_url: Option<String>,
    #[arg(long)]
    failure_budget: Option<f64>,
}

#[derive(Args)]
struct DedupArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Comma-separated dataset names, most trusted first.
    #[arg(long, value_delimiter = ',')]
    priority: Vec<String>,
    #[arg(long, default_value = "csv")]
    format: TableFormat,
}

#[derive(Args)]
struct AgentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    agent: AgentArgs,
    #[arg(long)]
    consensus_threshold: Option<u8>,
}

#[derive(Args)]
struct SynthArgs {
    /// CWEs to synthesize; defaults to the quota deficits of --input.
    #[arg(long, value_delimiter = ',')]
    cwe: Vec<CweId>,
    /// Samples per CWE when --cwe is given.
    #[arg(long, short = 'n')]
    count: Option<usize>,
    /// Verified real pairs used to compute deficits.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    quota: Option<usize>,
    #[arg(long)]
    synth_backend: Option<String>,
    #[arg(long)]
    validator_backend: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct AssembleArgs {
    /// Verified or reviewed real pairs.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    synthesized: Option<PathBuf>,
    /// Training corpus to clean of benchmark leakage.
    #[arg(long)]
    training: Option<PathBuf>,
    #[arg(long)]
    quota: Option<usize>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Train, validation and test ratios.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    ratios: Option<Vec<f64>>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
}

#[derive(Args)]
struct ReviewArgs {
    /// Pairs to review (JSONL).
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    reviewers: Vec<String>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 1)]
    reviews_per_pair: usize,
    /// Review only this many pairs drawn from the pool.
    #[arg(long)]
    sample: Option<usize>,
    /// Verdict log; defaults to <output>/verdicts.jsonl.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Built review UI to serve at /.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::NvdSync(_) => "nvd-sync",
            Command::Dedup(_) => "dedup",
            Command::Filter(_) => "filter",
            Command::Verify(_) => "verify",
            Command::Synthesize(_) => "synthesize",
            Command::Assemble(_) => "assemble",
            Command::Split(_) => "split",
            Command::Stats(_) => "stats",
            Command::ReviewServe(_) | Command::Review { .. } => "review-serve",
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn gateway(&self, stage: &str) -> Result<Arc<Gateway>> {
        let transcript = Transcript::file(&self.path(&format!("{stage}.transcript.jsonl")))
            .context("opening transcript")?;
        Ok(Arc::new(self.cfg.gateway(transcript)?))
    }

    fn backend(&self, flag: Option<String>, configured: Option<&String>, what: &str) -> Result<String> {
        flag.or_else(|| configured.cloned())
            .or_else(|| self.cfg.backends.first().map(|b| b.name().to_string()))
            .with_context(|| format!("no {what} backend: define one in the config"))
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.path(&format!("{stage}.manifest.json"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    let stage = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let causes: Vec<String> = e.chain().skip(1).map(ToString::to_string).collect();
            let summary = json!({"error": {"stage": stage, "message": e.to_string(), "causes": causes}});
            eprintln!("{summary}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    let out = cli.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(cfg.seed),
        cfg,
        out,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::NvdSync(a) => nvd_sync(&ctx, a),
        Command::Dedup(a) => dedup(&ctx, a),
        Command::Filter(a) => filter(&ctx, a),
        Command::Verify(a) => verify(&ctx, a),
        Command::Synthesize(a) => synthesize(&ctx, a),
        Command::Assemble(a) => assemble(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
        Command::ReviewServe(a) | Command::Review { command: ReviewCommand::Serve(a) } => review_serve(&ctx, a),
    }
}

fn read_pairs(path: &Path) -> Result<Vec<FunctionPair>> {
    jsonl::read_pairs(path).with_context(|| format!("reading {}", path.display()))
}

fn write_pairs(m: &mut StageManifest, path: &Path, pairs: &[FunctionPair]) -> Result<()> {
    jsonl::write_pairs(path, pairs)?;
    m.output(path)?;
    Ok(())
}

fn write_text(m: &mut StageManifest, path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    m.output(path)?;
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let adapter = match a.adapter.as_ref().or(ctx.cfg.adapters.get(&a.dataset)) {
        Some(p) => AdapterConfig::from_path(p)?,
        None => AdapterConfig::builtin(&a.dataset).with_context(|| {
            let known: Vec<_> = AdapterConfig::builtin_names().collect();
            format!("no adapter for {:?}; shipped adapters: {}", a.dataset, known.join(", "))
        })?,
    };
    let mut m = StageManifest::new(
        "ingest",
        json!({"dataset": a.dataset, "mode": format!("{:?}", a.mode).to_lowercase(), "adapter": adapter.dataset_name}),
    );
    m.input(&a.input)?;
    let loaded = load_dataset(&a.input, &adapter, a.mode)?;
    write_pairs(&mut m, &ctx.path(&format!("{}.jsonl", a.dataset)), &loaded.pairs)?;
    let errors = ctx.path(&format!("{}.row_errors.jsonl", a.dataset));
    jsonl::write(&errors, &loaded.row_errors)?;
    m.output(&errors)?;
    m.finish(&ctx.manifest_path(&format!("ingest-{}", a.dataset)))?;
    println!("{}: {} pairs, {} row errors", a.dataset, loaded.pairs.len(), loaded.row_errors.len());
    Ok(())
}

fn nvd_sync(ctx: &Ctx, a: NvdArgs) -> Result<()> {
    let mut nvd = NvdConfig::from_env();
    if let Some(url) = a.nvd_url.or_else(|| ctx.cfg.nvd.base_url.clone()) {
        nvd.base_url = url;
    }
    nvd.cache_path = a.cache.or_else(|| ctx.cfg.nvd.cache.clone()).or_else(|| Some(ctx.path("nvd_cache.jsonl")));
    nvd.ttl = chrono::Duration::days(ctx.cfg.nvd.ttl_days);
    if let Some(ms) = ctx.cfg.nvd.request_interval_ms {
        nvd.request_interval = Some(std::time::Duration::from_millis(ms));
    }
    let budget = a.failure_budget.unwrap_or(ctx.cfg.nvd.failure_budget);
    let client = NvdClient::new(nvd)?;
    let mut m = StageManifest::new("nvd-sync", json!({"failure_budget": budget, "ttl_days": ctx.cfg.nvd.ttl_days}));
    let mut combined = vulncurate::nvd::MismatchReport::default();
    for input in &a.input {
        m.input(input)?;
        let (pairs, report) = reconcile(read_pairs(input)?, &client, budget)?;
        write_pairs(&mut m, &ctx.path(&format!("{}.reconciled.jsonl", file_stem(input))), &pairs)?;
        for (source, c) in report.sources {
            let e = combined.sources.entry(source).or_default();
            e.matched += c.matched;
            e.mismatched_corrected += c.mismatched_corrected;
            e.cve_absent += c.cve_absent;
            e.nvd_unresolved += c.nvd_unresolved;
        }
        combined.total_corrected += report.total_corrected;
    }
    write_text(&mut m, &ctx.path("mismatch_report.csv"), &combined.to_csv())?;
    m.finish(&ctx.manifest_path("nvd-sync"))?;
    println!("{} labels corrected across {} records", combined.total_corrected, combined.examined());
    Ok(())
}

fn dedup(ctx: &Ctx, a: DedupArgs) -> Result<()> {
    let mut corpora: BTreeMap<String, Vec<FunctionPair>> = BTreeMap::new();
    let mut m = StageManifest::new("dedup", json!({}));
    for input in &a.input {
        m.input(input)?;
        for p in read_pairs(input)? {
            corpora.entry(p.source().to_string()).or_default().push(p);
        }
    }
    let mut priority = if a.priority.is_empty() { ctx.cfg.priority.clone() } else { a.priority };
    for name in corpora.keys() {
        if !priority.contains(name) {
            priority.push(name.clone());
        }
    }
    m.parameters = json!({"priority": priority});
    let outcome = run_dedup_pipeline(corpora, &priority)?;
    write_pairs(&mut m, &ctx.path("deduped.jsonl"), &outcome.merged)?;
    let summary = report::duplication_summary(&outcome.reports);
    let ext = match a.format {
        TableFormat::Csv => "csv",
        TableFormat::Markdown => "md",
    };
    write_text(&mut m, &ctx.path(&format!("dedup_report.{ext}")), &summary.render(a.format))?;
    let non_empty: Vec<(&str, &[FunctionPair])> = outcome
        .intra
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(n, c)| (n.as_str(), c.as_slice()))
        .collect();
    let matrix = overlap_matrix(non_empty)?;
    write_text(&mut m, &ctx.path("overlap.csv"), &report::overlap_csv(&matrix))?;
    m.finish(&ctx.manifest_path("dedup"))?;
    print!("{}", summary.render(a.format));
    Ok(())
}

fn curation_agents(ctx: &Ctx, stage: &str, backend: Option<String>) -> Result<CurationAgents> {
    let backend = ctx.backend(backend, ctx.cfg.curation_backend.as_ref(), "curation")?;
    Ok(CurationAgents::new(ctx.gateway(stage)?, &backend, ctx.cfg.prompts()?))
}

fn write_failures(m: &mut StageManifest, path: &Path, failures: &[vulncurate::agents::curation::PairFailure]) -> Result<()> {
    let rows: Vec<_> = failures.iter().map(|f| json!({"pair_id": f.pair.id(), "error": f.error})).collect();
    jsonl::write(path, &rows)?;
    m.output(path)?;
    Ok(())
}

fn filter(ctx: &Ctx, a: AgentArgs) -> Result<()> {
    let agents = curation_agents(ctx, "filter", a.backend)?;
    let workers = a.workers.unwrap_or(ctx.cfg.workers);
    let mut m = StageManifest::new("filter", json!({"backend": agents.backend(), "workers": workers}));
    m.input(&a.input)?;
    let out = agents.filter_corpus(read_pairs(&a.input)?, workers)?;
    write_pairs(&mut m, &ctx.path("filtered.jsonl"), &out.kept)?;
    write_pairs(&mut m, &ctx.path("filter_dropped.jsonl"), &out.dropped)?;
    write_failures(&mut m, &ctx.path("filter_failures.jsonl"), &out.failures)?;
    m.finish(&ctx.manifest_path("filter"))?;
    println!("kept {}, dropped {}, failed {}", out.kept.len(), out.dropped.len(), out.failures.len());
    Ok(())
}

fn verify(ctx: &Ctx, a: VerifyArgs) -> Result<()> {
    let agents = curation_agents(ctx, "verify", a.agent.backend)?;
    let threshold = a.consensus_threshold.unwrap_or(ctx.cfg.consensus_threshold);
    let workers = a.agent.workers.unwrap_or(ctx.cfg.workers);
    let mut m = StageManifest::new(
        "verify",
        json!({"backend": agents.backend(), "consensus_threshold": threshold, "workers": workers}),
    );
    m.input(&a.agent.input)?;
    let out = agents.verify_corpus(read_pairs(&a.agent.input)?, threshold, workers)?;
    write_pairs(&mut m, &ctx.path("verified.jsonl"), &out.survivors)?;
    write_pairs(&mut m, &ctx.path("verify_rejected.jsonl"), &out.rejected)?;
    let log = ctx.path("assessments.jsonl");
    jsonl::write(&log, &out.log)?;
    m.output(&log)?;
    write_failures(&mut m, &ctx.path("verify_failures.jsonl"), &out.failures)?;
    m.finish(&ctx.manifest_path("verify"))?;
    println!(
        "verified {}, rejected {}, failed {}",
        out.survivors.len(),
        out.rejected.len(),
        out.failures.len()
    );
    Ok(())
}

fn synthesize(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let synth_backend = ctx.backend(a.synth_backend, ctx.cfg.synth_backend.as_ref(), "synthesis")?;
    let validator = a
        .validator_backend
        .or_else(|| ctx.cfg.validator_backend.clone())
        .context("no validator backend: set validator_backend or --validator-backend")?;
    let quota = a.quota.unwrap_or(ctx.cfg.quota);
    let top25 = ctx.cfg.top25()?;
    let mut m = StageManifest::new("synthesize", json!({}));
    let requests: Vec<(CweId, usize)> = if !a.cwe.is_empty() {
        let n = a.count.context("--count is required with --cwe")?;
        a.cwe.iter().map(|c| (*c, n)).collect()
    } else {
        let input = a.input.as_ref().context("give --cwe or --input")?;
        m.input(input)?;
        let real = read_pairs(input)?;
        benchmark::quota_plan(&real, &[], &top25.cwes(), quota).synth_needed()
    };
    let workers = a.workers.unwrap_or(ctx.cfg.workers);
    m.parameters = json!({
        "synth_backend": synth_backend,
        "validator_backend": validator,
        "requests": requests.iter().map(|(c, n)| json!({"cwe": c, "n": n})).collect::<Vec<_>>(),
    });
    let synth = Synthesizer::new(ctx.gateway("synthesize")?, &synth_backend, ctx.cfg.prompts()?).with_top25(top25);
    let runs = synth.synthesize_many(&requests, &validator, workers)?;
    let accepted: Vec<FunctionPair> = runs
        .iter()
        .flat_map(|(_, o)| o.iter().filter_map(|x| x.pair.clone()))
        .collect();
    write_pairs(&mut m, &ctx.path("synthesized.jsonl"), &accepted)?;
    let outcomes = ctx.path("synthesis_outcomes.jsonl");
    let rows: Vec<_> = runs
        .iter()
        .flat_map(|(_, o)| o.iter())
        .map(|o| {
            json!({"context": o.context, "pair_id": o.pair.as_ref().map(|p| p.id()), "attempts": o.attempts, "failure_reason": o.failure_reason})
        })
        .collect();
    jsonl::write(&outcomes, &rows)?;
    m.output(&outcomes)?;
    let report = synthesis_report_csv(&synthesis_report(&runs));
    write_text(&mut m, &ctx.path("synthesis_report.csv"), &report)?;
    m.finish(&ctx.manifest_path("synthesize"))?;
    print!("{report}");
    Ok(())
}

fn assemble(ctx: &Ctx, a: AssembleArgs) -> Result<()> {
    let quota = a.quota.unwrap_or(ctx.cfg.quota);
    let top25 = ctx.cfg.top25()?;
    let mut m = StageManifest::new("assemble", json!({"quota": quota, "cwes": top25.cwes()}));
    m.input(&a.input)?;
    let real = read_pairs(&a.input)?;
    let synth = match &a.synthesized {
        Some(p) => {
            m.input(p)?;
            read_pairs(p)?
        }
        None => Vec::new(),
    };
    if let Some(p) = real.iter().find(|p| p.provenance != Provenance::Real) {
        bail!("{} holds synthesized pair {}; pass those with --synthesized", a.input.display(), p.id());
    }
    let bench = benchmark::assemble(&real, &synth, &top25.cwes(), quota)?;
    write_pairs(&mut m, &ctx.path("benchmark.jsonl"), &bench)?;
    let manifest = benchmark::benchmark_manifest(&bench, quota);
    write_text(
        &mut m,
        &ctx.path("benchmark_manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    if let Some(train_path) = &a.training {
        m.input(train_path)?;
        let training = read_pairs(train_path)?;
        let leaks = benchmark::leakage_check(&bench, &training);
        let mut csv = String::from("benchmark_id,training_id\n");
        for (b, t) in &leaks {
            csv.push_str(&format!("{b},{t}\n"));
        }
        write_text(&mut m, &ctx.path("leakage.csv"), &csv)?;
        let clean = benchmark::remove_leakage(training, &bench);
        write_pairs(&mut m, &ctx.path("training_clean.jsonl"), &clean)?;
        println!("removed {} leaking training records", leaks.len());
    }
    m.finish(&ctx.manifest_path("assemble"))?;
    println!("benchmark: {} pairs over {} CWEs", bench.len(), top25.len());
    Ok(())
}

fn split(ctx: &Ctx, a: SplitArgs) -> Result<()> {
    let ratios = match a.ratios {
        Some(v) => [v[0], v[1], v[2]],
        None => ctx.cfg.split_ratios,
    };
    let mut m = StageManifest::new("split", json!({"seed": ctx.seed, "ratios": ratios, "stratification": "primary_cwe"}));
    m.input(&a.input)?;
    let splits = benchmark::split_export(read_pairs(&a.input)?, ratios, ctx.seed)?;
    write_pairs(&mut m, &ctx.path("train.jsonl"), &splits.train)?;
    write_pairs(&mut m, &ctx.path("validation.jsonl"), &splits.validation)?;
    write_pairs(&mut m, &ctx.path("test.jsonl"), &splits.test)?;
    let sm = benchmark::split_manifest(&splits, ratios, ctx.seed);
    write_text(&mut m, &ctx.path("split_manifest.json"), &(serde_json::to_string_pretty(&sm)? + "\n"))?;
    m.finish(&ctx.manifest_path("split"))?;
    let [t, v, s] = splits.counts();
    println!("train {t}, validation {v}, test {s}");
    Ok(())
}

fn stats(ctx: &Ctx, a: StatsArgs) -> Result<()> {
    let top25 = ctx.cfg.top25()?;
    let mut m = StageManifest::new("stats", json!({}));
    let mut corpus = Vec::new();
    for input in &a.input {
        m.input(input)?;
        corpus.extend(read_pairs(input)?);
    }
    let rows = report::cwe_distribution(&corpus, &top25.cwes());
    let table = report::distribution_table(&rows, a.format);
    let ext = match a.format {
        TableFormat::Csv => "csv",
        TableFormat::Markdown => "md",
    };
    write_text(&mut m, &ctx.path(&format!("distribution.{ext}")), &table)?;
    m.finish(&ctx.manifest_path("stats"))?;
    print!("{table}");
    match report::imbalance_ratio(&rows) {
        Ok(r) => println!("imbalance ratio: {r}"),
        Err(e) => println!("imbalance ratio: n/a ({e})"),
    }
    Ok(())
}

fn review_serve(ctx: &Ctx, a: ReviewArgs) -> Result<()> {
    let pairs = read_pairs(&a.pool)?;
    let manifest = SessionManifest {
        pool: pairs.iter().map(|p| p.id().to_string()).collect(),
        seed: ctx.seed,
        reviewers: a.reviewers,
        reviews_per_pair: a.reviews_per_pair,
        sample_size: a.sample,
    };
    let session_path = ctx.path("review_session.json");
    if session_path.exists() {
        let text = std::fs::read_to_string(&session_path)?;
        let previous: SessionManifest = serde_json::from_str(&text).context("reading review_session.json")?;
        if previous != manifest {
            bail!(
                "{} describes a different session (pool, seed, reviewers or sampling changed); use another --output",
                session_path.display()
            );
        }
    } else {
        std::fs::write(&session_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    }
    let log = a.log.unwrap_or_else(|| ctx.path("verdicts.jsonl"));
    let session = Arc::new(ReviewSession::open(manifest, pairs, &log)?);
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("bad --host/--port")?;
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("review service on http://{addr}");
    runtime.block_on(vulncurate::review::serve(session, addr, a.static_dir))?;
    Ok(())
}
