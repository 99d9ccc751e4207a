use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use qbd_core::bm25::{Bm25Index, Bm25Params};
use qbd_core::corpus::{
    build_pools, load_corpus, load_documents, load_judgments, load_split, save_split, split_dataset, CandidatePool,
    DocumentMap, SplitConfig,
};
use qbd_core::gateway::{Gateway, GatewayConfig, GatewayError, GradeOracle, HashResponder, StubBackend};
use qbd_core::metrics::AggregateReport;
use qbd_core::pipeline::{export_dataset, generate, import_dataset, FilterSpec, GenerateConfig, Generation};
use qbd_core::rerank::{write_results, PromptTemplates, RerankMethod};
use qbd_core::review::{ReviewInput, ReviewStatus, ReviewStore};
use qbd_core::tuner::{evaluate_tuned, tune, Signal, TuneConfig, TuneResult};
use serde_json::{json, Value};

use crate::{
    Cli, Command, EvaluateArgs, ExportArgs, GatewayArgs, IngestArgs, RerankArgs, ServeArgs, SplitArgs, SplitPart,
    StubFallback, TuneArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Gateway(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Gateway(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Gateway(m) => f.write_str(m),
        }
    }
}

fn data<E: fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Fixture(_) | GatewayError::Config(_) => CliError::Data(e.to_string()),
            other => CliError::Gateway(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let out = match &cli.command {
        Command::Ingest(a) => ingest(a)?,
        Command::Split(a) => split(a)?,
        Command::Rerank(a) => rerank(a)?,
        Command::ReviewServe(a) => return serve(a),
        Command::Tune(a) => tune_cmd(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Export(a) => export(a)?,
    };
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&out.json).expect("json output"));
    } else {
        print!("{}", out.text);
    }
    Ok(())
}

struct Output {
    json: Value,
    text: String,
}

fn ingest(a: &IngestArgs) -> Result<Output> {
    let (documents, judgments) = load_corpus(&a.corpus.documents, &a.corpus.judgments).map_err(data)?;
    let pools = build_pools(&judgments).map_err(data)?;
    let mut grades: BTreeMap<u8, usize> = BTreeMap::new();
    for j in &judgments {
        *grades.entry(j.grade).or_default() += 1;
    }
    let sizes: Vec<usize> = pools.iter().map(|p| p.candidates.len()).collect();
    let mean = sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64;
    let json = json!({
        "documents": documents.len(),
        "judgments": judgments.len(),
        "queries": pools.len(),
        "mean_pool_size": mean,
        "min_pool_size": sizes.iter().min(),
        "max_pool_size": sizes.iter().max(),
        "grades": grades,
    });
    let mut text = format!(
        "documents  {}\njudgments  {}\nqueries    {}\npool size  mean {:.1}, min {}, max {}\n",
        documents.len(),
        judgments.len(),
        pools.len(),
        mean,
        sizes.iter().min().unwrap_or(&0),
        sizes.iter().max().unwrap_or(&0)
    );
    for (g, n) in &grades {
        text.push_str(&format!("grade {g}    {n}\n"));
    }
    Ok(Output { json, text })
}

fn split(a: &SplitArgs) -> Result<Output> {
    let (_, judgments) = load_corpus(&a.corpus.documents, &a.corpus.judgments).map_err(data)?;
    let pools = build_pools(&judgments).map_err(data)?;
    let config = SplitConfig {
        seed: a.seed,
        per_grade_cap: a.per_grade_cap,
        pure_test_fraction: a.pure_test_fraction,
        train_pair_budget: a.train_pair_budget,
    };
    let s = split_dataset(&pools, &config).map_err(data)?;
    ensure_parent(&a.out)?;
    save_split(&s, &a.out).map_err(data)?;
    let test_candidates: usize = s.test_lists.values().map(Vec::len).sum();
    let json = json!({
        "out": a.out,
        "seed": a.seed,
        "train_pairs": s.train_pairs.len(),
        "train_queries": s.train_queries().len(),
        "test_queries": s.test_lists.len(),
        "test_candidates": test_candidates,
        "pure_test_queries": s.pure_test_queries.len(),
        "removed_for_disjointness": s.removed_for_disjointness,
    });
    let text = format!(
        "train  {} pairs over {} queries\ntest   {} candidates over {} queries ({} pure test)\nremoved for disjointness  {}\nwritten to {}\n",
        s.train_pairs.len(),
        s.train_queries().len(),
        test_candidates,
        s.test_lists.len(),
        s.pure_test_queries.len(),
        s.removed_for_disjointness,
        a.out.display()
    );
    Ok(Output { json, text })
}

fn gateway_config(a: &GatewayArgs) -> Result<GatewayConfig> {
    let mut c = match &a.gateway_config {
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&raw).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => GatewayConfig::default(),
    };
    if let Some(v) = &a.base_url {
        c.base_url = v.clone();
    }
    if let Some(v) = &a.model {
        c.model = v.clone();
    }
    if let Some(v) = &a.embedding_model {
        c.embedding_model = v.clone();
    }
    if let Some(v) = &a.api_key_env {
        c.api_key_env = v.clone();
    }
    if let Some(v) = a.parallelism {
        c.parallelism = v;
    }
    if let Some(v) = a.max_retries {
        c.max_retries = v;
    }
    if let Some(v) = a.timeout_secs {
        c.request_timeout_secs = v;
    }
    Ok(c)
}

/// Oracle values are `grade - 1`, so replayed single-candidate scores stay
/// inside [-1, 1] for grades 0..=2.
fn grade_oracle(documents: &DocumentMap, pools: &[CandidatePool]) -> GradeOracle {
    GradeOracle::new(pools.iter().flat_map(|p| {
        p.candidates
            .iter()
            .filter_map(|(d, g)| documents.get(d).map(|doc| (doc.text.clone(), f64::from(*g) - 1.0)))
    }))
}

fn build_gateway(a: &GatewayArgs, documents: &DocumentMap, pools: &[CandidatePool]) -> Result<Gateway> {
    let config = gateway_config(a)?;
    match &a.stub {
        Some(path) => {
            let mut stub = StubBackend::from_fixtures(path)?.with_seed(a.stub_seed);
            stub = match a.stub_fallback {
                StubFallback::Oracle => stub.with_fallback(grade_oracle(documents, pools)),
                StubFallback::Hash => stub.with_fallback(HashResponder { seed: a.stub_seed }),
                StubFallback::None => stub,
            };
            Ok(Gateway::stub(config, stub)?)
        }
        None => Ok(Gateway::http(config)?),
    }
}

fn rerank_pools(a: &RerankArgs) -> Result<(DocumentMap, Vec<CandidatePool>)> {
    let documents = load_documents(&a.documents).map_err(data)?;
    let pools = match &a.judgments {
        Some(path) => build_pools(&load_judgments(path, Some(&documents)).map_err(data)?).map_err(data)?,
        None => {
            let path = a.split.as_deref().unwrap_or(Path::new(crate::SPLIT));
            let s = load_split(path).map_err(data)?;
            let test = || {
                s.test_lists
                    .iter()
                    .map(|(q, c)| CandidatePool { query_id: q.clone(), candidates: c.clone() })
                    .collect::<Vec<_>>()
            };
            match a.part {
                SplitPart::Train => s.train_pools(),
                SplitPart::Test => test(),
                SplitPart::All => {
                    let mut all = s.train_pools();
                    all.extend(test());
                    all
                }
            }
        }
    };
    Ok((documents, pools))
}

fn rerank_method(a: &RerankArgs) -> Result<RerankMethod> {
    let instructions = match (&a.instructions, &a.instructions_from) {
        (Some(path), _) => {
            Some((std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?, None))
        }
        (None, Some(dir)) => {
            let doc = ReviewStore::open(dir).map_err(data)?.instructions();
            if doc.version == 0 {
                return Err(CliError::Data(format!("review store {} has no instructions yet", dir.display())));
            }
            Some((doc.text, Some(doc.version)))
        }
        (None, None) => None,
    };
    RerankMethod::named(&a.method, instructions.as_ref().map(|(t, v)| (t.trim(), *v)))
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn rerank(a: &RerankArgs) -> Result<Output> {
    let method = rerank_method(a)?;
    let (documents, pools) = rerank_pools(a)?;
    let templates = match &a.templates {
        Some(dir) => PromptTemplates::load_dir(dir).map_err(data)?,
        None => PromptTemplates::default(),
    };
    let gateway = build_gateway(&a.gateway, &documents, &pools)?;
    let config = GenerateConfig {
        method,
        filter: FilterSpec {
            min_candidates: a.min_candidates,
            max_candidates: a.max_candidates,
            require_grade_diversity: a.grade_diversity,
        },
        t: a.t,
        seed: a.seed,
    };
    let generation = generate(&documents, &pools, &config, &gateway, &templates).map_err(data)?;
    let Generation { dataset, results } = &generation;
    if dataset.records.is_empty() {
        let first = dataset.manifest.failures.first().map(|f| f.error.as_str()).unwrap_or("");
        return Err(CliError::Gateway(format!("every query failed to rerank; first failure: {first}")));
    }
    ensure_parent(&a.out)?;
    export_dataset(dataset, &a.out).map_err(data)?;
    if let Some(path) = &a.results {
        ensure_parent(path)?;
        let file = File::create(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        write_results(results, BufWriter::new(file)).map_err(data)?;
    }
    let mut enqueued = 0;
    if let Some(dir) = &a.enqueue {
        let store = ReviewStore::open(dir).map_err(data)?;
        let inputs = ReviewInput::from_generation(&generation, &documents).map_err(data)?;
        enqueued = store.enqueue(inputs).map_err(data)?.len();
    }
    let m = &dataset.manifest;
    let json = json!({
        "out": a.out,
        "method": m.method.name(),
        "records": m.record_count,
        "failures": m.failures,
        "filtered_out": m.filtered_out.len(),
        "config_hash": m.config_hash,
        "ledger": m.ledger,
        "stub": gateway.is_stub(),
        "enqueued": enqueued,
    });
    let mut text = format!(
        "method        {}\nrecords       {}\nfiltered out  {}\nfailures      {}\nchat calls    {}\nembed calls   {}\nconfig hash   {}\n",
        m.method.name(),
        m.record_count,
        m.filtered_out.len(),
        m.failures.len(),
        m.ledger.chat.requests,
        m.ledger.embed.requests,
        &m.config_hash[..16]
    );
    for f in &m.failures {
        text.push_str(&format!("  failed {}: {}\n", f.query_id, f.error));
    }
    if a.enqueue.is_some() {
        text.push_str(&format!("enqueued      {enqueued}\n"));
    }
    text.push_str(&format!("written to {}\n", a.out.display()));
    Ok(Output { json, text })
}

fn serve(a: &ServeArgs) -> Result<()> {
    let store = ReviewStore::open(&a.store).map_err(data)?;
    let addr = SocketAddr::new(a.bind, a.port);
    eprintln!("serving review store {} on http://{addr}", a.store.display());
    qbd_review_server::run(Arc::new(store), addr, a.ui_dir.clone()).map_err(data)
}

/// BM25 index over the training candidates only.
fn train_index(documents: &DocumentMap, split_path: &Path) -> Result<(Bm25Index, qbd_core::corpus::DatasetSplit)> {
    let s = load_split(split_path).map_err(data)?;
    let docs = s
        .train_doc_ids()
        .into_iter()
        .map(|id| documents.get(id).ok_or_else(|| CliError::Data(format!("document {id} is not in the corpus"))))
        .collect::<Result<Vec<_>>>()?;
    let index = Bm25Index::build(docs).map_err(data)?;
    Ok((index, s))
}

fn tune_cmd(a: &TuneArgs) -> Result<Output> {
    let documents = load_documents(&a.documents).map_err(data)?;
    let (index, s) = train_index(&documents, &a.split)?;
    let signal = match a.signal.as_str() {
        "ideal-train" => Signal::from_grades("ideal-train", &s.train_lists(), a.threshold),
        "ideal-test" => Signal::from_grades("ideal-test", &s.test_lists, a.threshold),
        path => import_dataset(Path::new(path)).map_err(data)?.to_signal(a.score_cutoff),
    };
    let config = if a.grid {
        TuneConfig { seed: a.seed, ..TuneConfig::grid_9x10() }
    } else {
        TuneConfig { n_trials: a.trials, seed: a.seed, ..TuneConfig::default() }
    };
    let result = tune(&index, &documents, &signal, &config).map_err(data)?;
    if let Some(path) = &a.out {
        ensure_parent(path)?;
        let body = serde_json::to_string_pretty(&result).expect("tune result serializes");
        std::fs::write(path, body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    let json = serde_json::to_value(&result).expect("tune result serializes");
    Ok(Output { json, text: tune_table(&result) })
}

fn tune_table(r: &TuneResult) -> String {
    let mut text = format!(
        "signal   {} ({} queries, {} excluded)\nbest     k1 = {:.4}, b = {:.4}, MAP = {:.4} (trial {})\ndefault  k1 = 1.5000, b = 0.7500, MAP = {:.4}\n\ntrial      k1       b     MAP\n",
        r.provenance,
        r.queries_used,
        r.excluded_queries.len(),
        r.best.k1,
        r.best.b,
        r.best_objective,
        r.best_trial,
        r.default_objective()
    );
    for t in &r.history {
        text.push_str(&format!("{:>5}  {:>6.4}  {:>6.4}  {:.4}\n", t.trial, t.params.k1, t.params.b, t.objective));
    }
    text
}

fn parse_params(raw: &str) -> Result<Bm25Params> {
    let (k1, b) = raw
        .split_once(',')
        .ok_or_else(|| CliError::Usage(format!("--params expects `k1,b`, got `{raw}`")))?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("--params: {e}")));
    Bm25Params::new(num(k1)?, num(b)?).map_err(|e| CliError::Usage(e.to_string()))
}

fn evaluate(a: &EvaluateArgs) -> Result<Output> {
    let params = match (&a.params, &a.tuned) {
        (Some(raw), _) => parse_params(raw)?,
        (None, Some(path)) => {
            let raw = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let r: TuneResult = serde_json::from_str(&raw).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            r.best
        }
        (None, None) => Bm25Params::default(),
    };
    let documents = load_documents(&a.documents).map_err(data)?;
    let (index, s) = train_index(&documents, &a.split)?;
    let report = evaluate_tuned(&params, &index, &documents, &s.test_lists, a.threshold, &a.ks).map_err(data)?;
    let json = json!({ "params": params, "report": report });
    Ok(Output { json, text: report_table(&params, &report) })
}

fn report_table(p: &Bm25Params, r: &AggregateReport) -> String {
    let m = &r.report;
    let mut text = format!(
        "params   k1 = {:.4}, b = {:.4}\nqueries  {} ({} unindexed candidates)\n\nmetric      value\ntau_b       {:.4}\nspearman    {:.4}\nMAP         {:.4}\nMRR         {:.4}\n",
        p.k1, p.b, r.queries, r.unindexed_candidates, m.tau_b, m.spearman_rho, m.map, m.mrr
    );
    for (k, v) in &m.precision_at_k {
        text.push_str(&format!("{:<12}{:.4}\n", format!("P@{k}"), v));
    }
    let undefined = [("tau_b", r.undefined_tau_b), ("spearman", r.undefined_spearman), ("AP", r.undefined_average_precision)];
    for (name, n) in undefined {
        if n > 0 {
            text.push_str(&format!("{name} undefined for {n} queries (left out of the mean)\n"));
        }
    }
    text
}

fn export(a: &ExportArgs) -> Result<Output> {
    let statuses = a
        .statuses
        .iter()
        .map(|s| s.parse::<ReviewStatus>().map_err(CliError::Usage))
        .collect::<Result<Vec<_>>>()?;
    let store = ReviewStore::open(&a.store).map_err(data)?;
    let dataset = store.export_reviewed(&statuses).map_err(data)?;
    ensure_parent(&a.out)?;
    export_dataset(&dataset, &a.out).map_err(data)?;
    let corrected = dataset.records.iter().filter(|r| r.oracle_status == qbd_core::pipeline::OracleStatus::Corrected).count();
    let json = json!({ "out": a.out, "records": dataset.records.len(), "corrected": corrected });
    let text = format!(
        "exported {} records ({} corrected) to {}\n",
        dataset.records.len(),
        corrected,
        a.out.display()
    );
    Ok(Output { json, text })
}
