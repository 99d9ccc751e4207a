//! `qbdgen`: ingest a judged corpus, split it, rerank candidates into a
//! ranked dataset, review it, tune BM25 on the result and evaluate.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 gateway error.

mod commands;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

// Defaults follow the bundled fixtures workflow, run from the repository root.
const DOCUMENTS: &str = "fixtures/documents.jsonl";
const JUDGMENTS: &str = "fixtures/qrels.txt";
pub(crate) const SPLIT: &str = "out/split.jsonl";

#[derive(Debug, Parser)]
#[command(name = "qbdgen", version, about = "Ranked query-by-document dataset generation")]
pub struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate a corpus and its judgments.
    Ingest(IngestArgs),
    /// Split judged pools into training pairs and a disjoint test set.
    Split(SplitArgs),
    /// Rerank candidate pools and write a generated dataset.
    Rerank(Box<RerankArgs>),
    /// Serve the review API (and optionally the review UI).
    ReviewServe(ServeArgs),
    /// Tune BM25 k1 and b on a training signal.
    Tune(TuneArgs),
    /// Evaluate BM25 parameters on the held-out test lists.
    Evaluate(EvaluateArgs),
    /// Export reviewed items from a review store as a dataset.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Documents JSONL, one `{"id", "text"}` object per line. Queries are
    /// documents too.
    #[arg(long, default_value = DOCUMENTS)]
    pub documents: PathBuf,
    /// Judgments in 4-column qrels form: query_id, ignored, doc_id, grade.
    #[arg(long, default_value = JUDGMENTS)]
    pub judgments: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub per_grade_cap: usize,
    #[arg(long, default_value_t = 0.2)]
    pub pure_test_fraction: f64,
    #[arg(long, default_value_t = 100)]
    pub train_pair_budget: usize,
    /// Where to write the split (JSONL).
    #[arg(long, default_value = SPLIT)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StubFallback {
    /// Replay the judged grades: the stub answers as a perfect reranker.
    Oracle,
    /// Deterministic pseudo-random replies from the prompt hash.
    Hash,
    /// Only canned fixture replies; anything else is a gateway error.
    None,
}

#[derive(Debug, Args)]
pub struct GatewayArgs {
    /// Use the offline stub with canned replies from this JSONL file.
    #[arg(long)]
    pub stub: Option<PathBuf>,
    /// How the stub answers prompts missing from the fixtures.
    #[arg(long, value_enum, default_value_t = StubFallback::Oracle)]
    pub stub_fallback: StubFallback,
    /// Seed for hash-derived stub replies and embeddings.
    #[arg(long, default_value_t = 0)]
    pub stub_seed: u64,
    /// Gateway settings as JSON; flags below override individual fields.
    #[arg(long)]
    pub gateway_config: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub embedding_model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long, default_value = DOCUMENTS)]
    pub documents: PathBuf,
    /// Rerank pools from this split; see `--part`.
    #[arg(long, conflicts_with = "judgments")]
    pub split: Option<PathBuf>,
    /// Rerank every judged pool in this qrels file.
    #[arg(long)]
    pub judgments: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitPart::Train)]
    pub part: SplitPart,
    /// scs_emb, scs_llm, scs_instr, pcs_llm or pcs_instr.
    #[arg(long)]
    pub method: String,
    /// Instructions text file for the `_instr` methods.
    #[arg(long, conflicts_with = "instructions_from")]
    pub instructions: Option<PathBuf>,
    /// Take the instructions from a review store's current document.
    #[arg(long)]
    pub instructions_from: Option<PathBuf>,
    /// Directory holding `single.txt` / `pairwise.txt` prompt templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Keep at most this many ranked candidates per query.
    #[arg(long, default_value_t = 30)]
    pub t: usize,
    #[arg(long, default_value_t = 2)]
    pub min_candidates: usize,
    #[arg(long, default_value_t = 30)]
    pub max_candidates: usize,
    /// Require at least two distinct grades in a pool.
    #[arg(long)]
    pub grade_diversity: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generated dataset output (JSONL).
    #[arg(long, default_value = "out/dataset.jsonl")]
    pub out: PathBuf,
    /// Also write the full rerank results, with verdicts, as JSONL.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Queue the results for review in this store directory.
    #[arg(long)]
    pub enqueue: Option<PathBuf>,
    #[command(flatten)]
    pub gateway: GatewayArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "QBD_REVIEW_STORE")]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Directory with the built review UI.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long, default_value = DOCUMENTS)]
    pub documents: PathBuf,
    #[arg(long, default_value = SPLIT)]
    pub split: PathBuf,
    /// `ideal-train`, `ideal-test`, or the path of a generated dataset.
    #[arg(long)]
    pub signal: String,
    /// Grade at or above which a judged candidate counts as relevant.
    #[arg(long, default_value_t = 1)]
    pub threshold: u8,
    /// Score at or above which a single-candidate LLM score counts as relevant.
    #[arg(long, default_value_t = qbd_core::tuner::DEFAULT_SCORE_CUTOFF)]
    pub score_cutoff: f64,
    #[arg(long, default_value_t = qbd_core::tuner::DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exhaustive 9 x 10 lattice instead of random search.
    #[arg(long)]
    pub grid: bool,
    /// Write the full tuning result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = DOCUMENTS)]
    pub documents: PathBuf,
    #[arg(long, default_value = SPLIT)]
    pub split: PathBuf,
    /// Parameters as `k1,b`; defaults to 1.5,0.75.
    #[arg(long, conflicts_with = "tuned")]
    pub params: Option<String>,
    /// Take the parameters from a tuning result JSON.
    #[arg(long)]
    pub tuned: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threshold: u8,
    /// Cutoffs for precision@K.
    #[arg(long, value_delimiter = ',', default_values_t = qbd_core::metrics::DEFAULT_KS)]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, env = "QBD_REVIEW_STORE")]
    pub store: PathBuf,
    /// Statuses to export; only accepted and corrected items are ever written.
    #[arg(long, value_delimiter = ',', default_value = "accepted,corrected")]
    pub statuses: Vec<String>,
    #[arg(long, default_value = "out/reviewed.jsonl")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
