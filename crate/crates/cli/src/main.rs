//! `savant`: expert discovery over community Q&A dumps.
//!
//! Each subcommand runs one pipeline stage against explicit paths;
//! `pipeline run` drives the whole chain from a TOML config. Exit codes:
//! 0 success, 1 stage failure, 2 missing input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use savant::embedding::EmbeddingTable;
use savant::pipeline::{self, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "savant", version, about = "Expert discovery for community Q&A corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a Posts.xml dump into a filtered corpus
    Ingest(IngestArgs),
    /// Clean and tokenize corpus text (HTML stripping, code comments, stopwords)
    Prep(PrepArgs),
    /// Train, filter, or inspect word embeddings
    Embed {
        #[command(subcommand)]
        command: EmbedCommand,
    },
    /// Summarize corpus questions as TF-weighted embedding averages
    Vectorize(VectorizeArgs),
    /// Extract knowledge domains by clustering word vectors
    Domains {
        #[command(subcommand)]
        command: DomainsCommand,
    },
    /// Factorize the question x user vote matrix
    Mf(MfArgs),
    /// Build the online expert index
    Index(IndexArgs),
    /// Recommend experts for a free-text query
    Query(QueryArgs),
    /// Measure retrieval quality over held-out queries
    Eval(EvalArgs),
    /// Run pipeline stages from a config file
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// Posts.xml dump
    #[arg(long)]
    posts: PathBuf,
    /// Corpus output path
    #[arg(long)]
    out: PathBuf,
    /// Answer quality threshold v: keep answers scoring strictly above it
    #[arg(long, default_value_t = 0)]
    min_score: i64,
    /// Keep at most this many answers per question
    #[arg(long, default_value_t = 5)]
    top_answers: usize,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Stopword list, one word per line
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Domain dictionary whitelist, one word per line
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Comment-syntax table (JSON), merged over the built-in defaults
    #[arg(long)]
    comment_rules: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EmbedCommand {
    /// Train skip-gram negative-sampling embeddings on the prepped corpus
    Train(EmbedTrainArgs),
    /// Restrict an embedding table to a dictionary
    Filter(EmbedFilterArgs),
    /// Print the nearest neighbors of a word
    Neighbors(EmbedNeighborsArgs),
}

#[derive(Args)]
struct EmbedTrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    learning_rate: f64,
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    #[arg(long, default_value_t = 1e-4)]
    subsample: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// >1 enables racing parallel updates (non-deterministic)
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Extra training sentences, one per line (e.g. comment text)
    #[arg(long)]
    extra_text: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedFilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    dictionary: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedNeighborsArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    word: String,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct VectorizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DomainsCommand {
    /// Cluster word vectors and assign questions to domains
    Build(DomainsBuildArgs),
}

#[derive(Args)]
struct DomainsBuildArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Question vector dump from `vectorize`
    #[arg(long)]
    corpus_vectors: PathBuf,
    /// Cluster count, or `auto` to select by silhouette
    #[arg(long)]
    k: String,
    /// Candidate ks for `auto`, comma-separated
    #[arg(long, value_delimiter = ',')]
    k_candidates: Vec<usize>,
    /// Ignore candidates below this when auto-selecting
    #[arg(long, default_value_t = 50)]
    k_min_useful: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Output prefix: writes <prefix>.centroids and <prefix>.assignments
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MfArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 32)]
    rank: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long)]
    seed: u64,
    /// Output prefix: writes <prefix>.w, <prefix>.h and <prefix>.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Domain model prefix from `domains build`
    #[arg(long)]
    domains: PathBuf,
    /// Factorization prefix from `mf`
    #[arg(long)]
    mf: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Jaccard,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Query text
    #[arg(short = 'q', long = "query")]
    query: String,
    /// Number of experts to return
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Blend weight override; defaults to the index's build-time λ
    #[arg(long)]
    lambda: Option<f64>,
    /// Replace embedding similarity with the named baseline
    #[arg(long)]
    baseline: Option<Baseline>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    domains: PathBuf,
    #[arg(long)]
    mf: PathBuf,
    /// Query file: one JSON record per line (text, truth, source_question)
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    /// λ grid, comma-separated
    #[arg(long = "lambda", value_delimiter = ',', default_value = "0,0.5,1")]
    lambdas: Vec<f64>,
    /// Evaluate accuracy@N and nDCG@N for N up to this
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Report path; the flat CSV lands next to it with `.csv` appended
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Execute stages from a TOML config
    Run(PipelineRunArgs),
}

#[derive(Args)]
struct PipelineRunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Stage to run, or `all` for the full offline chain (plus eval when
    /// queries are configured)
    #[arg(long, default_value = "all")]
    stage: String,
    /// Validate the stage graph without executing or writing anything
    #[arg(long)]
    dry_run: bool,
}

fn run(cli: Cli) -> savant::Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let mut config = PipelineConfig::skeleton(0);
            config.paths.posts = args.posts;
            config.paths.corpus = args.out;
            config.ingest.min_score = args.min_score;
            config.ingest.top_answers = args.top_answers;
            pipeline::run_stage(Stage::Ingest, &config)
        }
        Command::Prep(args) => {
            let mut config = PipelineConfig::skeleton(0);
            config.paths.corpus = args.corpus;
            config.paths.prepped = args.out;
            config.prep.stopwords = args.stopwords;
            config.prep.dictionary = args.dictionary;
            config.prep.comment_rules = args.comment_rules;
            pipeline::run_stage(Stage::Prep, &config)
        }
        Command::Embed { command } => match command {
            EmbedCommand::Train(args) => {
                let mut config = PipelineConfig::skeleton(args.seed);
                config.paths.prepped = args.corpus;
                config.paths.embeddings = args.out;
                config.embed.dim = args.dim;
                config.embed.window = args.window;
                config.embed.negatives = args.negatives;
                config.embed.epochs = args.epochs;
                config.embed.learning_rate = args.learning_rate;
                config.embed.min_count = args.min_count;
                config.embed.subsample_threshold = args.subsample;
                config.embed.workers = args.workers;
                config.embed.extra_text = args.extra_text;
                pipeline::run_stage(Stage::Embed, &config)
            }
            EmbedCommand::Filter(args) => {
                let table = EmbeddingTable::load_file(&args.input)?;
                let dictionary = savant::textprep::load_word_list(&args.dictionary)?;
                let filtered = table.restrict_vocabulary(&dictionary)?;
                eprintln!(
                    "filter: {} of {} words kept",
                    filtered.len(),
                    table.len()
                );
                filtered.save_file(&args.out)
            }
            EmbedCommand::Neighbors(args) => {
                let table = EmbeddingTable::load_file(&args.embeddings)?;
                for (word, sim) in table.nearest_neighbors(&args.word, args.top)? {
                    println!("{sim:.6} {word}");
                }
                Ok(())
            }
        },
        Command::Vectorize(args) => {
            let mut config = PipelineConfig::skeleton(0);
            config.paths.prepped = args.corpus;
            config.paths.embeddings = args.embeddings;
            config.paths.vectors = args.out;
            pipeline::run_stage(Stage::Vectorize, &config)
        }
        Command::Domains { command } => match command {
            DomainsCommand::Build(args) => {
                let mut config = PipelineConfig::skeleton(args.seed.wrapping_sub(2));
                config.paths.embeddings = args.embeddings;
                config.paths.vectors = args.corpus_vectors;
                config.paths.domains = args.out;
                config.domains.k = match args.k.as_str() {
                    "auto" => 0,
                    n => n.parse().map_err(|_| {
                        savant::Error::Config(format!("--k must be a number or 'auto', got {n:?}"))
                    })?,
                };
                if config.domains.k == 0 && args.k_candidates.is_empty() {
                    return Err(savant::Error::Config(
                        "--k auto requires --k-candidates".to_string(),
                    ));
                }
                config.domains.k_candidates = args.k_candidates;
                config.domains.k_min_useful = args.k_min_useful;
                config.domains.restarts = args.restarts;
                pipeline::run_stage(Stage::Domains, &config)
            }
        },
        Command::Mf(args) => {
            let mut config = PipelineConfig::skeleton(args.seed.wrapping_sub(3));
            config.paths.prepped = args.corpus;
            config.paths.mf = args.out;
            config.mf.rank = args.rank;
            config.mf.alpha = args.alpha;
            config.mf.rho = args.rho;
            config.mf.tol = args.tol;
            config.mf.max_iter = args.max_iter;
            pipeline::run_stage(Stage::Mf, &config)
        }
        Command::Index(args) => {
            let mut config = PipelineConfig::skeleton(0);
            config.paths.prepped = args.corpus;
            config.paths.embeddings = args.embeddings;
            config.paths.domains = args.domains;
            config.paths.mf = args.mf;
            config.paths.index = args.out;
            config.index.lambda = args.lambda;
            config.prep.stopwords = args.stopwords;
            pipeline::run_stage(Stage::Index, &config)
        }
        Command::Query(args) => {
            let mut config = PipelineConfig::skeleton(0);
            config.paths.index = args.index;
            config.paths.embeddings = args.embeddings;
            config.query.text = args.query;
            config.query.top = args.top;
            config.query.lambda = args.lambda;
            config.query.baseline = matches!(args.baseline, Some(Baseline::Jaccard));
            config.query.json = matches!(args.format, OutputFormat::Json);
            pipeline::run_stage(Stage::Query, &config)
        }
        Command::Eval(args) => {
            let mut config = PipelineConfig::skeleton(args.seed.wrapping_sub(4));
            config.paths.prepped = args.corpus;
            config.paths.embeddings = args.embeddings;
            config.paths.domains = args.domains;
            config.paths.mf = args.mf;
            config.paths.report = args.report.clone();
            config.prep.stopwords = args.stopwords;
            config.eval.queries = Some(args.queries);
            config.eval.folds = args.folds;
            config.eval.lambdas = args.lambdas;
            config.eval.top = args.top;
            pipeline::run_stage(Stage::Eval, &config)?;
            match args.format {
                OutputFormat::Text => {
                    eprintln!(
                        "eval: report at {}, csv at {}.csv",
                        args.report.display(),
                        args.report.display()
                    );
                }
                OutputFormat::Json => {
                    let text = std::fs::read_to_string(&args.report).map_err(|e| {
                        savant::Error::Io {
                            path: args.report.clone(),
                            source: e,
                        }
                    })?;
                    let mut map = serde_json::Map::new();
                    for line in text.lines() {
                        if let Some((key, value)) = line.split_once(' ') {
                            let parsed = value
                                .parse::<f64>()
                                .map(serde_json::Value::from)
                                .unwrap_or_else(|_| serde_json::Value::from(value));
                            map.insert(key.to_string(), parsed);
                        }
                    }
                    println!("{}", serde_json::Value::Object(map));
                }
            }
            Ok(())
        }
        Command::Pipeline { command } => match command {
            PipelineCommand::Run(args) => {
                let config = PipelineConfig::load(&args.config)?;
                let stages: Vec<Stage> = if args.stage == "all" {
                    let mut stages = Stage::OFFLINE_ORDER.to_vec();
                    if config.eval.queries.is_some() {
                        stages.push(Stage::Eval);
                    }
                    stages
                } else {
                    let stage = Stage::parse(&args.stage).ok_or_else(|| {
                        savant::Error::Config(format!("unknown stage {:?}", args.stage))
                    })?;
                    vec![stage]
                };
                if args.dry_run {
                    pipeline::dry_run(&config, &stages)?;
                    eprintln!("dry run: stage graph is valid");
                    return Ok(());
                }
                if args.stage == "all" {
                    pipeline::run_all(&config)
                } else {
                    pipeline::run_stage(stages[0], &config)
                }
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
