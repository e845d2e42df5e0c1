//! Pipeline orchestration: a sectioned config file binds the stages
//! together, each stage reads declared inputs and writes its output
//! atomically (temp file + rename), and all randomness flows from one
//! global seed with per-stage offsets.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus};
use crate::docvec::{self, summarize};
use crate::domains::{self, DomainModel, SelectKConfig};
use crate::embedding::{train_sgns, EmbeddingTable, SgnsConfig};
use crate::eval;
use crate::nmf::{self, NmfConfig, VoteMatrix};
use crate::recommend::{build_expert_index, jaccard_recommend, recommend_experts, ExpertIndex};
use crate::textprep::{self, FilterConfig, TokenDoc};
use crate::{Error, Result};

/// Write through a temp file in the same directory, then rename over the
/// destination, so a crashed stage never leaves a half-written output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Prep,
    Embed,
    Vectorize,
    Domains,
    Mf,
    Index,
    Query,
    Eval,
}

impl Stage {
    pub const OFFLINE_ORDER: [Stage; 7] = [
        Stage::Ingest,
        Stage::Prep,
        Stage::Embed,
        Stage::Vectorize,
        Stage::Domains,
        Stage::Mf,
        Stage::Index,
    ];

    pub fn parse(name: &str) -> Option<Stage> {
        Some(match name {
            "ingest" => Stage::Ingest,
            "prep" => Stage::Prep,
            "embed" => Stage::Embed,
            "vectorize" => Stage::Vectorize,
            "domains" => Stage::Domains,
            "mf" => Stage::Mf,
            "index" => Stage::Index,
            "query" => Stage::Query,
            "eval" => Stage::Eval,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Prep => "prep",
            Stage::Embed => "embed",
            Stage::Vectorize => "vectorize",
            Stage::Domains => "domains",
            Stage::Mf => "mf",
            Stage::Index => "index",
            Stage::Query => "query",
            Stage::Eval => "eval",
        }
    }

    /// Per-stage seed offset, decoupling the stages' random streams.
    fn seed_offset(&self) -> u64 {
        match self {
            Stage::Embed => 1,
            Stage::Domains => 2,
            Stage::Mf => 3,
            Stage::Eval => 4,
            _ => 0,
        }
    }
}

fn default_min_score() -> i64 {
    0
}
fn default_top_answers() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSection {
    #[serde(default = "default_min_score")]
    pub min_score: i64,
    #[serde(default = "default_top_answers")]
    pub top_answers: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            min_score: default_min_score(),
            top_answers: default_top_answers(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PrepSection {
    pub stopwords: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub comment_rules: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedSection {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: u64,
    pub subsample_threshold: f64,
    pub workers: usize,
    pub extra_text: Option<PathBuf>,
}

impl Default for EmbedSection {
    fn default() -> Self {
        let cfg = SgnsConfig::default();
        EmbedSection {
            dim: cfg.dim,
            window: cfg.window,
            negatives: cfg.negatives,
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            min_count: cfg.min_count,
            subsample_threshold: cfg.subsample_threshold,
            workers: 1,
            extra_text: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainsSection {
    /// 0 selects k automatically over the candidate list.
    pub k: usize,
    pub k_candidates: Vec<usize>,
    pub k_min_useful: usize,
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for DomainsSection {
    fn default() -> Self {
        DomainsSection {
            k: 0,
            k_candidates: vec![50, 100, 200, 300],
            k_min_useful: 50,
            restarts: 5,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfSection {
    pub rank: usize,
    pub alpha: f64,
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MfSection {
    fn default() -> Self {
        MfSection {
            rank: 32,
            alpha: 0.1,
            rho: 0.5,
            tol: 1e-4,
            max_iter: 200,
        }
    }
}

fn default_lambda() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexSection {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection {
            lambda: default_lambda(),
        }
    }
}

fn default_top() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuerySection {
    #[serde(default)]
    pub text: String,
    #[serde(default = "default_top")]
    pub top: usize,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub json: bool,
}

impl Default for QuerySection {
    fn default() -> Self {
        QuerySection {
            text: String::new(),
            top: default_top(),
            lambda: None,
            baseline: false,
            json: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSection {
    pub queries: Option<PathBuf>,
    pub folds: usize,
    pub lambdas: Vec<f64>,
    pub top: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            queries: None,
            folds: 3,
            lambdas: vec![0.0, 0.5, 1.0],
            top: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathsSection {
    pub posts: PathBuf,
    pub corpus: PathBuf,
    pub prepped: PathBuf,
    pub embeddings: PathBuf,
    /// Written only when a dictionary is configured.
    pub filtered_embeddings: Option<PathBuf>,
    pub vectors: PathBuf,
    /// Prefix: `.centroids`, `.assignments`, and `.kselect` are appended.
    pub domains: PathBuf,
    /// Prefix: `.w`, `.h`, and `.json` are appended.
    pub mf: PathBuf,
    pub index: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsSection,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub prep: PrepSection,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub domains: DomainsSection,
    #[serde(default)]
    pub mf: MfSection,
    #[serde(default)]
    pub index: IndexSection,
    #[serde(default)]
    pub query: QuerySection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl PipelineConfig {
    /// A config with every section at its default and empty paths; the
    /// CLI subcommands fill in just the paths their stage touches.
    pub fn skeleton(seed: u64) -> PipelineConfig {
        PipelineConfig {
            seed,
            paths: PathsSection {
                posts: PathBuf::new(),
                corpus: PathBuf::new(),
                prepped: PathBuf::new(),
                embeddings: PathBuf::new(),
                filtered_embeddings: None,
                vectors: PathBuf::new(),
                domains: PathBuf::new(),
                mf: PathBuf::new(),
                index: PathBuf::new(),
                report: PathBuf::new(),
            },
            ingest: IngestSection::default(),
            prep: PrepSection::default(),
            embed: EmbedSection::default(),
            domains: DomainsSection::default(),
            mf: MfSection::default(),
            index: IndexSection::default(),
            query: QuerySection::default(),
            eval: EvalSection::default(),
        }
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The embedding table downstream stages vectorize with: the
    /// dictionary-restricted one when a dictionary is configured.
    pub fn vector_table_path(&self) -> &Path {
        match (&self.prep.dictionary, &self.paths.filtered_embeddings) {
            (Some(_), Some(filtered)) => filtered,
            _ => &self.paths.embeddings,
        }
    }

    pub fn domains_paths(&self) -> (PathBuf, PathBuf, PathBuf) {
        let base = &self.paths.domains;
        let with = |ext: &str| {
            let mut s = base.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        (
            with(".centroids"),
            with(".assignments"),
            with(".kselect"),
        )
    }

    fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_add(stage.seed_offset())
    }

    /// Inputs a stage requires and outputs it produces.
    fn stage_io(&self, stage: Stage) -> (Vec<PathBuf>, Vec<PathBuf>) {
        let (centroids, assignments, _) = self.domains_paths();
        let (w, h, meta) = nmf::factorization_paths(&self.paths.mf);
        let table = self.vector_table_path().to_path_buf();
        match stage {
            Stage::Ingest => (
                vec![self.paths.posts.clone()],
                vec![self.paths.corpus.clone()],
            ),
            Stage::Prep => {
                let mut inputs = vec![self.paths.corpus.clone()];
                for opt in [
                    &self.prep.stopwords,
                    &self.prep.dictionary,
                    &self.prep.comment_rules,
                ]
                .into_iter()
                .flatten()
                {
                    inputs.push(opt.clone());
                }
                (inputs, vec![self.paths.prepped.clone()])
            }
            Stage::Embed => {
                let mut inputs = vec![self.paths.prepped.clone()];
                if let Some(extra) = &self.embed.extra_text {
                    inputs.push(extra.clone());
                }
                if let Some(dict) = &self.prep.dictionary {
                    inputs.push(dict.clone());
                }
                let mut outputs = vec![self.paths.embeddings.clone()];
                if self.prep.dictionary.is_some() {
                    if let Some(filtered) = &self.paths.filtered_embeddings {
                        outputs.push(filtered.clone());
                    }
                }
                (inputs, outputs)
            }
            Stage::Vectorize => (
                vec![self.paths.prepped.clone(), table],
                vec![self.paths.vectors.clone()],
            ),
            Stage::Domains => (
                vec![table, self.paths.vectors.clone()],
                vec![centroids, assignments],
            ),
            Stage::Mf => (vec![self.paths.prepped.clone()], vec![w, h, meta]),
            Stage::Index => {
                let mut inputs = vec![
                    self.paths.prepped.clone(),
                    table,
                    centroids,
                    assignments,
                    w,
                    h,
                    meta,
                ];
                if let Some(stop) = &self.prep.stopwords {
                    inputs.push(stop.clone());
                }
                (inputs, vec![self.paths.index.clone()])
            }
            Stage::Query => (
                vec![self.paths.index.clone(), table],
                vec![],
            ),
            Stage::Eval => {
                let mut inputs = vec![
                    self.paths.prepped.clone(),
                    table,
                    centroids,
                    assignments,
                    w,
                    h,
                    meta,
                ];
                if let Some(q) = &self.eval.queries {
                    inputs.push(q.clone());
                }
                let mut csv = self.paths.report.as_os_str().to_owned();
                csv.push(".csv");
                (
                    inputs,
                    vec![self.paths.report.clone(), PathBuf::from(csv)],
                )
            }
        }
    }
}

/// Validate the stage graph without executing anything: every input must
/// either exist on disk already or be the declared output of an earlier
/// stage. Never writes a file.
pub fn dry_run(config: &PipelineConfig, stages: &[Stage]) -> Result<()> {
    let mut produced: BTreeSet<PathBuf> = BTreeSet::new();
    let all_stages = Stage::OFFLINE_ORDER;
    for stage in all_stages.iter().chain([Stage::Query, Stage::Eval].iter()) {
        let run_now = stages.contains(stage);
        let (inputs, outputs) = config.stage_io(*stage);
        if run_now {
            for input in inputs {
                if !produced.contains(&input) && !input.exists() {
                    return Err(Error::MissingInput(input));
                }
            }
        }
        // Earlier stages' declared outputs satisfy later inputs whether or
        // not they run in this invocation, as long as they are scheduled.
        if run_now {
            produced.extend(outputs);
        }
    }
    Ok(())
}

fn require_inputs(config: &PipelineConfig, stage: Stage) -> Result<()> {
    let (inputs, _) = config.stage_io(stage);
    for input in inputs {
        if !input.exists() {
            return Err(Error::MissingInput(input));
        }
    }
    Ok(())
}

fn load_filter_config(config: &PipelineConfig) -> Result<FilterConfig> {
    let stopwords = match &config.prep.stopwords {
        Some(path) => textprep::load_word_list(path)?,
        None => BTreeSet::new(),
    };
    let dictionary = match &config.prep.dictionary {
        Some(path) => Some(textprep::load_word_list(path)?),
        None => None,
    };
    let mut cfg = FilterConfig::new(stopwords, dictionary)?;
    if let Some(path) = &config.prep.comment_rules {
        cfg.comment_rules = textprep::load_comment_rules(path)?;
    }
    Ok(cfg)
}

fn stopword_set(config: &PipelineConfig) -> Result<BTreeSet<String>> {
    match &config.prep.stopwords {
        Some(path) => textprep::load_word_list(path),
        None => Ok(BTreeSet::new()),
    }
}

/// Question vectors for every prepped question with at least one
/// in-vocabulary token. Returns (vectors, skipped-count).
pub fn question_vectors(
    corpus: &Corpus,
    table: &EmbeddingTable,
) -> (Vec<docvec::DocVector>, usize) {
    let mut vectors = Vec::new();
    let mut skipped = 0usize;
    for q in &corpus.questions {
        let tokens: Vec<String> = q
            .plain_text()
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let v = summarize(&TokenDoc::new(q.id, tokens), table);
        if v.is_zero() {
            skipped += 1;
        } else {
            vectors.push(v);
        }
    }
    (vectors, skipped)
}

fn load_offline_artifacts(
    config: &PipelineConfig,
) -> Result<(Corpus, EmbeddingTable, DomainModel, VoteMatrix, crate::matrix::Matrix)> {
    let corpus = corpus::load_corpus_file(&config.paths.prepped)?;
    let table = EmbeddingTable::load_file(config.vector_table_path())?;
    let (centroids_path, assignments_path, _) = config.domains_paths();
    let model = DomainModel::load_files(&centroids_path, &assignments_path, &table)?;
    let (factorization, row_ids, col_ids) = nmf::load_factorization(&config.paths.mf)?;
    let reconstructed = nmf::reconstruct(&factorization);
    // Rebuild the vote matrix aligned with the persisted id maps.
    let votes = {
        let mut cells = Vec::new();
        for q in &corpus.questions {
            for (user, score) in corpus::author_vote_cells(q) {
                cells.push((q.id, user, score));
            }
        }
        let keep_rows: BTreeSet<u64> = row_ids.iter().copied().collect();
        let keep_cols: BTreeSet<u64> = col_ids.iter().copied().collect();
        cells.retain(|(q, u, _)| keep_rows.contains(q) && keep_cols.contains(u));
        VoteMatrix::from_parts(row_ids, col_ids, &cells)
    };
    Ok((corpus, table, model, votes, reconstructed))
}

/// Execute one stage against the config. Outputs are written atomically;
/// human-readable progress goes to stderr, query results to stdout.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<()> {
    require_inputs(config, stage)?;
    match stage {
        Stage::Ingest => {
            let file = std::fs::File::open(&config.paths.posts)
                .map_err(|e| Error::io(&config.paths.posts, e))?;
            let mut reader = corpus::PostReader::new(std::io::BufReader::new(file));
            let built = corpus::build_corpus(
                reader.by_ref(),
                config.ingest.top_answers,
                config.ingest.min_score,
            )?;
            let skips = reader.skip_report();
            if skips.total() > 0 {
                eprintln!(
                    "ingest: skipped {} rows (missing id: {}, missing score: {}, answers without parent: {})",
                    skips.total(),
                    skips.missing_id,
                    skips.missing_score,
                    skips.answer_without_parent
                );
            }
            eprintln!(
                "ingest: {} questions, {} candidate experts",
                built.questions.len(),
                built.users.len()
            );
            corpus::save_corpus_file(&built, &config.paths.corpus)
        }
        Stage::Prep => {
            let mut loaded = corpus::load_corpus_file(&config.paths.corpus)?;
            let cfg = load_filter_config(config)?;
            textprep::prepare_corpus(&mut loaded, &cfg);
            corpus::save_corpus_file(&loaded, &config.paths.prepped)
        }
        Stage::Embed => {
            let prepped = corpus::load_corpus_file(&config.paths.prepped)?;
            let mut sentences = corpus::training_sentences(&prepped);
            if let Some(extra) = &config.embed.extra_text {
                let text =
                    std::fs::read_to_string(extra).map_err(|e| Error::io(extra, e))?;
                for line in text.lines() {
                    let tokens: Vec<String> =
                        line.split_whitespace().map(str::to_string).collect();
                    if !tokens.is_empty() {
                        sentences.push(tokens);
                    }
                }
            }
            let sgns = SgnsConfig {
                dim: config.embed.dim,
                window: config.embed.window,
                negatives: config.embed.negatives,
                epochs: config.embed.epochs,
                learning_rate: config.embed.learning_rate,
                min_count: config.embed.min_count,
                subsample_threshold: config.embed.subsample_threshold,
                seed: config.stage_seed(Stage::Embed),
                workers: config.embed.workers,
            };
            let table = train_sgns(&sentences, &sgns)?;
            eprintln!("embed: vocabulary {}, dim {}", table.len(), table.dim());
            table.save_file(&config.paths.embeddings)?;
            if let Some(dict_path) = &config.prep.dictionary {
                let dictionary = textprep::load_word_list(dict_path)?;
                let filtered = table.restrict_vocabulary(&dictionary)?;
                let out = config
                    .paths
                    .filtered_embeddings
                    .as_ref()
                    .ok_or_else(|| {
                        Error::Config(
                            "a dictionary is configured but paths.filtered_embeddings is not"
                                .to_string(),
                        )
                    })?;
                eprintln!("embed: filtered vocabulary {}", filtered.len());
                filtered.save_file(out)?;
            }
            Ok(())
        }
        Stage::Vectorize => {
            let prepped = corpus::load_corpus_file(&config.paths.prepped)?;
            let table = EmbeddingTable::load_file(config.vector_table_path())?;
            let (vectors, skipped) = question_vectors(&prepped, &table);
            if skipped > 0 {
                eprintln!("vectorize: {skipped} questions had no in-vocabulary tokens");
            }
            docvec::save_doc_vectors(&vectors, table.dim(), &config.paths.vectors)
        }
        Stage::Domains => {
            let table = EmbeddingTable::load_file(config.vector_table_path())?;
            let vectors = docvec::load_doc_vectors(&config.paths.vectors)?;
            let select = SelectKConfig {
                seed: config.stage_seed(Stage::Domains),
                max_iters: config.domains.max_iters,
                restarts: config.domains.restarts,
                k_min_useful: config.domains.k_min_useful,
                ..SelectKConfig::default()
            };
            let k = if config.domains.k == 0 {
                None
            } else {
                Some(config.domains.k)
            };
            let (model, report) = domains::build_domain_model(
                &table,
                k,
                &config.domains.k_candidates,
                &select,
                &vectors,
            )?;
            let (centroids_path, assignments_path, kselect_path) = config.domains_paths();
            model.save_files(&centroids_path, &assignments_path)?;
            if let Some(report) = report {
                eprintln!(
                    "domains: selected k = {} from {:?}",
                    report.chosen_k, config.domains.k_candidates
                );
                domains::save_kselection_report(&report, &kselect_path)?;
            }
            Ok(())
        }
        Stage::Mf => {
            let prepped = corpus::load_corpus_file(&config.paths.prepped)?;
            let votes = VoteMatrix::from_corpus(&prepped);
            let effective_rank = config.mf.rank.min(votes.rows().min(votes.cols())).max(1);
            if effective_rank != config.mf.rank {
                eprintln!(
                    "mf: rank {} clamped to {} for a {}x{} matrix",
                    config.mf.rank,
                    effective_rank,
                    votes.rows(),
                    votes.cols()
                );
            }
            let cfg = NmfConfig {
                rank: effective_rank,
                alpha: config.mf.alpha,
                rho: config.mf.rho,
                tol: config.mf.tol,
                max_iter: config.mf.max_iter,
                seed: config.stage_seed(Stage::Mf),
            };
            let factorization = nmf::factorize(&votes, &cfg)?;
            eprintln!(
                "mf: rank {} objective {}",
                cfg.rank,
                factorization.loss_trace.last().unwrap()
            );
            nmf::save_factorization(&factorization, &votes, &config.paths.mf)
        }
        Stage::Index => {
            let (prepped, table, model, votes, reconstructed) =
                load_offline_artifacts(config)?;
            let blend = nmf::blend_scores(&votes, &reconstructed, config.index.lambda)?;
            let stopwords = stopword_set(config)?;
            let index = build_expert_index(
                &prepped,
                &table,
                &model,
                &blend,
                &stopwords,
                &BTreeSet::new(),
            );
            eprintln!(
                "index: {} questions across {} domains",
                index.num_questions(),
                index.num_domains()
            );
            index.save_file(&config.paths.index)
        }
        Stage::Query => {
            if config.query.text.is_empty() {
                return Err(Error::Config("query.text is empty".to_string()));
            }
            let index = ExpertIndex::load_file(&config.paths.index)?;
            let table = EmbeddingTable::load_file(config.vector_table_path())?;
            let rec = if config.query.baseline {
                jaccard_recommend(
                    &config.query.text,
                    &index,
                    config.query.top,
                    config.query.lambda,
                )?
            } else {
                recommend_experts(
                    &config.query.text,
                    &index,
                    &table,
                    config.query.top,
                    config.query.lambda,
                )?
            };
            let mut stdout = std::io::stdout().lock();
            if config.query.json {
                writeln!(stdout, "{}", rec.to_json())
                    .map_err(|e| Error::io("stdout", e))?;
            } else {
                writeln!(stdout, "query: {}", rec.query)
                    .map_err(|e| Error::io("stdout", e))?;
                writeln!(stdout, "domain: {}", rec.domain)
                    .map_err(|e| Error::io("stdout", e))?;
                for (rank, e) in rec.experts.iter().enumerate() {
                    writeln!(
                        stdout,
                        "{:>3}. user {:<8} score {:.6} (question {}, similarity {:.6})",
                        rank + 1,
                        e.user_id,
                        e.score,
                        e.question_id,
                        e.similarity
                    )
                    .map_err(|e| Error::io("stdout", e))?;
                }
            }
            Ok(())
        }
        Stage::Eval => {
            let queries_path = config.eval.queries.as_ref().ok_or_else(|| {
                Error::Config("eval.queries is not configured".to_string())
            })?;
            let (prepped, table, model, votes, reconstructed) =
                load_offline_artifacts(config)?;
            let file =
                std::fs::File::open(queries_path).map_err(|e| Error::io(queries_path, e))?;
            let queries = eval::load_queries(std::io::BufReader::new(file))?;
            let stopwords = stopword_set(config)?;
            let report = eval::run_evaluation(
                &prepped,
                &table,
                &model,
                &votes,
                &reconstructed,
                &stopwords,
                &queries,
                config.eval.folds,
                &config.eval.lambdas,
                config.eval.top,
                config.stage_seed(Stage::Eval),
            )?;
            let mut buf = Vec::new();
            report
                .write_keyvalue(&mut buf)
                .map_err(|e| Error::io(&config.paths.report, e))?;
            write_atomic(&config.paths.report, &buf)?;
            let mut csv_path = config.paths.report.as_os_str().to_owned();
            csv_path.push(".csv");
            let csv_path = PathBuf::from(csv_path);
            let mut buf = Vec::new();
            report
                .write_csv(&mut buf)
                .map_err(|e| Error::io(&csv_path, e))?;
            write_atomic(&csv_path, &buf)
        }
    }
}

/// Run the offline stages in order, then eval when queries are configured.
pub fn run_all(config: &PipelineConfig) -> Result<()> {
    for stage in Stage::OFFLINE_ORDER {
        eprintln!("pipeline: running {}", stage.name());
        run_stage(stage, config)?;
    }
    if config.eval.queries.is_some() {
        eprintln!("pipeline: running eval");
        run_stage(Stage::Eval, config)?;
    }
    Ok(())
}

impl Error {
    /// Exit status for the CLI: missing inputs are distinguishable from
    /// stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingInput(_) => 2,
            _ => 1,
        }
    }
}
