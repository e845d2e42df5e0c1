//! Query-time expert recommendation: vectorize the query, route it to its
//! nearest knowledge domain, match it against that domain's questions, and
//! emit a ranked, author-deduplicated expert list. A Jaccard-overlap
//! baseline replaces the word-representation step for comparison runs.
//!
//! The index is immutable once built; concurrent queries share it freely.
//! Rebuilds produce a fresh index swapped in by the caller.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::docvec::{cosine, summarize, DocVector};
use crate::domains::{nearest_centroid_by_cosine, DomainModel};
use crate::embedding::EmbeddingTable;
use crate::matrix::Matrix;
use crate::nmf::BlendedScores;
use crate::textprep::{tokenize, TokenDoc};
use crate::{Error, Result};

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedAnswer {
    pub id: u64,
    pub author: u64,
    /// Raw vote score of this answer.
    pub observed: i64,
    /// Max-normalized observed (question, author) vote cell.
    pub observed_norm: f64,
    /// Max-normalized reconstructed (question, author) cell.
    pub reconstructed_norm: f64,
}

impl IndexedAnswer {
    /// λ-blend of the normalized observed and reconstructed cells. Storing
    /// both sides lets any λ be evaluated at query time.
    pub fn blended(&self, lambda: f64) -> f64 {
        (1.0 - lambda) * self.observed_norm + lambda * self.reconstructed_norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedQuestion {
    pub id: u64,
    pub domain: usize,
    pub vector: Vec<f64>,
    /// Question tokens, kept for the Jaccard baseline.
    pub tokens: Vec<String>,
    /// Sorted by (blended score at the index's build λ desc, id asc).
    pub answers: Vec<IndexedAnswer>,
}

/// Everything the online stage needs: domain centroids and word sets for
/// routing, per-domain question vectors for matching, and per-question
/// answer scores for ranking authors.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertIndex {
    pub lambda: f64,
    pub dim: usize,
    pub centroids: Matrix,
    /// Sorted word list per domain (the cluster-as-token-set view).
    pub domain_words: Vec<Vec<String>>,
    /// Applied to query text before vectorization; sorted.
    pub stopwords: Vec<String>,
    /// Questions per domain, each list sorted by question id.
    pub questions: Vec<Vec<IndexedQuestion>>,
}

impl ExpertIndex {
    pub fn num_domains(&self) -> usize {
        self.questions.len()
    }

    pub fn num_questions(&self) -> usize {
        self.questions.iter().map(Vec::len).sum()
    }

    fn prep_query(&self, query: &str) -> Vec<String> {
        let tokens = tokenize(query);
        let stopwords: BTreeSet<String> = self.stopwords.iter().cloned().collect();
        tokens
            .into_iter()
            .filter(|t| !stopwords.contains(t))
            .collect()
    }
}

/// A ranked expert with the evidence behind the ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub user_id: u64,
    pub score: f64,
    /// The matched question contributing this expert.
    pub question_id: u64,
    /// Similarity between the query and the matched question.
    pub similarity: f64,
    /// This author's answers on the matched question.
    pub answer_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub query: String,
    pub domain: usize,
    pub experts: Vec<Expert>,
}

impl Recommendation {
    pub fn ranked_users(&self) -> Vec<u64> {
        self.experts.iter().map(|e| e.user_id).collect()
    }

    /// The machine-readable output shape:
    /// `{query, domain, experts: [{user_id, score, question_id, similarity}]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "query": self.query,
            "domain": self.domain,
            "experts": self.experts.iter().map(|e| serde_json::json!({
                "user_id": e.user_id,
                "score": e.score,
                "question_id": e.question_id,
                "similarity": e.similarity,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Route a query vector to the domain whose centroid minimizes cosine
/// distance; ties break to the lowest index.
pub fn route_query(query_vec: &DocVector, model: &DomainModel) -> Result<usize> {
    if query_vec.is_zero() {
        return Err(Error::EmptyQuery);
    }
    nearest_centroid_by_cosine(&query_vec.values, &model.centroids).ok_or(Error::EmptyQuery)
}

/// Build the online index from the offline artifacts. Questions without a
/// domain assignment (zero vectors) or without a single authored answer
/// are left out; `exclude` drops held-out questions for evaluation folds.
pub fn build_expert_index(
    corpus: &Corpus,
    table: &EmbeddingTable,
    model: &DomainModel,
    blend: &BlendedScores,
    stopwords: &BTreeSet<String>,
    exclude: &BTreeSet<u64>,
) -> ExpertIndex {
    let lambda = blend.lambda();
    let mut questions: Vec<Vec<IndexedQuestion>> = vec![Vec::new(); model.k];

    for q in &corpus.questions {
        if exclude.contains(&q.id) {
            continue;
        }
        let domain = match model.question_assignment.get(&q.id) {
            Some(&d) => d,
            None => continue,
        };
        let tokens: Vec<String> = q
            .plain_text()
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let vector = summarize(&TokenDoc::new(q.id, tokens.clone()), table);
        if vector.is_zero() {
            continue;
        }

        let mut answers: Vec<IndexedAnswer> = q
            .answers
            .iter()
            .filter_map(|a| {
                a.owner_user_id.map(|author| {
                    let (observed_norm, reconstructed_norm) = blend.cell_norms(q.id, author);
                    IndexedAnswer {
                        id: a.id,
                        author,
                        observed: a.score,
                        observed_norm,
                        reconstructed_norm,
                    }
                })
            })
            .collect();
        if answers.is_empty() {
            continue;
        }
        answers.sort_by(|a, b| {
            b.blended(lambda)
                .total_cmp(&a.blended(lambda))
                .then(a.id.cmp(&b.id))
        });

        questions[domain].push(IndexedQuestion {
            id: q.id,
            domain,
            vector: vector.values,
            tokens,
            answers,
        });
    }
    for list in &mut questions {
        list.sort_by_key(|q| q.id);
    }

    ExpertIndex {
        lambda,
        dim: table.dim(),
        centroids: model.centroids.clone(),
        domain_words: model.domain_words(),
        stopwords: stopwords.iter().cloned().collect(),
        questions,
    }
}

/// Collect up to `ell` distinct authors walking questions in match order
/// and each question's answers in blended order. The expert score is the
/// blended answer score times the matched-question similarity.
fn collect_experts(
    ranked_questions: &[(&IndexedQuestion, f64)],
    ell: usize,
    lambda: f64,
) -> Vec<Expert> {
    let mut experts: Vec<Expert> = Vec::with_capacity(ell);
    let mut seen: BTreeSet<u64> = BTreeSet::new();

    for &(question, similarity) in ranked_questions {
        if experts.len() >= ell {
            break;
        }
        let mut order: Vec<&IndexedAnswer> = question.answers.iter().collect();
        order.sort_by(|a, b| {
            b.blended(lambda)
                .total_cmp(&a.blended(lambda))
                .then(a.id.cmp(&b.id))
        });
        for answer in order {
            if experts.len() >= ell {
                break;
            }
            if !seen.insert(answer.author) {
                continue;
            }
            let answer_ids: Vec<u64> = question
                .answers
                .iter()
                .filter(|a| a.author == answer.author)
                .map(|a| a.id)
                .collect();
            experts.push(Expert {
                user_id: answer.author,
                score: answer.blended(lambda) * similarity,
                question_id: question.id,
                similarity,
                answer_ids,
            });
        }
    }
    experts
}

/// Embedding-based recommendation: cosine routing and cosine question
/// matching over the query's TF-weighted vector.
pub fn recommend_experts(
    query: &str,
    index: &ExpertIndex,
    table: &EmbeddingTable,
    ell: usize,
    lambda: Option<f64>,
) -> Result<Recommendation> {
    assert!(ell >= 1, "ell must be at least 1");
    let lambda = lambda.unwrap_or(index.lambda);
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }

    let tokens = index.prep_query(query);
    let query_vec = summarize(&TokenDoc::new(0, tokens), table);
    if query_vec.is_zero() {
        return Err(Error::EmptyQuery);
    }
    let domain = nearest_centroid_by_cosine(&query_vec.values, &index.centroids)
        .ok_or(Error::EmptyQuery)?;
    let questions = &index.questions[domain];
    if questions.is_empty() {
        return Err(Error::EmptyDomain(domain));
    }

    let mut ranked: Vec<(&IndexedQuestion, f64)> = questions
        .iter()
        .map(|q| {
            let sim = cosine(&query_vec.values, &q.vector).unwrap_or(-1.0);
            (q, sim)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.id.cmp(&b.0.id)));

    Ok(Recommendation {
        query: query.to_string(),
        domain,
        experts: collect_experts(&ranked, ell, lambda),
    })
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    if union == 0 {
        0.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Baseline: the identical pipeline with the word-representation step
/// replaced by Jaccard overlap of token sets, both for domain routing
/// (against clusters as token sets) and question matching.
pub fn jaccard_recommend(
    query: &str,
    index: &ExpertIndex,
    ell: usize,
    lambda: Option<f64>,
) -> Result<Recommendation> {
    assert!(ell >= 1, "ell must be at least 1");
    let lambda = lambda.unwrap_or(index.lambda);
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }

    let tokens = index.prep_query(query);
    if tokens.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let query_set: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();

    let mut domain = 0usize;
    let mut best = f64::NEG_INFINITY;
    for (d, words) in index.domain_words.iter().enumerate() {
        let set: BTreeSet<&str> = words.iter().map(String::as_str).collect();
        let sim = jaccard(&query_set, &set);
        if sim > best {
            best = sim;
            domain = d;
        }
    }
    let questions = &index.questions[domain];
    if questions.is_empty() {
        return Err(Error::EmptyDomain(domain));
    }

    let mut ranked: Vec<(&IndexedQuestion, f64)> = questions
        .iter()
        .map(|q| {
            let set: BTreeSet<&str> = q.tokens.iter().map(String::as_str).collect();
            (q, jaccard(&query_set, &set))
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.id.cmp(&b.0.id)));

    Ok(Recommendation {
        query: query.to_string(),
        domain,
        experts: collect_experts(&ranked, ell, lambda),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind")]
enum IndexRecord {
    #[serde(rename = "meta")]
    Meta {
        version: u32,
        lambda: f64,
        dim: usize,
        k: usize,
        stopwords: Vec<String>,
    },
    #[serde(rename = "centroid")]
    Centroid { id: usize, values: Vec<f64> },
    #[serde(rename = "domain")]
    Domain { id: usize, words: Vec<String> },
    #[serde(rename = "question")]
    Question(IndexedQuestion),
}

impl ExpertIndex {
    pub fn save<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        let mut write = |record: &IndexRecord| -> std::io::Result<()> {
            writeln!(sink, "{}", serde_json::to_string(record)?)
        };
        write(&IndexRecord::Meta {
            version: INDEX_FORMAT_VERSION,
            lambda: self.lambda,
            dim: self.dim,
            k: self.num_domains(),
            stopwords: self.stopwords.clone(),
        })?;
        for d in 0..self.num_domains() {
            write(&IndexRecord::Centroid {
                id: d,
                values: self.centroids.row(d).to_vec(),
            })?;
        }
        for (d, words) in self.domain_words.iter().enumerate() {
            write(&IndexRecord::Domain {
                id: d,
                words: words.clone(),
            })?;
        }
        for domain in &self.questions {
            for q in domain {
                write(&IndexRecord::Question(q.clone()))?;
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(source: R) -> Result<ExpertIndex> {
        let mut meta: Option<(f64, usize, usize, Vec<String>)> = None;
        let mut centroid_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut domain_words_map: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        let mut question_records: Vec<IndexedQuestion> = Vec::new();

        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|e| Error::CorpusFormat(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: IndexRecord = serde_json::from_str(&line)
                .map_err(|e| Error::CorpusFormat(format!("index line {}: {e}", i + 1)))?;
            match record {
                IndexRecord::Meta {
                    version,
                    lambda,
                    dim,
                    k,
                    stopwords,
                } => {
                    if version != INDEX_FORMAT_VERSION {
                        return Err(Error::VersionMismatch {
                            expected: INDEX_FORMAT_VERSION,
                            found: version,
                        });
                    }
                    meta = Some((lambda, dim, k, stopwords));
                }
                IndexRecord::Centroid { id, values } => {
                    centroid_rows.insert(id, values);
                }
                IndexRecord::Domain { id, words } => {
                    domain_words_map.insert(id, words);
                }
                IndexRecord::Question(q) => question_records.push(q),
            }
        }

        let (lambda, dim, k, stopwords) = meta.ok_or_else(|| {
            Error::CorpusFormat("index file has no meta record".to_string())
        })?;
        if centroid_rows.len() != k {
            return Err(Error::CorpusFormat(format!(
                "expected {k} centroids, found {}",
                centroid_rows.len()
            )));
        }
        let mut centroids = Matrix::zeros(k, dim);
        for (id, values) in centroid_rows {
            if values.len() != dim || id >= k {
                return Err(Error::CorpusFormat(format!("bad centroid record {id}")));
            }
            centroids.row_mut(id).copy_from_slice(&values);
        }
        let mut domain_words = vec![Vec::new(); k];
        for (id, words) in domain_words_map {
            if id >= k {
                return Err(Error::CorpusFormat(format!("bad domain record {id}")));
            }
            domain_words[id] = words;
        }
        let mut questions = vec![Vec::new(); k];
        for q in question_records {
            if q.domain >= k || q.vector.len() != dim {
                return Err(Error::CorpusFormat(format!("bad question record {}", q.id)));
            }
            questions[q.domain].push(q);
        }
        for list in &mut questions {
            list.sort_by_key(|q| q.id);
        }

        Ok(ExpertIndex {
            lambda,
            dim,
            centroids,
            domain_words,
            stopwords,
            questions,
        })
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.save(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::pipeline::write_atomic(path, &buf)
    }

    pub fn load_file(path: &Path) -> Result<ExpertIndex> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        ExpertIndex::load(std::io::BufReader::new(file))
    }
}
