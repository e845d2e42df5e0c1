//! Retrieval-quality measurement: accuracy@N (hit rate) and nDCG@N over
//! k-fold held-out query sets, for both the embedding method and the
//! Jaccard baseline, across a λ grid.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::domains::DomainModel;
use crate::embedding::EmbeddingTable;
use crate::matrix::Matrix;
use crate::nmf::{blend_scores, VoteMatrix};
use crate::recommend::{build_expert_index, jaccard_recommend, recommend_experts};
use crate::{Error, Result};

/// A held-out query: free text plus the users who actually answered it
/// (with their answer scores, used as nDCG relevance grades).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    /// The corpus question this query was drawn from, if any; it is
    /// excluded from the index when evaluating its fold.
    pub source_question: Option<u64>,
    pub text: String,
    pub truth: BTreeMap<u64, i64>,
}

/// Seeded shuffle, near-equal partition (fold sizes differ by at most 1).
/// Returns query indices per fold.
pub fn kfold_split(n_queries: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(folds >= 1, "folds must be at least 1");
    assert!(n_queries >= folds, "need at least one query per fold");
    let mut indices: Vec<usize> = (0..n_queries).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n_queries).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let mut out = vec![Vec::new(); folds];
    for (pos, idx) in indices.into_iter().enumerate() {
        out[pos % folds].push(idx);
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    out
}

/// Fraction of queries whose top-N recommended users contain at least one
/// true answerer.
pub fn accuracy_at_n(rankings: &[Vec<u64>], truths: &[BTreeSet<u64>], n: usize) -> f64 {
    assert!(n >= 1);
    assert_eq!(rankings.len(), truths.len());
    if rankings.is_empty() {
        return 0.0;
    }
    let hits = rankings
        .iter()
        .zip(truths)
        .filter(|(ranked, truth)| ranked.iter().take(n).any(|u| truth.contains(u)))
        .count();
    hits as f64 / rankings.len() as f64
}

/// nDCG@N with relevance = the true answer score clipped at 0 (0 for users
/// outside the truth set). Returns `None` when the ideal DCG is 0, so such
/// queries can be excluded from means.
pub fn ndcg_at_n(ranking: &[u64], truth: &BTreeMap<u64, i64>, n: usize) -> Option<f64> {
    assert!(n >= 1);
    let rel = |user: u64| truth.get(&user).map_or(0.0, |&s| s.max(0) as f64);
    let dcg: f64 = ranking
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, &u)| rel(u) / ((i + 2) as f64).log2())
        .sum();

    let mut ideal: Vec<f64> = truth.values().map(|&s| s.max(0) as f64).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, r)| r / ((i + 2) as f64).log2())
        .sum();

    if idcg == 0.0 {
        None
    } else {
        Some(dcg / idcg)
    }
}

/// Mean nDCG@N over queries with nonzero ideal DCG.
pub fn mean_ndcg_at_n(rankings: &[Vec<u64>], truths: &[BTreeMap<u64, i64>], n: usize) -> f64 {
    let scores: Vec<f64> = rankings
        .iter()
        .zip(truths)
        .filter_map(|(r, t)| ndcg_at_n(r, t, n))
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Per-method metric columns; index i holds the value at N = i + 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub accuracy: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldLambdaReport {
    pub fold: usize,
    pub lambda: f64,
    pub embedding: MetricBlock,
    pub jaccard: MetricBlock,
    /// Queries contributing to the metrics.
    pub evaluated: usize,
    /// Queries whose true answerers never appear in the fold's candidate
    /// pool; reported separately, never averaged in.
    pub unreachable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub lambda: f64,
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: usize,
    pub n_max: usize,
    pub lambdas: Vec<f64>,
    pub seed: u64,
    pub queries: usize,
    pub rows: Vec<FoldLambdaReport>,
    pub aggregate: Vec<AggregateRow>,
}

/// Per fold: rebuild the index without the fold's source questions, then
/// run both recommenders for every λ on the grid and aggregate metrics.
#[allow(clippy::too_many_arguments)]
pub fn run_evaluation(
    corpus: &Corpus,
    table: &EmbeddingTable,
    model: &DomainModel,
    votes: &VoteMatrix,
    reconstructed: &Matrix,
    stopwords: &BTreeSet<String>,
    queries: &[EvalQuery],
    folds: usize,
    lambdas: &[f64],
    n_max: usize,
    seed: u64,
) -> Result<EvalReport> {
    assert!(n_max >= 1);
    assert!(!lambdas.is_empty(), "lambda grid must be non-empty");
    if queries.len() < folds {
        return Err(Error::InvalidInput(format!(
            "{} queries cannot fill {folds} folds",
            queries.len()
        )));
    }
    for &l in lambdas {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::LambdaOutOfRange(l));
        }
    }

    let fold_indices = kfold_split(queries.len(), folds, seed);
    let blend = blend_scores(votes, reconstructed, lambdas[0])?;

    let mut rows = Vec::new();
    for (fold_no, fold) in fold_indices.iter().enumerate() {
        let exclude: BTreeSet<u64> = fold
            .iter()
            .filter_map(|&i| queries[i].source_question)
            .collect();
        let index = build_expert_index(corpus, table, model, &blend, stopwords, &exclude);

        // Candidate pool of this fold's index.
        let pool: BTreeSet<u64> = index
            .questions
            .iter()
            .flatten()
            .flat_map(|q| q.answers.iter().map(|a| a.author))
            .collect();

        let mut reachable: Vec<&EvalQuery> = Vec::new();
        let mut unreachable = 0usize;
        for &i in fold {
            let q = &queries[i];
            if q.truth.keys().any(|u| pool.contains(u)) {
                reachable.push(q);
            } else {
                unreachable += 1;
            }
        }

        for &lambda in lambdas {
            let mut emb_rankings = Vec::with_capacity(reachable.len());
            let mut jac_rankings = Vec::with_capacity(reachable.len());
            let mut truth_sets = Vec::with_capacity(reachable.len());
            let mut truth_maps = Vec::with_capacity(reachable.len());
            for q in &reachable {
                let emb = recommend_experts(&q.text, &index, table, n_max, Some(lambda))
                    .map(|r| r.ranked_users())
                    .unwrap_or_default();
                let jac = jaccard_recommend(&q.text, &index, n_max, Some(lambda))
                    .map(|r| r.ranked_users())
                    .unwrap_or_default();
                emb_rankings.push(emb);
                jac_rankings.push(jac);
                truth_sets.push(q.truth.keys().copied().collect::<BTreeSet<u64>>());
                truth_maps.push(q.truth.clone());
            }

            let block = |rankings: &[Vec<u64>]| MetricBlock {
                accuracy: (1..=n_max)
                    .map(|n| accuracy_at_n(rankings, &truth_sets, n))
                    .collect(),
                ndcg: (1..=n_max)
                    .map(|n| mean_ndcg_at_n(rankings, &truth_maps, n))
                    .collect(),
            };

            rows.push(FoldLambdaReport {
                fold: fold_no,
                lambda,
                embedding: block(&emb_rankings),
                jaccard: block(&jac_rankings),
                evaluated: reachable.len(),
                unreachable,
            });
        }
    }

    let aggregate = aggregate_rows(&rows, lambdas, n_max);
    Ok(EvalReport {
        folds,
        n_max,
        lambdas: lambdas.to_vec(),
        seed,
        queries: queries.len(),
        rows,
        aggregate,
    })
}

fn aggregate_rows(rows: &[FoldLambdaReport], lambdas: &[f64], n_max: usize) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &lambda in lambdas {
        for method in ["embedding", "jaccard"] {
            for metric in ["accuracy", "ndcg"] {
                for n in 1..=n_max {
                    let values: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.lambda == lambda)
                        .map(|r| {
                            let block = if method == "embedding" {
                                &r.embedding
                            } else {
                                &r.jaccard
                            };
                            if metric == "accuracy" {
                                block.accuracy[n - 1]
                            } else {
                                block.ndcg[n - 1]
                            }
                        })
                        .collect();
                    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
                    let var = values
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>()
                        / values.len().max(1) as f64;
                    out.push(AggregateRow {
                        lambda,
                        method: method.to_string(),
                        metric: metric.to_string(),
                        n,
                        mean,
                        stddev: var.sqrt(),
                    });
                }
            }
        }
    }
    out
}

impl EvalReport {
    /// Key-value document, one `key value` pair per line.
    pub fn write_keyvalue<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "folds {}", self.folds)?;
        writeln!(sink, "queries {}", self.queries)?;
        writeln!(sink, "n_max {}", self.n_max)?;
        writeln!(sink, "seed {}", self.seed)?;
        let grid: Vec<String> = self.lambdas.iter().map(f64::to_string).collect();
        writeln!(sink, "lambda_grid {}", grid.join(","))?;
        for row in &self.rows {
            writeln!(
                sink,
                "fold.{}.lambda.{}.evaluated {}",
                row.fold, row.lambda, row.evaluated
            )?;
            writeln!(
                sink,
                "fold.{}.lambda.{}.unreachable {}",
                row.fold, row.lambda, row.unreachable
            )?;
            for n in 1..=self.n_max {
                writeln!(
                    sink,
                    "fold.{}.lambda.{}.accuracy@{} {}",
                    row.fold,
                    row.lambda,
                    n,
                    row.embedding.accuracy[n - 1]
                )?;
                writeln!(
                    sink,
                    "fold.{}.lambda.{}.ndcg@{} {}",
                    row.fold,
                    row.lambda,
                    n,
                    row.embedding.ndcg[n - 1]
                )?;
                writeln!(
                    sink,
                    "fold.{}.lambda.{}.jaccard_accuracy@{} {}",
                    row.fold,
                    row.lambda,
                    n,
                    row.jaccard.accuracy[n - 1]
                )?;
                writeln!(
                    sink,
                    "fold.{}.lambda.{}.jaccard_ndcg@{} {}",
                    row.fold,
                    row.lambda,
                    n,
                    row.jaccard.ndcg[n - 1]
                )?;
            }
        }
        for agg in &self.aggregate {
            writeln!(
                sink,
                "aggregate.lambda.{}.{}.{}@{}.mean {}",
                agg.lambda, agg.method, agg.metric, agg.n, agg.mean
            )?;
            writeln!(
                sink,
                "aggregate.lambda.{}.{}.{}@{}.stddev {}",
                agg.lambda, agg.method, agg.metric, agg.n, agg.stddev
            )?;
        }
        Ok(())
    }

    /// Flat CSV: `fold,lambda,n,metric,value` with `mean`/`stddev`
    /// pseudo-folds for the aggregates.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "fold,lambda,n,metric,value")?;
        for row in &self.rows {
            for n in 1..=self.n_max {
                writeln!(
                    sink,
                    "{},{},{},accuracy,{}",
                    row.fold,
                    row.lambda,
                    n,
                    row.embedding.accuracy[n - 1]
                )?;
                writeln!(
                    sink,
                    "{},{},{},ndcg,{}",
                    row.fold,
                    row.lambda,
                    n,
                    row.embedding.ndcg[n - 1]
                )?;
                writeln!(
                    sink,
                    "{},{},{},jaccard_accuracy,{}",
                    row.fold,
                    row.lambda,
                    n,
                    row.jaccard.accuracy[n - 1]
                )?;
                writeln!(
                    sink,
                    "{},{},{},jaccard_ndcg,{}",
                    row.fold,
                    row.lambda,
                    n,
                    row.jaccard.ndcg[n - 1]
                )?;
            }
        }
        for agg in &self.aggregate {
            let metric = format!("{}_{}", agg.method, agg.metric);
            writeln!(
                sink,
                "mean,{},{},{},{}",
                agg.lambda, agg.n, metric, agg.mean
            )?;
            writeln!(
                sink,
                "stddev,{},{},{},{}",
                agg.lambda, agg.n, metric, agg.stddev
            )?;
        }
        Ok(())
    }
}

/// Queries file: one JSON record per line with `text`, `truth`
/// (user id -> score), and optional `source_question`.
pub fn load_queries<R: std::io::BufRead>(source: R) -> Result<Vec<EvalQuery>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::CorpusFormat(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: EvalQuery = serde_json::from_str(&line)
            .map_err(|e| Error::CorpusFormat(format!("queries line {}: {e}", i + 1)))?;
        if q.truth.is_empty() {
            return Err(Error::InvalidInput(format!(
                "query at line {} has empty ground truth",
                i + 1
            )));
        }
        out.push(q);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no queries in file".to_string()));
    }
    Ok(out)
}

pub fn save_queries<W: Write>(queries: &[EvalQuery], mut sink: W) -> std::io::Result<()> {
    for q in queries {
        writeln!(sink, "{}", serde_json::to_string(q)?)?;
    }
    Ok(())
}
