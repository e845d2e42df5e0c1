//! Distributed word representations trained from scratch with skip-gram
//! negative sampling, plus the word2vec-style text interchange format.
//!
//! The default training mode is strictly sequential and bit-reproducible
//! for a fixed seed. Setting `workers > 1` opts into hogwild-style
//! lock-free updates, which are faster and non-deterministic.

use std::cell::UnsafeCell;
use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matrix::{dot, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SgnsConfig {
    /// Vector dimensionality.
    pub dim: usize,
    /// Context radius; the effective window shrinks uniformly per position.
    pub window: usize,
    /// Negative samples per positive pair.
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Words occurring fewer times are dropped from the vocabulary.
    pub min_count: u64,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub subsample_threshold: f64,
    pub seed: u64,
    /// 1 = deterministic sequential training; >1 = racing parallel updates.
    pub workers: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 5,
            subsample_threshold: 1e-4,
            seed: 1,
            workers: 1,
        }
    }
}

/// A word -> dense vector map. Row order is the vocabulary order
/// (descending count, ties alphabetical, for trained tables).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix,
}

impl EmbeddingTable {
    pub fn from_entries(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = match entries.first() {
            Some((_, v)) => v.len(),
            None => return Err(Error::NoTrainableVocabulary),
        };
        let mut words = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dim);
        for (i, (word, vector)) in entries.into_iter().enumerate() {
            if vector.len() != dim {
                return Err(Error::EmbeddingFormat {
                    line: i + 2,
                    message: format!(
                        "expected {dim} components for {word:?}, found {}",
                        vector.len()
                    ),
                });
            }
            if index.insert(word.clone(), i).is_some() {
                return Err(Error::EmbeddingFormat {
                    line: i + 2,
                    message: format!("duplicate word {word:?}"),
                });
            }
            words.push(word);
            data.extend_from_slice(&vector);
        }
        let rows = words.len();
        Ok(EmbeddingTable {
            dim,
            words,
            index,
            vectors: Matrix::from_vec(rows, dim, data),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, idx: usize) -> &[f64] {
        self.vectors.row(idx)
    }

    /// The row for an in-vocabulary word, absent otherwise.
    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.vectors.row(i))
    }

    /// Sub-table over `vocab ∩ dictionary`, vectors unchanged, original
    /// row order preserved.
    pub fn restrict_vocabulary(&self, dictionary: &BTreeSet<String>) -> Result<EmbeddingTable> {
        let entries: Vec<(String, Vec<f64>)> = self
            .words
            .iter()
            .enumerate()
            .filter(|(_, w)| dictionary.contains(*w))
            .map(|(i, w)| (w.clone(), self.vectors.row(i).to_vec()))
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocabularyIntersection);
        }
        EmbeddingTable::from_entries(entries)
    }

    /// Top-k vocabulary words by cosine similarity, excluding the query
    /// word, sorted non-increasing.
    pub fn nearest_neighbors(&self, word: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let query_idx = self
            .index_of(word)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))?;
        let query = self.vectors.row(query_idx);
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(self.len() - 1);
        for i in 0..self.len() {
            if i == query_idx {
                continue;
            }
            if let Ok(sim) = crate::docvec::cosine(query, self.vectors.row(i)) {
                scored.push((i, sim));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, sim)| (self.words[i].clone(), sim))
            .collect())
    }

    /// Text format: header `<vocab_size> <dim>`, then one
    /// `<word> <v1> ... <v_dim>` line per word. Floats use the shortest
    /// decimal representation that round-trips exactly.
    pub fn save<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "{} {}", self.len(), self.dim)?;
        let mut line = String::new();
        for (word, row) in self.words.iter().zip(self.vectors.iter_rows()) {
            line.clear();
            line.push_str(word);
            for v in row {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            writeln!(sink, "{line}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(source: R) -> Result<EmbeddingTable> {
        let mut lines = source.lines();
        let header = lines
            .next()
            .ok_or(Error::EmbeddingFormat {
                line: 1,
                message: "missing header".to_string(),
            })?
            .map_err(|e| Error::EmbeddingFormat {
                line: 1,
                message: e.to_string(),
            })?;
        let mut parts = header.split_whitespace();
        let (count, dim) = match (
            parts.next().and_then(|s| s.parse::<usize>().ok()),
            parts.next().and_then(|s| s.parse::<usize>().ok()),
        ) {
            (Some(c), Some(d)) => (c, d),
            _ => {
                return Err(Error::EmbeddingFormat {
                    line: 1,
                    message: format!("bad header {header:?}"),
                })
            }
        };

        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::EmbeddingFormat {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap().to_string();
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::EmbeddingFormat {
                        line: line_no,
                        message: format!("bad float {f:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::EmbeddingFormat {
                    line: line_no,
                    message: format!("expected {dim} components, found {}", values.len()),
                });
            }
            entries.push((word, values));
        }
        if entries.len() != count {
            return Err(Error::EmbeddingFormat {
                line: entries.len() + 1,
                message: format!("header declares {count} words, found {}", entries.len()),
            });
        }
        EmbeddingTable::from_entries(entries)
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.save(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::pipeline::write_atomic(path, &buf)
    }

    pub fn load_file(path: &Path) -> Result<EmbeddingTable> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        EmbeddingTable::load(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    /// Mean per-pair loss for each epoch.
    pub epoch_loss: Vec<f64>,
    pub total_pairs: u64,
}

struct Vocab {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    total: u64,
}

fn build_vocab(sentences: &[Vec<String>], min_count: u64) -> Option<Vocab> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sentence in sentences {
        for token in sentence {
            *counts.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    let mut retained: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    if retained.is_empty() {
        return None;
    }
    retained.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let words: Vec<String> = retained.iter().map(|(w, _)| w.to_string()).collect();
    let counts: Vec<u64> = retained.iter().map(|&(_, c)| c).collect();
    let index = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();
    let total = counts.iter().sum();
    Some(Vocab {
        words,
        counts,
        index,
        total,
    })
}

/// Unigram^0.75 noise distribution, sampled by binary search over the
/// cumulative weights.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut acc = 0.0;
        for &c in counts {
            acc += (c as f64).powf(0.75);
            cumulative.push(acc);
        }
        NoiseTable { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let r: f64 = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= r)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss of one skip-gram example: -log ς(u_o·v_c) - Σ log ς(-u_n·v_c).
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut loss = softplus(-dot(context, center));
    for n in negatives {
        loss += softplus(dot(n, center));
    }
    loss
}

/// Analytic gradients of [`pair_loss`] with respect to the center (input)
/// vector, the context (output) vector, and each negative's output vector.
pub fn pair_gradients(
    center: &[f64],
    context: &[f64],
    negatives: &[&[f64]],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let dim = center.len();
    let mut d_center = vec![0.0; dim];

    let g_pos = sigmoid(dot(context, center)) - 1.0;
    let d_context: Vec<f64> = center.iter().map(|&v| g_pos * v).collect();
    for (d, &u) in d_center.iter_mut().zip(context) {
        *d += g_pos * u;
    }

    let mut d_negatives = Vec::with_capacity(negatives.len());
    for n in negatives {
        let g_neg = sigmoid(dot(n, center));
        d_negatives.push(center.iter().map(|&v| g_neg * v).collect());
        for (d, &u) in d_center.iter_mut().zip(*n) {
            *d += g_neg * u;
        }
    }
    (d_center, d_context, d_negatives)
}

/// Total loss of a frozen batch of (center, context, negatives) index
/// triples against explicit parameter matrices.
pub fn batch_loss(input: &Matrix, output: &Matrix, batch: &[(usize, usize, Vec<usize>)]) -> f64 {
    batch
        .iter()
        .map(|(c, o, negs)| {
            let neg_rows: Vec<&[f64]> = negs.iter().map(|&n| output.row(n)).collect();
            pair_loss(input.row(*c), output.row(*o), &neg_rows)
        })
        .sum()
}

/// Analytic gradients of [`batch_loss`] for every parameter.
pub fn batch_gradients(
    input: &Matrix,
    output: &Matrix,
    batch: &[(usize, usize, Vec<usize>)],
) -> (Matrix, Matrix) {
    let mut d_input = Matrix::zeros(input.rows(), input.cols());
    let mut d_output = Matrix::zeros(output.rows(), output.cols());
    for (c, o, negs) in batch {
        let neg_rows: Vec<&[f64]> = negs.iter().map(|&n| output.row(n)).collect();
        let (dc, do_, dn) = pair_gradients(input.row(*c), output.row(*o), &neg_rows);
        for (acc, g) in d_input.row_mut(*c).iter_mut().zip(&dc) {
            *acc += g;
        }
        for (acc, g) in d_output.row_mut(*o).iter_mut().zip(&do_) {
            *acc += g;
        }
        for (&n, grads) in negs.iter().zip(&dn) {
            for (acc, g) in d_output.row_mut(n).iter_mut().zip(grads) {
                *acc += g;
            }
        }
    }
    (d_input, d_output)
}

/// One SGD step on a (center, context) pair: updates the context and
/// sampled-negative output rows immediately, then applies the accumulated
/// gradient to the center's input row. Returns the pre-update loss.
#[allow(clippy::too_many_arguments)]
fn train_pair(
    input_row: &mut [f64],
    output: &mut Matrix,
    context: usize,
    noise: &NoiseTable,
    negatives: usize,
    lr: f64,
    rng: &mut impl Rng,
    scratch: &mut Vec<f64>,
) -> f64 {
    let dim = input_row.len();
    scratch.clear();
    scratch.resize(dim, 0.0);
    let mut loss = 0.0;

    let mut step = |target: usize, label: f64, acc: &mut [f64]| {
        let u = output.row_mut(target);
        let x = dot(input_row, u);
        let g = sigmoid(x) - label;
        loss += if label == 1.0 {
            softplus(-x)
        } else {
            softplus(x)
        };
        for i in 0..dim {
            acc[i] += g * u[i];
            u[i] -= lr * g * input_row[i];
        }
    };

    step(context, 1.0, scratch);
    for _ in 0..negatives {
        let n = noise.sample(rng);
        if n == context {
            continue;
        }
        step(n, 0.0, scratch);
    }

    for i in 0..dim {
        input_row[i] -= lr * scratch[i];
    }
    loss
}

/// Hogwild parameter block for the opt-in parallel mode: raw shared rows
/// updated without synchronization. Races are accepted by design; results
/// are non-deterministic across runs.
struct Racy {
    data: UnsafeCell<Vec<f64>>,
    cols: usize,
}

unsafe impl Sync for Racy {}

impl Racy {
    fn new(m: Matrix) -> Self {
        let cols = m.cols();
        Racy {
            data: UnsafeCell::new(m.data().to_vec()),
            cols,
        }
    }

    #[allow(clippy::mut_from_ref)]
    unsafe fn row_mut(&self, r: usize) -> &mut [f64] {
        let vec = &mut *self.data.get();
        &mut vec[r * self.cols..(r + 1) * self.cols]
    }

    fn into_matrix(self, rows: usize) -> Matrix {
        Matrix::from_vec(rows, self.cols, self.data.into_inner())
    }
}

pub fn train_sgns(sentences: &[Vec<String>], cfg: &SgnsConfig) -> Result<EmbeddingTable> {
    train_sgns_with_stats(sentences, cfg).map(|(table, _)| table)
}

pub fn train_sgns_with_stats(
    sentences: &[Vec<String>],
    cfg: &SgnsConfig,
) -> Result<(EmbeddingTable, TrainStats)> {
    assert!(cfg.dim >= 1 && cfg.window >= 1 && cfg.epochs >= 1 && cfg.negatives >= 1);
    assert!(cfg.learning_rate > 0.0);
    let vocab =
        build_vocab(sentences, cfg.min_count).ok_or(Error::NoTrainableVocabulary)?;
    let noise = NoiseTable::new(&vocab.counts);

    // Input vectors start uniform in [-0.5/dim, 0.5/dim]; output vectors
    // start at zero.
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input = Matrix::zeros(vocab.words.len(), cfg.dim);
    for r in 0..vocab.words.len() {
        for v in input.row_mut(r) {
            *v = (init_rng.gen::<f64>() - 0.5) / cfg.dim as f64;
        }
    }
    let output = Matrix::zeros(vocab.words.len(), cfg.dim);

    // Sentences as vocabulary ids, out-of-vocabulary tokens dropped.
    let id_sentences: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().filter_map(|t| vocab.index.get(t).copied()).collect())
        .filter(|s: &Vec<usize>| !s.is_empty())
        .collect();
    let tokens_per_epoch: u64 = id_sentences.iter().map(|s| s.len() as u64).sum();
    let total_tokens = tokens_per_epoch * cfg.epochs as u64;

    let keep_prob: Vec<f64> = vocab
        .counts
        .iter()
        .map(|&c| {
            if cfg.subsample_threshold <= 0.0 {
                1.0
            } else {
                let f = c as f64 / vocab.total as f64;
                ((cfg.subsample_threshold / f).sqrt() + cfg.subsample_threshold / f).min(1.0)
            }
        })
        .collect();

    let mut stats = TrainStats::default();

    if cfg.workers <= 1 {
        let mut model = input;
        let mut out = output;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
        let mut scratch = Vec::new();
        let mut processed = 0u64;
        for _ in 0..cfg.epochs {
            let mut epoch_loss = 0.0;
            let mut epoch_pairs = 0u64;
            for sentence in &id_sentences {
                let kept: Vec<usize> = sentence
                    .iter()
                    .copied()
                    .filter(|&id| keep_prob[id] >= 1.0 || rng.gen::<f64>() < keep_prob[id])
                    .collect();
                processed += sentence.len() as u64;
                let lr = decayed_lr(cfg.learning_rate, processed, total_tokens);
                for pos in 0..kept.len() {
                    let center = kept[pos];
                    let shrink = rng.gen_range(0..cfg.window);
                    let radius = cfg.window - shrink;
                    let lo = pos.saturating_sub(radius);
                    let hi = (pos + radius + 1).min(kept.len());
                    for ctx_pos in lo..hi {
                        if ctx_pos == pos {
                            continue;
                        }
                        let loss = train_pair(
                            model.row_mut(center),
                            &mut out,
                            kept[ctx_pos],
                            &noise,
                            cfg.negatives,
                            lr,
                            &mut rng,
                            &mut scratch,
                        );
                        epoch_loss += loss;
                        epoch_pairs += 1;
                    }
                }
            }
            stats.total_pairs += epoch_pairs;
            stats
                .epoch_loss
                .push(if epoch_pairs > 0 { epoch_loss / epoch_pairs as f64 } else { 0.0 });
        }
        let table = finish_table(vocab.words, model, cfg.dim)?;
        return Ok((table, stats));
    }

    // Parallel mode: workers race over sentence chunks, epochs are barriers.
    let shared_input = Racy::new(input);
    let shared_output = Racy::new(output);
    let workers = cfg.workers.min(id_sentences.len().max(1));
    let chunk = id_sentences.len().div_ceil(workers);

    for epoch in 0..cfg.epochs {
        let results: Vec<(f64, u64)> = std::thread::scope(|scope| {
            let handles: Vec<_> = id_sentences
                .chunks(chunk)
                .enumerate()
                .map(|(w, sentences)| {
                    let shared_input = &shared_input;
                    let shared_output = &shared_output;
                    let noise = &noise;
                    let keep_prob = &keep_prob;
                    scope.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            cfg.seed ^ (epoch as u64) << 32 ^ (w as u64 + 1),
                        );
                        let mut scratch = Vec::new();
                        let mut loss_sum = 0.0;
                        let mut pairs = 0u64;
                        let mut local = 0u64;
                        let local_total: u64 =
                            sentences.iter().map(|s| s.len() as u64).sum::<u64>().max(1);
                        for sentence in sentences {
                            let kept: Vec<usize> = sentence
                                .iter()
                                .copied()
                                .filter(|&id| {
                                    keep_prob[id] >= 1.0 || rng.gen::<f64>() < keep_prob[id]
                                })
                                .collect();
                            local += sentence.len() as u64;
                            let lr = decayed_lr(
                                cfg.learning_rate,
                                epoch as u64 * local_total + local,
                                cfg.epochs as u64 * local_total,
                            );
                            for pos in 0..kept.len() {
                                let center = kept[pos];
                                let shrink = rng.gen_range(0..cfg.window);
                                let radius = cfg.window - shrink;
                                let lo = pos.saturating_sub(radius);
                                let hi = (pos + radius + 1).min(kept.len());
                                for ctx_pos in lo..hi {
                                    if ctx_pos == pos {
                                        continue;
                                    }
                                    // Racing by design.
                                    let (center_row, out_row_source) = unsafe {
                                        (shared_input.row_mut(center), shared_output)
                                    };
                                    let loss = train_pair_racy(
                                        center_row,
                                        out_row_source,
                                        kept[ctx_pos],
                                        noise,
                                        cfg.negatives,
                                        lr,
                                        &mut rng,
                                        &mut scratch,
                                    );
                                    loss_sum += loss;
                                    pairs += 1;
                                }
                            }
                        }
                        (loss_sum, pairs)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let (loss, pairs) = results
            .iter()
            .fold((0.0, 0u64), |(l, p), &(dl, dp)| (l + dl, p + dp));
        stats.total_pairs += pairs;
        stats
            .epoch_loss
            .push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
    }

    let rows = vocab.words.len();
    let table = finish_table(vocab.words, shared_input.into_matrix(rows), cfg.dim)?;
    Ok((table, stats))
}

#[allow(clippy::too_many_arguments)]
fn train_pair_racy(
    input_row: &mut [f64],
    output: &Racy,
    context: usize,
    noise: &NoiseTable,
    negatives: usize,
    lr: f64,
    rng: &mut impl Rng,
    scratch: &mut Vec<f64>,
) -> f64 {
    let dim = input_row.len();
    scratch.clear();
    scratch.resize(dim, 0.0);
    let mut loss = 0.0;

    let mut step = |target: usize, label: f64, acc: &mut [f64]| {
        let u = unsafe { output.row_mut(target) };
        let x = dot(input_row, u);
        let g = sigmoid(x) - label;
        loss += if label == 1.0 {
            softplus(-x)
        } else {
            softplus(x)
        };
        for i in 0..dim {
            acc[i] += g * u[i];
            u[i] -= lr * g * input_row[i];
        }
    };

    step(context, 1.0, scratch);
    for _ in 0..negatives {
        let n = noise.sample(rng);
        if n == context {
            continue;
        }
        step(n, 0.0, scratch);
    }

    for i in 0..dim {
        input_row[i] -= lr * scratch[i];
    }
    loss
}

fn decayed_lr(initial: f64, processed: u64, total: u64) -> f64 {
    let remaining = 1.0 - processed as f64 / (total + 1) as f64;
    initial * remaining.max(1e-4)
}

fn finish_table(words: Vec<String>, vectors: Matrix, dim: usize) -> Result<EmbeddingTable> {
    debug_assert!(vectors
        .iter_rows()
        .all(|r| r.iter().any(|&v| v != 0.0)));
    let entries = words
        .into_iter()
        .enumerate()
        .map(|(i, w)| (w, vectors.row(i).to_vec()))
        .collect();
    let table = EmbeddingTable::from_entries(entries)?;
    debug_assert_eq!(table.dim(), dim);
    Ok(table)
}
