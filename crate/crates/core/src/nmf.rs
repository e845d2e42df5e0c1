//! Non-negative matrix factorization of the sparse question × user vote
//! matrix, under an elastic-net penalty, by alternating non-negative
//! coordinate descent. The learned reconstruction is blended with observed
//! scores to smooth sparsity.
//!
//! The Frobenius loss ranges over all cells (unobserved cells count as 0),
//! so the reconstruction interpolates toward 0 where nothing was observed.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{author_vote_cells, Corpus};
use crate::embedding::EmbeddingTable;
use crate::matrix::{dot, Matrix};
use crate::{Error, Result};

/// Sparse non-negative question × user score matrix. A stored 0 means an
/// observed zero-score answer; an absent cell means no observed answer.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMatrix {
    row_ids: Vec<u64>,
    col_ids: Vec<u64>,
    row_index: HashMap<u64, usize>,
    col_index: HashMap<u64, usize>,
    entries: BTreeMap<(usize, usize), f64>,
}

impl VoteMatrix {
    pub fn from_parts(row_ids: Vec<u64>, col_ids: Vec<u64>, cells: &[(u64, u64, f64)]) -> Self {
        let row_index: HashMap<u64, usize> =
            row_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let col_index: HashMap<u64, usize> =
            col_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut entries = BTreeMap::new();
        for &(q, u, s) in cells {
            debug_assert!(s >= 0.0);
            entries.insert((row_index[&q], col_index[&u]), s.max(0.0));
        }
        VoteMatrix {
            row_ids,
            col_ids,
            row_index,
            col_index,
            entries,
        }
    }

    /// Rows are the corpus questions, columns the candidate expert pool;
    /// cell (i, j) sums user j's positive answer scores on question i
    /// (negative scores clip to 0).
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let row_ids: Vec<u64> = corpus.questions.iter().map(|q| q.id).collect();
        let col_ids: Vec<u64> = corpus.users.iter().copied().collect();
        let mut cells = Vec::new();
        for q in &corpus.questions {
            for (user, score) in author_vote_cells(q) {
                cells.push((q.id, user, score));
            }
        }
        VoteMatrix::from_parts(row_ids, col_ids, &cells)
    }

    pub fn rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[u64] {
        &self.col_ids
    }

    pub fn row_of(&self, qid: u64) -> Option<usize> {
        self.row_index.get(&qid).copied()
    }

    pub fn col_of(&self, uid: u64) -> Option<usize> {
        self.col_index.get(&uid).copied()
    }

    /// Observed cell, `None` when no answer was observed.
    pub fn get(&self, qid: u64, uid: u64) -> Option<f64> {
        let r = self.row_of(qid)?;
        let c = self.col_of(uid)?;
        self.entries.get(&(r, c)).copied()
    }

    pub fn nnz(&self) -> usize {
        self.entries.values().filter(|&&v| v != 0.0).count()
    }

    pub fn dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows(), self.cols());
        for (&(r, c), &v) in &self.entries {
            m.set(r, c, v);
        }
        m
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmfConfig {
    pub rank: usize,
    /// Elastic-net intensity.
    pub alpha: f64,
    /// L1 ratio in [0, 1].
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl NmfConfig {
    pub fn new(rank: usize, seed: u64) -> Self {
        NmfConfig {
            rank,
            alpha: 0.1,
            rho: 0.5,
            tol: 1e-4,
            max_iter: 200,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Factorization {
    /// N × rank, non-negative.
    pub w: Matrix,
    /// rank × M, non-negative.
    pub h: Matrix,
    pub rank: usize,
    /// Objective value after initialization and after every alternating
    /// sweep; non-increasing.
    pub loss_trace: Vec<f64>,
    pub config: NmfConfig,
}

/// The optimized objective: ½‖V − WH‖²_F over all cells, plus
/// αρ(‖W‖₁ + ‖H‖₁) + (α(1−ρ)/2)(‖W‖²_F + ‖H‖²_F).
pub fn objective(v: &Matrix, w: &Matrix, h: &Matrix, alpha: f64, rho: f64) -> f64 {
    let wh = w.matmul(h);
    let mut loss = 0.0;
    for (x, y) in v.data().iter().zip(wh.data()) {
        let d = x - y;
        loss += d * d;
    }
    loss *= 0.5;
    let l1: f64 = w.data().iter().sum::<f64>() + h.data().iter().sum::<f64>();
    let l2: f64 = w.data().iter().map(|x| x * x).sum::<f64>()
        + h.data().iter().map(|x| x * x).sum::<f64>();
    loss + alpha * rho * l1 + 0.5 * alpha * (1.0 - rho) * l2
}

/// Minimize the elastic-net NMF objective by alternating non-negative
/// coordinate descent: each scalar update soft-thresholds by αρ, shrinks by
/// α(1−ρ), and projects onto the non-negative orthant, so the objective is
/// non-increasing by construction.
pub fn factorize(votes: &VoteMatrix, config: &NmfConfig) -> Result<Factorization> {
    let (n, m) = (votes.rows(), votes.cols());
    if config.rank < 1 || config.rank > n.min(m) {
        return Err(Error::RankOutOfRange {
            rank: config.rank,
            rows: n,
            cols: m,
        });
    }
    if votes.nnz() == 0 {
        return Err(Error::EmptyVoteMatrix);
    }
    assert!((0.0..=1.0).contains(&config.rho), "rho must lie in [0, 1]");
    assert!(config.alpha >= 0.0, "alpha must be non-negative");

    let v = votes.dense();
    let r = config.rank;
    let mean = v.data().iter().sum::<f64>() / (n * m) as f64;
    let scale = (mean / r as f64).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = Matrix::zeros(n, r);
    for x in 0..n {
        for l in 0..r {
            w.set(x, l, rng.gen::<f64>() * scale);
        }
    }
    let mut h = Matrix::zeros(r, m);
    for l in 0..r {
        for y in 0..m {
            h.set(l, y, rng.gen::<f64>() * scale);
        }
    }

    let l1 = config.alpha * config.rho;
    let l2 = config.alpha * (1.0 - config.rho);

    let mut trace = vec![objective(&v, &w, &h, config.alpha, config.rho)];
    for _ in 0..config.max_iter {
        sweep_w(&v, &mut w, &h, l1, l2);
        sweep_h(&v, &w, &mut h, l1, l2);
        let j = objective(&v, &w, &h, config.alpha, config.rho);
        let prev = *trace.last().unwrap();
        debug_assert!(j <= prev + 1e-10, "objective increased: {prev} -> {j}");
        trace.push(j);
        if (prev - j).abs() / prev.max(f64::MIN_POSITIVE) < config.tol {
            break;
        }
    }

    debug_assert!(w.data().iter().all(|&x| x >= 0.0));
    debug_assert!(h.data().iter().all(|&x| x >= 0.0));

    Ok(Factorization {
        w,
        h,
        rank: r,
        loss_trace: trace,
        config: config.clone(),
    })
}

/// One Gauss-Seidel pass over W with H fixed.
fn sweep_w(v: &Matrix, w: &mut Matrix, h: &Matrix, l1: f64, l2: f64) {
    let r = w.cols();
    // gram[l][l'] = (H Hᵀ), target[i][l] = (V Hᵀ)
    let ht = h.transpose();
    let gram = h.matmul(&ht);
    let target = v.matmul(&ht);

    let mut s = vec![0.0; r];
    for i in 0..v.rows() {
        let row = w.row(i);
        for l in 0..r {
            s[l] = dot(row, gram.row(l));
        }
        for l in 0..r {
            let old = w.get(i, l);
            let g = gram.get(l, l);
            let c = target.get(i, l) - (s[l] - old * g);
            let denom = g + l2;
            let new = if denom > 0.0 {
                ((c - l1) / denom).max(0.0)
            } else {
                0.0
            };
            if new != old {
                let delta = new - old;
                for (sl, gl) in s.iter_mut().zip(gram.row(l)) {
                    *sl += delta * gl;
                }
                w.set(i, l, new);
            }
        }
    }
}

/// One Gauss-Seidel pass over H with W fixed.
fn sweep_h(v: &Matrix, w: &Matrix, h: &mut Matrix, l1: f64, l2: f64) {
    let r = h.rows();
    let wt = w.transpose();
    let gram = wt.matmul(w);
    let target = wt.matmul(v);

    let mut s = vec![0.0; r];
    for j in 0..v.cols() {
        for l in 0..r {
            s[l] = (0..r).map(|l2i| gram.get(l, l2i) * h.get(l2i, j)).sum();
        }
        for l in 0..r {
            let old = h.get(l, j);
            let g = gram.get(l, l);
            let c = target.get(l, j) - (s[l] - old * g);
            let denom = g + l2;
            let new = if denom > 0.0 {
                ((c - l1) / denom).max(0.0)
            } else {
                0.0
            };
            if new != old {
                let delta = new - old;
                for (l2i, sl) in s.iter_mut().enumerate() {
                    *sl += delta * gram.get(l, l2i);
                }
                h.set(l, j, new);
            }
        }
    }
}

/// The dense WH product; non-negative by construction.
pub fn reconstruct(f: &Factorization) -> Matrix {
    f.w.matmul(&f.h)
}

/// Max-normalize a non-negative matrix to [0, 1] over its support.
pub fn max_normalized(m: &Matrix) -> Matrix {
    let max = m.max_value();
    if max <= 0.0 {
        return m.clone();
    }
    let data: Vec<f64> = m.data().iter().map(|&x| x / max).collect();
    Matrix::from_vec(m.rows(), m.cols(), data)
}

/// Convex blend of the max-normalized observed and reconstructed score
/// matrices: score(i, j) = (1-λ)·õ(i, j) + λ·r̃(i, j).
#[derive(Debug, Clone)]
pub struct BlendedScores {
    lambda: f64,
    row_index: HashMap<u64, usize>,
    col_index: HashMap<u64, usize>,
    observed_norm: Matrix,
    reconstructed_norm: Matrix,
}

impl BlendedScores {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Blended score for a (question, user) cell; cells absent from both
    /// supports score 0.
    pub fn score(&self, qid: u64, uid: u64) -> f64 {
        match (self.row_index.get(&qid), self.col_index.get(&uid)) {
            (Some(&r), Some(&c)) => {
                (1.0 - self.lambda) * self.observed_norm.get(r, c)
                    + self.lambda * self.reconstructed_norm.get(r, c)
            }
            _ => 0.0,
        }
    }

    pub fn cell_norms(&self, qid: u64, uid: u64) -> (f64, f64) {
        match (self.row_index.get(&qid), self.col_index.get(&uid)) {
            (Some(&r), Some(&c)) => (
                self.observed_norm.get(r, c),
                self.reconstructed_norm.get(r, c),
            ),
            _ => (0.0, 0.0),
        }
    }
}

pub fn blend_scores(
    observed: &VoteMatrix,
    reconstructed: &Matrix,
    lambda: f64,
) -> Result<BlendedScores> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    assert_eq!(reconstructed.rows(), observed.rows(), "shape mismatch");
    assert_eq!(reconstructed.cols(), observed.cols(), "shape mismatch");
    Ok(BlendedScores {
        lambda,
        row_index: observed.row_index.clone(),
        col_index: observed.col_index.clone(),
        observed_norm: max_normalized(&observed.dense()),
        reconstructed_norm: max_normalized(reconstructed),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct FactorizationMeta {
    rank: usize,
    alpha: f64,
    rho: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
    final_loss: f64,
    row_ids: Vec<u64>,
    col_ids: Vec<u64>,
}

pub fn factorization_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with_ext = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with_ext(".w"), with_ext(".h"), with_ext(".json"))
}

/// Persist as two matrix files in the embedding text format (`w<row>`
/// keys for W rows, `h<col>` keys for H columns) plus a JSON config record
/// carrying the row/column id maps.
pub fn save_factorization(f: &Factorization, votes: &VoteMatrix, prefix: &Path) -> Result<()> {
    let (w_path, h_path, meta_path) = factorization_paths(prefix);

    let w_entries: Vec<(String, Vec<f64>)> = (0..f.w.rows())
        .map(|i| (format!("w{i}"), f.w.row(i).to_vec()))
        .collect();
    EmbeddingTable::from_entries(w_entries)?.save_file(&w_path)?;

    let ht = f.h.transpose();
    let h_entries: Vec<(String, Vec<f64>)> = (0..ht.rows())
        .map(|j| (format!("h{j}"), ht.row(j).to_vec()))
        .collect();
    EmbeddingTable::from_entries(h_entries)?.save_file(&h_path)?;

    let meta = FactorizationMeta {
        rank: f.rank,
        alpha: f.config.alpha,
        rho: f.config.rho,
        tol: f.config.tol,
        max_iter: f.config.max_iter,
        seed: f.config.seed,
        final_loss: *f.loss_trace.last().unwrap_or(&0.0),
        row_ids: votes.row_ids.clone(),
        col_ids: votes.col_ids.clone(),
    };
    let mut buf = Vec::new();
    writeln!(buf, "{}", serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| Error::io(&meta_path, e))?;
    crate::pipeline::write_atomic(&meta_path, &buf)
}

/// Load a persisted factorization together with its row/column id maps.
pub fn load_factorization(prefix: &Path) -> Result<(Factorization, Vec<u64>, Vec<u64>)> {
    let (w_path, h_path, meta_path) = factorization_paths(prefix);
    let meta_text =
        std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: FactorizationMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::CorpusFormat(format!("{}: {e}", meta_path.display())))?;

    let read_keyed = |path: &Path, key: char, count: usize| -> Result<Matrix> {
        let table = EmbeddingTable::load_file(path)?;
        let mut m = Matrix::zeros(count, table.dim());
        for i in 0..count {
            let row = table.lookup(&format!("{key}{i}")).ok_or_else(|| {
                Error::CorpusFormat(format!("{}: missing key {key}{i}", path.display()))
            })?;
            m.row_mut(i).copy_from_slice(row);
        }
        Ok(m)
    };

    let w = read_keyed(&w_path, 'w', meta.row_ids.len())?;
    let ht = read_keyed(&h_path, 'h', meta.col_ids.len())?;
    let config = NmfConfig {
        rank: meta.rank,
        alpha: meta.alpha,
        rho: meta.rho,
        tol: meta.tol,
        max_iter: meta.max_iter,
        seed: meta.seed,
    };
    let f = Factorization {
        w,
        h: ht.transpose(),
        rank: meta.rank,
        loss_trace: vec![meta.final_loss],
        config,
    };
    Ok((f, meta.row_ids, meta.col_ids))
}
