//! Latent knowledge domains: k-means over L2-normalized word vectors,
//! silhouette-driven selection of the cluster count, and assignment of
//! question vectors to their nearest domain centroid by cosine distance.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::docvec::{cosine, DocVector};
use crate::embedding::EmbeddingTable;
use crate::matrix::{squared_distance, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct KmeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop when the largest centroid shift falls below this.
    pub tol: f64,
    /// Independent k-means++ starts; the best final objective wins.
    pub restarts: usize,
}

impl KmeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KmeansConfig {
            k,
            seed,
            max_iters: 100,
            tol: 1e-9,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squared distances after every assignment step.
    pub objective_trace: Vec<f64>,
    pub objective: f64,
}

/// Lloyd iterations from seeded k-means++ starts. Empty clusters are
/// re-seeded with the point currently farthest from its centroid. The
/// objective is non-increasing across iterations within each start.
pub fn kmeans(points: &Matrix, cfg: &KmeansConfig) -> Result<KmeansResult> {
    let n = points.rows();
    if cfg.k < 2 || cfg.k > n {
        return Err(Error::InvalidClusterCount { k: cfg.k, n });
    }
    if !points.is_finite() {
        return Err(Error::NonFiniteInput);
    }

    let mut best: Option<KmeansResult> = None;
    for restart in 0..cfg.restarts.max(1) {
        let run = lloyd(points, cfg, cfg.seed.wrapping_add(restart as u64))?;
        let better = match &best {
            None => true,
            Some(b) => run.objective < b.objective,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &Matrix, cfg: &KmeansConfig, seed: u64) -> Result<KmeansResult> {
    let dim = points.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plusplus_init(points, cfg.k, &mut rng);

    let (mut assignment, mut objective) = assign_points(points, &centroids);
    let mut trace = vec![objective];

    for _ in 0..cfg.max_iters {
        let new_centroids = update_centroids(points, &assignment, cfg.k, &centroids);
        let shift = (0..cfg.k)
            .map(|c| squared_distance(centroids.row(c), new_centroids.row(c)))
            .fold(0.0f64, f64::max)
            .sqrt();
        centroids = new_centroids;
        let (new_assignment, new_objective) = assign_points(points, &centroids);
        debug_assert!(new_objective <= trace.last().unwrap() + 1e-10);
        trace.push(new_objective);
        let stable = new_assignment == assignment;
        assignment = new_assignment;
        objective = new_objective;
        if stable || shift < cfg.tol {
            break;
        }
    }

    // Fix the centroids to the exact means of the final assignment, so the
    // published model holds the mean invariant even when iteration was cut
    // short. A stable final assignment makes this a no-op.
    let mut counts = vec![0usize; cfg.k];
    let mut means = Matrix::zeros(cfg.k, dim);
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (m, &v) in means.row_mut(c).iter_mut().zip(points.row(i)) {
            *m += v;
        }
    }
    for c in 0..cfg.k {
        if counts[c] > 0 {
            for m in means.row_mut(c) {
                *m /= counts[c] as f64;
            }
        } else {
            let row = centroids.row(c).to_vec();
            means.row_mut(c).copy_from_slice(&row);
        }
    }

    Ok(KmeansResult {
        assignment,
        centroids: means,
        objective_trace: trace,
        objective,
    })
}

/// k-means++: first centroid uniform, the rest sampled proportional to the
/// squared distance from the nearest chosen centroid.
fn plusplus_init(points: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = points.rows();
    let dim = points.cols();
    let mut centroids = Matrix::zeros(k, dim);
    let mut chosen = vec![false; n];

    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    chosen[first] = true;

    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), centroids.row(0)))
        .collect();

    for c in 1..k {
        let total: f64 = min_dist.iter().sum();
        let idx = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in min_dist.iter().enumerate() {
                acc += d;
                if acc > r {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining points coincide with chosen centroids.
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[idx] = true;
        centroids.row_mut(c).copy_from_slice(points.row(idx));
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = squared_distance(points.row(i), centroids.row(c));
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

/// Nearest-centroid assignment; ties break to the lowest cluster index.
/// Returns the assignment and the within-cluster sum of squared distances.
fn assign_points(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, f64) {
    let mut assignment = Vec::with_capacity(points.rows());
    let mut objective = 0.0;
    for i in 0..points.rows() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..centroids.rows() {
            let d = squared_distance(points.row(i), centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignment.push(best);
        objective += best_d;
    }
    (assignment, objective)
}

fn update_centroids(
    points: &Matrix,
    assignment: &[usize],
    k: usize,
    previous: &Matrix,
) -> Matrix {
    let dim = points.cols();
    let mut sums = Matrix::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, &v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    let mut claimed = vec![false; points.rows()];
    for c in 0..k {
        if counts[c] > 0 {
            for s in sums.row_mut(c) {
                *s /= counts[c] as f64;
            }
        } else {
            // Re-seed with the unclaimed point farthest from its centroid.
            let far = (0..points.rows())
                .filter(|&i| !claimed[i])
                .max_by(|&a, &b| {
                    let da = squared_distance(points.row(a), previous.row(assignment[a]));
                    let db = squared_distance(points.row(b), previous.row(assignment[b]));
                    da.total_cmp(&db).then(b.cmp(&a))
                });
            if let Some(i) = far {
                claimed[i] = true;
                sums.row_mut(c).copy_from_slice(points.row(i));
            } else {
                let row = previous.row(c).to_vec();
                sums.row_mut(c).copy_from_slice(&row);
            }
        }
    }
    sums
}

/// Mean silhouette score over all points: (b - a) / max(a, b) with
/// Euclidean distances, a = mean intra-cluster distance excluding self,
/// b = the smallest mean distance to another cluster. Singletons and
/// degenerate 0/0 points contribute 0.
pub fn silhouette(points: &Matrix, assignment: &[usize]) -> Result<f64> {
    let indices: Vec<usize> = (0..points.rows()).collect();
    silhouette_over(points, assignment, &indices)
}

/// Silhouette on a uniform sample of at most `max_points` points (seeded);
/// exact when the dataset is small enough. Sampled points are still scored
/// against the full dataset.
pub fn silhouette_sampled(
    points: &Matrix,
    assignment: &[usize],
    max_points: usize,
    seed: u64,
) -> Result<f64> {
    let n = points.rows();
    if n <= max_points {
        return silhouette(points, assignment);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..max_points {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    indices.truncate(max_points);
    indices.sort_unstable();
    silhouette_over(points, assignment, &indices)
}

fn silhouette_over(points: &Matrix, assignment: &[usize], sample: &[usize]) -> Result<f64> {
    let n = points.rows();
    assert_eq!(assignment.len(), n, "assignment length mismatch");
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &c in assignment {
        sizes[c] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }

    let mut total = 0.0;
    for &i in sample {
        let own = assignment[i];
        let mut dist_sum = vec![0.0f64; k];
        for j in 0..n {
            if j == i {
                continue;
            }
            dist_sum[assignment[j]] +=
                squared_distance(points.row(i), points.row(j)).sqrt();
        }
        if sizes[own] <= 1 {
            continue; // singleton contributes 0
        }
        let a = dist_sum[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| dist_sum[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / sample.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelectionReport {
    pub candidates: Vec<(usize, f64)>,
    pub chosen_k: usize,
}

#[derive(Debug, Clone)]
pub struct SelectKConfig {
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    /// Candidates below this are ignored when picking the argmax (tiny k
    /// trivially scores high but makes clustering pointless).
    pub k_min_useful: usize,
    pub silhouette_sample: usize,
}

impl Default for SelectKConfig {
    fn default() -> Self {
        SelectKConfig {
            seed: 1,
            max_iters: 100,
            tol: 1e-9,
            restarts: 5,
            k_min_useful: 50,
            silhouette_sample: 2000,
        }
    }
}

/// Cluster at every candidate k and score each result; the chosen k is the
/// silhouette argmax among candidates with `k >= k_min_useful` (ties favor
/// the smaller k). When no candidate qualifies, the unrestricted argmax is
/// chosen. All scores are reported so a human can override.
pub fn select_k(
    points: &Matrix,
    candidates: &[usize],
    cfg: &SelectKConfig,
) -> Result<KSelectionReport> {
    assert!(!candidates.is_empty(), "candidate list must be non-empty");
    let mut scored = Vec::with_capacity(candidates.len());
    for &k in candidates {
        let km = kmeans(
            points,
            &KmeansConfig {
                k,
                seed: cfg.seed,
                max_iters: cfg.max_iters,
                tol: cfg.tol,
                restarts: cfg.restarts,
            },
        )?;
        let score = silhouette_sampled(
            points,
            &km.assignment,
            cfg.silhouette_sample,
            cfg.seed,
        )?;
        scored.push((k, score));
    }

    let pick = |pairs: &[(usize, f64)]| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &(k, s) in pairs {
            best = match best {
                None => Some((k, s)),
                Some((bk, bs)) => {
                    if s > bs || (s == bs && k < bk) {
                        Some((k, s))
                    } else {
                        Some((bk, bs))
                    }
                }
            };
        }
        best.map(|(k, _)| k)
    };

    let qualifying: Vec<(usize, f64)> = scored
        .iter()
        .copied()
        .filter(|&(k, _)| k >= cfg.k_min_useful)
        .collect();
    let chosen_k = pick(&qualifying)
        .or_else(|| pick(&scored))
        .expect("non-empty candidates");

    Ok(KSelectionReport {
        candidates: scored,
        chosen_k,
    })
}

/// Map each question vector to the centroid minimizing cosine distance
/// (1 - cosine similarity); ties break to the lowest cluster index. Zero
/// vectors are skipped and counted.
pub fn assign_questions(
    question_vectors: &[DocVector],
    centroids: &Matrix,
) -> (BTreeMap<u64, usize>, usize) {
    let mut assignment = BTreeMap::new();
    let mut skipped = 0usize;
    for qv in question_vectors {
        match nearest_centroid_by_cosine(&qv.values, centroids) {
            Some(c) if !qv.is_zero() => {
                assignment.insert(qv.doc_id, c);
            }
            _ => skipped += 1,
        }
    }
    (assignment, skipped)
}

pub(crate) fn nearest_centroid_by_cosine(vector: &[f64], centroids: &Matrix) -> Option<usize> {
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for c in 0..centroids.rows() {
        let d = match cosine(vector, centroids.row(c)) {
            Ok(sim) => 1.0 - sim,
            Err(_) => continue,
        };
        if d < best_d {
            best_d = d;
            best = Some(c);
        }
    }
    best
}

/// The clustering model: domain centroids over normalized word vectors,
/// word memberships, and per-question domain assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainModel {
    pub k: usize,
    pub centroids: Matrix,
    pub word_assignment: BTreeMap<String, usize>,
    pub question_assignment: BTreeMap<u64, usize>,
}

impl DomainModel {
    /// Words of each domain, sorted, index = cluster.
    pub fn domain_words(&self) -> Vec<Vec<String>> {
        let mut words = vec![Vec::new(); self.k];
        for (w, &c) in &self.word_assignment {
            words[c].push(w.clone());
        }
        words
    }
}

/// Normalized copies of the table's vectors, in vocabulary order.
pub fn normalized_word_points(table: &EmbeddingTable) -> Result<Matrix> {
    let mut points = table.vectors().clone();
    points.normalize_rows()?;
    Ok(points)
}

/// Cluster the vocabulary and assign questions. `k` is either fixed or
/// selected by silhouette over `candidates`.
pub fn build_domain_model(
    table: &EmbeddingTable,
    k: Option<usize>,
    candidates: &[usize],
    cfg: &SelectKConfig,
    question_vectors: &[DocVector],
) -> Result<(DomainModel, Option<KSelectionReport>)> {
    let points = normalized_word_points(table)?;
    let (k, report) = match k {
        Some(k) => (k, None),
        None => {
            let report = select_k(&points, candidates, cfg)?;
            (report.chosen_k, Some(report))
        }
    };
    let km = kmeans(
        &points,
        &KmeansConfig {
            k,
            seed: cfg.seed,
            max_iters: cfg.max_iters,
            tol: cfg.tol,
            restarts: cfg.restarts,
        },
    )?;
    let word_assignment = table
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), km.assignment[i]))
        .collect();
    let (question_assignment, _skipped) = assign_questions(question_vectors, &km.centroids);
    Ok((
        DomainModel {
            k,
            centroids: km.centroids,
            word_assignment,
            question_assignment,
        },
        report,
    ))
}

/// Recompute word memberships for loaded models: nearest centroid in the
/// clustering space (Euclidean over normalized vectors).
pub fn derive_word_assignment(
    table: &EmbeddingTable,
    centroids: &Matrix,
) -> Result<BTreeMap<String, usize>> {
    let points = normalized_word_points(table)?;
    let mut out = BTreeMap::new();
    for (i, w) in table.words().iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..centroids.rows() {
            let d = squared_distance(points.row(i), centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        out.insert(w.clone(), best);
    }
    Ok(out)
}

impl DomainModel {
    /// Centroid matrix in the embedding text format, keyed `c0..c{k-1}`.
    pub fn save_centroids<W: Write>(&self, sink: W) -> Result<()> {
        let entries: Vec<(String, Vec<f64>)> = (0..self.k)
            .map(|c| (format!("c{c}"), self.centroids.row(c).to_vec()))
            .collect();
        let table = EmbeddingTable::from_entries(entries)?;
        table.save(sink).map_err(|e| Error::CorpusFormat(e.to_string()))
    }

    /// One `<question_id> <cluster>` pair per line.
    pub fn save_assignments<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for (qid, c) in &self.question_assignment {
            writeln!(sink, "{qid} {c}")?;
        }
        Ok(())
    }

    pub fn save_files(&self, centroids_path: &Path, assignments_path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.save_centroids(&mut buf)?;
        crate::pipeline::write_atomic(centroids_path, &buf)?;
        let mut buf = Vec::new();
        self.save_assignments(&mut buf)
            .map_err(|e| Error::io(assignments_path, e))?;
        crate::pipeline::write_atomic(assignments_path, &buf)
    }

    /// Load a model saved by [`DomainModel::save_files`]. Word memberships
    /// are recomputed from the table.
    pub fn load_files(
        centroids_path: &Path,
        assignments_path: &Path,
        table: &EmbeddingTable,
    ) -> Result<DomainModel> {
        let centroid_table = EmbeddingTable::load_file(centroids_path)?;
        let k = centroid_table.len();
        let mut centroids = Matrix::zeros(k, centroid_table.dim());
        for c in 0..k {
            let key = format!("c{c}");
            let row = centroid_table.lookup(&key).ok_or_else(|| {
                Error::CorpusFormat(format!(
                    "{}: missing centroid key {key}",
                    centroids_path.display()
                ))
            })?;
            centroids.row_mut(c).copy_from_slice(row);
        }

        let file = std::fs::File::open(assignments_path)
            .map_err(|e| Error::io(assignments_path, e))?;
        let mut question_assignment = BTreeMap::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(assignments_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (qid, cluster) = match (
                parts.next().and_then(|s| s.parse::<u64>().ok()),
                parts.next().and_then(|s| s.parse::<usize>().ok()),
            ) {
                (Some(q), Some(c)) if c < k => (q, c),
                _ => {
                    return Err(Error::CorpusFormat(format!(
                        "{}: bad assignment at line {}",
                        assignments_path.display(),
                        i + 1
                    )))
                }
            };
            question_assignment.insert(qid, cluster);
        }

        let word_assignment = derive_word_assignment(table, &centroids)?;
        Ok(DomainModel {
            k,
            centroids,
            word_assignment,
            question_assignment,
        })
    }
}

pub fn save_kselection_report(report: &KSelectionReport, path: &Path) -> Result<()> {
    let mut buf = String::new();
    buf.push_str("k silhouette\n");
    for (k, s) in &report.candidates {
        buf.push_str(&format!("{k} {s}\n"));
    }
    buf.push_str(&format!("chosen {}\n", report.chosen_k));
    crate::pipeline::write_atomic(path, buf.as_bytes())
}
