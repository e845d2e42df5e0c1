//! Acceptance suite: one test per criterion, each printing a PASS line and
//! holding its stated runtime budget. Expected values come from
//! independent brute-force oracles implemented here in test code.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use savant::corpus::{self, Corpus};
use savant::docvec::{cosine, summarize, term_frequency};
use savant::domains::{kmeans, silhouette, DomainModel, KmeansConfig};
use savant::embedding::{batch_gradients, batch_loss, EmbeddingTable};
use savant::eval::{ndcg_at_n, run_evaluation, EvalQuery};
use savant::matrix::{dot, Matrix};
use savant::nmf::{self, blend_scores, factorize, NmfConfig, VoteMatrix};
use savant::pipeline::{run_all, PipelineConfig};
use savant::recommend::{build_expert_index, recommend_experts, ExpertIndex, IndexedAnswer, IndexedQuestion};
use savant::textprep::{load_word_list, TokenDoc};

// ---------------------------------------------------------------------
// Shared pipeline artifacts for criteria 5 and 6
// ---------------------------------------------------------------------

struct BaseArtifacts {
    _dir: tempfile::TempDir,
    config: PipelineConfig,
    corpus: Corpus,
    table: EmbeddingTable,
    model: DomainModel,
    votes: VoteMatrix,
    reconstructed: Matrix,
    queries: Vec<EvalQuery>,
    planted: BTreeMap<usize, u64>,
    stopwords: BTreeSet<String>,
    elapsed: Duration,
}

static BASE: OnceLock<BaseArtifacts> = OnceLock::new();

fn load_artifacts(
    config: &PipelineConfig,
) -> (Corpus, EmbeddingTable, DomainModel, VoteMatrix, Matrix) {
    let corpus = corpus::load_corpus_file(&config.paths.prepped).unwrap();
    let table = EmbeddingTable::load_file(&config.paths.embeddings).unwrap();
    let (centroids, assignments, _) = config.domains_paths();
    let model = DomainModel::load_files(&centroids, &assignments, &table).unwrap();
    let (factorization, row_ids, _col_ids) = nmf::load_factorization(&config.paths.mf).unwrap();
    let reconstructed = nmf::reconstruct(&factorization);
    let votes = VoteMatrix::from_corpus(&corpus);
    assert_eq!(votes.row_ids(), row_ids.as_slice(), "id maps must align");
    (corpus, table, model, votes, reconstructed)
}

fn base() -> &'static BaseArtifacts {
    BASE.get_or_init(|| {
        let fixture = common::planted_corpus(11);
        let dir = tempfile::tempdir().unwrap();
        let config_path = common::write_workspace(dir.path(), &fixture, 42);
        let config = PipelineConfig::load(&config_path).unwrap();

        let start = Instant::now();
        run_all(&config).unwrap();
        let elapsed = start.elapsed();

        let (corpus, table, model, votes, reconstructed) = load_artifacts(&config);
        let stopwords = load_word_list(&dir.path().join("stopwords.txt")).unwrap();
        BaseArtifacts {
            _dir: dir,
            config,
            corpus,
            table,
            model,
            votes,
            reconstructed,
            queries: fixture.queries,
            planted: fixture.planted,
            stopwords,
            elapsed,
        }
    })
}

// ---------------------------------------------------------------------
// Criterion 1: formula oracles
// ---------------------------------------------------------------------

#[test]
fn c01_formula_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    // Cosine similarity: explicit loop evaluation.
    for _ in 0..25 {
        let dim = rng.gen_range(2..8);
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut num = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..dim {
            num += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let oracle = num / (na.sqrt() * nb.sqrt());
        assert!((cosine(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    // Term frequency: sort-and-group counting.
    for _ in 0..25 {
        let n = rng.gen_range(0..30);
        let tokens: Vec<String> = (0..n)
            .map(|_| format!("w{}", rng.gen_range(0..6)))
            .collect();
        let doc = TokenDoc::new(1, tokens.clone());
        let tf = term_frequency(&doc);
        let mut sorted = tokens.clone();
        sorted.sort();
        let mut expected: Vec<(String, u64)> = Vec::new();
        for t in sorted {
            match expected.last_mut() {
                Some((w, c)) if *w == t => *c += 1,
                _ => expected.push((t, 1)),
            }
        }
        assert_eq!(tf.len(), expected.len());
        for (w, c) in expected {
            assert_eq!(tf[&w], c);
        }
        let total: u64 = tf.values().sum();
        assert_eq!(total as usize, doc.tokens.len());
    }

    // TF-weighted summarization: hand-rolled weighted mean.
    for round in 0..25 {
        let dim = rng.gen_range(2..6);
        let vocab: Vec<(String, Vec<f64>)> = (0..5)
            .map(|i| {
                (
                    format!("v{i}"),
                    (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                )
            })
            .collect();
        let table = EmbeddingTable::from_entries(vocab.clone()).unwrap();
        let n = rng.gen_range(1..20);
        let tokens: Vec<String> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    "oov".to_string()
                } else {
                    format!("v{}", rng.gen_range(0..5))
                }
            })
            .collect();
        let doc = TokenDoc::new(round, tokens.clone());
        let got = summarize(&doc, &table);

        let mut counts: HashMap<&str, u64> = HashMap::new();
        for t in &tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        let mut expected = vec![0.0; dim];
        let mut mass = 0u64;
        for (word, vector) in &vocab {
            if let Some(&c) = counts.get(word.as_str()) {
                for (e, v) in expected.iter_mut().zip(vector) {
                    *e += c as f64 * v;
                }
                mass += c;
            }
        }
        if mass > 0 {
            for e in &mut expected {
                *e /= mass as f64;
            }
        }
        assert_eq!(got.token_mass, mass);
        for (g, e) in got.values.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-9);
        }
    }

    // Silhouette: O(n^2) evaluation straight from the definition.
    for _ in 0..20 {
        let n = rng.gen_range(6..14);
        let k = rng.gen_range(2..4);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])
            .collect();
        let points = Matrix::from_rows(&rows);
        // Valid assignment: every cluster non-empty.
        let mut assignment: Vec<usize> = (0..n).map(|i| i % k).collect();
        for a in assignment.iter_mut() {
            if rng.gen_bool(0.3) {
                *a = rng.gen_range(0..k);
            }
        }
        for c in 0..k {
            if !assignment.contains(&c) {
                assignment[c] = c;
            }
        }

        let dist = |i: usize, j: usize| -> f64 {
            let (a, b) = (&rows[i], &rows[j]);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        };
        let mut total = 0.0;
        for i in 0..n {
            let own = assignment[i];
            let same: Vec<usize> = (0..n)
                .filter(|&j| j != i && assignment[j] == own)
                .collect();
            if same.is_empty() {
                continue;
            }
            let a_val = same.iter().map(|&j| dist(i, j)).sum::<f64>() / same.len() as f64;
            let mut b_val = f64::INFINITY;
            for c in 0..k {
                if c == own {
                    continue;
                }
                let members: Vec<usize> = (0..n).filter(|&j| assignment[j] == c).collect();
                if members.is_empty() {
                    continue;
                }
                let d = members.iter().map(|&j| dist(i, j)).sum::<f64>()
                    / members.len() as f64;
                b_val = b_val.min(d);
            }
            if a_val.max(b_val) > 0.0 {
                total += (b_val - a_val) / a_val.max(b_val);
            }
        }
        let oracle = total / n as f64;
        assert!((silhouette(&points, &assignment).unwrap() - oracle).abs() < 1e-9);
    }

    // nDCG: direct formula.
    for _ in 0..25 {
        let truth: BTreeMap<u64, i64> = (0..rng.gen_range(1..5))
            .map(|u| (u, rng.gen_range(-1..8)))
            .collect();
        let ranking: Vec<u64> = {
            let mut r: Vec<u64> = (0..8).collect();
            for i in (1..r.len()).rev() {
                let j = rng.gen_range(0..=i);
                r.swap(i, j);
            }
            r
        };
        let n = rng.gen_range(1..6);
        let rel = |u: u64| truth.get(&u).map_or(0.0, |&s| s.max(0) as f64);
        let mut dcg = 0.0;
        for (i, &u) in ranking.iter().take(n).enumerate() {
            dcg += rel(u) / ((i + 2) as f64).log2();
        }
        let mut grades: Vec<f64> = truth.values().map(|&s| s.max(0) as f64).collect();
        grades.sort_by(|a, b| b.total_cmp(a));
        let mut idcg = 0.0;
        for (i, g) in grades.iter().take(n).enumerate() {
            idcg += g / ((i + 2) as f64).log2();
        }
        match ndcg_at_n(&ranking, &truth, n) {
            Some(got) => {
                assert!(idcg > 0.0);
                assert!((got - dcg / idcg).abs() < 1e-9);
            }
            None => assert_eq!(idcg, 0.0),
        }
    }

    // Elastic-net NMF objective: triple-loop product plus penalty terms, and the
    // factorize trace against the brute-force value of the returned
    // factors (1e-6 for traces).
    for round in 0..20 {
        let (n, m, r) = (
            rng.gen_range(3..7),
            rng.gen_range(3..7),
            rng.gen_range(1..3),
        );
        let alpha = [0.0, 0.1, 0.7][round % 3];
        let rho = [0.0, 0.5, 1.0][round % 3];
        let mut v = Matrix::zeros(n, m);
        let mut cells = Vec::new();
        let row_ids: Vec<u64> = (0..n as u64).collect();
        let col_ids: Vec<u64> = (0..m as u64).collect();
        for i in 0..n {
            for j in 0..m {
                if rng.gen_bool(0.6) {
                    let x = rng.gen_range(0.5..6.0);
                    v.set(i, j, x);
                    cells.push((i as u64, j as u64, x));
                }
            }
        }
        if cells.is_empty() {
            continue;
        }
        let w = {
            let mut w = Matrix::zeros(n, r);
            for i in 0..n {
                for l in 0..r {
                    w.set(i, l, rng.gen_range(0.0..2.0));
                }
            }
            w
        };
        let h = {
            let mut h = Matrix::zeros(r, m);
            for l in 0..r {
                for j in 0..m {
                    h.set(l, j, rng.gen_range(0.0..2.0));
                }
            }
            h
        };

        let brute = |v: &Matrix, w: &Matrix, h: &Matrix| -> f64 {
            let mut loss = 0.0;
            for i in 0..v.rows() {
                for j in 0..v.cols() {
                    let mut wh = 0.0;
                    for l in 0..w.cols() {
                        wh += w.get(i, l) * h.get(l, j);
                    }
                    let d = v.get(i, j) - wh;
                    loss += d * d;
                }
            }
            let mut l1 = 0.0;
            let mut l2 = 0.0;
            for x in w.data().iter().chain(h.data()) {
                l1 += x.abs();
                l2 += x * x;
            }
            0.5 * loss + alpha * rho * l1 + 0.5 * alpha * (1.0 - rho) * l2
        };

        assert!((nmf::objective(&v, &w, &h, alpha, rho) - brute(&v, &w, &h)).abs() < 1e-9);

        let votes = VoteMatrix::from_parts(row_ids, col_ids, &cells);
        let f = factorize(
            &votes,
            &NmfConfig {
                rank: r,
                alpha,
                rho,
                tol: 0.0,
                max_iter: 5,
                seed: round as u64,
            },
        )
        .unwrap();
        let last = *f.loss_trace.last().unwrap();
        assert!((last - brute(&v, &f.w, &f.h)).abs() < 1e-6);
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!("criterion 1 (formula oracles): PASS in {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 2: NMF monotonicity grid and rank-1 recovery
// ---------------------------------------------------------------------

#[test]
fn c02_nmf_objective_grid_and_rank1_recovery() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    // Fixed 20x15 sparse matrix.
    let row_ids: Vec<u64> = (0..20).collect();
    let col_ids: Vec<u64> = (0..15).collect();
    let mut cells = Vec::new();
    for i in 0..20u64 {
        for j in 0..15u64 {
            if rng.gen_bool(0.3) {
                cells.push((i, j, rng.gen_range(0.5..8.0)));
            }
        }
    }
    let votes = VoteMatrix::from_parts(row_ids, col_ids, &cells);

    for alpha in [0.0, 0.1, 1.0] {
        for rho in [0.0, 0.5, 1.0] {
            for rank in [2usize, 4, 8] {
                let f = factorize(
                    &votes,
                    &NmfConfig {
                        rank,
                        alpha,
                        rho,
                        tol: 1e-12,
                        max_iter: 60,
                        seed: 7,
                    },
                )
                .unwrap();
                for w in f.loss_trace.windows(2) {
                    assert!(
                        w[1] <= w[0] + 1e-10,
                        "objective increased at alpha={alpha} rho={rho} rank={rank}: {} -> {}",
                        w[0],
                        w[1]
                    );
                }
                assert!(f.w.data().iter().all(|&x| x >= 0.0));
                assert!(f.h.data().iter().all(|&x| x >= 0.0));
            }
        }
    }

    // Rank-1 exactly factorizable matrix, alpha = 0.
    let u = [2.0, 1.0, 3.0, 0.5, 1.5];
    let v = [1.0, 4.0, 2.0, 3.0];
    let mut cells = Vec::new();
    for (i, &a) in u.iter().enumerate() {
        for (j, &b) in v.iter().enumerate() {
            cells.push((i as u64, j as u64, a * b));
        }
    }
    let exact = VoteMatrix::from_parts((0..5).collect(), (0..4).collect(), &cells);
    let f = factorize(
        &exact,
        &NmfConfig {
            rank: 1,
            alpha: 0.0,
            rho: 0.5,
            tol: 1e-12,
            max_iter: 500,
            seed: 3,
        },
    )
    .unwrap();
    let wh = nmf::reconstruct(&f);
    let dense = exact.dense();
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in dense.data().iter().zip(wh.data()) {
        num += (x - y) * (x - y);
        den += x * x;
    }
    let rel = (num / den).sqrt();
    assert!(rel < 1e-3, "rank-1 relative Frobenius error {rel}");

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!("criterion 2 (NMF grid + rank-1 recovery): PASS in {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 3: k-means monotonicity and the exhaustive-partition oracle
// ---------------------------------------------------------------------

#[test]
fn c03_kmeans_monotone_and_exhaustive_partition_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // Objective monotone per iteration on random data.
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let points = Matrix::from_rows(&rows);
    let result = kmeans(
        &points,
        &KmeansConfig {
            restarts: 1,
            ..KmeansConfig::new(4, 5)
        },
    )
    .unwrap();
    for w in result.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-10);
    }

    // 12 points, k = 2: best of 10 restarts must match the exhaustive
    // search over all 2^11 - 1 bipartitions.
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let points = Matrix::from_rows(&rows);

    let wcss = |members: &[usize]| -> f64 {
        let mut mean = [0.0f64; 2];
        for &i in members {
            mean[0] += rows[i][0];
            mean[1] += rows[i][1];
        }
        mean[0] /= members.len() as f64;
        mean[1] /= members.len() as f64;
        members
            .iter()
            .map(|&i| (rows[i][0] - mean[0]).powi(2) + (rows[i][1] - mean[1]).powi(2))
            .sum()
    };

    let mut best_objective = f64::INFINITY;
    let mut best_partition: (BTreeSet<usize>, BTreeSet<usize>) = (BTreeSet::new(), BTreeSet::new());
    let mut cases = 0u32;
    // Point 0 always stays in side A, so each bipartition appears once.
    for mask in 1u32..(1 << 12) {
        if mask & 1 == 1 {
            continue;
        }
        cases += 1;
        let side_b: Vec<usize> = (0..12).filter(|&i| mask >> i & 1 == 1).collect();
        let side_a: Vec<usize> = (0..12).filter(|&i| mask >> i & 1 == 0).collect();
        let objective = wcss(&side_a) + wcss(&side_b);
        if objective < best_objective {
            best_objective = objective;
            best_partition = (
                side_a.into_iter().collect(),
                side_b.into_iter().collect(),
            );
        }
    }
    assert_eq!(cases, (1 << 11) - 1);

    let result = kmeans(
        &points,
        &KmeansConfig {
            restarts: 10,
            ..KmeansConfig::new(2, 1)
        },
    )
    .unwrap();
    assert!(
        (result.objective - best_objective).abs() < 1e-9,
        "kmeans objective {} vs exhaustive optimum {}",
        result.objective,
        best_objective
    );
    let got_a: BTreeSet<usize> = (0..12).filter(|&i| result.assignment[i] == result.assignment[0]).collect();
    let got_b: BTreeSet<usize> = (0..12).filter(|&i| result.assignment[i] != result.assignment[0]).collect();
    assert!(
        (got_a == best_partition.0 && got_b == best_partition.1)
            || (got_a == best_partition.1 && got_b == best_partition.0),
        "partition differs from the exhaustive optimum"
    );

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!("criterion 3 (k-means oracle): PASS in {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 4: SGNS gradient check
// ---------------------------------------------------------------------

#[test]
fn c04_sgns_gradient_check_against_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (vocab, dim) = (6, 5);
    let mut input = Matrix::zeros(vocab, dim);
    let mut output = Matrix::zeros(vocab, dim);
    for r in 0..vocab {
        for c in 0..dim {
            input.set(r, c, rng.gen_range(-1.0..1.0));
            output.set(r, c, rng.gen_range(-1.0..1.0));
        }
    }
    // Frozen batch of (center, context, negatives) triples.
    let batch = vec![
        (0usize, 2usize, vec![1, 3, 4]),
        (2, 0, vec![5, 1]),
        (1, 4, vec![0, 2, 5]),
        (3, 5, vec![2]),
        (4, 1, vec![3, 0]),
    ];

    let (d_input, d_output) = batch_gradients(&input, &output, &batch);
    let eps = 1e-6;
    for which in 0..2 {
        for r in 0..vocab {
            for c in 0..dim {
                let analytic = if which == 0 {
                    d_input.get(r, c)
                } else {
                    d_output.get(r, c)
                };
                let m = if which == 0 { &mut input } else { &mut output };
                let orig = m.get(r, c);
                m.set(r, c, orig + eps);
                let plus = batch_loss(&input, &output, &batch);
                let m = if which == 0 { &mut input } else { &mut output };
                m.set(r, c, orig - eps);
                let minus = batch_loss(&input, &output, &batch);
                let m = if which == 0 { &mut input } else { &mut output };
                m.set(r, c, orig);
                let numeric = (plus - minus) / (2.0 * eps);
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                let rel = (numeric - analytic).abs() / denom;
                assert!(
                    rel < 1e-4,
                    "relative error {rel} at matrix {which} ({r},{c})"
                );
            }
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!("criterion 4 (SGNS gradient check): PASS in {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 5: planted-expert recovery and the Jaccard ordering
// ---------------------------------------------------------------------

#[test]
fn c05_planted_expert_recovery_and_baseline_ordering() {
    let artifacts = base();
    assert!(
        artifacts.elapsed < Duration::from_secs(60),
        "full pipeline took {:?}",
        artifacts.elapsed
    );

    // accuracy@1 = 1.0 at lambda = 0 over the 40 held-out queries, every fold.
    let report = run_evaluation(
        &artifacts.corpus,
        &artifacts.table,
        &artifacts.model,
        &artifacts.votes,
        &artifacts.reconstructed,
        &artifacts.stopwords,
        &artifacts.queries,
        3,
        &[0.0, 0.5, 1.0],
        5,
        artifacts.config.seed.wrapping_add(4),
    )
    .unwrap();
    assert_eq!(report.rows.len(), 9, "3 folds x 3 lambdas");
    assert_eq!(artifacts.queries.len(), 40);
    for row in &report.rows {
        assert_eq!(row.unreachable, 0);
        // accuracy@N column is non-decreasing in N.
        for w in row.embedding.accuracy.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in row.jaccard.accuracy.windows(2) {
            assert!(w[1] >= w[0]);
        }
        if row.lambda == 0.0 {
            assert_eq!(
                row.embedding.accuracy[0], 1.0,
                "fold {} accuracy@1 at lambda 0 was {}",
                row.fold, row.embedding.accuracy[0]
            );
        }
    }
    assert_eq!(artifacts.planted.len(), 4);

    // Synonym-perturbed variant: the embedding method's accuracy@5 must
    // strictly exceed the Jaccard baseline's.
    let fixture = common::synonym_variant(23);
    let dir = tempfile::tempdir().unwrap();
    let config_path = common::write_workspace(dir.path(), &fixture, 43);
    let config = PipelineConfig::load(&config_path).unwrap();
    let start = Instant::now();
    run_all(&config).unwrap();
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "variant pipeline took {elapsed:?}");

    let (corpus, table, model, votes, reconstructed) = load_artifacts(&config);
    let stopwords = load_word_list(&dir.path().join("stopwords.txt")).unwrap();
    let report = run_evaluation(
        &corpus,
        &table,
        &model,
        &votes,
        &reconstructed,
        &stopwords,
        &fixture.queries,
        3,
        &[0.0],
        5,
        7,
    )
    .unwrap();
    let ours: f64 = report
        .rows
        .iter()
        .map(|r| r.embedding.accuracy[4])
        .sum::<f64>()
        / report.rows.len() as f64;
    let jaccard: f64 = report
        .rows
        .iter()
        .map(|r| r.jaccard.accuracy[4])
        .sum::<f64>()
        / report.rows.len() as f64;
    assert!(
        ours > jaccard,
        "embedding accuracy@5 {ours} must strictly exceed jaccard {jaccard}"
    );

    println!(
        "criterion 5 (planted recovery): PASS: accuracy@1=1.0 at λ=0; synonym variant ours={ours:.4} > jaccard={jaccard:.4}; pipeline {:?}",
        artifacts.elapsed
    );
}

// ---------------------------------------------------------------------
// Criterion 6: lambda endpoints
// ---------------------------------------------------------------------

#[test]
fn c06_lambda_endpoints_reproduce_observed_and_reconstructed_rankings() {
    let artifacts = base();
    let blend = blend_scores(&artifacts.votes, &artifacts.reconstructed, 0.5).unwrap();
    let index = build_expert_index(
        &artifacts.corpus,
        &artifacts.table,
        &artifacts.model,
        &blend,
        &artifacts.stopwords,
        &BTreeSet::new(),
    );

    // Matrix-level check: within every question row, the blended ordering
    // of candidate authors at the endpoints equals the orderings induced
    // by the raw observed and reconstructed cells.
    let order_by = |mut pairs: Vec<(u64, f64)>| -> Vec<u64> {
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        pairs.into_iter().map(|(u, _)| u).collect()
    };
    let blend0 = blend_scores(&artifacts.votes, &artifacts.reconstructed, 0.0).unwrap();
    let blend1 = blend_scores(&artifacts.votes, &artifacts.reconstructed, 1.0).unwrap();
    for q in artifacts.corpus.questions.iter().take(25) {
        let authors: Vec<u64> = corpus::author_vote_cells(q).keys().copied().collect();
        let observed_rank = order_by(
            authors
                .iter()
                .map(|&u| (u, artifacts.votes.get(q.id, u).unwrap_or(0.0)))
                .collect(),
        );
        let reconstructed_rank = order_by(
            authors
                .iter()
                .map(|&u| {
                    let r = artifacts.votes.row_of(q.id).unwrap();
                    let c = artifacts.votes.col_of(u).unwrap();
                    (u, artifacts.reconstructed.get(r, c))
                })
                .collect(),
        );
        let blended0_rank = order_by(
            authors.iter().map(|&u| (u, blend0.score(q.id, u))).collect(),
        );
        let blended1_rank = order_by(
            authors.iter().map(|&u| (u, blend1.score(q.id, u))).collect(),
        );
        assert_eq!(blended0_rank, observed_rank, "question {}", q.id);
        assert_eq!(blended1_rank, reconstructed_rank, "question {}", q.id);
    }

    // End-to-end check: expert order per matched question at λ=0 follows
    // raw observed cells, and at λ=1 the reconstruction; the matched
    // question sequence itself does not depend on λ.
    for query in artifacts.queries.iter().take(8) {
        let rec0 = recommend_experts(&query.text, &index, &artifacts.table, 8, Some(0.0)).unwrap();
        let rec1 = recommend_experts(&query.text, &index, &artifacts.table, 8, Some(1.0)).unwrap();
        let questions0: Vec<u64> = rec0.experts.iter().map(|e| e.question_id).collect();
        let questions1: Vec<u64> = rec1.experts.iter().map(|e| e.question_id).collect();
        let dedup = |v: &[u64]| {
            let mut out = Vec::new();
            for &x in v {
                if out.last() != Some(&x) {
                    out.push(x);
                }
            }
            out
        };
        assert_eq!(dedup(&questions0), dedup(&questions1));

        for (rec, lambda) in [(&rec0, 0.0), (&rec1, 1.0)] {
            let mut by_question: Vec<(u64, Vec<u64>)> = Vec::new();
            for e in &rec.experts {
                match by_question.last_mut() {
                    Some((qid, users)) if *qid == e.question_id => users.push(e.user_id),
                    _ => by_question.push((e.question_id, vec![e.user_id])),
                }
            }
            for (qid, users) in by_question {
                // Ties between equal cells resolve by the author's earliest
                // answer id, matching the index's answer ordering.
                let question = artifacts.corpus.question(qid).unwrap();
                let first_answer = |user: u64| -> u64 {
                    question
                        .answers
                        .iter()
                        .filter(|a| a.owner_user_id == Some(user))
                        .map(|a| a.id)
                        .min()
                        .unwrap()
                };
                let mut expected: Vec<(u64, f64, u64)> = users
                    .iter()
                    .map(|&u| {
                        let r = artifacts.votes.row_of(qid).unwrap();
                        let c = artifacts.votes.col_of(u).unwrap();
                        let raw = if lambda == 0.0 {
                            artifacts.votes.get(qid, u).unwrap_or(0.0)
                        } else {
                            artifacts.reconstructed.get(r, c)
                        };
                        (u, raw, first_answer(u))
                    })
                    .collect();
                expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
                let expected: Vec<u64> = expected.into_iter().map(|(u, _, _)| u).collect();
                assert_eq!(users, expected, "question {qid} at lambda {lambda}");
            }
        }
    }

    println!("criterion 6 (lambda endpoints): PASS");
}

// ---------------------------------------------------------------------
// Criterion 7: byte-identical determinism
// ---------------------------------------------------------------------

#[test]
fn c07_pipeline_runs_are_byte_identical() {
    let run = |dir: &std::path::Path| -> PipelineConfig {
        let fixture = common::planted_corpus(11);
        let config_path = common::write_workspace(dir, &fixture, 42);
        let config = PipelineConfig::load(&config_path).unwrap();
        run_all(&config).unwrap();
        config
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let config_a = run(dir_a.path());
    let config_b = run(dir_b.path());

    let artifacts = [
        "corpus.jsonl",
        "prepped.jsonl",
        "embeddings.txt",
        "questions.vec",
        "domains.centroids",
        "domains.assignments",
        "mf.w",
        "mf.h",
        "mf.json",
        "index.jsonl",
        "eval.report",
        "eval.report.csv",
    ];
    for name in artifacts {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "artifact {name} differs between identical runs");
    }
    assert_eq!(config_a.seed, config_b.seed);

    println!(
        "criterion 7 (determinism): PASS: {} artifacts byte-identical",
        artifacts.len()
    );
}

// ---------------------------------------------------------------------
// Criterion 8: online-stage scaling
// ---------------------------------------------------------------------

fn scaling_index(n_domains: usize, per_domain: usize, dim: usize, seed: u64) -> ExpertIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = dot(&v, &v).sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    let mut centroids = Matrix::zeros(n_domains, dim);
    let mut questions = Vec::with_capacity(n_domains);
    for d in 0..n_domains {
        let c = unit(&mut rng);
        centroids.row_mut(d).copy_from_slice(&c);
        let mut list = Vec::with_capacity(per_domain);
        for q in 0..per_domain {
            let mut v: Vec<f64> = c
                .iter()
                .map(|x| x + rng.gen_range(-0.05..0.05))
                .collect();
            let n = dot(&v, &v).sqrt();
            for x in &mut v {
                *x /= n;
            }
            let qid = (d * per_domain + q) as u64;
            list.push(IndexedQuestion {
                id: qid,
                domain: d,
                vector: v,
                tokens: vec!["w0".to_string()],
                answers: (0..3)
                    .map(|a| IndexedAnswer {
                        id: qid * 10 + a,
                        author: qid * 10 + a,
                        observed: 3,
                        observed_norm: 0.5,
                        reconstructed_norm: 0.5,
                    })
                    .collect(),
            });
        }
        questions.push(list);
    }
    ExpertIndex {
        lambda: 0.5,
        dim,
        centroids,
        domain_words: vec![Vec::new(); n_domains],
        stopwords: Vec::new(),
        questions,
    }
}

#[test]
fn c08_query_latency_scales_with_domain_count() {
    let dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let entries: Vec<(String, Vec<f64>)> = (0..5)
        .map(|i| {
            (
                format!("w{i}"),
                (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    let table = EmbeddingTable::from_entries(entries).unwrap();

    let small = scaling_index(100, 40, dim, 1);
    let large = scaling_index(200, 40, dim, 2);

    let time_queries = |index: &ExpertIndex| -> Duration {
        for _ in 0..20 {
            recommend_experts("w0 w1 w2", index, &table, 5, None).unwrap();
        }
        let mut best = Duration::MAX;
        for _ in 0..3 {
            let start = Instant::now();
            for _ in 0..300 {
                recommend_experts("w0 w1 w2", index, &table, 5, None).unwrap();
            }
            best = best.min(start.elapsed());
        }
        best
    };

    let t_small = time_queries(&small);
    let t_large = time_queries(&large);
    let ratio = t_large.as_secs_f64() / t_small.as_secs_f64();
    assert!(
        ratio <= 3.0,
        "doubling domains scaled latency by {ratio:.2} ({t_small:?} -> {t_large:?})"
    );

    println!(
        "criterion 8 (online scaling): PASS: 100->200 domains latency ratio {ratio:.2}"
    );
}
