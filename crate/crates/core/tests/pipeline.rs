//! End-to-end pipeline behaviors that the acceptance suite does not pin
//! down: fold exclusion, stage-level rerun determinism, and evaluation
//! side-effect freedom.

mod common;

use std::collections::BTreeSet;

use savant::corpus;
use savant::domains::DomainModel;
use savant::embedding::EmbeddingTable;
use savant::eval::{run_evaluation, EvalQuery};
use savant::nmf::{self, blend_scores, VoteMatrix};
use savant::pipeline::{run_all, run_stage, PipelineConfig, Stage};
use savant::recommend::{build_expert_index, recommend_experts};
use savant::textprep::load_word_list;

struct Artifacts {
    corpus: corpus::Corpus,
    table: EmbeddingTable,
    model: DomainModel,
    votes: VoteMatrix,
    reconstructed: savant::matrix::Matrix,
    stopwords: BTreeSet<String>,
}

fn build(dir: &std::path::Path) -> (PipelineConfig, Artifacts) {
    let fixture = common::planted_corpus(5);
    let config_path = common::write_workspace(dir, &fixture, 99);
    let config = PipelineConfig::load(&config_path).unwrap();
    run_all(&config).unwrap();

    let prepped = corpus::load_corpus_file(&config.paths.prepped).unwrap();
    let table = EmbeddingTable::load_file(&config.paths.embeddings).unwrap();
    let (centroids, assignments, _) = config.domains_paths();
    let model = DomainModel::load_files(&centroids, &assignments, &table).unwrap();
    let (factorization, _, _) = nmf::load_factorization(&config.paths.mf).unwrap();
    let reconstructed = nmf::reconstruct(&factorization);
    let votes = VoteMatrix::from_corpus(&prepped);
    let stopwords = load_word_list(&dir.join("stopwords.txt")).unwrap();
    (
        config,
        Artifacts {
            corpus: prepped,
            table,
            model,
            votes,
            reconstructed,
            stopwords,
        },
    )
}

#[test]
fn fold_exclusion_removes_source_questions_from_the_index() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = build(dir.path());
    let blend = blend_scores(&a.votes, &a.reconstructed, 0.5).unwrap();

    let excluded_id = a.corpus.questions[0].id;
    let full = build_expert_index(
        &a.corpus,
        &a.table,
        &a.model,
        &blend,
        &a.stopwords,
        &BTreeSet::new(),
    );
    let reduced = build_expert_index(
        &a.corpus,
        &a.table,
        &a.model,
        &blend,
        &a.stopwords,
        &BTreeSet::from([excluded_id]),
    );
    assert_eq!(full.num_questions(), reduced.num_questions() + 1);
    let contains = |index: &savant::recommend::ExpertIndex, id: u64| {
        index
            .questions
            .iter()
            .flatten()
            .any(|q| q.id == id)
    };
    assert!(contains(&full, excluded_id));
    assert!(!contains(&reduced, excluded_id));
}

#[test]
fn evaluation_excludes_fold_sources_and_leaves_the_index_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (config, a) = build(dir.path());

    // Queries drawn from corpus questions: the query text is the question's
    // own (prepped) text, truth its answerers. With the source excluded per
    // fold the query must still be answerable through its domain.
    let queries: Vec<EvalQuery> = a
        .corpus
        .questions
        .iter()
        .step_by(17)
        .take(9)
        .map(|q| EvalQuery {
            source_question: Some(q.id),
            text: q.plain_text(),
            truth: corpus::author_vote_cells(q)
                .into_iter()
                .map(|(u, s)| (u, s as i64))
                .collect(),
        })
        .collect();
    assert_eq!(queries.len(), 9);

    // Index bytes before and after evaluation must match (side-effect free).
    let index_before = std::fs::read(&config.paths.index).unwrap();

    let report = run_evaluation(
        &a.corpus,
        &a.table,
        &a.model,
        &a.votes,
        &a.reconstructed,
        &a.stopwords,
        &queries,
        3,
        &[0.0],
        5,
        13,
    )
    .unwrap();

    let index_after = std::fs::read(&config.paths.index).unwrap();
    assert_eq!(index_before, index_after);

    // Every query's truth contains the planted domain expert, who answers
    // every question of the domain, so exclusion must not break recovery.
    for row in &report.rows {
        assert_eq!(row.unreachable, 0);
        assert_eq!(
            row.embedding.accuracy[0], 1.0,
            "fold {} lost the planted expert after exclusion",
            row.fold
        );
    }
}

#[test]
fn rerunning_a_stage_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = build(dir.path());

    for (stage, outputs) in [
        (Stage::Embed, vec!["embeddings.txt"]),
        (Stage::Domains, vec!["domains.centroids", "domains.assignments"]),
        (Stage::Mf, vec!["mf.w", "mf.h", "mf.json"]),
        (Stage::Index, vec!["index.jsonl"]),
    ] {
        let before: Vec<Vec<u8>> = outputs
            .iter()
            .map(|name| std::fs::read(dir.path().join(name)).unwrap())
            .collect();
        run_stage(stage, &config).unwrap();
        for (name, b) in outputs.iter().zip(before) {
            let after = std::fs::read(dir.path().join(name)).unwrap();
            assert_eq!(after, b, "{name} changed on rerun");
        }
    }
}

#[test]
fn unreachable_queries_are_counted_not_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = build(dir.path());

    let reachable = EvalQuery {
        source_question: None,
        text: a.corpus.questions[0].plain_text(),
        truth: corpus::author_vote_cells(&a.corpus.questions[0])
            .into_iter()
            .map(|(u, s)| (u, s as i64))
            .collect(),
    };
    // Ground-truth users that never appear in the candidate pool.
    let unreachable = EvalQuery {
        source_question: None,
        text: a.corpus.questions[1].plain_text(),
        truth: [(999_999, 5)].into(),
    };
    let queries = vec![reachable, unreachable];

    let report = run_evaluation(
        &a.corpus,
        &a.table,
        &a.model,
        &a.votes,
        &a.reconstructed,
        &a.stopwords,
        &queries,
        2,
        &[0.0],
        3,
        1,
    )
    .unwrap();

    let total_unreachable: usize = report.rows.iter().map(|r| r.unreachable).sum();
    let total_evaluated: usize = report.rows.iter().map(|r| r.evaluated).sum();
    assert_eq!(total_unreachable, 1);
    assert_eq!(total_evaluated, 1);
    // The reachable query hits its own question's answerers; nothing is
    // dragged down by the unreachable one.
    let hit_fold = report
        .rows
        .iter()
        .find(|r| r.evaluated == 1)
        .expect("one fold holds the reachable query");
    assert_eq!(hit_fold.embedding.accuracy[0], 1.0);
}

#[test]
fn questions_cluster_with_their_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = build(dir.path());

    // Questions generated from one domain vocabulary must land in one
    // cluster: compare every question's assignment with the majority
    // assignment of its 50-question id block.
    let mut correct = 0usize;
    let mut total = 0usize;
    for block in 0..4 {
        let ids: Vec<u64> = (0..50)
            .map(|q| 1000 + (block * 50 + q) as u64 * 10)
            .collect();
        let mut votes_per_cluster: std::collections::BTreeMap<usize, usize> =
            std::collections::BTreeMap::new();
        for id in &ids {
            if let Some(&c) = a.model.question_assignment.get(id) {
                *votes_per_cluster.entry(c).or_default() += 1;
            }
        }
        let (&majority, _) = votes_per_cluster
            .iter()
            .max_by_key(|(_, &count)| count)
            .unwrap();
        for id in &ids {
            if let Some(&c) = a.model.question_assignment.get(id) {
                total += 1;
                if c == majority {
                    correct += 1;
                }
            }
        }
    }
    assert!(total >= 190);
    assert!(
        correct as f64 / total as f64 >= 0.95,
        "{correct}/{total} questions co-clustered with their vocabulary block"
    );
}

#[test]
fn planted_expert_tops_every_domain_query() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = build(dir.path());
    let blend = blend_scores(&a.votes, &a.reconstructed, 0.0).unwrap();
    let index = build_expert_index(
        &a.corpus,
        &a.table,
        &a.model,
        &blend,
        &a.stopwords,
        &BTreeSet::new(),
    );

    let fixture = common::planted_corpus(5);
    let planted: BTreeSet<u64> = fixture.planted.values().copied().collect();
    for query in fixture.queries.iter() {
        let rec = recommend_experts(&query.text, &index, &a.table, 1, Some(0.0)).unwrap();
        let top = rec.experts[0].user_id;
        assert!(
            planted.contains(&top),
            "query {:?} surfaced {top} instead of a planted expert",
            query.text
        );
        assert!(query.truth.contains_key(&top));
    }
}
