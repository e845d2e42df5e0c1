#![allow(dead_code)] // each test target compiles its own view of this module

//! Synthetic corpus generators for the integration suites.
//!
//! `planted_corpus` builds a dump with four vocabulary-disjoint domains and
//! one top-scoring author planted per domain, plus fresh held-out queries
//! phrased in domain vocabulary. `synonym_variant` builds twin questions
//! whose held-out halves are phrased entirely in synonym words that never
//! appear in any indexed question, so token-overlap matching has nothing to
//! hold on to while embedding similarity still finds the twin.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use savant::eval::EvalQuery;

pub const DOMAIN_PREFIXES: [&str; 4] = ["mem", "net", "db", "ui"];

pub struct SyntheticCorpus {
    pub posts_xml: String,
    pub queries: Vec<EvalQuery>,
    /// Domain index -> the planted expert's user id (planted fixture only).
    pub planted: BTreeMap<usize, u64>,
    pub n_domains: usize,
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct DumpWriter {
    xml: String,
}

impl DumpWriter {
    fn new() -> Self {
        DumpWriter {
            xml: String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>\n"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn question(&mut self, id: u64, accepted: u64, title: &str, body: &str, tags: &str) {
        writeln!(
            self.xml,
            r#"  <row Id="{id}" PostTypeId="1" AcceptedAnswerId="{accepted}" Score="3" Title="{}" Body="{}" Tags="{}" OwnerUserId="50"/>"#,
            xml_escape(title),
            xml_escape(body),
            xml_escape(tags),
        )
        .unwrap();
    }

    fn answer(&mut self, id: u64, parent: u64, score: i64, owner: u64, body: &str) {
        writeln!(
            self.xml,
            r#"  <row Id="{id}" PostTypeId="2" ParentId="{parent}" Score="{score}" Body="{}" OwnerUserId="{owner}"/>"#,
            xml_escape(body),
        )
        .unwrap();
    }

    fn finish(mut self) -> String {
        self.xml.push_str("</posts>\n");
        self.xml
    }
}

fn vocab(domain: usize) -> Vec<String> {
    (0..24)
        .map(|i| format!("{}{:02}", DOMAIN_PREFIXES[domain], i))
        .collect()
}

fn synonym(word: &str) -> String {
    format!("{word}syn")
}

fn sample_words(words: &[String], n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..n).map(|_| words[rng.gen_range(0..words.len())].clone()).collect()
}

/// An HTML body built from the given words, with a paragraph, an inline
/// emphasis, and a python code block whose comment carries more words.
fn html_body(words: &[String]) -> String {
    let split = words.len().saturating_sub(2);
    let (prose, comment) = words.split_at(split);
    let mut body = String::from("<p>the ");
    for (i, w) in prose.iter().enumerate() {
        if i == 1 {
            body.push_str(&format!("<em>{w}</em> "));
        } else {
            body.push_str(w);
            body.push(' ');
        }
    }
    body.push_str("&amp; more</p>");
    if !comment.is_empty() {
        body.push_str(&format!(
            "<pre><code>x = 1  # {}\n</code></pre>",
            comment.join(" ")
        ));
    }
    body
}

/// 200 indexed questions (50 per domain) plus 40 held-out queries (10 per
/// domain) phrased in domain vocabulary. User 9000+d answers every question
/// of domain d with the top score.
pub fn planted_corpus(seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dump = DumpWriter::new();
    let mut planted = BTreeMap::new();
    let mut queries = Vec::new();

    for domain in 0..4 {
        let words = vocab(domain);
        let expert = 9000 + domain as u64;
        planted.insert(domain, expert);
        let noise_pool: Vec<u64> = (0..25).map(|i| 100 + domain as u64 * 25 + i).collect();

        for q in 0..50 {
            let qid = 1000 + (domain * 50 + q) as u64 * 10;
            let title = sample_words(&words, 4, &mut rng).join(" ");
            let body = html_body(&sample_words(&words, 18, &mut rng));
            dump.question(qid, qid + 1, &title, &body, "<python>");

            // The planted expert's answer always wins on score.
            dump.answer(
                qid + 1,
                qid,
                10,
                expert,
                &html_body(&sample_words(&words, 10, &mut rng)),
            );
            let n_noise = rng.gen_range(1..=3);
            for a in 0..n_noise {
                let owner = noise_pool[rng.gen_range(0..noise_pool.len())];
                let score = rng.gen_range(1..=5);
                dump.answer(
                    qid + 2 + a as u64,
                    qid,
                    score,
                    owner,
                    &html_body(&sample_words(&words, 8, &mut rng)),
                );
            }
        }

        // Held-out queries: fresh text in this domain's vocabulary; ground
        // truth is the planted answerer.
        for _ in 0..10 {
            let text = format!("the {}", sample_words(&words, 6, &mut rng).join(" "));
            queries.push(EvalQuery {
                source_question: None,
                text,
                truth: [(expert, 10)].into(),
            });
        }
    }

    SyntheticCorpus {
        posts_xml: dump.finish(),
        queries,
        planted,
        n_domains: 4,
    }
}

/// Synonym variant: per domain, 10 indexed questions phrased in base
/// vocabulary, each owned by its own disjoint answerer triple. Synonym
/// word forms appear only inside answer bodies, interleaved with the base
/// forms, so embedding training aligns the two vocabularies while question
/// token sets never contain a synonym. Queries are phrased purely in
/// synonyms: token overlap finds nothing, embedding similarity still finds
/// the right question.
pub fn synonym_variant(seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dump = DumpWriter::new();
    let mut queries = Vec::new();

    for domain in 0..4 {
        let words = vocab(domain);
        let commons: Vec<String> = words[20..24].to_vec();

        for pair in 0..10 {
            let marker_a = words[2 * pair].clone();
            let marker_b = words[2 * pair + 1].clone();
            let pair_users: Vec<u64> =
                (0..3).map(|i| 500 + (domain * 10 + pair) as u64 * 3 + i).collect();
            let scores = [7i64, 4, 2];

            let tid = 5000 + (domain * 10 + pair) as u64 * 20;
            let title = format!("{marker_a} {marker_b} {}", commons[0]);
            let mut body_words = vec![
                marker_a.clone(),
                marker_b.clone(),
                marker_a.clone(),
                marker_b.clone(),
                marker_a.clone(),
                marker_b.clone(),
            ];
            body_words.extend(sample_words(&commons, 4, &mut rng));
            dump.question(tid, tid + 1, &title, &html_body(&body_words), "<python>");

            // Answer bodies interleave base and synonym forms; this is the
            // only place synonyms occur, so their vectors align with the
            // base words they co-occur with.
            for (i, (&user, &score)) in pair_users.iter().zip(&scores).enumerate() {
                let mixed: Vec<String> = vec![
                    marker_a.clone(),
                    synonym(&marker_a),
                    marker_b.clone(),
                    synonym(&marker_b),
                    commons[0].clone(),
                    synonym(&commons[0]),
                    marker_a.clone(),
                    synonym(&marker_a),
                    marker_b.clone(),
                    synonym(&marker_b),
                    commons[1].clone(),
                    synonym(&commons[1]),
                ];
                dump.answer(tid + 1 + i as u64, tid, score, user, &html_body(&mixed));
            }

            let truth: BTreeMap<u64, i64> = pair_users
                .iter()
                .zip(&scores)
                .map(|(&u, &s)| (u, s))
                .collect();
            queries.push(EvalQuery {
                source_question: None,
                text: format!(
                    "the {} {} {}",
                    synonym(&marker_a),
                    synonym(&marker_b),
                    synonym(&commons[0])
                ),
                truth,
            });
        }
    }

    SyntheticCorpus {
        posts_xml: dump.finish(),
        queries,
        planted: BTreeMap::new(),
        n_domains: 4,
    }
}

pub const STOPWORDS: &str = "the\na\nis\nin\nof\nmore\nand\n# comment lines are allowed\n";

/// Lay out a workspace directory and write a pipeline config tuned for the
/// synthetic fixtures (small embeddings, fixed k = 4).
pub fn write_workspace(dir: &Path, corpus: &SyntheticCorpus, seed: u64) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("Posts.xml"), &corpus.posts_xml).unwrap();
    std::fs::write(dir.join("stopwords.txt"), STOPWORDS).unwrap();
    let mut queries_buf = Vec::new();
    savant::eval::save_queries(&corpus.queries, &mut queries_buf).unwrap();
    std::fs::write(dir.join("queries.jsonl"), queries_buf).unwrap();

    let config_text = format!(
        r#"
seed = {seed}

[paths]
posts = "{dir}/Posts.xml"
corpus = "{dir}/corpus.jsonl"
prepped = "{dir}/prepped.jsonl"
embeddings = "{dir}/embeddings.txt"
vectors = "{dir}/questions.vec"
domains = "{dir}/domains"
mf = "{dir}/mf"
index = "{dir}/index.jsonl"
report = "{dir}/eval.report"

[prep]
stopwords = "{dir}/stopwords.txt"

[embed]
dim = 24
window = 5
negatives = 5
epochs = 30
learning_rate = 0.05
min_count = 2
subsample_threshold = 0.0
workers = 1

[domains]
k = 4
k_candidates = []
k_min_useful = 2
restarts = 5
max_iters = 100

[mf]
rank = 8
alpha = 0.05
rho = 0.5
tol = 1e-6
max_iter = 200

[index]
lambda = 0.5

[eval]
queries = "{dir}/queries.jsonl"
folds = 3
lambdas = [0.0, 0.5, 1.0]
top = 5
"#,
        dir = dir.display(),
        seed = seed,
    );
    let config_path = dir.join("pipeline.toml");
    std::fs::write(&config_path, config_text).unwrap();
    config_path
}
