//! Dump ingestion: stream-parse a Stack Exchange style `Posts.xml` into a
//! canonical, quality-filtered corpus.
//!
//! Parsing is single-pass; memory is bounded by one row plus the retained
//! index structures. Rows that cannot contribute (no accepted answer, score
//! at or below the threshold, unusable attributes) are dropped as they
//! stream by.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostType {
    Question,
    Answer,
    Other,
}

/// One `<row>` of the dump, attribute-mapped.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPost {
    pub id: u64,
    pub post_type: PostType,
    /// Answers only.
    pub parent_id: Option<u64>,
    /// Questions only.
    pub accepted_answer_id: Option<u64>,
    /// Vote score σ.
    pub score: i64,
    /// Questions only.
    pub title: String,
    pub body: String,
    /// Questions only.
    pub tags: Vec<String>,
    pub owner_user_id: Option<u64>,
}

/// Rows skipped during parsing, by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub missing_id: u64,
    pub missing_score: u64,
    pub answer_without_parent: u64,
}

impl SkipReport {
    pub fn total(&self) -> u64 {
        self.missing_id + self.missing_score + self.answer_without_parent
    }
}

/// Streaming reader over the `<row .../>` elements of a Posts dump.
/// Yields one [`RawPost`] per usable row in document order; rows missing
/// `Id` or `Score` are skipped and counted in the [`SkipReport`].
pub struct PostReader<R: BufRead> {
    reader: Reader<R>,
    buf: Vec<u8>,
    skips: SkipReport,
    done: bool,
}

impl<R: BufRead> PostReader<R> {
    pub fn new(input: R) -> Self {
        let reader = Reader::from_reader(input);
        PostReader {
            reader,
            buf: Vec::new(),
            skips: SkipReport::default(),
            done: false,
        }
    }

    pub fn skip_report(&self) -> SkipReport {
        self.skips
    }

    fn row_to_post(&mut self, start: &BytesStart<'_>) -> Result<Option<RawPost>> {
        let mut id = None;
        let mut post_type = PostType::Other;
        let mut parent_id = None;
        let mut accepted = None;
        let mut score: Option<i64> = None;
        let mut title = String::new();
        let mut body = String::new();
        let mut tags = Vec::new();
        let mut owner = None;

        for attr in start.attributes() {
            let attr = attr.map_err(|e| Error::Xml {
                offset: self.reader.buffer_position(),
                message: e.to_string(),
            })?;
            let value = attr
                .normalized_value(quick_xml::XmlVersion::Implicit1_0)
                .map_err(|e| Error::Xml {
                    offset: self.reader.buffer_position(),
                    message: e.to_string(),
                })?;
            match attr.key.as_ref() {
                b"Id" => id = value.parse::<u64>().ok(),
                b"PostTypeId" => {
                    post_type = match value.as_ref() {
                        "1" => PostType::Question,
                        "2" => PostType::Answer,
                        _ => PostType::Other,
                    }
                }
                b"ParentId" => parent_id = value.parse::<u64>().ok(),
                b"AcceptedAnswerId" => accepted = value.parse::<u64>().ok(),
                b"Score" => score = value.parse::<i64>().ok(),
                b"Title" => title = value.into_owned(),
                b"Body" => body = value.into_owned(),
                b"Tags" => tags = parse_tags(&value),
                b"OwnerUserId" => owner = value.parse::<u64>().ok(),
                _ => {}
            }
        }

        let id = match id {
            Some(id) => id,
            None => {
                self.skips.missing_id += 1;
                return Ok(None);
            }
        };
        let score = match score {
            Some(s) => s,
            None => {
                self.skips.missing_score += 1;
                return Ok(None);
            }
        };
        if post_type == PostType::Answer && parent_id.is_none() {
            self.skips.answer_without_parent += 1;
            return Ok(None);
        }

        Ok(Some(RawPost {
            id,
            post_type,
            parent_id: if post_type == PostType::Answer {
                parent_id
            } else {
                None
            },
            accepted_answer_id: if post_type == PostType::Question {
                accepted
            } else {
                None
            },
            score,
            title: if post_type == PostType::Question {
                title
            } else {
                String::new()
            },
            body,
            tags: if post_type == PostType::Question {
                tags
            } else {
                Vec::new()
            },
            owner_user_id: owner,
        }))
    }
}

impl<R: BufRead> Iterator for PostReader<R> {
    type Item = Result<RawPost>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            let event = self.reader.read_event_into(&mut self.buf);
            match event {
                Ok(Event::Empty(e)) | Ok(Event::Start(e)) => {
                    if e.name().as_ref() == b"row" {
                        let e = e.into_owned();
                        match self.row_to_post(&e) {
                            Ok(Some(post)) => return Some(Ok(post)),
                            Ok(None) => continue,
                            Err(err) => {
                                self.done = true;
                                return Some(Err(err));
                            }
                        }
                    }
                }
                Ok(Event::Eof) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::Xml {
                        offset: self.reader.error_position(),
                        message: e.to_string(),
                    }));
                }
            }
        }
    }
}

/// Tags come as `<a><b>` in older dumps and `|a|b|` in newer ones.
fn parse_tags(raw: &str) -> Vec<String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Vec::new();
    }
    let split: Vec<String> = if raw.starts_with('<') {
        raw.trim_start_matches('<')
            .trim_end_matches('>')
            .split("><")
            .map(str::to_string)
            .collect()
    } else if raw.contains('|') {
        raw.split('|').map(str::to_string).collect()
    } else {
        vec![raw.to_string()]
    };
    split.into_iter().filter(|t| !t.is_empty()).collect()
}

/// A retained answer. `body_text` holds HTML right after ingestion and
/// filtered token text after the prep stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusAnswer {
    pub id: u64,
    pub score: i64,
    pub owner_user_id: Option<u64>,
    pub body_text: String,
}

/// A satisfied question with its top answers, sorted by (score desc, id asc).
/// The accepted answer is appended after the top-k when it would otherwise
/// fall outside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusQuestion {
    pub id: u64,
    pub title: String,
    pub body_text: String,
    pub tags: Vec<String>,
    pub accepted_answer_id: u64,
    pub answers: Vec<CorpusAnswer>,
}

impl CorpusQuestion {
    /// Token-ready document text: title plus body. Meaningful after prep.
    pub fn plain_text(&self) -> String {
        if self.title.is_empty() {
            self.body_text.clone()
        } else if self.body_text.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.body_text)
        }
    }
}

/// The filtered knowledge base plus the candidate expert pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    /// Sorted by question id.
    pub questions: Vec<CorpusQuestion>,
    /// Union of owner ids over all retained answers.
    pub users: BTreeSet<u64>,
    pub min_score: i64,
    pub top_answers: usize,
}

impl Corpus {
    pub fn question(&self, id: u64) -> Option<&CorpusQuestion> {
        self.questions
            .binary_search_by_key(&id, |q| q.id)
            .ok()
            .map(|i| &self.questions[i])
    }

    fn collect_users(questions: &[CorpusQuestion]) -> BTreeSet<u64> {
        questions
            .iter()
            .flat_map(|q| q.answers.iter().filter_map(|a| a.owner_user_id))
            .collect()
    }
}

/// Build the corpus from an unordered post stream. Retains exactly the
/// questions that have an accepted answer and at least one answer scoring
/// strictly above `min_score`; attaches their `top_answers` best answers.
pub fn build_corpus<I>(posts: I, top_answers: usize, min_score: i64) -> Result<Corpus>
where
    I: IntoIterator<Item = Result<RawPost>>,
{
    assert!(top_answers >= 1, "top_answers must be at least 1");

    struct QuestionDraft {
        accepted_answer_id: u64,
        title: String,
        body: String,
        tags: Vec<String>,
    }

    let mut questions: HashMap<u64, QuestionDraft> = HashMap::new();
    let mut answers: HashMap<u64, Vec<CorpusAnswer>> = HashMap::new();

    for post in posts {
        let post = post?;
        match post.post_type {
            PostType::Question => {
                // Unsatisfied questions can never be retained.
                let accepted = match post.accepted_answer_id {
                    Some(a) => a,
                    None => continue,
                };
                questions.insert(
                    post.id,
                    QuestionDraft {
                        accepted_answer_id: accepted,
                        title: post.title,
                        body: post.body,
                        tags: post.tags,
                    },
                );
            }
            PostType::Answer => {
                // Below-threshold answers are dropped on sight.
                if post.score <= min_score {
                    continue;
                }
                let parent = post.parent_id.expect("parser guarantees parent for answers");
                answers.entry(parent).or_default().push(CorpusAnswer {
                    id: post.id,
                    score: post.score,
                    owner_user_id: post.owner_user_id,
                    body_text: post.body,
                });
            }
            PostType::Other => {}
        }
    }

    let mut retained = Vec::new();
    let mut question_ids: Vec<u64> = questions.keys().copied().collect();
    question_ids.sort_unstable();

    for qid in question_ids {
        let draft = questions.remove(&qid).expect("id came from the map");
        let mut candidates = match answers.remove(&qid) {
            Some(a) if !a.is_empty() => a,
            _ => continue,
        };
        candidates.sort_by(|a, b| b.score.cmp(&a.score).then(a.id.cmp(&b.id)));

        let mut kept: Vec<CorpusAnswer> =
            candidates.iter().take(top_answers).cloned().collect();
        // The accepted answer is retained even when outside the top-k,
        // appended after the list.
        if !kept.iter().any(|a| a.id == draft.accepted_answer_id) {
            if let Some(acc) = candidates
                .iter()
                .find(|a| a.id == draft.accepted_answer_id)
            {
                kept.push(acc.clone());
            }
        }

        retained.push(CorpusQuestion {
            id: qid,
            title: draft.title,
            body_text: draft.body,
            tags: draft.tags,
            accepted_answer_id: draft.accepted_answer_id,
            answers: kept,
        });
    }

    if retained.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let users = Corpus::collect_users(&retained);
    Ok(Corpus {
        questions: retained,
        users,
        min_score,
        top_answers,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind")]
enum CorpusRecord {
    #[serde(rename = "meta")]
    Meta {
        version: u32,
        v: i64,
        k_answers: usize,
    },
    #[serde(rename = "question")]
    Question(CorpusQuestion),
}

/// One self-describing record per line: a `meta` record first, then one
/// `question` record per retained question.
pub fn save_corpus<W: Write>(corpus: &Corpus, mut sink: W) -> std::io::Result<()> {
    let meta = CorpusRecord::Meta {
        version: CORPUS_FORMAT_VERSION,
        v: corpus.min_score,
        k_answers: corpus.top_answers,
    };
    writeln!(sink, "{}", serde_json::to_string(&meta)?)?;
    for q in &corpus.questions {
        let record = CorpusRecord::Question(q.clone());
        writeln!(sink, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

pub fn load_corpus<R: BufRead>(source: R) -> Result<Corpus> {
    let mut lines = source.lines().enumerate();

    let (_, first) = lines.next().ok_or(Error::EmptyCorpus)?;
    let first = first.map_err(|e| Error::CorpusFormat(e.to_string()))?;
    let (min_score, top_answers) = match serde_json::from_str(&first) {
        Ok(CorpusRecord::Meta {
            version,
            v,
            k_answers,
        }) => {
            if version != CORPUS_FORMAT_VERSION {
                return Err(Error::VersionMismatch {
                    expected: CORPUS_FORMAT_VERSION,
                    found: version,
                });
            }
            (v, k_answers)
        }
        Ok(_) => {
            return Err(Error::CorpusFormat(
                "first record must be a meta record".to_string(),
            ))
        }
        Err(e) => return Err(Error::CorpusFormat(format!("line 1: {e}"))),
    };

    let mut questions = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::CorpusFormat(e.to_string()))?;
        if line.trim().is_empty() {
            return Err(Error::CorpusFormat(format!(
                "line {}: truncated record",
                idx + 1
            )));
        }
        match serde_json::from_str(&line) {
            Ok(CorpusRecord::Question(q)) => questions.push(q),
            Ok(_) => {
                return Err(Error::CorpusFormat(format!(
                    "line {}: unexpected meta record",
                    idx + 1
                )))
            }
            Err(e) => return Err(Error::CorpusFormat(format!("line {}: {e}", idx + 1))),
        }
    }

    if questions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let users = Corpus::collect_users(&questions);
    Ok(Corpus {
        questions,
        users,
        min_score,
        top_answers,
    })
}

pub fn save_corpus_file(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    save_corpus(corpus, &mut buf).map_err(|e| Error::io(path, e))?;
    crate::pipeline::write_atomic(path, &buf)
}

pub fn load_corpus_file(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_corpus(std::io::BufReader::new(file))
}

/// Turn a corpus back into a post stream. Mostly useful for tests
/// (idempotence of [`build_corpus`]) and for re-filtering with new
/// parameters.
pub fn corpus_to_posts(corpus: &Corpus) -> Vec<RawPost> {
    let mut posts = Vec::new();
    for q in &corpus.questions {
        posts.push(RawPost {
            id: q.id,
            post_type: PostType::Question,
            parent_id: None,
            accepted_answer_id: Some(q.accepted_answer_id),
            score: 0,
            title: q.title.clone(),
            body: q.body_text.clone(),
            tags: q.tags.clone(),
            owner_user_id: None,
        });
        for a in &q.answers {
            posts.push(RawPost {
                id: a.id,
                post_type: PostType::Answer,
                parent_id: Some(q.id),
                accepted_answer_id: None,
                score: a.score,
                title: String::new(),
                body: a.body_text.clone(),
                tags: Vec::new(),
                owner_user_id: a.owner_user_id,
            });
        }
    }
    posts
}

/// Sentences for embedding training: one per question (title + body) and
/// one per answer body, in corpus order; optionally followed by extra
/// side-channel sentences.
pub fn training_sentences(corpus: &Corpus) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    for q in &corpus.questions {
        let mut tokens = split_tokens(&q.title);
        tokens.extend(split_tokens(&q.body_text));
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
        for a in &q.answers {
            let tokens = split_tokens(&a.body_text);
            if !tokens.is_empty() {
                sentences.push(tokens);
            }
        }
    }
    sentences
}

fn split_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Used by downstream stages to build the quality vote matrix and rank
/// answers: per-question map of author -> summed positive answer score.
pub fn author_vote_cells(question: &CorpusQuestion) -> BTreeMap<u64, f64> {
    let mut cells = BTreeMap::new();
    for a in &question.answers {
        if let Some(owner) = a.owner_user_id {
            *cells.entry(owner).or_insert(0.0) += a.score.max(0) as f64;
        }
    }
    cells
}
