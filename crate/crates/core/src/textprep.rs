//! Post text preprocessing: HTML stripping, code-comment mining,
//! tokenization, and stopword/dictionary filtering.
//!
//! All operations are pure functions on immutable inputs and tolerate
//! malformed markup (best effort, never an error).

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::{Error, Result};

/// A preprocessed, token-ready document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDoc {
    pub doc_id: u64,
    pub tokens: Vec<String>,
}

impl TokenDoc {
    pub fn new(doc_id: u64, tokens: Vec<String>) -> Self {
        debug_assert!(tokens
            .iter()
            .all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        TokenDoc { doc_id, tokens }
    }

    /// Tokenize raw text into a document.
    pub fn from_text(doc_id: u64, text: &str) -> Self {
        TokenDoc::new(doc_id, tokenize(text))
    }
}

/// Comment syntax for one language tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentSyntax {
    #[serde(default)]
    pub line: Vec<String>,
    #[serde(default)]
    pub block: Vec<(String, String)>,
}

/// Token filtering configuration: stopwords, an optional software-domain
/// dictionary whitelist, and the per-language-tag comment syntax table.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub stopwords: BTreeSet<String>,
    pub dictionary: Option<BTreeSet<String>>,
    pub comment_rules: BTreeMap<String, CommentSyntax>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            stopwords: BTreeSet::new(),
            dictionary: None,
            comment_rules: default_comment_rules(),
        }
    }
}

impl FilterConfig {
    /// Build a config, enforcing that stopwords and dictionary are disjoint
    /// after lowercasing.
    pub fn new(
        stopwords: BTreeSet<String>,
        dictionary: Option<BTreeSet<String>>,
    ) -> Result<Self> {
        if let Some(dict) = &dictionary {
            if let Some(w) = stopwords.iter().find(|w| dict.contains(*w)) {
                return Err(Error::Config(format!(
                    "word {w:?} appears in both the stopword set and the dictionary"
                )));
            }
        }
        Ok(FilterConfig {
            stopwords,
            dictionary,
            comment_rules: default_comment_rules(),
        })
    }
}

/// The built-in comment syntax table. User configs extend or override it.
pub fn default_comment_rules() -> BTreeMap<String, CommentSyntax> {
    let mut rules = BTreeMap::new();
    let line = |p: &str| CommentSyntax {
        line: vec![p.to_string()],
        block: vec![],
    };
    for tag in ["python", "ruby", "bash"] {
        rules.insert(tag.to_string(), line("#"));
    }
    for tag in ["c", "cpp", "java", "javascript", "csharp"] {
        rules.insert(
            tag.to_string(),
            CommentSyntax {
                line: vec!["//".to_string()],
                block: vec![("/*".to_string(), "*/".to_string())],
            },
        );
    }
    rules.insert("sql".to_string(), line("--"));
    for tag in ["html", "xml"] {
        rules.insert(
            tag.to_string(),
            CommentSyntax {
                line: vec![],
                block: vec![("<!--".to_string(), "-->".to_string())],
            },
        );
    }
    rules
}

/// Load a word list: one word per line, UTF-8, `#` comments allowed.
/// Words are trimmed and lowercased.
pub fn load_word_list(path: &Path) -> Result<BTreeSet<String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut words = BTreeSet::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let word = line.split('#').next().unwrap_or("").trim();
        if !word.is_empty() {
            words.insert(word.to_lowercase());
        }
    }
    Ok(words)
}

/// Load a comment-rule table from JSON: `{"tag": {"line": [..], "block": [[open, close], ..]}}`.
/// Entries are merged over the built-in defaults.
pub fn load_comment_rules(path: &Path) -> Result<BTreeMap<String, CommentSyntax>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let user: BTreeMap<String, CommentSyntax> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("comment rules {}: {e}", path.display())))?;
    let mut rules = default_comment_rules();
    for (tag, syntax) in user {
        rules.insert(tag.to_lowercase(), syntax);
    }
    Ok(rules)
}

/// Strip HTML markup from a post body. `<code>`/`<pre>` contents move to
/// `code_blocks` in document order (nested code/pre elements form a single
/// block); all other tags are deleted; entities are decoded; prose keeps
/// the original word order.
pub fn strip_html(body: &str) -> (String, Vec<String>) {
    let chars: Vec<char> = body.chars().collect();
    let mut prose = String::new();
    let mut blocks = Vec::new();
    let mut block = String::new();
    let mut capture_depth = 0usize;
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        if c == '<' {
            match chars.get(i + 1) {
                Some('!') => {
                    if chars.get(i + 2) == Some(&'-') && chars.get(i + 3) == Some(&'-') {
                        i = skip_past(&chars, i + 4, &['-', '-', '>']);
                    } else {
                        i = skip_past(&chars, i + 2, &['>']);
                    }
                    continue;
                }
                Some(&n) if n == '/' || n == '?' || n.is_ascii_alphabetic() => {
                    let (name, closing, self_closing, next) = scan_tag(&chars, i + 1);
                    i = next;
                    if name == "code" || name == "pre" {
                        if closing {
                            if capture_depth > 0 {
                                capture_depth -= 1;
                                if capture_depth == 0 {
                                    blocks.push(std::mem::take(&mut block));
                                }
                            }
                        } else if !self_closing {
                            capture_depth += 1;
                        }
                    }
                    continue;
                }
                // A bare '<' that does not open a tag is literal text.
                _ => {}
            }
        }
        let sink = if capture_depth > 0 { &mut block } else { &mut prose };
        if c == '&' {
            i = decode_entity(&chars, i, sink);
        } else {
            sink.push(c);
            i += 1;
        }
    }
    // Unterminated code/pre at EOF: keep what was captured.
    if capture_depth > 0 && !block.is_empty() {
        blocks.push(block);
    }
    (prose, blocks)
}

/// Advance past the first occurrence of `needle`, or to EOF.
fn skip_past(chars: &[char], from: usize, needle: &[char]) -> usize {
    let mut i = from;
    while i < chars.len() {
        if chars[i..].starts_with(needle) {
            return i + needle.len();
        }
        i += 1;
    }
    chars.len()
}

/// Scan a tag starting just after '<'. Returns (lowercased name, is_closing,
/// is_self_closing, index after '>').
fn scan_tag(chars: &[char], from: usize) -> (String, bool, bool, usize) {
    let mut i = from;
    let closing = chars.get(i) == Some(&'/');
    if closing {
        i += 1;
    }
    let mut name = String::new();
    while let Some(&c) = chars.get(i) {
        if c.is_ascii_alphanumeric() {
            name.push(c.to_ascii_lowercase());
            i += 1;
        } else {
            break;
        }
    }
    // Advance to '>' outside quoted attribute values.
    let mut quote: Option<char> = None;
    let mut last_nonspace = ' ';
    while let Some(&c) = chars.get(i) {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => quote = Some(c),
            None if c == '>' => {
                return (name, closing, last_nonspace == '/', i + 1);
            }
            None => {}
        }
        if !c.is_whitespace() {
            last_nonspace = c;
        }
        i += 1;
    }
    (name, closing, false, chars.len())
}

/// Decode the entity starting at `chars[i] == '&'` into `sink`, returning the
/// next index. Unknown entities are emitted literally.
fn decode_entity(chars: &[char], i: usize, sink: &mut String) -> usize {
    let mut j = i + 1;
    let mut name = String::new();
    while let Some(&c) = chars.get(j) {
        if c == ';' {
            break;
        }
        if name.len() >= 10 || !(c.is_ascii_alphanumeric() || c == '#') {
            break;
        }
        name.push(c);
        j += 1;
    }
    if chars.get(j) != Some(&';') {
        sink.push('&');
        return i + 1;
    }
    let decoded = match name.as_str() {
        "amp" => Some('&'),
        "lt" => Some('<'),
        "gt" => Some('>'),
        "quot" => Some('"'),
        "apos" => Some('\''),
        "nbsp" => Some(' '),
        _ => {
            if let Some(num) = name.strip_prefix('#') {
                let code = if let Some(hex) = num.strip_prefix('x').or(num.strip_prefix('X')) {
                    u32::from_str_radix(hex, 16).ok()
                } else {
                    num.parse().ok()
                };
                code.and_then(char::from_u32)
            } else {
                None
            }
        }
    };
    match decoded {
        Some(c) => {
            sink.push(c);
            j + 1
        }
        None => {
            sink.push('&');
            i + 1
        }
    }
}

/// Mine natural-language comments out of a code block, using the comment
/// syntax of the first post tag present in the rule table. Code with no
/// matching tag is discarded (empty result).
pub fn extract_code_comments(code: &str, tags: &[String], cfg: &FilterConfig) -> String {
    let syntax = match tags
        .iter()
        .find_map(|t| cfg.comment_rules.get(&t.to_lowercase()))
    {
        Some(s) => s,
        None => return String::new(),
    };
    let bytes = code.as_bytes();
    let mut out: Vec<&str> = Vec::new();
    let mut i = 0;
    'scan: while i < bytes.len() {
        for (open, close) in &syntax.block {
            if code[i..].starts_with(open.as_str()) {
                let body_start = i + open.len();
                let body_end = code[body_start..]
                    .find(close.as_str())
                    .map(|p| body_start + p)
                    .unwrap_or(code.len());
                out.push(code[body_start..body_end].trim());
                i = (body_end + close.len()).min(code.len());
                continue 'scan;
            }
        }
        for prefix in &syntax.line {
            if code[i..].starts_with(prefix.as_str()) {
                let body_start = i + prefix.len();
                let body_end = code[body_start..]
                    .find('\n')
                    .map(|p| body_start + p)
                    .unwrap_or(code.len());
                out.push(code[body_start..body_end].trim());
                i = body_end + 1;
                continue 'scan;
            }
        }
        // Advance one full character, not one byte.
        i += code[i..].chars().next().map_or(1, char::len_utf8);
    }
    out.retain(|s| !s.is_empty());
    out.join(" ")
}

/// Lowercase and split on anything that is not a letter, digit, or internal
/// hyphen. Hyphenated terms like "ping-test" stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if c == '-'
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            cur.push('-');
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

/// Drop stopwords, then (when a dictionary is present) keep only dictionary
/// members. Order and multiplicity of survivors are preserved.
pub fn filter_tokens(tokens: &[String], cfg: &FilterConfig) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !cfg.stopwords.contains(*t))
        .filter(|t| cfg.dictionary.as_ref().is_none_or(|d| d.contains(*t)))
        .cloned()
        .collect()
}

/// Full body treatment: strip markup, mine code comments using the post's
/// tags, tokenize, filter. Returns the surviving tokens.
pub fn prepare_body(body: &str, tags: &[String], cfg: &FilterConfig) -> Vec<String> {
    let (prose, code_blocks) = strip_html(body);
    let mut text = prose;
    for block in &code_blocks {
        let comments = extract_code_comments(block, tags, cfg);
        if !comments.is_empty() {
            text.push(' ');
            text.push_str(&comments);
        }
    }
    filter_tokens(&tokenize(&text), cfg)
}

/// Preprocess every question and answer body in the corpus in place:
/// titles and bodies are replaced by their filtered, space-joined tokens.
pub fn prepare_corpus(corpus: &mut Corpus, cfg: &FilterConfig) {
    for q in &mut corpus.questions {
        let title_tokens = filter_tokens(&tokenize(&q.title), cfg);
        let body_tokens = prepare_body(&q.body_text, &q.tags, cfg);
        q.title = title_tokens.join(" ");
        q.body_text = body_tokens.join(" ");
        for a in &mut q.answers {
            let tokens = prepare_body(&a.body_text, &q.tags, cfg);
            a.body_text = tokens.join(" ");
        }
    }
}
