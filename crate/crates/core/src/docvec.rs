//! Document representation: the TF-weighted average of word vectors, and
//! cosine similarity between representations.

use std::collections::BTreeMap;

use crate::embedding::EmbeddingTable;
use crate::matrix::{dot, norm};
use crate::textprep::TokenDoc;
use crate::{Error, Result};

/// A summarized document. `token_mass` is the total term frequency of
/// in-vocabulary tokens; it is zero exactly when `values` is the zero
/// vector, and such vectors are excluded from similarity search. The
/// number of skipped out-of-vocabulary tokens is recoverable as
/// `doc.tokens.len() - token_mass`.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVector {
    pub doc_id: u64,
    pub values: Vec<f64>,
    pub token_mass: u64,
}

impl DocVector {
    pub fn is_zero(&self) -> bool {
        self.token_mass == 0
    }
}

/// Exact multiset counts of the document's tokens.
pub fn term_frequency(doc: &TokenDoc) -> BTreeMap<String, u64> {
    let mut tf = BTreeMap::new();
    for t in &doc.tokens {
        *tf.entry(t.clone()).or_insert(0) += 1;
    }
    tf
}

/// Summarize a document as the term-frequency-weighted mean of its
/// in-vocabulary word vectors. Out-of-vocabulary tokens are skipped; a
/// document with no in-vocabulary tokens legitimately yields the zero
/// vector with `token_mass == 0`.
pub fn summarize(doc: &TokenDoc, table: &EmbeddingTable) -> DocVector {
    let mut values = vec![0.0; table.dim()];
    let mut mass = 0u64;
    // Iterating the sorted TF map makes the float summation order a pure
    // function of the token multiset, independent of token order.
    for (term, count) in term_frequency(doc) {
        if let Some(vector) = table.lookup(&term) {
            for (v, w) in values.iter_mut().zip(vector) {
                *v += count as f64 * w;
            }
            mass += count;
        }
    }
    if mass > 0 {
        for v in &mut values {
            *v /= mass as f64;
        }
    }
    DocVector {
        doc_id: doc.doc_id,
        values,
        token_mass: mass,
    }
}

/// Dump question vectors in the embedding text format, keyed `q<id>`.
pub fn save_doc_vectors(
    vectors: &[DocVector],
    dim: usize,
    path: &std::path::Path,
) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(&format!("{} {}\n", vectors.len(), dim));
    for v in vectors {
        buf.push('q');
        buf.push_str(&v.doc_id.to_string());
        for x in &v.values {
            buf.push(' ');
            buf.push_str(&x.to_string());
        }
        buf.push('\n');
    }
    crate::pipeline::write_atomic(path, buf.as_bytes())
}

/// Load a `q<id>`-keyed vector dump. Dumped vectors are nonzero by
/// construction; the original token mass is not stored, so loaded vectors
/// carry a mass of 1.
pub fn load_doc_vectors(path: &std::path::Path) -> Result<Vec<DocVector>> {
    let table = crate::embedding::EmbeddingTable::load_file(path)?;
    let mut out = Vec::with_capacity(table.len());
    for (i, key) in table.words().iter().enumerate() {
        let id = key
            .strip_prefix('q')
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::CorpusFormat(format!(
                "{}: bad vector key {key:?}",
                path.display()
            )))?;
        out.push(DocVector {
            doc_id: id,
            values: table.vector(i).to_vec(),
            token_mass: 1,
        });
    }
    Ok(out)
}

/// Cosine similarity. Errors on zero vectors and length mismatches rather
/// than silently returning 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    // Rounding can push the quotient a ulp past ±1.
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
