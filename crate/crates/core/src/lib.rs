//! Expert discovery for community Q&A corpora.
//!
//! The crate implements an end-to-end pipeline: a Stack Exchange style dump
//! is parsed and quality-filtered into a [`corpus::Corpus`], post text is
//! cleaned and tokenized ([`textprep`]), word vectors are trained with
//! skip-gram negative sampling ([`embedding`]), posts are summarized as
//! TF-weighted vector averages ([`docvec`]), latent knowledge domains are
//! extracted by clustering word vectors ([`domains`]), the sparse
//! question × user vote matrix is smoothed with regularized NMF ([`nmf`]),
//! and free-text queries are answered with a ranked expert list
//! ([`recommend`]). Retrieval quality is measured with accuracy@N and
//! nDCG@N over k-fold query sets ([`eval`]).
//!
//! Everything downstream of ingestion is deterministic for a fixed seed:
//! rerunning any stage with unchanged inputs produces byte-identical
//! output files. [`pipeline`] wires the stages together behind a single
//! config file.

pub mod corpus;
pub mod docvec;
pub mod domains;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod nmf;
pub mod pipeline;
pub mod recommend;
pub mod textprep;

pub use error::{Error, Result};
