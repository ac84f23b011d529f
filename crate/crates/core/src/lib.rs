//! Multi-draft speculative decoding.
//!
//! A small draft model proposes several candidate continuations; the large
//! model scores all of them in one batched call, and a draft-selection
//! procedure picks a valid continuation whose law is exactly the large
//! model's. Token-level selection is framed as optimal transport with a
//! membership cost, solved either exactly by linear programming or
//! approximately by K-SEQ sequential selection.
//!
//! Module map:
//! - [`prob`]: categorical distributions, seeded sampling, total variation.
//! - [`coupling`]: token-level couplings (maximal, K-SEQ, optimal LP) and
//!   acceptance-probability analysis.
//! - [`lm`]: seeded table-based toy language models.
//! - [`drafts`]: i.i.d. and prefix-tree draft sets.
//! - [`decode`]: sequence-level draft selection and end-to-end decoders.
//! - [`bench`]: sweeps, exactness verification and decoding benchmarks.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod coupling;
pub mod decode;
pub mod drafts;
mod error;
pub mod lm;
pub mod prob;

pub use error::{Error, Result};
pub use prob::{ProbVector, RngStream, TokenId};
