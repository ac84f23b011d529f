//! Token-level draft selection.
//!
//! Given `k` i.i.d. drafts from `p`, a coupling returns one token whose law is
//! exactly `q`. Three couplings are provided: the single-draft maximal
//! coupling, K-SEQ, and the optimal membership-cost plan solved as an LP.

mod bounds;
mod kseq;
mod maximal;
mod otm;
pub mod simplex;

use serde::Serialize;

use crate::prob::{ProbVector, RngStream, TokenId};
use crate::Result;

pub use bounds::{
    alpha_bernoulli_closed_form, alpha_uniform_closed_form, alpha_upper_bound, alpha_upper_bound_at,
    gamma_star_uniform_closed_form, MAX_BOUND_VOCAB,
};
pub use kseq::{
    beta, gamma_gap, kseq_acceptance, kseq_gamma_star, kseq_output_marginal, kseq_params, kseq_select,
    KseqCoupling, KseqParams, DEFAULT_GAMMA_DELTA,
};
pub use maximal::{maximal_coupling_select, MaximalCoupling};
pub use otm::{otm_lp_solve, OtmCoupling, PlanRow, TransportPlan, DEFAULT_TUPLE_CAP};

/// Outcome of a token-level selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub token: TokenId,
    /// Position of the accepted draft, if the output is one of the drafts.
    pub accepted_index: Option<usize>,
}

/// A coupling from `p^{⊗k}` to `q`, ready to map draft tuples to tokens.
#[derive(Debug, Clone)]
pub enum TokenCoupling {
    Maximal(MaximalCoupling),
    Kseq(KseqCoupling),
    Otm(OtmCoupling),
}

impl TokenCoupling {
    pub fn select(&self, drafts: &[TokenId], rng: &mut RngStream) -> Result<Selection> {
        match self {
            TokenCoupling::Maximal(c) => c.select(drafts, rng),
            TokenCoupling::Kseq(c) => c.select(drafts, rng),
            TokenCoupling::Otm(c) => c.select(drafts, rng),
        }
    }

    /// Exact law of the selected token given the drafts.
    pub fn conditional(&self, drafts: &[TokenId]) -> Result<ProbVector> {
        match self {
            TokenCoupling::Maximal(c) => c.conditional(drafts),
            TokenCoupling::Kseq(c) => c.conditional(drafts),
            TokenCoupling::Otm(c) => c.conditional(drafts),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceMethod {
    Maximal,
    Kseq,
    OtmLp,
    UpperBound,
    ClosedForm,
}

impl AcceptanceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AcceptanceMethod::Maximal => "maximal",
            AcceptanceMethod::Kseq => "kseq",
            AcceptanceMethod::OtmLp => "otm_lp",
            AcceptanceMethod::UpperBound => "upper_bound",
            AcceptanceMethod::ClosedForm => "closed_form",
        }
    }
}

/// An acceptance probability together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptanceReport {
    pub method: AcceptanceMethod,
    pub alpha: f64,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_subset: Option<Vec<TokenId>>,
}

impl AcceptanceReport {
    pub fn new(method: AcceptanceMethod, alpha: f64, k: usize) -> Self {
        Self {
            method,
            alpha: alpha.clamp(0.0, 1.0),
            k,
            gamma: None,
            witness_subset: None,
        }
    }
}
