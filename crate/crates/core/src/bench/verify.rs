//! Exactness checks.
//!
//! Token scope compares the closed-form K-SEQ output marginal with `q` on
//! seeded random instances. Sequence scope enumerates every draft
//! realization of a small instance, takes the exact law of the emitted
//! tokens, completes each output to length `L + 1` with the large model and
//! compares the result with the large model's chain rule.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{Cell, Table};
use crate::coupling::{kseq_gamma_star, kseq_output_marginal, DEFAULT_GAMMA_DELTA};
use crate::decode::{draft_selection_law, Drafting, SelectionMethod};
use crate::drafts::DraftSet;
use crate::lm::{ModelPair, ToyLm, ToyLmSpec};
use crate::prob::{self, ProbVector, RngStream, TokenId};
use crate::{Error, Result};

/// Upper limit on the draft realizations enumerated per sequence case.
pub const MAX_REALIZATIONS: usize = 1 << 16;

fn dirichlet(rng: &mut RngStream, vocab: usize, zero_prob: f64) -> ProbVector {
    loop {
        let weights: Vec<f64> = (0..vocab)
            .map(|_| {
                if rng.next_f64() < zero_prob {
                    0.0
                } else {
                    -(1.0 - rng.next_f64()).ln()
                }
            })
            .collect();
        if let Ok(p) = ProbVector::from_weights(weights) {
            return p;
        }
    }
}

/// Seeded random pair over `vocab` tokens with flat Dirichlet entries, about
/// 15% of them zeroed, and `tv(p, q) < 1`.
pub fn random_pair(rng: &mut RngStream, vocab: usize) -> (ProbVector, ProbVector) {
    loop {
        let p = dirichlet(rng, vocab, 0.15);
        let q = dirichlet(rng, vocab, 0.15);
        if prob::tv_distance(&p, &q).expect("same vocabulary") < 1.0 - 1e-9 {
            return (p, q);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenVerifyConfig {
    pub cases: usize,
    pub seed: u64,
    pub max_vocab: usize,
    pub max_k: usize,
    /// Fixes `k` for every case instead of drawing it.
    pub k: Option<usize>,
    /// Fixes `γ` for every case instead of checking `γ*`, `γ* + 0.1` and `k`.
    pub gamma: Option<f64>,
    pub tolerance: f64,
}

impl Default for TokenVerifyConfig {
    fn default() -> Self {
        Self {
            cases: 100,
            seed: 0,
            max_vocab: 6,
            max_k: 8,
            k: None,
            gamma: None,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub label: String,
    /// Largest absolute deviation; `None` when the case could not be evaluated.
    pub max_error: Option<f64>,
    pub diagnosis: Option<String>,
    pub passed: bool,
}

impl CaseResult {
    fn measured(label: String, max_error: f64, tolerance: f64) -> Self {
        let passed = max_error <= tolerance;
        Self {
            label,
            max_error: Some(max_error),
            diagnosis: (!passed).then(|| format!("deviation {max_error:e} exceeds {tolerance:e}")),
            passed,
        }
    }

    fn failed(label: String, err: &Error) -> Self {
        let diagnosis = match err {
            Error::InvalidGamma { gamma, residual_entry } => {
                format!("invalid gamma {gamma}: residual entry {residual_entry:.3e} is negative")
            }
            other => other.to_string(),
        };
        Self {
            label,
            max_error: None,
            diagnosis: Some(diagnosis),
            passed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub scope: &'static str,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    /// The failing case with the largest deviation, or the first unevaluable one.
    pub fn worst_failure(&self) -> Option<&CaseResult> {
        let failures = self.cases.iter().filter(|c| !c.passed);
        failures.max_by(|a, b| {
            let key = |c: &CaseResult| c.max_error.unwrap_or(f64::INFINITY);
            key(a).total_cmp(&key(b))
        })
    }

    pub fn max_error(&self) -> f64 {
        self.cases.iter().filter_map(|c| c.max_error).fold(0.0, f64::max)
    }

    pub fn to_table(&self, config: Vec<(String, String)>) -> Table {
        let mut table = Table::new("verify", vec!["scope", "case", "max_error", "tolerance", "status", "diagnosis"]);
        table.config = config;
        for c in &self.cases {
            table.push(vec![
                Cell::from(self.scope),
                Cell::text(c.label.clone()),
                c.max_error.map_or(Cell::Empty, |e| Cell::text(format!("{e:.3e}"))),
                Cell::text(format!("{:e}", self.tolerance)),
                Cell::from(if c.passed { "pass" } else { "fail" }),
                Cell::text(c.diagnosis.clone().unwrap_or_default()),
            ]);
        }
        table
    }
}

fn token_case(cfg: &TokenVerifyConfig, index: usize) -> Vec<CaseResult> {
    let mut rng = RngStream::new(cfg.seed).substream(index as u64);
    let vocab = 2 + (rng.next_u64() % (cfg.max_vocab.max(2) as u64 - 1)) as usize;
    let k = cfg.k.unwrap_or_else(|| 1 + (rng.next_u64() % cfg.max_k.max(1) as u64) as usize);
    let (p, q) = random_pair(&mut rng, vocab);
    let gammas = match cfg.gamma {
        Some(g) => vec![g],
        None => match kseq_gamma_star(&p, &q, k, DEFAULT_GAMMA_DELTA) {
            Ok(g) => {
                let mut v = vec![g, g + 0.1, k as f64];
                v.dedup();
                v
            }
            Err(e) => return vec![CaseResult::failed(format!("#{index} vocab={vocab} k={k}"), &e)],
        },
    };
    gammas
        .into_iter()
        .map(|gamma| {
            let label = format!("#{index} vocab={vocab} k={k} gamma={}", super::format_real(gamma));
            match kseq_output_marginal(&p, &q, k, gamma) {
                Ok(m) => {
                    let err = m
                        .probs()
                        .iter()
                        .zip(q.probs())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    CaseResult::measured(label, err, cfg.tolerance)
                }
                Err(e) => CaseResult::failed(label, &e),
            }
        })
        .collect()
}

pub fn verify_token(cfg: &TokenVerifyConfig) -> Result<VerifyReport> {
    if cfg.max_vocab < 2 || cfg.max_k == 0 || cfg.k == Some(0) {
        return Err(Error::Domain("need max_vocab >= 2 and k >= 1".into()));
    }
    let cases: Vec<Vec<CaseResult>> = (0..cfg.cases).into_par_iter().map(|i| token_case(cfg, i)).collect();
    Ok(VerifyReport {
        scope: "token",
        tolerance: cfg.tolerance,
        cases: cases.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceVerifyConfig {
    pub vocab: usize,
    pub length: usize,
    pub drafts: usize,
    pub order: usize,
    pub eps: f64,
    pub seed: u64,
    /// Number of model pairs; odd-numbered pairs give the small model exact zeros.
    pub pairs: usize,
    pub methods: Vec<SelectionMethod>,
    /// Also check prefix trees with `drafts` children per node.
    pub include_tree: bool,
    pub tolerance: f64,
}

impl Default for SequenceVerifyConfig {
    fn default() -> Self {
        Self {
            vocab: 3,
            length: 2,
            drafts: 2,
            order: 1,
            eps: 0.5,
            seed: 0,
            pairs: 2,
            methods: vec![SelectionMethod::Maximal, SelectionMethod::KSEQ, SelectionMethod::OTM],
            include_tree: true,
            tolerance: 1e-6,
        }
    }
}

fn digits(mut index: usize, base: usize, len: usize) -> Vec<TokenId> {
    let mut out = vec![TokenId(0); len];
    for slot in out.iter_mut().rev() {
        *slot = TokenId::from(index % base);
        index /= base;
    }
    out
}

/// Every realization of `drafting` at `context` with positive probability.
pub fn enumerate_draft_sets(small: &ToyLm, context: &[TokenId], drafting: &Drafting) -> Result<Vec<DraftSet>> {
    let vocab = small.vocab_size();
    let slots = match drafting {
        Drafting::Iid { drafts, length } => drafts * length,
        Drafting::Tree { factors } => factors
            .iter()
            .scan(1usize, |width, f| {
                *width *= f;
                Some(*width)
            })
            .sum(),
    };
    let total = u32::try_from(slots)
        .ok()
        .and_then(|s| vocab.checked_pow(s))
        .filter(|n| *n <= MAX_REALIZATIONS)
        .ok_or(Error::SizeLimit {
            what: "draft realizations",
            size: usize::MAX,
            cap: MAX_REALIZATIONS,
        })?;
    let mut sets = Vec::new();
    for index in 0..total {
        let tokens = digits(index, vocab, slots);
        let set = match drafting {
            Drafting::Iid { length, .. } => {
                let seqs: Vec<Vec<TokenId>> = tokens.chunks(*length).map(<[TokenId]>::to_vec).collect();
                DraftSet::from_sequences(small, context, &seqs)?
            }
            Drafting::Tree { factors } => DraftSet::from_tree_tokens(small, context, factors, &tokens)?,
        };
        if set.realization_probability() > 0.0 {
            sets.push(set);
        }
    }
    Ok(sets)
}

/// Exact law of one selection round, marginalized over draft realizations.
pub fn exact_round_law(
    pair: &ModelPair,
    context: &[TokenId],
    drafting: &Drafting,
    method: SelectionMethod,
) -> Result<BTreeMap<Vec<TokenId>, f64>> {
    let mut law = BTreeMap::new();
    for set in enumerate_draft_sets(&pair.small, context, drafting)? {
        let weight = set.realization_probability();
        for (out, m) in draft_selection_law(context, &set, &pair.big, &pair.small, method)? {
            *law.entry(out).or_default() += weight * m;
        }
    }
    Ok(law)
}

/// Largest deviation between the law of `round` completed to `horizon`
/// tokens by the large model and the large model's own law on `horizon` tokens.
pub fn completion_error(
    big: &ToyLm,
    context: &[TokenId],
    round: &BTreeMap<Vec<TokenId>, f64>,
    horizon: usize,
) -> Result<f64> {
    let vocab = big.vocab_size();
    let mut worst = 0.0f64;
    for index in 0..vocab.pow(horizon as u32) {
        let seq = digits(index, vocab, horizon);
        let mut full = context.to_vec();
        // chain[i] = Π_{j >= i} M_b(seq[j] | context, seq[..j])
        let mut cond = Vec::with_capacity(horizon);
        for &t in &seq {
            cond.push(big.next_dist(&full)?.prob(t));
            full.push(t);
        }
        let mut chain = vec![1.0; horizon + 1];
        for i in (0..horizon).rev() {
            chain[i] = chain[i + 1] * cond[i];
        }
        let completed: f64 = (1..=horizon)
            .map(|m| round.get(&seq[..m]).copied().unwrap_or(0.0) * chain[m])
            .sum();
        worst = worst.max((completed - chain[0]).abs());
    }
    let longest = round.keys().map(Vec::len).max().unwrap_or(0);
    if longest > horizon {
        return Err(Error::Internal(format!("round emitted {longest} tokens, horizon is {horizon}")));
    }
    Ok(worst)
}

fn sequence_cases(cfg: &SequenceVerifyConfig) -> Vec<(usize, Drafting, SelectionMethod)> {
    let mut cases = Vec::new();
    for pair in 0..cfg.pairs {
        for &method in &cfg.methods {
            if method == SelectionMethod::Maximal {
                cases.push((pair, Drafting::Iid { drafts: 1, length: cfg.length }, method));
                continue;
            }
            cases.push((
                pair,
                Drafting::Iid {
                    drafts: cfg.drafts,
                    length: cfg.length,
                },
                method,
            ));
            if cfg.include_tree && cfg.drafts > 1 {
                cases.push((
                    pair,
                    Drafting::Tree {
                        factors: vec![cfg.drafts; cfg.length],
                    },
                    method,
                ));
            }
        }
    }
    cases
}

pub fn verify_sequence(cfg: &SequenceVerifyConfig) -> Result<VerifyReport> {
    if cfg.vocab < 2 || cfg.length == 0 || cfg.drafts == 0 {
        return Err(Error::Domain("need vocab >= 2, L >= 1 and K >= 1".into()));
    }
    let pairs: Vec<ModelPair> = (0..cfg.pairs)
        .map(|j| {
            ModelPair::from_spec(&ToyLmSpec {
                vocab_size: cfg.vocab,
                order: cfg.order,
                seed: cfg.seed + j as u64,
                eps: cfg.eps,
                allow_zeros: j % 2 == 1,
            })
        })
        .collect::<Result<_>>()?;
    let cases = sequence_cases(cfg);
    let results: Vec<Result<CaseResult>> = cases
        .par_iter()
        .map(|(j, drafting, method)| {
            let context = vec![TokenId::from(j % cfg.vocab)];
            let label = format!(
                "pair={j} vocab={} L={} K={} method={method} drafting={}",
                cfg.vocab,
                drafting.draft_length(),
                drafting.draft_count(),
                drafting.label()
            );
            let round = match exact_round_law(&pairs[*j], &context, drafting, *method) {
                Ok(r) => r,
                Err(e @ Error::SizeLimit { .. }) => return Err(e),
                Err(e) => return Ok(CaseResult::failed(label, &e)),
            };
            let err = completion_error(&pairs[*j].big, &context, &round, drafting.draft_length() + 1)?;
            Ok(CaseResult::measured(label, err, cfg.tolerance))
        })
        .collect();
    Ok(VerifyReport {
        scope: "sequence",
        tolerance: cfg.tolerance,
        cases: results.into_iter().collect::<Result<_>>()?,
    })
}
