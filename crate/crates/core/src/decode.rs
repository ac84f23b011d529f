//! Sequence-level draft selection and end-to-end decoders.
//!
//! Selection walks the draft tree depth by depth. At each depth the
//! candidates are the children of every node still consistent with the
//! tokens emitted so far; they are i.i.d. from the small model given the
//! current prefix, so a token-level coupling from
//! `M_s(·|prefix)^{⊗|candidates|}` to `M_b(·|prefix)` yields a valid next
//! token. Candidates matching that token survive to the next depth. For
//! i.i.d. drafts this is exactly the filter-and-recurse procedure over draft
//! suffixes; for prefix trees it uses sibling tokens rather than the leaf
//! multiset, since only siblings are i.i.d.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::coupling::{
    kseq_gamma_star, KseqCoupling, MaximalCoupling, OtmCoupling, TokenCoupling, DEFAULT_GAMMA_DELTA,
    DEFAULT_TUPLE_CAP,
};
use crate::drafts::{build_prefix_tree_drafts, sample_iid_drafts, DraftSet, NodeId};
use crate::lm::{CostModel, ToyLm};
use crate::prob::{self, ProbVector, RngStream, TokenId};
use crate::{Error, Result};

/// How K-SEQ picks its division factor at each depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaPolicy {
    /// Recompute `γ*` for the current candidate count.
    Optimal,
    /// `γ = max(K_initial, k_current)`; skips the search and stays valid since `γ* <= k`.
    InitialK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SelectionMethod {
    /// Single-draft maximal coupling; every depth must have exactly one candidate.
    Maximal,
    Kseq { gamma: GammaPolicy },
    OtmLp { tuple_cap: usize },
}

impl SelectionMethod {
    pub const KSEQ: SelectionMethod = SelectionMethod::Kseq {
        gamma: GammaPolicy::Optimal,
    };
    pub const OTM: SelectionMethod = SelectionMethod::OtmLp {
        tuple_cap: DEFAULT_TUPLE_CAP,
    };

    pub fn label(&self) -> &'static str {
        match self {
            SelectionMethod::Maximal => "maximal",
            SelectionMethod::Kseq {
                gamma: GammaPolicy::Optimal,
            } => "kseq",
            SelectionMethod::Kseq {
                gamma: GammaPolicy::InitialK,
            } => "kseq-fixed",
            SelectionMethod::OtmLp { .. } => "otm",
        }
    }

    /// Token-level coupling for `k` candidates.
    pub fn coupling(&self, p: &ProbVector, q: &ProbVector, k: usize, initial_k: usize) -> Result<TokenCoupling> {
        match *self {
            SelectionMethod::Maximal => {
                if k != 1 {
                    return Err(Error::Structure(format!(
                        "maximal coupling requires exactly one draft per step, got {k}"
                    )));
                }
                Ok(TokenCoupling::Maximal(MaximalCoupling::new(p, q)?))
            }
            SelectionMethod::Kseq { gamma } => {
                let g = match gamma {
                    GammaPolicy::Optimal => kseq_gamma_star(p, q, k, DEFAULT_GAMMA_DELTA)?,
                    GammaPolicy::InitialK => initial_k.max(k) as f64,
                };
                Ok(TokenCoupling::Kseq(KseqCoupling::new(p, q, k, g)?))
            }
            SelectionMethod::OtmLp { tuple_cap } => {
                Ok(TokenCoupling::Otm(OtmCoupling::solve_with_cap(p, q, k, tuple_cap)?))
            }
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximal" => Ok(SelectionMethod::Maximal),
            "kseq" => Ok(SelectionMethod::KSEQ),
            "kseq-fixed" => Ok(SelectionMethod::Kseq {
                gamma: GammaPolicy::InitialK,
            }),
            "otm" | "otm_lp" | "otm-lp" => Ok(SelectionMethod::OTM),
            other => Err(Error::Parse(format!(
                "unknown selection method {other:?} (expected maximal, kseq, kseq-fixed or otm)"
            ))),
        }
    }
}

/// Result of one call to [`draft_selection`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionOutcome {
    /// Newly decoded tokens, `1..=L+1` of them.
    pub tokens: Vec<TokenId>,
    /// Number of emitted tokens that were among the drafts.
    pub accepted: usize,
    /// Whether the final token is the extra sample drawn after a full acceptance.
    pub bonus: bool,
}

fn extend(context: &[TokenId], prefix: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(context.len() + prefix.len());
    v.extend_from_slice(context);
    v.extend_from_slice(prefix);
    v
}

struct Step {
    candidates: Vec<NodeId>,
    tokens: Vec<TokenId>,
    coupling: TokenCoupling,
}

struct Walker<'a> {
    context: &'a [TokenId],
    drafts: &'a DraftSet,
    big: &'a ToyLm,
    small: &'a ToyLm,
    method: SelectionMethod,
    initial_k: usize,
}

impl<'a> Walker<'a> {
    fn new(
        context: &'a [TokenId],
        drafts: &'a DraftSet,
        big: &'a ToyLm,
        small: &'a ToyLm,
        method: SelectionMethod,
    ) -> Result<Self> {
        drafts.validate()?;
        if drafts.context() != context {
            return Err(Error::Structure("draft set was built for a different context".into()));
        }
        Ok(Self {
            context,
            drafts,
            big,
            small,
            method,
            initial_k: drafts.children(drafts.root()).len(),
        })
    }

    /// Candidates below `active` and the coupling used to pick the next token after `emitted`.
    fn step(&self, active: &[NodeId], emitted: &[TokenId]) -> Result<Step> {
        let candidates: Vec<NodeId> = active
            .iter()
            .flat_map(|&n| self.drafts.children(n).iter().copied())
            .collect();
        let tokens: Vec<TokenId> = candidates.iter().map(|&c| self.drafts.token(c)).collect();
        let full = extend(self.context, emitted);
        let p = match self.drafts.small_conditional(emitted) {
            Some(d) => d.clone(),
            None => self.small.next_dist(&full)?,
        };
        let q = self.big.next_dist(&full)?;
        let coupling = self.method.coupling(&p, &q, tokens.len(), self.initial_k)?;
        Ok(Step {
            candidates,
            tokens,
            coupling,
        })
    }

    fn survivors(&self, candidates: &[NodeId], chosen: TokenId) -> Vec<NodeId> {
        candidates
            .iter()
            .copied()
            .filter(|&c| self.drafts.token(c) == chosen)
            .collect()
    }

    fn bonus_dist(&self, emitted: &[TokenId]) -> Result<std::sync::Arc<ProbVector>> {
        self.big.next_dist(&extend(self.context, emitted))
    }

    fn exact(
        &self,
        active: &[NodeId],
        emitted: &mut Vec<TokenId>,
        mass: f64,
        out: &mut BTreeMap<Vec<TokenId>, f64>,
    ) -> Result<()> {
        let step = self.step(active, emitted)?;
        let law = step.coupling.conditional(&step.tokens)?;
        let length = self.drafts.draft_length();
        for y in law.support() {
            let m = mass * law.prob(y);
            emitted.push(y);
            let next = self.survivors(&step.candidates, y);
            if next.is_empty() {
                *out.entry(emitted.clone()).or_default() += m;
            } else if emitted.len() == length {
                let bonus = self.bonus_dist(emitted)?;
                for z in bonus.support() {
                    emitted.push(z);
                    *out.entry(emitted.clone()).or_default() += m * bonus.prob(z);
                    emitted.pop();
                }
            } else {
                self.exact(&next, emitted, m, out)?;
            }
            emitted.pop();
        }
        Ok(())
    }
}

/// Selects a valid continuation of `context` from a draft set.
pub fn draft_selection(
    context: &[TokenId],
    drafts: &DraftSet,
    big: &ToyLm,
    small: &ToyLm,
    method: SelectionMethod,
    rng: &mut RngStream,
) -> Result<SelectionOutcome> {
    let walker = Walker::new(context, drafts, big, small, method)?;
    let length = drafts.draft_length();
    let mut active: Vec<NodeId> = vec![drafts.root()];
    let mut emitted: Vec<TokenId> = Vec::with_capacity(length + 1);
    loop {
        let step = walker.step(&active, &emitted)?;
        let chosen = step.coupling.select(&step.tokens, rng)?.token;
        emitted.push(chosen);
        active = walker.survivors(&step.candidates, chosen);
        if active.is_empty() {
            return Ok(SelectionOutcome {
                accepted: emitted.len() - 1,
                tokens: emitted,
                bonus: false,
            });
        }
        if emitted.len() == length {
            emitted.push(prob::sample(&*walker.bonus_dist(&emitted)?, rng));
            return Ok(SelectionOutcome {
                accepted: length,
                tokens: emitted,
                bonus: true,
            });
        }
    }
}

/// Exact law of the tokens [`draft_selection`] emits for this draft set,
/// integrating over the coupling and bonus-token randomness. Keys are in
/// lexicographic order.
pub fn draft_selection_law(
    context: &[TokenId],
    drafts: &DraftSet,
    big: &ToyLm,
    small: &ToyLm,
    method: SelectionMethod,
) -> Result<BTreeMap<Vec<TokenId>, f64>> {
    let walker = Walker::new(context, drafts, big, small, method)?;
    let mut out = BTreeMap::new();
    walker.exact(&[drafts.root()], &mut Vec::new(), 1.0, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Drafting {
    Iid { drafts: usize, length: usize },
    Tree { factors: Vec<usize> },
}

impl Drafting {
    pub fn draft_count(&self) -> usize {
        match self {
            Drafting::Iid { drafts, .. } => *drafts,
            Drafting::Tree { factors } => factors.iter().product(),
        }
    }

    pub fn draft_length(&self) -> usize {
        match self {
            Drafting::Iid { length, .. } => *length,
            Drafting::Tree { factors } => factors.len(),
        }
    }

    pub fn build(&self, small: &ToyLm, context: &[TokenId], rng: &RngStream) -> Result<DraftSet> {
        match self {
            Drafting::Iid { drafts, length } => sample_iid_drafts(small, context, *drafts, *length, rng),
            Drafting::Tree { factors } => build_prefix_tree_drafts(small, context, factors, rng),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Drafting::Iid { .. } => "iid".into(),
            Drafting::Tree { factors } => format!(
                "tree:{}",
                factors.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("x")
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IterationRecord {
    pub drafts_used: usize,
    pub draft_length: usize,
    pub accepted: usize,
    pub extra_token: bool,
}

impl IterationRecord {
    pub fn emitted(&self) -> usize {
        self.accepted + 1
    }
}

/// Record of one decoding run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeTrace {
    pub algorithm: String,
    pub emitted_tokens: Vec<TokenId>,
    pub serial_big_calls: usize,
    /// Serial small-model steps (each advances every draft at once).
    pub serial_small_steps: usize,
    pub per_iteration: Vec<IterationRecord>,
}

impl DecodeTrace {
    pub fn simulated_time(&self, cost: &CostModel) -> f64 {
        self.serial_big_calls as f64 * cost.big_call_cost
            + self.serial_small_steps as f64 * cost.small_call_cost
            + self.per_iteration.len() as f64 * cost.overhead_per_iter
    }

    /// JSON object with `tokens`, `serial_big_calls`, `per_iteration` and `simulated_time`.
    pub fn to_json(&self, cost: &CostModel) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            algorithm: &'a str,
            tokens: Vec<u32>,
            serial_big_calls: usize,
            per_iteration: &'a [IterationRecord],
            simulated_time: f64,
        }
        serde_json::to_string(&View {
            algorithm: &self.algorithm,
            tokens: self.emitted_tokens.iter().map(|t| t.0).collect(),
            serial_big_calls: self.serial_big_calls,
            per_iteration: &self.per_iteration,
            simulated_time: self.simulated_time(cost),
        })
        .expect("trace serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrConfig {
    pub drafting: Drafting,
    pub method: SelectionMethod,
}

impl SpectrConfig {
    pub fn iid(drafts: usize, length: usize, method: SelectionMethod) -> Self {
        Self {
            drafting: Drafting::Iid { drafts, length },
            method,
        }
    }

    /// Classic single-draft speculative decoding.
    pub fn speculative(length: usize) -> Self {
        Self::iid(1, length, SelectionMethod::Maximal)
    }

    pub fn algorithm_name(&self) -> &'static str {
        if self.drafting.draft_count() == 1 && matches!(self.drafting, Drafting::Iid { .. }) {
            "speculative"
        } else {
            "spectr"
        }
    }
}

/// Decodes at least `total_tokens` tokens after `prompt`. Each iteration draws a
/// draft set, charges one batched large-model call and runs [`draft_selection`].
pub fn spectr_decode(
    big: &ToyLm,
    small: &ToyLm,
    prompt: &[TokenId],
    total_tokens: usize,
    config: &SpectrConfig,
    rng: &RngStream,
) -> Result<DecodeTrace> {
    if total_tokens == 0 {
        return Err(Error::Domain("total_tokens must be at least 1".into()));
    }
    let mut context = prompt.to_vec();
    let mut trace = DecodeTrace {
        algorithm: config.algorithm_name().into(),
        emitted_tokens: Vec::with_capacity(total_tokens + config.drafting.draft_length()),
        serial_big_calls: 0,
        serial_small_steps: 0,
        per_iteration: Vec::new(),
    };
    let mut iteration = 0u64;
    while trace.emitted_tokens.len() < total_tokens {
        let iter_rng = rng.substream(iteration);
        let drafts = config.drafting.build(small, &context, &iter_rng.substream(0))?;
        trace.serial_small_steps += drafts.draft_length();
        trace.serial_big_calls += 1;
        let outcome = draft_selection(
            &context,
            &drafts,
            big,
            small,
            config.method,
            &mut iter_rng.substream(1),
        )?;
        trace.per_iteration.push(IterationRecord {
            drafts_used: drafts.num_sequences(),
            draft_length: drafts.draft_length(),
            accepted: outcome.accepted,
            extra_token: outcome.bonus,
        });
        context.extend_from_slice(&outcome.tokens);
        trace.emitted_tokens.extend(outcome.tokens);
        iteration += 1;
    }
    Ok(trace)
}

/// Plain autoregressive decoding: one serial large-model call per token.
pub fn baseline_decode(big: &ToyLm, prompt: &[TokenId], total_tokens: usize, rng: &RngStream) -> Result<DecodeTrace> {
    let mut stream = rng.clone();
    let tokens = crate::lm::sample_sequence(big, prompt, total_tokens, &mut stream)?;
    Ok(DecodeTrace {
        algorithm: "baseline".into(),
        serial_big_calls: tokens.len(),
        serial_small_steps: 0,
        emitted_tokens: tokens,
        per_iteration: Vec::new(),
    })
}

/// Decoded tokens per serial large-model call.
pub fn block_efficiency(trace: &DecodeTrace) -> Result<f64> {
    if trace.serial_big_calls == 0 {
        return Err(Error::Domain("block efficiency is undefined without large-model calls".into()));
    }
    Ok(trace.emitted_tokens.len() as f64 / trace.serial_big_calls as f64)
}

/// Simulated baseline time for the same number of tokens divided by the
/// trace's simulated time.
pub fn simulated_speedup(trace: &DecodeTrace, cost: &CostModel) -> Result<f64> {
    let baseline = trace.emitted_tokens.len() as f64 * cost.big_call_cost;
    let actual = trace.simulated_time(cost);
    if !(actual > 0.0) || !(baseline > 0.0) {
        return Err(Error::Domain("speedup is undefined under a zero-cost model".into()));
    }
    Ok(baseline / actual)
}
