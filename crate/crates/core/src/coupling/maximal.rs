//! Single-draft maximal coupling (classic speculative sampling).

use crate::prob::{self, ProbVector, RngStream, TokenId};
use crate::{Error, Result};

use super::Selection;

#[derive(Debug, Clone)]
pub struct MaximalCoupling {
    p: ProbVector,
    q: ProbVector,
    residual: Option<ProbVector>,
}

impl MaximalCoupling {
    pub fn new(p: &ProbVector, q: &ProbVector) -> Result<Self> {
        let residual = match prob::residual_maximal(p, q) {
            Ok(r) => Some(r),
            Err(Error::DegenerateResidual) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { p: p.clone(), q: q.clone(), residual })
    }

    fn accept_prob(&self, draft: TokenId) -> Result<f64> {
        self.p.check_token(draft)?;
        let pp = self.p.prob(draft);
        if pp <= 0.0 {
            return Err(Error::InvalidDraft { token: draft.0 });
        }
        Ok((self.q.prob(draft) / pp).min(1.0))
    }

    fn single(drafts: &[TokenId]) -> Result<TokenId> {
        match drafts {
            [d] => Ok(*d),
            _ => Err(Error::Structure(format!(
                "maximal coupling takes exactly one draft, got {}",
                drafts.len()
            ))),
        }
    }

    pub fn select(&self, drafts: &[TokenId], rng: &mut RngStream) -> Result<Selection> {
        let draft = Self::single(drafts)?;
        let (token, accepted) = self.select_one(draft, rng)?;
        Ok(Selection { token, accepted_index: accepted.then_some(0) })
    }

    pub fn select_one(&self, draft: TokenId, rng: &mut RngStream) -> Result<(TokenId, bool)> {
        let ratio = self.accept_prob(draft)?;
        if rng.next_f64() < ratio {
            return Ok((draft, true));
        }
        // rejection has zero probability when p == q, so the fallback only absorbs rounding
        let residual = self.residual.as_ref().unwrap_or(&self.q);
        Ok((prob::sample(residual, rng), false))
    }

    pub fn conditional(&self, drafts: &[TokenId]) -> Result<ProbVector> {
        let draft = Self::single(drafts)?;
        let a = self.accept_prob(draft)?;
        let residual = self.residual.as_ref().unwrap_or(&self.q);
        let mut law: Vec<f64> = residual.probs().iter().map(|r| (1.0 - a) * r).collect();
        law[draft.index()] += a;
        ProbVector::from_weights(law)
    }
}

/// Accepts `draft` with probability `min(1, q/p)`, otherwise samples the
/// maximal-coupling residual. Returns the token and whether the draft was kept.
pub fn maximal_coupling_select(
    p: &ProbVector,
    q: &ProbVector,
    draft: TokenId,
    rng: &mut RngStream,
) -> Result<(TokenId, bool)> {
    MaximalCoupling::new(p, q)?.select_one(draft, rng)
}
