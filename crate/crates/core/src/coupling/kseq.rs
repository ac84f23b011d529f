//! K-SEQ: scan i.i.d. drafts in order, accept draft `i` with probability
//! `min(1, q(x_i) / (gamma * p(x_i)))`, and fall back to a residual chosen
//! so that the returned token is exactly `q`-distributed whenever
//! `gamma >= gamma*`.

use crate::prob::{self, ProbVector, RngStream, TokenId, NEGATIVE_TOLERANCE};
use crate::{Error, Result};

use super::Selection;

pub const DEFAULT_GAMMA_DELTA: f64 = 1e-9;

/// `β(γ) = Σ_x min(p(x), q(x)/γ)`.
pub fn beta(p: &ProbVector, q: &ProbVector, gamma: f64) -> f64 {
    p.probs().iter().zip(q.probs()).map(|(a, b)| a.min(b / gamma)).sum()
}

/// `f(γ) = 1 - (1-β(γ))^k - γ β(γ)`; decreasing in `γ`, root at `γ*`.
pub fn gamma_gap(p: &ProbVector, q: &ProbVector, k: usize, gamma: f64) -> f64 {
    let b = beta(p, q, gamma);
    1.0 - (1.0 - b).powi(k as i32) - gamma * b
}

/// Smallest valid division factor, to within `delta`, by bisection on
/// `[1, k]`. The returned value is the upper end of the final bracket, so it
/// never lies below `γ*`.
pub fn kseq_gamma_star(p: &ProbVector, q: &ProbVector, k: usize, delta: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("draft count k must be at least 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let tv = prob::tv_distance(p, q)?;
    if tv == 0.0 {
        return Ok(1.0);
    }
    if prob::overlap(p, q)? <= 0.0 {
        return Err(Error::DegenerateSupport);
    }
    if k == 1 || gamma_gap(p, q, k, 1.0) <= 0.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (1.0_f64, k as f64);
    while hi - lo > delta {
        let mid = 0.5 * (lo + hi);
        if gamma_gap(p, q, k, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Derived quantities of K-SEQ at a fixed `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct KseqParams {
    pub k: usize,
    pub gamma: f64,
    pub beta: f64,
    /// `1 - (1 - beta)^k`: probability that some draft is accepted in the scan.
    pub p_acc: f64,
    /// `None` when `p_acc` is 1 up to `1e-12`, so the residual is never sampled.
    pub residual: Option<ProbVector>,
}

pub fn kseq_params(p: &ProbVector, q: &ProbVector, k: usize, gamma: f64) -> Result<KseqParams> {
    p.check_same_vocab(q)?;
    if k == 0 {
        return Err(Error::Domain("draft count k must be at least 1".into()));
    }
    if !(gamma >= 1.0 - NEGATIVE_TOLERANCE) || !gamma.is_finite() {
        return Err(Error::InvalidGamma { gamma, residual_entry: f64::NAN });
    }
    let b = beta(p, q, gamma);
    if b <= 0.0 {
        return Err(Error::DegenerateSupport);
    }
    let p_acc = 1.0 - (1.0 - b).powi(k as i32);
    let scale = p_acc / b;
    let excess: Vec<f64> = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(a, qq)| qq - a.min(qq / gamma) * scale)
        .collect();
    if let Some(worst) = excess.iter().copied().reduce(f64::min) {
        if worst < -NEGATIVE_TOLERANCE {
            return Err(Error::InvalidGamma {
                gamma,
                residual_entry: worst / (1.0 - p_acc).max(f64::MIN_POSITIVE),
            });
        }
    }
    let residual = if 1.0 - p_acc <= NEGATIVE_TOLERANCE {
        None
    } else {
        let clamped: Vec<f64> = excess.into_iter().map(|e| e.max(0.0)).collect();
        if clamped.iter().sum::<f64>() > 0.0 {
            Some(ProbVector::from_weights(clamped)?)
        } else {
            None
        }
    };
    Ok(KseqParams { k, gamma, beta: b, p_acc, residual })
}

/// K-SEQ bound to a particular `(p, q, k, gamma)`.
#[derive(Debug, Clone)]
pub struct KseqCoupling {
    p: ProbVector,
    q: ProbVector,
    params: KseqParams,
}

impl KseqCoupling {
    pub fn new(p: &ProbVector, q: &ProbVector, k: usize, gamma: f64) -> Result<Self> {
        Ok(Self {
            p: p.clone(),
            q: q.clone(),
            params: kseq_params(p, q, k, gamma)?,
        })
    }

    /// K-SEQ at `γ*` computed with [`DEFAULT_GAMMA_DELTA`].
    pub fn optimal(p: &ProbVector, q: &ProbVector, k: usize) -> Result<Self> {
        let gamma = kseq_gamma_star(p, q, k, DEFAULT_GAMMA_DELTA)?;
        Self::new(p, q, k, gamma)
    }

    pub fn params(&self) -> &KseqParams {
        &self.params
    }

    fn accept_prob(&self, token: TokenId) -> f64 {
        let pp = self.p.prob(token);
        (self.q.prob(token) / (self.params.gamma * pp)).min(1.0)
    }

    fn check_drafts(&self, drafts: &[TokenId]) -> Result<()> {
        if drafts.len() != self.params.k {
            return Err(Error::Structure(format!(
                "expected {} drafts, got {}",
                self.params.k,
                drafts.len()
            )));
        }
        for &d in drafts {
            self.p.check_token(d)?;
            if self.p.prob(d) <= 0.0 {
                return Err(Error::InvalidDraft { token: d.0 });
            }
        }
        Ok(())
    }

    fn fallback(&self) -> &ProbVector {
        // without a residual the scan accepts with probability 1 - O(1e-12)
        self.params.residual.as_ref().unwrap_or(&self.q)
    }

    pub fn select(&self, drafts: &[TokenId], rng: &mut RngStream) -> Result<Selection> {
        self.check_drafts(drafts)?;
        for (i, &d) in drafts.iter().enumerate() {
            if rng.next_f64() < self.accept_prob(d) {
                return Ok(Selection { token: d, accepted_index: Some(i) });
            }
        }
        Ok(Selection {
            token: prob::sample(self.fallback(), rng),
            accepted_index: None,
        })
    }

    /// Exact law of the selected token given the draft tuple.
    pub fn conditional(&self, drafts: &[TokenId]) -> Result<ProbVector> {
        self.check_drafts(drafts)?;
        let mut law = vec![0.0; self.q.vocab_size()];
        let mut survive = 1.0;
        for &d in drafts {
            let a = self.accept_prob(d);
            law[d.index()] += survive * a;
            survive *= 1.0 - a;
        }
        for (l, r) in law.iter_mut().zip(self.fallback().probs()) {
            *l += survive * r;
        }
        ProbVector::from_weights(law)
    }
}

pub fn kseq_select(
    p: &ProbVector,
    q: &ProbVector,
    drafts: &[TokenId],
    gamma: f64,
    rng: &mut RngStream,
) -> Result<Selection> {
    KseqCoupling::new(p, q, drafts.len(), gamma)?.select(drafts, rng)
}

/// Analytic output marginal of K-SEQ:
/// `min(p, q/γ)·p_acc/β + (1 - p_acc)·p_res`. Equals `q` when `γ >= γ*`.
pub fn kseq_output_marginal(p: &ProbVector, q: &ProbVector, k: usize, gamma: f64) -> Result<ProbVector> {
    let params = kseq_params(p, q, k, gamma)?;
    let scale = params.p_acc / params.beta;
    let mut out: Vec<f64> = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| a.min(b / gamma) * scale)
        .collect();
    if let Some(res) = &params.residual {
        for (o, r) in out.iter_mut().zip(res.probs()) {
            *o += (1.0 - params.p_acc) * r;
        }
    }
    ProbVector::new(out)
}

/// `1 - (1 - β(γ))^k`, the probability that the scan accepts a draft.
pub fn kseq_acceptance(p: &ProbVector, q: &ProbVector, k: usize, gamma: f64) -> Result<f64> {
    Ok(kseq_params(p, q, k, gamma)?.p_acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn gamma_star_examples() {
        let p = pv(&[0.25, 0.75]);
        let q = pv(&[0.75, 0.25]);
        assert_eq!(kseq_gamma_star(&p, &q, 1, 1e-9).unwrap(), 1.0);
        assert_eq!(kseq_gamma_star(&p, &p, 5, 1e-9).unwrap(), 1.0);

        let u4 = ProbVector::uniform(4).unwrap();
        let u2 = ProbVector::uniform_over(4, 2).unwrap();
        assert_abs_diff_eq!(kseq_gamma_star(&u4, &u2, 2, 1e-9).unwrap(), 1.5, epsilon = 1e-8);

        let u120 = ProbVector::uniform(120).unwrap();
        let u60 = ProbVector::uniform_over(120, 60).unwrap();
        assert_abs_diff_eq!(
            kseq_gamma_star(&u120, &u60, 8, 1e-9).unwrap(),
            1.9921875,
            epsilon = 1e-8
        );
    }

    #[test]
    fn gamma_star_errors() {
        let p = pv(&[1.0, 0.0]);
        let q = pv(&[0.0, 1.0]);
        assert_eq!(kseq_gamma_star(&p, &q, 3, 1e-9), Err(Error::DegenerateSupport));
        assert!(kseq_gamma_star(&p, &p, 0, 1e-9).is_err());
        assert!(kseq_gamma_star(&p, &p, 2, 0.0).is_err());
    }

    #[test]
    fn params_uniform_example() {
        // direct term-by-term: two support tokens contribute min(1/4, (1/2)/1.5) = 1/4 each
        let u4 = ProbVector::uniform(4).unwrap();
        let u2 = ProbVector::uniform_over(4, 2).unwrap();
        let params = kseq_params(&u4, &u2, 2, 1.5).unwrap();
        assert_abs_diff_eq!(params.beta, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(params.p_acc, 0.75, epsilon = 1e-15);
        let res = params.residual.unwrap();
        assert_abs_diff_eq!(res.probs()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(res.probs()[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn params_identical_distributions() {
        let p = pv(&[0.3, 0.7]);
        let params = kseq_params(&p, &p, 3, 1.0).unwrap();
        assert_eq!(params.beta, 1.0);
        assert_eq!(params.p_acc, 1.0);
        assert!(params.residual.is_none());
    }

    #[test]
    fn gamma_below_threshold_is_rejected() {
        let p = pv(&[0.25, 0.75]);
        let q = pv(&[0.75, 0.25]);
        assert!(matches!(kseq_params(&p, &q, 4, 1.0), Err(Error::InvalidGamma { .. })));
        assert!(matches!(kseq_params(&p, &q, 4, 0.5), Err(Error::InvalidGamma { .. })));
    }

    #[test]
    fn marginal_equals_target() {
        let p = pv(&[0.25, 0.75]);
        let q = pv(&[0.75, 0.25]);
        let g = kseq_gamma_star(&p, &q, 4, 1e-9).unwrap();
        let m = kseq_output_marginal(&p, &q, 4, g).unwrap();
        for (a, b) in m.probs().iter().zip(q.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let b = pv(&[1.0, 0.0]);
        let h = pv(&[0.5, 0.5]);
        let g = kseq_gamma_star(&b, &h, 2, 1e-9).unwrap();
        let m = kseq_output_marginal(&b, &h, 2, g).unwrap();
        assert_abs_diff_eq!(m.probs()[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(m.probs()[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn identical_distributions_accept_first_draft() {
        let p = pv(&[0.2, 0.8]);
        let mut rng = RngStream::new(5);
        for _ in 0..100 {
            let s = kseq_select(&p, &p, &[TokenId(1), TokenId(0)], 1.0, &mut rng).unwrap();
            assert_eq!(s.accepted_index, Some(0));
            assert_eq!(s.token, TokenId(1));
        }
    }

    #[test]
    fn zero_probability_draft_is_rejected() {
        let p = pv(&[1.0, 0.0]);
        let q = pv(&[0.5, 0.5]);
        let mut rng = RngStream::new(1);
        assert_eq!(
            kseq_select(&p, &q, &[TokenId(1)], 1.0, &mut rng),
            Err(Error::InvalidDraft { token: 1 })
        );
    }

    #[test]
    fn acceptance_closed_form_uniform() {
        let u4 = ProbVector::uniform(4).unwrap();
        let u2 = ProbVector::uniform_over(4, 2).unwrap();
        for k in 1..=6 {
            let g = kseq_gamma_star(&u4, &u2, k, 1e-9).unwrap();
            assert_abs_diff_eq!(
                kseq_acceptance(&u4, &u2, k, g).unwrap(),
                1.0 - 0.5f64.powi(k as i32),
                epsilon = 1e-9
            );
        }
    }
}
