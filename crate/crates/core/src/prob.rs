//! Probability primitives: categorical distributions over a finite token
//! vocabulary, a counter-based random stream, inverse-CDF sampling, total
//! variation distance and the maximal-coupling residual.

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Allowed deviation of a distribution's total mass from 1.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Negative entries above this threshold are treated as rounding and clamped to 0.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

/// Index of a token in a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A categorical distribution over `0..vocab_size`.
///
/// Entries are nonnegative and sum to one within [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    /// Validates `probs` as a distribution. Entries in `[-1e-12, 0)` are clamped to zero.
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        for (i, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidDistribution(format!("entry {i} is not finite")));
            }
            if *p < 0.0 {
                if *p < -NEGATIVE_TOLERANCE {
                    return Err(Error::InvalidDistribution(format!("entry {i} is negative ({p})")));
                }
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(vocab_size: usize) -> Result<Self> {
        Self::uniform_over(vocab_size, vocab_size)
    }

    /// Uniform over the first `support` tokens of a `vocab_size` vocabulary.
    pub fn uniform_over(vocab_size: usize, support: usize) -> Result<Self> {
        if support == 0 || support > vocab_size {
            return Err(Error::Domain(format!(
                "uniform support {support} must lie in 1..={vocab_size}"
            )));
        }
        let mass = 1.0 / support as f64;
        Self::new((0..vocab_size).map(|i| if i < support { mass } else { 0.0 }).collect())
    }

    /// Bernoulli distribution; "heads" is token 1 and has probability `head`.
    pub fn bernoulli(head: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&head) {
            return Err(Error::Domain(format!("bernoulli parameter {head} outside [0,1]")));
        }
        Self::new(vec![1.0 - head, head])
    }

    pub fn point_mass(vocab_size: usize, token: TokenId) -> Result<Self> {
        if token.index() >= vocab_size {
            return Err(Error::Domain(format!("token {token} outside vocabulary of {vocab_size}")));
        }
        let mut probs = vec![0.0; vocab_size];
        probs[token.index()] = 1.0;
        Self::new(probs)
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token.index()).copied().unwrap_or(0.0)
    }

    /// Tokens with positive mass, ascending.
    pub fn support(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| TokenId::from(i))
    }

    pub fn check_token(&self, token: TokenId) -> Result<()> {
        if token.index() < self.vocab_size() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "token {token} outside vocabulary of {}",
                self.vocab_size()
            )))
        }
    }

    pub(crate) fn check_same_vocab(&self, other: &ProbVector) -> Result<()> {
        if self.vocab_size() == other.vocab_size() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left: self.vocab_size(),
                right: other.vocab_size(),
            })
        }
    }
}

impl FromStr for ProbVector {
    type Err = Error;

    /// Parses comma-separated decimals, e.g. `0.25,0.75`.
    fn from_str(s: &str) -> Result<Self> {
        let probs = s
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(probs)
    }
}

impl fmt::Display for ProbVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.probs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            probs: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        ProbVector::new(raw.probs).map_err(serde::de::Error::custom)
    }
}

/// Word offset of the ChaCha keystream that supplies child keys. Draws start
/// at word 0 and never get near it.
const CHILD_KEY_WORD: u128 = 1 << 66;

/// Counter-based random stream backed by ChaCha8.
///
/// Draw `n` is a pure function of `(key, n)`, and children are keyed off a
/// separate region of the parent's keystream, so streams fork without shared
/// mutable state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    core: ChaCha8Rng,
    draws: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            core: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        }
    }

    /// An independent stream keyed by `(self.key, id)`. Does not advance `self`.
    pub fn substream(&self, id: u64) -> RngStream {
        let mut src = ChaCha8Rng::from_seed(self.core.get_seed());
        src.set_stream(id);
        src.set_word_pos(CHILD_KEY_WORD);
        let mut key = [0u8; 32];
        src.fill_bytes(&mut key);
        RngStream {
            core: ChaCha8Rng::from_seed(key),
            draws: 0,
        }
    }

    /// Stream for a token context, e.g. one row of a seeded table.
    pub fn for_tokens(seed: u64, tokens: &[TokenId]) -> RngStream {
        tokens
            .iter()
            .fold(RngStream::new(seed).substream(tokens.len() as u64), |s, t| s.substream(u64::from(t.0)))
    }

    /// Number of draws consumed so far.
    pub fn position(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.core.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Inverse-CDF selection over ascending token index with left-closed
/// intervals: token `i` is chosen iff `cdf(i-1) <= eta < cdf(i)`.
pub fn sample_with_uniform(dist: &ProbVector, eta: f64) -> TokenId {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if eta < acc {
                return TokenId::from(i);
            }
        }
    }
    // eta above the rounded total mass
    TokenId::from(last_positive)
}

/// Draws one token from `dist`, consuming exactly one uniform from `rng`.
pub fn sample(dist: &ProbVector, rng: &mut RngStream) -> TokenId {
    sample_with_uniform(dist, rng.next_f64())
}

/// `Σ_x min(p(x), q(x))`, the acceptance probability of the maximal coupling.
pub fn overlap(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    p.check_same_vocab(q)?;
    Ok(p.probs().iter().zip(q.probs()).map(|(a, b)| a.min(*b)).sum())
}

/// Half the L1 distance between `p` and `q`.
pub fn tv_distance(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    p.check_same_vocab(q)?;
    let half_l1 = 0.5 * p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(half_l1.clamp(0.0, 1.0))
}

/// Residual of the maximal coupling: `(q - min(p, q)) / (1 - Σ min(p, q))`.
pub fn residual_maximal(p: &ProbVector, q: &ProbVector) -> Result<ProbVector> {
    let accept = overlap(p, q)?;
    if 1.0 - accept <= NEGATIVE_TOLERANCE {
        return Err(Error::DegenerateResidual);
    }
    let excess = p.probs().iter().zip(q.probs()).map(|(a, b)| (b - a.min(*b)).max(0.0)).collect();
    ProbVector::from_weights(excess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn validation_rejects_bad_vectors() {
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.4]).is_err());
        assert!(ProbVector::new(vec![1.1, -0.1]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
        let clamped = ProbVector::new(vec![1.0, -1e-13]).unwrap();
        assert_eq!(clamped.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn parse_and_display() {
        let p: ProbVector = "0.25, 0.75".parse().unwrap();
        assert_eq!(p.probs(), &[0.25, 0.75]);
        assert_eq!(p.to_string(), "0.25,0.75");
        assert!("0.25,abc".parse::<ProbVector>().is_err());
        assert!("0.2,0.2".parse::<ProbVector>().is_err());
    }

    #[test]
    fn point_mass_always_sampled() {
        let p = pv(&[1.0, 0.0]);
        let mut rng = RngStream::new(3);
        for _ in 0..100 {
            assert_eq!(sample(&p, &mut rng), TokenId(0));
        }
    }

    #[test]
    fn inverse_cdf_boundaries_are_left_closed() {
        let p = pv(&[0.5, 0.5]);
        assert_eq!(sample_with_uniform(&p, 0.25), TokenId(0));
        assert_eq!(sample_with_uniform(&p, 0.75), TokenId(1));
        assert_eq!(sample_with_uniform(&p, 0.5), TokenId(1));
        assert_eq!(sample_with_uniform(&p, 0.0), TokenId(0));
        // zero-mass tokens are never selected, even at the boundary
        let z = pv(&[0.0, 1.0, 0.0]);
        assert_eq!(sample_with_uniform(&z, 0.0), TokenId(1));
        assert_eq!(sample_with_uniform(&z, 0.999_999_999), TokenId(1));
    }

    #[test]
    fn sample_consumes_one_draw() {
        let p = pv(&[0.2, 0.3, 0.5]);
        let mut rng = RngStream::new(11);
        sample(&p, &mut rng);
        sample(&p, &mut rng);
        assert_eq!(rng.position(), 2);
    }

    #[test]
    fn empirical_frequencies_match() {
        let p = pv(&[0.2, 0.3, 0.5]);
        let mut rng = RngStream::new(2024);
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample(&p, &mut rng).index()] += 1;
        }
        for (c, want) in counts.iter().zip(p.probs()) {
            assert_abs_diff_eq!(*c as f64 / n as f64, *want, epsilon = 0.005);
        }
    }

    #[test]
    fn streams_are_reproducible_and_substreams_differ() {
        let mut a = RngStream::new(99);
        let mut b = RngStream::new(99);
        let xs: Vec<u64> = (0..32).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..32).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let mut s0 = a.substream(0);
        let mut s1 = a.substream(1);
        assert_ne!(s0.next_u64(), s1.next_u64());
        assert_eq!(a.substream(5), b.substream(5));
    }

    #[test]
    fn tv_examples() {
        let p = pv(&[0.3, 0.7]);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(tv_distance(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap(), 0.5);
        assert_abs_diff_eq!(tv_distance(&pv(&[0.25, 0.75]), &pv(&[0.75, 0.25])).unwrap(), 0.5);
        assert!(matches!(
            tv_distance(&pv(&[1.0]), &pv(&[0.5, 0.5])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn residual_examples() {
        let r = residual_maximal(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(r.probs()[0], 0.0);
        assert_abs_diff_eq!(r.probs()[1], 1.0);
        let r = residual_maximal(&pv(&[0.25, 0.75]), &pv(&[0.1, 0.9])).unwrap();
        assert_abs_diff_eq!(r.probs()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.probs()[1], 1.0, epsilon = 1e-12);
        assert_eq!(
            residual_maximal(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5])),
            Err(Error::DegenerateResidual)
        );
    }
}
