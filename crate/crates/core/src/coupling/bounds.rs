//! Information-theoretic upper bound on `α_k` and the closed forms for
//! Bernoulli and nested-uniform pairs.

use crate::prob::{ProbVector, TokenId};
use crate::{Error, Result};

use super::otm::{for_each_tuple, tuple_count, DEFAULT_TUPLE_CAP};

/// Subset enumeration visits `2^|Ω|` subsets.
pub const MAX_BOUND_VOCAB: usize = 16;

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::Domain("draft count k must be at least 1".into()))
    } else {
        Ok(())
    }
}

struct TupleMasses {
    /// (support bitmask, product mass) for every positive-mass tuple
    tuples: Vec<(u32, f64)>,
    /// q mass of every subset bitmask
    q_mass: Vec<f64>,
    /// `min(q(y), 1 - (1 - p(y))^k)` per token
    single: Vec<f64>,
}

impl TupleMasses {
    fn new(p: &ProbVector, q: &ProbVector, k: usize) -> Result<Self> {
        p.check_same_vocab(q)?;
        check_k(k)?;
        let n = p.vocab_size();
        if n > MAX_BOUND_VOCAB {
            return Err(Error::SizeLimit {
                what: "vocabulary size for subset enumeration",
                size: n,
                cap: MAX_BOUND_VOCAB,
            });
        }
        tuple_count(n, k, DEFAULT_TUPLE_CAP)?;
        let mut tuples = Vec::new();
        for_each_tuple(p, k, |tuple, mass| {
            if mass > 0.0 {
                let mask = tuple.iter().fold(0u32, |m, t| m | (1 << t.0));
                tuples.push((mask, mass));
            }
        });
        let mut q_mass = vec![0.0; 1 << n];
        for mask in 1..(1usize << n) {
            let low = mask.trailing_zeros() as usize;
            q_mass[mask] = q_mass[mask & (mask - 1)] + q.probs()[low];
        }
        let single = p
            .probs()
            .iter()
            .zip(q.probs())
            .map(|(pp, qq)| qq.min(1.0 - (1.0 - pp).powi(k as i32)))
            .collect();
        Ok(Self { tuples, q_mass, single })
    }

    fn evaluate(&self, subset: u32) -> f64 {
        let first: f64 = self
            .single
            .iter()
            .enumerate()
            .filter(|(y, _)| subset & (1 << y) != 0)
            .map(|(_, v)| v)
            .sum();
        let second: f64 = self
            .tuples
            .iter()
            .map(|(mask, mass)| mass.min(self.q_mass[(mask & !subset) as usize]))
            .sum();
        first + second
    }
}

fn mask_tokens(mask: u32) -> Vec<TokenId> {
    (0..32).filter(|i| mask & (1 << i) != 0).map(TokenId).collect()
}

/// Value of the bound's objective at a fixed `Ω₀`.
pub fn alpha_upper_bound_at(p: &ProbVector, q: &ProbVector, k: usize, subset: &[TokenId]) -> Result<f64> {
    let masses = TupleMasses::new(p, q, k)?;
    let mut mask = 0u32;
    for t in subset {
        p.check_token(*t)?;
        mask |= 1 << t.0;
    }
    Ok(masses.evaluate(mask))
}

/// `ᾱ_k(p, q)`: the minimum over `Ω₀ ⊆ Ω` of
/// `Σ_{y∈Ω₀} min(q(y), 1-(1-p(y))^k) + Σ_x min(Π p(x_i), q(S(x) \ Ω₀))`,
/// with the minimizing subset. Ties go to the smallest subset by
/// (size, lexicographic order).
pub fn alpha_upper_bound(p: &ProbVector, q: &ProbVector, k: usize) -> Result<(f64, Vec<TokenId>)> {
    let masses = TupleMasses::new(p, q, k)?;
    let n = p.vocab_size();
    let mut order: Vec<(u32, Vec<TokenId>)> =
        (0..(1u32 << n)).map(|m| (m.count_ones(), mask_tokens(m))).collect();
    order.sort();
    let mut best = f64::INFINITY;
    let mut witness = Vec::new();
    for (_, subset) in order {
        let mask = subset.iter().fold(0u32, |m, t| m | (1 << t.0));
        let value = masses.evaluate(mask);
        if value < best - 1e-12 {
            best = value;
            witness = subset;
        }
    }
    Ok((best.clamp(0.0, 1.0), witness))
}

/// `α_k(Ber(p), Ber(q)) = min(q, 1-(1-p)^k) + min(1-q, 1-p^k)`.
pub fn alpha_bernoulli_closed_form(p_head: f64, q_head: f64, k: usize) -> Result<f64> {
    check_k(k)?;
    for (name, v) in [("p_head", p_head), ("q_head", q_head)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} = {v} outside [0,1]")));
        }
    }
    let k = k as i32;
    Ok(q_head.min(1.0 - (1.0 - p_head).powi(k)) + (1.0 - q_head).min(1.0 - p_head.powi(k)))
}

fn check_uniform(d: usize, r: f64) -> Result<()> {
    if d == 0 || !(r >= 1.0) || !r.is_finite() {
        return Err(Error::Domain(format!("need d >= 1 and r >= 1, got d = {d}, r = {r}")));
    }
    let support = d as f64 / r;
    if (support - support.round()).abs() > 1e-9 || support.round() < 1.0 {
        return Err(Error::Domain(format!("d / r = {support} is not a positive integer")));
    }
    Ok(())
}

/// `α_k(U(d), U(d/r)) = 1 - (1 - 1/r)^k`.
pub fn alpha_uniform_closed_form(d: usize, r: f64, k: usize) -> Result<f64> {
    check_k(k)?;
    check_uniform(d, r)?;
    Ok(1.0 - (1.0 - 1.0 / r).powi(k as i32))
}

/// `γ* = r (1 - (1 - 1/r)^k)` for the nested-uniform pair.
pub fn gamma_star_uniform_closed_form(d: usize, r: f64, k: usize) -> Result<f64> {
    Ok(r * alpha_uniform_closed_form(d, r, k)?)
}
