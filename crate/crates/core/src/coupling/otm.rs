//! Optimal transport with membership cost between `p^{⊗k}` and `q`.
//!
//! The cost `1{y ∉ S(x)}` of a draft tuple `x` depends on `x` only through
//! its set of distinct tokens `S(x)`. Tuples are therefore pooled into
//! support classes before the LP is built: the LP maximizes accepted mass
//! `f(T, y)` for `y ∈ T` subject to class masses and target masses, and any
//! optimal `f` lifts back to an optimal full plan by splitting each class
//! proportionally to tuple mass and pairing unaccepted row and column mass
//! independently. The lifted plan has exactly the LP's acceptance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::prob::{self, ProbVector, RngStream, TokenId};
use crate::{Error, Result};

use super::simplex::PackingLp;
use super::Selection;

/// Default cap on `|Ω|^k`, the number of draft tuples.
pub const DEFAULT_TUPLE_CAP: usize = 4096;

/// Mass below which leftover (unaccepted) mass is treated as exhausted.
const LEFTOVER_EPS: f64 = 1e-12;

pub(crate) fn tuple_count(vocab_size: usize, k: usize, cap: usize) -> Result<usize> {
    match u32::try_from(k).ok().and_then(|k| vocab_size.checked_pow(k)) {
        Some(n) if n <= cap => Ok(n),
        other => Err(Error::SizeLimit {
            what: "draft tuples |vocab|^k",
            size: other.unwrap_or(usize::MAX),
            cap,
        }),
    }
}

/// Visits every tuple in `support^k` in lexicographic order with its product mass.
pub(crate) fn for_each_tuple(p: &ProbVector, k: usize, mut visit: impl FnMut(&[TokenId], f64)) {
    let support: Vec<TokenId> = p.support().collect();
    if support.is_empty() || k == 0 {
        return;
    }
    let mut digits = vec![0usize; k];
    let mut tuple: Vec<TokenId> = vec![support[0]; k];
    loop {
        let mass: f64 = tuple.iter().map(|t| p.prob(*t)).product();
        visit(&tuple, mass);
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < support.len() {
                tuple[pos] = support[digits[pos]];
                break;
            }
            digits[pos] = 0;
            tuple[pos] = support[0];
        }
    }
}

/// Sorted distinct tokens of a tuple.
pub(crate) fn distinct(tuple: &[TokenId]) -> Vec<TokenId> {
    let mut s = tuple.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

/// One row of a transport plan: a draft tuple and its mass on each output token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanRow {
    pub tuple: Vec<TokenId>,
    pub masses: Vec<f64>,
}

/// Joint distribution over (draft tuple, output token). Rows are listed in
/// lexicographic tuple order; tuples with zero product mass are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub k: usize,
    pub vocab_size: usize,
    pub rows: Vec<PlanRow>,
}

impl TransportPlan {
    /// Probability that the output token is one of the drafts.
    pub fn acceptance(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| distinct(&row.tuple).iter().map(|t| row.masses[t.index()]).sum::<f64>())
            .sum()
    }

    /// Membership cost `P(Y ∉ S(X))`.
    pub fn cost(&self) -> f64 {
        let total: f64 = self.rows.iter().flat_map(|r| r.masses.iter()).sum();
        total - self.acceptance()
    }

    pub fn column_marginals(&self) -> Vec<f64> {
        let mut cols = vec![0.0; self.vocab_size];
        for row in &self.rows {
            for (c, m) in cols.iter_mut().zip(&row.masses) {
                *c += m;
            }
        }
        cols
    }

    /// Largest deviation from the coupling constraints against `p^{⊗k}` and `q`,
    /// including any negative mass.
    pub fn marginal_violation(&self, p: &ProbVector, q: &ProbVector) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.rows {
            let want: f64 = row.tuple.iter().map(|t| p.prob(*t)).product();
            worst = worst.max((row.masses.iter().sum::<f64>() - want).abs());
            for m in &row.masses {
                worst = worst.max(-m);
            }
        }
        let listed: f64 = self
            .rows
            .iter()
            .map(|r| r.tuple.iter().map(|t| p.prob(*t)).product::<f64>())
            .sum();
        worst = worst.max((listed - 1.0).abs());
        for (c, want) in self.column_marginals().iter().zip(q.probs()) {
            worst = worst.max((c - want).abs());
        }
        worst
    }

    /// `(draft_tuple, output_token, mass)` rows with positive mass; the tuple
    /// is hyphen-joined token indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("draft_tuple,output_token,mass\n");
        for row in &self.rows {
            let key = row.tuple.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("-");
            for (y, m) in row.masses.iter().enumerate() {
                if *m > 0.0 {
                    let _ = writeln!(out, "{key},{y},{m}");
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct ClassFlow {
    mass: f64,
    /// Accepted mass sent to each member token, in class order.
    flows: Vec<f64>,
}

/// Optimal membership-cost coupling, stored in pooled form.
#[derive(Debug, Clone)]
pub struct OtmCoupling {
    p: ProbVector,
    q: ProbVector,
    k: usize,
    classes: BTreeMap<Vec<TokenId>, ClassFlow>,
    /// Target mass left unaccepted, per token.
    leftover: Vec<f64>,
    leftover_total: f64,
    alpha: f64,
}

impl OtmCoupling {
    pub fn solve(p: &ProbVector, q: &ProbVector, k: usize) -> Result<Self> {
        Self::solve_with_cap(p, q, k, DEFAULT_TUPLE_CAP)
    }

    pub fn solve_with_cap(p: &ProbVector, q: &ProbVector, k: usize, cap: usize) -> Result<Self> {
        p.check_same_vocab(q)?;
        if k == 0 {
            return Err(Error::Domain("draft count k must be at least 1".into()));
        }
        tuple_count(p.vocab_size(), k, cap)?;

        let mut class_mass: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
        for_each_tuple(p, k, |tuple, mass| {
            if mass > 0.0 {
                *class_mass.entry(distinct(tuple)).or_insert(0.0) += mass;
            }
        });

        // variables: (class, member y with q(y) > 0)
        let targets: Vec<TokenId> = q.support().collect();
        let target_row: BTreeMap<TokenId, usize> =
            targets.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let mut vars: Vec<(usize, TokenId)> = Vec::new();
        for (ci, members) in class_mass.keys().enumerate() {
            for y in members {
                if target_row.contains_key(y) {
                    vars.push((ci, *y));
                }
            }
        }
        let n_classes = class_mass.len();
        let mut rows = vec![vec![0.0; vars.len()]; n_classes + targets.len()];
        for (j, (ci, y)) in vars.iter().enumerate() {
            rows[*ci][j] = 1.0;
            rows[n_classes + target_row[y]][j] = 1.0;
        }
        let rhs: Vec<f64> = class_mass
            .values()
            .copied()
            .chain(targets.iter().map(|t| q.prob(*t)))
            .collect();
        let solution = PackingLp {
            objective: vec![1.0; vars.len()],
            rows,
            rhs,
        }
        .solve()?;

        let mut classes: BTreeMap<Vec<TokenId>, ClassFlow> = class_mass
            .into_iter()
            .map(|(members, mass)| {
                let flows = vec![0.0; members.len()];
                (members, ClassFlow { mass, flows })
            })
            .collect();
        let mut used = vec![0.0; q.vocab_size()];
        {
            let mut class_iter: Vec<(&Vec<TokenId>, &mut ClassFlow)> = classes.iter_mut().collect();
            for ((ci, y), x) in vars.iter().zip(&solution.x) {
                let (members, flow) = &mut class_iter[*ci];
                let pos = members.binary_search(y).expect("member token");
                flow.flows[pos] = x.max(0.0);
                used[y.index()] += x.max(0.0);
            }
            // absorb rounding so no class sends more than it holds
            for (_, flow) in class_iter.iter_mut() {
                let sent: f64 = flow.flows.iter().sum();
                if sent > flow.mass {
                    let s = flow.mass / sent;
                    flow.flows.iter_mut().for_each(|f| *f *= s);
                }
            }
        }
        let leftover: Vec<f64> = q
            .probs()
            .iter()
            .zip(&used)
            .map(|(qq, u)| (qq - u).max(0.0))
            .collect();
        let leftover_total = leftover.iter().sum();
        let alpha = classes.values().flat_map(|c| c.flows.iter()).sum::<f64>().clamp(0.0, 1.0);
        Ok(Self {
            p: p.clone(),
            q: q.clone(),
            k,
            classes,
            leftover,
            leftover_total,
            alpha,
        })
    }

    /// Optimal acceptance probability `α_k(p, q)`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Law of the output token given the draft tuple: `π(x, ·) / P(x)`.
    pub fn conditional(&self, drafts: &[TokenId]) -> Result<ProbVector> {
        if drafts.len() != self.k {
            return Err(Error::Structure(format!(
                "expected {} drafts, got {}",
                self.k,
                drafts.len()
            )));
        }
        for &d in drafts {
            self.p.check_token(d)?;
        }
        let members = distinct(drafts);
        let Some(class) = self.classes.get(&members) else {
            let bad = drafts.iter().find(|d| self.p.prob(**d) <= 0.0).copied().unwrap_or(drafts[0]);
            return Err(Error::InvalidDraft { token: bad.0 });
        };
        let mut law = vec![0.0; self.q.vocab_size()];
        let mut accepted = 0.0;
        for (y, f) in members.iter().zip(&class.flows) {
            law[y.index()] += f / class.mass;
            accepted += f / class.mass;
        }
        let unaccepted = (1.0 - accepted).max(0.0);
        if self.leftover_total > LEFTOVER_EPS && unaccepted > 0.0 {
            for (l, c) in law.iter_mut().zip(&self.leftover) {
                *l += unaccepted * c / self.leftover_total;
            }
        }
        ProbVector::from_weights(law)
    }

    pub fn select(&self, drafts: &[TokenId], rng: &mut RngStream) -> Result<Selection> {
        let law = self.conditional(drafts)?;
        let token = prob::sample(&law, rng);
        Ok(Selection {
            token,
            accepted_index: drafts.iter().position(|d| *d == token),
        })
    }

    /// Materializes the full plan over every positive-mass tuple.
    pub fn plan(&self) -> TransportPlan {
        let mut rows = Vec::new();
        for_each_tuple(&self.p, self.k, |tuple, mass| {
            if mass <= 0.0 {
                return;
            }
            let members = distinct(tuple);
            let class = &self.classes[&members];
            let mut masses = vec![0.0; self.q.vocab_size()];
            let mut accepted = 0.0;
            for (y, f) in members.iter().zip(&class.flows) {
                let share = f * mass / class.mass;
                masses[y.index()] += share;
                accepted += share;
            }
            let rest = (mass - accepted).max(0.0);
            if self.leftover_total > LEFTOVER_EPS {
                for (m, c) in masses.iter_mut().zip(&self.leftover) {
                    *m += rest * c / self.leftover_total;
                }
            }
            rows.push(PlanRow { tuple: tuple.to_vec(), masses });
        });
        TransportPlan {
            k: self.k,
            vocab_size: self.q.vocab_size(),
            rows,
        }
    }
}

/// Solves the membership-cost transport LP; returns the optimal plan and its
/// acceptance probability `α = 1 - C(π*)`.
pub fn otm_lp_solve(p: &ProbVector, q: &ProbVector, k: usize) -> Result<(TransportPlan, f64)> {
    let coupling = OtmCoupling::solve(p, q, k)?;
    Ok((coupling.plan(), coupling.alpha()))
}
