//! Acceptance probability of one `(p, q, k)` instance under each coupling.

use std::fmt;
use std::str::FromStr;

use super::{join, Cell, Table};
use crate::coupling::{
    alpha_upper_bound, kseq_acceptance, kseq_gamma_star, AcceptanceMethod, AcceptanceReport, OtmCoupling,
    DEFAULT_GAMMA_DELTA, DEFAULT_TUPLE_CAP,
};
use crate::prob::{self, ProbVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMethod {
    Maximal,
    Kseq,
    Otm,
    Upper,
    All,
}

impl FromStr for CouplingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximal" => Ok(CouplingMethod::Maximal),
            "kseq" => Ok(CouplingMethod::Kseq),
            "otm" | "otm_lp" | "otm-lp" => Ok(CouplingMethod::Otm),
            "upper" | "upper_bound" | "upper-bound" => Ok(CouplingMethod::Upper),
            "all" => Ok(CouplingMethod::All),
            other => Err(Error::Parse(format!(
                "unknown coupling method {other:?} (expected maximal, kseq, otm, upper or all)"
            ))),
        }
    }
}

impl fmt::Display for CouplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingMethod::Maximal => "maximal",
            CouplingMethod::Kseq => "kseq",
            CouplingMethod::Otm => "otm",
            CouplingMethod::Upper => "upper",
            CouplingMethod::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingConfig {
    pub p: ProbVector,
    pub q: ProbVector,
    pub k: usize,
    pub method: CouplingMethod,
    /// Fixed K-SEQ division factor; `γ*` when absent.
    pub gamma: Option<f64>,
    pub tuple_cap: usize,
}

impl CouplingConfig {
    pub fn new(p: ProbVector, q: ProbVector, k: usize, method: CouplingMethod) -> Self {
        Self {
            p,
            q,
            k,
            method,
            gamma: None,
            tuple_cap: DEFAULT_TUPLE_CAP,
        }
    }
}

fn maximal_report(cfg: &CouplingConfig) -> Result<AcceptanceReport> {
    Ok(AcceptanceReport::new(
        AcceptanceMethod::Maximal,
        prob::overlap(&cfg.p, &cfg.q)?,
        1,
    ))
}

fn kseq_report(cfg: &CouplingConfig) -> Result<AcceptanceReport> {
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => kseq_gamma_star(&cfg.p, &cfg.q, cfg.k, DEFAULT_GAMMA_DELTA)?,
    };
    let mut report = AcceptanceReport::new(
        AcceptanceMethod::Kseq,
        kseq_acceptance(&cfg.p, &cfg.q, cfg.k, gamma)?,
        cfg.k,
    );
    report.gamma = Some(gamma);
    Ok(report)
}

/// The OTM coupling itself, for callers that also want the transport plan.
pub fn otm_coupling(cfg: &CouplingConfig) -> Result<OtmCoupling> {
    OtmCoupling::solve_with_cap(&cfg.p, &cfg.q, cfg.k, cfg.tuple_cap)
}

fn otm_report(cfg: &CouplingConfig) -> Result<AcceptanceReport> {
    Ok(AcceptanceReport::new(
        AcceptanceMethod::OtmLp,
        otm_coupling(cfg)?.alpha(),
        cfg.k,
    ))
}

fn upper_report(cfg: &CouplingConfig) -> Result<AcceptanceReport> {
    let (alpha, witness) = alpha_upper_bound(&cfg.p, &cfg.q, cfg.k)?;
    let mut report = AcceptanceReport::new(AcceptanceMethod::UpperBound, alpha, cfg.k);
    report.witness_subset = Some(witness);
    Ok(report)
}

/// Acceptance reports for the configured method; `all` gives the single-draft
/// value followed by K-SEQ, OTM and the upper bound.
pub fn coupling_reports(cfg: &CouplingConfig) -> Result<Vec<AcceptanceReport>> {
    cfg.p.check_same_vocab(&cfg.q)?;
    if cfg.k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    match cfg.method {
        CouplingMethod::Maximal => Ok(vec![maximal_report(cfg)?]),
        CouplingMethod::Kseq => Ok(vec![kseq_report(cfg)?]),
        CouplingMethod::Otm => Ok(vec![otm_report(cfg)?]),
        CouplingMethod::Upper => Ok(vec![upper_report(cfg)?]),
        CouplingMethod::All => Ok(vec![
            maximal_report(cfg)?,
            kseq_report(cfg)?,
            otm_report(cfg)?,
            upper_report(cfg)?,
        ]),
    }
}

pub fn coupling_table(cfg: &CouplingConfig, reports: &[AcceptanceReport]) -> Table {
    let mut table = Table::new("coupling", vec!["method", "k", "alpha", "gamma", "witness_subset"])
        .with_config("p", &cfg.p)
        .with_config("q", &cfg.q)
        .with_config("k", cfg.k)
        .with_config("method", cfg.method);
    if let Some(g) = cfg.gamma {
        table = table.with_config("gamma", g);
    }
    for r in reports {
        table.push(vec![
            Cell::from(r.method.as_str()),
            Cell::from(r.k),
            Cell::from(r.alpha),
            Cell::opt_real(r.gamma),
            r.witness_subset
                .as_ref()
                .map_or(Cell::Empty, |w| Cell::Text(format!("{{{}}}", join(w, " ")))),
        ]);
    }
    table
}
