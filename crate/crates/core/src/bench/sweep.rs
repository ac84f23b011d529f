//! Acceptance probability against `k` for Bernoulli and nested-uniform families.

use rayon::prelude::*;

use super::{join, Cell, Table};
use crate::coupling::{
    alpha_bernoulli_closed_form, alpha_uniform_closed_form, kseq_acceptance, kseq_gamma_star, OtmCoupling,
    DEFAULT_GAMMA_DELTA, DEFAULT_TUPLE_CAP,
};
use crate::prob::ProbVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SweepFamily {
    /// `p = Ber(p_head)`, `q = Ber(b)` for each `b`; heads is token 1.
    Bernoulli { p_head: f64, b: Vec<f64> },
    /// `p = U(d)`, `q` uniform on the first `d / r` tokens, for each `r`.
    Uniform { d: usize, r: Vec<f64> },
}

impl SweepFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SweepFamily::Bernoulli { .. } => "bernoulli",
            SweepFamily::Uniform { .. } => "uniform",
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            SweepFamily::Bernoulli { b, .. } => b,
            SweepFamily::Uniform { r, .. } => r,
        }
    }

    fn pair(&self, param: f64) -> Result<(ProbVector, ProbVector)> {
        match *self {
            SweepFamily::Bernoulli { p_head, .. } => Ok((ProbVector::bernoulli(p_head)?, ProbVector::bernoulli(param)?)),
            SweepFamily::Uniform { d, .. } => {
                // validates that d / r is a positive integer
                alpha_uniform_closed_form(d, param, 1)?;
                let support = (d as f64 / param).round() as usize;
                Ok((ProbVector::uniform(d)?, ProbVector::uniform_over(d, support)?))
            }
        }
    }

    fn closed_form(&self, param: f64, k: usize) -> Result<f64> {
        match *self {
            SweepFamily::Bernoulli { p_head, .. } => alpha_bernoulli_closed_form(p_head, param, k),
            SweepFamily::Uniform { d, .. } => alpha_uniform_closed_form(d, param, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub family: SweepFamily,
    pub k_max: usize,
    /// Adds `otm_lp` rows solved by linear programming.
    pub with_lp: bool,
    pub tuple_cap: usize,
}

impl SweepConfig {
    pub fn new(family: SweepFamily, k_max: usize) -> Self {
        Self {
            family,
            k_max,
            with_lp: false,
            tuple_cap: DEFAULT_TUPLE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub family: &'static str,
    pub param: f64,
    pub k: usize,
    pub method: &'static str,
    /// `None` when the instance exceeded a size cap.
    pub alpha: Option<f64>,
}

fn cell_rows(cfg: &SweepConfig, param: f64, k: usize) -> Result<Vec<SweepRow>> {
    let family = cfg.family.name();
    let row = |method, alpha| SweepRow {
        family,
        param,
        k,
        method,
        alpha,
    };
    let (p, q) = cfg.family.pair(param)?;
    let gamma = kseq_gamma_star(&p, &q, k, DEFAULT_GAMMA_DELTA)?;
    let mut rows = vec![
        row("closed_form", Some(cfg.family.closed_form(param, k)?)),
        row("kseq", Some(kseq_acceptance(&p, &q, k, gamma)?)),
    ];
    if cfg.with_lp {
        let alpha = match OtmCoupling::solve_with_cap(&p, &q, k, cfg.tuple_cap) {
            Ok(c) => Some(c.alpha()),
            Err(Error::SizeLimit { .. }) => None,
            Err(e) => return Err(e),
        };
        rows.push(row("otm_lp", alpha));
    }
    Ok(rows)
}

/// Rows ordered by parameter, then `k`, then method, whatever order the cells finish in.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.k_max == 0 {
        return Err(Error::Domain("k_max must be at least 1".into()));
    }
    let cells: Vec<(f64, usize)> = cfg
        .family
        .params()
        .iter()
        .flat_map(|&param| (1..=cfg.k_max).map(move |k| (param, k)))
        .collect();
    let results: Vec<Result<Vec<SweepRow>>> = cells.par_iter().map(|&(param, k)| cell_rows(cfg, param, k)).collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn sweep_table(cfg: &SweepConfig, rows: &[SweepRow]) -> Table {
    let mut table = Table::new("sweep", vec!["family", "param", "k", "method", "alpha"]).with_config("family", cfg.family.name());
    table = match &cfg.family {
        SweepFamily::Bernoulli { p_head, b } => table.with_config("p", p_head).with_config("b", join(b, ",")),
        SweepFamily::Uniform { d, r } => table.with_config("d", d).with_config("r", join(r, ",")),
    };
    table = table
        .with_config("k-max", cfg.k_max)
        .with_config("with-lp", cfg.with_lp)
        .with_config("tuple-cap", cfg.tuple_cap);
    for r in rows {
        table.push(vec![
            Cell::from(r.family),
            Cell::from(r.param),
            Cell::from(r.k),
            Cell::from(r.method),
            r.alpha.map_or(Cell::text("skipped"), Cell::Real),
        ]);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_bernoulli_is_all_ones() {
        let mut cfg = SweepConfig::new(SweepFamily::Bernoulli { p_head: 0.25, b: vec![0.25] }, 6);
        cfg.with_lp = true;
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 18);
        for r in rows {
            assert_abs_diff_eq!(r.alpha.unwrap(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn uniform_halving() {
        let cfg = SweepConfig::new(SweepFamily::Uniform { d: 120, r: vec![2.0] }, 10);
        for r in run_sweep(&cfg).unwrap() {
            assert_abs_diff_eq!(r.alpha.unwrap(), 1.0 - 0.5f64.powi(r.k as i32), epsilon = 1e-9);
        }
    }

    #[test]
    fn oversized_lp_rows_are_skipped() {
        let mut cfg = SweepConfig::new(SweepFamily::Uniform { d: 120, r: vec![2.0] }, 2);
        cfg.with_lp = true;
        let rows = run_sweep(&cfg).unwrap();
        let lp: Vec<_> = rows.iter().filter(|r| r.method == "otm_lp").collect();
        assert!(lp[0].alpha.is_some());
        assert!(lp[1].alpha.is_none());
        let csv = sweep_table(&cfg, &rows).to_csv();
        assert!(csv.contains("uniform,2,2,otm_lp,skipped"));
    }

    #[test]
    fn invalid_ratio_is_an_error() {
        let cfg = SweepConfig::new(SweepFamily::Uniform { d: 10, r: vec![3.0] }, 2);
        assert!(run_sweep(&cfg).is_err());
    }
}
