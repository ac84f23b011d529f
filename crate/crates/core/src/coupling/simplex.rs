//! Dense primal simplex for `max c·x  s.t.  A x <= b, x >= 0` with `b >= 0`.
//!
//! The slack basis is feasible from the start, so no phase one is needed.
//! Pivoting follows Bland's rule (lowest-index entering column, lowest-index
//! leaving basic variable on ratio ties), which cannot cycle on the heavily
//! degenerate transport instances this crate produces.

use crate::{Error, Result};

pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Dense tableaus larger than this many cells are refused.
pub const MAX_TABLEAU_CELLS: usize = 1 << 25;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

/// A `max c·x, A x <= b` problem in dense row-major form.
#[derive(Debug, Clone)]
pub struct PackingLp {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl PackingLp {
    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.objective.len();
        let m = self.rows.len();
        if self.rhs.len() != m || self.rows.iter().any(|r| r.len() != n) {
            return Err(Error::Internal("inconsistent LP dimensions".into()));
        }
        if self.rhs.iter().any(|b| !(*b >= -PIVOT_TOLERANCE)) {
            return Err(Error::Internal("right-hand side must be nonnegative".into()));
        }
        let width = n + m + 1;
        let cells = width.saturating_mul(m + 1);
        if cells > MAX_TABLEAU_CELLS {
            return Err(Error::SizeLimit {
                what: "simplex tableau cells",
                size: cells,
                cap: MAX_TABLEAU_CELLS,
            });
        }

        let mut t = Tableau::new(self, width);
        let mut pivots = 0usize;
        let max_pivots = 50 * (n + m).max(1) * (n + m).max(1);
        while let Some(enter) = (0..n + m).find(|&j| t.reduced[j] > PIVOT_TOLERANCE) {
            let mut leave: Option<usize> = None;
            let mut best = f64::INFINITY;
            for i in 0..m {
                let a = t.at(i, enter);
                if a > PIVOT_TOLERANCE {
                    let ratio = t.at(i, width - 1) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best - PIVOT_TOLERANCE
                                || (ratio <= best + PIVOT_TOLERANCE && t.basis[i] < t.basis[l])
                        }
                    };
                    if better {
                        best = best.min(ratio);
                        leave = Some(i);
                    }
                }
            }
            let Some(row) = leave else {
                return Err(Error::Internal("objective is unbounded".into()));
            };
            t.pivot(row, enter);
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::Internal(format!("no convergence after {pivots} pivots")));
            }
        }

        let mut x = vec![0.0; n];
        for (i, &var) in t.basis.iter().enumerate() {
            if var < n {
                x[var] = t.at(i, width - 1).max(0.0);
            }
        }
        let objective = x.iter().zip(&self.objective).map(|(a, c)| a * c).sum();
        Ok(LpSolution { x, objective, pivots })
    }
}

struct Tableau {
    width: usize,
    cells: Vec<f64>,
    reduced: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(lp: &PackingLp, width: usize) -> Self {
        let n = lp.objective.len();
        let m = lp.rows.len();
        let mut cells = vec![0.0; m * width];
        for (i, row) in lp.rows.iter().enumerate() {
            let base = i * width;
            cells[base..base + n].copy_from_slice(row);
            cells[base + n + i] = 1.0;
            cells[base + width - 1] = lp.rhs[i].max(0.0);
        }
        let mut reduced = vec![0.0; width];
        reduced[..n].copy_from_slice(&lp.objective);
        Self {
            width,
            cells,
            reduced,
            basis: (n..n + m).collect(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.width + j]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let inv = 1.0 / self.cells[row * w + col];
        for v in &mut self.cells[row * w..(row + 1) * w] {
            *v *= inv;
        }
        let pivot_row: Vec<f64> = self.cells[row * w..(row + 1) * w].to_vec();
        let m = self.basis.len();
        for i in 0..m {
            if i == row {
                continue;
            }
            let factor = self.cells[i * w + col];
            if factor != 0.0 {
                let dst = &mut self.cells[i * w..(i + 1) * w];
                for (d, s) in dst.iter_mut().zip(&pivot_row) {
                    *d -= factor * s;
                }
                dst[col] = 0.0;
            }
        }
        let factor = self.reduced[col];
        if factor != 0.0 {
            for (d, s) in self.reduced.iter_mut().zip(&pivot_row) {
                *d -= factor * s;
            }
            self.reduced[col] = 0.0;
        }
        self.basis[row] = col;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), 36
        let lp = PackingLp {
            objective: vec![3.0, 5.0],
            rows: vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            rhs: vec![4.0, 12.0, 18.0],
        };
        let sol = lp.solve().unwrap();
        assert_abs_diff_eq!(sol.objective, 36.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_bipartite_matching() {
        // three sources of mass 1/3 into two sinks of mass 1/2; full complete graph
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for s in 0..3 {
            rows.push((0..6).map(|v| if v / 2 == s { 1.0 } else { 0.0 }).collect());
            rhs.push(1.0 / 3.0);
        }
        for t in 0..2 {
            rows.push((0..6).map(|v| if v % 2 == t { 1.0 } else { 0.0 }).collect());
            rhs.push(0.5);
        }
        let sol = PackingLp { objective: vec![1.0; 6], rows, rhs }.solve().unwrap();
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unbounded_is_reported() {
        let lp = PackingLp {
            objective: vec![1.0, 1.0],
            rows: vec![vec![1.0, 0.0]],
            rhs: vec![1.0],
        };
        assert!(matches!(lp.solve(), Err(Error::Internal(_))));
    }
}
