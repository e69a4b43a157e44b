//! Dense two-phase primal simplex (Dantzig pricing with a Bland fallback).
//!
//! Solves `min c'x` subject to row constraints `a_i' x (<=|>=|=) b_i` and
//! `x >= 0`. Intended for the small dense programs that define projection
//! directions, where an exact vertex solution is preferable to an
//! interior-point approximation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpStandardProblem {
    pub c: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub senses: Vec<ConstraintSense>,
}

impl LpStandardProblem {
    pub fn new(c: Vec<f64>, a: DMatrix<f64>, b: Vec<f64>, senses: Vec<ConstraintSense>) -> Result<Self> {
        let p = Self { c, a, b, senses };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.a.shape();
        if self.c.len() != n || self.b.len() != m || self.senses.len() != m {
            return Err(Error::Dimension(format!(
                "LP with A {m}x{n}, c {}, b {}, senses {}",
                self.c.len(),
                self.b.len(),
                self.senses.len()
            )));
        }
        let finite = self.c.iter().chain(self.b.iter()).chain(self.a.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("LP data must be finite".into()));
        }
        Ok(())
    }

    /// Largest constraint or bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ax = &self.a * DVector::from_column_slice(x);
        let rows = ax.iter().zip(&self.b).zip(&self.senses).map(|((&lhs, &rhs), s)| match s {
            ConstraintSense::Le => (lhs - rhs).max(0.0),
            ConstraintSense::Ge => (rhs - lhs).max(0.0),
            ConstraintSense::Eq => (lhs - rhs).abs(),
        });
        let bounds = x.iter().map(|&v| (-v).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal point; empty unless `status` is `Optimal`.
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots tolerated before falling back to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;

struct Tableau {
    rows: usize,
    cols: usize,
    /// `(rows + 1) x (cols + 1)` row-major; last row is the reduced-cost row,
    /// last column the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn width(&self) -> usize {
        self.cols + 1
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width() + c]
    }

    fn pivot(&mut self, r: usize, s: usize) {
        let w = self.width();
        let pv = self.at(r, s);
        {
            let row = &mut self.t[r * w..(r + 1) * w];
            for v in row.iter_mut() {
                *v /= pv;
            }
            row[s] = 1.0;
        }
        let pivot_row: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + s];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            for (v, pr) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            row[s] = 0.0;
        }
        self.basis[r] = s;
        self.pivots += 1;
    }

    /// Dantzig pricing (most negative reduced cost), switching to Bland's
    /// rule after a run of degenerate pivots so cycling cannot occur. Ties in
    /// the ratio test go to the lowest basic-variable index.
    fn run(&mut self, allowed: &[bool], max_pivots: usize) -> Result<bool> {
        let obj = self.rows;
        let mut degenerate_run = 0;
        let mut bland = false;
        loop {
            let entering = if bland {
                (0..self.cols).find(|&j| allowed[j] && self.at(obj, j) < -COST_TOL)
            } else {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..self.cols {
                    let d = self.at(obj, j);
                    if allowed[j] && d < -COST_TOL && best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((j, d));
                    }
                }
                best.map(|(j, _)| j)
            };
            let Some(s) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, s);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, self.cols) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bv)) => {
                            if ratio < bv - 1e-14 * bv.abs().max(1.0)
                                || (ratio <= bv + 1e-14 * bv.abs().max(1.0) && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bv))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = best else {
                return Ok(false);
            };
            if ratio.abs() <= 1e-14 {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_LIMIT {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            if self.pivots >= max_pivots {
                return Err(Error::Lp(format!("exceeded {max_pivots} pivots")));
            }
            self.pivot(r, s);
        }
    }

    fn set_costs(&mut self, costs: &[f64]) {
        let w = self.width();
        let obj = self.rows;
        for j in 0..w {
            self.t[obj * w + j] = if j < self.cols { costs[j] } else { 0.0 };
        }
        for r in 0..self.rows {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                for j in 0..w {
                    let v = self.t[r * w + j];
                    self.t[obj * w + j] -= cb * v;
                }
            }
        }
    }
}

/// Solves the problem; numerical breakdown is an error, never a silent answer.
pub fn solve_lp(problem: &LpStandardProblem) -> Result<LpSolution> {
    problem.validate()?;
    let (m, n) = problem.a.shape();

    // flip rows so every right-hand side is non-negative
    let mut a = problem.a.clone();
    let mut b = problem.b.clone();
    let mut senses = problem.senses.clone();
    for i in 0..m {
        if b[i] < 0.0 {
            b[i] = -b[i];
            a.row_mut(i).neg_mut();
            senses[i] = match senses[i] {
                ConstraintSense::Le => ConstraintSense::Ge,
                ConstraintSense::Ge => ConstraintSense::Le,
                ConstraintSense::Eq => ConstraintSense::Eq,
            };
        }
    }

    let n_slack = senses.iter().filter(|s| **s != ConstraintSense::Eq).count();
    let n_art = senses.iter().filter(|s| **s != ConstraintSense::Le).count();
    let cols = n + n_slack + n_art;
    let w = cols + 1;
    let mut t = vec![0.0; (m + 1) * w];
    let mut basis = vec![0; m];
    let mut is_art = vec![false; cols];
    let (mut next_slack, mut next_art) = (n, n + n_slack);
    for i in 0..m {
        for j in 0..n {
            t[i * w + j] = a[(i, j)];
        }
        t[i * w + cols] = b[i];
        match senses[i] {
            ConstraintSense::Le => {
                t[i * w + next_slack] = 1.0;
                basis[i] = next_slack;
                next_slack += 1;
            }
            ConstraintSense::Ge => {
                t[i * w + next_slack] = -1.0;
                next_slack += 1;
                t[i * w + next_art] = 1.0;
                basis[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
            ConstraintSense::Eq => {
                t[i * w + next_art] = 1.0;
                basis[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
        }
    }
    let mut tab = Tableau {
        rows: m,
        cols,
        t,
        basis,
        pivots: 0,
    };
    let max_pivots = 50 * (m + cols).max(10);
    let b_scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    if n_art > 0 {
        let phase1: Vec<f64> = is_art.iter().map(|&art| if art { 1.0 } else { 0.0 }).collect();
        tab.set_costs(&phase1);
        let all = vec![true; cols];
        tab.run(&all, max_pivots)?;
        let infeasibility = -tab.at(m, cols);
        if infeasibility > FEAS_TOL * b_scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                objective: f64::NAN,
                pivots: tab.pivots,
            });
        }
        // drive remaining artificials out of the basis where possible
        for r in 0..m {
            if is_art[tab.basis[r]] {
                if let Some(j) = (0..cols).find(|&j| !is_art[j] && tab.at(r, j).abs() > 1e-9) {
                    tab.pivot(r, j);
                }
            }
        }
    }

    let mut costs = vec![0.0; cols];
    costs[..n].copy_from_slice(&problem.c);
    tab.set_costs(&costs);
    let allowed: Vec<bool> = is_art.iter().map(|a| !a).collect();
    if !tab.run(&allowed, max_pivots)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
            pivots: tab.pivots,
        });
    }

    let mut x = vec![0.0; n];
    let mut full = vec![0.0; cols];
    for r in 0..m {
        full[tab.basis[r]] = tab.at(r, cols);
    }
    x.copy_from_slice(&full[..n]);

    // recompute basic values from the original data to shed pivoting error
    if let Some(refined) = refine_basic_solution(&a, &b, &senses, &tab.basis, &is_art, n) {
        x = refined;
    }
    for v in x.iter_mut() {
        if *v < 0.0 && *v > -FEAS_TOL {
            *v = 0.0;
        }
    }

    let violation = problem.max_violation(&x);
    let scale = 1.0
        + problem.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
        + x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(violation <= FEAS_TOL * scale) {
        return Err(Error::Lp(format!(
            "numerical breakdown: solution violates constraints by {violation:e} after {} pivots",
            tab.pivots
        )));
    }
    let objective = problem.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        pivots: tab.pivots,
    })
}

fn refine_basic_solution(
    a: &DMatrix<f64>,
    b: &[f64],
    senses: &[ConstraintSense],
    basis: &[usize],
    is_art: &[bool],
    n: usize,
) -> Option<Vec<f64>> {
    let m = a.nrows();
    if basis.iter().any(|&j| is_art[j]) {
        return None;
    }
    // slack column index -> row, following the construction order
    let mut slack_row = Vec::new();
    let mut slack_sign = Vec::new();
    for (i, s) in senses.iter().enumerate() {
        match s {
            ConstraintSense::Le => {
                slack_row.push(i);
                slack_sign.push(1.0);
            }
            ConstraintSense::Ge => {
                slack_row.push(i);
                slack_sign.push(-1.0);
            }
            ConstraintSense::Eq => {}
        }
    }
    let mut bmat = DMatrix::zeros(m, m);
    for (k, &j) in basis.iter().enumerate() {
        if j < n {
            bmat.set_column(k, &a.column(j));
        } else {
            let s = j - n;
            bmat[(slack_row[s], k)] = slack_sign[s];
        }
    }
    let sol = bmat.lu().solve(&DVector::from_column_slice(b))?;
    if sol.iter().any(|v| !v.is_finite() || *v < -FEAS_TOL) {
        return None;
    }
    let mut x = vec![0.0; n];
    for (k, &j) in basis.iter().enumerate() {
        if j < n {
            x[j] = sol[k];
        }
    }
    Some(x)
}
