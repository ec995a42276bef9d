//! Dense two-phase primal simplex with bounded variables.
//!
//! Every row `a·x (≤,=,≥) b` gets a slack `s` with `a·x + s = b` and sign
//! bounds matching the sense. Nonbasic columns sit at a finite bound, or at 0
//! when free. Rows whose initial slack would be out of bounds receive an
//! artificial column; phase one minimizes their sum, after which artificials
//! are pinned to zero.

use std::time::Instant;

use crate::milp::{Cmp, MilpModel, ObjSense};

use super::{LpSolution, LpStatus};

const NONE: usize = usize::MAX;
const PIVOT_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const REFRESH_EVERY: usize = 100;
const DEGENERATE_BEFORE_BLAND: usize = 50;

#[derive(Debug)]
pub(crate) enum LpFailure {
    Numerical(String),
    Deadline,
}

struct Tableau {
    m: usize,
    n: usize,
    ncols: usize,
    t: Vec<f64>,
    d: Vec<f64>,
    cost: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    /// Row-scaled structural coefficients, kept for value refreshes.
    a: Vec<f64>,
    b: Vec<f64>,
    init_col: Vec<usize>,
    init_coef: Vec<f64>,
    /// (row, sign) of each artificial column.
    arts: Vec<(usize, f64)>,
}

enum Step {
    Optimal,
    Unbounded,
    Continue { degenerate: bool },
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.ncols + c]
    }

    fn refresh_values(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut rhs = self.b.clone();
        for j in 0..n {
            if self.row_of[j] == NONE && self.x[j] != 0.0 {
                let xj = self.x[j];
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= self.a[i * n + j] * xj;
                }
            }
        }
        for (i, r) in rhs.iter_mut().enumerate() {
            let s = n + i;
            if self.row_of[s] == NONE {
                *r -= self.x[s];
            }
        }
        for (k, &(row, sign)) in self.arts.iter().enumerate() {
            let col = n + m + k;
            if self.row_of[col] == NONE {
                rhs[row] -= sign * self.x[col];
            }
        }
        for r in 0..m {
            let mut v = 0.0;
            for (i, &ri) in rhs.iter().enumerate() {
                if ri != 0.0 {
                    v += self.at(r, self.init_col[i]) / self.init_coef[i] * ri;
                }
            }
            self.x[self.basis[r]] = v;
        }
    }

    fn refresh_duals(&mut self) {
        self.d.copy_from_slice(&self.cost);
        for r in 0..self.m {
            let cb = self.cost[self.basis[r]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[r * self.ncols..(r + 1) * self.ncols];
            for (dj, &tij) in self.d.iter_mut().zip(row) {
                *dj -= cb * tij;
            }
        }
        for r in 0..self.m {
            self.d[self.basis[r]] = 0.0;
        }
    }

    fn set_cost(&mut self, cost: Vec<f64>) {
        self.cost = cost;
        self.refresh_duals();
    }

    /// Chooses an entering column and direction (+1 increase, -1 decrease).
    fn price(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.ncols {
            if self.row_of[j] != NONE || self.lb[j] == self.ub[j] {
                continue;
            }
            let dj = self.d[j];
            let xj = self.x[j];
            let can_up = xj < self.ub[j] && dj < -DUAL_TOL;
            let can_down = xj > self.lb[j] && dj > DUAL_TOL;
            let dir = if can_up {
                1.0
            } else if can_down {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn iterate(&mut self, bland: bool) -> Step {
        let Some((j, dir)) = self.price(bland) else {
            return Step::Optimal;
        };

        let mut theta = f64::INFINITY;
        let mut leave = NONE;
        let mut leave_alpha = 0.0f64;
        for r in 0..self.m {
            let alpha = dir * self.at(r, j);
            if alpha.abs() <= PIVOT_TOL {
                continue;
            }
            let bcol = self.basis[r];
            let limit = if alpha > 0.0 {
                if self.lb[bcol] == f64::NEG_INFINITY {
                    continue;
                }
                ((self.x[bcol] - self.lb[bcol]) / alpha).max(0.0)
            } else {
                if self.ub[bcol] == f64::INFINITY {
                    continue;
                }
                ((self.ub[bcol] - self.x[bcol]) / -alpha).max(0.0)
            };
            let better = if leave == NONE || limit < theta - 1e-12 {
                true
            } else if limit <= theta + 1e-12 {
                if bland {
                    bcol < self.basis[leave]
                } else {
                    alpha.abs() > leave_alpha.abs()
                }
            } else {
                false
            };
            if better {
                theta = limit;
                leave = r;
                leave_alpha = alpha;
            }
        }

        let own = self.ub[j] - self.lb[j];
        if own <= theta {
            // Bound flip: the entering column crosses its whole range.
            if !own.is_finite() {
                return Step::Unbounded;
            }
            self.shift(j, dir, own);
            self.x[j] = if dir > 0.0 { self.ub[j] } else { self.lb[j] };
            return Step::Continue { degenerate: false };
        }
        if leave == NONE {
            return Step::Unbounded;
        }

        self.shift(j, dir, theta);
        let lcol = self.basis[leave];
        self.x[lcol] = if leave_alpha > 0.0 {
            self.lb[lcol]
        } else {
            self.ub[lcol]
        };
        self.pivot(leave, j);
        Step::Continue {
            degenerate: theta == 0.0,
        }
    }

    /// Moves nonbasic column `j` by `dir·theta`, updating basic values.
    fn shift(&mut self, j: usize, dir: f64, theta: f64) {
        if theta == 0.0 {
            return;
        }
        self.x[j] += dir * theta;
        for r in 0..self.m {
            let tij = self.at(r, j);
            if tij != 0.0 {
                let b = self.basis[r];
                self.x[b] -= dir * tij * theta;
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let nc = self.ncols;
        let p = self.at(r, j);
        let inv = 1.0 / p;
        for v in &mut self.t[r * nc..(r + 1) * nc] {
            *v *= inv;
        }
        self.t[r * nc + j] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        for chunk in before.chunks_exact_mut(nc).chain(after.chunks_exact_mut(nc)) {
            let f = chunk[j];
            if f == 0.0 {
                continue;
            }
            for (v, &pv) in chunk.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            chunk[j] = 0.0;
        }
        let f = self.d[j];
        if f != 0.0 {
            for (v, &pv) in self.d.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            self.d[j] = 0.0;
        }
        let old = self.basis[r];
        self.row_of[old] = NONE;
        self.basis[r] = j;
        self.row_of[j] = r;
    }

    fn run_phase(&mut self, deadline: Option<Instant>) -> Result<bool, LpFailure> {
        let cap = 20 * (self.m + self.ncols) + 1000;
        let mut degenerate_run = 0usize;
        for it in 0..cap {
            if it % 64 == 63 && deadline.is_some_and(|d| Instant::now() >= d) {
                return Err(LpFailure::Deadline);
            }
            if it % REFRESH_EVERY == REFRESH_EVERY - 1 {
                self.refresh_values();
                self.refresh_duals();
            }
            let bland = degenerate_run >= DEGENERATE_BEFORE_BLAND;
            match self.iterate(bland) {
                Step::Optimal => {
                    self.refresh_values();
                    self.refresh_duals();
                    // Confirm optimality on fresh reduced costs.
                    if self.price(false).is_none() {
                        return Ok(true);
                    }
                }
                Step::Unbounded => return Ok(false),
                Step::Continue { degenerate } => {
                    degenerate_run = if degenerate { degenerate_run + 1 } else { 0 };
                }
            }
        }
        Err(LpFailure::Numerical(format!(
            "simplex iteration limit reached ({} rows, {} columns)",
            self.m, self.ncols
        )))
    }
}

/// Solves the continuous relaxation of `model` with per-variable `bounds`
/// overriding the model's own (binaries included).
pub(crate) fn solve_relaxation(
    model: &MilpModel,
    bounds: &[(f64, f64)],
    feas_tol: f64,
    deadline: Option<Instant>,
) -> Result<LpSolution, LpFailure> {
    let n = model.num_vars();
    let rows = model.constraints();
    let m = rows.len();

    for &(lo, hi) in bounds {
        if lo > hi + feas_tol {
            return Ok(LpSolution::infeasible(n));
        }
    }

    let mut a = vec![0.0; m * n];
    let mut b = vec![0.0; m];
    for (i, c) in rows.iter().enumerate() {
        let scale = c.lhs.terms.iter().fold(0.0f64, |s, &(v, _)| s.max(v.abs()));
        let scale = if scale > 0.0 { 1.0 / scale } else { 1.0 };
        for &(coef, v) in &c.lhs.terms {
            a[i * n + v.index()] += coef * scale;
        }
        b[i] = c.rhs * scale;
    }

    let mut lb: Vec<f64> = Vec::with_capacity(n + 2 * m);
    let mut ub: Vec<f64> = Vec::with_capacity(n + 2 * m);
    let mut x: Vec<f64> = Vec::with_capacity(n + 2 * m);
    for &(lo, hi) in bounds {
        let hi = hi.max(lo);
        lb.push(lo);
        ub.push(hi);
        x.push(if lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi
        } else {
            0.0
        });
    }
    for c in rows {
        let (lo, hi) = match c.sense {
            Cmp::Le => (0.0, f64::INFINITY),
            Cmp::Ge => (f64::NEG_INFINITY, 0.0),
            Cmp::Eq => (0.0, 0.0),
        };
        lb.push(lo);
        ub.push(hi);
        x.push(0.0);
    }

    let mut arts = Vec::new();
    let mut init_col = Vec::with_capacity(m);
    let mut init_coef = Vec::with_capacity(m);
    for i in 0..m {
        let resid = b[i] - (0..n).map(|j| a[i * n + j] * x[j]).sum::<f64>();
        let s = n + i;
        if resid >= lb[s] - feas_tol * 1e-2 && resid <= ub[s] + feas_tol * 1e-2 {
            x[s] = resid;
            init_col.push(s);
            init_coef.push(1.0);
        } else {
            let sv = resid.clamp(lb[s], ub[s]);
            x[s] = sv;
            let sign = if resid - sv > 0.0 { 1.0 } else { -1.0 };
            arts.push((i, sign));
            init_col.push(NONE);
            init_coef.push(sign);
        }
    }
    let ncols = n + m + arts.len();
    for (k, &(i, _)) in arts.iter().enumerate() {
        let col = n + m + k;
        init_col[i] = col;
        let s = n + i;
        let resid = b[i] - (0..n).map(|j| a[i * n + j] * x[j]).sum::<f64>() - x[s];
        lb.push(0.0);
        ub.push(f64::INFINITY);
        x.push(resid.abs());
    }

    // Tableau rows are B0^{-1} [A | I | R] with B0 = diag(init_coef).
    let mut t = vec![0.0; m * ncols];
    for i in 0..m {
        let inv = 1.0 / init_coef[i];
        let row = &mut t[i * ncols..(i + 1) * ncols];
        for j in 0..n {
            row[j] = a[i * n + j] * inv;
        }
        row[n + i] = inv;
    }
    for (k, &(i, sign)) in arts.iter().enumerate() {
        t[i * ncols + n + m + k] = sign / init_coef[i];
    }
    let mut row_of = vec![NONE; ncols];
    let basis: Vec<usize> = init_col.clone();
    for (i, &c) in basis.iter().enumerate() {
        row_of[c] = i;
    }

    let mut tab = Tableau {
        m,
        n,
        ncols,
        t,
        d: vec![0.0; ncols],
        cost: vec![0.0; ncols],
        lb,
        ub,
        x,
        basis,
        row_of,
        a,
        b,
        init_col,
        init_coef,
        arts,
    };

    if !tab.arts.is_empty() {
        let mut c1 = vec![0.0; ncols];
        for c in c1.iter_mut().skip(n + m) {
            *c = 1.0;
        }
        tab.set_cost(c1);
        tab.run_phase(deadline)?;
        let infeas: f64 = (n + m..ncols).map(|c| tab.x[c].max(0.0)).sum();
        if infeas > feas_tol {
            return Ok(LpSolution::infeasible(n));
        }
        for c in n + m..ncols {
            tab.lb[c] = 0.0;
            tab.ub[c] = 0.0;
            if tab.row_of[c] == NONE {
                tab.x[c] = 0.0;
            }
        }
    }

    let mut c2 = vec![0.0; ncols];
    if let Some(obj) = model.objective() {
        let sign = match obj.sense {
            ObjSense::Min => 1.0,
            ObjSense::Max => -1.0,
        };
        let scale = obj.expr.terms.iter().fold(0.0f64, |s, &(v, _)| s.max(v.abs()));
        let scale = if scale > 0.0 { 1.0 / scale } else { 1.0 };
        for &(coef, v) in &obj.expr.terms {
            c2[v.index()] += sign * coef * scale;
        }
    }
    tab.set_cost(c2);
    if !tab.run_phase(deadline)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            values: tab.x[..n].to_vec(),
            objective: match model.objective().map(|o| o.sense) {
                Some(ObjSense::Max) => f64::INFINITY,
                _ => f64::NEG_INFINITY,
            },
        });
    }

    let mut values = tab.x[..n].to_vec();
    for (v, &(lo, hi)) in values.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi.max(lo));
    }
    let worst = rows
        .iter()
        .map(|c| c.scaled_violation(&values))
        .fold(0.0f64, f64::max);
    if worst > feas_tol {
        return Err(LpFailure::Numerical(format!(
            "relaxation solution violates a row by {worst:.3e} after refactorization ({m} rows, {ncols} columns; {} artificials, basis holds {} structurals)",
            tab.arts.len(),
            tab.basis.iter().filter(|&&c| c < n).count()
        )));
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: model.objective_value(&values),
        values,
    })
}
