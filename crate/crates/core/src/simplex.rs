//! Dense-tableau two-phase simplex for equality-form linear programs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("pivot limit of {0} reached")]
    PivotLimit(usize),
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("solution violates the constraints by {0:e}")]
    Numerical(f64),
}

/// `min c^T x  s.t.  A x = b, x >= 0` with `A` stored as sparse rows.
#[derive(Debug, Clone, Default)]
pub struct StandardLp {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
}

impl StandardLp {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Largest `|A x - b|` over the rows.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| (row.iter().map(|(j, a)| a * x[*j]).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

/// Anything that can solve a [`StandardLp`] to optimality.
pub trait LpSolver {
    fn solve(&self, lp: &StandardLp) -> Result<LpSolution, LpError>;

    /// Solves starting from `basis` (one structural column per row) when
    /// that basis is nonsingular and feasible; otherwise as [`LpSolver::solve`].
    fn solve_from(&self, lp: &StandardLp, basis: &[usize]) -> Result<LpSolution, LpError> {
        let _ = basis;
        self.solve(lp)
    }
}

/// Entering-variable rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pricing {
    /// Smallest-index rule throughout; never cycles.
    Bland,
    /// Most negative reduced cost, switching to Bland's rule after this many
    /// consecutive degenerate pivots and back after a nondegenerate one.
    Dantzig { degenerate_limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseSimplex {
    pub max_pivots: usize,
    /// Reduced costs above `-eps` count as nonnegative.
    pub eps: f64,
    /// Smallest admissible pivot element.
    #[serde(default = "default_pivot_tol")]
    pub pivot_tol: f64,
    pub pricing: Pricing,
}

fn default_pivot_tol() -> f64 {
    1e-9
}

impl Default for DenseSimplex {
    fn default() -> Self {
        Self { max_pivots: 1_000_000, eps: 1e-9, pivot_tol: default_pivot_tol(), pricing: Pricing::Dantzig { degenerate_limit: 50 } }
    }
}

struct Tableau {
    m: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    /// Objective row is stored after the `m` constraint rows.
    pivots: usize,
}

impl Tableau {
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let piv = self.at(r, c);
        {
            let row = &mut self.data[r * w..(r + 1) * w];
            row.iter_mut().for_each(|x| *x /= piv);
            row[c] = 1.0;
        }
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[c];
            if f != 0.0 {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
                row[c] = 0.0;
            }
        };
        before.chunks_exact_mut(w).for_each(eliminate);
        after.chunks_exact_mut(w).for_each(eliminate);
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Runs simplex iterations on the objective row over columns `< ncols`.
    fn optimize(&mut self, ncols: usize, opts: &DenseSimplex) -> Result<(), LpError> {
        let obj = self.m;
        let mut degenerate_run = 0usize;
        loop {
            if self.pivots >= opts.max_pivots {
                return Err(LpError::PivotLimit(opts.max_pivots));
            }
            let use_bland = match opts.pricing {
                Pricing::Bland => true,
                Pricing::Dantzig { degenerate_limit } => degenerate_run >= degenerate_limit,
            };
            let costs = &self.row(obj)[..ncols];
            let entering = if use_bland {
                costs.iter().position(|&d| d < -opts.eps)
            } else {
                let (j, d) = costs
                    .iter()
                    .enumerate()
                    .fold((usize::MAX, -opts.eps), |(bj, bd), (j, &d)| if d < bd { (j, d) } else { (bj, bd) });
                (d < -opts.eps).then_some(j)
            };
            let Some(c) = entering else { return Ok(()) };

            // ratio test; ties go to the smallest basic index under Bland's
            // rule and to the largest pivot element otherwise
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a > opts.pivot_tol {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = ratio <= br + 1e-12;
                            let better_tie = if use_bland { self.basis[i] < self.basis[bi] } else { a > self.at(bi, c) };
                            if ratio < br - 1e-12 || (tie && better_tie) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else { return Err(LpError::Unbounded) };
            if ratio.abs() <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
    }
}

impl LpSolver for DenseSimplex {
    fn solve(&self, lp: &StandardLp) -> Result<LpSolution, LpError> {
        let n = lp.n_vars();
        let m = lp.rows.len();
        if lp.rhs.len() != m {
            return Err(LpError::Malformed("one right-hand side per row required".into()));
        }
        if lp.rows.iter().flatten().any(|(j, _)| *j >= n) {
            return Err(LpError::Malformed("column index out of range".into()));
        }
        // columns: n structural, m artificial, rhs
        let width = n + m + 1;
        let mut data = vec![0.0; (m + 1) * width];
        for (i, (row, &b)) in lp.rows.iter().zip(&lp.rhs).enumerate() {
            let sign = if b < 0.0 { -1.0 } else { 1.0 };
            let r = &mut data[i * width..(i + 1) * width];
            for &(j, a) in row {
                r[j] += sign * a;
            }
            r[n + i] = 1.0;
            r[width - 1] = sign * b;
        }
        // phase one: minimize the sum of artificials
        {
            let (cons, obj) = data.split_at_mut(m * width);
            for row in cons.chunks_exact(width) {
                for (o, x) in obj.iter_mut().zip(row) {
                    *o -= x;
                }
            }
            for o in &mut obj[n..n + m] {
                *o = 0.0;
            }
        }
        let mut t = Tableau { m, width, data, basis: (n..n + m).collect(), pivots: 0 };
        t.optimize(n + m, self)?;
        let infeas = -t.rhs(m);
        let scale = lp.rhs.iter().map(|b| b.abs()).fold(1.0, f64::max);
        if infeas > 1e-9 * scale {
            return Err(LpError::Infeasible(infeas));
        }
        // drive artificials out of the basis; rows where that fails are redundant
        let mut redundant = vec![false; m];
        for i in 0..m {
            if t.basis[i] >= n {
                match (0..n).find(|&j| t.at(i, j).abs() > 1e-9) {
                    Some(j) => t.pivot(i, j),
                    None => redundant[i] = true,
                }
            }
        }
        if redundant.iter().any(|&r| r) {
            let mut data = Vec::with_capacity(t.data.len());
            let mut basis = Vec::new();
            for i in 0..m {
                if !redundant[i] {
                    data.extend_from_slice(t.row(i));
                    basis.push(t.basis[i]);
                }
            }
            data.extend_from_slice(t.row(m));
            t = Tableau { m: basis.len(), width, data, basis, pivots: t.pivots };
        }
        // phase two objective row: reduced costs c_j - c_B B^-1 A_j
        let m2 = t.m;
        {
            let (cons, obj) = t.data.split_at_mut(m2 * width);
            obj.iter_mut().for_each(|x| *x = 0.0);
            obj[..n].copy_from_slice(&lp.objective);
            for (row, &bv) in cons.chunks_exact(width).zip(&t.basis) {
                let cb = lp.objective[bv];
                if cb != 0.0 {
                    for (o, x) in obj.iter_mut().zip(row) {
                        *o -= cb * x;
                    }
                }
            }
            // artificial columns may not re-enter
            for o in &mut obj[n..n + m] {
                *o = 0.0;
            }
        }
        t.optimize(n, self)?;
        let mut x = vec![0.0; n];
        for i in 0..t.m {
            if t.basis[i] < n {
                x[t.basis[i]] = t.rhs(i);
            }
        }
        let residual = lp.residual(&x);
        if residual > 1e-7 * scale {
            return Err(LpError::Numerical(residual));
        }
        let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective, pivots: t.pivots })
    }
}

/// LU factors of a basis matrix with row permutation: `P B = L U`.
struct Lu {
    m: usize,
    /// Row `k` of `P B` is row `perm[k]` of `B`.
    perm: Vec<usize>,
    /// Strict lower part of `L` by column: `(i, l_ik)` with `i > k`.
    l_cols: Vec<Vec<(usize, f64)>>,
    /// Strict upper part of `U` by row: `(j, u_kj)` with `j > k`.
    u_rows: Vec<Vec<(usize, f64)>>,
    u_diag: Vec<f64>,
}

impl Lu {
    /// Gaussian elimination with partial pivoting on a dense copy of `B`,
    /// skipping zero multipliers so banded bases stay cheap.
    fn factor(m: usize, cols: &[&[(usize, f64)]]) -> Result<Self, LpError> {
        let mut a = vec![0.0; m * m];
        for (j, col) in cols.iter().enumerate() {
            for &(i, v) in col.iter() {
                a[i * m + j] += v;
            }
        }
        let mut perm: Vec<usize> = (0..m).collect();
        let mut tail = Vec::with_capacity(m);
        for k in 0..m {
            let (mut p, mut best) = (k, 0.0f64);
            for i in k..m {
                let v = a[i * m + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < 1e-13 {
                return Err(LpError::Numerical(best));
            }
            if p != k {
                for j in 0..m {
                    a.swap(k * m + j, p * m + j);
                }
                perm.swap(k, p);
            }
            let piv = a[k * m + k];
            tail.clear();
            tail.extend((k + 1..m).filter(|&j| a[k * m + j] != 0.0));
            for i in k + 1..m {
                let f = a[i * m + k];
                if f == 0.0 {
                    continue;
                }
                let l = f / piv;
                a[i * m + k] = l;
                for &j in &tail {
                    a[i * m + j] -= l * a[k * m + j];
                }
            }
        }
        let mut l_cols = vec![Vec::new(); m];
        let mut u_rows = vec![Vec::new(); m];
        let mut u_diag = vec![0.0; m];
        for i in 0..m {
            for j in 0..m {
                let v = a[i * m + j];
                if v == 0.0 {
                    continue;
                }
                match i.cmp(&j) {
                    std::cmp::Ordering::Greater => l_cols[j].push((i, v)),
                    std::cmp::Ordering::Less => u_rows[i].push((j, v)),
                    std::cmp::Ordering::Equal => u_diag[i] = v,
                }
            }
        }
        Ok(Self { m, perm, l_cols, u_rows, u_diag })
    }

    /// Solves `B x = rhs` in place (`rhs` indexed by row, result by column).
    fn solve(&self, rhs: &mut [f64]) {
        let mut z: Vec<f64> = self.perm.iter().map(|&r| rhs[r]).collect();
        for k in 0..self.m {
            let zk = z[k];
            if zk != 0.0 {
                for &(i, l) in &self.l_cols[k] {
                    z[i] -= l * zk;
                }
            }
        }
        for k in (0..self.m).rev() {
            let s: f64 = self.u_rows[k].iter().map(|&(j, u)| u * z[j]).sum();
            z[k] = (z[k] - s) / self.u_diag[k];
        }
        rhs.copy_from_slice(&z);
    }

    /// Solves `B^T y = rhs` in place (`rhs` indexed by column, result by row).
    fn solve_transpose(&self, rhs: &mut [f64]) {
        let mut v = rhs.to_vec();
        for k in 0..self.m {
            v[k] /= self.u_diag[k];
            let vk = v[k];
            if vk != 0.0 {
                for &(j, u) in &self.u_rows[k] {
                    v[j] -= u * vk;
                }
            }
        }
        for k in (0..self.m).rev() {
            let s: f64 = self.l_cols[k].iter().map(|&(i, l)| l * v[i]).sum();
            v[k] -= s;
        }
        for (k, &r) in self.perm.iter().enumerate() {
            rhs[r] = v[k];
        }
    }
}

/// Product-form update: the basis column at position `r` was replaced by a
/// column whose representation in the previous basis is `alpha`.
struct Eta {
    r: usize,
    pivot: f64,
    others: Vec<(usize, f64)>,
}

/// Revised primal simplex. The basis is kept as LU factors plus eta updates
/// and refactorized periodically; the ratio test uses Harris's two passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RevisedSimplex {
    pub max_pivots: usize,
    /// Reduced costs above `-opt_tol` count as nonnegative.
    pub opt_tol: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    /// Primal infeasibility tolerated by the ratio test.
    pub feas_tol: f64,
    /// Eta updates between refactorizations.
    pub refactor_every: usize,
    pub pricing: Pricing,
}

impl Default for RevisedSimplex {
    fn default() -> Self {
        Self {
            max_pivots: 1_000_000,
            opt_tol: 1e-9,
            pivot_tol: 1e-9,
            feas_tol: 1e-12,
            refactor_every: 100,
            pricing: Pricing::Dantzig { degenerate_limit: 50 },
        }
    }
}

struct RevisedState<'a> {
    m: usize,
    n: usize,
    /// Structural columns, then one artificial column `e_i` per row.
    cols: &'a [Vec<(usize, f64)>],
    b: &'a [f64],
    basis: Vec<usize>,
    position: Vec<Option<usize>>,
    x: Vec<f64>,
    lu: Lu,
    etas: Vec<Eta>,
    pivots: usize,
}

impl RevisedState<'_> {
    fn refactor(&mut self) -> Result<(), LpError> {
        let cols: Vec<&[(usize, f64)]> = self.basis.iter().map(|&j| self.cols[j].as_slice()).collect();
        self.lu = Lu::factor(self.m, &cols)?;
        self.etas.clear();
        let mut x = self.b.to_vec();
        self.lu.solve(&mut x);
        self.x = x;
        Ok(())
    }

    /// `B^-1 col` with one step of iterative refinement.
    fn ftran(&self, col: &[(usize, f64)]) -> Vec<f64> {
        let mut v = self.ftran_once(col.iter().copied());
        let mut r = vec![0.0; self.m];
        for &(i, a) in col {
            r[i] += a;
        }
        for (k, &j) in self.basis.iter().enumerate() {
            if v[k] != 0.0 {
                for &(i, a) in &self.cols[j] {
                    r[i] -= a * v[k];
                }
            }
        }
        let d = self.ftran_once(r.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(i, &a)| (i, a)));
        v.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        v
    }

    fn ftran_once(&self, col: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
        let mut v = vec![0.0; self.m];
        for (i, a) in col {
            v[i] += a;
        }
        self.lu.solve(&mut v);
        for e in &self.etas {
            let xr = v[e.r] / e.pivot;
            v[e.r] = xr;
            if xr != 0.0 {
                for &(j, a) in &e.others {
                    v[j] -= a * xr;
                }
            }
        }
        v
    }

    fn btran(&self, mut c: Vec<f64>) -> Vec<f64> {
        for e in self.etas.iter().rev() {
            let s: f64 = e.others.iter().map(|&(j, a)| c[j] * a).sum();
            c[e.r] = (c[e.r] - s) / e.pivot;
        }
        self.lu.solve_transpose(&mut c);
        c
    }

    /// Optimizes `costs` over the structural columns and, in phase one, the
    /// artificial ones. In phase two basic artificials are held at zero.
    fn optimize(&mut self, costs: &[f64], phase_one: bool, opts: &RevisedSimplex) -> Result<(), LpError> {
        let mut degenerate_run = 0usize;
        let ncols = if phase_one { self.n + self.m } else { self.n };
        loop {
            if self.pivots >= opts.max_pivots {
                return Err(LpError::PivotLimit(opts.max_pivots));
            }
            if self.etas.len() >= opts.refactor_every {
                self.refactor()?;
            }
            let use_bland = match opts.pricing {
                Pricing::Bland => true,
                Pricing::Dantzig { degenerate_limit } => degenerate_run >= degenerate_limit,
            };
            let y = self.btran(self.basis.iter().map(|&j| costs[j]).collect());
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..ncols {
                if self.position[j].is_some() {
                    continue;
                }
                let d = costs[j] - self.cols[j].iter().map(|&(i, a)| y[i] * a).sum::<f64>();
                if d < -opts.opt_tol && entering.is_none_or(|(_, bd)| d < bd) {
                    entering = Some((j, d));
                    if use_bland {
                        break;
                    }
                }
            }
            let Some((q, _)) = entering else { return Ok(()) };
            let alpha = self.ftran(&self.cols[q]);

            // a basic artificial in phase two must stay at zero whichever way
            // it would move
            let held = |i: usize| !phase_one && self.basis[i] >= self.n;
            let mut leave: Option<usize> = None;
            if use_bland {
                let mut best = f64::INFINITY;
                for i in 0..self.m {
                    let a = alpha[i];
                    let ratio = if held(i) && a.abs() > opts.pivot_tol {
                        0.0
                    } else if a > opts.pivot_tol {
                        self.x[i].max(0.0) / a
                    } else {
                        continue;
                    };
                    let better = match leave {
                        None => true,
                        Some(l) => ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[l]),
                    };
                    if better {
                        best = best.min(ratio);
                        leave = Some(i);
                    }
                }
            } else {
                let mut bound = f64::INFINITY;
                for i in 0..self.m {
                    let a = alpha[i];
                    if held(i) && a.abs() > opts.pivot_tol {
                        bound = bound.min(opts.feas_tol / a.abs());
                    } else if a > opts.pivot_tol {
                        bound = bound.min((self.x[i].max(0.0) + opts.feas_tol) / a);
                    }
                }
                let mut best_a = 0.0;
                for i in 0..self.m {
                    let a = alpha[i];
                    let (ratio, mag) = if held(i) && a.abs() > opts.pivot_tol {
                        (0.0, a.abs())
                    } else if a > opts.pivot_tol {
                        (self.x[i].max(0.0) / a, a)
                    } else {
                        continue;
                    };
                    if ratio <= bound && mag > best_a {
                        best_a = mag;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else { return Err(LpError::Unbounded) };
            let theta = if held(r) { 0.0 } else { self.x[r].max(0.0) / alpha[r] };
            // recompute small pivots from a fresh factorization before using them
            if alpha[r].abs() < 1e-5 && !self.etas.is_empty() {
                self.refactor()?;
                continue;
            }
            if theta <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            if theta != 0.0 {
                for (xi, a) in self.x.iter_mut().zip(&alpha) {
                    *xi -= theta * a;
                }
            }
            self.x[r] = theta;
            self.position[self.basis[r]] = None;
            self.position[q] = Some(r);
            self.basis[r] = q;
            self.etas.push(Eta {
                r,
                pivot: alpha[r],
                others: alpha.iter().enumerate().filter(|&(i, a)| i != r && a.abs() > 1e-15).map(|(i, &a)| (i, a)).collect(),
            });
            self.pivots += 1;
        }
    }
}

impl RevisedSimplex {
    fn run(&self, lp: &StandardLp, start: Option<&[usize]>) -> Result<LpSolution, LpError> {
        let n = lp.n_vars();
        let m = lp.rows.len();
        if lp.rhs.len() != m {
            return Err(LpError::Malformed("one right-hand side per row required".into()));
        }
        if lp.rows.iter().flatten().any(|(j, _)| *j >= n) {
            return Err(LpError::Malformed("column index out of range".into()));
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + m];
        let mut b = Vec::with_capacity(m);
        for (i, (row, &rhs)) in lp.rows.iter().zip(&lp.rhs).enumerate() {
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            for &(j, a) in row {
                cols[j].push((i, sign * a));
            }
            cols[n + i].push((i, 1.0));
            b.push(sign * rhs);
        }
        for col in &mut cols[..n] {
            col.sort_by_key(|(i, _)| *i);
            col.dedup_by(|next, prev| {
                if next.0 == prev.0 {
                    prev.1 += next.1;
                    true
                } else {
                    false
                }
            });
            col.retain(|(_, a)| *a != 0.0);
        }
        let scale = lp.rhs.iter().map(|b| b.abs()).fold(1.0, f64::max);

        let mut st = match start.and_then(|basis| self.feasible_start(&cols, &b, n, basis, scale)) {
            Some(st) => st,
            None => {
                let mut position = vec![None; n + m];
                for i in 0..m {
                    position[n + i] = Some(i);
                }
                let identity: Vec<&[(usize, f64)]> = (0..m).map(|i| cols[n + i].as_slice()).collect();
                let lu = Lu::factor(m, &identity)?;
                let mut st = RevisedState { m, n, cols: &cols, b: &b, basis: (n..n + m).collect(), position, x: b.clone(), lu, etas: Vec::new(), pivots: 0 };
                let phase_one: Vec<f64> = (0..n + m).map(|j| if j < n { 0.0 } else { 1.0 }).collect();
                st.optimize(&phase_one, true, self)?;
                st.refactor()?;
                let infeas: f64 = (0..m).filter(|&i| st.basis[i] >= n).map(|i| st.x[i].abs()).sum();
                if infeas > 1e-8 * scale {
                    return Err(LpError::Infeasible(infeas));
                }
                st
            }
        };
        let phase_two: Vec<f64> = (0..n + m).map(|j| if j < n { lp.objective[j] } else { 0.0 }).collect();
        st.optimize(&phase_two, false, self)?;
        st.refactor()?;

        let mut x = vec![0.0; n];
        for (i, &j) in st.basis.iter().enumerate() {
            if j < n {
                x[j] = st.x[i];
            }
        }
        let most_negative = x.iter().cloned().fold(0.0, f64::min);
        if most_negative < -1e-9 * scale {
            return Err(LpError::Numerical(-most_negative));
        }
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        let residual = lp.residual(&x);
        if residual > 1e-8 * scale {
            return Err(LpError::Numerical(residual));
        }
        let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective, pivots: st.pivots })
    }

    /// State for a caller-supplied basis, if it is nonsingular and primal feasible.
    fn feasible_start<'a>(&self, cols: &'a [Vec<(usize, f64)>], b: &'a [f64], n: usize, basis: &[usize], scale: f64) -> Option<RevisedState<'a>> {
        let m = b.len();
        let mut position = vec![None; n + m];
        for (i, &j) in basis.iter().enumerate() {
            if j >= n || position[j].is_some() {
                return None;
            }
            position[j] = Some(i);
        }
        if basis.len() != m {
            return None;
        }
        let basic: Vec<&[(usize, f64)]> = basis.iter().map(|&j| cols[j].as_slice()).collect();
        let lu = Lu::factor(m, &basic).ok()?;
        let mut x = b.to_vec();
        lu.solve(&mut x);
        if x.iter().any(|&v| v < -1e-9 * scale) {
            return None;
        }
        Some(RevisedState { m, n, cols, b, basis: basis.to_vec(), position, x, lu, etas: Vec::new(), pivots: 0 })
    }
}

impl LpSolver for RevisedSimplex {
    fn solve(&self, lp: &StandardLp) -> Result<LpSolution, LpError> {
        self.run(lp, None)
    }

    fn solve_from(&self, lp: &StandardLp, basis: &[usize]) -> Result<LpSolution, LpError> {
        self.run(lp, Some(basis))
    }
}

/// Choice of LP algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LpMethod {
    Revised(RevisedSimplex),
    DenseTableau(DenseSimplex),
}

impl Default for LpMethod {
    fn default() -> Self {
        LpMethod::Revised(RevisedSimplex::default())
    }
}

impl LpSolver for LpMethod {
    fn solve(&self, lp: &StandardLp) -> Result<LpSolution, LpError> {
        match self {
            LpMethod::Revised(s) => s.solve(lp),
            LpMethod::DenseTableau(s) => s.solve(lp),
        }
    }

    fn solve_from(&self, lp: &StandardLp, basis: &[usize]) -> Result<LpSolution, LpError> {
        match self {
            LpMethod::Revised(s) => s.solve_from(lp, basis),
            LpMethod::DenseTableau(s) => s.solve(lp),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solvers() -> Vec<LpMethod> {
        let mut v = Vec::new();
        for pricing in [Pricing::Bland, Pricing::Dantzig { degenerate_limit: 3 }] {
            v.push(LpMethod::DenseTableau(DenseSimplex { pricing, ..Default::default() }));
            v.push(LpMethod::Revised(RevisedSimplex { pricing, refactor_every: 2, ..Default::default() }));
        }
        v
    }

    fn lp(obj: Vec<f64>, rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> StandardLp {
        StandardLp {
            objective: obj,
            rows: rows
                .into_iter()
                .map(|r| r.into_iter().enumerate().filter(|(_, a)| *a != 0.0).collect())
                .collect(),
            rhs,
        }
    }

    #[test]
    fn small_problem() {
        // min -x - y  s.t. x + 2y + s1 = 4, 3x + y + s2 = 6  ->  x=1.6, y=1.2
        let p = lp(vec![-1.0, -1.0, 0.0, 0.0], vec![vec![1.0, 2.0, 1.0, 0.0], vec![3.0, 1.0, 0.0, 1.0]], vec![4.0, 6.0]);
        for solver in solvers() {
            let s = solver.solve(&p).unwrap();
            assert!((s.objective + 2.8).abs() < 1e-12);
            assert!((s.x[0] - 1.6).abs() < 1e-12 && (s.x[1] - 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn warm_start_from_any_basis() {
        let p = lp(vec![-1.0, -1.0, 0.0, 0.0], vec![vec![1.0, 2.0, 1.0, 0.0], vec![3.0, 1.0, 0.0, 1.0]], vec![4.0, 6.0]);
        // feasible bases, {y, s1} (s1 = -8), a repeated column and a short basis
        for basis in [vec![2, 3], vec![0, 2], vec![1, 2], vec![0, 0], vec![0]] {
            for solver in solvers() {
                let s = solver.solve_from(&p, &basis).unwrap();
                assert!((s.objective + 2.8).abs() < 1e-12, "{basis:?}");
            }
        }
        let r = RevisedSimplex::default().solve_from(&p, &[0, 1]).unwrap();
        assert_eq!(r.pivots, 0);
    }

    #[test]
    fn infeasible_and_unbounded() {
        for solver in solvers() {
            let p = lp(vec![1.0, 1.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 2.0]);
            assert!(matches!(solver.solve(&p), Err(LpError::Infeasible(_))));
            let p = lp(vec![-1.0, 0.0], vec![vec![1.0, -1.0]], vec![1.0]);
            assert_eq!(solver.solve(&p).unwrap_err(), LpError::Unbounded);
        }
    }

    #[test]
    fn redundant_rows_are_dropped() {
        // x + y = 1 twice, min x + 2y -> x = 1
        let p = lp(vec![1.0, 2.0], vec![vec![1.0, 1.0], vec![2.0, 2.0]], vec![1.0, 2.0]);
        for solver in solvers() {
            let s = solver.solve(&p).unwrap();
            assert!((s.objective - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beale_cycling_example_terminates() {
        // Beale's example cycles under the textbook largest-coefficient rule.
        let p = lp(
            vec![-0.75, 150.0, -0.02, 6.0, 0.0, 0.0, 0.0],
            vec![
                vec![0.25, -60.0, -0.04, 9.0, 1.0, 0.0, 0.0],
                vec![0.5, -90.0, -0.02, 3.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            ],
            vec![0.0, 0.0, 1.0],
        );
        for solver in solvers() {
            let s = solver.solve(&p).unwrap();
            assert!((s.objective + 0.05).abs() < 1e-9, "{solver:?}");
        }
    }

    #[test]
    fn lu_solves_permuted_system() {
        // columns of [[0, 2, 1], [1, 0, 0], [3, 1, 4]]
        let cols: Vec<Vec<(usize, f64)>> = vec![vec![(1, 1.0), (2, 3.0)], vec![(0, 2.0), (2, 1.0)], vec![(0, 1.0), (2, 4.0)]];
        let refs: Vec<&[(usize, f64)]> = cols.iter().map(|c| c.as_slice()).collect();
        let lu = Lu::factor(3, &refs).unwrap();
        let mut x = vec![3.0, 1.0, 8.0];
        lu.solve(&mut x);
        for (a, b) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        // B^T (1, 2, 1) = (5, 3, 5)
        let mut y = vec![5.0, 3.0, 5.0];
        lu.solve_transpose(&mut y);
        for (a, b) in y.iter().zip([1.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn solvers_agree_on_random_feasible_programs(
            seed_rows in proptest::collection::vec(proptest::collection::vec(-3i32..4, 6), 1..5),
            x0 in proptest::collection::vec(0u32..3, 6),
            cost in proptest::collection::vec(0u32..5, 6),
        ) {
            let rows: Vec<Vec<f64>> = seed_rows.iter().map(|r| r.iter().map(|&a| a as f64).collect()).collect();
            let rhs: Vec<f64> = rows.iter().map(|r| r.iter().zip(&x0).map(|(a, x)| a * *x as f64).sum()).collect();
            let p = lp(cost.iter().map(|&c| c as f64).collect(), rows, rhs);
            let results: Vec<f64> = solvers().iter().map(|s| s.solve(&p).unwrap().objective).collect();
            for r in &results {
                proptest::prop_assert!((r - results[0]).abs() < 1e-9);
            }
            let feasible_cost: f64 = cost.iter().zip(&x0).map(|(c, x)| (*c * *x) as f64).sum();
            proptest::prop_assert!(results[0] <= feasible_cost + 1e-9);
        }
    }
}
