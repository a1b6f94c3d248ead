//! Dense two-phase primal simplex for small linear programs.
//!
//! Solves `min cᵀx  s.t.  A_ub x ≤ b_ub,  A_eq x = b_eq,  l ≤ x ≤ u` with
//! possibly infinite bounds. Pricing is Dantzig's rule; after
//! `10·(rows+cols)` consecutive degenerate pivots it switches to Bland's rule,
//! which cannot cycle.

use nalgebra::DMatrix;

use crate::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    /// Minimized objective.
    pub c: Vec<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: Vec<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: Vec<f64>,
    /// `(lower, upper)` per variable; infinities allowed.
    pub bounds: Vec<(f64, f64)>,
}

impl LpProblem {
    /// `n` nonnegative variables, no rows.
    pub fn new(c: Vec<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            a_ub: DMatrix::zeros(0, n),
            b_ub: Vec::new(),
            a_eq: DMatrix::zeros(0, n),
            b_eq: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn push_ub(&mut self, row: &[f64], rhs: f64) {
        self.a_ub = append_row(&self.a_ub, row);
        self.b_ub.push(rhs);
    }

    pub fn push_eq(&mut self, row: &[f64], rhs: f64) {
        self.a_eq = append_row(&self.a_eq, row);
        self.b_eq.push(rhs);
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.a_ub.ncols() != n || self.a_eq.ncols() != n || self.bounds.len() != n {
            return Err(Error::InvalidProblem(
                "LP shapes disagree with the number of variables".into(),
            ));
        }
        if self.a_ub.nrows() != self.b_ub.len() || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::InvalidProblem(
                "LP row counts disagree with right-hand sides".into(),
            ));
        }
        let finite = self.c.iter().chain(&self.b_ub).chain(&self.b_eq).all(|v| v.is_finite())
            && self.a_ub.iter().chain(self.a_eq.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidProblem("non-finite LP data".into()));
        }
        for (j, &(l, u)) in self.bounds.iter().enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::InvalidProblem(format!("bad bounds ({l}, {u}) on variable {j}")));
            }
        }
        Ok(())
    }
}

fn append_row(m: &DMatrix<f64>, row: &[f64]) -> DMatrix<f64> {
    assert_eq!(row.len(), m.ncols(), "row length");
    let mut out = m.clone().insert_row(m.nrows(), 0.0);
    for (j, v) in row.iter().enumerate() {
        out[(m.nrows(), j)] = *v;
    }
    out
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
    /// Primal solution when optimal.
    pub x: Vec<f64>,
    pub objective: f64,
}

/// How an original variable maps to standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = offset + y[col]`
    Shifted { col: usize, offset: f64 },
    /// `x = offset − y[col]`
    Mirrored { col: usize, offset: f64 },
    /// `x = y[p] − y[q]`
    Split { pos: usize, neg: usize },
}

struct Tableau {
    /// Row 0..m: constraints, row m: objective (reduced costs), last column: rhs.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    rows: usize,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[(i, self.cols)]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.cols + 1;
        let p = self.t[(r, c)];
        for j in 0..width {
            self.t[(r, j)] /= p;
        }
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.t[(i, c)];
            if f != 0.0 {
                for j in 0..width {
                    let v = self.t[(r, j)];
                    self.t[(i, j)] -= f * v;
                }
                self.t[(i, c)] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Runs the simplex on the current objective row over columns `allowed`.
    /// Returns false if unbounded.
    fn optimize(&mut self, allowed: &dyn Fn(usize) -> bool) -> Result<bool> {
        let obj = self.rows;
        let degenerate_limit = 10 * (self.rows + self.cols);
        let mut degenerate = 0;
        let max_pivots = 100 * (self.rows + self.cols) + 1000;
        for _ in 0..max_pivots {
            let bland = degenerate >= degenerate_limit;
            let mut enter = None;
            let mut best = -COST_TOL;
            for j in 0..self.cols {
                if !allowed(j) {
                    continue;
                }
                let rc = self.t[(obj, j)];
                if rc < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(c) = enter else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.t[(i, c)];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li]),
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(false);
            };
            if ratio.abs() <= 1e-14 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
        Err(Error::Precondition("simplex iteration limit reached".into()))
    }
}

pub fn solve_lp(lp: &LpProblem) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.n();

    // Column layout of the standard form.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for &(l, u) in &lp.bounds {
        if l.is_finite() {
            maps.push(VarMap::Shifted { col: ncols, offset: l });
            if u.is_finite() {
                upper_rows.push((ncols, u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            maps.push(VarMap::Mirrored { col: ncols, offset: u });
            ncols += 1;
        } else {
            maps.push(VarMap::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }
    let m_ub = lp.a_ub.nrows() + upper_rows.len();
    let m_eq = lp.a_eq.nrows();
    let struct_cols = ncols;
    let slack0 = struct_cols;
    let total = struct_cols + m_ub;
    let rows = m_ub + m_eq;

    // Dense rows over standard columns, rhs shifted by the offsets.
    let mut a = DMatrix::zeros(rows, total);
    let mut b = vec![0.0; rows];
    let fill = |r: usize, coeffs: &dyn Fn(usize) -> f64, rhs: f64, a: &mut DMatrix<f64>, b: &mut Vec<f64>| {
        let mut rhs = rhs;
        for (j, map) in maps.iter().enumerate() {
            let v = coeffs(j);
            if v == 0.0 {
                continue;
            }
            match *map {
                VarMap::Shifted { col, offset } => {
                    a[(r, col)] += v;
                    rhs -= v * offset;
                }
                VarMap::Mirrored { col, offset } => {
                    a[(r, col)] -= v;
                    rhs -= v * offset;
                }
                VarMap::Split { pos, neg } => {
                    a[(r, pos)] += v;
                    a[(r, neg)] -= v;
                }
            }
        }
        b[r] = rhs;
    };
    for i in 0..lp.a_ub.nrows() {
        fill(i, &|j| lp.a_ub[(i, j)], lp.b_ub[i], &mut a, &mut b);
        a[(i, slack0 + i)] = 1.0;
    }
    for (k, &(col, cap)) in upper_rows.iter().enumerate() {
        let r = lp.a_ub.nrows() + k;
        a[(r, col)] = 1.0;
        a[(r, slack0 + r)] = 1.0;
        b[r] = cap;
    }
    for i in 0..m_eq {
        fill(m_ub + i, &|j| lp.a_eq[(i, j)], lp.b_eq[i], &mut a, &mut b);
    }
    let mut cost = vec![0.0; total];
    for (j, map) in maps.iter().enumerate() {
        let v = lp.c[j];
        match *map {
            VarMap::Shifted { col, .. } => cost[col] += v,
            VarMap::Mirrored { col, .. } => cost[col] -= v,
            VarMap::Split { pos, neg } => {
                cost[pos] += v;
                cost[neg] -= v;
            }
        }
    }

    // Phase 1 tableau with one artificial per row.
    let art0 = total;
    let cols = total + rows;
    let mut t = DMatrix::zeros(rows + 1, cols + 1);
    for i in 0..rows {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..total {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, art0 + i)] = 1.0;
        t[(i, cols)] = sign * b[i];
    }
    for j in 0..=cols {
        if j >= art0 && j < cols {
            continue;
        }
        let s: f64 = (0..rows).map(|i| t[(i, j)]).sum();
        t[(rows, j)] = -s;
    }
    let mut tab = Tableau {
        t,
        basis: (art0..art0 + rows).collect(),
        rows,
        cols,
    };
    tab.optimize(&|_| true)?;
    let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if -tab.t[(rows, cols)] > FEAS_TOL * scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::NAN,
        });
    }
    // Drive remaining artificials out of the basis.
    let mut keep_rows: Vec<bool> = vec![true; rows];
    for r in 0..rows {
        if tab.basis[r] >= art0 {
            let col = (0..total)
                .filter(|&j| tab.t[(r, j)].abs() > 1e-9)
                .max_by(|&i, &j| tab.t[(r, i)].abs().total_cmp(&tab.t[(r, j)].abs()));
            match col {
                Some(j) => tab.pivot(r, j),
                None => keep_rows[r] = false,
            }
        }
    }
    // Phase 2 objective row over the structural + slack columns.
    for j in 0..=cols {
        tab.t[(rows, j)] = if j < total { cost[j] } else { 0.0 };
    }
    for r in 0..rows {
        let bj = tab.basis[r];
        if !keep_rows[r] || bj >= art0 {
            continue;
        }
        let cb = tab.t[(rows, bj)];
        if cb != 0.0 {
            for j in 0..=cols {
                let v = tab.t[(r, j)];
                tab.t[(rows, j)] -= cb * v;
            }
        }
    }
    if !tab.optimize(&|j| j < total)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
        });
    }
    let mut y = vec![0.0; total];
    for r in 0..rows {
        if keep_rows[r] && tab.basis[r] < total {
            y[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|map| match *map {
            VarMap::Shifted { col, offset } => offset + y[col],
            VarMap::Mirrored { col, offset } => offset - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
    })
}
