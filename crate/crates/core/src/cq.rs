//! Constraint-qualification and stationarity audits at a point `x* ∈ Ω ∩ S`.
//!
//! With `Γ* = supp(x*)`, `𝓘(x*)` the active inequalities and `𝓙(x*)` the
//! size-`s` supersets of `Γ*`:
//!
//! * CC-MFCQ holds when for every `J ∈ 𝓙(x*)` the restricted equality
//!   gradients `∇_J h_j` are linearly independent and some `d ∈ S_J` has
//!   `⟨∇g_i, d⟩ < 0` (`i ∈ 𝓘`) and `⟨∇h_j, d⟩ = 0`. The second part is the LP
//!   `max t  s.t. ⟨∇_J g_i, d⟩ + t ≤ 0, ⟨∇_J h_j, d⟩ = 0, −1 ≤ d ≤ 1`,
//!   which passes when `t* > tol`;
//! * restricted MFCQ is the same test on `J = Γ*`, classical MFCQ on `J = [n]`;
//! * the KKT test minimizes the sup-norm of `∇f + Σλ_i∇g_i + Σμ_j∇h_j` over the
//!   coordinates where the Fréchet normal cone of `S` forces it to vanish;
//! * the pseudonormality search looks for nonzero multipliers whose
//!   combination lies in the limiting normal cone of `S`. The sequence
//!   condition of the definition is never decided.
//!
//! Indices in reports are 0-based.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{binomial, numerical_rank};
use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::model::{DenseVector, ProblemInstance};
use crate::sparse::{supersets, SupportSet};
use crate::{Error, Result};

pub const MAX_SUPERSETS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqOptions {
    /// Rank threshold relative to the largest column norm.
    pub rank_tol: f64,
    /// Strict-slack threshold on `t*`.
    pub slack_tol: f64,
    /// `|g_i(x*)| ≤ activity_tol` marks constraint `i` active.
    pub activity_tol: f64,
    /// Residual allowed when checking `x* ∈ Ω`.
    pub feasibility_tol: f64,
    /// KKT certificate threshold on the stationarity residual.
    pub kkt_tol: f64,
}

impl Default for CqOptions {
    fn default() -> Self {
        Self {
            rank_tol: 1e-10,
            slack_tol: 1e-8,
            activity_tol: 1e-9,
            feasibility_tol: 1e-9,
            kkt_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SupersetResult {
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    pub rank_h: usize,
    pub rank_ok: bool,
    pub t_star: f64,
    pub d: Vec<f64>,
    /// No active inequalities: the strict part holds trivially.
    pub vacuous: bool,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CqReport {
    pub point: Vec<f64>,
    pub gamma: Vec<usize>,
    pub active_set: Vec<usize>,
    pub supersets: Vec<SupersetResult>,
    pub cc_mfcq: bool,
    pub restricted_mfcq: bool,
    pub classical_mfcq: bool,
    pub restricted: SupersetResult,
    pub classical: SupersetResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktCertificate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KktCertificate {
    /// Length `m`; zero off the active set.
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// `max_{k∈R} |(∇f + Σλ∇g + Σμ∇h)_k|`.
    pub residual: f64,
    /// Coordinates `R` where the stationarity vector must vanish.
    pub checked_coordinates: Vec<usize>,
    /// `max_i |λ_i g_i(x*)|`.
    pub complementarity_residual: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PositiveIndependence {
    pub independent: bool,
    /// Witness multipliers when dependent (`λ ≥ 0`, `μ` free, not all zero).
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum PseudonormalityVerdict {
    /// No nonzero multipliers meet the normal-cone and sign conditions.
    Certified,
    /// Such multipliers exist; the sequence condition is left undecided.
    Inconclusive {
        #[serde(rename = "J")]
        j: Vec<usize>,
        lambda: Vec<f64>,
        mu: Vec<f64>,
    },
}

impl PseudonormalityVerdict {
    pub fn certified(&self) -> bool {
        matches!(self, PseudonormalityVerdict::Certified)
    }
}

struct PointData {
    gamma: SupportSet,
    active: Vec<usize>,
    g: DenseVector,
    jg: DMatrix<f64>,
    jh: DMatrix<f64>,
}

fn point_data(prob: &ProblemInstance, x: &DenseVector, opts: &CqOptions) -> Result<PointData> {
    prob.check_dim(x)?;
    let rep = prob.evaluate_feasibility(x)?;
    if rep.support_size > prob.sparsity() {
        return Err(Error::Precondition(format!(
            "point has {} nonzeros, more than s={}",
            rep.support_size,
            prob.sparsity()
        )));
    }
    if rep.gplus_norm1 > opts.feasibility_tol || rep.h_norm1 > opts.feasibility_tol {
        return Err(Error::Precondition(format!(
            "point violates the constraints: ||g+||_1 = {:e}, ||h||_1 = {:e}",
            rep.gplus_norm1, rep.h_norm1
        )));
    }
    Ok(PointData {
        gamma: SupportSet::of(x),
        active: prob.active_inequalities(x, opts.activity_tol)?,
        g: prob.ineq_values(x)?,
        jg: prob.ineq_jacobian(x)?,
        jh: prob.eq_jacobian(x)?,
    })
}

fn columns(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

fn superset_guard(n: usize, gamma: usize, s: usize) -> Result<()> {
    let count = binomial(n - gamma, s - gamma);
    if count > MAX_SUPERSETS {
        return Err(Error::TooLarge(format!(
            "{count} supersets to enumerate exceeds {MAX_SUPERSETS}"
        )));
    }
    Ok(())
}

/// Strict linearized feasibility on `S_J`.
fn mfcq_on(j: &SupportSet, data: &PointData, opts: &CqOptions) -> Result<SupersetResult> {
    let idx = j.indices();
    let k = idx.len();
    let p = data.jh.nrows();
    let all_eq: Vec<usize> = (0..p).collect();
    let hj = columns(&data.jh, &all_eq, idx);
    let rank_h = numerical_rank(&hj, opts.rank_tol);
    let rank_ok = rank_h == p;
    if data.active.is_empty() {
        return Ok(SupersetResult {
            j: idx.to_vec(),
            rank_h,
            rank_ok,
            t_star: 0.0,
            d: vec![0.0; k],
            vacuous: true,
            passes: rank_ok,
        });
    }
    let mut c = vec![0.0; k + 1];
    c[k] = -1.0;
    let mut lp = LpProblem::new(c);
    lp.bounds = vec![(-1.0, 1.0); k];
    lp.bounds.push((f64::NEG_INFINITY, f64::INFINITY));
    for &i in &data.active {
        let mut row: Vec<f64> = idx.iter().map(|&col| data.jg[(i, col)]).collect();
        row.push(1.0);
        lp.push_ub(&row, 0.0);
    }
    for jrow in 0..p {
        let mut row: Vec<f64> = idx.iter().map(|&col| data.jh[(jrow, col)]).collect();
        row.push(0.0);
        lp.push_eq(&row, 0.0);
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        // d = 0, t = 0 is always feasible and t is bounded by the box.
        return Err(Error::Precondition(format!("CC-MFCQ LP ended {:?}", sol.status)));
    }
    let t_star = sol.x[k];
    Ok(SupersetResult {
        j: idx.to_vec(),
        rank_h,
        rank_ok,
        t_star,
        d: sol.x[..k].to_vec(),
        vacuous: false,
        passes: rank_ok && t_star > opts.slack_tol,
    })
}

pub fn check_cc_mfcq(prob: &ProblemInstance, x_star: &DenseVector, opts: &CqOptions) -> Result<CqReport> {
    let data = point_data(prob, x_star, opts)?;
    let n = prob.n();
    let s = prob.sparsity();
    superset_guard(n, data.gamma.len(), s)?;
    let js = supersets(&data.gamma, s);
    let results: Vec<SupersetResult> = js.par_iter().map(|j| mfcq_on(j, &data, opts)).collect::<Result<_>>()?;
    let restricted = mfcq_on(&data.gamma, &data, opts)?;
    let classical = mfcq_on(&SupportSet::full(n), &data, opts)?;
    Ok(CqReport {
        point: x_star.iter().cloned().collect(),
        gamma: data.gamma.indices().to_vec(),
        active_set: data.active.clone(),
        cc_mfcq: results.iter().all(|r| r.passes),
        restricted_mfcq: restricted.passes,
        classical_mfcq: classical.passes,
        supersets: results,
        restricted,
        classical,
        kkt: None,
    })
}

/// Whether `{ineq_grads restricted to J}` (nonnegative multipliers) together
/// with `{eq_grads restricted to J}` (free multipliers) are positively independent.
pub fn check_positive_independence(
    ineq_grads: &[DenseVector],
    eq_grads: &[DenseVector],
    restrict_to: &SupportSet,
) -> Result<PositiveIndependence> {
    let idx = restrict_to.indices();
    let (m, p) = (ineq_grads.len(), eq_grads.len());
    for gr in ineq_grads.iter().chain(eq_grads) {
        if gr.len() != restrict_to.ambient() {
            return Err(Error::DimensionMismatch {
                expected: restrict_to.ambient(),
                got: gr.len(),
            });
        }
    }
    let h = DMatrix::from_fn(idx.len(), p, |a, j| eq_grads[j][idx[a]]);
    if p > 0 && numerical_rank(&h, 1e-10) < p {
        // Linear dependence among the equality gradients: null vector of h.
        let svd = h.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let k = (0..svd.singular_values.len())
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .unwrap_or(0);
        let mu: Vec<f64> = if svd.singular_values.len() < p {
            null_vector_wide(&h)
        } else {
            v_t.row(k).iter().cloned().collect()
        };
        return Ok(PositiveIndependence {
            independent: false,
            lambda: vec![0.0; m],
            mu,
        });
    }
    if m == 0 {
        return Ok(PositiveIndependence {
            independent: true,
            lambda: Vec::new(),
            mu: Vec::new(),
        });
    }
    let mut lp = LpProblem::new(vec![0.0; m + p]);
    lp.bounds = (0..m)
        .map(|_| (0.0, f64::INFINITY))
        .chain((0..p).map(|_| (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for &col in idx {
        let row: Vec<f64> = ineq_grads
            .iter()
            .map(|g| g[col])
            .chain(eq_grads.iter().map(|e| e[col]))
            .collect();
        lp.push_eq(&row, 0.0);
    }
    let mut norm_row = vec![1.0; m];
    norm_row.extend(std::iter::repeat_n(0.0, p));
    lp.push_eq(&norm_row, 1.0);
    let sol = solve_lp(&lp)?;
    Ok(match sol.status {
        LpStatus::Optimal => PositiveIndependence {
            independent: false,
            lambda: sol.x[..m].to_vec(),
            mu: sol.x[m..].to_vec(),
        },
        _ => PositiveIndependence {
            independent: true,
            lambda: Vec::new(),
            mu: Vec::new(),
        },
    })
}

/// A nonzero null vector of a matrix with more columns than rows.
fn null_vector_wide(h: &DMatrix<f64>) -> Vec<f64> {
    let p = h.ncols();
    let padded = DMatrix::from_fn(p, p, |i, j| if i < h.nrows() { h[(i, j)] } else { 0.0 });
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let k = (0..p)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap();
    v_t.row(k).iter().cloned().collect()
}

pub fn check_kkt(prob: &ProblemInstance, x_star: &DenseVector, opts: &CqOptions) -> Result<KktCertificate> {
    let data = point_data(prob, x_star, opts)?;
    let n = prob.n();
    let (m, p) = (prob.m(), prob.p());
    let grad = prob.gradient(x_star)?;
    let coords: Vec<usize> = if data.gamma.len() == prob.sparsity() {
        data.gamma.indices().to_vec()
    } else {
        (0..n).collect()
    };
    let na = data.active.len();
    // Variables: λ_𝓘 ≥ 0, μ free, t ≥ 0.
    let nv = na + p + 1;
    let mut c = vec![0.0; nv];
    c[nv - 1] = 1.0;
    let mut lp = LpProblem::new(c);
    lp.bounds = (0..na)
        .map(|_| (0.0, f64::INFINITY))
        .chain((0..p).map(|_| (f64::NEG_INFINITY, f64::INFINITY)))
        .chain(std::iter::once((0.0, f64::INFINITY)))
        .collect();
    for &k in &coords {
        let mut row: Vec<f64> = data
            .active
            .iter()
            .map(|&i| data.jg[(i, k)])
            .chain((0..p).map(|j| data.jh[(j, k)]))
            .collect();
        row.push(-1.0);
        lp.push_ub(&row, -grad[k]);
        let mut neg: Vec<f64> = row[..nv - 1].iter().map(|v| -v).collect();
        neg.push(-1.0);
        lp.push_ub(&neg, grad[k]);
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Precondition(format!("KKT LP ended {:?}", sol.status)));
    }
    let mut lambda = vec![0.0; m];
    for (a, &i) in data.active.iter().enumerate() {
        lambda[i] = sol.x[a];
    }
    let mu = sol.x[na..na + p].to_vec();
    let mut v = grad.clone();
    if m > 0 {
        v += data.jg.transpose() * DVector::from_column_slice(&lambda);
    }
    if p > 0 {
        v += data.jh.transpose() * DVector::from_column_slice(&mu);
    }
    let residual = coords.iter().map(|&k| v[k].abs()).fold(0.0, f64::max);
    let complementarity = (0..m).map(|i| (lambda[i] * data.g[i]).abs()).fold(0.0, f64::max);
    Ok(KktCertificate {
        lambda,
        mu,
        residual,
        checked_coordinates: coords,
        complementarity_residual: complementarity,
        holds: residual <= opts.kkt_tol,
    })
}

/// Searches each `J ∈ 𝓙(x*)` for nonzero `(λ, μ)`, `λ ≥ 0` supported on the
/// active set, with `Σλ_i∇g_i + Σμ_j∇h_j` vanishing on `J`.
pub fn search_cc_pseudonormality_violation(
    prob: &ProblemInstance,
    x_star: &DenseVector,
    opts: &CqOptions,
) -> Result<PseudonormalityVerdict> {
    let data = point_data(prob, x_star, opts)?;
    let n = prob.n();
    let s = prob.sparsity();
    superset_guard(n, data.gamma.len(), s)?;
    let ineq: Vec<DenseVector> = data.active.iter().map(|&i| data.jg.row(i).transpose()).collect();
    let eq: Vec<DenseVector> = (0..prob.p()).map(|j| data.jh.row(j).transpose()).collect();
    if ineq.is_empty() && eq.is_empty() {
        return Ok(PseudonormalityVerdict::Certified);
    }
    for j in supersets(&data.gamma, s) {
        let pi = check_positive_independence(&ineq, &eq, &j)?;
        if !pi.independent {
            let mut lambda = vec![0.0; prob.m()];
            for (a, &i) in data.active.iter().enumerate() {
                lambda[i] = pi.lambda[a];
            }
            return Ok(PseudonormalityVerdict::Inconclusive {
                j: j.indices().to_vec(),
                lambda,
                mu: pi.mu,
            });
        }
    }
    Ok(PseudonormalityVerdict::Certified)
}
