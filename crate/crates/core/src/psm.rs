//! Projected subgradient method `x^{k+1} = Π_S(x^k − α_k d^k)`.
//!
//! Iterations are numbered from 1 and `x¹` is the initial point, so the
//! record with index `k` holds `x^k`, `F_τ(x^k)`, and the step `α_k` taken
//! from it. The last record always holds the final iterate with `α = 0`.

use std::io::{BufRead, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::linalg::l0_norm;
use crate::model::DenseVector;
use crate::penalty::PenaltyObjective;
use crate::sparse::project_sparse;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepsizeRule {
    /// `α_k = α`.
    Constant { alpha: f64 },
    /// `α_k = s̄ / ‖d^k‖`.
    Normalized { scale: f64 },
    /// `α_k = a / (k + b)`.
    Diminishing { a: f64, b: f64 },
    /// `α_k = s_k (F^k − ρ) / ‖d^k‖²` with constant relaxation `s_k = relax ∈ (0, 2)`.
    PolyakLike { rho: f64, relax: f64 },
}

impl StepsizeRule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepsizeRule::Constant { alpha } => alpha > 0.0 && alpha.is_finite(),
            StepsizeRule::Normalized { scale } => scale > 0.0 && scale.is_finite(),
            StepsizeRule::Diminishing { a, b } => a > 0.0 && a.is_finite() && b >= 0.0 && b.is_finite(),
            StepsizeRule::PolyakLike { rho, relax } => rho.is_finite() && relax > 0.0 && relax < 2.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid stepsize rule {self:?}")))
        }
    }

    /// Step for iteration `k` (1-based) given `F^k` and `‖d^k‖ > 0`.
    pub fn step(&self, k: usize, value: f64, grad_norm: f64) -> f64 {
        match *self {
            StepsizeRule::Constant { alpha } => alpha,
            StepsizeRule::Normalized { scale } => scale / grad_norm,
            StepsizeRule::Diminishing { a, b } => a / (k as f64 + b),
            StepsizeRule::PolyakLike { rho, relax } => relax * (value - rho) / (grad_norm * grad_norm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once `‖x^{k+1} − x^k‖ ≤ stop_tol`; `None` runs all `max_iters` iterations.
    pub stop_tol: Option<f64>,
    /// `x¹`; zero when absent. Must lie in `S`.
    pub initial_point: Option<Vec<f64>>,
    pub record_every: usize,
    /// Store the iterate in each record.
    pub keep_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            stop_tol: Some(1e-8),
            initial_point: None,
            record_every: 1,
            keep_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be >= 1".into()));
        }
        if let Some(t) = self.stop_tol {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("stop_tol must be >= 0, got {t}")));
            }
        }
        Ok(())
    }

    /// Initial point checked against the dimension and the sparsity level.
    pub fn start(&self, n: usize, s: usize) -> Result<DenseVector> {
        let x = match &self.initial_point {
            Some(v) if v.len() != n => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                })
            }
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(n),
        };
        if l0_norm(&x) > s {
            return Err(Error::Config(format!(
                "initial point has {} nonzeros, more than s={s}",
                l0_norm(&x)
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial point is not finite".into()));
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub x: Option<DenseVector>,
    pub f: f64,
    /// `min_{i ≤ k} F^i`.
    pub best_f: f64,
    pub alpha: f64,
    pub grad_norm: f64,
    /// `‖x^k − x*‖²` when a reference point was supplied.
    pub dist_sq: Option<f64>,
    pub residual_g: f64,
    pub residual_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Stationary,
    TargetReached,
}

#[derive(Debug, Clone)]
pub struct PsmResult {
    pub x: DenseVector,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    /// Number of steps taken.
    pub iterations: usize,
}

pub fn run_psm(
    objective: &PenaltyObjective,
    rule: StepsizeRule,
    cfg: &SolverConfig,
    reference: Option<&DenseVector>,
) -> Result<PsmResult> {
    rule.validate()?;
    cfg.validate()?;
    let n = objective.n();
    let s = objective.problem().sparsity();
    if let Some(r) = reference {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.len(),
            });
        }
    }
    let mut x = cfg.start(n, s)?;
    let mut trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut iterations = 0;
    let record = |k: usize, x: &DenseVector, e: &crate::penalty::PenaltyEval, best: f64, alpha: f64| TraceRecord {
        k,
        x: cfg.keep_iterates.then(|| x.clone()),
        f: e.value,
        best_f: best,
        alpha,
        grad_norm: e.selection.d.norm(),
        dist_sq: reference.map(|r| (x - r).norm_squared()),
        residual_g: e.gplus_norm1,
        residual_h: e.h_norm1,
    };

    let mut termination = Termination::MaxIters;
    let mut k = 1;
    loop {
        let eval = objective.evaluate(&x)?;
        best = best.min(eval.value);
        let d = &eval.selection.d;
        let grad_norm = d.norm();
        if k > cfg.max_iters {
            trace.push(record(k, &x, &eval, best, 0.0));
            break;
        }
        if grad_norm == 0.0 {
            termination = Termination::Stationary;
            trace.push(record(k, &x, &eval, best, 0.0));
            break;
        }
        if let StepsizeRule::PolyakLike { rho, .. } = rule {
            if eval.value <= rho {
                termination = Termination::TargetReached;
                trace.push(record(k, &x, &eval, best, 0.0));
                break;
            }
        }
        let alpha = rule.step(k, eval.value, grad_norm);
        if k == 1 || k % cfg.record_every == 0 {
            trace.push(record(k, &x, &eval, best, alpha));
        }
        let next = project_sparse(&(&x - d * alpha), s);
        let moved = (&next - &x).norm();
        x = next;
        iterations = k;
        k += 1;
        if let Some(tol) = cfg.stop_tol {
            if moved <= tol {
                termination = Termination::Converged;
                let eval = objective.evaluate(&x)?;
                best = best.min(eval.value);
                trace.push(record(k, &x, &eval, best, 0.0));
                break;
            }
        }
    }
    Ok(PsmResult {
        x,
        trace,
        termination,
        iterations,
    })
}

pub const TRACE_HEADER: &str = "k,F,best_F,alpha,grad_norm,dist_sq,residual_g,residual_h";

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the trace CSV; `bounds` adds `bound_new,bound_old` columns.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &[TraceRecord], bounds: Option<(&[f64], &[f64])>) -> Result<()> {
    if let Some((a, b)) = bounds {
        if a.len() != trace.len() || b.len() != trace.len() {
            return Err(Error::DimensionMismatch {
                expected: trace.len(),
                got: a.len().min(b.len()),
            });
        }
        writeln!(out, "{TRACE_HEADER},bound_new,bound_old")?;
    } else {
        writeln!(out, "{TRACE_HEADER}")?;
    }
    for (i, r) in trace.iter().enumerate() {
        let dist = r.dist_sq.map(fmt_float).unwrap_or_default();
        write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            fmt_float(r.f),
            fmt_float(r.best_f),
            fmt_float(r.alpha),
            fmt_float(r.grad_norm),
            dist,
            fmt_float(r.residual_g),
            fmt_float(r.residual_h)
        )?;
        if let Some((a, b)) = bounds {
            write!(out, ",{},{}", fmt_float(a[i]), fmt_float(b[i]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a trace CSV written by [`write_trace_csv`]; extra columns are ignored.
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty trace file".into()))??;
    if !header.starts_with(TRACE_HEADER) {
        return Err(Error::Parse(format!("unexpected trace header {header:?}")));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 8 {
            return Err(Error::Parse(format!(
                "trace line {} has {} columns",
                lineno + 2,
                cols.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            cols[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("trace line {} column {}: {e}", lineno + 2, i + 1)))
        };
        let k = cols[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("trace line {}: {e}", lineno + 2)))?;
        out.push(TraceRecord {
            k,
            x: None,
            f: num(1)?,
            best_f: num(2)?,
            alpha: num(3)?,
            grad_norm: num(4)?,
            dist_sq: if cols[5].trim().is_empty() { None } else { Some(num(5)?) },
            residual_g: num(6)?,
            residual_h: num(7)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;

    use super::*;
    use crate::model::{ProblemInstance, QuadraticMap, StructuredProblem};

    fn shifted_ball(center: &[f64], s: usize) -> PenaltyObjective {
        // ½‖x − c‖²
        let c = DVector::from_row_slice(center);
        let n = c.len();
        let f = Arc::new(QuadraticMap {
            q: DMatrix::identity(n, n),
            c: -&c,
            r: 0.5 * c.norm_squared(),
        });
        PenaltyObjective::new(ProblemInstance::unconstrained(f, s).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn constant_step_finds_largest_coordinate() {
        let p = shifted_ball(&[3.0, 1.0, 2.0], 1);
        let res = run_psm(
            &p,
            StepsizeRule::Constant { alpha: 0.2 },
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(res.termination, Termination::Converged);
        assert!((&res.x - DVector::from_vec(vec![3.0, 0.0, 0.0])).amax() < 1e-7);
    }

    #[test]
    fn polyak_at_optimum_stops_immediately() {
        let sp = crate::corpus::box_qp6();
        let p = PenaltyObjective::new(sp.to_instance().unwrap(), 10.0).unwrap();
        let x_star = crate::oracle::solve_global(&p, crate::oracle::Mode::Penalized).unwrap();
        let cfg = SolverConfig {
            initial_point: Some(x_star.x_star.iter().cloned().collect()),
            ..SolverConfig::default()
        };
        let l = crate::bounds::lipschitz_on_ball(&sp, 10.0, &x_star.x_star, 1.0);
        let rho = x_star.f_star + l * x_star.x_star.norm();
        let res = run_psm(&p, StepsizeRule::PolyakLike { rho, relax: 1.0 }, &cfg, None).unwrap();
        assert_eq!(res.termination, Termination::TargetReached);
        assert_eq!(res.iterations, 0);
        assert_eq!(res.trace.len(), 1);
    }

    #[test]
    fn diminishing_on_ex1_reaches_zero() {
        let sp = crate::corpus::ex1_near();
        let p = PenaltyObjective::new(sp.to_instance().unwrap(), 10.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 20_000,
            stop_tol: None,
            ..SolverConfig::default()
        };
        let res = run_psm(&p, StepsizeRule::Diminishing { a: 1.0, b: 1.0 }, &cfg, None).unwrap();
        let last = res.trace.last().unwrap();
        assert!(last.best_f < 1e-3, "{}", last.best_f);
        assert!(res.trace.windows(2).all(|w| w[1].best_f <= w[0].best_f));
        let rep = p.problem().evaluate_feasibility(&res.x).unwrap();
        assert!(rep.gplus_norm1 < 1e-3 && rep.support_size <= 3);
    }

    #[test]
    fn iterates_follow_the_update_rule() {
        let sp: StructuredProblem = crate::corpus::qp10();
        let p = PenaltyObjective::new(sp.to_instance().unwrap(), 2.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 50,
            stop_tol: None,
            keep_iterates: true,
            ..SolverConfig::default()
        };
        let rule = StepsizeRule::Diminishing { a: 0.5, b: 1.0 };
        let res = run_psm(&p, rule, &cfg, None).unwrap();
        assert_eq!(res.trace.len(), 51);
        for w in res.trace.windows(2) {
            let x = w[0].x.as_ref().unwrap();
            let d = p.select_subgradient(x).unwrap().d;
            let expect = project_sparse(&(x - d * w[0].alpha), 3);
            assert_eq!(&expect, w[1].x.as_ref().unwrap());
            assert_eq!(w[0].alpha, 0.5 / (w[0].k as f64 + 1.0));
        }
        assert_eq!(res.trace.last().unwrap().alpha, 0.0);
        assert_eq!(res.trace[0].k, 1);
    }

    #[test]
    fn runs_are_bit_identical() {
        let sp = crate::corpus::qp10();
        let p = PenaltyObjective::new(sp.to_instance().unwrap(), 2.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 300,
            ..SolverConfig::default()
        };
        let rule = StepsizeRule::Normalized { scale: 0.05 };
        let a = run_psm(&p, rule, &cfg, None).unwrap();
        let b = run_psm(&p, rule, &cfg, None).unwrap();
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        write_trace_csv(&mut ta, &a.trace, None).unwrap();
        write_trace_csv(&mut tb, &b.trace, None).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn stationary_start_terminates() {
        let p = shifted_ball(&[0.0, 0.0, 0.0], 1);
        let res = run_psm(
            &p,
            StepsizeRule::Normalized { scale: 1.0 },
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(res.termination, Termination::Stationary);
    }

    #[test]
    fn rejects_bad_configuration() {
        let p = shifted_ball(&[1.0, 2.0, 3.0], 1);
        let cfg = SolverConfig::default();
        assert!(run_psm(&p, StepsizeRule::Constant { alpha: 0.0 }, &cfg, None).is_err());
        assert!(run_psm(&p, StepsizeRule::PolyakLike { rho: 0.0, relax: 2.0 }, &cfg, None).is_err());
        let dense = SolverConfig {
            initial_point: Some(vec![1.0, 1.0, 0.0]),
            ..SolverConfig::default()
        };
        assert!(run_psm(&p, StepsizeRule::Constant { alpha: 0.1 }, &dense, None).is_err());
    }

    #[test]
    fn thinned_trace_keeps_final_record() {
        let sp = crate::corpus::qp10();
        let p = PenaltyObjective::new(sp.to_instance().unwrap(), 2.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 95,
            stop_tol: None,
            record_every: 10,
            ..SolverConfig::default()
        };
        let res = run_psm(&p, StepsizeRule::Constant { alpha: 0.01 }, &cfg, None).unwrap();
        let ks: Vec<usize> = res.trace.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![1, 10, 20, 30, 40, 50, 60, 70, 80, 90, 96]);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let sp = crate::corpus::qp10();
        let p = PenaltyObjective::new(sp.to_instance().unwrap(), 2.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 40,
            ..SolverConfig::default()
        };
        let reference = DVector::from_element(10, 0.1);
        let res = run_psm(&p, StepsizeRule::Constant { alpha: 0.05 }, &cfg, Some(&reference)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &res.trace, None).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(TRACE_HEADER));
        let back = read_trace_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, res.trace);
    }
}
