//! Closed-form convergence bounds for the projected subgradient methods and
//! conformance checks of solver traces against them.
//!
//! Notation: `L` Lipschitz constant of `F_τ`, `ε ≥ ‖x¹ − x*‖`, `x*` a
//! global minimizer of `F_τ` over `S` with value `F*`, `α_i` the realized
//! steps. Every bound comes as a pair (`new`, `old`); the old form is the
//! looser prior estimate, kept for comparison.
//!
//! | quantity                        | new                                   | old                |
//! |---------------------------------|---------------------------------------|--------------------|
//! | `‖x^{k+1} − x*‖²`               | `ε² + L²Σα² + 2L‖x*‖Σα`               | `6L²Σα²` instead   |
//! | `F̲^k − F*`                      | `(ε² + L²Σα²)/(2Σα) + L‖x*‖`          | `3L²Σα²/Σα`        |
//! | SPSM, `β` fixed                 | `ε²/(2βk) + βM₂/2 + M₁‖x*‖`           | `3βM₂`             |
//! | SPSM, `β_k = 2/(σ(k+1))`, dist  | `4M₂/(σ²(k+1)) + 2M₁‖x*‖/σ`           | `24M₂/(σ²(k+1))`   |
//! | SPSM, weighted-average gap      | `2M₂/(σ(k+1)) + M₁‖x*‖`               | `12M₂/(σ(k+1))`    |

use serde::Serialize;

use crate::linalg::{spectral_norm, CompensatedSum};
use crate::model::{DenseVector, StructuredProblem};
use crate::penalty::PenaltyObjective;
use crate::psm::TraceRecord;
use crate::{Error, Result};

/// Multiplicative tolerance applied before counting a violation.
pub const REL_TOL: f64 = 1e-9;
/// Additive tolerance applied before counting a violation.
pub const ABS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundParameters {
    pub lipschitz: f64,
    pub eps_init: f64,
    pub x_star_norm: f64,
    pub f_star: f64,
    pub sigma: Option<f64>,
    /// `α_1, α_2, …` (or `β_i` for the stochastic method).
    pub stepsizes: Vec<f64>,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
}

impl BoundParameters {
    pub fn new(lipschitz: f64, eps_init: f64, x_star_norm: f64, f_star: f64) -> Result<Self> {
        let bp = Self {
            lipschitz,
            eps_init,
            x_star_norm,
            f_star,
            sigma: None,
            stepsizes: Vec::new(),
            m1: None,
            m2: None,
        };
        bp.validate()?;
        Ok(bp)
    }

    pub fn with_stepsizes(mut self, alphas: Vec<f64>) -> Self {
        self.stepsizes = alphas;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn with_moments(mut self, m1: f64, m2: f64) -> Self {
        self.m1 = Some(m1);
        self.m2 = Some(m2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::Config(format!(
                "Lipschitz constant must be > 0, got {}",
                self.lipschitz
            )));
        }
        if !(self.eps_init >= 0.0) || !(self.x_star_norm >= 0.0) || !self.f_star.is_finite() {
            return Err(Error::Config("need eps >= 0, ||x*|| >= 0 and finite F*".into()));
        }
        if self.stepsizes.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Config("stepsizes must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k > self.stepsizes.len() {
            return Err(Error::Config(format!(
                "k={k} exceeds the {} available stepsizes",
                self.stepsizes.len()
            )));
        }
        Ok(())
    }
}

/// Prefix sums `Σ_{i≤k} α_i` and `Σ_{i≤k} α_i²` for `k = 0..=len`, compensated.
#[derive(Debug, Clone)]
pub struct StepSums {
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl StepSums {
    pub fn new(alphas: &[f64]) -> Self {
        let mut s = CompensatedSum::new();
        let mut s2 = CompensatedSum::new();
        let mut sum = Vec::with_capacity(alphas.len() + 1);
        let mut sum_sq = Vec::with_capacity(alphas.len() + 1);
        sum.push(0.0);
        sum_sq.push(0.0);
        for &a in alphas {
            s.add(a);
            s2.add(a * a);
            sum.push(s.value());
            sum_sq.push(s2.value());
        }
        Self { sum, sum_sq }
    }
}

fn distance_pair(bp: &BoundParameters, sum: f64, sum_sq: f64) -> (f64, f64) {
    let l = bp.lipschitz;
    let eps2 = bp.eps_init * bp.eps_init;
    let tail = 2.0 * l * bp.x_star_norm * sum;
    (eps2 + l * l * sum_sq + tail, eps2 + 6.0 * l * l * sum_sq + tail)
}

fn gap_pair(bp: &BoundParameters, sum: f64, sum_sq: f64) -> Result<(f64, f64)> {
    if !(sum > 0.0) {
        return Err(Error::UndefinedBound("stepsizes sum to zero".into()));
    }
    let l = bp.lipschitz;
    let eps2 = bp.eps_init * bp.eps_init;
    let head = eps2 / (2.0 * sum);
    let tail = l * bp.x_star_norm;
    Ok((
        head + l * l * sum_sq / (2.0 * sum) + tail,
        head + 3.0 * l * l * sum_sq / sum + tail,
    ))
}

/// Bound on `‖x^{k+1} − x*‖²` after `k` steps.
pub fn bound_psm_distance(bp: &BoundParameters, k: usize) -> Result<(f64, f64)> {
    bp.check_k(k)?;
    let sums = StepSums::new(&bp.stepsizes[..k]);
    Ok(distance_pair(bp, sums.sum[k], sums.sum_sq[k]))
}

/// Bound on `F̲^k − F*`, the best value among the first `k` iterates.
pub fn bound_psm_gap(bp: &BoundParameters, k: usize) -> Result<(f64, f64)> {
    bp.check_k(k)?;
    let sums = StepSums::new(&bp.stepsizes[..k]);
    gap_pair(bp, sums.sum[k], sums.sum_sq[k])
}

/// Constant step `α` for `k` steps.
pub fn corollary_constant(eps: f64, lipschitz: f64, x_star_norm: f64, alpha: f64, k: usize) -> f64 {
    eps * eps / (2.0 * k as f64 * alpha) + alpha * lipschitz * lipschitz / 2.0 + lipschitz * x_star_norm
}

/// Normalized step `s̄/‖d‖` with `‖d‖` replaced by `L`.
pub fn corollary_normalized(eps: f64, lipschitz: f64, x_star_norm: f64, scale: f64, k: usize) -> f64 {
    eps * eps * lipschitz / (2.0 * k as f64 * scale) + scale * lipschitz / 2.0 + lipschitz * x_star_norm
}

/// Limit of the gap bound under square-summable, non-summable steps.
pub fn corollary_diminishing_limit(lipschitz: f64, x_star_norm: f64) -> f64 {
    lipschitz * x_star_norm
}

/// Strongly convex bounds for `k = 0..=len`: `(distance, gap)` series. The gap
/// entry at `k = 0` is `NaN` (no iterate has been compared yet).
fn strongly_convex_series(bp: &BoundParameters) -> Result<Vec<(f64, f64)>> {
    let sigma = match bp.sigma {
        Some(s) if s > 0.0 => s,
        _ => return Err(Error::Config("strongly convex bound needs sigma > 0".into())),
    };
    if let Some((i, a)) = bp
        .stepsizes
        .iter()
        .enumerate()
        .find(|(_, a)| !(**a > 0.0 && sigma * **a < 1.0))
    {
        return Err(Error::Precondition(format!(
            "step {} = {a} outside (0, 1/sigma)",
            i + 1
        )));
    }
    let l = bp.lipschitz;
    let eps2 = bp.eps_init * bp.eps_init;
    let c = 2.0 * l * bp.x_star_norm / sigma;
    let mut log_prod = CompensatedSum::new();
    let mut energy = 0.0;
    let mut num = eps2;
    let mut den = 0.0;
    let mut out = Vec::with_capacity(bp.stepsizes.len() + 1);
    out.push((eps2, f64::NAN));
    for &a in &bp.stepsizes {
        let shrink = 1.0 - sigma * a;
        log_prod.add((-sigma * a).ln_1p());
        energy = shrink * energy + l * l * a * a;
        num = shrink * num + l * l * a * a + 2.0 * a * l * bp.x_star_norm;
        den = shrink * den + a;
        let prod = log_prod.value().exp();
        let one_minus_prod = -log_prod.value().exp_m1();
        out.push((eps2 * prod + c * one_minus_prod + energy, num / (2.0 * den)));
    }
    Ok(out)
}

/// `(distance, gap)` bounds for a `σ`-strongly convex `F_τ` with `0 < α_i < 1/σ`.
pub fn bound_psm_strongly_convex(bp: &BoundParameters, k: usize) -> Result<(f64, f64)> {
    bp.check_k(k)?;
    let trimmed = BoundParameters {
        stepsizes: bp.stepsizes[..k].to_vec(),
        ..bp.clone()
    };
    Ok(strongly_convex_series(&trimmed)?[k])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpsmBounds {
    pub gap_new: f64,
    pub gap_old: f64,
    pub dist_new: Option<f64>,
    pub dist_old: Option<f64>,
    /// The `M₂` terms alone, new then old; the old one is 6× the new one.
    pub m2_gap_terms: (f64, f64),
    pub m2_dist_terms: Option<(f64, f64)>,
}

/// Stepsize schedule of the stochastic method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum Schedule {
    /// `β_k = β`.
    Fixed { beta: f64 },
    /// `β_k = 2/(σ(k+1))`.
    StronglyConvex { sigma: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Fixed { beta } if beta > 0.0 && beta.is_finite() => Ok(()),
            Schedule::StronglyConvex { sigma } if sigma > 0.0 && sigma.is_finite() => Ok(()),
            _ => Err(Error::Config(format!("invalid schedule {self:?}"))),
        }
    }

    /// `β_k` for 1-based `k`.
    pub fn step(&self, k: usize) -> f64 {
        match *self {
            Schedule::Fixed { beta } => beta,
            Schedule::StronglyConvex { sigma } => (2.0 / sigma) / (k as f64 + 1.0),
        }
    }
}

/// Expected-value bounds after `k` stochastic steps. For the fixed schedule
/// the gap is that of the uniform average; for the strongly convex schedule
/// it is that of the weighted average and the distance bound is also set.
pub fn bound_spsm(bp: &BoundParameters, k: usize, schedule: Schedule) -> Result<SpsmBounds> {
    schedule.validate()?;
    let (m1, m2) = match (bp.m1, bp.m2) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Config("moment bounds M1, M2 are required".into())),
    };
    if k == 0 {
        return Err(Error::UndefinedBound("k must be >= 1".into()));
    }
    let kf = k as f64;
    let xs = bp.x_star_norm;
    Ok(match schedule {
        Schedule::Fixed { beta } => {
            let head = bp.eps_init * bp.eps_init / (2.0 * beta * kf);
            let base = beta * m2;
            let (tn, to) = (base / 2.0, 3.0 * base);
            SpsmBounds {
                gap_new: head + tn + m1 * xs,
                gap_old: head + to + m1 * xs,
                dist_new: None,
                dist_old: None,
                m2_gap_terms: (tn, to),
                m2_dist_terms: None,
            }
        }
        Schedule::StronglyConvex { sigma } => {
            let dist_base = m2 / (sigma * sigma * (kf + 1.0));
            let gap_base = m2 / (sigma * (kf + 1.0));
            let (dn, d_old) = (4.0 * dist_base, 24.0 * dist_base);
            let (gn, g_old) = (2.0 * gap_base, 12.0 * gap_base);
            SpsmBounds {
                gap_new: gn + m1 * xs,
                gap_old: g_old + m1 * xs,
                dist_new: Some(dn + 2.0 * m1 * xs / sigma),
                dist_old: Some(d_old + 2.0 * m1 * xs / sigma),
                m2_gap_terms: (gn, g_old),
                m2_dist_terms: Some((dn, d_old)),
            }
        }
    })
}

/// Largest selected subgradient norm over `cloud`: a lower estimate of `L_τ`.
pub fn estimate_lipschitz(objective: &PenaltyObjective, cloud: &[DenseVector]) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::Precondition("empty point cloud".into()));
    }
    let mut best: f64 = 0.0;
    for x in cloud {
        best = best.max(objective.select_subgradient(x)?.d.norm());
    }
    Ok(best)
}

/// Upper bound on `‖d‖` for every selected subgradient of `F_τ` on the ball
/// `B(center, radius)`: `‖Q·center + c‖ + ‖Q‖₂·radius + τ(Σ‖a_i‖ + Σ‖e_j‖)`.
pub fn lipschitz_on_ball(problem: &StructuredProblem, tau: f64, center: &DenseVector, radius: f64) -> f64 {
    let grad = &problem.q * center + &problem.c;
    let rows = |m: &nalgebra::DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).norm()).sum::<f64>();
    grad.norm() + spectral_norm(&problem.q) * radius + tau * (rows(&problem.a) + rows(&problem.e))
}

/// Largest recorded `‖d^k‖`: a Lipschitz constant valid along the trajectory.
pub fn realized_lipschitz(trace: &[TraceRecord]) -> f64 {
    trace.iter().map(|r| r.grad_norm).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    PsmDistance,
    PsmGap,
    StronglyConvexDistance,
    StronglyConvexGap,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub k: Vec<usize>,
    pub observed: Vec<f64>,
    pub new_bound: Vec<f64>,
    /// Absent for the strongly convex bounds, which have no prior counterpart.
    pub old_bound: Option<Vec<f64>>,
    /// `#{k : observed > new·(1 + REL_TOL) + ABS_TOL}`.
    pub violations: usize,
    pub old_violations: usize,
    /// `max_k (observed − new)/|new|`; nonpositive when every point is within the bound.
    pub max_rel_slack: f64,
}

fn violates(observed: f64, bound: f64) -> bool {
    observed > bound * (1.0 + REL_TOL) + ABS_TOL
}

/// Compares an unthinned trace with the selected bound. Stepsizes come from
/// the trace (`bp.stepsizes` is ignored). Records whose bound is undefined
/// (no step mass yet) are skipped.
pub fn check_trace(trace: &[TraceRecord], bp: &BoundParameters, kind: BoundKind) -> Result<BoundReport> {
    bp.validate()?;
    if trace.is_empty() {
        return Err(Error::Config("empty trace".into()));
    }
    for (i, r) in trace.iter().enumerate() {
        if r.k != i + 1 {
            return Err(Error::Config(format!(
                "trace is thinned or out of order: record {i} has k={}",
                r.k
            )));
        }
    }
    let needs_ref = matches!(kind, BoundKind::PsmDistance | BoundKind::StronglyConvexDistance);
    if needs_ref && trace.iter().any(|r| r.dist_sq.is_none()) {
        return Err(Error::Config(
            "distance bounds need a trace recorded against a reference point".into(),
        ));
    }
    // Record j (k = j+1) was produced after j steps.
    let alphas: Vec<f64> = trace.iter().map(|r| r.alpha).collect();
    let sums = StepSums::new(&alphas);
    let sc = match kind {
        BoundKind::StronglyConvexDistance | BoundKind::StronglyConvexGap => {
            let last = trace.len() - 1;
            let p = BoundParameters {
                stepsizes: alphas[..last].to_vec(),
                ..bp.clone()
            };
            Some(strongly_convex_series(&p)?)
        }
        _ => None,
    };
    let mut rep = BoundReport {
        kind,
        k: Vec::new(),
        observed: Vec::new(),
        new_bound: Vec::new(),
        old_bound: sc.is_none().then(Vec::new),
        violations: 0,
        old_violations: 0,
        max_rel_slack: f64::NEG_INFINITY,
    };
    for (j, r) in trace.iter().enumerate() {
        let steps = j;
        let (observed, new, old) = match kind {
            BoundKind::PsmDistance => {
                let (n, o) = distance_pair(bp, sums.sum[steps], sums.sum_sq[steps]);
                (r.dist_sq.unwrap(), n, Some(o))
            }
            BoundKind::PsmGap => {
                // best_f at record k covers F^1..F^k and the steps α_1..α_k.
                match gap_pair(bp, sums.sum[j + 1], sums.sum_sq[j + 1]) {
                    Ok((n, o)) => (r.best_f - bp.f_star, n, Some(o)),
                    Err(_) => continue,
                }
            }
            BoundKind::StronglyConvexDistance => (r.dist_sq.unwrap(), sc.as_ref().unwrap()[steps].0, None),
            BoundKind::StronglyConvexGap => {
                if steps == 0 {
                    continue;
                }
                (r.best_f - bp.f_star, sc.as_ref().unwrap()[steps].1, None)
            }
        };
        rep.k.push(r.k);
        rep.observed.push(observed);
        rep.new_bound.push(new);
        if violates(observed, new) {
            rep.violations += 1;
        }
        if let (Some(o), Some(col)) = (old, rep.old_bound.as_mut()) {
            col.push(o);
            if violates(observed, o) {
                rep.old_violations += 1;
            }
        }
        rep.max_rel_slack = rep
            .max_rel_slack
            .max((observed - new) / new.abs().max(f64::MIN_POSITIVE));
    }
    Ok(rep)
}
