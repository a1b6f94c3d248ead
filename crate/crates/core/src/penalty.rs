//! The exact-penalty objective `F_τ(x) = f(x) + τ(‖g⁺(x)‖₁ + ‖h(x)‖₁)` and the
//! subgradient selection used by the projected subgradient methods.
//!
//! The multipliers follow the sign of each constraint value: `λ_i = 1` when
//! `g_i(x) > 0`, `λ_i = 0` when `g_i(x) < 0`; `μ_j = sign(h_j(x))` when
//! `h_j(x) ≠ 0`. At exact zeros any value in `[0, 1]` (resp. `[−1, 1]`) is a
//! valid choice; [`ZeroPolicy`] picks one. Sign tests are exact comparisons
//! against `0.0`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::linalg::compensated_sum;
use crate::model::{DenseVector, ProblemInstance};
use crate::{Error, Result};

/// Multiplier chosen when a constraint value is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// `λ_i = 0`, `μ_j = 0` (minimal norm; `d = ∇f` at feasible points).
    #[default]
    Zero,
    /// `λ_i = 1`, `μ_j = +1`.
    Upper,
}

#[derive(Debug, Clone)]
pub struct PenaltyObjective {
    problem: ProblemInstance,
    tau: f64,
    policy: ZeroPolicy,
}

/// A subgradient `d ∈ ∂F_τ(x)` with the multipliers that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientSelection {
    pub d: DenseVector,
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
}

/// Everything the solvers need from one point.
#[derive(Debug, Clone)]
pub struct PenaltyEval {
    pub value: f64,
    pub objective: f64,
    pub gplus_norm1: f64,
    pub h_norm1: f64,
    pub selection: SubgradientSelection,
}

impl PenaltyObjective {
    pub fn new(problem: ProblemInstance, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("penalty parameter must be > 0, got {tau}")));
        }
        Ok(Self {
            problem,
            tau,
            policy: ZeroPolicy::Zero,
        })
    }

    pub fn with_policy(mut self, policy: ZeroPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn problem(&self) -> &ProblemInstance {
        &self.problem
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn policy(&self) -> ZeroPolicy {
        self.policy
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    /// `(‖g⁺(x)‖₁, ‖h(x)‖₁)`.
    pub fn residuals(&self, x: &DenseVector) -> Result<(f64, f64)> {
        let g = self.problem.ineq_values(x)?;
        let h = self.problem.eq_values(x)?;
        Ok(residuals_of(&g, &h))
    }

    pub fn value(&self, x: &DenseVector) -> Result<f64> {
        let f = self.problem.objective_value(x)?;
        let (gp, hn) = self.residuals(x)?;
        Ok(f + self.tau * (gp + hn))
    }

    pub fn select_subgradient(&self, x: &DenseVector) -> Result<SubgradientSelection> {
        let g = self.problem.ineq_values(x)?;
        let h = self.problem.eq_values(x)?;
        self.assemble(x, &g, &h)
    }

    /// Value, residuals and subgradient in one pass over the maps.
    pub fn evaluate(&self, x: &DenseVector) -> Result<PenaltyEval> {
        let objective = self.problem.objective_value(x)?;
        let g = self.problem.ineq_values(x)?;
        let h = self.problem.eq_values(x)?;
        let (gplus_norm1, h_norm1) = residuals_of(&g, &h);
        let selection = self.assemble(x, &g, &h)?;
        Ok(PenaltyEval {
            value: objective + self.tau * (gplus_norm1 + h_norm1),
            objective,
            gplus_norm1,
            h_norm1,
            selection,
        })
    }

    /// The constraint part `τ(Jgᵀλ + Jhᵀμ)` of the selected subgradient.
    pub fn constraint_subgradient(&self, x: &DenseVector) -> Result<(DenseVector, Vec<f64>, Vec<f64>)> {
        let g = self.problem.ineq_values(x)?;
        let h = self.problem.eq_values(x)?;
        let lambdas = self.lambdas(&g);
        let mus = self.mus(&h);
        let mut part = DVector::zeros(self.n());
        if !lambdas.is_empty() {
            let jg = self.problem.ineq_jacobian(x)?;
            part += jg.transpose() * DVector::from_column_slice(&lambdas) * self.tau;
        }
        if !mus.is_empty() {
            let jh = self.problem.eq_jacobian(x)?;
            part += jh.transpose() * DVector::from_column_slice(&mus) * self.tau;
        }
        Ok((part, lambdas, mus))
    }

    fn lambdas(&self, g: &DenseVector) -> Vec<f64> {
        g.iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    0.0
                } else {
                    match self.policy {
                        ZeroPolicy::Zero => 0.0,
                        ZeroPolicy::Upper => 1.0,
                    }
                }
            })
            .collect()
    }

    fn mus(&self, h: &DenseVector) -> Vec<f64> {
        h.iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    match self.policy {
                        ZeroPolicy::Zero => 0.0,
                        ZeroPolicy::Upper => 1.0,
                    }
                }
            })
            .collect()
    }

    fn assemble(&self, x: &DenseVector, g: &DenseVector, h: &DenseVector) -> Result<SubgradientSelection> {
        let lambdas = self.lambdas(g);
        let mus = self.mus(h);
        let mut d = self.problem.gradient(x)?;
        if lambdas.iter().any(|&l| l != 0.0) {
            let jg = self.problem.ineq_jacobian(x)?;
            d += jg.transpose() * DVector::from_column_slice(&lambdas) * self.tau;
        }
        if mus.iter().any(|&m| m != 0.0) {
            let jh = self.problem.eq_jacobian(x)?;
            d += jh.transpose() * DVector::from_column_slice(&mus) * self.tau;
        }
        Ok(SubgradientSelection { d, lambdas, mus })
    }
}

fn residuals_of(g: &DenseVector, h: &DenseVector) -> (f64, f64) {
    (
        compensated_sum(g.iter().map(|v| v.max(0.0))),
        compensated_sum(h.iter().map(|v| v.abs())),
    )
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{AffineMap, FnMap, QuadraticMap, SmoothMap, StructuredProblem, ZeroMap};

    fn scalar_problem() -> ProblemInstance {
        // f(x) = x1², g(x) = x1 − 1 on ℝ² with s = 1
        let f: Arc<dyn SmoothMap> = Arc::new(QuadraticMap {
            q: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]),
            c: DVector::zeros(2),
            r: 0.0,
        });
        let g: Arc<dyn SmoothMap> = Arc::new(AffineMap {
            a: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            b: DVector::from_element(1, 1.0),
        });
        ProblemInstance::new(f, g, Arc::new(ZeroMap { dim_in: 2 }), 1).unwrap()
    }

    #[test]
    fn value_adds_scaled_violation() {
        let p = PenaltyObjective::new(scalar_problem(), 2.0).unwrap();
        let x = DVector::from_vec(vec![2.0, 0.0]);
        assert_eq!(p.value(&x).unwrap(), 6.0);
    }

    #[test]
    fn value_vanishes_on_feasible_set() {
        let sp = crate::corpus::ex1_constraints(DVector::zeros(4), 3);
        let mut sp = sp;
        sp.q = DMatrix::zeros(4, 4);
        sp.c = DVector::zeros(4);
        sp.r = 0.0;
        let p = PenaltyObjective::new(sp.to_instance().unwrap(), 5.0).unwrap();
        for x in [
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, -1.0, 0.0],
            vec![-3.0, 1.0, 0.0, -2.0],
        ] {
            assert_eq!(p.value(&DVector::from_vec(x)).unwrap(), 0.0);
        }
    }

    #[test]
    fn equality_residual_is_absolute() {
        let f: Arc<dyn SmoothMap> = Arc::new(QuadraticMap {
            q: DMatrix::zeros(2, 2),
            c: DVector::zeros(2),
            r: 0.0,
        });
        let h: Arc<dyn SmoothMap> = Arc::new(AffineMap {
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: DVector::zeros(1),
        });
        let prob = ProblemInstance::new(f, Arc::new(ZeroMap { dim_in: 2 }), h, 1).unwrap();
        let p = PenaltyObjective::new(prob, 3.0).unwrap();
        assert_eq!(p.value(&DVector::from_vec(vec![1.0, -2.0])).unwrap(), 3.0);
    }

    fn constant_maps(gv: Vec<f64>, hv: Vec<f64>) -> ProblemInstance {
        let n = 2;
        let m = gv.len();
        let p = hv.len();
        let f: Arc<dyn SmoothMap> = Arc::new(QuadraticMap {
            q: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            r: 0.0,
        });
        let g: Arc<dyn SmoothMap> = Arc::new(FnMap::new(
            n,
            m,
            move |_| DVector::from_vec(gv.clone()),
            move |_| DMatrix::from_element(m, n, 1.0),
        ));
        let h: Arc<dyn SmoothMap> = Arc::new(FnMap::new(
            n,
            p,
            move |_| DVector::from_vec(hv.clone()),
            move |_| DMatrix::from_element(p, n, 1.0),
        ));
        ProblemInstance::new(f, g, h, 1).unwrap()
    }

    #[test]
    fn multipliers_follow_constraint_signs() {
        let prob = constant_maps(vec![0.5, -0.2, 0.0], vec![2.0, -3.0, 0.0]);
        let p = PenaltyObjective::new(prob.clone(), 1.0).unwrap();
        let sel = p.select_subgradient(&DVector::zeros(2)).unwrap();
        assert_eq!(sel.lambdas, vec![1.0, 0.0, 0.0]);
        assert_eq!(sel.mus, vec![1.0, -1.0, 0.0]);

        let p = p.with_policy(ZeroPolicy::Upper);
        let sel = p.select_subgradient(&DVector::zeros(2)).unwrap();
        assert_eq!(sel.lambdas, vec![1.0, 0.0, 1.0]);
        assert_eq!(sel.mus, vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn unconstrained_subgradient_is_gradient() {
        let f: Arc<dyn SmoothMap> = Arc::new(QuadraticMap {
            q: DMatrix::identity(2, 2),
            c: DVector::zeros(2),
            r: 0.0,
        });
        let prob = ProblemInstance::unconstrained(f, 1).unwrap();
        let p = PenaltyObjective::new(prob, 17.0).unwrap();
        let sel = p.select_subgradient(&DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(sel.d.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn tau_must_be_positive() {
        assert!(PenaltyObjective::new(scalar_problem(), 0.0).is_err());
        assert!(PenaltyObjective::new(scalar_problem(), -1.0).is_err());
        assert!(PenaltyObjective::new(scalar_problem(), f64::NAN).is_err());
    }

    #[test]
    fn subgradient_assembly_matches_formula() {
        let sp = crate::corpus::qp10();
        let prob = sp.to_instance().unwrap();
        let p = PenaltyObjective::new(prob.clone(), 2.5).unwrap();
        let x = DVector::from_fn(10, |i, _| 0.4 * (i as f64) - 1.5);
        let sel = p.select_subgradient(&x).unwrap();
        let g = &sp.a * &x - &sp.b;
        let h = &sp.e * &x - &sp.q_eq;
        let mut expect = &sp.q * &x + &sp.c;
        for i in 0..sp.m() {
            let lam = if g[i] > 0.0 { 1.0 } else { 0.0 };
            expect += sp.a.row(i).transpose() * (2.5 * lam);
        }
        for j in 0..sp.p() {
            expect += sp.e.row(j).transpose() * (2.5 * h[j].signum());
        }
        assert!((sel.d - expect).amax() < 1e-12);
    }

    // Directional derivative check away from the kinks.
    #[test]
    fn subgradient_matches_directional_derivatives_in_smooth_region() {
        let sp = crate::corpus::qp10();
        let p = PenaltyObjective::new(sp.to_instance().unwrap(), 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 20 {
            let x = DVector::from_fn(10, |_, _| rng.gen_range(-2.0..2.0));
            let g = &sp.a * &x - &sp.b;
            let h = &sp.e * &x - &sp.q_eq;
            if g.iter().chain(h.iter()).any(|v| v.abs() < 1e-6 * 1e3) {
                continue;
            }
            let d = p.select_subgradient(&x).unwrap().d;
            for _ in 0..20 {
                let v = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
                let t = 1e-6;
                let fd = (p.value(&(&x + &v * t)).unwrap() - p.value(&(&x - &v * t)).unwrap()) / (2.0 * t);
                let an = d.dot(&v);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{fd} vs {an}");
            }
            checked += 1;
        }
    }

    fn lcg_problem() -> StructuredProblem {
        crate::corpus::box_qp6()
    }

    proptest! {
        #[test]
        fn subgradient_inequality_holds_for_convex_instance(
            xs in proptest::collection::vec(-4.0f64..4.0, 6),
            ys in proptest::collection::vec(-4.0f64..4.0, 6),
        ) {
            let sp = lcg_problem();
            let p = PenaltyObjective::new(sp.to_instance().unwrap(), 4.0).unwrap();
            let x = DVector::from_vec(xs);
            let y = DVector::from_vec(ys);
            let d = p.select_subgradient(&x).unwrap().d;
            let lhs = p.value(&y).unwrap();
            let rhs = p.value(&x).unwrap() + d.dot(&(&y - &x));
            prop_assert!(lhs - rhs >= -1e-10 * rhs.abs().max(1.0));
        }
    }
}
