//! Problem data: smooth maps, problem instances, and the structured on-disk form.
//!
//! A [`ProblemInstance`] bundles a scalar objective `f`, inequality map `g`
//! (`m` outputs), equality map `h` (`p` outputs) and the sparsity level `s`.
//! The maps are evaluation contracts, so arbitrary smooth callables can be
//! plugged in through [`FnMap`]. Quadratic/affine instances are described by
//! [`StructuredProblem`], which also carries the exact data used by the
//! brute-force oracle.
//!
//! `f` is assumed bounded from below; that cannot be checked for black-box
//! maps and is not validated.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{compensated_sum, l0_norm};
use crate::{Component, Error, Result};

pub type DenseVector = DVector<f64>;

/// Default absolute tolerance for activity and feasibility-within-tolerance tests.
pub const DEFAULT_ACTIVITY_TOL: f64 = 1e-9;

/// A continuously differentiable map `ℝ^dim_in → ℝ^dim_out`.
///
/// Implementations must be re-entrant: instances are shared across threads.
pub trait SmoothMap: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn value(&self, x: &DenseVector) -> DenseVector;
    /// `dim_out × dim_in` Jacobian.
    fn jacobian(&self, x: &DenseVector) -> DMatrix<f64>;
}

/// Map with no outputs; stands in for an absent constraint block.
#[derive(Debug, Clone, Copy)]
pub struct ZeroMap {
    pub dim_in: usize,
}

impl SmoothMap for ZeroMap {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        0
    }
    fn value(&self, _x: &DenseVector) -> DenseVector {
        DVector::zeros(0)
    }
    fn jacobian(&self, _x: &DenseVector) -> DMatrix<f64> {
        DMatrix::zeros(0, self.dim_in)
    }
}

/// `x ↦ A x − b`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub a: DMatrix<f64>,
    pub b: DenseVector,
}

impl SmoothMap for AffineMap {
    fn dim_in(&self) -> usize {
        self.a.ncols()
    }
    fn dim_out(&self) -> usize {
        self.a.nrows()
    }
    fn value(&self, x: &DenseVector) -> DenseVector {
        &self.a * x - &self.b
    }
    fn jacobian(&self, _x: &DenseVector) -> DMatrix<f64> {
        self.a.clone()
    }
}

/// `x ↦ ½ xᵀQx + cᵀx + r`.
#[derive(Debug, Clone)]
pub struct QuadraticMap {
    pub q: DMatrix<f64>,
    pub c: DenseVector,
    pub r: f64,
}

impl SmoothMap for QuadraticMap {
    fn dim_in(&self) -> usize {
        self.c.len()
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn value(&self, x: &DenseVector) -> DenseVector {
        let qx = &self.q * x;
        DVector::from_element(1, 0.5 * x.dot(&qx) + self.c.dot(x) + self.r)
    }
    fn jacobian(&self, x: &DenseVector) -> DMatrix<f64> {
        let grad = &self.q * x + &self.c;
        DMatrix::from_row_slice(1, grad.len(), grad.as_slice())
    }
}

type ValueFn = dyn Fn(&DenseVector) -> DenseVector + Send + Sync;
type JacobianFn = dyn Fn(&DenseVector) -> DMatrix<f64> + Send + Sync;

/// Black-box smooth map built from closures.
#[derive(Clone)]
pub struct FnMap {
    dim_in: usize,
    dim_out: usize,
    value: Arc<ValueFn>,
    jacobian: Arc<JacobianFn>,
}

impl FnMap {
    pub fn new<V, J>(dim_in: usize, dim_out: usize, value: V, jacobian: J) -> Self
    where
        V: Fn(&DenseVector) -> DenseVector + Send + Sync + 'static,
        J: Fn(&DenseVector) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dim_in,
            dim_out,
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
        }
    }

    /// Scalar map from a value closure and a gradient closure.
    pub fn scalar<V, G>(dim_in: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&DenseVector) -> f64 + Send + Sync + 'static,
        G: Fn(&DenseVector) -> DenseVector + Send + Sync + 'static,
    {
        Self::new(
            dim_in,
            1,
            move |x| DVector::from_element(1, value(x)),
            move |x| {
                let g = gradient(x);
                DMatrix::from_row_slice(1, g.len(), g.as_slice())
            },
        )
    }
}

impl SmoothMap for FnMap {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn value(&self, x: &DenseVector) -> DenseVector {
        (self.value)(x)
    }
    fn jacobian(&self, x: &DenseVector) -> DMatrix<f64> {
        (self.jacobian)(x)
    }
}

/// Central finite-difference Jacobian of `map` at `x` with step `h`.
pub fn finite_difference_jacobian(map: &dyn SmoothMap, x: &DenseVector, h: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(map.dim_out(), map.dim_in());
    let mut probe = x.clone();
    for k in 0..map.dim_in() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = map.value(&probe);
        probe[k] = orig - h;
        let minus = map.value(&probe);
        probe[k] = orig;
        jac.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    jac
}

/// Largest entrywise relative discrepancy between the analytic and the
/// finite-difference Jacobian at `x`, with differences scaled by `max(1, |J_ij|)`.
pub fn jacobian_discrepancy(map: &dyn SmoothMap, x: &DenseVector) -> f64 {
    let analytic = map.jacobian(x);
    let scale = x.amax().max(1.0);
    let numeric = finite_difference_jacobian(map, x, 1e-6 * scale);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Optional metadata attached to a problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemMeta {
    pub name: Option<String>,
    /// Known strong-convexity modulus of the objective.
    pub sigma: Option<f64>,
    /// Known Lipschitz constant of the penalized objective.
    pub lipschitz: Option<f64>,
}

/// Residual summary of a point against `Ω ∩ S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// `Σ max(0, g_i(x))`
    pub gplus_norm1: f64,
    /// `Σ |h_j(x)|`
    pub h_norm1: f64,
    pub support_size: usize,
    /// Exact test: both residuals exactly zero and `‖x‖₀ ≤ s`.
    pub is_feasible: bool,
    /// Residuals at most [`DEFAULT_ACTIVITY_TOL`] and `‖x‖₀ ≤ s`.
    pub within_tolerance: bool,
}

/// Cardinality-constrained problem: smooth objective, smooth inequality/equality maps, sparsity level.
#[derive(Clone)]
pub struct ProblemInstance {
    objective: Arc<dyn SmoothMap>,
    ineq: Arc<dyn SmoothMap>,
    eq: Arc<dyn SmoothMap>,
    sparsity: usize,
    meta: ProblemMeta,
    structure: Option<Arc<StructuredProblem>>,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("n", &self.n())
            .field("m", &self.m())
            .field("p", &self.p())
            .field("s", &self.sparsity)
            .field("meta", &self.meta)
            .field("structured", &self.structure.is_some())
            .finish()
    }
}

impl ProblemInstance {
    pub fn new(
        objective: Arc<dyn SmoothMap>,
        ineq: Arc<dyn SmoothMap>,
        eq: Arc<dyn SmoothMap>,
        sparsity: usize,
    ) -> Result<Self> {
        let n = objective.dim_in();
        if objective.dim_out() != 1 {
            return Err(Error::InvalidProblem(format!(
                "objective must be scalar, has {} outputs",
                objective.dim_out()
            )));
        }
        if ineq.dim_in() != n || eq.dim_in() != n {
            return Err(Error::InvalidProblem(format!(
                "maps disagree on the input dimension: f:{n} g:{} h:{}",
                ineq.dim_in(),
                eq.dim_in()
            )));
        }
        if sparsity == 0 || sparsity >= n {
            return Err(Error::InvalidProblem(format!(
                "sparsity level must satisfy 1 <= s < n, got s={sparsity}, n={n}"
            )));
        }
        Ok(Self {
            objective,
            ineq,
            eq,
            sparsity,
            meta: ProblemMeta::default(),
            structure: None,
        })
    }

    /// Problem without constraint blocks.
    pub fn unconstrained(objective: Arc<dyn SmoothMap>, sparsity: usize) -> Result<Self> {
        let n = objective.dim_in();
        Self::new(
            objective,
            Arc::new(ZeroMap { dim_in: n }),
            Arc::new(ZeroMap { dim_in: n }),
            sparsity,
        )
    }

    pub fn with_meta(mut self, meta: ProblemMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn meta(&self) -> &ProblemMeta {
        &self.meta
    }

    pub fn name(&self) -> Option<&str> {
        self.meta.name.as_deref()
    }

    pub fn n(&self) -> usize {
        self.objective.dim_in()
    }

    pub fn m(&self) -> usize {
        self.ineq.dim_out()
    }

    pub fn p(&self) -> usize {
        self.eq.dim_out()
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    /// Exact quadratic/affine data, when the instance came from a [`StructuredProblem`].
    pub fn structure(&self) -> Option<&StructuredProblem> {
        self.structure.as_deref()
    }

    pub fn objective_map(&self) -> &dyn SmoothMap {
        self.objective.as_ref()
    }

    pub fn ineq_map(&self) -> &dyn SmoothMap {
        self.ineq.as_ref()
    }

    pub fn eq_map(&self) -> &dyn SmoothMap {
        self.eq.as_ref()
    }

    pub fn check_dim(&self, x: &DenseVector) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &DenseVector) -> Result<f64> {
        self.check_dim(x)?;
        let v = self.objective.value(x)[0];
        if !v.is_finite() {
            return Err(Error::NonFinite(Component::Objective));
        }
        Ok(v)
    }

    pub fn gradient(&self, x: &DenseVector) -> Result<DenseVector> {
        self.check_dim(x)?;
        let jac = self.objective.jacobian(x);
        let grad = jac.row(0).transpose();
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(Component::Gradient));
        }
        Ok(grad)
    }

    pub fn ineq_values(&self, x: &DenseVector) -> Result<DenseVector> {
        self.check_dim(x)?;
        let g = self.ineq.value(x);
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(Component::Inequality(i)));
        }
        Ok(g)
    }

    pub fn eq_values(&self, x: &DenseVector) -> Result<DenseVector> {
        self.check_dim(x)?;
        let h = self.eq.value(x);
        if let Some(j) = h.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(Component::Equality(j)));
        }
        Ok(h)
    }

    /// `m × n` Jacobian of `g`; row `i` is `∇g_i(x)ᵀ`.
    pub fn ineq_jacobian(&self, x: &DenseVector) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let jac = self.ineq.jacobian(x);
        if let Some(i) = first_bad_row(&jac) {
            return Err(Error::NonFinite(Component::InequalityJacobian(i)));
        }
        Ok(jac)
    }

    /// `p × n` Jacobian of `h`; row `j` is `∇h_j(x)ᵀ`.
    pub fn eq_jacobian(&self, x: &DenseVector) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let jac = self.eq.jacobian(x);
        if let Some(j) = first_bad_row(&jac) {
            return Err(Error::NonFinite(Component::EqualityJacobian(j)));
        }
        Ok(jac)
    }

    pub fn evaluate_feasibility(&self, x: &DenseVector) -> Result<FeasibilityReport> {
        let g = self.ineq_values(x)?;
        let h = self.eq_values(x)?;
        let gplus_norm1 = compensated_sum(g.iter().map(|v| v.max(0.0)));
        let h_norm1 = compensated_sum(h.iter().map(|v| v.abs()));
        let support_size = l0_norm(x);
        let sparse_ok = support_size <= self.sparsity;
        Ok(FeasibilityReport {
            gplus_norm1,
            h_norm1,
            support_size,
            is_feasible: gplus_norm1 == 0.0 && h_norm1 == 0.0 && sparse_ok,
            within_tolerance: gplus_norm1 <= DEFAULT_ACTIVITY_TOL && h_norm1 <= DEFAULT_ACTIVITY_TOL && sparse_ok,
        })
    }

    /// Indices `i` with `|g_i(x)| ≤ tol`.
    pub fn active_inequalities(&self, x: &DenseVector, tol: f64) -> Result<Vec<usize>> {
        let g = self.ineq_values(x)?;
        Ok(g.iter()
            .enumerate()
            .filter(|(_, v)| v.abs() <= tol)
            .map(|(i, _)| i)
            .collect())
    }
}

fn first_bad_row(m: &DMatrix<f64>) -> Option<usize> {
    (0..m.nrows()).find(|&i| m.row(i).iter().any(|v| !v.is_finite()))
}

/// Finite-sum least-squares data: `f(x) = (1/N) Σ_t (a_tᵀx − b_t)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresData {
    /// `N × n`, one row per sample.
    pub a: DMatrix<f64>,
    pub b: DenseVector,
}

impl LeastSquaresData {
    pub fn samples(&self) -> usize {
        self.a.nrows()
    }

    /// Equivalent quadratic `(Q, c, r)` with `f(x) = ½xᵀQx + cᵀx + r`.
    pub fn quadratic_form(&self) -> (DMatrix<f64>, DenseVector, f64) {
        let n_samples = self.samples() as f64;
        let at = self.a.transpose();
        let mut q = (&at * &self.a) * (2.0 / n_samples);
        symmetrize(&mut q);
        let c = (&at * &self.b) * (-2.0 / n_samples);
        let r = self.b.norm_squared() / n_samples;
        (q, c, r)
    }
}

fn symmetrize(q: &mut DMatrix<f64>) {
    let n = q.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (q[(i, j)] + q[(j, i)]);
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
}

/// Quadratic objective with affine inequality and equality blocks:
/// `f(x) = ½xᵀQx + cᵀx + r`, `g(x) = Ax − b`, `h(x) = Ex − q`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredProblem {
    pub q: DMatrix<f64>,
    pub c: DenseVector,
    pub r: f64,
    pub a: DMatrix<f64>,
    pub b: DenseVector,
    pub e: DMatrix<f64>,
    pub q_eq: DenseVector,
    pub sparsity: usize,
    pub sigma: Option<f64>,
    pub name: Option<String>,
    /// Present when the objective was built from finite-sum least-squares data.
    pub least_squares: Option<LeastSquaresData>,
}

impl StructuredProblem {
    /// Problem with objective only; add blocks with [`Self::with_inequalities`] /
    /// [`Self::with_equalities`].
    pub fn quadratic(q: DMatrix<f64>, c: DenseVector, r: f64, sparsity: usize) -> Result<Self> {
        let n = c.len();
        let p = Self {
            q,
            c,
            r,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            e: DMatrix::zeros(0, n),
            q_eq: DVector::zeros(0),
            sparsity,
            sigma: None,
            name: None,
            least_squares: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn least_squares(data: LeastSquaresData, sparsity: usize) -> Result<Self> {
        if data.a.nrows() != data.b.len() {
            return Err(Error::InvalidProblem(format!(
                "least-squares data has {} rows but {} targets",
                data.a.nrows(),
                data.b.len()
            )));
        }
        if data.a.nrows() == 0 {
            return Err(Error::InvalidProblem("least-squares data is empty".into()));
        }
        let (q, c, r) = data.quadratic_form();
        let mut p = Self::quadratic(q, c, r, sparsity)?;
        p.least_squares = Some(data);
        Ok(p)
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DenseVector) -> Result<Self> {
        self.a = a;
        self.b = b;
        self.validate()?;
        Ok(self)
    }

    pub fn with_equalities(mut self, e: DMatrix<f64>, q_eq: DenseVector) -> Result<Self> {
        self.e = e;
        self.q_eq = q_eq;
        self.validate()?;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.e.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.q.nrows() != n || self.q.ncols() != n {
            return Err(Error::InvalidProblem(format!(
                "Q is {}x{}, expected {n}x{n}",
                self.q.nrows(),
                self.q.ncols()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.q[(i, j)] - self.q[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidProblem(format!("Q is not symmetric at ({i},{j})")));
                }
            }
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(Error::InvalidProblem(format!(
                "inequality block is {}x{} with {} right-hand sides, expected m x {n}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len()
            )));
        }
        if self.e.ncols() != n || self.e.nrows() != self.q_eq.len() {
            return Err(Error::InvalidProblem(format!(
                "equality block is {}x{} with {} right-hand sides, expected p x {n}",
                self.e.nrows(),
                self.e.ncols(),
                self.q_eq.len()
            )));
        }
        let finite = self.q.iter().all(|v| v.is_finite())
            && self.c.iter().all(|v| v.is_finite())
            && self.r.is_finite()
            && self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.e.iter().all(|v| v.is_finite())
            && self.q_eq.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidProblem("non-finite problem data".into()));
        }
        if self.sparsity == 0 || self.sparsity >= n {
            return Err(Error::InvalidProblem(format!(
                "sparsity level must satisfy 1 <= s < n, got s={}, n={n}",
                self.sparsity
            )));
        }
        if let Some(sigma) = self.sigma {
            if !(sigma >= 0.0) {
                return Err(Error::InvalidProblem(format!("sigma must be >= 0, got {sigma}")));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &DenseVector) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x) + self.r
    }

    pub fn to_instance(&self) -> Result<ProblemInstance> {
        self.validate()?;
        let objective = Arc::new(QuadraticMap {
            q: self.q.clone(),
            c: self.c.clone(),
            r: self.r,
        });
        let ineq = Arc::new(AffineMap {
            a: self.a.clone(),
            b: self.b.clone(),
        });
        let eq = Arc::new(AffineMap {
            a: self.e.clone(),
            b: self.q_eq.clone(),
        });
        let mut inst = ProblemInstance::new(objective, ineq, eq, self.sparsity)?;
        inst.meta = ProblemMeta {
            name: self.name.clone(),
            sigma: self.sigma,
            lipschitz: None,
        };
        inst.structure = Some(Arc::new(self.clone()));
        Ok(inst)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        file.into_problem()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ProblemFile::from_problem(self))?)
    }
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Serialize, Deserialize)]
struct LeastSquaresFile {
    #[serde(rename = "A")]
    a: Rows,
    b: Vec<f64>,
}

/// On-disk JSON layout. Absent blocks mean `m = 0`, `p = 0` or `Q = 0`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    n: usize,
    s: usize,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    quad: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    e: Option<Rows>,
    #[serde(rename = "q", default, skip_serializing_if = "Option::is_none")]
    q_eq: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    least_squares: Option<LeastSquaresFile>,
}

fn matrix_from_rows(rows: &Rows, ncols: usize, label: &str) -> Result<DMatrix<f64>> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Parse(format!(
                "{label} row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn vector_of_len(v: Option<&Vec<f64>>, len: usize, label: &str) -> Result<DenseVector> {
    match v {
        Some(v) if v.len() == len => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(Error::Parse(format!("{label} has {} entries, expected {len}", v.len()))),
        None if len == 0 => Ok(DVector::zeros(0)),
        None => Err(Error::Parse(format!("{label} is missing"))),
    }
}

impl ProblemFile {
    fn into_problem(self) -> Result<StructuredProblem> {
        let n = self.n;
        let (mut problem, ls) = if let Some(ls) = &self.least_squares {
            if self.quad.is_some() || self.c.is_some() || self.r.is_some() {
                return Err(Error::Parse(
                    "least_squares data and Q/c/r are mutually exclusive".into(),
                ));
            }
            let a = matrix_from_rows(&ls.a, n, "least_squares.A")?;
            let b = vector_of_len(Some(&ls.b), a.nrows(), "least_squares.b")?;
            let data = LeastSquaresData { a, b };
            let (q, c, r) = data.quadratic_form();
            (
                StructuredProblem {
                    q,
                    c,
                    r,
                    a: DMatrix::zeros(0, n),
                    b: DVector::zeros(0),
                    e: DMatrix::zeros(0, n),
                    q_eq: DVector::zeros(0),
                    sparsity: self.s,
                    sigma: None,
                    name: None,
                    least_squares: None,
                },
                Some(data),
            )
        } else {
            let q = match &self.quad {
                Some(rows) if !rows.is_empty() => {
                    if rows.len() != n {
                        return Err(Error::Parse(format!("Q has {} rows, expected {n}", rows.len())));
                    }
                    matrix_from_rows(rows, n, "Q")?
                }
                _ => DMatrix::zeros(n, n),
            };
            let c = match &self.c {
                Some(c) => vector_of_len(Some(c), n, "c")?,
                None => DVector::zeros(n),
            };
            (
                StructuredProblem {
                    q,
                    c,
                    r: self.r.unwrap_or(0.0),
                    a: DMatrix::zeros(0, n),
                    b: DVector::zeros(0),
                    e: DMatrix::zeros(0, n),
                    q_eq: DVector::zeros(0),
                    sparsity: self.s,
                    sigma: None,
                    name: None,
                    least_squares: None,
                },
                None,
            )
        };
        let a = match &self.a {
            Some(rows) => matrix_from_rows(rows, n, "A")?,
            None => DMatrix::zeros(0, n),
        };
        let b = vector_of_len(self.b.as_ref(), a.nrows(), "b")?;
        let e = match &self.e {
            Some(rows) => matrix_from_rows(rows, n, "E")?,
            None => DMatrix::zeros(0, n),
        };
        let q_eq = vector_of_len(self.q_eq.as_ref(), e.nrows(), "q")?;
        problem.a = a;
        problem.b = b;
        problem.e = e;
        problem.q_eq = q_eq;
        problem.sigma = self.sigma;
        problem.name = self.name;
        problem.least_squares = ls;
        problem.validate()?;
        Ok(problem)
    }

    fn from_problem(p: &StructuredProblem) -> Self {
        let (quad, c, r, least_squares) = match &p.least_squares {
            Some(ls) => (
                None,
                None,
                None,
                Some(LeastSquaresFile {
                    a: rows_of(&ls.a),
                    b: ls.b.iter().cloned().collect(),
                }),
            ),
            None => (
                Some(rows_of(&p.q)),
                Some(p.c.iter().cloned().collect()),
                Some(p.r),
                None,
            ),
        };
        Self {
            n: p.n(),
            s: p.sparsity,
            quad,
            c,
            r,
            a: (p.m() > 0).then(|| rows_of(&p.a)),
            b: (p.m() > 0).then(|| p.b.iter().cloned().collect()),
            e: (p.p() > 0).then(|| rows_of(&p.e)),
            q_eq: (p.p() > 0).then(|| p.q_eq.iter().cloned().collect()),
            sigma: p.sigma,
            name: p.name.clone(),
            least_squares,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex1() -> ProblemInstance {
        crate::corpus::ex1_constraints(DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]), 3)
            .to_instance()
            .unwrap()
    }

    #[test]
    fn ex1_reference_point_is_feasible() {
        let p = ex1();
        let x = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let rep = p.evaluate_feasibility(&x).unwrap();
        assert_eq!(rep.gplus_norm1, 0.0);
        assert_eq!(rep.h_norm1, 0.0);
        assert_eq!(rep.support_size, 2);
        assert!(rep.is_feasible);
        assert!(rep.within_tolerance);
    }

    #[test]
    fn ex1_active_set() {
        let p = ex1();
        let x = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(p.active_inequalities(&x, 1e-9).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn sparsity_must_be_below_dimension() {
        let sp = StructuredProblem::quadratic(DMatrix::zeros(1, 1), DVector::zeros(1), 0.0, 1);
        assert!(matches!(sp, Err(Error::InvalidProblem(_))));
        let f = Arc::new(FnMap::scalar(1, |x| x[0], |_| DVector::from_element(1, 1.0)));
        assert!(ProblemInstance::unconstrained(f, 1).is_err());
    }

    #[test]
    fn violated_box_reports_residual() {
        let p = StructuredProblem::quadratic(DMatrix::zeros(2, 2), DVector::zeros(2), 0.0, 1)
            .unwrap()
            .with_inequalities(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]))
            .unwrap()
            .to_instance()
            .unwrap();
        let rep = p.evaluate_feasibility(&DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_eq!(rep.gplus_norm1, 1.0);
        assert_eq!(rep.support_size, 1);
        assert!(!rep.is_feasible);
    }

    #[test]
    fn scalar_inactive_and_two_active() {
        let mut a = DMatrix::zeros(1, 2);
        a[(0, 0)] = 1.0;
        let g1 = Arc::new(AffineMap {
            a,
            b: DVector::from_element(1, 1.0),
        });
        let f: Arc<dyn SmoothMap> = Arc::new(QuadraticMap {
            q: DMatrix::zeros(2, 2),
            c: DVector::zeros(2),
            r: 0.0,
        });
        let z: Arc<dyn SmoothMap> = Arc::new(ZeroMap { dim_in: 2 });
        let p = ProblemInstance::new(f.clone(), g1, z.clone(), 1).unwrap();
        // g(x) = x1 - 1 at x1 = 0.5 is inactive
        assert!(p
            .active_inequalities(&DVector::from_vec(vec![0.5, 0.0]), 1e-9)
            .unwrap()
            .is_empty());

        let g2 = Arc::new(AffineMap {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
            b: DVector::from_vec(vec![1.0, 1.0]),
        });
        let p = ProblemInstance::new(f, g2, z, 1).unwrap();
        assert_eq!(
            p.active_inequalities(&DVector::from_vec(vec![1.0, 0.0]), 1e-9).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = ex1();
        let err = p.evaluate_feasibility(&DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, got: 3 }));
    }

    #[test]
    fn non_finite_evaluation_names_the_component() {
        let f: Arc<dyn SmoothMap> = Arc::new(FnMap::scalar(
            2,
            |x| x[0].ln(),
            |x| DVector::from_vec(vec![1.0 / x[0], 0.0]),
        ));
        let g: Arc<dyn SmoothMap> = Arc::new(FnMap::new(
            2,
            2,
            |x| DVector::from_vec(vec![0.0, 1.0 / x[1]]),
            |_| DMatrix::zeros(2, 2),
        ));
        let p = ProblemInstance::new(f, g, Arc::new(ZeroMap { dim_in: 2 }), 1).unwrap();
        let x = DVector::from_vec(vec![-1.0, 0.0]);
        assert!(matches!(
            p.objective_value(&x),
            Err(Error::NonFinite(Component::Objective))
        ));
        assert!(matches!(
            p.ineq_values(&x),
            Err(Error::NonFinite(Component::Inequality(1)))
        ));
    }

    #[test]
    fn structured_jacobians_match_finite_differences() {
        let sp = crate::corpus::qp10();
        let p = sp.to_instance().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = DVector::from_fn(p.n(), |_, _| rng.gen_range(-3.0..3.0));
            for map in [p.objective_map(), p.ineq_map(), p.eq_map()] {
                let err = jacobian_discrepancy(map, &x);
                assert!(err <= 1e-5, "jacobian discrepancy {err}");
            }
        }
    }

    #[test]
    fn feasibility_is_bit_deterministic() {
        let p = crate::corpus::qp10().to_instance().unwrap();
        let x = DVector::from_fn(10, |i, _| (i as f64 * 0.37).sin());
        let a = p.evaluate_feasibility(&x).unwrap();
        let b = p.evaluate_feasibility(&x).unwrap();
        assert_eq!(a.gplus_norm1.to_bits(), b.gplus_norm1.to_bits());
        assert_eq!(a.h_norm1.to_bits(), b.h_norm1.to_bits());
    }

    #[test]
    fn json_roundtrip_and_absent_blocks() {
        let text = r#"{"n": 3, "s": 1, "c": [1, 2, 3]}"#;
        let p = StructuredProblem::from_json_str(text).unwrap();
        assert_eq!(p.m(), 0);
        assert_eq!(p.p(), 0);
        assert_eq!(p.q, DMatrix::zeros(3, 3));
        let back = StructuredProblem::from_json_str(&p.to_json_string().unwrap()).unwrap();
        assert_eq!(back, p);

        let sp = crate::corpus::qp10();
        let back = StructuredProblem::from_json_str(&sp.to_json_string().unwrap()).unwrap();
        assert_eq!(back, sp);
    }

    #[test]
    fn json_rejects_bad_shapes() {
        let bad = r#"{"n": 2, "s": 1, "A": [[1, 0]], "b": [1, 2]}"#;
        assert!(StructuredProblem::from_json_str(bad).is_err());
        let asym = r#"{"n": 2, "s": 1, "Q": [[1, 2], [0, 1]]}"#;
        assert!(matches!(
            StructuredProblem::from_json_str(asym),
            Err(Error::InvalidProblem(_))
        ));
        let unknown = r#"{"n": 2, "s": 1, "bogus": 3}"#;
        assert!(StructuredProblem::from_json_str(unknown).is_err());
    }

    #[test]
    fn least_squares_quadratic_form_matches_mean_of_squares() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let data = LeastSquaresData {
            a: a.clone(),
            b: b.clone(),
        };
        let sp = StructuredProblem::least_squares(data, 1).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let direct = (&a * &x - &b).norm_squared() / 3.0;
        assert!((sp.objective_value(&x) - direct).abs() < 1e-14);
    }
}
