//! Shipped test instances. The JSON sources live in `crates/core/corpus/`.
//!
//! * `ex1_near`, `ex1_far`: the four-variable instance with
//!   `g₁ = x₁+x₃+x₄−1`, `g₂ = x₃+x₄`, `g₃ = x₂−1`, `s = 3`, and objective
//!   `‖x − c‖²` for `c = (1,1,0,0)` (feasible unconstrained minimizer) and
//!   `c = (2,1,0,0)` (infeasible unconstrained minimizer);
//! * `qp10`: strongly convex QP, `n = 10`, `s = 3`, four inequalities and `1ᵀx = 1`;
//! * `lsq50`: sparse least squares with `N = 50` samples, `n = 10`, `s = 3`, `1ᵀx ≤ 2`;
//! * `boxqp6`: strongly convex QP on the box `[−1, 1]⁶`, `s = 2`.

use nalgebra::{DMatrix, DVector};

use crate::model::{DenseVector, StructuredProblem};

pub const NAMES: [&str; 5] = ["ex1_near", "ex1_far", "qp10", "lsq50", "boxqp6"];

fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "ex1_near" => include_str!("../corpus/ex1_near.json"),
        "ex1_far" => include_str!("../corpus/ex1_far.json"),
        "qp10" => include_str!("../corpus/qp10.json"),
        "lsq50" => include_str!("../corpus/lsq50.json"),
        "boxqp6" => include_str!("../corpus/boxqp6.json"),
        _ => return None,
    })
}

/// Corpus instance by name.
pub fn load(name: &str) -> Option<StructuredProblem> {
    source(name).map(|text| StructuredProblem::from_json_str(text).expect("shipped corpus instance is well formed"))
}

pub fn all() -> Vec<StructuredProblem> {
    NAMES.iter().map(|n| load(n).unwrap()).collect()
}

/// The four-variable constraint system with objective `‖x − center‖²`.
pub fn ex1_constraints(center: DenseVector, sparsity: usize) -> StructuredProblem {
    assert_eq!(center.len(), 4);
    let a = DMatrix::from_row_slice(3, 4, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    let b = DVector::from_vec(vec![1.0, 0.0, 1.0]);
    StructuredProblem::quadratic(
        DMatrix::identity(4, 4) * 2.0,
        &center * -2.0,
        center.norm_squared(),
        sparsity,
    )
    .and_then(|p| p.with_inequalities(a, b))
    .expect("valid instance")
}

pub fn ex1_near() -> StructuredProblem {
    load("ex1_near").unwrap()
}

pub fn ex1_far() -> StructuredProblem {
    load("ex1_far").unwrap()
}

pub fn qp10() -> StructuredProblem {
    load("qp10").unwrap()
}

pub fn lsq50() -> StructuredProblem {
    load("lsq50").unwrap()
}

pub fn box_qp6() -> StructuredProblem {
    load("boxqp6").unwrap()
}
