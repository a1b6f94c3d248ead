//! Cardinality-constrained optimization by exact ℓ1 penalization.
//!
//! The problem family is
//!
//! ```text
//! minimize f(x)  subject to  g(x) ≤ 0,  h(x) = 0,  ‖x‖₀ ≤ s
//! ```
//!
//! with smooth `f`, `g`, `h`. Constraints are moved into the objective
//! `F_τ(x) = f(x) + τ(‖g⁺(x)‖₁ + ‖h(x)‖₁)` and the remaining sparsity
//! constraint is handled by hard thresholding. The crate provides:
//!
//! * [`model`]: problem data, feasibility and activity queries, the JSON problem format;
//! * [`penalty`]: `F_τ` and the subgradient selection rule;
//! * [`sparse`]: projection onto the sparsity set and its tangent/normal cones;
//! * [`psm`] / [`spsm`]: the deterministic and stochastic projected subgradient methods;
//! * [`bounds`]: closed-form convergence bounds and trace conformance checks;
//! * [`cq`]: constraint-qualification and KKT audits backed by the [`lp`] simplex solver;
//! * [`oracle`]: brute-force global solutions over all supports (desk scale);
//! * [`cli`]: the `spk` command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod cli;
pub mod corpus;
pub mod cq;
mod error;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod penalty;
pub mod psm;
pub mod qp;
pub mod sparse;
pub mod spsm;

pub use error::{Component, Error, Result};
pub use model::{DenseVector, FeasibilityReport, ProblemInstance, SmoothMap, StructuredProblem};
pub use penalty::{PenaltyObjective, SubgradientSelection, ZeroPolicy};
pub use psm::{run_psm, SolverConfig, StepsizeRule, Termination, TraceRecord};
pub use sparse::{project_sparse, SupportSet};
