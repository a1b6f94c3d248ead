//! The sparsity set `S = {x : ‖x‖₀ ≤ s}`: hard-thresholding projection,
//! support sets and the tangent/normal cones of `S` at a point.
//!
//! With `Γ* = supp(x*)` and `𝓙* = {J : Γ* ⊆ J, |J| = s}`:
//!
//! | cone      | `|Γ*| = s`  | `|Γ*| < s`              |
//! |-----------|-------------|-------------------------|
//! | `T_S(x*)` | `S_Γ*`      | `∪_{J∈𝓙*} S_J`          |
//! | `N̂_S(x*)` | `S_{Γ̄*}`    | `{0}`                   |
//! | `N_S(x*)` | `S_{Γ̄*}`    | `∪_{J∈𝓙*} S_{J̄}`        |
//!
//! where `S_J` is the subspace of vectors vanishing off `J`.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::DVector;
use serde::Serialize;

use crate::linalg::l0_norm;
use crate::model::DenseVector;
use crate::{Error, Result};

/// Sorted index set in `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SupportSet {
    indices: Vec<usize>,
    #[serde(skip)]
    n: usize,
}

impl SupportSet {
    /// Sorts and deduplicates `indices`; fails if any index is `>= n`.
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Precondition(format!("index {bad} out of range for n={n}")));
        }
        Ok(Self { indices, n })
    }

    /// `Γ(x) = {i : x_i ≠ 0}`.
    pub fn of(x: &DenseVector) -> Self {
        Self {
            indices: (0..x.len()).filter(|&i| x[i] != 0.0).collect(),
            n: x.len(),
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            n,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn ambient(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &SupportSet) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }

    pub fn complement(&self) -> Self {
        Self {
            indices: (0..self.n).filter(|&i| !self.contains(i)).collect(),
            n: self.n,
        }
    }

    /// `x_J`: copy of `x` with entries off `J` set to zero.
    pub fn restrict(&self, x: &DenseVector) -> DenseVector {
        let mut y = DVector::zeros(x.len());
        for &i in &self.indices {
            y[i] = x[i];
        }
        y
    }

    /// Whether `v ∈ S_J`, i.e. `supp(v) ⊆ J`.
    pub fn spans(&self, v: &DenseVector) -> bool {
        (0..v.len()).all(|i| v[i] == 0.0 || self.contains(i))
    }
}

impl fmt::Display for SupportSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.indices.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// Indices of the `s` largest magnitudes, ties resolved toward the lowest index.
pub fn top_s_support(x: &DenseVector, s: usize) -> SupportSet {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| match x[j].abs().partial_cmp(&x[i].abs()) {
        Some(Ordering::Equal) | None => i.cmp(&j),
        Some(o) => o,
    });
    let mut kept: Vec<usize> = order.into_iter().take(s.min(n)).collect();
    kept.sort_unstable();
    SupportSet { indices: kept, n }
}

/// `Π_S(x)`: keeps the `s` largest entries by magnitude and zeroes the rest.
///
/// Among equal magnitudes the lowest index wins, so the result is a fixed
/// element of the (possibly set-valued) projection.
pub fn project_sparse(x: &DenseVector, s: usize) -> DenseVector {
    if s >= x.len() {
        return x.clone();
    }
    top_s_support(x, s).restrict(x)
}

/// Lexicographic enumeration of `{J : base ⊆ J ⊆ [n], |J| = size}`.
pub fn supersets(base: &SupportSet, size: usize) -> Vec<SupportSet> {
    let n = base.n;
    if size < base.len() || size > n {
        return Vec::new();
    }
    let free = base.complement();
    let extra = size - base.len();
    let mut out = Vec::new();
    for pick in combinations(free.len(), extra) {
        let mut idx = base.indices.clone();
        idx.extend(pick.iter().map(|&k| free.indices[k]));
        idx.sort_unstable();
        out.push(SupportSet { indices: idx, n });
    }
    out
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in (i + 1)..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    BouligandTangent,
    FrechetNormal,
    MordukhovichNormal,
}

#[derive(Debug, Clone)]
pub struct ConeQuery {
    pub base_point: DenseVector,
    pub kind: ConeKind,
}

/// Exact membership of `v` in the chosen cone of `S` at `q.base_point`.
///
/// Uses support counting instead of enumerating `𝓙*`:
/// `v ∈ ∪_{J∈𝓙*} S_J ⇔ ‖v_{Γ̄*}‖₀ ≤ s − |Γ*|` and
/// `v ∈ ∪_{J∈𝓙*} S_{J̄} ⇔ supp(v) ∩ Γ* = ∅ ∧ ‖v‖₀ ≤ n − s`.
pub fn cone_membership(q: &ConeQuery, v: &DenseVector, s: usize) -> Result<bool> {
    let gamma = check_query(q, v, s)?;
    let n = v.len();
    let full = gamma.len() == s;
    let off_gamma = (0..n).filter(|&i| v[i] != 0.0 && !gamma.contains(i)).count();
    let on_gamma = (0..n).filter(|&i| v[i] != 0.0 && gamma.contains(i)).count();
    Ok(match (q.kind, full) {
        (ConeKind::BouligandTangent, true) => off_gamma == 0,
        (ConeKind::BouligandTangent, false) => off_gamma <= s - gamma.len(),
        (ConeKind::FrechetNormal | ConeKind::MordukhovichNormal, true) => on_gamma == 0,
        (ConeKind::FrechetNormal, false) => l0_norm(v) == 0,
        (ConeKind::MordukhovichNormal, false) => on_gamma == 0 && l0_norm(v) <= n - s,
    })
}

/// Same answer as [`cone_membership`], by explicit enumeration of `𝓙*`.
/// Exponential in `n`; used to validate the counting rules.
pub fn cone_membership_enumerated(q: &ConeQuery, v: &DenseVector, s: usize) -> Result<bool> {
    let gamma = check_query(q, v, s)?;
    let js = supersets(&gamma, s);
    Ok(match q.kind {
        ConeKind::BouligandTangent => js.iter().any(|j| j.spans(v)),
        ConeKind::MordukhovichNormal => js.iter().any(|j| j.complement().spans(v)),
        ConeKind::FrechetNormal => {
            if gamma.len() == s {
                gamma.complement().spans(v)
            } else {
                l0_norm(v) == 0
            }
        }
    })
}

fn check_query(q: &ConeQuery, v: &DenseVector, s: usize) -> Result<SupportSet> {
    let n = q.base_point.len();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.len(),
        });
    }
    if s == 0 || s > n {
        return Err(Error::Precondition(format!("sparsity {s} outside 1..={n}")));
    }
    let gamma = SupportSet::of(&q.base_point);
    if gamma.len() > s {
        return Err(Error::Precondition(format!(
            "base point has {} nonzeros, more than s={s}",
            gamma.len()
        )));
    }
    Ok(gamma)
}
