//! Box-constrained convex quadratic programs `min ½wᵀMw + pᵀw, l ≤ w ≤ u`
//! with `M` symmetric positive semidefinite (possibly singular) and a finite box.
//!
//! Primal active-set method: on the current free set the step targets the
//! subspace minimizer (minimum-norm Newton step through the pseudo-inverse);
//! when the free block is singular and the gradient has a component in its
//! null space, that component is a direction of linear decrease and is
//! followed to the box boundary.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub w: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Free,
    Lower,
    Upper,
}

fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = 1e-12 * top.max(1e-300);
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam.abs() > cut {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    out
}

/// Gradient-based optimality residual: largest violation of the box KKT conditions.
pub fn kkt_violation(
    m: &DMatrix<f64>,
    p: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    w: &DVector<f64>,
) -> f64 {
    let g = m * w + p;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        // Projected gradient: movement the bounds still allow.
        let v = if w[i] <= lower[i] {
            g[i].min(0.0)
        } else if w[i] >= upper[i] {
            g[i].max(0.0)
        } else {
            g[i]
        };
        worst = worst.max(v.abs());
    }
    worst
}

pub fn solve_box_qp(
    m: &DMatrix<f64>,
    p: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<BoxQpSolution> {
    let n = p.len();
    if m.nrows() != n || m.ncols() != n || lower.len() != n || upper.len() != n {
        return Err(Error::InvalidProblem("box QP shapes disagree".into()));
    }
    if (0..n).any(|i| !(lower[i].is_finite() && upper[i].is_finite() && lower[i] <= upper[i])) {
        return Err(Error::InvalidProblem(
            "box QP needs finite bounds with lower <= upper".into(),
        ));
    }
    let scale = 1.0 + m.iter().chain(p.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
    let grad_tol = 1e-13 * scale;
    let mut w = DVector::from_fn(n, |i, _| 0.0f64.clamp(lower[i], upper[i]));
    let mut state: Vec<State> = (0..n)
        .map(|i| {
            if lower[i] == upper[i] || w[i] <= lower[i] {
                State::Lower
            } else if w[i] >= upper[i] {
                State::Upper
            } else {
                State::Free
            }
        })
        .collect();
    let max_iter = 200 * (n + 1) * (n + 1);
    for iter in 0..max_iter {
        let g = m * &w + p;
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == State::Free).collect();
        let mut dir = DVector::zeros(n);
        let mut newton = true;
        if !free.is_empty() {
            let mff = DMatrix::from_fn(free.len(), free.len(), |a, b| m[(free[a], free[b])]);
            let gf = DVector::from_fn(free.len(), |a, _| g[free[a]]);
            let pinv = pinv_sym(&mff);
            let d = -(&pinv * &gf);
            let resid = &mff * &d + &gf;
            if resid.amax() > 1e-10 * scale {
                // Null-space component of −g_F: linear decrease direction.
                let proj = -(&gf - &mff * (&pinv * &gf));
                for (a, &i) in free.iter().enumerate() {
                    dir[i] = proj[a];
                }
                newton = false;
            } else {
                for (a, &i) in free.iter().enumerate() {
                    dir[i] = d[a];
                }
            }
        }
        let moving = dir.amax() > 0.0;
        if moving {
            let mut t = if newton { 1.0 } else { f64::INFINITY };
            let mut block = None;
            for i in 0..n {
                if dir[i] > 0.0 {
                    let ti = (upper[i] - w[i]) / dir[i];
                    if ti < t {
                        t = ti;
                        block = Some((i, State::Upper));
                    }
                } else if dir[i] < 0.0 {
                    let ti = (lower[i] - w[i]) / dir[i];
                    if ti < t {
                        t = ti;
                        block = Some((i, State::Lower));
                    }
                }
            }
            let t = t.max(0.0);
            if !t.is_finite() {
                return Err(Error::Precondition("box QP direction is unbounded".into()));
            }
            w += &dir * t;
            if let Some((i, st)) = block {
                w[i] = if st == State::Upper { upper[i] } else { lower[i] };
                state[i] = st;
                continue;
            }
            if !newton {
                continue;
            }
        }
        for i in 0..n {
            w[i] = w[i].clamp(lower[i], upper[i]);
        }
        // Subspace minimum reached: release the worst wrongly-signed bound.
        let g = m * &w + p;
        let mut release = None;
        let mut worst = grad_tol;
        for i in 0..n {
            if lower[i] == upper[i] {
                continue;
            }
            let v = match state[i] {
                State::Lower => -g[i],
                State::Upper => g[i],
                State::Free => continue,
            };
            if v > worst {
                worst = v;
                release = Some(i);
            }
        }
        match release {
            Some(i) => state[i] = State::Free,
            None => {
                let value = 0.5 * w.dot(&(m * &w)) + p.dot(&w);
                return Ok(BoxQpSolution {
                    w,
                    value,
                    iterations: iter + 1,
                });
            }
        }
    }
    Err(Error::Precondition("box QP active-set iteration limit reached".into()))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Exact optimum by enumerating every lower/upper/free pattern.
    fn enumerate(m: &DMatrix<f64>, p: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let n = p.len();
        let mut best = f64::INFINITY;
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let mut w = DVector::zeros(n);
            let mut free = Vec::new();
            for i in 0..n {
                match c % 3 {
                    0 => w[i] = l[i],
                    1 => w[i] = u[i],
                    _ => free.push(i),
                }
                c /= 3;
            }
            if !free.is_empty() {
                let mff = DMatrix::from_fn(free.len(), free.len(), |a, b| m[(free[a], free[b])]);
                let rhs = DVector::from_fn(free.len(), |a, _| {
                    -(p[free[a]]
                        + (0..n)
                            .filter(|j| !free.contains(j))
                            .map(|j| m[(free[a], j)] * w[j])
                            .sum::<f64>())
                });
                let pinv = pinv_sym(&mff);
                let y = &pinv * &rhs;
                if (&mff * &y - &rhs).amax() > 1e-9 {
                    continue;
                }
                for (a, &i) in free.iter().enumerate() {
                    w[i] = y[a];
                }
            }
            if (0..n).any(|i| w[i] < l[i] - 1e-12 || w[i] > u[i] + 1e-12) {
                continue;
            }
            best = best.min(0.5 * w.dot(&(m * &w)) + p.dot(&w));
        }
        best
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        rank: usize,
    ) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let b = DMatrix::from_fn(n, rank, |_, _| rng.gen_range(-1.0..1.0));
        let m = &b * b.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let p = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let l = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..0.0));
        let u = DVector::from_fn(n, |i, _| l[i] + rng.gen_range(0.1..3.0));
        (m, p, l, u)
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let n = rng.gen_range(1..=6);
            let rank = rng.gen_range(0..=n);
            let (m, p, l, u) = random_instance(&mut rng, n, rank);
            let sol = solve_box_qp(&m, &p, &l, &u).unwrap();
            let exact = enumerate(&m, &p, &l, &u);
            assert!(
                (sol.value - exact).abs() <= 1e-9 * exact.abs().max(1.0),
                "trial {trial} rank {rank}: {} vs {exact}",
                sol.value
            );
            assert!(kkt_violation(&m, &p, &l, &u, &sol.w) <= 1e-9);
        }
    }

    #[test]
    fn zero_matrix_goes_to_a_corner() {
        let m = DMatrix::zeros(2, 2);
        let p = DVector::from_vec(vec![1.0, -2.0]);
        let l = DVector::from_element(2, -1.0);
        let u = DVector::from_element(2, 1.0);
        let sol = solve_box_qp(&m, &p, &l, &u).unwrap();
        assert_eq!(sol.w.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn interior_minimizer() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let p = DVector::from_vec(vec![-1.0, 2.0]);
        let sol = solve_box_qp(&m, &p, &DVector::from_element(2, -5.0), &DVector::from_element(2, 5.0)).unwrap();
        assert!((sol.w[0] - 0.5).abs() < 1e-14 && (sol.w[1] + 0.5).abs() < 1e-14);
    }
}
