//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

/// Number of nonzero entries.
pub fn l0_norm(x: &DVector<f64>) -> usize {
    x.iter().filter(|v| **v != 0.0).count()
}

/// Binomial coefficient as f64 (exact for the sizes the guards admit).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Spectral norm of a matrix (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Numerical rank from singular values, threshold relative to the largest column norm.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let max_col = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max_col == 0.0 {
        return 0;
    }
    let threshold = rel_tol * max_col;
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|s| **s > threshold)
        .count()
}

/// Parses a comma-separated list of floats, e.g. `1,1,0,0`.
pub fn parse_vector(text: &str) -> Result<DVector<f64>, String> {
    let values: Result<Vec<f64>, _> = text
        .split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect();
    values
        .map(DVector::from_vec)
        .map_err(|e| format!("cannot parse vector {text:?}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1e16, 1.0, -1e16];
        values.extend(std::iter::repeat_n(1e-3, 1000));
        let s = compensated_sum(values);
        assert!((s - 2.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(8, 3), 56.0);
        assert_eq!(binomial(10, 0), 1.0);
        assert_eq!(binomial(3, 5), 0.0);
        assert_eq!(binomial(24, 12), 2_704_156.0);
    }

    #[test]
    fn rank_of_dependent_columns() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(numerical_rank(&m, 1e-10), 1);
    }

    #[test]
    fn parse_vector_roundtrip() {
        let v = parse_vector("1, -2.5,0").unwrap();
        assert_eq!(v.as_slice(), &[1.0, -2.5, 0.0]);
        assert!(parse_vector("1,x").is_err());
    }
}
