use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivots whose magnitude falls below this are treated as exact zeros.
pub const SINGULARITY_TOLERANCE: f64 = 1e-12;

/// Dense `dim × dim` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl SquareMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = 1.0;
        }
        Self { dim, values }
    }

    pub fn from_vec(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::Shape(format!(
                "{} values do not fill a {dim}x{dim} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("square matrix entry".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = Self::identity(dim);
        for (i, d) in diag.iter().enumerate() {
            m.values[i * dim + i] = *d;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.dim + col] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn matmul(&self, other: &SquareMatrix) -> Result<SquareMatrix> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!(
                "cannot multiply {0}x{0} by {1}x{1}",
                self.dim, other.dim
            )));
        }
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.values[i * n + k];
                for j in 0..n {
                    out[i * n + j] += a * other.values[k * n + j];
                }
            }
        }
        Ok(SquareMatrix { dim: n, values: out })
    }

    pub fn transpose(&self) -> SquareMatrix {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[j * n + i] = self.values[i * n + j];
            }
        }
        SquareMatrix { dim: n, values: out }
    }

    pub fn lu(&self) -> Result<LuDecomposition> {
        LuDecomposition::new(self.dim, &self.values)
    }
}

/// `ln |det m|` through a partially pivoted LU factorization.
pub fn logabsdet(m: &SquareMatrix) -> Result<f64> {
    Ok(m.lu()?.logabsdet())
}

/// Row-pivoted LU factorization `P A = L U` with unit-diagonal `L`.
#[derive(Debug, Clone)]
pub struct LuDecomposition {
    dim: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl LuDecomposition {
    /// Factor a row-major `dim × dim` matrix.
    pub fn new(dim: usize, values: &[f64]) -> Result<Self> {
        assert_eq!(values.len(), dim * dim);
        let mut lu = values.to_vec();
        let mut perm: Vec<usize> = (0..dim).collect();
        for k in 0..dim {
            let (p, pivot) = (k..dim)
                .map(|r| (r, lu[r * dim + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot < SINGULARITY_TOLERANCE {
                return Err(Error::Singular { pivot });
            }
            if p != k {
                for c in 0..dim {
                    lu.swap(k * dim + c, p * dim + c);
                }
                perm.swap(k, p);
            }
            let diag = lu[k * dim + k];
            for r in (k + 1)..dim {
                let factor = lu[r * dim + k] / diag;
                lu[r * dim + k] = factor;
                if factor != 0.0 {
                    for c in (k + 1)..dim {
                        lu[r * dim + c] -= factor * lu[k * dim + c];
                    }
                }
            }
        }
        Ok(Self { dim, lu, perm })
    }

    pub fn logabsdet(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lu[i * self.dim + i].abs().ln())
            .sum()
    }

    /// Smallest pivot magnitude; a conditioning proxy.
    pub fn min_pivot(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lu[i * self.dim + i].abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    pub fn inverse(&self) -> SquareMatrix {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                out[i * n + j] = col[i];
            }
        }
        SquareMatrix { dim: n, values: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    /// Laplace expansion along the first row.
    fn cofactor_det(m: &[f64], n: usize) -> f64 {
        if n == 1 {
            return m[0];
        }
        let mut det = 0.0;
        for col in 0..n {
            let mut minor = Vec::with_capacity((n - 1) * (n - 1));
            for r in 1..n {
                for c in 0..n {
                    if c != col {
                        minor.push(m[r * n + c]);
                    }
                }
            }
            let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
            det += sign * m[col] * cofactor_det(&minor, n - 1);
        }
        det
    }

    fn random_matrix(rng: &mut SeededRng, n: usize) -> SquareMatrix {
        SquareMatrix::from_vec(n, rng.standard_normal_vec(n * n)).unwrap()
    }

    #[test]
    fn identity_has_zero_logdet() {
        assert_eq!(logabsdet(&SquareMatrix::identity(3)).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_logdet_is_log_product() {
        let v = logabsdet(&SquareMatrix::diagonal(&[2.0, 3.0])).unwrap();
        assert!((v - 6f64.ln()).abs() < 1e-15);
        assert!((v - 1.7917595).abs() < 1e-7);
    }

    #[test]
    fn random_5x5_matches_cofactor_expansion() {
        let mut rng = SeededRng::new(11);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 5);
            let oracle = cofactor_det(m.as_slice(), 5).abs().ln();
            let got = logabsdet(&m).unwrap();
            assert!(((got - oracle) / oracle).abs() <= 1e-10, "{got} vs {oracle}");
        }
    }

    #[test]
    fn logdet_of_product_is_additive() {
        let mut rng = SeededRng::new(3);
        for n in [2, 4, 7] {
            let a = random_matrix(&mut rng, n);
            let b = random_matrix(&mut rng, n);
            let ab = a.matmul(&b).unwrap();
            let lhs = logabsdet(&ab).unwrap();
            let rhs = logabsdet(&a).unwrap() + logabsdet(&b).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = SquareMatrix::from_vec(2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(logabsdet(&m), Err(Error::Singular { .. })));
    }

    #[test]
    fn inverse_and_solve_agree() {
        let mut rng = SeededRng::new(5);
        let m = random_matrix(&mut rng, 6);
        let lu = m.lu().unwrap();
        let inv = lu.inverse();
        let prod = m.matmul(&inv).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - expect).abs() < 1e-10);
            }
        }
    }
}
