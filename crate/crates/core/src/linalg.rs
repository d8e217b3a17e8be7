//! Small dense symmetric linear algebra.
//!
//! Dimensions here are tiny (a handful of regression features), so everything
//! is stored dense in row-major order and computed with plain loops.

use crate::error::{DreamError, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Dense symmetric `n x n` matrix stored in full row-major form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting asymmetric input.
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(DreamError::DimensionMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DreamError::NonFinite("matrix entries"));
        }
        let m = Self { n, data };
        m.check_symmetric()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(DreamError::DimensionMismatch {
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    pub fn check_symmetric(&self) -> Result<()> {
        let scale = self.data.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let asym = self.max_asymmetry();
        if asym > SYMMETRY_TOL * scale {
            return Err(DreamError::NotSymmetric(asym));
        }
        Ok(())
    }

    /// `self + x xᵀ` as a new matrix.
    pub fn rank1_update(&self, x: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.add_outer_in_place(x, 1.0)?;
        Ok(out)
    }

    /// `self += w · x xᵀ`. Only the upper triangle is computed and then
    /// mirrored, so the result is exactly symmetric.
    pub fn add_outer_in_place(&mut self, x: &[f64], w: f64) -> Result<()> {
        self.check_dim(x.len())?;
        let n = self.n;
        for i in 0..n {
            for j in i..n {
                let v = self.data[i * n + j] + w * x[i] * x[j];
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
        Ok(())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self
            .data
            .chunks_exact(self.n)
            .map(|row| dot(row, x))
            .collect())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rank-one inverse update: given `self = M⁻¹`, returns `(M + x xᵀ)⁻¹`.
    pub fn sherman_morrison_update(&self, x: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.sherman_morrison_in_place(x)?;
        Ok(out)
    }

    pub fn sherman_morrison_in_place(&mut self, x: &[f64]) -> Result<()> {
        let mx = self.mul_vec(x)?;
        let denom = 1.0 + dot(x, &mx);
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(DreamError::NotPositiveDefinite(
                "Sherman-Morrison denominator is not positive",
            ));
        }
        self.add_outer_in_place(&mx, -1.0 / denom)
    }

    /// `xᵀ M x`.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        let mx = self.mul_vec(x)?;
        Ok(dot(x, &mx))
    }

    /// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
    pub fn cholesky(&self) -> Result<LowerTriangular> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = self.get(j, j);
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > 0.0) {
                return Err(DreamError::NotPositiveDefinite("Cholesky pivot"));
            }
            let djj = diag.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(LowerTriangular { n, data: l })
    }

    /// Inverse of a positive definite matrix via its Cholesky factor.
    pub fn inverse_spd(&self) -> Result<Self> {
        let l = self.cholesky()?;
        let n = self.n;
        let mut inv = Self::zeros(n);
        let mut e = vec![0.0; n];
        for col in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[col] = 1.0;
            let y = l.solve_lower(&e);
            let x = l.solve_upper_transposed(&y);
            for row in 0..n {
                inv.data[row * n + col] = x[row];
            }
        }
        // symmetrize away round-off
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv.data[i * n + j] + inv.data[j * n + i]);
                inv.data[i * n + j] = v;
                inv.data[j * n + i] = v;
            }
        }
        Ok(inv)
    }

    /// All eigenvalues in ascending order, by cyclic Jacobi rotations.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.check_symmetric()?;
        let n = self.n;
        let mut a = self.data.clone();
        let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if scale == 0.0 {
            return Ok(vec![0.0; n]);
        }
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| a[i * n + j] * a[i * n + j])
                .sum();
            if off.sqrt() <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq.abs() <= f64::MIN_POSITIVE {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
        eig.sort_by(|x, y| x.total_cmp(y));
        Ok(eig)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(DreamError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        Ok(self.eigenvalues()?[0])
    }
}

/// Lower-triangular factor produced by [`SymMatrix::cholesky`].
#[derive(Debug, Clone)]
pub struct LowerTriangular {
    n: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// `L z`.
    pub fn mul_vec(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..=i).map(|k| self.get(i, k) * z[k]).sum())
            .collect()
    }

    fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.get(i, k) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        y
    }

    fn solve_upper_transposed(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.get(k, i) * x[k];
            }
            x[i] = s / self.get(i, i);
        }
        x
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
