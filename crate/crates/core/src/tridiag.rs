//! Thomas algorithm for tridiagonal systems.

use crate::error::{KsError, Result};

/// Tridiagonal matrix stored by diagonals.
///
/// Row `i` reads `lower[i] * x[i-1] + diag[i] * x[i] + upper[i] * x[i+1]`;
/// `lower[0]` and `upper[n-1]` are ignored.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Solve `A x = rhs`, returning `x`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.factor()?.solve_in_place(&mut x);
        Ok(x)
    }

    /// LU factorization without pivoting, reusable across right-hand sides.
    pub fn factor(&self) -> Result<TridiagonalLu> {
        let n = self.len();
        let mut inv_pivot = vec![0.0; n];
        let mut upper_scaled = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let pivot = if i == 0 {
                self.diag[0]
            } else {
                self.diag[i] - self.lower[i] * prev
            };
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(KsError::Singular(i));
            }
            inv_pivot[i] = 1.0 / pivot;
            prev = if i + 1 < n { self.upper[i] * inv_pivot[i] } else { 0.0 };
            upper_scaled[i] = prev;
        }
        Ok(TridiagonalLu {
            lower: self.lower.clone(),
            inv_pivot,
            upper_scaled,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    acc += self.upper[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper_scaled: Vec<f64>,
}

impl TridiagonalLu {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        if n == 0 {
            return;
        }
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper_scaled[i] * x[i + 1];
        }
    }
}
