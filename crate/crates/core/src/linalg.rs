//! Small dense linear algebra used by the fault solver and the discriminant
//! fits. Problem sizes here are tens of unknowns, so plain LU with partial
//! pivoting is the right tool.

use num_complex::Complex64;

/// LU factorization (partial pivoting) of a dense complex matrix.
pub struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

impl ComplexLu {
    /// Factor `a` (row-major, n x n). Returns `None` when a pivot falls below
    /// `tol` relative to the largest element, i.e. the matrix is singular.
    pub fn factor(a: &[Complex64], n: usize, tol: f64) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu
            .iter()
            .map(|z| z.norm())
            .fold(0.0_f64, f64::max)
            .max(1.0);

        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_mag = lu[col * n + col].norm();
            for row in col + 1..n {
                let mag = lu[row * n + col].norm();
                if mag > pivot_mag {
                    pivot_mag = mag;
                    pivot_row = row;
                }
            }
            if pivot_mag < tol * scale {
                return None;
            }
            if pivot_row != col {
                for k in 0..n {
                    lu.swap(col * n + k, pivot_row * n + k);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = lu[col * n + col];
            for row in col + 1..n {
                let factor = lu[row * n + col] / pivot;
                lu[row * n + col] = factor;
                for k in col + 1..n {
                    let sub = factor * lu[col * n + k];
                    lu[row * n + k] -= sub;
                }
            }
        }
        Some(ComplexLu { n, lu, perm })
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for row in 1..n {
            for col in 0..row {
                let sub = self.lu[row * n + col] * x[col];
                x[row] -= sub;
            }
        }
        for row in (0..n).rev() {
            for col in row + 1..n {
                let sub = self.lu[row * n + col] * x[col];
                x[row] -= sub;
            }
            x[row] /= self.lu[row * n + row];
        }
        x
    }

    /// Full inverse, column by column.
    pub fn inverse(&self) -> Vec<Complex64> {
        let n = self.n;
        let mut inv = vec![Complex64::new(0.0, 0.0); n * n];
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        for col in 0..n {
            e.fill(Complex64::new(0.0, 0.0));
            e[col] = Complex64::new(1.0, 0.0);
            let x = self.solve(&e);
            for row in 0..n {
                inv[row * n + col] = x[row];
            }
        }
        inv
    }
}

/// LU factorization (partial pivoting) of a dense real matrix.
pub struct RealLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
}

impl RealLu {
    pub fn factor(a: &[f64], n: usize, tol: f64) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = lu.iter().map(|v| v.abs()).fold(0.0_f64, f64::max).max(1.0);

        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_mag = lu[col * n + col].abs();
            for row in col + 1..n {
                let mag = lu[row * n + col].abs();
                if mag > pivot_mag {
                    pivot_mag = mag;
                    pivot_row = row;
                }
            }
            if pivot_mag < tol * scale {
                return None;
            }
            if pivot_row != col {
                for k in 0..n {
                    lu.swap(col * n + k, pivot_row * n + k);
                }
                perm.swap(col, pivot_row);
                sign = -sign;
            }
            let pivot = lu[col * n + col];
            for row in col + 1..n {
                let factor = lu[row * n + col] / pivot;
                lu[row * n + col] = factor;
                for k in col + 1..n {
                    lu[row * n + k] -= factor * lu[col * n + k];
                }
            }
        }
        Some(RealLu { n, lu, perm, sign })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for row in 1..n {
            for col in 0..row {
                x[row] -= self.lu[row * n + col] * x[col];
            }
        }
        for row in (0..n).rev() {
            for col in row + 1..n {
                x[row] -= self.lu[row * n + col] * x[col];
            }
            x[row] /= self.lu[row * n + row];
        }
        x
    }

    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for col in 0..n {
            e.fill(0.0);
            e[col] = 1.0;
            let x = self.solve(&e);
            for row in 0..n {
                inv[row * n + col] = x[row];
            }
        }
        inv
    }

    pub fn log_abs_det(&self) -> f64 {
        let n = self.n;
        (0..n).map(|i| self.lu[i * n + i].abs().ln()).sum()
    }

    pub fn det_sign(&self) -> f64 {
        let n = self.n;
        let mut s = self.sign;
        for i in 0..n {
            if self.lu[i * n + i] < 0.0 {
                s = -s;
            }
        }
        s
    }
}
