use crate::real::Real;

/// LU factorisation with partial pivoting of a row-major `n x n` matrix.
#[derive(Debug, Clone)]
pub struct Lu<R> {
    n: usize,
    lu: Vec<R>,
    perm: Vec<usize>,
    sign: R,
}

impl<R: Real> Lu<R> {
    pub fn factor(matrix: &[R], n: usize) -> Self {
        assert_eq!(matrix.len(), n * n);
        let mut lu = matrix.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = R::one();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| {
                    lu[a * n + col]
                        .abs()
                        .partial_cmp(&lu[b * n + col].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            if pivot != col {
                for j in 0..n {
                    lu.swap(col * n + j, pivot * n + j);
                }
                perm.swap(col, pivot);
                sign = -sign;
            }
            let diag = lu[col * n + col];
            if diag == R::zero() {
                continue;
            }
            for row in col + 1..n {
                let factor = lu[row * n + col] / diag;
                lu[row * n + col] = factor;
                for j in col + 1..n {
                    let v = lu[col * n + j];
                    lu[row * n + j] -= factor * v;
                }
            }
        }
        Self { n, lu, perm, sign }
    }

    pub fn det(&self) -> R {
        (0..self.n).fold(self.sign, |acc, i| acc * self.lu[i * self.n + i])
    }

    /// `(sign, log|det|)`.
    pub fn log_abs_det(&self) -> (R, R) {
        let mut sign = self.sign;
        let mut log = R::zero();
        for i in 0..self.n {
            let d = self.lu[i * self.n + i];
            if d < R::zero() {
                sign = -sign;
            }
            log += d.abs().ln();
        }
        (sign, log)
    }

    pub fn solve(&self, rhs: &[R]) -> Vec<R> {
        let n = self.n;
        let mut x: Vec<R> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[i * n + j];
                let xj = x[j];
                x[i] -= l * xj;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.lu[i * n + j];
                let xj = x[j];
                x[i] -= u * xj;
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }

    pub fn inverse(&self) -> Vec<R> {
        let n = self.n;
        let mut inv = vec![R::zero(); n * n];
        let mut e = vec![R::zero(); n];
        for col in 0..n {
            e.iter_mut().for_each(|v| *v = R::zero());
            e[col] = R::one();
            let x = self.solve(&e);
            for row in 0..n {
                inv[row * n + col] = x[row];
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_and_inverse_of_small_matrix() {
        let m: [f64; 9] = [0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = Lu::factor(&m, 3);
        // cofactor expansion along the first row
        let det: f64 = 0.0 * (1.0 * 1.0 - 0.0) - 2.0 * (1.0 * 1.0 - 0.0 * 3.0) + 1.0 * (0.0 - 3.0);
        assert!((lu.det() - det).abs() < 1e-14);
        let (sign, log) = lu.log_abs_det();
        assert_eq!(sign, det.signum());
        assert!((log - det.abs().ln()).abs() < 1e-14);
        let inv = lu.inverse();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| m[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }
}
