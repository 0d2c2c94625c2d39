//! Dense complex LU factorization with partial pivoting.

use num_complex::Complex64;

/// `P A = L U` stored in one row-major buffer; `L` has an implicit unit diagonal.
#[derive(Debug, Clone)]
pub struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    // Row k of P A is row perm[k] of A.
    perm: Vec<usize>,
    norm1: f64,
}

/// Returned when a pivot is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPivot(pub usize);

impl ComplexLu {
    /// Factors the row-major `n x n` matrix `a`.
    pub fn factor(mut a: Vec<Complex64>, n: usize) -> Result<Self, SingularPivot> {
        assert_eq!(a.len(), n * n, "matrix buffer does not match dimension");
        let norm1 = (0..n)
            .map(|j| (0..n).map(|i| a[i * n + j].norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..n {
            let mut piv = k;
            let mut best = a[k * n + k].norm_sqr();
            for i in k + 1..n {
                let v = a[i * n + k].norm_sqr();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == 0.0 {
                return Err(SingularPivot(k));
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let inv = a[k * n + k].inv();
            let (head, tail) = a.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n + k + 1..(k + 1) * n];
            for row in tail.chunks_exact_mut(n) {
                let m = row[k] * inv;
                row[k] = m;
                if m == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (x, &p) in row[k + 1..].iter_mut().zip(pivot_row) {
                    *x -= m * p;
                }
            }
        }
        Ok(Self {
            n,
            lu: a,
            perm,
            norm1,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`, overwriting `b` with `x`.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let mut s = x[i];
            for (l, xj) in row.iter().zip(&x[..i]) {
                s -= l * xj;
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let mut s = x[i];
            for (u, xj) in row[i + 1..].iter().zip(&x[i + 1..]) {
                s -= u * xj;
            }
            x[i] = s / row[i];
        }
        b.copy_from_slice(&x);
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `A^H x = b`.
    pub fn solve_adjoint(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        // U^H w = b (forward), L^H v = w (backward), x = P^T v.
        let mut w = b.to_vec();
        for i in 0..n {
            let mut s = w[i];
            for j in 0..i {
                s -= self.lu[j * n + i].conj() * w[j];
            }
            w[i] = s / self.lu[i * n + i].conj();
        }
        for i in (0..n).rev() {
            let mut s = w[i];
            for j in i + 1..n {
                s -= self.lu[j * n + i].conj() * w[j];
            }
            w[i] = s;
        }
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = w[k];
        }
        x
    }

    /// Hager-Higham estimate of the 1-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 1.0;
        }
        let zero = Complex64::new(0.0, 0.0);
        let mut x = vec![Complex64::new(1.0 / n as f64, 0.0); n];
        let mut estimate = 0.0;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let y = self.solve(&x);
            estimate = y.iter().map(|v| v.norm()).sum::<f64>();
            let xi: Vec<Complex64> = y
                .iter()
                .map(|v| {
                    let r = v.norm();
                    if r == 0.0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        v / r
                    }
                })
                .collect();
            let z = self.solve_adjoint(&xi);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.norm()))
                .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x.iter_mut().for_each(|v| *v = zero);
            x[j] = Complex64::new(1.0, 0.0);
        }
        self.norm1 * estimate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn matvec(a: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn solves_random_system() {
        let n = 12;
        let a = random_matrix(n, 3);
        let x_true: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, -0.5)).collect();
        let b = matvec(&a, &x_true);
        let lu = ComplexLu::factor(a, n).unwrap();
        let x = lu.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).norm() < 1e-10);
        }
    }

    #[test]
    fn adjoint_solve_matches_conjugate_transpose() {
        let n = 9;
        let a = random_matrix(n, 5);
        let mut ah = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                ah[j * n + i] = a[i * n + j].conj();
            }
        }
        let x_true: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0, i as f64)).collect();
        let b = matvec(&ah, &x_true);
        let lu = ComplexLu::factor(a, n).unwrap();
        let x = lu.solve_adjoint(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_matrix_is_singular() {
        let err = ComplexLu::factor(vec![Complex64::new(0.0, 0.0); 4], 2).unwrap_err();
        assert_eq!(err, SingularPivot(0));
    }

    #[test]
    fn condition_estimate_of_diagonal() {
        let mut a = vec![Complex64::new(0.0, 0.0); 9];
        a[0] = Complex64::new(1.0, 0.0);
        a[4] = Complex64::new(0.0, 1e-3);
        a[8] = Complex64::new(10.0, 0.0);
        let lu = ComplexLu::factor(a, 3).unwrap();
        let c = lu.condition_estimate();
        assert!((c - 1e4).abs() < 1e-6 * 1e4, "{c}");
    }
}
