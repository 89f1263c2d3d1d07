//! Small dense linear algebra helpers shared across modules: Gauss-Legendre
//! rules, complex LU solves with condition probes, and a blocked complex LU
//! that is substantially faster than the generic one at the sizes the torus
//! solver produces.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Gauss-Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Newton iteration on P_n with the usual Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p1n = if n == 1 { x } else { p1 };
            let p0n = if n == 1 { 1.0 } else { p0 };
            pp = n as f64 * (x * p1n - p0n) / (x * x - 1.0);
            let dx = p1n / pp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Blocked right-looking LU with partial pivoting for complex matrices.
/// Stores L and U in place plus the pivot sequence.
pub struct ComplexLu {
    lu: DMatrix<Complex64>,
    piv: Vec<usize>,
    /// infinity norm of the original matrix, for condition probes
    norm_a: f64,
}

const LU_BLOCK: usize = 48;

impl ComplexLu {
    pub fn factor(mut a: DMatrix<Complex64>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let norm_a = (0..n)
            .map(|i| (0..n).map(|j| a[(i, j)].norm()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let mut piv: Vec<usize> = (0..n).collect();
        let mut k0 = 0;
        while k0 < n {
            let kb = LU_BLOCK.min(n - k0);
            // panel factorization (columns k0..k0+kb)
            for k in k0..k0 + kb {
                // pivot search in column k below the diagonal
                let (mut ip, mut best) = (k, a[(k, k)].norm());
                for i in k + 1..n {
                    let v = a[(i, k)].norm();
                    if v > best {
                        best = v;
                        ip = i;
                    }
                }
                if best == 0.0 {
                    return Err(Error::IllConditioned(f64::INFINITY));
                }
                if ip != k {
                    a.swap_rows(ip, k);
                    piv.swap(ip, k);
                }
                let d = a[(k, k)];
                for i in k + 1..n {
                    a[(i, k)] /= d;
                }
                // update the remaining panel columns
                for j in k + 1..k0 + kb {
                    let akj = a[(k, j)];
                    if akj != Complex64::default() {
                        for i in k + 1..n {
                            let lik = a[(i, k)];
                            a[(i, j)] -= lik * akj;
                        }
                    }
                }
            }
            let k1 = k0 + kb;
            if k1 < n {
                // U12 = L11^{-1} A12 (unit lower triangular solve)
                for j in k1..n {
                    for k in k0..k1 {
                        let akj = a[(k, j)];
                        if akj != Complex64::default() {
                            for i in k + 1..k1 {
                                let lik = a[(i, k)];
                                a[(i, j)] -= lik * akj;
                            }
                        }
                    }
                }
                // trailing update A22 -= L21 * U12, column by column
                for j in k1..n {
                    for k in k0..k1 {
                        let ukj = a[(k, j)];
                        if ukj != Complex64::default() {
                            for i in k1..n {
                                let lik = a[(i, k)];
                                a[(i, j)] -= lik * ukj;
                            }
                        }
                    }
                }
            }
            k0 = k1;
        }
        Ok(ComplexLu { lu: a, piv, norm_a })
    }

    pub fn solve_vec(&self, b: &DVector<Complex64>) -> DVector<Complex64> {
        let n = self.lu.nrows();
        let mut x = DVector::from_element(n, Complex64::default());
        for i in 0..n {
            x[i] = b[self.piv[i]];
        }
        // forward substitution with unit lower triangle
        for k in 0..n {
            let xk = x[k];
            if xk != Complex64::default() {
                for i in k + 1..n {
                    let l = self.lu[(i, k)];
                    x[i] -= l * xk;
                }
            }
        }
        // back substitution
        for k in (0..n).rev() {
            x[k] /= self.lu[(k, k)];
            let xk = x[k];
            if xk != Complex64::default() {
                for i in 0..k {
                    let u = self.lu[(i, k)];
                    x[i] -= u * xk;
                }
            }
        }
        x
    }

    /// Randomized probe of cond_inf(A) = ||A|| ||A^{-1}||.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.lu.nrows();
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut best = 0.0f64;
        for _ in 0..4 {
            let b = DVector::from_fn(n, |_, _| {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let s = if (seed >> 62) & 1 == 0 { 1.0 } else { -1.0 };
                Complex64::new(s, 0.0)
            });
            let x = self.solve_vec(&b);
            let nx = x.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
            best = best.max(nx);
        }
        self.norm_a * best
    }
}

/// Solve a dense complex system, returning the solution and a condition probe.
pub fn solve_dense(a: DMatrix<Complex64>, b: &DVector<Complex64>) -> Result<(DVector<Complex64>, f64)> {
    let lu = ComplexLu::factor(a)?;
    let x = lu.solve_vec(b);
    Ok((x, lu.condition_estimate()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        // exact for degree <= 15
        for d in 0..=15usize {
            let quad: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(d as i32)).sum();
            let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
            assert!((quad - exact).abs() < 1e-13, "degree {d}");
        }
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lu_solves_random_system() {
        let n = 137;
        let mut seed = 42u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DMatrix::<Complex64>::from_fn(n, n, |_, _| Complex64::new(rnd(), rnd()));
        let xtrue = DVector::<Complex64>::from_fn(n, |_, _| Complex64::new(rnd(), rnd()));
        let b = &a * &xtrue;
        let (x, cond) = solve_dense(a, &b).unwrap();
        let err = (&x - &xtrue).iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        assert!(err < 1e-10, "err {err}");
        assert!(cond > 1.0 && cond.is_finite());
    }
}
