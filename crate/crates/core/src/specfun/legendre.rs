//! Fully normalized associated Legendre functions with Condon-Shortley phase.
//!
//! The normalization is chosen so that Y_l^m(theta, phi) =
//! Pbar_l^m(cos theta) e^{i m phi} is orthonormal on the unit sphere.

/// Number of (l, m) pairs with 0 <= m <= l <= lmax.
pub fn tri_len(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 2) / 2
}

/// Packed index of (l, m) with m >= 0 in a table produced by [`legendre_table`].
pub fn tri_index(l: usize, m: usize) -> usize {
    debug_assert!(m <= l);
    l * (l + 1) / 2 + m
}

/// Table of Pbar_l^m(x) for all 0 <= m <= l <= lmax at a single x = cos(theta).
pub fn legendre_table(lmax: usize, x: f64) -> Vec<f64> {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut p = vec![0.0; tri_len(lmax)];
    p[0] = 0.25 / std::f64::consts::PI;
    p[0] = p[0].sqrt();
    // diagonal Pbar_m^m and first superdiagonal Pbar_{m+1}^m
    for m in 1..=lmax {
        let f = ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
        p[tri_index(m, m)] = -f * s * p[tri_index(m - 1, m - 1)];
    }
    for m in 0..lmax {
        p[tri_index(m + 1, m)] = ((2 * m + 3) as f64).sqrt() * x * p[tri_index(m, m)];
    }
    // upward in l
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            p[tri_index(l, m)] = a * (x * p[tri_index(l - 1, m)] - b * p[tri_index(l - 2, m)]);
        }
    }
    p
}

/// Tables of Pbar_l^m(cos theta) and d/dtheta Pbar_l^m(cos theta).
///
/// Valid away from the poles (the derivative recurrence divides by sin theta).
pub fn legendre_dtheta_table(lmax: usize, theta: f64) -> (Vec<f64>, Vec<f64>) {
    let x = theta.cos();
    let s = theta.sin();
    let p = legendre_table(lmax, x);
    let mut dp = vec![0.0; p.len()];
    let sinv = 1.0 / s.max(1e-300);
    for m in 0..=lmax {
        for l in m.max(1)..=lmax {
            let lf = l as f64;
            let mf = m as f64;
            let c = ((2.0 * lf + 1.0) * (lf * lf - mf * mf) / (2.0 * lf - 1.0)).sqrt();
            let pm1 = if l > m { p[tri_index(l - 1, m)] } else { 0.0 };
            dp[tri_index(l, m)] = (lf * x * p[tri_index(l, m)] - c * pm1) * sinv;
        }
    }
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_degree_closed_forms() {
        let x: f64 = 0.3;
        let s = (1.0f64 - x * x).sqrt();
        let p = legendre_table(3, x);
        let pi = std::f64::consts::PI;
        assert!((p[tri_index(0, 0)] - (1.0 / (4.0 * pi)).sqrt()).abs() < 1e-15);
        assert!((p[tri_index(1, 0)] - (3.0 / (4.0 * pi)).sqrt() * x).abs() < 1e-15);
        // Condon-Shortley: Pbar_1^1 = -sqrt(3/8pi) sin(theta)
        assert!((p[tri_index(1, 1)] + (3.0 / (8.0 * pi)).sqrt() * s).abs() < 1e-15);
        assert!(
            (p[tri_index(2, 0)] - (5.0 / (16.0 * pi)).sqrt() * (3.0 * x * x - 1.0)).abs() < 1e-15
        );
    }

    #[test]
    fn dtheta_matches_finite_differences() {
        let lmax = 8;
        let theta = 1.1f64;
        let h = 1e-5;
        let (_, dp) = legendre_dtheta_table(lmax, theta);
        let (pp, _) = legendre_dtheta_table(lmax, theta + h);
        let (pm, _) = legendre_dtheta_table(lmax, theta - h);
        for l in 0..=lmax {
            for m in 0..=l {
                let fd = (pp[tri_index(l, m)] - pm[tri_index(l, m)]) / (2.0 * h);
                assert!(
                    (dp[tri_index(l, m)] - fd).abs() < 1e-8,
                    "l={l} m={m}: {} vs {}",
                    dp[tri_index(l, m)],
                    fd
                );
            }
        }
    }
}
