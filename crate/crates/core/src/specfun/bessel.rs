//! Spherical Bessel and Hankel functions of complex argument.
//!
//! j_l is computed by an ascending series for small |z| and a downward
//! (Miller) recurrence otherwise; h_l = j_l + i y_l is computed by upward
//! recurrence, which is stable because h_l is the dominant solution.
//! For products j_l h_l at degrees where the factors over/underflow,
//! [`jh_products`] carries ratio recurrences instead of raw values.

use crate::{Error, Result};
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Number of guard degrees added above the requested maximum in downward
/// recurrences before normalization.
const MILLER_GUARD: usize = 40;

/// Rescale threshold for intermediate values in the downward recurrence.
const RESCALE_LIMIT: f64 = 1e250;

fn ln_double_factorial_odd(l: usize) -> f64 {
    // ln (2l+1)!!
    (0..=l).map(|i| ((2 * i + 1) as f64).ln()).sum()
}

/// Ascending series j_l(z) = z^l/(2l+1)!! * sum_m (-z^2/2)^m / (m! (2l+3)...(2l+2m+1)).
fn sph_j_series(l: usize, z: Complex64) -> Complex64 {
    let zz2 = -z * z * 0.5;
    let mut term = ONE;
    let mut sum = ONE;
    for m in 1..400 {
        term *= zz2 / (m as f64 * (2 * l + 2 * m + 1) as f64);
        sum += term;
        if term.norm() < 1e-18 * sum.norm() {
            break;
        }
    }
    // prefactor through logs so large l does not overflow the double factorial
    let ln_pref = (l as f64) * z.ln() - ln_double_factorial_odd(l);
    ln_pref.exp() * sum
}

/// Spherical Bessel function of the first kind, j_l(z).
///
/// Total on the complex plane; z = 0 returns the analytic limit.
pub fn sph_bessel_j(l: usize, z: Complex64) -> Complex64 {
    if z == ZERO {
        return if l == 0 { ONE } else { ZERO };
    }
    // series where its terms decay monotonically, downward recurrence otherwise
    if z.norm() < 0.7 * ((2 * l + 3) as f64).sqrt() {
        sph_j_series(l, z)
    } else {
        sph_bessel_j_seq(l, z)[l]
    }
}

/// j_0, ..., j_lmax at a common argument.
pub fn sph_bessel_j_seq(lmax: usize, z: Complex64) -> Vec<Complex64> {
    if z == ZERO {
        let mut out = vec![ZERO; lmax + 1];
        out[0] = ONE;
        return out;
    }
    let r = z.norm();
    // Miller downward recurrence, normalized against j_0 (or j_1 near zeros of sin)
    let start = lmax + r.ceil() as usize + MILLER_GUARD;
    let mut vals = vec![ZERO; lmax + 1];
    // seed magnitude keeps norm_sqr of every stored value out of the
    // underflow range (complex division squares the denominator norm)
    let mut fp = ZERO; // f_{n+1}
    let mut fc = Complex64::new(1e-30, 0.0); // f_n
    if start == lmax {
        vals[lmax] = fc;
    }
    for n in (1..=start).rev() {
        let fm = (2 * n + 1) as f64 / z * fc - fp;
        fp = fc;
        fc = fm;
        if fc.norm() > RESCALE_LIMIT {
            let s = 1.0 / RESCALE_LIMIT;
            fc *= s;
            fp *= s;
            for v in vals.iter_mut() {
                *v *= s;
            }
        }
        if n - 1 <= lmax {
            vals[n - 1] = fc;
        }
    }
    let j0 = z.sin() / z;
    let j1 = z.sin() / (z * z) - z.cos() / z;
    // pick the better-conditioned anchor
    let scale = if j0.norm() >= j1.norm() * 0.1 || lmax == 0 {
        j0 / vals[0]
    } else {
        j1 / vals[1]
    };
    for v in vals.iter_mut() {
        *v *= scale;
    }
    vals
}

/// Outgoing spherical Hankel function h^(1)_l(z).
pub fn sph_hankel_h1(l: usize, z: Complex64) -> Result<Complex64> {
    Ok(sph_hankel_h1_seq(l, z)?[l])
}

/// h_0, ..., h_lmax at a common argument. Errors at z = 0.
pub fn sph_hankel_h1_seq(lmax: usize, z: Complex64) -> Result<Vec<Complex64>> {
    if z == ZERO {
        return Err(Error::Domain("sph_hankel_h1 at z = 0".into()));
    }
    let e = (I * z).exp();
    let h0 = -I * e / z;
    let mut vals = vec![ZERO; lmax + 1];
    vals[0] = h0;
    if lmax == 0 {
        return Ok(vals);
    }
    vals[1] = -e * (z + I) / (z * z);
    for n in 1..lmax {
        vals[n + 1] = (2 * n + 1) as f64 / z * vals[n] - vals[n - 1];
    }
    Ok(vals)
}

/// Derivatives (j_l'(z), h_l'(z)) via z_l'(z) = z_{l-1}(z) - (l+1) z_l(z)/z.
pub fn sph_bessel_derivs(l: usize, z: Complex64) -> Result<(Complex64, Complex64)> {
    if z == ZERO {
        return Err(Error::Domain("sph_bessel_derivs at z = 0".into()));
    }
    let j = sph_bessel_j_seq(l + 1, z);
    let h = sph_hankel_h1_seq(l + 1, z)?;
    let jp = if l == 0 {
        -j[1]
    } else {
        j[l - 1] - (l + 1) as f64 / z * j[l]
    };
    let hp = if l == 0 {
        -h[1]
    } else {
        h[l - 1] - (l + 1) as f64 / z * h[l]
    };
    Ok((jp, hp))
}

/// Products of spherical Bessel and Hankel factors at a common argument,
/// computed from ratio recurrences so that no individual factor is ever
/// formed. Safe for degrees where j underflows and h overflows.
pub struct JhProducts {
    /// jh[l] = j_l(z) h_l(z), l = 0..=lmax
    pub jh: Vec<Complex64>,
    /// jm1_h[l] = j_{l-1}(z) h_l(z), valid for l >= 1 (index 0 unused)
    pub jm1_h: Vec<Complex64>,
    /// j_hm1[l] = j_l(z) h_{l-1}(z), valid for l >= 1 (index 0 unused)
    pub j_hm1: Vec<Complex64>,
    z: Complex64,
}

impl JhProducts {
    /// j_l'(z) h_l(z); l = 0 uses j_0' = -j_1
    pub fn jp_h(&self, l: usize) -> Complex64 {
        if l == 0 {
            return -self.j_hm1[1];
        }
        self.jm1_h[l] - (l + 1) as f64 / self.z * self.jh[l]
    }

    /// j_l(z) h_l'(z); l = 0 uses h_0' = -h_1
    pub fn j_hp(&self, l: usize) -> Complex64 {
        if l == 0 {
            return -self.jm1_h[1];
        }
        self.j_hm1[l] - (l + 1) as f64 / self.z * self.jh[l]
    }

    /// Wronskian defect j_l h_l' - j_l' h_l - i/z^2 (identically zero).
    pub fn wronskian_defect(&self, l: usize) -> Complex64 {
        self.j_hp(l) - self.jp_h(l) - I / (self.z * self.z)
    }
}

/// Compute [`JhProducts`] for degrees 0..=lmax at argument z != 0.
pub fn jh_products(lmax: usize, z: Complex64) -> Result<JhProducts> {
    if z == ZERO {
        return Err(Error::Domain("jh_products at z = 0".into()));
    }
    let n = lmax + 1;
    // downward ratio recurrence for rho_l = j_l/j_{l-1}
    let start = lmax + z.norm().ceil() as usize + MILLER_GUARD;
    let mut rho = vec![ZERO; start + 1];
    let mut r = z / (2 * start + 3) as f64;
    for l in (1..=start).rev() {
        let denom = (2 * l + 1) as f64 / z - r;
        r = if denom.norm() < 1e-300 {
            Complex64::new(1e300, 0.0)
        } else {
            1.0 / denom
        };
        rho[l] = r;
    }
    // upward ratio recurrence for sigma_l = h_l/h_{l-1}
    let mut sigma = vec![ZERO; n.max(2)];
    sigma[1] = (z + I) / (I * z);
    for l in 1..lmax {
        sigma[l + 1] = (2 * l + 1) as f64 / z - 1.0 / sigma[l];
    }
    let mut jh = vec![ZERO; n];
    let mut jm1_h = vec![ZERO; n];
    let mut j_hm1 = vec![ZERO; n];
    // j_0 h_0 = -(e^{2iz} - 1)/(2 z^2)
    jh[0] = -((2.0 * I * z).exp() - 1.0) / (2.0 * z * z);
    for l in 1..n {
        jm1_h[l] = jh[l - 1] * sigma[l];
        j_hm1[l] = jh[l - 1] * rho[l];
        jh[l] = jh[l - 1] * rho[l] * sigma[l];
    }
    Ok(JhProducts {
        jh,
        jm1_h,
        j_hm1,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn j0_closed_form() {
        let v = sph_bessel_j(0, c(1.0, 0.0));
        assert_abs_diff_eq!(v.re, 0.8414709848078965, epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn j_at_zero_is_kronecker() {
        assert_eq!(sph_bessel_j(0, ZERO), ONE);
        assert_eq!(sph_bessel_j(3, ZERO), ZERO);
    }

    #[test]
    fn j_matches_series_oracle() {
        // the downward-recurrence path must agree with a direct evaluation
        // of the defining ascending series
        let z = c(2.0, 1.0);
        let direct = sph_j_series(5, z);
        let v = sph_bessel_j_seq(5, z)[5];
        assert!((v - direct).norm() < 1e-12 * direct.norm().max(1.0));
        // frozen reference value
        assert!((v - c(-0.0026727447719204116, 0.00398143948877415)).norm() < 1e-14);
    }

    #[test]
    fn j_deep_in_miller_region() {
        let v = sph_bessel_j(20, c(10.0, 0.0));
        assert!((v.re - 2.3083719613194687e-06).abs() < 1e-18);
        let v = sph_bessel_j(100, c(50.0, 0.0));
        assert!((v.re - 1.0190122629310462e-22).abs() < 1e-34);
    }

    #[test]
    fn h0_closed_form() {
        let z = c(1.5, 0.0);
        let v = sph_hankel_h1(0, z).unwrap();
        let expect = -I * (I * z).exp() / z;
        assert!((v - expect).norm() < 1e-15);
        assert!((v - c(0.6649966577360363, -0.04715813444513527)).norm() < 1e-14);
    }

    #[test]
    fn h_rejects_zero() {
        assert!(sph_hankel_h1(2, ZERO).is_err());
    }

    #[test]
    fn h_factored_polynomial_oracle() {
        // h_l(z) = p_l(z) e^{iz} / z^{l+1} with p_l from the three-term
        // recurrence p_{l+1} = (2l+1) p_l - z^2 p_{l-1} scaled accordingly.
        // Build p_3 directly: p_0 = -i, p_1 = -(z + i),
        // z^{l+1} h_l satisfies same recurrence as h: q_{l+1} = (2l+1) q_l - z^2 q_{l-1}
        let z = c(2.0, 0.0);
        let e = (I * z).exp();
        let mut q0 = -I; // z h_0 / e^{iz}
        let mut q1 = -(z + I); // z^2 h_1 / e^{iz}
        for l in 1..3 {
            let q2 = (2 * l + 1) as f64 * q1 - z * z * q0;
            q0 = q1;
            q1 = q2;
        }
        let expect = q1 * e / z.powi(4);
        let v = sph_hankel_h1(3, z).unwrap();
        assert!((v - expect).norm() < 1e-13);
        assert!((v - c(0.06072209766287483, -1.48436655744308)).norm() < 1e-12);
    }

    #[test]
    fn derivative_identities() {
        // j_0' = -j_1
        let z = c(1.0, 0.0);
        let (jp, _) = sph_bessel_derivs(0, z).unwrap();
        assert_abs_diff_eq!(jp.re, -0.3011686789397568, epsilon = 1e-14);
        // frozen derivative values at l=3, z=2.5
        let (jp, hp) = sph_bessel_derivs(3, c(2.5, 0.0)).unwrap();
        assert!((jp - c(0.09379397796505892, 0.0)).norm() < 1e-13);
        assert!((hp - c(0.09379397796505892, 0.8206604960015378)).norm() < 1e-12);
    }

    #[test]
    fn three_term_recurrence_residual() {
        for &z in &[c(1.3, 0.0), c(4.0, 2.0), c(0.7, -1.1), c(11.0, 0.3)] {
            let j = sph_bessel_j_seq(12, z);
            let h = sph_hankel_h1_seq(12, z).unwrap();
            for l in 1..12usize {
                let rj = (2 * l + 1) as f64 / z * j[l] - j[l - 1] - j[l + 1];
                let rh = (2 * l + 1) as f64 / z * h[l] - h[l - 1] - h[l + 1];
                let sj = j[l - 1].norm().max(j[l + 1].norm()).max(1e-30);
                let sh = h[l - 1].norm().max(h[l + 1].norm());
                assert!(rj.norm() < 1e-12 * sj, "j recurrence at l={l}, z={z}");
                assert!(rh.norm() < 1e-12 * sh, "h recurrence at l={l}, z={z}");
            }
        }
    }

    #[test]
    fn wronskian_small_degrees() {
        for &(l, k) in &[(1usize, 1.0), (7, 3.5), (20, 10.0)] {
            let z = c(k, 0.0);
            let (jp, hp) = sph_bessel_derivs(l, z).unwrap();
            let j = sph_bessel_j(l, z);
            let h = sph_hankel_h1(l, z).unwrap();
            let defect = j * hp - jp * h - I / (z * z);
            assert!(defect.norm() < 1e-12, "l={l} k={k}: {defect}");
        }
    }

    #[test]
    fn wronskian_products_extreme_degrees() {
        for &k in &[0.5, 1.0, 10.0, 50.0] {
            let p = jh_products(200, c(k, 0.0)).unwrap();
            for l in 1..=200 {
                let d = p.wronskian_defect(l);
                assert!(d.norm() < 1e-11, "l={l} k={k}: defect {:.3e}", d.norm());
            }
        }
    }

    #[test]
    fn products_match_direct_values() {
        let z = c(2.7, 0.4);
        let p = jh_products(15, z).unwrap();
        let j = sph_bessel_j_seq(15, z);
        let h = sph_hankel_h1_seq(15, z).unwrap();
        for l in 1..=15usize {
            assert!((p.jh[l] - j[l] * h[l]).norm() < 1e-13);
            assert!((p.jm1_h[l] - j[l - 1] * h[l]).norm() < 1e-13);
            assert!((p.j_hm1[l] - j[l] * h[l - 1]).norm() < 1e-13);
        }
    }

    #[test]
    fn reflection_symmetry() {
        // z_l(-conj(z)) = (-1)^l conj(z_l(z)) for j and h
        for &z in &[c(1.1, 0.7), c(3.0, -0.4), c(0.4, 2.2)] {
            let zr = -z.conj();
            let j = sph_bessel_j_seq(9, z);
            let jr = sph_bessel_j_seq(9, zr);
            let h = sph_hankel_h1_seq(9, z).unwrap();
            let hr = sph_hankel_h1_seq(9, zr).unwrap();
            for l in 0..=9usize {
                let s = if l % 2 == 0 { 1.0 } else { -1.0 };
                assert!((jr[l] - s * j[l].conj()).norm() < 1e-12 * j[l].norm().max(1e-12));
                assert!((hr[l] - s * h[l].conj()).norm() < 1e-12 * h[l].norm().max(1e-12));
            }
        }
    }

    #[test]
    fn stable_for_large_degree_and_argument() {
        // l up to 1000 and |z| up to 200 must return finite values
        let v = sph_bessel_j(1000, c(200.0, 0.0));
        assert!(v.is_finite());
        let v = sph_bessel_j(1000, c(30.0, 0.0));
        assert!(v.is_finite());
        let p = jh_products(1000, c(200.0, 0.0)).unwrap();
        assert!(p.jh[1000].is_finite());
        assert!(p.wronskian_defect(1000).norm() < 1e-10);
    }
}
