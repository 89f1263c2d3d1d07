//! Scalar and vector spherical harmonics.
//!
//! Tangent vectors are returned in the orthonormal frame (e_theta, e_phi).

use super::legendre::{legendre_dtheta_table, legendre_table, tri_index};
use crate::{Error, Result};
use num_complex::Complex64;

/// Vector spherical harmonic families: the surface gradient of Y_l^m and its
/// 90-degree rotation n x grad Y_l^m.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VshKind {
    Grad,
    StarGrad,
}

fn phase_and_abs_m(m: i64) -> (f64, usize) {
    if m >= 0 {
        (1.0, m as usize)
    } else {
        (if m % 2 == 0 { 1.0 } else { -1.0 }, (-m) as usize)
    }
}

/// Orthonormal spherical harmonic Y_l^m (Condon-Shortley phase).
pub fn sph_harm_y(l: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    if m.unsigned_abs() as usize > l {
        return Err(Error::Index(format!("sph_harm_y: |m| = {} > l = {l}", m.abs())));
    }
    let (sign, ma) = phase_and_abs_m(m);
    let p = legendre_table(l, theta.cos());
    Ok(sign * p[tri_index(l, ma)] * Complex64::new(0.0, m as f64 * phi).exp())
}

/// Vector spherical harmonic, components in the orthonormal frame
/// (e_theta, e_phi):
/// Grad      -> ( dY/dtheta, (im/sin theta) Y )
/// StarGrad  -> ( -(im/sin theta) Y, dY/dtheta )
pub fn vec_sph_harm(
    l: usize,
    m: i64,
    kind: VshKind,
    theta: f64,
    phi: f64,
) -> Result<[Complex64; 2]> {
    if l == 0 {
        return Err(Error::Index("vec_sph_harm requires l >= 1".into()));
    }
    if m.unsigned_abs() as usize > l {
        return Err(Error::Index(format!("vec_sph_harm: |m| = {} > l = {l}", m.abs())));
    }
    let (sign, ma) = phase_and_abs_m(m);
    let (p, dp) = legendre_dtheta_table(l, theta);
    let e = Complex64::new(0.0, m as f64 * phi).exp();
    let dth = sign * dp[tri_index(l, ma)] * e;
    let im_over_s =
        Complex64::new(0.0, m as f64 / theta.sin()) * sign * p[tri_index(l, ma)] * e;
    Ok(match kind {
        VshKind::Grad => [dth, im_over_s],
        VshKind::StarGrad => [-im_over_s, dth],
    })
}
