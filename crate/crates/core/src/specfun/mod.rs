//! Complex-argument special functions: spherical Bessel and Hankel functions,
//! associated Legendre functions, scalar and vector spherical harmonics.

mod bessel;
mod harmonics;
mod legendre;

pub use bessel::{
    jh_products, sph_bessel_derivs, sph_bessel_j, sph_bessel_j_seq, sph_hankel_h1,
    sph_hankel_h1_seq, JhProducts,
};
pub use harmonics::{sph_harm_y, vec_sph_harm, VshKind};
pub use legendre::{legendre_dtheta_table, legendre_table, tri_index, tri_len};
