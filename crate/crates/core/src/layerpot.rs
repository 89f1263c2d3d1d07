//! Nyström discretization of the Helmholtz single layer and the boundary
//! operators K0..K4, plus off-surface potential/field evaluation.
//!
//! Sphere targets are handled by rotating each target to the north pole and
//! integrating in polar coordinates; by rotational equivariance this reduces
//! every operator to per-degree symbols computed once by a 1D singular
//! quadrature (azimuth handled by an exact trapezoid rule). Torus targets use
//! a floating local polar patch blended into the global trapezoid rule by a
//! radial partition of unity; the patch integrand is analytic in the radial
//! variable once the odd leading part cancels over symmetric polar sectors,
//! so a plain Gauss rule in radius is spectrally accurate.

use crate::linalg::gauss_legendre;
use crate::specfun::{legendre_dtheta_table, tri_index};
use crate::sphere_ops::ShCoeffs;
use crate::surface::{ScalarField, Shape, SurfaceGrid, TangentField};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::Write;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

// ---------------- kernels ----------------

/// Fundamental solution g_k(x - y) = e^{ik|x-y|} / (4 pi |x-y|).
pub fn kernel_gk(x: [f64; 3], y: [f64; 3], k: Complex64) -> Result<Complex64> {
    let d = sub(x, y);
    let rho = norm3(d);
    if rho < 1e-14 {
        return Err(Error::Domain("kernel_gk: coincident points".into()));
    }
    Ok((I * k * rho).exp() / (4.0 * PI * rho))
}

/// Gradient of g_k(x - y) with respect to the target x.
pub fn kernel_grad_gk(x: [f64; 3], y: [f64; 3], k: Complex64) -> Result<[Complex64; 3]> {
    let d = sub(x, y);
    let rho = norm3(d);
    if rho < 1e-14 {
        return Err(Error::Domain("kernel_grad_gk: coincident points".into()));
    }
    let g = (I * k * rho).exp() / (4.0 * PI * rho);
    let f = (I * k - Complex64::new(1.0 / rho, 0.0)) * g / rho;
    Ok([f * d[0], f * d[1], f * d[2]])
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// g, grad_x g, and n0 . grad_x g at a target/source pair, written in terms
/// of the displacement to keep the near-diagonal z component accurate.
struct KernelPoint {
    g: Complex64,
    dg: [Complex64; 3],
    gn: Complex64,
}

fn kernel_point(x0: [f64; 3], n0: [f64; 3], y: [f64; 3], k: Complex64) -> KernelPoint {
    let d = sub(x0, y);
    let rho = norm3(d);
    let g = (I * k * rho).exp() / (4.0 * PI * rho);
    let f = (I * k - Complex64::new(1.0 / rho, 0.0)) * g / rho;
    KernelPoint {
        g,
        dg: [f * d[0], f * d[1], f * d[2]],
        gn: f * dot(n0, d),
    }
}

// ---------------- sphere backend: per-degree symbols ----------------

/// Per-degree action of the layer operators on the unit sphere, computed by
/// the pole-rotated polar quadrature. Scalar operators act diagonally on
/// Y_l^m; vector operators act on the (grad Y, n x grad Y) pair per degree.
pub struct SphereSymbols {
    pub k: Complex64,
    pub lmax: usize,
    /// single layer on Y_l^m
    pub single: Vec<Complex64>,
    /// principal value of n . grad of the single layer
    pub k0: Vec<Complex64>,
    /// K2n on grad Y_l^m (the n x grad component maps to zero by parity)
    pub k2n_grad: Vec<Complex64>,
    /// K3 on (n x grad) Y_l^m (the grad component maps to zero by parity)
    pub k3_star: Vec<Complex64>,
    /// K2t: grad component -> n x grad component
    pub k2t_grad_star: Vec<Complex64>,
    /// K2t: n x grad component -> grad component
    pub k2t_star_grad: Vec<Complex64>,
    /// K4 on the grad component (parity preserving)
    pub k4_grad: Vec<Complex64>,
    /// K4 on the n x grad component (parity preserving)
    pub k4_star: Vec<Complex64>,
}

/// Default quadrature: enough panels/orders for |symbols| error ~ 1e-11 up
/// to the requested bandwidth.
pub fn sphere_symbols(lmax: usize, k: Complex64) -> SphereSymbols {
    let gln = (lmax / 2 + 20).max(24);
    sphere_symbols_with(lmax, k, 8, gln, 16)
}

/// Pole quadrature with explicit resolution: `panels` equal colatitude
/// panels of Gauss order `gln`, `nphi` uniform azimuth nodes (even).
pub fn sphere_symbols_with(
    lmax: usize,
    k: Complex64,
    panels: usize,
    gln: usize,
    nphi: usize,
) -> SphereSymbols {
    assert!(nphi % 2 == 0 && nphi >= 4);
    let ik = I * k;
    let (gx, gw) = gauss_legendre(gln);
    let nl = lmax + 1;
    let mut single = vec![ZERO; nl];
    let mut k0 = vec![ZERO; nl];
    let mut k2n = vec![ZERO; nl];
    let mut k3 = vec![ZERO; nl];
    // x,y components of the pole values of the four vector-operator images
    let mut a2t_g = vec![[ZERO; 2]; nl];
    let mut a2t_s = vec![[ZERO; 2]; nl];
    let mut a4_g = vec![[ZERO; 2]; nl];
    let mut a4_s = vec![[ZERO; 2]; nl];
    let dphi = 2.0 * PI / nphi as f64;
    for p in 0..panels {
        let t0 = PI * p as f64 / panels as f64;
        let t1 = PI * (p + 1) as f64 / panels as f64;
        for (xi, wi) in gx.iter().zip(&gw) {
            let th = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * xi;
            let wth = 0.5 * (t1 - t0) * wi;
            let (ptab, dptab) = legendre_dtheta_table(lmax, th);
            let (st, ct) = th.sin_cos();
            let half = (0.5 * th).sin();
            let rho = 2.0 * half;
            let g = (ik * rho).exp() / (4.0 * PI * rho);
            let f = (ik - Complex64::new(1.0 / rho, 0.0)) * g / rho;
            // d = pole - y; d_z = 1 - cos(theta) = 2 sin^2(theta/2)
            let dz = 2.0 * half * half;
            let gz = f * dz; // z . grad g
            for jp in 0..nphi {
                let phi = dphi * jp as f64;
                let (sp, cp) = phi.sin_cos();
                let w = wth * dphi * st;
                let dxy = [-st * cp, -st * sp];
                let ph = Complex64::new(cp, sp);
                for l in 0..=lmax {
                    let p0 = ptab[tri_index(l, 0)];
                    single[l] += g * p0 * w;
                    k0[l] += gz * p0 * w;
                    if l == 0 {
                        continue;
                    }
                    let dp0 = dptab[tri_index(l, 0)];
                    // z . grad Y_l0 = -sin(theta) dP
                    k2n[l] += g * (-st * dp0) * w;
                    // grad g . ((n x grad Y_l0) x z): phi-independent -sin(theta) dP
                    k3[l] += f * (-st) * dp0 * w;
                    // m = 1 densities for the vector-output operators
                    let p1 = ptab[tri_index(l, 1)];
                    let dp1 = dptab[tri_index(l, 1)];
                    let pbs = p1 / st;
                    // grad Y_l1 = e^{i phi} (dP1 theta_hat + i (P1/s) phi_hat)
                    // star Y_l1 = e^{i phi} (-i (P1/s) theta_hat + dP1 phi_hat)
                    // theta_hat = (ct cp, ct sp, -st), phi_hat = (-sp, cp, 0)
                    let gx0 = ph * (dp1 * ct * cp - I * pbs * sp);
                    let gy0 = ph * (dp1 * ct * sp + I * pbs * cp);
                    let gz0 = ph * (-dp1 * st);
                    let sx0 = ph * (-I * pbs * ct * cp - dp1 * sp);
                    let sy0 = ph * (-I * pbs * ct * sp + dp1 * cp);
                    let sz0 = ph * (I * pbs * st);
                    // K2t: g (z x j)
                    a2t_g[l][0] += g * (-gy0) * w;
                    a2t_g[l][1] += g * gx0 * w;
                    a2t_s[l][0] += g * (-sy0) * w;
                    a2t_s[l][1] += g * sx0 * w;
                    // K4: grad g (j . z) - (z . grad g) j
                    let jz_g = gz0;
                    let jz_s = sz0;
                    a4_g[l][0] += (f * dxy[0] * jz_g - gz * gx0) * w;
                    a4_g[l][1] += (f * dxy[1] * jz_g - gz * gy0) * w;
                    a4_s[l][0] += (f * dxy[0] * jz_s - gz * sx0) * w;
                    a4_s[l][1] += (f * dxy[1] * jz_s - gz * sy0) * w;
                }
            }
        }
    }
    let mut sym = SphereSymbols {
        k,
        lmax,
        single: vec![ZERO; nl],
        k0: vec![ZERO; nl],
        k2n_grad: vec![ZERO; nl],
        k3_star: vec![ZERO; nl],
        k2t_grad_star: vec![ZERO; nl],
        k2t_star_grad: vec![ZERO; nl],
        k4_grad: vec![ZERO; nl],
        k4_star: vec![ZERO; nl],
    };
    for l in 0..=lmax {
        let ypole = ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
        sym.single[l] = single[l] / ypole;
        sym.k0[l] = k0[l] / ypole;
        if l == 0 {
            continue;
        }
        sym.k2n_grad[l] = k2n[l] / ypole;
        sym.k3_star[l] = k3[l] / ypole;
        // pole values: grad Y_l1 -> -D_l (x + iy), star Y_l1 -> i D_l (x + iy)
        let dl = 0.5 * ((l * (l + 1) * (2 * l + 1)) as f64 / (4.0 * PI)).sqrt();
        let cw = |a: [Complex64; 2]| (a[0] - I * a[1]) * 0.5;
        sym.k2t_grad_star[l] = cw(a2t_g[l]) / (I * dl);
        sym.k2t_star_grad[l] = cw(a2t_s[l]) / (-dl);
        sym.k4_grad[l] = cw(a4_g[l]) / (-dl);
        sym.k4_star[l] = cw(a4_s[l]) / (I * dl);
    }
    sym
}

impl SphereSymbols {
    fn bandwidth(&self, grid: &SurfaceGrid) -> Result<usize> {
        let lg = grid
            .lmax()
            .ok_or_else(|| Error::GridMismatch("sphere operator on a non-sphere grid".into()))?;
        Ok(lg.min(self.lmax))
    }

    fn apply_scalar_diag(
        &self,
        grid: &SurfaceGrid,
        f: &ScalarField,
        diag: &[Complex64],
    ) -> Result<ScalarField> {
        let lb = self.bandwidth(grid)?;
        let a = grid.sphere_analysis(f)?;
        let mut b = ShCoeffs::zeros(a.lmax());
        for l in 0..=lb {
            for m in -(l as i64)..=l as i64 {
                b.set(l, m, diag[l] * a.get(l, m));
            }
        }
        grid.sphere_synthesis(&b)
    }

    pub fn apply_single_layer(&self, grid: &SurfaceGrid, f: &ScalarField) -> Result<ScalarField> {
        self.apply_scalar_diag(grid, f, &self.single)
    }

    pub fn apply_k0(&self, grid: &SurfaceGrid, f: &ScalarField) -> Result<ScalarField> {
        self.apply_scalar_diag(grid, f, &self.k0)
    }

    /// K1[r] = n x grad of the single layer; tangential, continuous across
    /// the surface, realized through the surface gradient of S[r].
    pub fn apply_k1(&self, grid: &SurfaceGrid, f: &ScalarField) -> Result<TangentField> {
        let s = self.apply_single_layer(grid, f)?;
        grid.rot90(&grid.surface_grad(&s)?)
    }

    pub fn apply_k2n(&self, grid: &SurfaceGrid, t: &TangentField) -> Result<ScalarField> {
        let lb = self.bandwidth(grid)?;
        let (p, _q) = grid.sphere_vsh_analysis(t)?;
        let mut b = ShCoeffs::zeros(p.lmax());
        for l in 1..=lb {
            for m in -(l as i64)..=l as i64 {
                b.set(l, m, self.k2n_grad[l] * p.get(l, m));
            }
        }
        grid.sphere_synthesis(&b)
    }

    pub fn apply_k3(&self, grid: &SurfaceGrid, t: &TangentField) -> Result<ScalarField> {
        let lb = self.bandwidth(grid)?;
        let (_p, q) = grid.sphere_vsh_analysis(t)?;
        let mut b = ShCoeffs::zeros(q.lmax());
        for l in 1..=lb {
            for m in -(l as i64)..=l as i64 {
                b.set(l, m, self.k3_star[l] * q.get(l, m));
            }
        }
        grid.sphere_synthesis(&b)
    }

    pub fn apply_k2t(&self, grid: &SurfaceGrid, t: &TangentField) -> Result<TangentField> {
        let lb = self.bandwidth(grid)?;
        let (p, q) = grid.sphere_vsh_analysis(t)?;
        let mut po = ShCoeffs::zeros(p.lmax());
        let mut qo = ShCoeffs::zeros(q.lmax());
        for l in 1..=lb {
            for m in -(l as i64)..=l as i64 {
                po.set(l, m, self.k2t_star_grad[l] * q.get(l, m));
                qo.set(l, m, self.k2t_grad_star[l] * p.get(l, m));
            }
        }
        grid.sphere_vsh_synthesis(&po, &qo)
    }

    pub fn apply_k4(&self, grid: &SurfaceGrid, t: &TangentField) -> Result<TangentField> {
        let lb = self.bandwidth(grid)?;
        let (p, q) = grid.sphere_vsh_analysis(t)?;
        let mut po = ShCoeffs::zeros(p.lmax());
        let mut qo = ShCoeffs::zeros(q.lmax());
        for l in 1..=lb {
            for m in -(l as i64)..=l as i64 {
                po.set(l, m, self.k4_grad[l] * p.get(l, m));
                qo.set(l, m, self.k4_star[l] * q.get(l, m));
            }
        }
        grid.sphere_vsh_synthesis(&po, &qo)
    }
}

// ---------------- torus backend: floating polar patch ----------------

const POU_INNER: f64 = 0.35;

/// C-infinity radial partition of unity: 1 inside the patch core, 0 at the
/// patch rim.
fn pou(x: f64) -> f64 {
    if x <= POU_INNER {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        let s = (x - POU_INNER) / (1.0 - POU_INNER);
        let f = |t: f64| if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() };
        f(1.0 - s) / (f(s) + f(1.0 - s))
    }
}

/// Periodic trigonometric cardinal function on an n-point grid (even n).
fn cardinal(x: f64, n: usize) -> f64 {
    let x = x - (x / (2.0 * PI)).round() * 2.0 * PI;
    if x.abs() < 1e-12 {
        return 1.0;
    }
    let s2 = (0.5 * x).sin();
    let c2 = (0.5 * x).cos();
    (0.5 * n as f64 * x).sin() * c2 / (n as f64 * s2)
}

fn wrap(x: f64) -> f64 {
    x - (x / (2.0 * PI)).round() * 2.0 * PI
}

/// Local polar patch rule shared by all targets: chart offsets, base
/// quadrature weights (including the partition of unity), and the cardinal
/// interpolation weights onto the grid offsets.
struct PatchRule {
    ds: Vec<f64>,
    dt: Vec<f64>,
    w: Vec<f64>,
    wu: Vec<f64>,
    wv: Vec<f64>,
    du: f64,
    dv: f64,
}

fn make_patch_rule(nu: usize, nv: usize, nrho: usize, npsi: usize) -> PatchRule {
    // fixed physical patch size: the partition of unity then cuts the far
    // trapezoid sum at a resolution-independent distance, so both parts
    // converge spectrally under grid refinement
    let du = 2.8;
    let dv = 2.8;
    let (gx, gw) = gauss_legendre(nrho);
    let hu = 2.0 * PI / nu as f64;
    let hv = 2.0 * PI / nv as f64;
    let mut rule = PatchRule {
        ds: Vec::new(),
        dt: Vec::new(),
        w: Vec::new(),
        wu: Vec::new(),
        wv: Vec::new(),
        du,
        dv,
    };
    for (xi, wi) in gx.iter().zip(&gw) {
        let rho = 0.5 * (xi + 1.0);
        let wr = 0.5 * wi;
        let eta = pou(rho);
        if eta == 0.0 {
            continue;
        }
        for jp in 0..npsi {
            let psi = 2.0 * PI * jp as f64 / npsi as f64;
            let (sp, cp) = psi.sin_cos();
            let ds = du * rho * cp;
            let dt = dv * rho * sp;
            rule.ds.push(ds);
            rule.dt.push(dt);
            rule.w.push(wr * (2.0 * PI / npsi as f64) * du * dv * rho * eta);
            for o in 0..nu {
                rule.wu.push(cardinal(ds - o as f64 * hu, nu));
            }
            for o in 0..nv {
                rule.wv.push(cardinal(dt - o as f64 * hv, nv));
            }
        }
    }
    rule
}

/// Dense principal-value operator matrices on a torus grid at wavenumber k.
/// Tangent densities and traces are stacked as (c1; c2) in the grid frame.
pub struct TorusKernels {
    pub k: Complex64,
    /// single layer, N x N
    pub single: DMatrix<Complex64>,
    /// principal value of n . grad single layer, N x N
    pub k0: DMatrix<Complex64>,
    /// g (n0 . j), N x 2N
    pub k2n: DMatrix<Complex64>,
    /// grad g . (j x n0), principal value, N x 2N
    pub k3: DMatrix<Complex64>,
    /// g (n0 x j), 2N x 2N
    pub k2t: DMatrix<Complex64>,
    /// grad g (j . n0) - (n0 . grad g) j, 2N x 2N
    pub k4: DMatrix<Complex64>,
    /// patch-refinement probe of the single-layer quadrature error
    pub quad_probe: f64,
}

/// Number of accumulated row quantities per target (see `fill_rows`).
const NQ: usize = 18;

pub fn torus_kernels(grid: &SurfaceGrid, k: Complex64) -> Result<TorusKernels> {
    let nrho = grid.nu.max(grid.nv).max(24);
    torus_kernels_with(grid, k, nrho, 2 * nrho)
}

pub fn torus_kernels_with(
    grid: &SurfaceGrid,
    k: Complex64,
    nrho: usize,
    npsi: usize,
) -> Result<TorusKernels> {
    let shape = grid.shape;
    if !matches!(shape, Shape::Torus { .. }) {
        return Err(Error::GridMismatch("torus operators on a non-torus grid".into()));
    }
    if grid.nu % 2 != 0 || grid.nv % 2 != 0 || npsi % 2 != 0 {
        return Err(Error::Config("torus operator grids require even dimensions".into()));
    }
    let (nu, nv) = (grid.nu, grid.nv);
    let n = nu * nv;
    let rule = make_patch_rule(nu, nv, nrho, npsi);
    let probe_rule = make_patch_rule(nu, nv, nrho + 8, npsi + 16);
    let quad_probe = {
        let p0 = patch_single_constant(grid, 0, &rule, k);
        let p1 = patch_single_constant(grid, 0, &probe_rule, k);
        (p0 - p1).norm()
    };

    let mut single = DMatrix::from_element(n, n, ZERO);
    let mut k0m = DMatrix::from_element(n, n, ZERO);
    let mut k2n = DMatrix::from_element(n, 2 * n, ZERO);
    let mut k3 = DMatrix::from_element(n, 2 * n, ZERO);
    let mut k2t = DMatrix::from_element(2 * n, 2 * n, ZERO);
    let mut k4 = DMatrix::from_element(2 * n, 2 * n, ZERO);

    // The grid and frames are invariant under rotation about the torus axis,
    // so every operator matrix is block-circulant in the u index: only the
    // iu = 0 target rows need quadrature, the rest are u-shifted copies.
    let base: Vec<Vec<Complex64>> = (0..nv)
        .into_par_iter()
        .map(|iv| {
            let row = fill_rows(grid, iv, &rule, k);
            // project ambient vector outputs onto the target frame
            let e1i = grid.e1[iv];
            let e2i = grid.e2[iv];
            let mut out = vec![ZERO; 14 * n];
            for j in 0..n {
                out[j] = row[j];
                out[n + j] = row[n + j];
                out[2 * n + j] = row[2 * n + j];
                out[3 * n + j] = row[3 * n + j];
                out[4 * n + j] = row[4 * n + j];
                out[5 * n + j] = row[5 * n + j];
                let v1 = [row[6 * n + j], row[7 * n + j], row[8 * n + j]];
                let v2 = [row[9 * n + j], row[10 * n + j], row[11 * n + j]];
                out[6 * n + j] = cdotr(v1, e1i);
                out[7 * n + j] = cdotr(v1, e2i);
                out[8 * n + j] = cdotr(v2, e1i);
                out[9 * n + j] = cdotr(v2, e2i);
                let w1 = [row[12 * n + j], row[13 * n + j], row[14 * n + j]];
                let w2 = [row[15 * n + j], row[16 * n + j], row[17 * n + j]];
                out[10 * n + j] = cdotr(w1, e1i);
                out[11 * n + j] = cdotr(w1, e2i);
                out[12 * n + j] = cdotr(w2, e1i);
                out[13 * n + j] = cdotr(w2, e2i);
            }
            out
        })
        .collect();
    for iu in 0..nu {
        for iv in 0..nv {
            let i = iu * nv + iv;
            let row = &base[iv];
            for ju in 0..nu {
                let su = (ju + nu - iu) % nu;
                for jv in 0..nv {
                    let j = ju * nv + jv;
                    let s = su * nv + jv;
                    single[(i, j)] = row[s];
                    k0m[(i, j)] = row[n + s];
                    k2n[(i, j)] = row[2 * n + s];
                    k2n[(i, n + j)] = row[3 * n + s];
                    k3[(i, j)] = row[4 * n + s];
                    k3[(i, n + j)] = row[5 * n + s];
                    k2t[(i, j)] = row[6 * n + s];
                    k2t[(n + i, j)] = row[7 * n + s];
                    k2t[(i, n + j)] = row[8 * n + s];
                    k2t[(n + i, n + j)] = row[9 * n + s];
                    k4[(i, j)] = row[10 * n + s];
                    k4[(n + i, j)] = row[11 * n + s];
                    k4[(i, n + j)] = row[12 * n + s];
                    k4[(n + i, n + j)] = row[13 * n + s];
                }
            }
        }
    }
    Ok(TorusKernels {
        k,
        single,
        k0: k0m,
        k2n,
        k3,
        k2t,
        k4,
        quad_probe,
    })
}

fn cdotr(v: [Complex64; 3], e: [f64; 3]) -> Complex64 {
    v[0] * e[0] + v[1] * e[1] + v[2] * e[2]
}

/// Patch contribution to S[1](target) only, for the quadrature probe.
fn patch_single_constant(grid: &SurfaceGrid, i: usize, rule: &PatchRule, k: Complex64) -> Complex64 {
    let (iu, iv) = (i / grid.nv, i % grid.nv);
    let (s0, t0) = (grid.u[iu], grid.v[iv]);
    let x0 = grid.pos[i];
    let mut acc = ZERO;
    for q in 0..rule.ds.len() {
        let (y, xu, xv) = grid.shape.chart(s0 + rule.ds[q], t0 + rule.dt[q]);
        let jac = norm3(xu) * norm3(xv);
        let g = kernel_gk(x0, y, k).expect("patch point is off-target");
        acc += g * (rule.w[q] * jac);
    }
    acc
}

/// Quadrature weights for all operators at one target row. Layout: NQ
/// blocks of length n: single, k0, k2n(e1,e2), k3(e1,e2), k2t ambient
/// (3 per source basis vector), k4 ambient (same).
fn fill_rows(grid: &SurfaceGrid, i: usize, rule: &PatchRule, k: Complex64) -> Vec<Complex64> {
    let (nu, nv) = (grid.nu, grid.nv);
    let n = nu * nv;
    let (iu, iv) = (i / nv, i % nv);
    let (s0, t0) = (grid.u[iu], grid.v[iv]);
    let x0 = grid.pos[i];
    let n0 = grid.normal[i];
    let mut row = vec![ZERO; NQ * n];
    // far part: global trapezoid times (1 - pou)
    for j in 0..n {
        if j == i {
            continue;
        }
        let (ju, jv) = (j / nv, j % nv);
        let rds = wrap(grid.u[ju] - s0) / rule.du;
        let rdt = wrap(grid.v[jv] - t0) / rule.dv;
        let far = 1.0 - pou((rds * rds + rdt * rdt).sqrt());
        if far <= 0.0 {
            continue;
        }
        let wj = grid.weight[j] * far;
        let kp = kernel_point(x0, n0, grid.pos[j], k);
        accumulate(&mut row, n, j, &kp, n0, grid.e1[j], grid.e2[j], wj);
    }
    // near part: local polar patch with spectral density interpolation
    let mut c = [ZERO; NQ];
    for q in 0..rule.ds.len() {
        let (y, xu, xv) = grid.shape.chart(s0 + rule.ds[q], t0 + rule.dt[q]);
        let h1 = norm3(xu);
        let h2 = norm3(xv);
        let e1q = [xu[0] / h1, xu[1] / h1, xu[2] / h1];
        let e2q = [xv[0] / h2, xv[1] / h2, xv[2] / h2];
        let kp = kernel_point(x0, n0, y, k);
        let wq = rule.w[q] * h1 * h2;
        contributions(&mut c, &kp, n0, e1q, e2q, wq);
        let wu = &rule.wu[q * nu..(q + 1) * nu];
        let wv = &rule.wv[q * nv..(q + 1) * nv];
        for ou in 0..nu {
            let a = wu[ou];
            let ju = (iu + ou) % nu;
            for ov in 0..nv {
                let wc = a * wv[ov];
                let jdx = ju * nv + (iv + ov) % nv;
                for t in 0..NQ {
                    row[t * n + jdx] += c[t] * wc;
                }
            }
        }
    }
    row
}

fn contributions(
    c: &mut [Complex64; NQ],
    kp: &KernelPoint,
    n0: [f64; 3],
    e1: [f64; 3],
    e2: [f64; 3],
    w: f64,
) {
    c[0] = kp.g * w;
    c[1] = kp.gn * w;
    c[2] = kp.g * (dot(n0, e1) * w);
    c[3] = kp.g * (dot(n0, e2) * w);
    let x1 = cross(e1, n0);
    let x2 = cross(e2, n0);
    c[4] = (kp.dg[0] * x1[0] + kp.dg[1] * x1[1] + kp.dg[2] * x1[2]) * w;
    c[5] = (kp.dg[0] * x2[0] + kp.dg[1] * x2[1] + kp.dg[2] * x2[2]) * w;
    let n1 = cross(n0, e1);
    let n2 = cross(n0, e2);
    for d in 0..3 {
        c[6 + d] = kp.g * (n1[d] * w);
        c[9 + d] = kp.g * (n2[d] * w);
        c[12 + d] = (kp.dg[d] * dot(e1, n0) - kp.gn * e1[d]) * w;
        c[15 + d] = (kp.dg[d] * dot(e2, n0) - kp.gn * e2[d]) * w;
    }
}

fn accumulate(
    row: &mut [Complex64],
    n: usize,
    j: usize,
    kp: &KernelPoint,
    n0: [f64; 3],
    e1: [f64; 3],
    e2: [f64; 3],
    w: f64,
) {
    let mut c = [ZERO; NQ];
    contributions(&mut c, kp, n0, e1, e2, w);
    for t in 0..NQ {
        row[t * n + j] += c[t];
    }
}

impl TorusKernels {
    fn matvec(m: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
        let x = DVector::from_column_slice(v);
        (m * x).iter().cloned().collect()
    }

    fn stack(t: &TangentField) -> Vec<Complex64> {
        t.c1.iter().chain(t.c2.iter()).cloned().collect()
    }

    fn unstack(v: Vec<Complex64>) -> TangentField {
        let n = v.len() / 2;
        TangentField {
            c1: v[..n].to_vec(),
            c2: v[n..].to_vec(),
        }
    }

    pub fn apply_single_layer(&self, f: &ScalarField) -> ScalarField {
        ScalarField { vals: Self::matvec(&self.single, &f.vals) }
    }

    pub fn apply_k0(&self, f: &ScalarField) -> ScalarField {
        ScalarField { vals: Self::matvec(&self.k0, &f.vals) }
    }

    pub fn apply_k1(&self, grid: &SurfaceGrid, f: &ScalarField) -> Result<TangentField> {
        let s = self.apply_single_layer(f);
        grid.rot90(&grid.surface_grad(&s)?)
    }

    pub fn apply_k2n(&self, t: &TangentField) -> ScalarField {
        ScalarField { vals: Self::matvec(&self.k2n, &Self::stack(t)) }
    }

    pub fn apply_k3(&self, t: &TangentField) -> ScalarField {
        ScalarField { vals: Self::matvec(&self.k3, &Self::stack(t)) }
    }

    pub fn apply_k2t(&self, t: &TangentField) -> TangentField {
        Self::unstack(Self::matvec(&self.k2t, &Self::stack(t)))
    }

    pub fn apply_k4(&self, t: &TangentField) -> TangentField {
        Self::unstack(Self::matvec(&self.k4, &Self::stack(t)))
    }
}

/// Binary dump of a discretized operator for regression snapshots.
/// Header: magic, dims, wavenumber, side and kind tags; data column-major.
pub fn export_operator(
    path: &std::path::Path,
    m: &DMatrix<Complex64>,
    k: Complex64,
    side: &str,
    kind: &str,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"DBIEOP1\n")?;
    f.write_all(&(m.nrows() as u64).to_le_bytes())?;
    f.write_all(&(m.ncols() as u64).to_le_bytes())?;
    f.write_all(&k.re.to_le_bytes())?;
    f.write_all(&k.im.to_le_bytes())?;
    for tag in [side, kind] {
        f.write_all(&(tag.len() as u64).to_le_bytes())?;
        f.write_all(tag.as_bytes())?;
    }
    for v in m.iter() {
        f.write_all(&v.re.to_le_bytes())?;
        f.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

// ---------------- off-surface potentials and fields ----------------

/// Smooth-quadrature evaluator of E = ikA - grad phi - curl A_m and
/// H = curl A + ik A_m - grad phi_m away from the surface. Densities may be
/// spectrally oversampled onto a finer grid to push the accurate region
/// closer to the surface.
pub struct FieldEvaluator {
    pub k: Complex64,
    pub cutoff: f64,
    pos: Vec<[f64; 3]>,
    wr: Vec<Complex64>,
    wq: Vec<Complex64>,
    wj: Vec<[Complex64; 3]>,
    wm: Vec<[Complex64; 3]>,
}

pub fn field_evaluator(
    grid: &SurfaceGrid,
    r: &ScalarField,
    q: &ScalarField,
    j: &TangentField,
    m: &TangentField,
    k: Complex64,
    oversample: usize,
) -> Result<FieldEvaluator> {
    let fine;
    let (g, rf, qf, jf, mf) = if oversample > 1 {
        fine = SurfaceGrid::new(grid.shape, oversample * grid.nu, oversample * grid.nv)?;
        let rf = grid.resample_scalar(&fine, r)?;
        let qf = grid.resample_scalar(&fine, q)?;
        let jf = grid.resample_tangent(&fine, j)?;
        let mf = grid.resample_tangent(&fine, m)?;
        (&fine, rf, qf, jf, mf)
    } else {
        (grid, r.clone(), q.clone(), j.clone(), m.clone())
    };
    let n = g.nodes();
    let mut wmax = 0.0f64;
    let mut wr = Vec::with_capacity(n);
    let mut wq = Vec::with_capacity(n);
    let mut wj = Vec::with_capacity(n);
    let mut wm = Vec::with_capacity(n);
    for i in 0..n {
        let w = g.weight[i];
        wmax = wmax.max(w);
        wr.push(rf.vals[i] * w);
        wq.push(qf.vals[i] * w);
        let ja = g.tangent_ambient(&jf, i);
        let ma = g.tangent_ambient(&mf, i);
        wj.push([ja[0] * w, ja[1] * w, ja[2] * w]);
        wm.push([ma[0] * w, ma[1] * w, ma[2] * w]);
    }
    Ok(FieldEvaluator {
        k,
        cutoff: 0.25 * wmax.sqrt(),
        pos: g.pos.clone(),
        wr,
        wq,
        wj,
        wm,
    })
}

impl FieldEvaluator {
    pub fn distance(&self, x: [f64; 3]) -> f64 {
        self.pos
            .iter()
            .map(|p| norm3(sub(x, *p)))
            .fold(f64::INFINITY, f64::min)
    }

    fn check(&self, x: [f64; 3]) -> Result<()> {
        let dist = self.distance(x);
        if dist < self.cutoff {
            return Err(Error::NearSurface { dist, cutoff: self.cutoff });
        }
        Ok(())
    }

    /// Scalar single-layer potential of the r density.
    pub fn eval_phi(&self, x: [f64; 3]) -> Result<Complex64> {
        self.check(x)?;
        let mut acc = ZERO;
        for (p, wr) in self.pos.iter().zip(&self.wr) {
            let d = sub(x, *p);
            let rho = norm3(d);
            acc += (I * self.k * rho).exp() / (4.0 * PI * rho) * wr;
        }
        Ok(acc)
    }

    /// E and H at an off-surface point.
    pub fn eval(&self, x: [f64; 3]) -> Result<([Complex64; 3], [Complex64; 3])> {
        self.check(x)?;
        let ik = I * self.k;
        let mut a = [ZERO; 3];
        let mut am = [ZERO; 3];
        let mut gphi = [ZERO; 3];
        let mut gphim = [ZERO; 3];
        let mut ca = [ZERO; 3];
        let mut cam = [ZERO; 3];
        for i in 0..self.pos.len() {
            let d = sub(x, self.pos[i]);
            let rho = norm3(d);
            let g = (ik * rho).exp() / (4.0 * PI * rho);
            let f = (ik - Complex64::new(1.0 / rho, 0.0)) * g / rho;
            let dg = [f * d[0], f * d[1], f * d[2]];
            let j = self.wj[i];
            let m = self.wm[i];
            for c in 0..3 {
                a[c] += g * j[c];
                am[c] += g * m[c];
                gphi[c] += dg[c] * self.wr[i];
                gphim[c] += dg[c] * self.wq[i];
            }
            // curl of a single-layer vector potential: grad g x density
            ca[0] += dg[1] * j[2] - dg[2] * j[1];
            ca[1] += dg[2] * j[0] - dg[0] * j[2];
            ca[2] += dg[0] * j[1] - dg[1] * j[0];
            cam[0] += dg[1] * m[2] - dg[2] * m[1];
            cam[1] += dg[2] * m[0] - dg[0] * m[2];
            cam[2] += dg[0] * m[1] - dg[1] * m[0];
        }
        let mut e = [ZERO; 3];
        let mut h = [ZERO; 3];
        for c in 0..3 {
            e[c] = ik * a[c] - gphi[c] - cam[c];
            h[c] = ca[c] + ik * am[c] - gphim[c];
        }
        Ok((e, h))
    }
}

/// Polynomial (Neville) extrapolation of samples (eps, value) to eps = 0.
pub fn extrapolate_to_zero(pts: &[(f64, Complex64)]) -> Complex64 {
    let mut v: Vec<Complex64> = pts.iter().map(|p| p.1).collect();
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let n = v.len();
    for level in 1..n {
        for i in 0..n - level {
            let xi = x[i];
            let xj = x[i + level];
            v[i] = (v[i + 1] * xi - v[i] * xj) / (xi - xj);
        }
    }
    v[0]
}
