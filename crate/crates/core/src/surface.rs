//! Parametric surfaces (unit sphere, torus), spectral tensor-product grids,
//! surface differential calculus, the partial inverse of the Laplace-Beltrami
//! operator restricted to mean-zero functions, harmonic tangent fields, and
//! the Hodge decomposition of tangent fields.
//!
//! Tangent fields are stored by their components in the orthonormal chart
//! frame (e1, e2) with n = e1 x e2 the unit normal pointing into the
//! unbounded exterior; i_n j = 0 holds by construction and
//! n x (c1, c2) = (-c2, c1).

use crate::linalg::{gauss_legendre, ComplexLu};
use crate::specfun::{legendre_dtheta_table, legendre_table, tri_index, tri_len};
use crate::sphere_ops::ShCoeffs;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::PI;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Built-in closed parametric surfaces. Chart coordinates are (u, v):
/// sphere u = colatitude in (0, pi), v = longitude; torus u = s (angle around
/// the symmetry axis), v = t (angle around the tube), x(s,t) =
/// ((R + r cos t) cos s, (R + r cos t) sin s, r sin t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere,
    Torus { big_r: f64, small_r: f64 },
}

impl Shape {
    pub fn genus(&self) -> usize {
        match self {
            Shape::Sphere => 0,
            Shape::Torus { .. } => 1,
        }
    }

    /// Chart position and the two coordinate tangent vectors.
    pub fn chart(&self, u: f64, v: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
        match *self {
            Shape::Sphere => {
                let (su, cu) = u.sin_cos();
                let (sv, cv) = v.sin_cos();
                (
                    [su * cv, su * sv, cu],
                    [cu * cv, cu * sv, -su],
                    [-su * sv, su * cv, 0.0],
                )
            }
            Shape::Torus { big_r, small_r } => {
                let (ss, cs) = u.sin_cos();
                let (st, ct) = v.sin_cos();
                let rho = big_r + small_r * ct;
                (
                    [rho * cs, rho * ss, small_r * st],
                    [-rho * ss, rho * cs, 0.0],
                    [-small_r * st * cs, -small_r * st * ss, small_r * ct],
                )
            }
        }
    }
}

/// Complex scalar density sampled at the grid nodes.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub vals: Vec<Complex64>,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField { vals: vec![ZERO; n] }
    }
}

/// Complex tangent field; components in the orthonormal frame (e1, e2).
#[derive(Debug, Clone)]
pub struct TangentField {
    pub c1: Vec<Complex64>,
    pub c2: Vec<Complex64>,
}

impl TangentField {
    pub fn zeros(n: usize) -> Self {
        TangentField { c1: vec![ZERO; n], c2: vec![ZERO; n] }
    }
}

struct SphereSpectral {
    lmax: usize,
    /// Gauss-Legendre weights per colatitude node (integration in cos u)
    glw: Vec<f64>,
    /// per node: normalized associated Legendre values, triangular layout
    ptab: Vec<Vec<f64>>,
    /// per node: d/dtheta of the above
    dptab: Vec<Vec<f64>>,
    sin_u: Vec<f64>,
}

struct TorusSpectral {
    big_r: f64,
    small_r: f64,
    /// per s-frequency index: LU factors of the Fourier-Galerkin
    /// Laplace-Beltrami block (the m = 0 block has the constant mode removed);
    /// built on first use, since fine grids used only for quadrature never
    /// need them
    r0_blocks: std::sync::OnceLock<Vec<ComplexLu>>,
}

impl TorusSpectral {
    fn blocks(&self, nu: usize, nv: usize) -> Result<&Vec<ComplexLu>> {
        if let Some(b) = self.r0_blocks.get() {
            return Ok(b);
        }
        let b = build_torus_blocks(self.big_r, self.small_r, nu, nv)?;
        let _ = self.r0_blocks.set(b);
        Ok(self.r0_blocks.get().expect("just initialized"))
    }
}

enum Spectral {
    Sphere(SphereSpectral),
    Torus(TorusSpectral),
}

/// Tensor-product quadrature grid on a parametric surface, with the chart
/// frame, metric scale factors, and area weights at every node. Node index
/// is iu * nv + iv.
pub struct SurfaceGrid {
    pub shape: Shape,
    pub nu: usize,
    pub nv: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub pos: Vec<[f64; 3]>,
    pub normal: Vec<[f64; 3]>,
    pub e1: Vec<[f64; 3]>,
    pub e2: Vec<[f64; 3]>,
    /// metric scale factors |x_u|, |x_v|
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub weight: Vec<f64>,
    spectral: Spectral,
}

/// DFT frequency of index i on an n-point periodic grid.
fn freq(i: usize, n: usize) -> i64 {
    if (i as i64) < (n as i64 + 1) / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl SurfaceGrid {
    pub fn new(shape: Shape, nu: usize, nv: usize) -> Result<Self> {
        match shape {
            Shape::Sphere => {
                if nu < 2 || nv < 4 {
                    return Err(Error::Config(format!("sphere grid too small: {nu}x{nv}")));
                }
            }
            Shape::Torus { big_r, small_r } => {
                if !(big_r > small_r && small_r > 0.0) {
                    return Err(Error::Config(format!(
                        "torus radii must satisfy R > r > 0, got R = {big_r}, r = {small_r}"
                    )));
                }
                if nu < 4 || nv < 4 {
                    return Err(Error::Config(format!("torus grid too small: {nu}x{nv}")));
                }
            }
        }
        let (u, v, uw): (Vec<f64>, Vec<f64>, Vec<f64>) = match shape {
            Shape::Sphere => {
                let (x, w) = gauss_legendre(nu);
                // ascending colatitude
                let u: Vec<f64> = x.iter().rev().map(|&xi| xi.acos()).collect();
                let uw: Vec<f64> = w.iter().rev().cloned().collect();
                let v = (0..nv).map(|j| 2.0 * PI * j as f64 / nv as f64).collect();
                (u, v, uw)
            }
            Shape::Torus { .. } => (
                (0..nu).map(|i| 2.0 * PI * i as f64 / nu as f64).collect(),
                (0..nv).map(|j| 2.0 * PI * j as f64 / nv as f64).collect(),
                vec![2.0 * PI / nu as f64; nu],
            ),
        };
        let n = nu * nv;
        let mut pos = Vec::with_capacity(n);
        let mut normal = Vec::with_capacity(n);
        let mut e1 = Vec::with_capacity(n);
        let mut e2 = Vec::with_capacity(n);
        let mut h1 = Vec::with_capacity(n);
        let mut h2 = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        for iu in 0..nu {
            for iv in 0..nv {
                let (x, xu, xv) = shape.chart(u[iu], v[iv]);
                let a = norm3(xu);
                let b = norm3(xv);
                let t1 = [xu[0] / a, xu[1] / a, xu[2] / a];
                let t2 = [xv[0] / b, xv[1] / b, xv[2] / b];
                let nn = cross(t1, t2);
                pos.push(x);
                normal.push(nn);
                e1.push(t1);
                e2.push(t2);
                h1.push(a);
                h2.push(b);
                // sphere: dA = d(cos u) dv, and a * b = sin u is folded into
                // the Gauss-Legendre rule in cos u; torus: dA = a b du dv
                let w = match shape {
                    Shape::Sphere => uw[iu] * 2.0 * PI / nv as f64,
                    Shape::Torus { .. } => uw[iu] * (2.0 * PI / nv as f64) * a * b,
                };
                weight.push(w);
            }
        }
        let spectral = match shape {
            Shape::Sphere => {
                let lmax = (nu - 1).min((nv - 1) / 2);
                let mut ptab = Vec::with_capacity(nu);
                let mut dptab = Vec::with_capacity(nu);
                let mut sin_u = Vec::with_capacity(nu);
                for iu in 0..nu {
                    let (p, dp) = legendre_dtheta_table(lmax, u[iu]);
                    debug_assert_eq!(p.len(), tri_len(lmax));
                    ptab.push(p);
                    dptab.push(dp);
                    sin_u.push(u[iu].sin());
                }
                Spectral::Sphere(SphereSpectral { lmax, glw: uw, ptab, dptab, sin_u })
            }
            Shape::Torus { big_r, small_r } => Spectral::Torus(TorusSpectral {
                big_r,
                small_r,
                r0_blocks: std::sync::OnceLock::new(),
            }),
        };
        Ok(SurfaceGrid {
            shape,
            nu,
            nv,
            u,
            v,
            pos,
            normal,
            e1,
            e2,
            h1,
            h2,
            weight,
            spectral,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nu * self.nv
    }

    pub fn area(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// Spherical-harmonic bandwidth of a sphere grid.
    pub fn lmax(&self) -> Option<usize> {
        match &self.spectral {
            Spectral::Sphere(s) => Some(s.lmax),
            _ => None,
        }
    }

    fn check_scalar(&self, f: &ScalarField) -> Result<()> {
        if f.vals.len() != self.nodes() {
            return Err(Error::GridMismatch(format!(
                "scalar field has {} values, grid has {} nodes",
                f.vals.len(),
                self.nodes()
            )));
        }
        Ok(())
    }

    fn check_tangent(&self, v: &TangentField) -> Result<()> {
        if v.c1.len() != self.nodes() || v.c2.len() != self.nodes() {
            return Err(Error::GridMismatch(format!(
                "tangent field has ({}, {}) values, grid has {} nodes",
                v.c1.len(),
                v.c2.len(),
                self.nodes()
            )));
        }
        Ok(())
    }

    pub fn scalar_from_fn(&self, g: impl Fn([f64; 3], f64, f64) -> Complex64) -> ScalarField {
        let mut vals = Vec::with_capacity(self.nodes());
        for iu in 0..self.nu {
            for iv in 0..self.nv {
                vals.push(g(self.pos[iu * self.nv + iv], self.u[iu], self.v[iv]));
            }
        }
        ScalarField { vals }
    }

    /// Ambient 3-vector of a tangent field at node i.
    pub fn tangent_ambient(&self, t: &TangentField, i: usize) -> [Complex64; 3] {
        let mut out = [ZERO; 3];
        for c in 0..3 {
            out[c] = t.c1[i] * self.e1[i][c] + t.c2[i] * self.e2[i][c];
        }
        out
    }

    /// Project an ambient 3-vector at node i onto the tangent frame.
    pub fn tangent_from_ambient(&self, w: [Complex64; 3], i: usize) -> (Complex64, Complex64) {
        let mut c1 = ZERO;
        let mut c2 = ZERO;
        for c in 0..3 {
            c1 += w[c] * self.e1[i][c];
            c2 += w[c] * self.e2[i][c];
        }
        (c1, c2)
    }

    pub fn integral(&self, f: &ScalarField) -> Complex64 {
        f.vals.iter().zip(&self.weight).map(|(a, w)| a * w).sum()
    }

    /// Quadrature L2 inner product of scalar fields, conjugate-linear in b.
    pub fn dot_scalar(&self, a: &ScalarField, b: &ScalarField) -> Complex64 {
        a.vals
            .iter()
            .zip(&b.vals)
            .zip(&self.weight)
            .map(|((x, y), w)| x * y.conj() * w)
            .sum()
    }

    pub fn dot_tangent(&self, a: &TangentField, b: &TangentField) -> Complex64 {
        (0..self.nodes())
            .map(|i| (a.c1[i] * b.c1[i].conj() + a.c2[i] * b.c2[i].conj()) * self.weight[i])
            .sum()
    }

    pub fn norm_scalar(&self, f: &ScalarField) -> f64 {
        self.dot_scalar(f, f).re.max(0.0).sqrt()
    }

    pub fn norm_tangent(&self, v: &TangentField) -> f64 {
        self.dot_tangent(v, v).re.max(0.0).sqrt()
    }

    pub fn mean_zero_project(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check_scalar(f)?;
        let mean = self.integral(f) / self.area();
        Ok(ScalarField { vals: f.vals.iter().map(|x| x - mean).collect() })
    }

    pub fn is_mean_zero(&self, f: &ScalarField) -> Result<bool> {
        self.check_scalar(f)?;
        let scale = 1.0 + f.vals.iter().map(|x| x.norm()).fold(0.0f64, f64::max);
        Ok((self.integral(f) / self.area()).norm() <= 1e-10 * scale)
    }

    fn require_mean_zero(&self, f: &ScalarField) -> Result<ScalarField> {
        let mean = (self.integral(f) / self.area()).norm();
        let scale = 1.0 + f.vals.iter().map(|x| x.norm()).fold(0.0f64, f64::max);
        if mean > 1e-10 * scale {
            return Err(Error::MeanZero(mean));
        }
        self.mean_zero_project(f)
    }

    /// n x v in frame components.
    pub fn rot90(&self, t: &TangentField) -> Result<TangentField> {
        self.check_tangent(t)?;
        Ok(TangentField {
            c1: t.c2.iter().map(|x| -x).collect(),
            c2: t.c1.clone(),
        })
    }

    pub fn surface_grad(&self, f: &ScalarField) -> Result<TangentField> {
        self.check_scalar(f)?;
        match &self.spectral {
            Spectral::Sphere(_) => {
                let a = self.sphere_analysis(f)?;
                self.sphere_vsh_synthesis(&a, &ShCoeffs::zeros(a.lmax()))
            }
            Spectral::Torus(_) => {
                let fu = self.torus_deriv(&f.vals, 0);
                let fv = self.torus_deriv(&f.vals, 1);
                let n = self.nodes();
                let mut c1 = vec![ZERO; n];
                let mut c2 = vec![ZERO; n];
                for i in 0..n {
                    c1[i] = fu[i] / self.h1[i];
                    c2[i] = fv[i] / self.h2[i];
                }
                Ok(TangentField { c1, c2 })
            }
        }
    }

    pub fn surface_div(&self, t: &TangentField) -> Result<ScalarField> {
        self.check_tangent(t)?;
        match &self.spectral {
            Spectral::Sphere(s) => {
                let (p, _q) = self.sphere_vsh_analysis(t)?;
                let mut b = ShCoeffs::zeros(s.lmax);
                for l in 1..=s.lmax {
                    for m in -(l as i64)..=(l as i64) {
                        b.set(l, m, -((l * (l + 1)) as f64) * p.get(l, m));
                    }
                }
                self.sphere_synthesis(&b)
            }
            Spectral::Torus(_) => {
                // div = (1/h1) d_s c1 + (1/(h1 h2)) d_t (h1 c2); h1 = rho(t), h2 = r
                let n = self.nodes();
                let du = self.torus_deriv(&t.c1, 0);
                let h1c2: Vec<Complex64> =
                    (0..n).map(|i| t.c2[i] * self.h1[i]).collect();
                let dv = self.torus_deriv(&h1c2, 1);
                let mut vals = vec![ZERO; n];
                for i in 0..n {
                    vals[i] = du[i] / self.h1[i] + dv[i] / (self.h1[i] * self.h2[i]);
                }
                Ok(ScalarField { vals })
            }
        }
    }

    /// Partial inverse of the Laplace-Beltrami operator: solves
    /// laplacian(u) = f with mean-zero u for mean-zero f.
    pub fn laplace_partial_inverse(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check_scalar(f)?;
        let f = self.require_mean_zero(f)?;
        match &self.spectral {
            Spectral::Sphere(s) => {
                let mut a = self.sphere_analysis(&f)?;
                a.set(0, 0, ZERO);
                for l in 1..=s.lmax {
                    for m in -(l as i64)..=(l as i64) {
                        a.set(l, m, -a.get(l, m) / (l * (l + 1)) as f64);
                    }
                }
                self.sphere_synthesis(&a)
            }
            Spectral::Torus(ts) => {
                let blocks = ts.blocks(self.nu, self.nv)?;
                // Galerkin right-hand side <f, e_mn> by quadrature
                let n = self.nodes();
                let wf: Vec<Complex64> =
                    (0..n).map(|i| f.vals[i] * self.weight[i]).collect();
                let rhs = self.dft2(&wf, true, false);
                let mut coef = vec![ZERO; n];
                for mi in 0..self.nu {
                    let m0 = mi == 0;
                    let dim = if m0 { self.nv - 1 } else { self.nv };
                    let mut b = DVector::from_element(dim, ZERO);
                    let mut idx = 0;
                    for ni in 0..self.nv {
                        if m0 && ni == 0 {
                            continue;
                        }
                        b[idx] = rhs[mi * self.nv + ni];
                        idx += 1;
                    }
                    let c = blocks[mi].solve_vec(&b);
                    let mut idx = 0;
                    for ni in 0..self.nv {
                        if m0 && ni == 0 {
                            continue;
                        }
                        coef[mi * self.nv + ni] = c[idx];
                        idx += 1;
                    }
                }
                let u = ScalarField { vals: self.dft2(&coef, false, false) };
                self.mean_zero_project(&u)
            }
        }
    }

    /// Fictitious currents from Debye sources: j = grad(psi) + n x grad(psi_m)
    /// + j_H with psi = ik R0 r, psi_m = -ik R0 q, and m = n x j.
    pub fn currents_from_debye(
        &self,
        r: &ScalarField,
        q: &ScalarField,
        k: Complex64,
        j_h: Option<&TangentField>,
    ) -> Result<(TangentField, TangentField)> {
        self.check_scalar(r)?;
        self.check_scalar(q)?;
        let psi = self.laplace_partial_inverse(r)?;
        let psi_m = self.laplace_partial_inverse(q)?;
        let gp = self.surface_grad(&psi)?;
        let gm = self.surface_grad(&psi_m)?;
        let rgm = self.rot90(&gm)?;
        let n = self.nodes();
        let mut j = TangentField::zeros(n);
        for i in 0..n {
            j.c1[i] = I * k * gp.c1[i] - I * k * rgm.c1[i];
            j.c2[i] = I * k * gp.c2[i] - I * k * rgm.c2[i];
        }
        if let Some(h) = j_h {
            self.check_tangent(h)?;
            for i in 0..n {
                j.c1[i] += h.c1[i];
                j.c2[i] += h.c2[i];
            }
        }
        let m = self.rot90(&j)?;
        Ok((j, m))
    }

    /// L2-orthonormal basis of the nullspace of the 1-form Laplacian
    /// lap1(j) = grad(div j) - n x grad(div(n x j)); 2g fields.
    pub fn harmonic_basis(&self) -> Result<Vec<TangentField>> {
        match self.shape {
            Shape::Sphere => Ok(Vec::new()),
            Shape::Torus { big_r, small_r } => {
                self.torus_harmonic_basis(big_r, small_r)
            }
        }
    }

    /// Hodge decomposition v = grad(alpha) + n x grad(beta) + h with h in the
    /// span of the harmonic basis (empty for genus 0).
    pub fn hodge_decompose(
        &self,
        v: &TangentField,
        basis: &[TangentField],
    ) -> Result<(TangentField, TangentField, TangentField)> {
        self.check_tangent(v)?;
        let alpha = self.laplace_partial_inverse(&self.surface_div(v)?)?;
        let rv = self.rot90(v)?;
        let mut beta = self.laplace_partial_inverse(&self.surface_div(&rv)?)?;
        for x in beta.vals.iter_mut() {
            *x = -*x;
        }
        let gpart = self.surface_grad(&alpha)?;
        let rpart = self.rot90(&self.surface_grad(&beta)?)?;
        let n = self.nodes();
        let mut h = TangentField::zeros(n);
        for i in 0..n {
            h.c1[i] = v.c1[i] - gpart.c1[i] - rpart.c1[i];
            h.c2[i] = v.c2[i] - gpart.c2[i] - rpart.c2[i];
        }
        // project the remainder onto the harmonic span (removes quadrature
        // leakage into the other parts for genus 0 this is a no-op)
        let mut hh = TangentField::zeros(n);
        for b in basis {
            self.check_tangent(b)?;
            let c = self.dot_tangent(&h, b);
            for i in 0..n {
                hh.c1[i] += c * b.c1[i];
                hh.c2[i] += c * b.c2[i];
            }
        }
        if basis.is_empty() {
            hh = h;
        }
        Ok((gpart, rpart, hh))
    }

    // ---------------- sphere spectral transforms ----------------

    fn sphere(&self) -> Result<&SphereSpectral> {
        match &self.spectral {
            Spectral::Sphere(s) => Ok(s),
            _ => Err(Error::Domain("operation requires a sphere grid".into())),
        }
    }

    /// Phi-direction discrete transform: out[(iu, m)] = sum_iv f e^{-i m v},
    /// scaled by 2 pi / nv; m runs over -lmax..=lmax.
    fn phi_analysis(&self, vals: &[Complex64], lmax: usize) -> Vec<Complex64> {
        let (nu, nv) = (self.nu, self.nv);
        let nm = 2 * lmax + 1;
        let mut out = vec![ZERO; nu * nm];
        let scale = 2.0 * PI / nv as f64;
        for iu in 0..nu {
            for iv in 0..nv {
                let fv = vals[iu * nv + iv] * scale;
                let dphase = (-I * self.v[iv]).exp();
                // phases e^{-i m v} from m = -lmax upward
                let mut ph = (I * (lmax as f64) * self.v[iv]).exp();
                for mi in 0..nm {
                    out[iu * nm + mi] += fv * ph;
                    ph *= dphase;
                }
            }
        }
        out
    }

    /// Inverse of the phi transform structure: given per-(node row, m)
    /// amplitudes g, returns nodal values sum_m g e^{+i m v}.
    fn phi_synthesis(&self, g: &[Complex64], lmax: usize) -> Vec<Complex64> {
        let (nu, nv) = (self.nu, self.nv);
        let nm = 2 * lmax + 1;
        let mut out = vec![ZERO; nu * nv];
        for iu in 0..nu {
            for iv in 0..nv {
                let dphase = (I * self.v[iv]).exp();
                let mut ph = (-I * (lmax as f64) * self.v[iv]).exp();
                let mut acc = ZERO;
                for mi in 0..nm {
                    acc += g[iu * nm + mi] * ph;
                    ph *= dphase;
                }
                out[iu * nv + iv] = acc;
            }
        }
        out
    }

    /// Forward spherical-harmonic transform, exact for band limit <= lmax.
    pub fn sphere_analysis(&self, f: &ScalarField) -> Result<ShCoeffs> {
        self.check_scalar(f)?;
        let s = self.sphere()?;
        let lmax = s.lmax;
        let nm = 2 * lmax + 1;
        let fm = self.phi_analysis(&f.vals, lmax);
        let mut a = ShCoeffs::zeros(lmax);
        for iu in 0..self.nu {
            let w = s.glw[iu];
            let p = &s.ptab[iu];
            for l in 0..=lmax {
                for m in -(l as i64)..=(l as i64) {
                    let ma = m.unsigned_abs() as usize;
                    let sign = if m < 0 && m % 2 != 0 { -1.0 } else { 1.0 };
                    let y = sign * p[tri_index(l, ma)] * w;
                    let mi = (m + lmax as i64) as usize;
                    let prev = a.get(l, m);
                    a.set(l, m, prev + y * fm[iu * nm + mi]);
                }
            }
        }
        Ok(a)
    }

    /// Evaluate a coefficient set at the grid nodes.
    pub fn sphere_synthesis(&self, a: &ShCoeffs) -> Result<ScalarField> {
        let s = self.sphere()?;
        let lmax = s.lmax.min(a.lmax());
        let nm = 2 * s.lmax + 1;
        let mut g = vec![ZERO; self.nu * nm];
        for iu in 0..self.nu {
            let p = &s.ptab[iu];
            for l in 0..=lmax {
                for m in -(l as i64)..=(l as i64) {
                    let ma = m.unsigned_abs() as usize;
                    let sign = if m < 0 && m % 2 != 0 { -1.0 } else { 1.0 };
                    let mi = (m + s.lmax as i64) as usize;
                    g[iu * nm + mi] += a.get(l, m) * sign * p[tri_index(l, ma)];
                }
            }
        }
        Ok(ScalarField { vals: self.phi_synthesis(&g, s.lmax) })
    }

    /// Vector spherical-harmonic analysis: v = sum p_lm Grad Y_lm
    /// + q_lm StarGrad Y_lm (l >= 1).
    pub fn sphere_vsh_analysis(&self, t: &TangentField) -> Result<(ShCoeffs, ShCoeffs)> {
        self.check_tangent(t)?;
        let s = self.sphere()?;
        let lmax = s.lmax;
        let nm = 2 * lmax + 1;
        let f1 = self.phi_analysis(&t.c1, lmax);
        let f2 = self.phi_analysis(&t.c2, lmax);
        let mut p = ShCoeffs::zeros(lmax);
        let mut q = ShCoeffs::zeros(lmax);
        for iu in 0..self.nu {
            let w = s.glw[iu];
            let pt = &s.ptab[iu];
            let dpt = &s.dptab[iu];
            let si = s.sin_u[iu];
            for l in 1..=lmax {
                let ll1 = (l * (l + 1)) as f64;
                for m in -(l as i64)..=(l as i64) {
                    let ma = m.unsigned_abs() as usize;
                    let sign = if m < 0 && m % 2 != 0 { -1.0 } else { 1.0 };
                    let yv = sign * pt[tri_index(l, ma)];
                    let dyv = sign * dpt[tri_index(l, ma)];
                    let ims = Complex64::new(0.0, m as f64 / si);
                    let mi = (m + lmax as i64) as usize;
                    let a1 = f1[iu * nm + mi];
                    let a2 = f2[iu * nm + mi];
                    // conj(Grad) = (dY, -im/s Y) e^{-im v}; conj(Star) = (im/s Y, dY) e^{-im v}
                    let dp = w / ll1 * (dyv * a1 - ims * yv * a2);
                    let dq = w / ll1 * (ims * yv * a1 + dyv * a2);
                    p.set(l, m, p.get(l, m) + dp);
                    q.set(l, m, q.get(l, m) + dq);
                }
            }
        }
        Ok((p, q))
    }

    /// Evaluate a vector spherical-harmonic expansion at the grid nodes.
    pub fn sphere_vsh_synthesis(&self, p: &ShCoeffs, q: &ShCoeffs) -> Result<TangentField> {
        let s = self.sphere()?;
        let lmax = s.lmax.min(p.lmax()).min(q.lmax());
        let nm = 2 * s.lmax + 1;
        let mut g1 = vec![ZERO; self.nu * nm];
        let mut g2 = vec![ZERO; self.nu * nm];
        for iu in 0..self.nu {
            let pt = &s.ptab[iu];
            let dpt = &s.dptab[iu];
            let si = s.sin_u[iu];
            for l in 1..=lmax {
                for m in -(l as i64)..=(l as i64) {
                    let ma = m.unsigned_abs() as usize;
                    let sign = if m < 0 && m % 2 != 0 { -1.0 } else { 1.0 };
                    let yv = sign * pt[tri_index(l, ma)];
                    let dyv = sign * dpt[tri_index(l, ma)];
                    let ims = Complex64::new(0.0, m as f64 / si);
                    let mi = (m + s.lmax as i64) as usize;
                    let pc = p.get(l, m);
                    let qc = q.get(l, m);
                    // Grad = (dY, im/s Y); Star = (-im/s Y, dY)
                    g1[iu * nm + mi] += pc * dyv - qc * ims * yv;
                    g2[iu * nm + mi] += pc * ims * yv + qc * dyv;
                }
            }
        }
        Ok(TangentField {
            c1: self.phi_synthesis(&g1, s.lmax),
            c2: self.phi_synthesis(&g2, s.lmax),
        })
    }

    // ---------------- torus spectral transforms ----------------

    /// Separable 2-d DFT on the periodic tensor grid. forward: coefficients
    /// such that f = sum c e^{i(m u + n v)}; normalize divides by nu*nv
    /// (set false on the forward side to get plain exponential sums).
    fn dft2(&self, vals: &[Complex64], forward: bool, normalize: bool) -> Vec<Complex64> {
        let (nu, nv) = (self.nu, self.nv);
        let sgn = if forward { -1.0 } else { 1.0 };
        // v axis
        let wv: Vec<Complex64> = (0..nv)
            .map(|j| (I * sgn * 2.0 * PI * j as f64 / nv as f64).exp())
            .collect();
        let mut tmp = vec![ZERO; nu * nv];
        for iu in 0..nu {
            for nj in 0..nv {
                let mut acc = ZERO;
                for iv in 0..nv {
                    acc += vals[iu * nv + iv] * wv[(nj * iv) % nv];
                }
                tmp[iu * nv + nj] = acc;
            }
        }
        // u axis
        let wu: Vec<Complex64> = (0..nu)
            .map(|j| (I * sgn * 2.0 * PI * j as f64 / nu as f64).exp())
            .collect();
        let mut out = vec![ZERO; nu * nv];
        for nj in 0..nv {
            for mi in 0..nu {
                let mut acc = ZERO;
                for iu in 0..nu {
                    acc += tmp[iu * nv + nj] * wu[(mi * iu) % nu];
                }
                out[mi * nv + nj] = acc;
            }
        }
        if normalize && forward {
            let s = 1.0 / (nu * nv) as f64;
            for x in out.iter_mut() {
                *x *= s;
            }
        }
        out
    }

    /// Spectral derivative along chart axis 0 (u) or 1 (v).
    fn torus_deriv(&self, vals: &[Complex64], axis: usize) -> Vec<Complex64> {
        let (nu, nv) = (self.nu, self.nv);
        let mut c = self.dft2(vals, true, true);
        for mi in 0..nu {
            for ni in 0..nv {
                let f = if axis == 0 { freq(mi, nu) } else { freq(ni, nv) };
                c[mi * nv + ni] *= Complex64::new(0.0, f as f64);
            }
        }
        self.dft2(&c, false, false)
    }

    /// Double-Fourier coefficients of a nodal scalar field.
    pub fn torus_coeffs(&self, f: &ScalarField) -> Result<Vec<Complex64>> {
        self.check_scalar(f)?;
        match self.shape {
            Shape::Torus { .. } => Ok(self.dft2(&f.vals, true, true)),
            _ => Err(Error::Domain("operation requires a torus grid".into())),
        }
    }

    /// Interpolate a scalar field at an arbitrary chart point (spectral).
    pub fn eval_scalar(&self, f: &ScalarField, u: f64, v: f64) -> Result<Complex64> {
        self.check_scalar(f)?;
        match &self.spectral {
            Spectral::Sphere(s) => {
                let a = self.sphere_analysis(f)?;
                let p = legendre_table(s.lmax, u.cos());
                let mut acc = ZERO;
                for l in 0..=s.lmax {
                    for m in -(l as i64)..=(l as i64) {
                        let ma = m.unsigned_abs() as usize;
                        let sign = if m < 0 && m % 2 != 0 { -1.0 } else { 1.0 };
                        acc += a.get(l, m) * sign * p[tri_index(l, ma)] * (I * m as f64 * v).exp();
                    }
                }
                Ok(acc)
            }
            Spectral::Torus(_) => {
                let c = self.dft2(&f.vals, true, true);
                let mut acc = ZERO;
                for mi in 0..self.nu {
                    let m = freq(mi, self.nu) as f64;
                    let pu = (I * m * u).exp();
                    for ni in 0..self.nv {
                        let n = freq(ni, self.nv) as f64;
                        acc += c[mi * self.nv + ni] * pu * (I * n * v).exp();
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Spectrally resample a scalar field onto a finer grid of the same shape.
    pub fn resample_scalar(&self, fine: &SurfaceGrid, f: &ScalarField) -> Result<ScalarField> {
        self.check_scalar(f)?;
        if fine.shape != self.shape {
            return Err(Error::GridMismatch("resample requires matching shapes".into()));
        }
        match &self.spectral {
            Spectral::Sphere(s) => {
                let a = self.sphere_analysis(f)?;
                let flmax = fine.lmax().expect("sphere grid");
                let mut b = ShCoeffs::zeros(flmax);
                for l in 0..=s.lmax.min(flmax) {
                    for m in -(l as i64)..=(l as i64) {
                        b.set(l, m, a.get(l, m));
                    }
                }
                fine.sphere_synthesis(&b)
            }
            Spectral::Torus(_) => {
                let c = self.dft2(&f.vals, true, true);
                Ok(ScalarField { vals: self.synthesis_on(fine, &c) })
            }
        }
    }

    /// Spectrally resample a tangent field onto a finer grid of the same shape
    /// (frame components transform as scalars on the shared chart).
    pub fn resample_tangent(&self, fine: &SurfaceGrid, t: &TangentField) -> Result<TangentField> {
        self.check_tangent(t)?;
        if fine.shape != self.shape {
            return Err(Error::GridMismatch("resample requires matching shapes".into()));
        }
        match &self.spectral {
            Spectral::Sphere(s) => {
                let (p, q) = self.sphere_vsh_analysis(t)?;
                let flmax = fine.lmax().expect("sphere grid");
                let mut p2 = ShCoeffs::zeros(flmax);
                let mut q2 = ShCoeffs::zeros(flmax);
                for l in 1..=s.lmax.min(flmax) {
                    for m in -(l as i64)..=(l as i64) {
                        p2.set(l, m, p.get(l, m));
                        q2.set(l, m, q.get(l, m));
                    }
                }
                fine.sphere_vsh_synthesis(&p2, &q2)
            }
            Spectral::Torus(_) => {
                let c1 = self.dft2(&t.c1, true, true);
                let c2 = self.dft2(&t.c2, true, true);
                Ok(TangentField {
                    c1: self.synthesis_on(fine, &c1),
                    c2: self.synthesis_on(fine, &c2),
                })
            }
        }
    }

    /// Evaluate this grid's double-Fourier coefficients at another torus
    /// grid's nodes (separable partial sums).
    fn synthesis_on(&self, fine: &SurfaceGrid, c: &[Complex64]) -> Vec<Complex64> {
        let (nu, nv) = (self.nu, self.nv);
        let (fu, fv) = (fine.nu, fine.nv);
        // stage 1: sum over n for every fine v node
        let mut b = vec![ZERO; nu * fv];
        for mi in 0..nu {
            for jv in 0..fv {
                let mut acc = ZERO;
                for ni in 0..nv {
                    acc += c[mi * nv + ni] * (I * freq(ni, nv) as f64 * fine.v[jv]).exp();
                }
                b[mi * fv + jv] = acc;
            }
        }
        // stage 2: sum over m for every fine u node
        let mut out = vec![ZERO; fu * fv];
        for ju in 0..fu {
            for mi in 0..nu {
                let pu = (I * freq(mi, nu) as f64 * fine.u[ju]).exp();
                for jv in 0..fv {
                    out[ju * fv + jv] += b[mi * fv + jv] * pu;
                }
            }
        }
        out
    }

    // ---------------- torus harmonic nullspace ----------------

    fn torus_harmonic_basis(&self, big_r: f64, small_r: f64) -> Result<Vec<TangentField>> {
        let (nu, nv) = (self.nu, self.nv);
        let m_rho = conv_matrix(&rho_coeffs(big_r, small_r, nv), nv);
        let m_irho = conv_matrix(&inv_rho_coeffs(big_r, small_r, nv), nv);
        let d = DMatrix::from_fn(nv, nv, |a, b| {
            if a == b {
                Complex64::new(0.0, freq(a, nv) as f64)
            } else {
                ZERO
            }
        });
        let mut rot = DMatrix::from_element(2 * nv, 2 * nv, ZERO);
        for i in 0..nv {
            rot[(i, nv + i)] = -Complex64::new(1.0, 0.0);
            rot[(nv + i, i)] = Complex64::new(1.0, 0.0);
        }
        // collect candidate null vectors over the decoupled s-frequencies
        let mut sigma_max = 0.0f64;
        let mut candidates: Vec<(f64, usize, DVector<Complex64>)> = Vec::new();
        for mi in 0..nu {
            let m = freq(mi, nu) as f64;
            let im = Complex64::new(0.0, m);
            // div: (c1, c2) -> (im/rho) c1 + (1/(rho r)) d_t (rho c2)
            let div_left = &m_irho * im;
            let div_right = (&m_irho * &d * &m_rho) / Complex64::new(small_r, 0.0);
            let mut div = DMatrix::from_element(nv, 2 * nv, ZERO);
            div.view_mut((0, 0), (nv, nv)).copy_from(&div_left);
            div.view_mut((0, nv), (nv, nv)).copy_from(&div_right);
            // grad: f -> ((im/rho) f, (1/r) d_t f)
            let mut grad = DMatrix::from_element(2 * nv, nv, ZERO);
            grad.view_mut((0, 0), (nv, nv)).copy_from(&(&m_irho * im));
            grad.view_mut((nv, 0), (nv, nv))
                .copy_from(&(&d / Complex64::new(small_r, 0.0)));
            let gd = &grad * &div;
            let lap1 = &gd - &rot * &gd * &rot;
            let svd = nalgebra::SVD::new(lap1, false, true);
            let vt = svd.v_t.as_ref().expect("svd v_t requested");
            for (i, sv) in svd.singular_values.iter().enumerate() {
                sigma_max = sigma_max.max(*sv);
                candidates.push((*sv, mi, vt.row(i).map(|x| x.conj()).transpose()));
            }
        }
        let thresh = 1e3 * f64::EPSILON * sigma_max;
        let mut fields: Vec<TangentField> = Vec::new();
        for (sv, mi, vec) in candidates {
            if sv > thresh {
                continue;
            }
            // synthesize nodal components from the t-Fourier vector at s-mode mi
            let n = self.nodes();
            let mut t = TangentField::zeros(n);
            for iu in 0..nu {
                let pu = (I * freq(mi, nu) as f64 * self.u[iu]).exp();
                for iv in 0..nv {
                    let mut a1 = ZERO;
                    let mut a2 = ZERO;
                    for ni in 0..nv {
                        let pv = (I * freq(ni, nv) as f64 * self.v[iv]).exp();
                        a1 += vec[ni] * pv;
                        a2 += vec[nv + ni] * pv;
                    }
                    t.c1[iu * nv + iv] = a1 * pu;
                    t.c2[iu * nv + iv] = a2 * pu;
                }
            }
            fields.push(t);
        }
        let expected = 2 * self.shape.genus();
        if fields.len() != expected {
            return Err(Error::RankDeficiency { expected, found: fields.len() });
        }
        // modified Gram-Schmidt in the quadrature L2 inner product
        let mut ortho: Vec<TangentField> = Vec::new();
        for mut f in fields {
            for o in &ortho {
                let c = self.dot_tangent(&f, o);
                for i in 0..self.nodes() {
                    f.c1[i] -= c * o.c1[i];
                    f.c2[i] -= c * o.c2[i];
                }
            }
            let nrm = self.norm_tangent(&f);
            if nrm < 1e-12 {
                return Err(Error::RankDeficiency { expected, found: ortho.len() });
            }
            for i in 0..self.nodes() {
                f.c1[i] /= nrm;
                f.c2[i] /= nrm;
            }
            ortho.push(f);
        }
        Ok(ortho)
    }
}

/// Fourier coefficients of rho(t) = R + r cos t over the nv frequency set.
fn rho_coeffs(big_r: f64, small_r: f64, nv: usize) -> Vec<Complex64> {
    // index kappa + nv maps kappa in [-nv, nv]
    let mut c = vec![ZERO; 2 * nv + 1];
    c[nv] = Complex64::new(big_r, 0.0);
    if nv >= 1 {
        c[nv + 1] = Complex64::new(small_r / 2.0, 0.0);
        c[nv - 1] = Complex64::new(small_r / 2.0, 0.0);
    }
    c
}

/// Fourier coefficients of 1/rho(t) by trapezoid quadrature (spectrally
/// accurate for the smooth periodic integrand).
fn inv_rho_coeffs(big_r: f64, small_r: f64, nv: usize) -> Vec<Complex64> {
    let nfine = (8 * nv).max(64);
    let mut c = vec![ZERO; 2 * nv + 1];
    for (kidx, ck) in c.iter_mut().enumerate() {
        let kappa = kidx as i64 - nv as i64;
        let mut acc = ZERO;
        for j in 0..nfine {
            let t = 2.0 * PI * j as f64 / nfine as f64;
            let g = 1.0 / (big_r + small_r * t.cos());
            acc += g * (-I * kappa as f64 * t).exp();
        }
        *ck = acc / nfine as f64;
    }
    c
}

/// Convolution (multiplication) matrix in the t-Fourier basis:
/// (M c)_n = sum_n' hat(n - n') c_n'.
fn conv_matrix(hat: &[Complex64], nv: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(nv, nv, |a, b| {
        let kappa = freq(a, nv) - freq(b, nv);
        if kappa.unsigned_abs() as usize <= nv {
            hat[(kappa + nv as i64) as usize]
        } else {
            ZERO
        }
    })
}

/// Fourier-Galerkin blocks of the torus Laplace-Beltrami operator, one per
/// s-frequency; the m = 0 block is restricted to nonconstant modes.
fn build_torus_blocks(big_r: f64, small_r: f64, nu: usize, nv: usize) -> Result<Vec<ComplexLu>> {
    // I+(kappa) = int e^{i kappa t} rho dt ; I-(kappa) = int e^{i kappa t}/rho dt
    let nfine = (8 * nv).max(64);
    let span = 2 * nv + 1;
    let mut iplus = vec![ZERO; span];
    let mut iminus = vec![ZERO; span];
    for kidx in 0..span {
        let kappa = kidx as i64 - nv as i64;
        let mut ap = ZERO;
        let mut am = ZERO;
        for j in 0..nfine {
            let t = 2.0 * PI * j as f64 / nfine as f64;
            let rho = big_r + small_r * t.cos();
            let ph = (I * kappa as f64 * t).exp();
            ap += rho * ph;
            am += ph / rho;
        }
        iplus[kidx] = ap * (2.0 * PI / nfine as f64);
        iminus[kidx] = am * (2.0 * PI / nfine as f64);
    }
    let mut blocks = Vec::with_capacity(nu);
    for mi in 0..nu {
        let m = freq(mi, nu) as f64;
        let m0 = mi == 0;
        let dim = if m0 { nv - 1 } else { nv };
        let mut mat = DMatrix::from_element(dim, dim, ZERO);
        let mut ai = 0;
        for a in 0..nv {
            if m0 && a == 0 {
                continue;
            }
            let na = freq(a, nv) as f64;
            let mut bi = 0;
            for b in 0..nv {
                if m0 && b == 0 {
                    continue;
                }
                let nb = freq(b, nv) as f64;
                let kappa = (freq(b, nv) - freq(a, nv) + nv as i64) as usize;
                mat[(ai, bi)] = -2.0
                    * PI
                    * (m * m * small_r * iminus[kappa]
                        + na * nb / small_r * iplus[kappa]);
                bi += 1;
            }
            ai += 1;
        }
        blocks.push(ComplexLu::factor(mat)?);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{sph_harm_y, vec_sph_harm, VshKind};

    fn sphere_grid() -> SurfaceGrid {
        SurfaceGrid::new(Shape::Sphere, 18, 36).unwrap()
    }

    fn torus_grid() -> SurfaceGrid {
        SurfaceGrid::new(Shape::Torus { big_r: 2.0, small_r: 0.5 }, 32, 32).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// random band-limited scalar field via low-order trigonometric modes
    fn random_scalar(g: &SurfaceGrid, seed: u64) -> ScalarField {
        let mut s = seed;
        let mut rnd = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let coef: Vec<(i64, i64, Complex64)> = (0..12)
            .map(|_| {
                (
                    (rnd() * 8.0) as i64,
                    (rnd() * 8.0) as i64,
                    c(rnd(), rnd()),
                )
            })
            .collect();
        g.scalar_from_fn(|_, u, v| {
            coef.iter()
                .map(|&(m, n, a)| {
                    a * (I * (m as f64 * u)).exp() * (I * (n as f64 * v)).exp()
                })
                .sum()
        })
    }

    fn random_tangent(g: &SurfaceGrid, seed: u64) -> TangentField {
        // band-limited: gradient + rotated gradient of smooth scalars
        let f1 = random_scalar(g, seed);
        let f2 = random_scalar(g, seed ^ 0xabcdef);
        let a = g.surface_grad(&g.mean_zero_project(&f1).unwrap()).unwrap();
        let b = g
            .rot90(&g.surface_grad(&g.mean_zero_project(&f2).unwrap()).unwrap())
            .unwrap();
        let n = g.nodes();
        let mut t = TangentField::zeros(n);
        for i in 0..n {
            t.c1[i] = a.c1[i] + b.c1[i];
            t.c2[i] = a.c2[i] + b.c2[i];
        }
        t
    }

    #[test]
    fn areas_and_normals() {
        let s = sphere_grid();
        assert!((s.area() - 4.0 * PI).abs() < 1e-10);
        let t = torus_grid();
        assert!((t.area() - 4.0 * PI * PI * 2.0 * 0.5).abs() < 1e-10);
        for g in [&s, &t] {
            for i in 0..g.nodes() {
                assert!((norm3(g.normal[i]) - 1.0).abs() < 1e-13);
            }
        }
        // outward orientation: sphere normal = position; torus normal points
        // away from the tube center ring
        for i in 0..s.nodes() {
            let d: f64 = (0..3).map(|c| s.normal[i][c] * s.pos[i][c]).sum();
            assert!(d > 0.99);
        }
        for i in 0..t.nodes() {
            let p = t.pos[i];
            let rr = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let ring = [2.0 * p[0] / rr, 2.0 * p[1] / rr, 0.0];
            let d: f64 = (0..3).map(|c| t.normal[i][c] * (p[c] - ring[c])).sum();
            assert!(d > 0.49, "node {i}: {d}");
        }
    }

    #[test]
    fn grad_of_constant_is_zero() {
        for g in [sphere_grid(), torus_grid()] {
            let f = g.scalar_from_fn(|_, _, _| c(2.5, -1.0));
            let v = g.surface_grad(&f).unwrap();
            let nrm = g.norm_tangent(&v);
            assert!(nrm < 1e-11, "{nrm}");
        }
    }

    #[test]
    fn sphere_laplace_beltrami_eigenvalues() {
        let g = sphere_grid();
        let lmax = g.lmax().unwrap();
        for &(l, m) in &[(1usize, 0i64), (3, 2), (5, -4), (8, 7)] {
            assert!(l <= lmax / 2);
            let f = g.scalar_from_fn(|_, u, v| sph_harm_y(l, m, u, v).unwrap());
            let lap = g.surface_div(&g.surface_grad(&f).unwrap()).unwrap();
            let ev = -((l * (l + 1)) as f64);
            let mut err = 0.0f64;
            for i in 0..g.nodes() {
                err = err.max((lap.vals[i] - ev * f.vals[i]).norm());
            }
            assert!(err < 1e-8 * ev.abs(), "({l},{m}): {err}");
        }
    }

    #[test]
    fn divergence_integral_vanishes() {
        for (g, seed) in [(sphere_grid(), 7u64), (torus_grid(), 8u64)] {
            let v = random_tangent(&g, seed);
            let d = g.surface_div(&v).unwrap();
            assert!(g.integral(&d).norm() < 1e-10, "{}", g.integral(&d).norm());
        }
    }

    #[test]
    fn grad_div_adjointness() {
        for (g, seed) in [(sphere_grid(), 17u64), (torus_grid(), 18u64)] {
            let f = g.mean_zero_project(&random_scalar(&g, seed)).unwrap();
            let v = random_tangent(&g, seed + 1);
            let lhs = g.dot_tangent(&g.surface_grad(&f).unwrap(), &v);
            let rhs = g.dot_scalar(&f, &g.surface_div(&v).unwrap());
            let scale = g.norm_scalar(&f) * g.norm_tangent(&v);
            assert!((lhs + rhs).norm() < 1e-9 * scale, "{}", (lhs + rhs).norm());
        }
    }

    #[test]
    fn rot90_twice_negates() {
        let g = torus_grid();
        let v = random_tangent(&g, 3);
        let rr = g.rot90(&g.rot90(&v).unwrap()).unwrap();
        for i in 0..g.nodes() {
            assert!((rr.c1[i] + v.c1[i]).norm() < 1e-13);
            assert!((rr.c2[i] + v.c2[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn r0_sphere_eigenfunction() {
        let g = sphere_grid();
        let (l, m) = (4usize, -2i64);
        let f = g.scalar_from_fn(|_, u, v| sph_harm_y(l, m, u, v).unwrap());
        let u = g.laplace_partial_inverse(&f).unwrap();
        let ev = -1.0 / (l * (l + 1)) as f64;
        for i in 0..g.nodes() {
            assert!((u.vals[i] - ev * f.vals[i]).norm() < 1e-12);
        }
        // zero maps to zero
        let z = ScalarField::zeros(g.nodes());
        let uz = g.laplace_partial_inverse(&z).unwrap();
        assert!(g.norm_scalar(&uz) < 1e-14);
    }

    #[test]
    fn r0_rejects_nonzero_mean() {
        for g in [sphere_grid(), torus_grid()] {
            let f = g.scalar_from_fn(|_, _, _| c(1.0, 0.0));
            assert!(matches!(
                g.laplace_partial_inverse(&f),
                Err(Error::MeanZero(_))
            ));
        }
    }

    #[test]
    fn r0_torus_inverts_laplacian() {
        let g = torus_grid();
        let f = g.mean_zero_project(&random_scalar(&g, 91)).unwrap();
        let u = g.laplace_partial_inverse(&f).unwrap();
        assert!(g.is_mean_zero(&u).unwrap());
        let lap = g.surface_div(&g.surface_grad(&u).unwrap()).unwrap();
        let mut err = 0.0f64;
        for i in 0..g.nodes() {
            err = err.max((lap.vals[i] - f.vals[i]).norm());
        }
        assert!(err < 1e-8 * (1.0 + g.norm_scalar(&f)), "{err}");
    }

    #[test]
    fn currents_sphere_single_mode() {
        // r = Y_1^0, q = 0, k = 1: j = -(ik/2) grad Y_1^0
        let g = sphere_grid();
        let k = c(1.0, 0.0);
        let r = g.scalar_from_fn(|_, u, v| sph_harm_y(1, 0, u, v).unwrap());
        let q = ScalarField::zeros(g.nodes());
        let (j, m) = g.currents_from_debye(&r, &q, k, None).unwrap();
        for iu in 0..g.nu {
            for iv in 0..g.nv {
                let i = iu * g.nv + iv;
                let gr = vec_sph_harm(1, 0, VshKind::Grad, g.u[iu], g.v[iv]).unwrap();
                let want1 = -I * k / 2.0 * gr[0];
                let want2 = -I * k / 2.0 * gr[1];
                assert!((j.c1[i] - want1).norm() < 1e-12);
                assert!((j.c2[i] - want2).norm() < 1e-12);
                // m = n x j
                assert!((m.c1[i] + j.c2[i]).norm() < 1e-14);
                assert!((m.c2[i] - j.c1[i]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn currents_vanish_at_low_frequency() {
        let g = sphere_grid();
        let r = g
            .mean_zero_project(&random_scalar(&g, 5))
            .unwrap();
        let q = ScalarField::zeros(g.nodes());
        let (j, _) = g.currents_from_debye(&r, &q, c(1e-8, 0.0), None).unwrap();
        assert!(g.norm_tangent(&j) / g.norm_scalar(&r) < 1e-6);
    }

    #[test]
    fn currents_torus_continuity() {
        let g = torus_grid();
        let k = c(1.0, 0.0);
        let r = g.mean_zero_project(&random_scalar(&g, 31)).unwrap();
        let q = g.mean_zero_project(&random_scalar(&g, 32)).unwrap();
        let (j, _) = g.currents_from_debye(&r, &q, k, None).unwrap();
        let dj = g.surface_div(&j).unwrap();
        let dnj = g.surface_div(&g.rot90(&j).unwrap()).unwrap();
        let mut e1 = 0.0f64;
        let mut e2 = 0.0f64;
        for i in 0..g.nodes() {
            e1 = e1.max((dj.vals[i] - I * k * r.vals[i]).norm());
            e2 = e2.max((dnj.vals[i] - I * k * q.vals[i]).norm());
        }
        let scale = 1.0 + g.norm_scalar(&r) + g.norm_scalar(&q);
        assert!(e1 < 1e-8 * scale, "{e1}");
        assert!(e2 < 1e-8 * scale, "{e2}");
    }

    #[test]
    fn harmonic_basis_sphere_empty() {
        let g = sphere_grid();
        assert!(g.harmonic_basis().unwrap().is_empty());
    }

    #[test]
    fn harmonic_basis_torus() {
        let g = torus_grid();
        let basis = g.harmonic_basis().unwrap();
        assert_eq!(basis.len(), 2);
        // orthonormal
        for a in 0..2 {
            for b in 0..2 {
                let want = if a == b { 1.0 } else { 0.0 };
                let got = g.dot_tangent(&basis[a], &basis[b]);
                assert!((got - want).norm() < 1e-10);
            }
        }
        // members are divergence free, as are their rotations
        for h in &basis {
            let d1 = g.norm_scalar(&g.surface_div(h).unwrap());
            let d2 = g.norm_scalar(&g.surface_div(&g.rot90(h).unwrap()).unwrap());
            assert!(d1 < 1e-8, "{d1}");
            assert!(d2 < 1e-8, "{d2}");
        }
        // principal angles against the analytic pair:
        // j1 = rho^{-2} dx/ds = (1/rho) e1, j2 = n x j1
        let n = g.nodes();
        let mut a1 = TangentField::zeros(n);
        for i in 0..n {
            a1.c1[i] = c(1.0 / g.h1[i], 0.0);
        }
        let a2 = g.rot90(&a1).unwrap();
        let nrm = g.norm_tangent(&a1);
        let mut an = [a1, a2];
        for a in an.iter_mut() {
            for i in 0..n {
                a.c1[i] /= nrm;
                a.c2[i] /= nrm;
            }
        }
        // cross-Gram singular values = cosines of principal angles
        let mut gram = [[ZERO; 2]; 2];
        for (ia, a) in an.iter().enumerate() {
            for (ib, b) in basis.iter().enumerate() {
                gram[ia][ib] = g.dot_tangent(a, b);
            }
        }
        let m = DMatrix::from_fn(2, 2, |i, j| gram[i][j]);
        let svd = nalgebra::SVD::new(m, false, false);
        for sv in svd.singular_values.iter() {
            let angle = sv.min(1.0).acos();
            assert!(angle < 1e-6, "principal angle {angle}");
        }
    }

    #[test]
    fn hodge_sphere_pure_gradient() {
        let g = sphere_grid();
        let f = g.scalar_from_fn(|_, u, v| sph_harm_y(2, 1, u, v).unwrap());
        let v = g.surface_grad(&f).unwrap();
        let (gp, rp, h) = g.hodge_decompose(&v, &[]).unwrap();
        let mut diff = TangentField::zeros(g.nodes());
        for i in 0..g.nodes() {
            diff.c1[i] = gp.c1[i] - v.c1[i];
            diff.c2[i] = gp.c2[i] - v.c2[i];
        }
        assert!(g.norm_tangent(&diff) < 1e-10);
        assert!(g.norm_tangent(&rp) < 1e-10);
        assert!(g.norm_tangent(&h) < 1e-10);
    }

    #[test]
    fn hodge_torus_harmonic_and_pythagoras() {
        let g = torus_grid();
        let basis = g.harmonic_basis().unwrap();
        // analytic harmonic field decomposes into a pure harmonic part
        let n = g.nodes();
        let mut v = TangentField::zeros(n);
        for i in 0..n {
            v.c1[i] = c(1.0 / g.h1[i], 0.0);
        }
        let (gp, rp, h) = g.hodge_decompose(&v, &basis).unwrap();
        assert!(g.norm_tangent(&gp) < 1e-8, "{}", g.norm_tangent(&gp));
        assert!(g.norm_tangent(&rp) < 1e-8, "{}", g.norm_tangent(&rp));
        let mut diff = TangentField::zeros(n);
        for i in 0..n {
            diff.c1[i] = h.c1[i] - v.c1[i];
            diff.c2[i] = h.c2[i] - v.c2[i];
        }
        assert!(g.norm_tangent(&diff) < 1e-8, "{}", g.norm_tangent(&diff));
        // random field: reconstruction and Pythagoras
        let mut v = random_tangent(&g, 77);
        for i in 0..n {
            v.c1[i] += 0.3 * basis[0].c1[i] - 0.1 * basis[1].c1[i];
            v.c2[i] += 0.3 * basis[0].c2[i] - 0.1 * basis[1].c2[i];
        }
        let (gp, rp, h) = g.hodge_decompose(&v, &basis).unwrap();
        let mut rec = TangentField::zeros(n);
        for i in 0..n {
            rec.c1[i] = gp.c1[i] + rp.c1[i] + h.c1[i] - v.c1[i];
            rec.c2[i] = gp.c2[i] + rp.c2[i] + h.c2[i] - v.c2[i];
        }
        assert!(g.norm_tangent(&rec) < 1e-8 * (1.0 + g.norm_tangent(&v)));
        let total = g.norm_tangent(&v).powi(2);
        let parts = g.norm_tangent(&gp).powi(2)
            + g.norm_tangent(&rp).powi(2)
            + g.norm_tangent(&h).powi(2);
        assert!((total - parts).abs() < 1e-8 * (1.0 + total), "{total} vs {parts}");
        // parts pairwise orthogonal
        assert!(g.dot_tangent(&gp, &rp).norm() < 1e-9 * (1.0 + total));
        assert!(g.dot_tangent(&gp, &h).norm() < 1e-9 * (1.0 + total));
        assert!(g.dot_tangent(&rp, &h).norm() < 1e-9 * (1.0 + total));
    }

    #[test]
    fn mean_zero_projection_properties() {
        let g = torus_grid();
        let f = g.scalar_from_fn(|_, _, _| c(3.0, -2.0));
        let p = g.mean_zero_project(&f).unwrap();
        assert!(g.norm_scalar(&p) < 1e-12);
        let f = random_scalar(&g, 55);
        let p1 = g.mean_zero_project(&f).unwrap();
        let p2 = g.mean_zero_project(&p1).unwrap();
        for i in 0..g.nodes() {
            assert!((p1.vals[i] - p2.vals[i]).norm() < 1e-14);
        }
        // sphere: Y_l^m with l >= 1 is already mean zero
        let s = sphere_grid();
        let y = s.scalar_from_fn(|_, u, v| sph_harm_y(3, 1, u, v).unwrap());
        assert!(s.is_mean_zero(&y).unwrap());
    }

    #[test]
    fn scalar_interpolation_matches_analytic() {
        let s = sphere_grid();
        let y = s.scalar_from_fn(|_, u, v| sph_harm_y(6, -3, u, v).unwrap());
        for &(u, v) in &[(0.3, 1.1), (1.9, 4.4), (2.7, 0.2)] {
            let got = s.eval_scalar(&y, u, v).unwrap();
            let want = sph_harm_y(6, -3, u, v).unwrap();
            assert!((got - want).norm() < 1e-11);
        }
        let t = torus_grid();
        let f = t.scalar_from_fn(|_, u, v| {
            (I * 3.0 * u).exp() * (I * -2.0 * v).exp() + c(0.5, 0.0) * (I * v).exp()
        });
        for &(u, v) in &[(0.7, 2.9), (4.1, 5.5)] {
            let got = t.eval_scalar(&f, u, v).unwrap();
            let want =
                (I * 3.0 * u).exp() * (I * -2.0 * v).exp() + c(0.5, 0.0) * (I * v).exp();
            assert!((got - want).norm() < 1e-11);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g = torus_grid();
        let f = ScalarField::zeros(g.nodes() - 1);
        assert!(matches!(g.surface_grad(&f), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn tangent_fields_orthogonal_to_normal() {
        let g = torus_grid();
        let v = random_tangent(&g, 13);
        for i in (0..g.nodes()).step_by(17) {
            let a = g.tangent_ambient(&v, i);
            let dot: Complex64 = (0..3).map(|c| a[c] * g.normal[i][c]).sum();
            assert!(dot.norm() < 1e-12);
        }
    }
}
