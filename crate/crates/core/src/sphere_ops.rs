//! Exact spectral realization of the Debye-source formulation on the unit
//! sphere: diagonal multipliers, sphere solves, the map to Debye potentials,
//! and analytic trace/field evaluation.
//!
//! Conventions. Densities r, q are expanded in orthonormal spherical
//! harmonics with coefficient tables a, b. The stream potentials are
//! psi = ik R0 r and psi_m = -ik R0 q, where R0 inverts the surface
//! Laplacian on mean-zero functions, so the tangential current is
//! j = sum alpha grad Y + beta (n x grad Y) with
//! alpha = -ik a / (l(l+1)), beta = ik b / (l(l+1)), and m = n x j.
//! Fields are represented as E = ik G_k[j] - grad G_k[r] - curl G_k[m],
//! H = curl G_k[j] + ik G_k[m] - grad G_k[q] with the outgoing kernel
//! g_k = e^{ik|x-y|}/(4 pi |x-y|).
//!
//! The d-trace returned by [`eval_traces_sphere`] is oriented so that the
//! diagonal relations c = m_n a, d = -m_n b hold; the pointwise normal
//! component of H is -d.

use crate::specfun::{
    jh_products, legendre_dtheta_table, sph_bessel_j_seq, sph_hankel_h1_seq, tri_index,
};
use crate::{Error, Result};
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Multiplier magnitude below which a solve reports a singular mode.
pub const SINGULAR_MULTIPLIER_TOL: f64 = 1e-13;

/// Default standoff below which off-surface evaluation is rejected.
pub const NEAR_SURFACE_EPS: f64 = 1e-8;

pub type CVec3 = [Complex64; 3];

/// Dense triangular table of spherical-harmonic coefficients,
/// indexed by (l, m) with 0 <= l <= lmax, |m| <= l.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoeffs {
    lmax: usize,
    data: Vec<Complex64>,
}

impl ShCoeffs {
    pub fn zeros(lmax: usize) -> Self {
        ShCoeffs {
            lmax,
            data: vec![ZERO; (lmax + 1) * (lmax + 1)],
        }
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    fn idx(&self, l: usize, m: i64) -> usize {
        debug_assert!(l <= self.lmax && m.unsigned_abs() as usize <= l);
        l * l + (l as i64 + m) as usize
    }

    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        self.data[self.idx(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, v: Complex64) {
        let i = self.idx(l, m);
        self.data[i] = v;
    }

    /// Iterate (l, m, value) over all stored modes.
    pub fn modes(&self) -> impl Iterator<Item = (usize, i64, Complex64)> + '_ {
        (0..=self.lmax).flat_map(move |l| {
            (-(l as i64)..=l as i64).map(move |m| (l, m, self.get(l, m)))
        })
    }

    /// True when the (0,0) mode vanishes (mean-zero density condition).
    pub fn is_mean_zero(&self) -> bool {
        self.data[0] == ZERO
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    fn require_mean_zero(&self) -> Result<()> {
        let v = self.data[0].norm();
        if v != 0.0 {
            return Err(Error::MeanZero(v));
        }
        Ok(())
    }
}

/// Debye-source solution on the unit sphere: coefficient tables of the
/// scalar densities r (a) and q (b) at wavenumber k.
#[derive(Debug, Clone)]
pub struct SphereDebyeSolution {
    pub k: Complex64,
    pub a: ShCoeffs,
    pub b: ShCoeffs,
}

/// Coefficients of the Debye potentials v, u in the outgoing expansion
/// sum c_{lm} (h_l(kr)/h_l(k)) Y_l^m, normalized to 1 on the surface.
#[derive(Debug, Clone)]
pub struct MieCoeffs {
    pub k: Complex64,
    pub v: ShCoeffs,
    pub u: ShCoeffs,
}

/// Exterior boundary traces of a sphere solution. c and d are the normal
/// traces satisfying c = m_n a and d = -m_n b; tan_grad and tan_star are the
/// tangential-E coefficients in the normalized vector harmonic basis
/// grad Y / sqrt(l(l+1)) and (n x grad Y) / sqrt(l(l+1)).
#[derive(Debug, Clone)]
pub struct SphereTraces {
    pub c: ShCoeffs,
    pub d: ShCoeffs,
    pub tan_grad: ShCoeffs,
    pub tan_star: ShCoeffs,
}

/// Diagonal multiplier of the normal-trace equations,
/// m_n(k, l) = k h_l(k) ((i + k) j_l(k) + i k j_l'(k)).
///
/// Evaluated through the Wronskian-substituted product form
/// m_n = 1 + ik j h + k^2 j h + i k^2 j h', which stays accurate near k = 0
/// and for degrees where the individual factors over/underflow.
pub fn multiplier_normal(k: Complex64, l: usize) -> Complex64 {
    assert!(l >= 1);
    if k == ZERO {
        return Complex64::new((l + 1) as f64 / (2 * l + 1) as f64, 0.0);
    }
    let p = jh_products(l, k).expect("k != 0");
    let jh = p.jh[l];
    Complex64::new(1.0, 0.0) + I * k * jh + k * k * jh + I * k * k * p.j_hp(l)
}

/// Diagonal multiplier of the tangential (hybrid) equation,
/// m_t(k, l) = (-k/(2l+1)) [ i l(l+1) j_l h_l - k j_l (k h_{l-1} - l h_l)
///   - i k^2 ((l+1) j_{l-1} h_{l-1} + l j_{l+1} h_{l+1}) / (2l+1) ],
/// all factors at argument k. k = 0 returns the limit -l(l+1)/(2l+1)^2.
pub fn multiplier_tangential(k: Complex64, l: usize) -> Complex64 {
    assert!(l >= 1);
    let lf = l as f64;
    let tl1 = 2.0 * lf + 1.0;
    if k == ZERO {
        return Complex64::new(-lf * (lf + 1.0) / (tl1 * tl1), 0.0);
    }
    let p = jh_products(l + 1, k).expect("k != 0");
    let term1 = I * lf * (lf + 1.0) * p.jh[l];
    let term2 = -k * (k * p.j_hm1[l] - lf * p.jh[l]);
    let term3 = -I * k * k * ((lf + 1.0) * p.jh[l - 1] + lf * p.jh[l + 1]) / tl1;
    -k / tl1 * (term1 + term2 + term3)
}

/// Solve the normal-trace system: a = c / m_n, b = -d / m_n, mode by mode.
pub fn solve_normal_sphere(k: Complex64, c: &ShCoeffs, d: &ShCoeffs) -> Result<SphereDebyeSolution> {
    if c.lmax() != d.lmax() {
        return Err(Error::GridMismatch("solve_normal_sphere: c and d tables differ".into()));
    }
    c.require_mean_zero()?;
    d.require_mean_zero()?;
    let lmax = c.lmax();
    let mut a = ShCoeffs::zeros(lmax);
    let mut b = ShCoeffs::zeros(lmax);
    for l in 1..=lmax {
        let mn = multiplier_normal(k, l);
        if mn.norm() < SINGULAR_MULTIPLIER_TOL {
            return Err(Error::SingularMultiplier { k, l, abs: mn.norm() });
        }
        for m in -(l as i64)..=l as i64 {
            a.set(l, m, c.get(l, m) / mn);
            b.set(l, m, -d.get(l, m) / mn);
        }
    }
    Ok(SphereDebyeSolution { k, a, b })
}

/// Solve the hybrid (tangential + normal-H) system:
/// m_t a = sqrt(l(l+1)) p / (2l+1), m_n b = sqrt(l(l+1)) q / (ik).
///
/// p is the normalized grad-basis coefficient of the incident tangential E;
/// q is oriented so that q = ik (n . H) / sqrt(l(l+1)), which equals minus
/// the normalized star-grad coefficient of the incident tangential E for a
/// Maxwell field.
pub fn solve_hybrid_sphere(k: Complex64, p: &ShCoeffs, q: &ShCoeffs) -> Result<SphereDebyeSolution> {
    if k == ZERO {
        return Err(Error::Domain("solve_hybrid_sphere: k = 0 uses the static path".into()));
    }
    if p.lmax() != q.lmax() {
        return Err(Error::GridMismatch("solve_hybrid_sphere: p and q tables differ".into()));
    }
    p.require_mean_zero()?;
    q.require_mean_zero()?;
    let lmax = p.lmax();
    let mut a = ShCoeffs::zeros(lmax);
    let mut b = ShCoeffs::zeros(lmax);
    for l in 1..=lmax {
        let lf = l as f64;
        let mt = multiplier_tangential(k, l);
        let mn = multiplier_normal(k, l);
        if mt.norm() < SINGULAR_MULTIPLIER_TOL || mn.norm() < SINGULAR_MULTIPLIER_TOL {
            let abs = mt.norm().min(mn.norm());
            return Err(Error::SingularMultiplier { k, l, abs });
        }
        let s = (lf * (lf + 1.0)).sqrt();
        for m in -(l as i64)..=l as i64 {
            a.set(l, m, s * p.get(l, m) / ((2.0 * lf + 1.0) * mt));
            b.set(l, m, s * q.get(l, m) / (I * k * mn));
        }
    }
    Ok(SphereDebyeSolution { k, a, b })
}

/// Bessel products used by the trace assembly, all at argument k.
struct TraceProducts {
    p: crate::specfun::JhProducts,
}

impl TraceProducts {
    fn new(lmax: usize, k: Complex64) -> Result<Self> {
        Ok(TraceProducts {
            p: jh_products(lmax + 1, k)?,
        })
    }
}

/// Assemble the exterior boundary traces of a sphere solution term by term
/// from the exact action of the layer potentials on vector harmonics.
pub fn eval_traces_sphere(sol: &SphereDebyeSolution) -> Result<SphereTraces> {
    let k = sol.k;
    if k == ZERO {
        return Err(Error::Domain("eval_traces_sphere: k = 0".into()));
    }
    let lmax = sol.a.lmax().max(sol.b.lmax());
    let tp = TraceProducts::new(lmax, k)?;
    let p = &tp.p;
    let mut c = ShCoeffs::zeros(lmax);
    let mut d = ShCoeffs::zeros(lmax);
    let mut tg = ShCoeffs::zeros(lmax);
    let mut ts = ShCoeffs::zeros(lmax);
    for l in 1..=lmax {
        let lf = l as f64;
        let ll1 = lf * (lf + 1.0);
        let tl1 = 2.0 * lf + 1.0;
        let s = ll1.sqrt();
        let jh = p.jh[l];
        let jh_m = p.jh[l - 1];
        let jh_p = p.jh[l + 1];
        let jhp = p.j_hp(l); // j_l h_l'
        let jhp_m = p.j_hp(l - 1);
        let jhp_p = p.j_hp(l + 1);
        for m in -(l as i64)..=l as i64 {
            let a = sol.a.get(l, m);
            let b = sol.b.get(l, m);
            let alpha = -I * k * a / ll1;
            let beta = I * k * b / ll1;
            // normal E: grad-part of j, single layer of r, curl of m
            let ce = I * k * alpha * (I * k * ll1 / tl1) * (jh_m - jh_p) - I * k * k * a * jhp
                + I * k * ll1 * jh * alpha;
            // normal H (raw orientation): curl of j, star-part of m, single layer of q
            let dh = -I * k * ll1 * jh * beta - I * k * beta * (I * k * ll1 / tl1) * (jh_m - jh_p)
                - I * k * k * b * jhp;
            // tangential E, grad Y coefficient
            let pe = I * k * alpha * (I * k / tl1) * ((lf + 1.0) * jh_m + lf * jh_p)
                - I * k * jh * a
                + alpha * I * k * (jh + k * jhp);
            // tangential E, (n x grad Y) coefficient
            let qe = I * k * beta * I * k * jh
                + beta
                    * (I * k / tl1)
                    * (lf * (lf + 2.0) * jh_p - (lf - 1.0) * (lf + 1.0) * jh_m
                        + k * ((lf + 1.0) * jhp_m + lf * jhp_p));
            c.set(l, m, ce);
            d.set(l, m, -dh);
            tg.set(l, m, pe * s);
            ts.set(l, m, qe * s);
        }
    }
    Ok(SphereTraces {
        c,
        d,
        tan_grad: tg,
        tan_star: ts,
    })
}

/// Map a Debye solution to the Debye potentials: v = c/(l(l+1)),
/// u = -d/(l(l+1)) in the surface-normalized outgoing expansion.
pub fn debye_to_mie(sol: &SphereDebyeSolution) -> Result<MieCoeffs> {
    let tr = eval_traces_sphere(sol)?;
    let lmax = tr.c.lmax();
    let mut v = ShCoeffs::zeros(lmax);
    let mut u = ShCoeffs::zeros(lmax);
    for (l, m, cv) in tr.c.modes() {
        if l == 0 {
            continue;
        }
        let ll1 = (l * (l + 1)) as f64;
        v.set(l, m, cv / ll1);
        u.set(l, m, -tr.d.get(l, m) / ll1);
    }
    Ok(MieCoeffs { k: sol.k, v, u })
}

/// Angular tables at one direction: normalized Legendre values plus
/// derivative, with poles nudged to keep the frame components finite.
pub(crate) struct Angular {
    p: Vec<f64>,
    dp: Vec<f64>,
    phi: f64,
    sin_t: f64,
}

impl Angular {
    pub(crate) fn new(lmax: usize, theta: f64, phi: f64) -> Self {
        let th = theta.clamp(1e-9, std::f64::consts::PI - 1e-9);
        let (p, dp) = legendre_dtheta_table(lmax, th);
        Angular {
            p,
            dp,
            phi,
            sin_t: th.sin(),
        }
    }

    fn phase(&self, m: i64) -> (f64, usize) {
        if m >= 0 {
            (1.0, m as usize)
        } else {
            (if m % 2 == 0 { 1.0 } else { -1.0 }, (-m) as usize)
        }
    }

    pub(crate) fn y(&self, l: usize, m: i64) -> Complex64 {
        let (s, ma) = self.phase(m);
        s * self.p[tri_index(l, ma)] * (I * (m as f64 * self.phi)).exp()
    }

    /// (theta, phi) frame components of grad Y_l^m on the unit sphere.
    pub(crate) fn grad(&self, l: usize, m: i64) -> [Complex64; 2] {
        let (s, ma) = self.phase(m);
        let e = (I * (m as f64 * self.phi)).exp();
        let dth = s * self.dp[tri_index(l, ma)] * e;
        let dph = I * (m as f64 / self.sin_t) * s * self.p[tri_index(l, ma)] * e;
        [dth, dph]
    }

    pub(crate) fn star(&self, l: usize, m: i64) -> [Complex64; 2] {
        let g = self.grad(l, m);
        [-g[1], g[0]]
    }
}

/// Spherical frame at a Cartesian point: radius, angles, unit vectors.
struct Frame {
    r: f64,
    theta: f64,
    phi: f64,
    er: [f64; 3],
    eth: [f64; 3],
    eph: [f64; 3],
}

impl Frame {
    fn at(x: [f64; 3]) -> Frame {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let theta = (x[2] / r).clamp(-1.0, 1.0).acos();
        let phi = x[1].atan2(x[0]);
        let (st, ct) = (theta.sin(), theta.cos());
        let (sp, cp) = (phi.sin(), phi.cos());
        Frame {
            r,
            theta,
            phi,
            er: [st * cp, st * sp, ct],
            eth: [ct * cp, ct * sp, -st],
            eph: [-sp, cp, 0.0],
        }
    }

    fn assemble(&self, radial: Complex64, tang: [Complex64; 2]) -> CVec3 {
        let mut out = [ZERO; 3];
        for i in 0..3 {
            out[i] = radial * self.er[i] + tang[0] * self.eth[i] + tang[1] * self.eph[i];
        }
        out
    }
}

/// Surface-normalized radial factors F_l(r) = f_l(kr)/f_l(k) and their
/// r-derivatives, f = h (outgoing) or f = j (regular).
struct RadialTable {
    f: Vec<Complex64>,
    df: Vec<Complex64>,
}

impl RadialTable {
    fn outgoing(lmax: usize, k: Complex64, r: f64) -> Result<Self> {
        let hr = sph_hankel_h1_seq(lmax + 1, k * r)?;
        let hk = sph_hankel_h1_seq(lmax + 1, k)?;
        let mut f = vec![ZERO; lmax + 1];
        let mut df = vec![ZERO; lmax + 1];
        for l in 0..=lmax {
            f[l] = hr[l] / hk[l];
            let hp = if l == 0 {
                -hr[1]
            } else {
                hr[l - 1] - (l + 1) as f64 / (k * r) * hr[l]
            };
            df[l] = k * hp / hk[l];
        }
        Ok(RadialTable { f, df })
    }

    fn regular(lmax: usize, k: Complex64, r: f64) -> Self {
        let jr = sph_bessel_j_seq(lmax + 1, k * r);
        let jk = sph_bessel_j_seq(lmax + 1, k);
        let mut f = vec![ZERO; lmax + 1];
        let mut df = vec![ZERO; lmax + 1];
        for l in 0..=lmax {
            f[l] = jr[l] / jk[l];
            let jp = if l == 0 {
                -jr[1]
            } else {
                jr[l - 1] - (l + 1) as f64 / (k * r) * jr[l]
            };
            df[l] = k * jp / jk[l];
        }
        RadialTable { f, df }
    }
}

fn eval_field_from_potentials(
    mie: &MieCoeffs,
    rad: &RadialTable,
    x: [f64; 3],
) -> (CVec3, CVec3) {
    let fr = Frame::at(x);
    let lmax = mie.v.lmax().max(mie.u.lmax());
    let ang = Angular::new(lmax, fr.theta, fr.phi);
    let k = mie.k;
    let r = fr.r;
    let mut e_r = ZERO;
    let mut e_t = [ZERO; 2];
    let mut h_r = ZERO;
    let mut h_t = [ZERO; 2];
    for (l, m, v) in mie.v.modes() {
        if l == 0 {
            continue;
        }
        let u = mie.u.get(l, m);
        if v == ZERO && u == ZERO {
            continue;
        }
        let ll1 = (l * (l + 1)) as f64;
        let f = rad.f[l];
        let g = (f + r * rad.df[l]) / r; // (d/dr)(r F)/r
        let y = ang.y(l, m);
        let gr = ang.grad(l, m);
        let st = ang.star(l, m);
        // E = curl curl (x v~) + ik curl (x u~), H = curl curl (x u~) - ik curl (x v~)
        e_r += v * ll1 * (f / r) * y;
        h_r += u * ll1 * (f / r) * y;
        for i in 0..2 {
            e_t[i] += v * g * gr[i] - I * k * u * f * st[i];
            h_t[i] += u * g * gr[i] + I * k * v * f * st[i];
        }
    }
    (fr.assemble(e_r, e_t), fr.assemble(h_r, h_t))
}

/// Evaluate the outgoing field of Debye potentials at |x| > 1.
pub fn eval_field_mie(mie: &MieCoeffs, x: [f64; 3], eps: f64) -> Result<(CVec3, CVec3)> {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r < 1.0 + eps {
        return Err(Error::NearSurface {
            dist: r - 1.0,
            cutoff: eps,
        });
    }
    let lmax = mie.v.lmax().max(mie.u.lmax());
    let rad = RadialTable::outgoing(lmax, mie.k, r)?;
    Ok(eval_field_from_potentials(mie, &rad, x))
}

/// Evaluate the exterior field of a Debye solution (Mie route).
pub fn eval_field_sphere(sol: &SphereDebyeSolution, x: [f64; 3]) -> Result<(CVec3, CVec3)> {
    let mie = debye_to_mie(sol)?;
    eval_field_mie(&mie, x, NEAR_SURFACE_EPS)
}

/// Evaluate a regular (incident-type) field from surface-normalized Debye
/// potentials, valid at any radius. Used to synthesize incident data.
pub fn eval_incident_mie(mie: &MieCoeffs, x: [f64; 3]) -> (CVec3, CVec3) {
    let lmax = mie.v.lmax().max(mie.u.lmax());
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let rad = RadialTable::regular(lmax, mie.k, r);
    eval_field_from_potentials(mie, &rad, x)
}

/// Direct potential-route evaluation of the exterior field,
/// E = ik G_k[j] - grad G_k[r] - curl G_k[m],
/// H = curl G_k[j] + ik G_k[m] - grad G_k[q],
/// using the exact off-surface action of G_k on vector harmonics.
/// Retained as an independent cross-check of [`eval_field_sphere`].
pub fn eval_field_potentials(sol: &SphereDebyeSolution, x: [f64; 3]) -> Result<(CVec3, CVec3)> {
    let k = sol.k;
    if k == ZERO {
        return Err(Error::Domain("eval_field_potentials: k = 0".into()));
    }
    let fr = Frame::at(x);
    let r = fr.r;
    if r < 1.0 + NEAR_SURFACE_EPS {
        return Err(Error::NearSurface {
            dist: r - 1.0,
            cutoff: NEAR_SURFACE_EPS,
        });
    }
    let lmax = sol.a.lmax().max(sol.b.lmax());
    let jk = sph_bessel_j_seq(lmax + 2, k);
    let hr = sph_hankel_h1_seq(lmax + 2, k * r)?;
    // h_n'(kr)
    let mut hpr = vec![ZERO; lmax + 2];
    hpr[0] = -hr[1];
    for n in 1..=lmax + 1 {
        hpr[n] = hr[n - 1] - (n + 1) as f64 / (k * r) * hr[n];
    }
    let ang = Angular::new(lmax, fr.theta, fr.phi);
    let mut e_r = ZERO;
    let mut e_t = [ZERO; 2];
    let mut h_r = ZERO;
    let mut h_t = [ZERO; 2];
    for l in 1..=lmax {
        let lf = l as f64;
        let ll1 = lf * (lf + 1.0);
        let tl1 = 2.0 * lf + 1.0;
        // radial profiles shared by every m at this degree
        let s_pot = I * k * jk[l] * hr[l]; // single layer of Y
        let s_pot_d = I * k * k * jk[l] * hpr[l];
        let c1 = ((lf + 1.0) * jk[l - 1] * hr[l - 1] + lf * jk[l + 1] * hr[l + 1]) / tl1;
        let c1d = k * ((lf + 1.0) * jk[l - 1] * hpr[l - 1] + lf * jk[l + 1] * hpr[l + 1]) / tl1;
        let c2 = lf * jk[l + 1] * hr[l + 1];
        // G_k on a grad-type 1-form: A Y er + B grad, and its curl coefficient
        let ga = I * k * (lf * c1 - c2);
        let gb = I * k * c1;
        let curl_grad = I * k * c1d + (gb - ga) / r; // star coefficient
        // G_k on a star-type 1-form: T star, and its curl (poloidal)
        let t = s_pot;
        let td = s_pot_d;
        let curl_star_r = -ll1 * t / r;
        let curl_star_g = -(t / r + td);
        for m in -(l as i64)..=l as i64 {
            let a = sol.a.get(l, m);
            let b = sol.b.get(l, m);
            if a == ZERO && b == ZERO {
                continue;
            }
            let alpha = -I * k * a / ll1;
            let beta = I * k * b / ll1;
            let y = ang.y(l, m);
            let gr = ang.grad(l, m);
            let st = ang.star(l, m);
            // E = ik G_k[j] - grad G_k[r] - curl G_k[m], m = alpha star - beta grad
            let er_c = I * k * alpha * ga - a * s_pot_d - alpha * curl_star_r;
            let eg_c = I * k * alpha * gb - a * s_pot / r - alpha * curl_star_g;
            let es_c = I * k * beta * t + beta * curl_grad;
            // H = curl G_k[j] + ik G_k[m] - grad G_k[q]
            let hr_c = beta * curl_star_r - I * k * beta * ga - b * s_pot_d;
            let hg_c = beta * curl_star_g - I * k * beta * gb - b * s_pot / r;
            let hs_c = alpha * curl_grad + I * k * alpha * t;
            e_r += er_c * y;
            h_r += hr_c * y;
            for i in 0..2 {
                e_t[i] += eg_c * gr[i] + es_c * st[i];
                h_t[i] += hg_c * gr[i] + hs_c * st[i];
            }
        }
    }
    Ok((fr.assemble(e_r, e_t), fr.assemble(h_r, h_t)))
}

/// Project the tangential part of a caller-supplied field onto the
/// normalized vector harmonic basis by Gauss-Legendre x uniform quadrature.
/// Returns (grad coefficients, star-grad coefficients).
pub fn project_tangential<F>(lmax: usize, field: F) -> (ShCoeffs, ShCoeffs)
where
    F: Fn([f64; 3]) -> CVec3,
{
    let nth = lmax + 2;
    let nph = 2 * lmax + 3;
    let (xs, ws) = crate::linalg::gauss_legendre(nth);
    let mut p = ShCoeffs::zeros(lmax);
    let mut q = ShCoeffs::zeros(lmax);
    for (xc, w) in xs.iter().zip(&ws) {
        let theta = xc.acos();
        for jp in 0..nph {
            let phi = 2.0 * std::f64::consts::PI * jp as f64 / nph as f64;
            let fr = Frame::at([theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]);
            let v = field(fr.er);
            // tangential components in the (theta, phi) frame
            let vth: Complex64 = (0..3).map(|i| v[i] * fr.eth[i]).sum();
            let vph: Complex64 = (0..3).map(|i| v[i] * fr.eph[i]).sum();
            let ang = Angular::new(lmax, theta, phi);
            let wq = w * 2.0 * std::f64::consts::PI / nph as f64;
            for l in 1..=lmax {
                let s = ((l * (l + 1)) as f64).sqrt();
                for m in -(l as i64)..=l as i64 {
                    let g = ang.grad(l, m);
                    let st = ang.star(l, m);
                    let pg = (vth * g[0].conj() + vph * g[1].conj()) / s;
                    let ps = (vth * st[0].conj() + vph * st[1].conj()) / s;
                    p.set(l, m, p.get(l, m) + wq * pg);
                    q.set(l, m, q.get(l, m) + wq * ps);
                }
            }
        }
    }
    (p, q)
}
