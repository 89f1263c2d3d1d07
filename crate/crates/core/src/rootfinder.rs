//! Zero localization for analytic functions of a complex wavenumber:
//! winding-number counts over rectangles, subdivide-and-Newton root finding,
//! and scans of the sphere multiplier families.

use crate::sphere_ops::multiplier_normal;
use crate::{Error, Result};
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Rectangular search region in the complex k-plane. A punctured disc
/// around k = 0 is excluded: contours are deformed around it and zeros
/// inside it are not sought.
#[derive(Debug, Clone)]
pub struct SearchRegion {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub max_depth: usize,
    pub newton_tol: f64,
    pub puncture_radius: f64,
}

impl SearchRegion {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        if !(re_min < re_max && im_min < im_max) {
            return Err(Error::Config(format!(
                "degenerate search region [{re_min},{re_max}]x[{im_min},{im_max}]"
            )));
        }
        Ok(SearchRegion {
            re_min,
            re_max,
            im_min,
            im_max,
            max_depth: 42,
            newton_tol: 1e-13,
            puncture_radius: 0.05,
        })
    }

    fn center(&self) -> Complex64 {
        Complex64::new(
            0.5 * (self.re_min + self.re_max),
            0.5 * (self.im_min + self.im_max),
        )
    }

    fn diam(&self) -> f64 {
        ((self.re_max - self.re_min).powi(2) + (self.im_max - self.im_min).powi(2)).sqrt()
    }

    fn contains(&self, z: Complex64, slack: f64) -> bool {
        z.re >= self.re_min - slack
            && z.re <= self.re_max + slack
            && z.im >= self.im_min - slack
            && z.im <= self.im_max + slack
    }
}

/// Derivative by Richardson-extrapolated central differences,
/// step 1e-6 (1 + |z|).
pub fn derivative<F: Fn(Complex64) -> Complex64>(f: &F, z: Complex64) -> Complex64 {
    let h = 1e-6 * (1.0 + z.norm());
    let d = |h: f64| (f(z + h) - f(z - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Push contour points out of the punctured disc around the origin.
fn deform(z: Complex64, punct: f64) -> Complex64 {
    let r = z.norm();
    if r >= punct {
        z
    } else if r == 0.0 {
        Complex64::new(punct, 0.0)
    } else {
        z * (punct / r)
    }
}

/// Contour integral of f'/f over the rectangle boundary, divided by 2 pi i.
/// Adaptive Simpson quadrature of the log-derivative, with the derivative by
/// Richardson central differences; a zero near the contour blows the local
/// integrand up, forcing refinement there instead of aliasing past it.
/// Errors when a contour point sits too close to a zero even after jittering.
fn winding<F: Fn(Complex64) -> Complex64>(f: &F, region: &SearchRegion) -> Result<i64> {
    let mut rng: u64 = 0x243f6a8885a308d3;
    let mut rnd = move || {
        rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let base = [
        Complex64::new(region.re_min, region.im_min),
        Complex64::new(region.re_max, region.im_min),
        Complex64::new(region.re_max, region.im_max),
        Complex64::new(region.re_min, region.im_max),
    ];
    let tiny = 1e-12;
    'attempt: for attempt in 0..5 {
        // jittered corners; the first attempt uses the exact rectangle
        let jit = attempt as f64 * 3e-6 * region.diam();
        let corners: Vec<Complex64> = base
            .iter()
            .map(|c| c + Complex64::new(rnd() * jit, rnd() * jit))
            .collect();
        // log-derivative along the (deformed) contour
        let g = |z: Complex64| -> Option<Complex64> {
            let zd = deform(z, region.puncture_radius);
            let fz = f(zd);
            if !fz.is_finite() || fz.norm() < tiny {
                return None;
            }
            let df = derivative(f, zd);
            if !df.is_finite() {
                return None;
            }
            Some(df / fz)
        };
        let mut total = ZERO;
        for e in 0..4 {
            let a = corners[e];
            let b = corners[(e + 1) % 4];
            // adaptive Simpson over 8 base panels per edge
            let tol = 0.01;
            let nseg = 8;
            for s in 0..nseg {
                let sa = a + (b - a) * (s as f64 / nseg as f64);
                let sb = a + (b - a) * ((s + 1) as f64 / nseg as f64);
                let sm = 0.5 * (sa + sb);
                let (ga, gm, gb) = match (g(sa), g(sm), g(sb)) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => continue 'attempt,
                };
                let coarse = (sb - sa) / 6.0 * (ga + 4.0 * gm + gb);
                // (t0, t1, g0, g1, gm, whole, depth)
                let mut stack = vec![(sa, sb, ga, gb, gm, coarse, 0usize)];
                while let Some((t0, t1, g0, g1, gmid, whole, depth)) = stack.pop() {
                    let tm = 0.5 * (t0 + t1);
                    let tl = 0.5 * (t0 + tm);
                    let tr = 0.5 * (tm + t1);
                    let (gl, grr) = match (g(tl), g(tr)) {
                        (Some(x), Some(y)) => (x, y),
                        _ => continue 'attempt,
                    };
                    let left = (tm - t0) / 6.0 * (g0 + 4.0 * gl + gmid);
                    let right = (t1 - tm) / 6.0 * (gmid + 4.0 * grr + g1);
                    let refined = left + right;
                    if (refined - whole).norm() < 15.0 * tol * (-(depth as f64)).exp2() || depth >= 40 {
                        if depth >= 40 {
                            continue 'attempt; // zero effectively on the contour
                        }
                        total += refined + (refined - whole) / 15.0;
                    } else {
                        stack.push((t0, tm, g0, gmid, gl, left, depth + 1));
                        stack.push((tm, t1, gmid, g1, grr, right, depth + 1));
                    }
                }
            }
        }
        let w = total / Complex64::new(0.0, 2.0 * std::f64::consts::PI);
        if (w - w.re.round()).norm() < 0.25 {
            return Ok(w.re.round() as i64);
        }
    }
    Err(Error::RootFinding(format!(
        "contour too close to a zero in [{},{}]x[{},{}]",
        region.re_min, region.re_max, region.im_min, region.im_max
    )))
}

/// Number of zeros of f inside the region (argument principle).
pub fn count_zeros<F: Fn(Complex64) -> Complex64>(f: &F, region: &SearchRegion) -> Result<usize> {
    let w = winding(f, region)?;
    if w < 0 {
        return Err(Error::RootFinding(format!(
            "negative winding number {w}: function is not analytic on the region"
        )));
    }
    Ok(w as usize)
}

fn newton<F: Fn(Complex64) -> Complex64>(
    f: &F,
    start: Complex64,
    tol: f64,
) -> Option<Complex64> {
    let mut z = start;
    // track the smallest residual seen: when f is built from large cancelling
    // terms its roundoff floor can exceed the step tolerance, so the iteration
    // stagnates in a tiny noise ball around the root instead of contracting
    let mut best: Option<(Complex64, f64)> = None;
    for _ in 0..60 {
        if (z - start).norm() > 10.0 * (1.0 + start.norm()) {
            break; // diverged far outside the search box
        }
        let fz = f(z);
        let dz = derivative(f, z);
        if dz.norm() == 0.0 || !fz.is_finite() || !dz.is_finite() {
            break;
        }
        if best.map_or(true, |(_, b)| fz.norm() < b) {
            best = Some((z, fz.norm()));
        }
        let step = fz / dz;
        z -= step;
        if step.norm() < tol * (1.0 + z.norm()) {
            break;
        }
    }
    let (zb, fb) = best?;
    let dz = derivative(f, zb);
    if fb < 1e-10 * dz.norm().max(1.0) {
        Some(zb)
    } else {
        None
    }
}

fn subdivide(r: &SearchRegion, fx: f64, fy: f64) -> [SearchRegion; 4] {
    let xm = r.re_min + fx * (r.re_max - r.re_min);
    let ym = r.im_min + fy * (r.im_max - r.im_min);
    let mk = |a: f64, b: f64, c: f64, d: f64| SearchRegion {
        re_min: a,
        re_max: b,
        im_min: c,
        im_max: d,
        ..r.clone()
    };
    [
        mk(r.re_min, xm, r.im_min, ym),
        mk(xm, r.re_max, r.im_min, ym),
        mk(r.re_min, xm, ym, r.im_max),
        mk(xm, r.re_max, ym, r.im_max),
    ]
}

fn find_rec<F: Fn(Complex64) -> Complex64>(
    f: &F,
    region: &SearchRegion,
    count: usize,
    depth: usize,
    roots: &mut Vec<Complex64>,
    unresolved: &mut Vec<SearchRegion>,
) {
    let n = count;
    if n == 0 {
        return;
    }
    if n == 1 {
        // Newton from the center and a few offsets inside the box
        let cm = region.center();
        let dx = 0.25 * (region.re_max - region.re_min);
        let dy = 0.25 * (region.im_max - region.im_min);
        let starts = [
            cm,
            cm + Complex64::new(dx, dy),
            cm + Complex64::new(-dx, dy),
            cm + Complex64::new(dx, -dy),
            cm + Complex64::new(-dx, -dy),
        ];
        for s in starts {
            if let Some(r) = newton(f, s, region.newton_tol) {
                if region.contains(r, 1e-7 * (1.0 + region.diam())) {
                    roots.push(r);
                    return;
                }
            }
        }
    }
    if depth >= region.max_depth || region.diam() < 1e-9 {
        unresolved.push(region.clone());
        return;
    }
    // Split at the midpoint, shifting the split lines when a zero sits on
    // or near them (child contour fails, or child counts disagree with the
    // parent count).
    let fractions = [
        (0.5, 0.5),
        (0.55, 0.45),
        (0.45, 0.55),
        (0.5, 0.625),
        (0.625, 0.5),
        (0.375, 0.4),
        (0.6, 0.6),
    ];
    for (fx, fy) in fractions {
        let subs = subdivide(region, fx, fy);
        let counts: Option<Vec<usize>> =
            subs.iter().map(|s| count_zeros(f, s).ok()).collect();
        if let Some(counts) = counts {
            if counts.iter().sum::<usize>() == n {
                for (sub, c) in subs.iter().zip(counts) {
                    find_rec(f, sub, c, depth + 1, roots, unresolved);
                }
                return;
            }
        }
    }
    unresolved.push(region.clone());
}

/// Locate all zeros of f inside the region. Each returned root r satisfies
/// |f(r)| < 1e-10 max(1, |f'(r)|); roots are deduplicated at distance 1e-8.
pub fn find_roots<F: Fn(Complex64) -> Complex64>(
    f: &F,
    region: &SearchRegion,
) -> Result<Vec<Complex64>> {
    let mut roots = Vec::new();
    let mut unresolved = Vec::new();
    let n = count_zeros(f, region)?;
    find_rec(f, region, n, 0, &mut roots, &mut unresolved);
    if !unresolved.is_empty() {
        let boxes: Vec<String> = unresolved
            .iter()
            .map(|r| format!("[{},{}]x[{},{}]", r.re_min, r.re_max, r.im_min, r.im_max))
            .collect();
        return Err(Error::RootFinding(format!(
            "unresolved sub-boxes: {}",
            boxes.join(", ")
        )));
    }
    // dedupe at distance 1e-8 (boxes sharing a boundary zero can both find it)
    let mut out: Vec<Complex64> = Vec::new();
    for r in roots {
        if out.iter().all(|p| (p - r).norm() > 1e-8) {
            out.push(r);
        }
    }
    out.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    Ok(out)
}

/// The root of m_n(., l) with smallest modulus among those with Re k > 0,
/// found by an expanding-box search in the lower half plane.
pub fn smallest_root_positive_re(l: usize) -> Result<Complex64> {
    if l == 0 || l > 1000 {
        return Err(Error::Domain(format!("smallest_root_positive_re: l = {l}")));
    }
    // m_n factors as p_l(k) e^{ik} ((k - il) j_l + ik j_{l-1}) / k^l with p_l
    // the Hankel polynomial; the monotone root branch lives in the regular
    // factor, so search that alone (its roots are still roots of m_n)
    let f = move |k: Complex64| {
        let lf = l as f64;
        let jl = crate::specfun::sph_bessel_j(l, k);
        let jm = crate::specfun::sph_bessel_j(l - 1, k);
        let num = (k - Complex64::new(0.0, lf)) * jl + Complex64::new(0.0, 1.0) * k * jm;
        num / k.powf(lf)
    };
    // the regular-factor roots march right along a shallow log curve, so a
    // strip of bounded depth always holds the smallest-modulus one
    let depth = 6.0f64;
    let mut re_max = 1.3 * l as f64 + 8.0;
    for _ in 0..12 {
        let region = SearchRegion::new(1e-3, re_max, -depth, -1e-9)?;
        let roots = match find_roots(&f, &region) {
            Ok(r) => r,
            // the contour can graze a zero for unlucky widths; nudge it
            Err(Error::RootFinding(_)) => {
                re_max += 0.379;
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some(best) = roots
            .iter()
            .filter(|r| r.re > 0.0)
            .min_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        {
            // the strip covers every root of modulus below re_max
            if best.norm() <= re_max {
                return Ok(*best);
            }
        }
        re_max *= 1.5;
    }
    Err(Error::RootFinding(format!(
        "no root of m_n(., {l}) with positive real part found"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn linear_function_count() {
        let f = |z: Complex64| z - c(1.0, -1.0);
        let region = SearchRegion::new(0.0, 2.0, -2.0, 0.0).unwrap();
        assert_eq!(count_zeros(&f, &region).unwrap(), 1);
    }

    #[test]
    fn quadratic_count_and_roots() {
        let z0 = c(0.4, -0.7);
        let z1 = c(1.3, 0.6);
        let f = move |z: Complex64| (z - z0) * (z - z1);
        let region = SearchRegion::new(-1.0, 2.0, -1.5, 1.5).unwrap();
        assert_eq!(count_zeros(&f, &region).unwrap(), 2);
        let roots = find_roots(&f, &region).unwrap();
        assert_eq!(roots.len(), 2);
        for r in &roots {
            let d = (r - z0).norm().min((r - z1).norm());
            assert!(d < 1e-10, "{r}");
        }
    }

    #[test]
    fn known_quartic_roots_recovered() {
        // roots at +-1 +- i
        let f = |z: Complex64| (z * z - 2.0 * z + 2.0) * (z * z + 2.0 * z + 2.0);
        let region = SearchRegion::new(-2.5, 2.5, -2.5, 2.5).unwrap();
        let roots = find_roots(&f, &region).unwrap();
        assert_eq!(roots.len(), 4);
        for want in [c(1.0, 1.0), c(1.0, -1.0), c(-1.0, 1.0), c(-1.0, -1.0)] {
            assert!(roots.iter().any(|r| (r - want).norm() < 1e-10));
        }
    }

    #[test]
    fn multiplier_normal_no_zero_in_upper_half() {
        let f = |k: Complex64| multiplier_normal(k, 1);
        let region = SearchRegion::new(0.0, 3.0, 0.0, 3.0).unwrap();
        assert_eq!(count_zeros(&f, &region).unwrap(), 0);
    }

    #[test]
    fn count_matches_find_on_random_regions() {
        let zeros = [
            c(0.3, -0.4),
            c(-0.8, 0.2),
            c(1.1, 0.9),
            c(-0.5, -1.2),
            c(0.0, 0.7),
        ];
        let f = move |z: Complex64| zeros.iter().map(|w| z - w).product::<Complex64>();
        let mut seed = 5u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..20 {
            let x0 = 3.0 * rnd();
            let y0 = 3.0 * rnd();
            let region = SearchRegion::new(x0, x0 + 1.0 + rnd().abs(), y0, y0 + 1.0 + rnd().abs());
            let region = match region {
                Ok(r) => r,
                Err(_) => continue,
            };
            let n = count_zeros(&f, &region).unwrap();
            let roots = find_roots(&f, &region).unwrap();
            assert_eq!(n, roots.len());
        }
    }

    #[test]
    fn multiplier_roots_lower_half_and_log_trend() {
        // first 50 roots of m_n(., 1): all in the lower half plane, with
        // Im k ~ -1/2 log(Re k) + const (strong linear correlation); the
        // descent forces the box down to Im = -8 to hold 50 of them
        let f = |k: Complex64| multiplier_normal(k, 1);
        let region = SearchRegion::new(0.05, 200.0, -8.0, -1e-6).unwrap();
        let mut roots = find_roots(&f, &region).unwrap();
        roots.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert!(roots.len() >= 50, "found {}", roots.len());
        let take: Vec<_> = roots.iter().take(50).collect();
        for r in &take {
            assert!(r.im < 0.0);
            // reflection symmetry: -conj(r) is also a root
            assert!(multiplier_normal(-r.conj(), 1).norm() < 1e-9);
        }
        // correlation of Im k against log Re k
        let xs: Vec<f64> = take.iter().map(|r| r.re.ln()).collect();
        let ys: Vec<f64> = take.iter().map(|r| r.im).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let rho = cov / (vx * vy).sqrt();
        assert!(rho.abs() > 0.9, "correlation {rho}");
    }

    #[test]
    fn hankel_polynomial_odd_degree_axis_root() {
        // the polynomial factor of h_7 has exactly one root on the negative
        // imaginary axis
        let l = 7usize;
        let f = move |z: Complex64| {
            let mut q0 = c(0.0, -1.0);
            let mut q1 = -(z + c(0.0, 1.0));
            for n in 1..l {
                let q2 = (2 * n + 1) as f64 * q1 - z * z * q0;
                q0 = q1;
                q1 = q2;
            }
            q1
        };
        let region = SearchRegion::new(-9.0, 9.0, -9.0, 0.5).unwrap();
        let roots = find_roots(&f, &region).unwrap();
        assert_eq!(roots.len(), l);
        let axis: Vec<_> = roots.iter().filter(|r| r.re.abs() < 1e-9).collect();
        assert_eq!(axis.len(), 1);
        assert!(axis[0].im < 0.0);
    }

    #[test]
    fn no_multiplier_zeros_in_closed_upper_strip() {
        for &l in &[1usize, 5, 10] {
            let fams: [(Box<dyn Fn(Complex64) -> Complex64>, &str); 2] = [
                (Box::new(move |k| multiplier_normal(k, l)), "m_n"),
                (
                    Box::new(move |k| crate::sphere_ops::multiplier_tangential(k, l)),
                    "m_t",
                ),
            ];
            for (f, name) in fams {
                let region = SearchRegion::new(0.05, 30.0, 0.0, 5.0).unwrap();
                assert_eq!(count_zeros(&f, &region).unwrap(), 0, "{name} l={l}");
            }
        }
    }

    #[test]
    #[ignore]
    fn dbg_root_structure() {
        for l in 1..=4usize {
            let f = move |k: Complex64| multiplier_normal(k, l);
            let region = SearchRegion::new(1e-3, 10.0, -10.0, -1e-9).unwrap();
            let mut roots = find_roots(&f, &region).unwrap();
            roots.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
            println!("l={l}: {roots:?}");
        }
    }

    #[test]
    fn smallest_positive_re_roots_monotone() {
        let mut prev = -1.0f64;
        for l in 1..=10usize {
            let r = smallest_root_positive_re(l).unwrap();
            assert!(r.im < 0.0, "l={l}: {r}");
            assert!(multiplier_normal(r, l).norm() < 1e-9);
            assert!(r.re >= prev - 1e-9, "l={l}: {} < {prev}", r.re);
            prev = r.re;
        }
    }
}
