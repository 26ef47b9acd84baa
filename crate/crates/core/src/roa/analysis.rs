//! Sampling-based checks and geometry of certified level sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::poly::Polynomial;

use super::{Certificate, RobustModel, RoaError};

/// First `r > 0` with `v(r * dir) > gamma`; `f64::INFINITY` if none below `1e8`.
pub fn ray_radius(v: &Polynomial, gamma: f64, dir: &[f64]) -> f64 {
    if gamma <= 0.0 {
        return 0.0;
    }
    // v along the ray as a univariate polynomial in r.
    let deg = v.degree() as usize;
    let mut c = vec![0.0; deg + 1];
    for (m, coef) in v.terms() {
        c[m.degree() as usize] += coef * m.eval(dir);
    }
    let p = |r: f64| c.iter().rev().fold(0.0, |acc, &a| acc * r + a);
    let mut lo = 0.0;
    let mut r = 1e-8;
    while p(r) <= gamma {
        lo = r;
        r *= 1.05;
        if r > 1e8 {
            return f64::INFINITY;
        }
    }
    let mut hi = r;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if p(mid) <= gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn unit_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return u.into_iter().map(|a| a / norm).collect();
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Number of `(x, d)` pairs checked.
    pub samples: usize,
    pub violations: usize,
    /// Largest `dV/dt` seen; negative when every sample decreases.
    pub worst_vdot: f64,
    pub worst_point: Vec<f64>,
}

/// Samples states in the origin's component of `{V <= gamma}` (along random
/// rays, including points at the boundary) and disturbances inside the
/// confidence band (one uniform draw plus every corner), and checks `dV/dt < 0`.
pub fn validate_certificate(model: &RobustModel, cert: &Certificate, n_samples: usize, seed: u64) -> ValidationReport {
    let nx = model.nx();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grad = cert.v.gradient();
    let fcl = model.closed_loop(&cert.kappa);
    let nd = model.nd();
    let mut rep = ValidationReport {
        worst_vdot: f64::NEG_INFINITY,
        ..Default::default()
    };
    if cert.gamma <= 0.0 {
        rep.worst_vdot = 0.0;
        return rep;
    }
    for s in 0..n_samples {
        let u = unit_direction(&mut rng, nx);
        let rmax = ray_radius(&cert.v, cert.gamma, &u);
        let rmax = if rmax.is_finite() { rmax } else { 1e8 };
        // every tenth sample sits on the boundary
        let frac = if s % 10 == 0 {
            1.0
        } else {
            rng.gen::<f64>().powf(1.0 / nx as f64)
        };
        let x: Vec<f64> = u.iter().map(|a| a * rmax * frac).collect();
        if x.iter().map(|a| a * a).sum::<f64>().sqrt() <= 1e-6 {
            continue;
        }
        let gv = grad.eval(&x);
        let base: f64 = gv.iter().zip(fcl.eval(&x)).map(|(a, b)| a * b).sum();
        let bound = model.disturbance_bound(&x);
        let mut ds: Vec<Vec<f64>> = vec![bound.iter().map(|b| b * rng.gen_range(-1.0..=1.0)).collect()];
        for mask in 0..(1usize << nd) {
            ds.push(
                (0..nd)
                    .map(|k| if mask >> k & 1 == 1 { bound[k] } else { -bound[k] })
                    .collect(),
            );
        }
        for d in ds {
            let vdot = base + model.active.iter().zip(&d).map(|(&a, dk)| gv[a] * dk).sum::<f64>();
            rep.samples += 1;
            if vdot >= 0.0 {
                rep.violations += 1;
            }
            if vdot > rep.worst_vdot {
                rep.worst_vdot = vdot;
                rep.worst_point = x.iter().chain(&d).copied().collect();
            }
        }
    }
    rep
}

/// Monte Carlo volume of `{v <= gamma}` inside an axis-aligned box.
pub fn volume_estimate(v: &Polynomial, gamma: f64, bounds: &[(f64, f64)], n_samples: usize, seed: u64) -> Result<f64, RoaError> {
    if bounds.len() != v.nvars() {
        return Err(RoaError::Model("box dimension differs from V".into()));
    }
    if gamma <= 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vol: f64 = bounds.iter().map(|(a, b)| b - a).product();
    let mut inside = 0usize;
    let mut x = vec![0.0; bounds.len()];
    for _ in 0..n_samples {
        for (xi, (a, b)) in x.iter_mut().zip(bounds) {
            *xi = rng.gen_range(*a..*b);
        }
        if v.eval(&x) <= gamma {
            inside += 1;
        }
        // same point pushed onto a random face
        let k = rng.gen_range(0..bounds.len());
        let keep = x[k];
        x[k] = if rng.gen::<bool>() { bounds[k].0 } else { bounds[k].1 };
        if v.eval(&x) <= gamma {
            return Err(RoaError::LevelSetTouchesBox);
        }
        x[k] = keep;
    }
    Ok(vol * inside as f64 / n_samples as f64)
}

impl Certificate {
    pub fn volume_estimate(&self, bounds: &[(f64, f64)], n_samples: usize, seed: u64) -> Result<f64, RoaError> {
        volume_estimate(&self.v, self.gamma, bounds, n_samples, seed)
    }
}

/// Box around the origin's component of `{v <= gamma}`, from ray radii in
/// `n_dirs` random directions and the coordinate axes, inflated by `margin`.
pub fn level_set_box(v: &Polynomial, gamma: f64, n_dirs: usize, margin: f64, seed: u64) -> Vec<(f64, f64)> {
    let n = v.nvars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ext = vec![0.0f64; n];
    let mut visit = |u: &[f64]| {
        let r = ray_radius(v, gamma, u);
        for (e, ui) in ext.iter_mut().zip(u) {
            *e = e.max((r * ui).abs());
        }
    };
    for i in 0..n {
        for s in [-1.0, 1.0] {
            let mut u = vec![0.0; n];
            u[i] = s;
            visit(&u);
        }
    }
    for _ in 0..n_dirs {
        let u = unit_direction(&mut rng, n);
        visit(&u);
    }
    ext.into_iter().map(|e| (-e * margin, e * margin)).collect()
}

/// Minimizes `v` over the coordinates outside `plane`, with the plane
/// coordinates fixed; damped Newton from zero.
fn min_over_rest(v: &Polynomial, plane: (usize, usize), a: f64, b: f64, rest: &[usize], grad: &[Polynomial], hess: &[Vec<Polynomial>]) -> f64 {
    let n = v.nvars();
    let mut x = vec![0.0; n];
    x[plane.0] = a;
    x[plane.1] = b;
    if rest.is_empty() {
        return v.eval(&x);
    }
    let k = rest.len();
    let mut val = v.eval(&x);
    for _ in 0..50 {
        let g = nalgebra::DVector::from_iterator(k, grad.iter().map(|p| p.eval(&x)));
        if g.amax() < 1e-13 {
            break;
        }
        let h = nalgebra::DMatrix::from_fn(k, k, |i, j| hess[i][j].eval(&x));
        let step = match h.clone().cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -&g,
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let mut y = x.clone();
            for (i, &r) in rest.iter().enumerate() {
                y[r] += t * step[i];
            }
            let vy = v.eval(&y);
            if vy < val {
                x = y;
                val = vy;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    val
}

/// Boundary of the projection of `{v <= gamma}` onto the coordinate plane
/// `plane`, traced along `n_points` rays: each point is where
/// `min over the other coordinates of v` first exceeds `gamma`.
pub fn boundary_points(v: &Polynomial, gamma: f64, plane: (usize, usize), n_points: usize) -> Vec<(f64, f64)> {
    let n = v.nvars();
    let rest: Vec<usize> = (0..n).filter(|&i| i != plane.0 && i != plane.1).collect();
    let grad: Vec<Polynomial> = rest.iter().map(|&i| v.derivative(i)).collect();
    let hess: Vec<Vec<Polynomial>> = grad
        .iter()
        .map(|g| rest.iter().map(|&j| g.derivative(j)).collect())
        .collect();
    let h = |a: f64, b: f64| min_over_rest(v, plane, a, b, &rest, &grad, &hess);
    let mut out = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let th = 2.0 * std::f64::consts::PI * k as f64 / n_points as f64;
        let (c, s) = (th.cos(), th.sin());
        let mut dir = vec![0.0; n];
        dir[plane.0] = c;
        dir[plane.1] = s;
        // the slice radius is a lower bound for the projection radius
        let r0 = ray_radius(v, gamma, &dir);
        if !r0.is_finite() {
            continue;
        }
        let mut lo = r0;
        let mut hi = r0 * 1.02;
        while h(hi * c, hi * s) <= gamma {
            lo = hi;
            hi *= 1.02;
            if hi > 100.0 * r0.max(1e-12) {
                break;
            }
        }
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if h(mid * c, mid * s) <= gamma {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push((lo * c, lo * s));
    }
    out
}
