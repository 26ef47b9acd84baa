#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Constraints = [(Vec<f64>, f64); 2];

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn qp_objective(g: &[f64], lambda: f64, u: &[f64]) -> f64 {
    dot(g, u) - lambda * dot(u, u)
}

fn feasible(cons: &Constraints, u: &[f64]) -> bool {
    cons.iter().all(|(a, b)| dot(a, u) <= *b)
}

/// Random exploration program in `nu` inputs, with two constraints that share a
/// normal (the Lyapunov decrease at both disturbance extremes) or not.
pub fn random_qp(rng: &mut ChaCha8Rng, nu: usize) -> (Vec<f64>, f64, Constraints) {
    let g: Vec<f64> = (0..nu).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let lambda = rng.gen_range(0.2..2.0);
    let a1: Vec<f64> = (0..nu).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a2 = if rng.gen_bool(0.5) {
        a1.clone()
    } else {
        (0..nu).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let b1 = rng.gen_range(-0.5..1.0);
    let b2 = rng.gen_range(-0.5..1.0);
    (g, lambda, [(a1, b1), (a2, b2)])
}

/// Box half-width that holds the unconstrained optimum and, for each
/// constraint, the closest point of its boundary to the origin.
pub fn search_radius(ustar: &[f64], cons: &Constraints) -> f64 {
    let far = cons
        .iter()
        .map(|(a, b)| b.abs() / dot(a, a).sqrt().max(1e-12))
        .fold(0.0f64, f64::max);
    2.0 * (1.0 + far + ustar.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Best objective over a grid on `[-r, r]^nu`, refined around the best point.
pub fn grid_search(g: &[f64], lambda: f64, cons: &Constraints, r: f64) -> Option<f64> {
    let nu = g.len();
    let mut center = vec![0.0; nu];
    let mut half = r;
    let n: usize = if nu == 1 { 20001 } else { 401 };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..6 {
        let step = 2.0 * half / (n - 1) as f64;
        let mut idx = vec![0usize; nu];
        loop {
            let u: Vec<f64> = idx.iter().zip(&center).map(|(&k, c)| c - half + k as f64 * step).collect();
            if feasible(cons, &u) {
                let obj = qp_objective(g, lambda, &u);
                if best.as_ref().is_none_or(|(b, _)| obj > *b) {
                    best = Some((obj, u));
                }
            }
            let mut d = 0;
            while d < nu {
                idx[d] += 1;
                if idx[d] < n {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == nu {
                break;
            }
        }
        let (_, u) = best.as_ref()?;
        center = u.clone();
        half = 4.0 * step;
    }
    best.map(|(o, _)| o)
}

use nalgebra::{DMatrix, DVector};
use saferoa::gp::PolyKernel;
use saferoa::poly::Polynomial;

/// Posterior mean and variance from the kernel matrix directly.
pub fn direct_posterior(k: &PolyKernel, xs: &[Vec<f64>], y: &[f64], reg: f64, x: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let kk = DMatrix::from_fn(n, n, |i, j| k.eval(&xs[i], &xs[j]).unwrap() + if i == j { reg } else { 0.0 });
    let ks = DVector::from_fn(n, |i, _| k.eval(x, &xs[i]).unwrap());
    let chol = kk.cholesky().expect("regularized Gram matrix is SPD");
    let alpha = chol.solve(&DVector::from_column_slice(y));
    let beta = chol.solve(&ks);
    (alpha.dot(&ks), k.eval(x, x).unwrap() - ks.dot(&beta))
}

/// Random member of the kernel's RKHS with the given norm.
pub fn random_rkhs_function(rng: &mut ChaCha8Rng, k: &PolyKernel, nvars: usize, norm: f64) -> Polynomial {
    let feats = k.features(nvars);
    let c: Vec<f64> = feats.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let scale = norm / c.iter().map(|v| v * v).sum::<f64>().sqrt();
    Polynomial::from_terms(
        nvars,
        feats.iter().zip(&c).map(|((m, w), ci)| (m.clone(), ci * scale * w.sqrt())),
    )
}

/// Uniform sample from the unit ball.
pub fn ball_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return x;
        }
    }
}
