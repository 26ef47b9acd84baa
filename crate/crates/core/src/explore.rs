//! Variance-ascent exploration inside a certified region.
//!
//! At each state the input maximizes `G(x) u - lambda |u|^2`, where `G` is the
//! rate at which the input raises the total posterior variance, subject to
//! `dV/dt <= 0` at both disturbance extremes.

use log::warn;
use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::poly::{PolyMatrix, PolyVector, Polynomial};
use crate::roa::{Certificate, RobustModel};

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("lambda must be positive, got {0}")]
    Lambda(f64),
    #[error("eta must be positive, got {0}")]
    Eta(f64),
    #[error("fallback policy has {got} inputs, model has {expected}")]
    Fallback { expected: usize, got: usize },
}

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub lambda: f64,
    pub eta: f64,
    /// Used when the program is numerically infeasible.
    pub fallback: PolyVector,
}

/// Regularization used when none is configured.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

impl ExploreConfig {
    pub fn new(lambda: f64, eta: f64, fallback: PolyVector) -> Result<Self, ExploreError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ExploreError::Lambda(lambda));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(ExploreError::Eta(eta));
        }
        Ok(ExploreConfig { lambda, eta, fallback })
    }

    /// Falls back on the certificate's controller.
    pub fn for_certificate(cert: &Certificate, lambda: f64, eta: f64) -> Result<Self, ExploreError> {
        ExploreConfig::new(lambda, eta, cert.kappa.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExploreAction {
    pub u: Vec<f64>,
    /// The fallback controller was used.
    pub fallback: bool,
}

/// `G(x) = (sum_i grad Var_i(x))^T g(x)`.
pub fn variance_ascent_direction(variance: &PolyVector, g: &PolyMatrix, x: &[f64]) -> Vec<f64> {
    let total = variance.iter().fold(Polynomial::zero(variance.nvars()), |acc, v| &acc + v);
    ascent(&total.gradient().eval(x), g, x)
}

fn ascent(grad: &[f64], g: &PolyMatrix, x: &[f64]) -> Vec<f64> {
    let gx = g.eval(x);
    (0..g.cols())
        .map(|j| grad.iter().enumerate().map(|(i, d)| d * gx[(i, j)]).sum())
        .collect()
}

/// Precomputed gradients for evaluating the exploration law along a trajectory.
#[derive(Clone, Debug)]
pub struct Explorer {
    model: RobustModel,
    cert: Certificate,
    cfg: ExploreConfig,
    grad_v: PolyVector,
    grad_var: PolyVector,
}

impl Explorer {
    pub fn new(model: &RobustModel, cert: &Certificate, cfg: &ExploreConfig) -> Result<Self, ExploreError> {
        if cfg.fallback.len() != model.nu() {
            return Err(ExploreError::Fallback {
                expected: model.nu(),
                got: cfg.fallback.len(),
            });
        }
        let total = model
            .variance
            .iter()
            .fold(Polynomial::zero(model.nx()), |acc, v| &acc + v);
        Ok(Explorer {
            model: model.clone(),
            cert: cert.clone(),
            cfg: cfg.clone(),
            grad_v: cert.v.gradient(),
            grad_var: total.gradient(),
        })
    }

    pub fn direction(&self, x: &[f64]) -> Vec<f64> {
        ascent(&self.grad_var.eval(x), &self.model.g, x)
    }

    pub fn action(&self, x: &[f64]) -> ExploreAction {
        if self.cert.v.eval(x) > self.cert.gamma {
            warn!("exploring outside the certified level set at {x:?}");
        }
        let gv = self.grad_v.eval(x);
        let a = ascent(&gv, &self.model.g, x);
        // dV/dt = c + a.u + grad V . d; s bounds the last term over the band
        let fx = self.model.f.eval(x);
        let mx = self.model.mean.eval(x);
        let c: f64 = gv.iter().zip(fx.iter().zip(&mx)).map(|(d, (f, m))| d * (f + m)).sum();
        let s: f64 = self
            .model
            .active
            .iter()
            .map(|&i| gv[i].abs() * self.model.variance.get(i).eval(x).max(0.0).sqrt())
            .sum::<f64>()
            * self.cfg.eta;
        let cons = [(a.clone(), -(c + s)), (a, -(c - s))];
        let g = self.direction(x);
        let ustar: Vec<f64> = g.iter().map(|gi| gi / (2.0 * self.cfg.lambda)).collect();
        match solve_qp(&g, self.cfg.lambda, &ustar, &cons) {
            Some(u) => ExploreAction { u, fallback: false },
            None => {
                warn!("exploration program infeasible at {x:?}, using the fallback controller");
                ExploreAction {
                    u: self.cfg.fallback.eval(x),
                    fallback: true,
                }
            }
        }
    }
}

/// One-shot evaluation of the exploration law.
pub fn explore_action(model: &RobustModel, cert: &Certificate, cfg: &ExploreConfig, x: &[f64]) -> ExploreAction {
    match Explorer::new(model, cert, cfg) {
        Ok(e) => e.action(x),
        Err(e) => {
            warn!("{e}");
            ExploreAction {
                u: vec![0.0; model.nu()],
                fallback: true,
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objective(g: &[f64], lambda: f64, u: &[f64]) -> f64 {
    dot(g, u) - lambda * dot(u, u)
}

/// `max g.u - lambda |u|^2` subject to `a_k . u <= b_k`, by enumerating
/// active sets. The maximizer is the projection of `ustar` onto the feasible
/// set.
pub fn solve_qp(g: &[f64], lambda: f64, ustar: &[f64], cons: &[(Vec<f64>, f64); 2]) -> Option<Vec<f64>> {
    let scale = 1.0 + ustar.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let feasible = |u: &[f64]| {
        cons.iter()
            .all(|(a, b)| dot(a, u) - b <= 1e-9 * (1.0 + b.abs() + scale * a.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
    };
    let mut cands: Vec<Vec<f64>> = Vec::new();
    cands.push(ustar.to_vec());
    for (a, b) in cons {
        let aa = dot(a, a);
        if aa > 0.0 {
            let t = (dot(a, ustar) - b) / aa;
            if t >= 0.0 {
                cands.push(ustar.iter().zip(a).map(|(u, ai)| u - t * ai).collect());
            }
        }
    }
    let (a1, b1) = &cons[0];
    let (a2, b2) = &cons[1];
    let gram = Matrix2::new(dot(a1, a1), dot(a1, a2), dot(a2, a1), dot(a2, a2));
    if gram.determinant().abs() > 1e-12 * gram.norm_squared() {
        let rhs = Vector2::new(dot(a1, ustar) - b1, dot(a2, ustar) - b2);
        if let Some(mu) = gram.lu().solve(&rhs) {
            if mu[0] >= 0.0 && mu[1] >= 0.0 {
                cands.push(
                    ustar
                        .iter()
                        .enumerate()
                        .map(|(i, u)| u - mu[0] * a1[i] - mu[1] * a2[i])
                        .collect(),
                );
            }
        }
    }
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for u in cands.into_iter().filter(|u| feasible(u)) {
        let (obj, norm) = (objective(g, lambda, &u), dot(&u, &u));
        let better = match &best {
            None => true,
            Some((bo, bn, _)) => {
                let tol = 1e-12 * (1.0 + bo.abs());
                obj > bo + tol || ((obj - bo).abs() <= tol && norm < *bn)
            }
        };
        if better {
            best = Some((obj, norm, u));
        }
    }
    best.map(|(_, _, u)| u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slack() -> [(Vec<f64>, f64); 2] {
        [(vec![1.0], 100.0), (vec![1.0], 100.0)]
    }

    #[test]
    fn regularizer_dominates_without_gradient() {
        assert_eq!(solve_qp(&[0.0], 1.0, &[0.0], &slack()).unwrap(), vec![0.0]);
    }

    #[test]
    fn unconstrained_optimum() {
        let u = solve_qp(&[2.0], 1.0, &[1.0], &slack()).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn active_boundary() {
        let cons = [(vec![1.0], 0.0), (vec![1.0], 0.5)];
        let u = solve_qp(&[2.0], 1.0, &[1.0], &cons).unwrap();
        assert!(u[0].abs() < 1e-12);
    }

    #[test]
    fn infeasible_program() {
        let cons = [(vec![0.0], -1.0), (vec![1.0], 0.0)];
        assert!(solve_qp(&[1.0], 1.0, &[0.5], &cons).is_none());
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(ExploreConfig::new(0.0, 3.0, PolyVector::zeros(0, 1)).is_err());
    }
}
