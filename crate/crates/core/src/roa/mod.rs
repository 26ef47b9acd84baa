//! Robust region-of-attraction synthesis: Lyapunov function, controller and
//! certified sublevel set for a GP-bounded control-affine model.

mod analysis;
mod lqr;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{GpError, GpModel};
use crate::poly::{PolyError, PolyMatrix, PolyVector, Polynomial};
use crate::sos::SosError;

pub use analysis::{
    boundary_points, level_set_box, ray_radius, validate_certificate, volume_estimate, ValidationReport,
};
pub use lqr::{init_certificate, lqr, lyapunov, InitialCertificate};
pub use synth::{gamma_step, synthesize, synthesize_from, v_step, GammaStep, VStep};

#[derive(Debug, Error)]
pub enum RoaError {
    #[error("invalid model: {0}")]
    Model(String),
    #[error("linearization is not stabilizable")]
    Unstabilizable,
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("level set touches the sampling box")]
    LevelSetTouchesBox,
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// `xdot = f(x) + g(x) u + m(x) + d` with `|d_i| <= eta * sqrt(var_i(x))` on active outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustModel {
    pub f: PolyVector,
    pub g: PolyMatrix,
    pub mean: PolyVector,
    pub variance: PolyVector,
    pub eta: f64,
    pub active: Vec<usize>,
}

impl RobustModel {
    pub fn new(
        f: PolyVector,
        g: PolyMatrix,
        mean: PolyVector,
        variance: PolyVector,
        eta: f64,
        active: Vec<usize>,
    ) -> Result<Self, RoaError> {
        let nx = f.len();
        if f.nvars() != nx || g.rows() != nx || g.nvars() != nx {
            return Err(RoaError::Model("f and g must be square in the state".into()));
        }
        if mean.len() != nx || variance.len() != nx || mean.nvars() != nx || variance.nvars() != nx {
            return Err(RoaError::Model("mean and variance must have one entry per state".into()));
        }
        if !(eta > 0.0) {
            return Err(RoaError::Model(format!("eta must be positive, got {eta}")));
        }
        for (i, p) in f.iter().enumerate() {
            if p.constant_term().abs() > 1e-12 {
                return Err(RoaError::Model(format!("f_{} does not vanish at the origin", i + 1)));
            }
        }
        for (i, p) in mean.iter().enumerate() {
            if p.constant_term().abs() > 1e-9 {
                return Err(RoaError::Model(format!("mean_{} does not vanish at the origin", i + 1)));
            }
        }
        for &a in &active {
            if a >= nx {
                return Err(RoaError::Model(format!("active output {a} out of range")));
            }
            if variance.get(a).degree() % 2 == 1 {
                return Err(RoaError::Model(format!("variance {} has odd degree", a + 1)));
            }
        }
        for i in 0..nx {
            if !active.contains(&i) && (!mean.get(i).is_zero() || !variance.get(i).is_zero()) {
                return Err(RoaError::Model(format!("output {} has a model but no disturbance", i + 1)));
            }
        }
        Ok(RobustModel {
            f,
            g,
            mean,
            variance,
            eta,
            active,
        })
    }

    pub fn from_gp(f: PolyVector, g: PolyMatrix, gp: &GpModel, eta: f64) -> Result<Self, RoaError> {
        RobustModel::new(f, g, gp.mean_vector(), gp.variance_vector(), eta, gp.active_outputs().to_vec())
    }

    /// Exactly known dynamics.
    pub fn nominal(f: PolyVector, g: PolyMatrix) -> Result<Self, RoaError> {
        let n = f.len();
        RobustModel::new(f, g, PolyVector::zeros(n, n), PolyVector::zeros(n, n), 1.0, Vec::new())
    }

    pub fn nx(&self) -> usize {
        self.f.len()
    }

    pub fn nu(&self) -> usize {
        self.g.cols()
    }

    pub fn nd(&self) -> usize {
        self.active.len()
    }

    /// `f + m`.
    pub fn drift(&self) -> PolyVector {
        self.f.add(&self.mean)
    }

    /// `f + g kappa + m`.
    pub fn closed_loop(&self, kappa: &PolyVector) -> PolyVector {
        if self.nu() == 0 {
            return self.drift();
        }
        self.drift().add(&self.g.mul_vec(kappa))
    }

    /// `eta * sigma_i(x)` for each active output.
    pub fn disturbance_bound(&self, x: &[f64]) -> Vec<f64> {
        self.active
            .iter()
            .map(|&i| self.eta * self.variance.get(i).eval(x).max(0.0).sqrt())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisOptions {
    pub deg_v: u32,
    pub deg_kappa: u32,
    pub deg_sv: u32,
    pub deg_sd: u32,
    pub deg_sgamma: u32,
    pub eps1: f64,
    pub eps2: f64,
    /// Upper end of the level-set search.
    pub gamma_max: f64,
    /// Lower end of the first level-set search.
    pub gamma_min: f64,
    pub gamma_rel_tol: f64,
    pub n_iter: usize,
    /// Stop once the level improves by less than this fraction.
    pub min_improvement: f64,
    /// Cap on the decrease margin maximized by the V-step.
    pub t_max: f64,
    /// LQR state weights (diagonal); empty means identity.
    pub lqr_q: Vec<f64>,
    /// LQR input weights (diagonal); empty means identity.
    pub lqr_r: Vec<f64>,
    /// Sampled soundness check applied to each accepted certificate.
    pub validation_samples: usize,
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            deg_v: 4,
            deg_kappa: 4,
            deg_sv: 4,
            deg_sd: 4,
            deg_sgamma: 4,
            eps1: 1e-6,
            eps2: 1e-6,
            gamma_max: 10.0,
            gamma_min: 1e-6,
            gamma_rel_tol: 1e-3,
            n_iter: 10,
            min_improvement: 0.01,
            t_max: 10.0,
            lqr_q: Vec::new(),
            lqr_r: Vec::new(),
            validation_samples: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Decrease margin of the last V-step.
    pub margin: f64,
    /// Certified level after each alternation round.
    pub gamma_history: Vec<f64>,
    pub sdp_solves: usize,
    /// Level reductions applied after sampled validation.
    pub backoffs: usize,
}

/// `R = {x : V(x) <= gamma}` with controller `kappa` and S-procedure multipliers
/// (over `(x, d)`, `d` ordered as the model's active outputs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub v: Polynomial,
    pub kappa: PolyVector,
    pub gamma: f64,
    pub s_v: Polynomial,
    pub s_d: Vec<Polynomial>,
    pub active: Vec<usize>,
    pub diagnostics: Diagnostics,
}

impl Certificate {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.v.eval(x) <= self.gamma
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// The S-procedure expression that must be a sum of squares, over `(x, d)`.
    pub fn master_polynomial(&self, model: &RobustModel, eps2: f64) -> Result<Polynomial, RoaError> {
        synth::master_fixed(model, self, eps2)
    }
}
