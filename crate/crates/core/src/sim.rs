//! Fixed-step simulation of the true system and derivative data extraction.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::Dataset;
use crate::poly::{PolyMatrix, PolyVector, Polynomial};
use crate::roa::Certificate;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("right-hand side is {0:e} at the origin, expected an equilibrium")]
    NotEquilibrium(f64),
    #[error("invalid time grid: {0}")]
    TimeGrid(String),
    #[error("state became non-finite after {} steps", .0.len().saturating_sub(1))]
    Diverged(Box<Trajectory>),
    #[error("need at least 3 samples for central differences, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Rhs = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Black-box `xdot = rhs(x, u)`.
#[derive(Clone)]
pub struct TrueSystem {
    nx: usize,
    nu: usize,
    rhs: Rhs,
}

impl std::fmt::Debug for TrueSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrueSystem").field("nx", &self.nx).field("nu", &self.nu).finish()
    }
}

impl TrueSystem {
    pub fn new(nx: usize, nu: usize, rhs: Rhs) -> Result<Self, SimError> {
        let at0 = rhs(&vec![0.0; nx], &vec![0.0; nu]);
        if at0.len() != nx {
            return Err(SimError::Dimension(format!("rhs returns {} entries for {nx} states", at0.len())));
        }
        let worst = at0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(worst <= 1e-12) {
            return Err(SimError::NotEquilibrium(worst));
        }
        Ok(TrueSystem { nx, nu, rhs })
    }

    /// Polynomial dynamics `f(x) + g(x) u`.
    pub fn from_polynomial(f: PolyVector, g: PolyMatrix) -> Result<Self, SimError> {
        let (nx, nu) = (f.len(), g.cols());
        TrueSystem::new(
            nx,
            nu,
            Arc::new(move |x: &[f64], u: &[f64]| {
                let mut out = f.eval(x);
                if nu > 0 {
                    let gx = g.eval(x);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += (0..nu).map(|j| gx[(i, j)] * u[j]).sum::<f64>();
                    }
                }
                out
            }),
        )
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.rhs)(x, u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Input applied from each sample to the next; the last entry is the policy
    /// output at the final state.
    pub inputs: Vec<Vec<f64>>,
    /// `V` along the path when a certificate was attached.
    pub v_values: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Central-difference derivative at every sample; `None` at the endpoints.
    pub fn derivative_estimates(&self) -> Vec<Option<Vec<f64>>> {
        let n = self.states.len();
        (0..n)
            .map(|j| {
                (j > 0 && j + 1 < n).then(|| {
                    self.states[j + 1]
                        .iter()
                        .zip(&self.states[j - 1])
                        .map(|(a, b)| (a - b) / (2.0 * self.dt))
                        .collect()
                })
            })
            .collect()
    }

    pub fn attach_lyapunov(&mut self, v: &Polynomial) {
        self.v_values = self.states.iter().map(|x| v.eval(x)).collect();
    }

    /// Columns `t, x1.., u1.., V` (V empty if not attached).
    pub fn to_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut wr = csv::Writer::from_writer(w);
        let nx = self.states.first().map_or(0, Vec::len);
        let nu = self.inputs.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=nx).map(|i| format!("x{i}")));
        header.extend((1..=nu).map(|i| format!("u{i}")));
        header.push("V".into());
        wr.write_record(&header)?;
        for k in 0..self.states.len() {
            let mut rec = vec![self.times[k].to_string()];
            rec.extend(self.states[k].iter().map(f64::to_string));
            rec.extend(self.inputs[k].iter().map(f64::to_string));
            rec.push(self.v_values.get(k).map_or(String::new(), f64::to_string));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// Classical RK4 with the input held constant over each step.
pub fn integrate(
    system: &TrueSystem,
    policy: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    dt: f64,
    horizon: f64,
) -> Result<Trajectory, SimError> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(SimError::TimeGrid(format!("dt = {dt}, horizon = {horizon}")));
    }
    let steps = (horizon / dt).round();
    if (steps * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(SimError::TimeGrid(format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    if x0.len() != system.nx {
        return Err(SimError::Dimension(format!("x0 has {} entries", x0.len())));
    }
    let steps = steps as usize;
    let mut traj = Trajectory {
        dt,
        times: vec![0.0],
        states: vec![x0.to_vec()],
        inputs: Vec::with_capacity(steps + 1),
        v_values: Vec::new(),
    };
    let mut x = x0.to_vec();
    for k in 0..steps {
        let u = policy(&x);
        let k1 = system.rhs(&x, &u);
        let k2 = system.rhs(&axpy(&x, 0.5 * dt, &k1), &u);
        let k3 = system.rhs(&axpy(&x, 0.5 * dt, &k2), &u);
        let k4 = system.rhs(&axpy(&x, dt, &k3), &u);
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        traj.inputs.push(u);
        if x.iter().any(|v| !v.is_finite()) {
            traj.inputs.push(vec![f64::NAN; system.nu]);
            return Err(SimError::Diverged(Box::new(traj)));
        }
        traj.times.push((k + 1) as f64 * dt);
        traj.states.push(x.clone());
    }
    let u = policy(&x);
    traj.inputs.push(u);
    Ok(traj)
}

#[derive(Clone, Copy, Debug)]
pub struct LabelNoise {
    /// Uniform noise in `[-bound, bound]` per component.
    pub bound: f64,
    pub seed: u64,
}

/// Residual labels `xdot_hat - f(x) - g(x) u` for the `active` outputs at every
/// `stride`-th interior sample.
pub fn finite_difference_labels(
    traj: &Trajectory,
    f: &PolyVector,
    g: &PolyMatrix,
    active: &[usize],
    noise: Option<LabelNoise>,
    noise_bound: f64,
    stride: usize,
) -> Result<Dataset, SimError> {
    if traj.len() < 3 {
        return Err(SimError::TooFewSamples(traj.len()));
    }
    let stride = stride.max(1);
    let mut rng = noise.map(|n| ChaCha8Rng::seed_from_u64(n.seed));
    let mut data = Dataset::new(noise_bound);
    let derivs = traj.derivative_estimates();
    for (j, d) in derivs.iter().enumerate() {
        let Some(d) = d else { continue };
        if j % stride != 0 {
            continue;
        }
        let x = &traj.states[j];
        let u = &traj.inputs[j];
        let fx = f.eval(x);
        let gx = g.eval(x);
        let labels = active
            .iter()
            .map(|&i| {
                let mut xd = d[i];
                if let (Some(r), Some(n)) = (rng.as_mut(), noise) {
                    xd += r.gen_range(-n.bound..=n.bound);
                }
                let gu: f64 = (0..g.cols()).map(|c| gx[(i, c)] * u[c]).sum();
                xd - fx[i] - gu
            })
            .collect();
        data.push(x.clone(), labels);
    }
    Ok(data)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    /// `max_t V(x(t)) - gamma`.
    pub max_excess: f64,
    pub excursion: bool,
    pub first_violation: Option<usize>,
}

pub fn monitor_containment(traj: &Trajectory, cert: &Certificate) -> ContainmentReport {
    let mut rep = ContainmentReport {
        max_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for (k, x) in traj.states.iter().enumerate() {
        let e = cert.v.eval(x) - cert.gamma;
        rep.max_excess = rep.max_excess.max(e);
        if e > 0.0 && rep.first_violation.is_none() {
            rep.first_violation = Some(k);
            rep.excursion = true;
        }
    }
    rep
}
