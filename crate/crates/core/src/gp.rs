//! Gaussian-process regression with polynomial kernels.
//!
//! The kernel `k(x, y) = sum_i a_i (x^T y)^i` (no constant term) has a finite
//! feature expansion `k(x, y) = sum_b w_b x^b y^b` over monomials `b` of degree
//! `1..=p`, with `w_b = a_|b| * multinomial(|b|; b)`. The posterior mean and
//! variance are therefore polynomials and are stored in expanded form:
//!
//! * mean `m(x) = sum_b w_b (sum_i c_i x_i^b) x^b`, `c = (K + r I)^-1 y`
//! * variance `Var(x) = z(x)^T (W - B^T B) z(x)`, `B = L^-1 Phi W`, `L L^T = K + r I`

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{monomial_basis, Monomial, PolyVector, Polynomial};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("kernel weights must be nonnegative with at least one positive entry")]
    InvalidKernel,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("regularized Gram matrix is not positive definite (duplicate inputs with too small a regularizer?)")]
    NotPositiveDefinite,
    #[error("output {0} has no GP (structural zero)")]
    InactiveOutput(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed dataset file: {0}")]
    Format(String),
}

/// `k(x, y) = sum_{i=1..p} weights[i-1] * (x^T y)^i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct PolyKernel {
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    weights: Vec<f64>,
}

impl From<PolyKernel> for KernelRepr {
    fn from(k: PolyKernel) -> Self {
        KernelRepr { weights: k.weights }
    }
}

impl TryFrom<KernelRepr> for PolyKernel {
    type Error = GpError;
    fn try_from(r: KernelRepr) -> Result<Self, GpError> {
        PolyKernel::new(r.weights)
    }
}

impl PolyKernel {
    pub fn new(weights: Vec<f64>) -> Result<Self, GpError> {
        if weights.is_empty()
            || weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || weights.iter().all(|&w| w == 0.0)
        {
            return Err(GpError::InvalidKernel);
        }
        Ok(PolyKernel { weights })
    }

    pub fn degree(&self) -> u32 {
        self.weights.len() as u32
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, GpError> {
        if x.len() != y.len() {
            return Err(GpError::DimensionMismatch(format!(
                "kernel arguments of length {} and {}",
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let s: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        // Horner in s, no constant term
        self.weights.iter().rev().fold(0.0, |acc, &w| (acc + w) * s)
    }

    /// Feature monomials and their weights `w_b`; zero-weight degrees are skipped.
    pub fn features(&self, nvars: usize) -> Vec<(Monomial, f64)> {
        let mut out = Vec::new();
        for m in monomial_basis(nvars, 1, self.degree()) {
            let a = self.weights[(m.degree() - 1) as usize];
            if a == 0.0 {
                continue;
            }
            out.push((m.clone(), a * multinomial(m.exponents())));
        }
        out
    }

    /// `k(x, x)` as a polynomial.
    pub fn prior_variance(&self, nvars: usize) -> Polynomial {
        Polynomial::from_terms(nvars, self.features(nvars).into_iter().map(|(m, w)| (m.scaled(2), w)))
    }
}

fn multinomial(e: &[u32]) -> f64 {
    let fact = |n: u32| (1..=n).fold(1.0, |a, k| a * k as f64);
    let n: u32 = e.iter().sum();
    e.iter().fold(fact(n), |acc, &k| acc / fact(k))
}

/// Training data: state inputs and one label per modeled output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
    /// Uniform bound on the label noise.
    pub noise_bound: f64,
}

impl Dataset {
    pub fn new(noise_bound: f64) -> Self {
        Dataset {
            inputs: Vec::new(),
            labels: Vec::new(),
            noise_bound,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: Vec<f64>) {
        self.inputs.push(x);
        self.labels.push(y);
    }

    pub fn extend(&mut self, other: &Dataset) {
        self.inputs.extend(other.inputs.iter().cloned());
        self.labels.extend(other.labels.iter().cloned());
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if self.inputs.len() != self.labels.len() {
            return Err(GpError::DimensionMismatch(format!(
                "{} inputs but {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        if let Some(first) = self.inputs.first() {
            let n = first.len();
            if self.inputs.iter().any(|x| x.len() != n) {
                return Err(GpError::DimensionMismatch("ragged inputs".into()));
            }
            let m = self.labels[0].len();
            if self.labels.iter().any(|y| y.len() != m) {
                return Err(GpError::DimensionMismatch("ragged labels".into()));
            }
        }
        Ok(())
    }

    /// Reads `x1..xn` followed by label columns; the first row is a header.
    pub fn from_csv<R: Read>(reader: R, state_dim: usize, noise_bound: f64) -> Result<Self, GpError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut ds = Dataset::new(noise_bound);
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| GpError::Format(e.to_string()))?;
            if vals.len() <= state_dim {
                return Err(GpError::Format(format!(
                    "row has {} columns, need more than {state_dim}",
                    vals.len()
                )));
            }
            let (x, y) = vals.split_at(state_dim);
            ds.push(x.to_vec(), y.to_vec());
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), GpError> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.inputs.first().map_or(0, Vec::len);
        let m = self.labels.first().map_or(0, Vec::len);
        let header: Vec<String> = (1..=n)
            .map(|i| format!("x{i}"))
            .chain((1..=m).map(|j| format!("y{j}")))
            .collect();
        w.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.labels) {
            w.write_record(x.iter().chain(y).map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| GpError::Format(e.to_string()))?;
        Ok(())
    }
}

/// Posterior of one scalar GP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputGp {
    pub kernel: PolyKernel,
    /// `c = (K + r I)^-1 y`.
    pub weights: Vec<f64>,
    pub mean: Polynomial,
    pub variance: Polynomial,
}

/// Per-output independent scalar GPs; outputs without a GP are structural zeros.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpModel {
    state_dim: usize,
    noise_reg: f64,
    data: Dataset,
    /// Output index of each label column.
    active: Vec<usize>,
    outputs: Vec<Option<OutputGp>>,
}

impl GpModel {
    /// Fits one GP per entry of `active` (`(output index, kernel)`); label column
    /// `j` of `data` belongs to `active[j]`.
    pub fn fit(
        state_dim: usize,
        active: &[(usize, PolyKernel)],
        data: Dataset,
        noise_reg: f64,
    ) -> Result<Self, GpError> {
        data.validate()?;
        if let Some(x) = data.inputs.first() {
            if x.len() != state_dim {
                return Err(GpError::DimensionMismatch(format!(
                    "inputs have {} entries, state dimension is {state_dim}",
                    x.len()
                )));
            }
            if data.labels[0].len() != active.len() {
                return Err(GpError::DimensionMismatch(format!(
                    "{} label columns for {} active outputs",
                    data.labels[0].len(),
                    active.len()
                )));
            }
        }
        let mut outputs = vec![None; state_dim];
        for (col, (out, kernel)) in active.iter().enumerate() {
            if *out >= state_dim {
                return Err(GpError::DimensionMismatch(format!("output index {out} out of range")));
            }
            let y: Vec<f64> = data.labels.iter().map(|l| l[col]).collect();
            outputs[*out] = Some(fit_scalar(state_dim, kernel, &data.inputs, &y, noise_reg)?);
        }
        Ok(GpModel {
            state_dim,
            noise_reg,
            data,
            active: active.iter().map(|(o, _)| *o).collect(),
            outputs,
        })
    }

    /// Prior model: no data.
    pub fn prior(state_dim: usize, active: &[(usize, PolyKernel)], noise_reg: f64) -> Result<Self, GpError> {
        Self::fit(state_dim, active, Dataset::new(noise_reg.max(0.0).sqrt()), noise_reg)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_reg(&self) -> f64 {
        self.noise_reg
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn active_outputs(&self) -> &[usize] {
        &self.active
    }

    pub fn kernels(&self) -> Vec<(usize, PolyKernel)> {
        self.active
            .iter()
            .map(|&o| (o, self.outputs[o].as_ref().expect("active").kernel.clone()))
            .collect()
    }

    pub fn output(&self, i: usize) -> Option<&OutputGp> {
        self.outputs.get(i).and_then(Option::as_ref)
    }

    pub fn mean_polynomial(&self, i: usize) -> Result<&Polynomial, GpError> {
        self.output(i).map(|o| &o.mean).ok_or(GpError::InactiveOutput(i))
    }

    pub fn variance_polynomial(&self, i: usize) -> Result<&Polynomial, GpError> {
        self.output(i).map(|o| &o.variance).ok_or(GpError::InactiveOutput(i))
    }

    /// Posterior means for every output, zero for structural zeros.
    pub fn mean_vector(&self) -> PolyVector {
        PolyVector::new(
            self.outputs
                .iter()
                .map(|o| o.as_ref().map_or_else(|| Polynomial::zero(self.state_dim), |g| g.mean.clone()))
                .collect(),
            self.state_dim,
        )
    }

    pub fn variance_vector(&self) -> PolyVector {
        PolyVector::new(
            self.outputs
                .iter()
                .map(|o| o.as_ref().map_or_else(|| Polynomial::zero(self.state_dim), |g| g.variance.clone()))
                .collect(),
            self.state_dim,
        )
    }

    pub fn mean_at(&self, x: &[f64]) -> Vec<f64> {
        self.outputs
            .iter()
            .map(|o| o.as_ref().map_or(0.0, |g| g.mean.eval(x)))
            .collect()
    }

    /// Posterior standard deviation per output; variance is clipped at zero first.
    pub fn std_at(&self, x: &[f64]) -> Vec<f64> {
        self.outputs
            .iter()
            .map(|o| o.as_ref().map_or(0.0, |g| g.variance.eval(x).max(0.0).sqrt()))
            .collect()
    }

    /// Sum of posterior variances over the active outputs.
    pub fn total_variance_at(&self, x: &[f64]) -> f64 {
        self.outputs
            .iter()
            .flatten()
            .map(|g| g.variance.eval(x))
            .sum()
    }
}

fn fit_scalar(
    nvars: usize,
    kernel: &PolyKernel,
    inputs: &[Vec<f64>],
    y: &[f64],
    noise_reg: f64,
) -> Result<OutputGp, GpError> {
    let feats = kernel.features(nvars);
    let d = feats.len();
    let n = inputs.len();
    if n == 0 {
        return Ok(OutputGp {
            kernel: kernel.clone(),
            weights: Vec::new(),
            mean: Polynomial::zero(nvars),
            variance: kernel.prior_variance(nvars),
        });
    }

    let gram = DMatrix::from_fn(n, n, |i, j| {
        kernel.eval_unchecked(&inputs[i], &inputs[j]) + if i == j { noise_reg } else { 0.0 }
    });
    let chol = gram.cholesky().ok_or(GpError::NotPositiveDefinite)?;
    let c = chol.solve(&DVector::from_column_slice(y));

    // Phi W: rows are data points, columns feature monomials
    let phi_w = DMatrix::from_fn(n, d, |i, b| feats[b].0.eval(&inputs[i]) * feats[b].1);
    let mean_coeffs = phi_w.transpose() * &c;
    let mean = Polynomial::from_terms(
        nvars,
        feats.iter().zip(mean_coeffs.iter()).map(|((m, _), &v)| (m.clone(), v)),
    );

    let mut b = phi_w;
    let l = chol.l();
    if !l.solve_lower_triangular_mut(&mut b) {
        return Err(GpError::NotPositiveDefinite);
    }
    let btb = b.transpose() * &b;
    let mut variance = Polynomial::zero(nvars);
    for i in 0..d {
        for j in 0..d {
            let w = if i == j { feats[i].1 } else { 0.0 };
            let s = w - btb[(i, j)];
            if s != 0.0 {
                variance.add_term(feats[i].0.mul(&feats[j].0), s);
            }
        }
    }

    Ok(OutputGp {
        kernel: kernel.clone(),
        weights: c.iter().copied().collect(),
        mean,
        variance,
    })
}
