//! Polynomials whose coefficients are affine in decision variables.

use std::collections::BTreeMap;

use crate::poly::{Monomial, Polynomial, DEFAULT_MAX_DEGREE, PRUNE_TOL};

use super::SosError;

/// Index of a scalar decision variable inside a [`super::SosProgram`].
pub type VarId = usize;

/// `constant + sum_j coeffs[j] * theta_j`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub coeffs: BTreeMap<VarId, f64>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr {
            constant: c,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn var(id: VarId) -> Self {
        let mut e = LinExpr::default();
        e.coeffs.insert(id, 1.0);
        e
    }

    /// No variables and a zero constant.
    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty() && self.constant == 0.0
    }

    pub fn has_vars(&self) -> bool {
        !self.coeffs.is_empty()
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        self.constant += s * other.constant;
        for (&v, &c) in &other.coeffs {
            let e = self.coeffs.entry(v).or_insert(0.0);
            *e += s * c;
            if *e == 0.0 {
                self.coeffs.remove(&v);
            }
        }
    }

    pub fn add_var(&mut self, id: VarId, c: f64) {
        let e = self.coeffs.entry(id).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.coeffs.remove(&id);
        }
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        let mut out = LinExpr::constant(self.constant * s);
        if s != 0.0 {
            for (&v, &c) in &self.coeffs {
                out.coeffs.insert(v, c * s);
            }
        }
        out
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(&v, &c)| c * values[v]).sum::<f64>()
    }

    fn prune(&mut self) {
        self.coeffs.retain(|_, c| c.abs() >= PRUNE_TOL);
        if self.constant.abs() < PRUNE_TOL {
            self.constant = 0.0;
        }
    }
}

/// Sparse polynomial with [`LinExpr`] coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct LinPoly {
    nvars: usize,
    terms: BTreeMap<Monomial, LinExpr>,
}

impl LinPoly {
    pub fn zero(nvars: usize) -> Self {
        LinPoly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn from_poly(p: &Polynomial) -> Self {
        let mut out = LinPoly::zero(p.nvars());
        for (m, c) in p.terms() {
            out.terms.insert(m.clone(), LinExpr::constant(c));
        }
        out
    }

    /// `sum_k theta_{vars[k]} * basis[k]`.
    pub fn from_basis(nvars: usize, basis: &[Monomial], vars: &[VarId]) -> Self {
        let mut out = LinPoly::zero(nvars);
        for (m, &v) in basis.iter().zip(vars) {
            out.terms.entry(m.clone()).or_default().add_var(v, 1.0);
        }
        out
    }

    /// A single scalar expression times a fixed polynomial.
    pub fn from_expr_times(e: &LinExpr, p: &Polynomial) -> Self {
        let mut out = LinPoly::zero(p.nvars());
        for (m, c) in p.terms() {
            out.terms.insert(m.clone(), e.scaled(c));
        }
        out.prune();
        out
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &LinExpr)> {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Monomial) -> Option<&LinExpr> {
        self.terms.get(m)
    }

    pub fn add_term(&mut self, m: Monomial, e: &LinExpr, s: f64) {
        self.terms.entry(m).or_default().add_scaled(e, s);
    }

    fn prune(&mut self) {
        for e in self.terms.values_mut() {
            e.prune();
        }
        self.terms.retain(|_, e| !e.is_zero());
    }

    pub fn add(&self, other: &LinPoly) -> LinPoly {
        self.axpy(other, 1.0)
    }

    pub fn sub(&self, other: &LinPoly) -> LinPoly {
        self.axpy(other, -1.0)
    }

    /// `self + s * other`.
    pub fn axpy(&self, other: &LinPoly, s: f64) -> LinPoly {
        assert_eq!(self.nvars, other.nvars, "LinPoly arity");
        let mut out = self.clone();
        for (m, e) in &other.terms {
            out.terms.entry(m.clone()).or_default().add_scaled(e, s);
        }
        out.prune();
        out
    }

    pub fn add_poly(&self, p: &Polynomial) -> LinPoly {
        self.add(&LinPoly::from_poly(p))
    }

    pub fn scale(&self, s: f64) -> LinPoly {
        let mut out = LinPoly::zero(self.nvars);
        for (m, e) in &self.terms {
            out.terms.insert(m.clone(), e.scaled(s));
        }
        out.prune();
        out
    }

    /// Product with a fixed polynomial.
    pub fn mul_poly(&self, p: &Polynomial) -> Result<LinPoly, SosError> {
        assert_eq!(self.nvars, p.nvars(), "LinPoly arity");
        let deg = self.degree() + p.degree();
        if !self.terms.is_empty() && !p.is_zero() && deg > DEFAULT_MAX_DEGREE {
            return Err(SosError::Poly(crate::poly::PolyError::DegreeOverflow {
                degree: deg,
                max: DEFAULT_MAX_DEGREE,
            }));
        }
        let mut out = LinPoly::zero(self.nvars);
        for (ma, e) in &self.terms {
            for (mb, c) in p.terms() {
                out.terms.entry(ma.mul(mb)).or_default().add_scaled(e, c);
            }
        }
        out.prune();
        Ok(out)
    }

    pub fn derivative(&self, i: usize) -> LinPoly {
        let mut out = LinPoly::zero(self.nvars);
        for (m, e) in &self.terms {
            let k = m.exponents()[i];
            if k == 0 {
                continue;
            }
            let mut ex = m.exponents().to_vec();
            ex[i] -= 1;
            out.terms
                .entry(Monomial::new(ex))
                .or_default()
                .add_scaled(e, k as f64);
        }
        out.prune();
        out
    }

    pub fn embed(&self, new_nvars: usize, map: &[usize]) -> LinPoly {
        let mut out = LinPoly::zero(new_nvars);
        for (m, e) in &self.terms {
            out.terms
                .entry(m.embed(new_nvars, map))
                .or_default()
                .add_scaled(e, 1.0);
        }
        out.prune();
        out
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Substitutes decision-variable values.
    pub fn eval_vars(&self, values: &[f64]) -> Polynomial {
        Polynomial::from_terms(
            self.nvars,
            self.terms.iter().map(|(m, e)| (m.clone(), e.eval(values))),
        )
    }

    /// Monomials whose coefficient is not identically zero.
    pub fn support(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.iter().filter(|(_, e)| !e.is_zero()).map(|(m, _)| m)
    }

    pub fn is_fixed(&self) -> bool {
        self.terms.values().all(|e| !e.has_vars())
    }
}
