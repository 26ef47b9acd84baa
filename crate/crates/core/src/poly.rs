//! Sparse multivariate polynomials with real coefficients.
//!
//! Terms are kept in a `BTreeMap` keyed by [`Monomial`] so iteration order is
//! the canonical graded-lexicographic order: ascending total degree, and within
//! one degree the exponent vectors compare in reverse lexicographic order so that
//! `x1` precedes `x2`. Coefficients with magnitude below [`PRUNE_TOL`] are
//! dropped after every operation.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coefficients smaller than this in magnitude are treated as zero.
pub const PRUNE_TOL: f64 = 1e-14;

/// Default cap on the total degree of any product.
pub const DEFAULT_MAX_DEGREE: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} variables, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("total degree {degree} exceeds the configured maximum {max}")]
    DegreeOverflow { degree: u32, max: u32 },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Exponent vector of a monomial `x1^e1 ... xn^en`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// The monomial `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self / other` if `other` divides `self`.
    pub fn div(&self, other: &Monomial) -> Option<Monomial> {
        let mut out = Vec::with_capacity(self.0.len());
        for (a, b) in self.0.iter().zip(&other.0) {
            if b > a {
                return None;
            }
            out.push(a - b);
        }
        Some(Monomial(out))
    }

    pub fn scaled(&self, k: u32) -> Monomial {
        Monomial(self.0.iter().map(|e| e * k).collect())
    }

    /// True when every exponent is even.
    pub fn is_even(&self) -> bool {
        self.0.iter().all(|e| e % 2 == 0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .fold(1.0, |acc, (&e, &xi)| acc * powu(xi, e))
    }

    /// Exponent vector on a larger variable set; variable `i` maps to `map[i]`.
    pub fn embed(&self, new_nvars: usize, map: &[usize]) -> Monomial {
        let mut e = vec![0; new_nvars];
        for (i, &k) in map.iter().enumerate() {
            e[k] += self.0[i];
        }
        Monomial(e)
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, " ")?;
            }
            first = false;
            if e == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "x{}^{}", i + 1, e)?;
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn powu(x: f64, e: u32) -> f64 {
    match e {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(e as i32),
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of monomials in `nvars` variables of total degree exactly `d`.
pub fn count_monomials_of_degree(nvars: usize, d: u32) -> usize {
    if nvars == 0 {
        return usize::from(d == 0);
    }
    binomial(nvars as u64 + d as u64 - 1, d as u64) as usize
}

fn push_compositions(nvars: usize, d: u32, prefix: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if prefix.len() + 1 == nvars {
        prefix.push(d);
        out.push(Monomial(prefix.clone()));
        prefix.pop();
        return;
    }
    for e in (0..=d).rev() {
        prefix.push(e);
        push_compositions(nvars, d - e, prefix, out);
        prefix.pop();
    }
}

/// All exponent vectors with total degree in `[min_deg, max_deg]`, in graded-lex order.
pub fn monomial_basis(nvars: usize, min_deg: u32, max_deg: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    if nvars == 0 {
        if min_deg == 0 {
            out.push(Monomial(Vec::new()));
        }
        return out;
    }
    for d in min_deg..=max_deg {
        push_compositions(nvars, d, &mut Vec::with_capacity(nvars), &mut out);
    }
    out
}

/// Sparse polynomial over `nvars` real indeterminates.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(try_from = "PolyRepr", into = "PolyRepr")]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    nvars: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl From<Polynomial> for PolyRepr {
    fn from(p: Polynomial) -> Self {
        PolyRepr {
            nvars: p.nvars,
            terms: p.terms.into_iter().map(|(m, c)| (m.0, c)).collect(),
        }
    }
}

impl TryFrom<PolyRepr> for Polynomial {
    type Error = PolyError;
    fn try_from(r: PolyRepr) -> Result<Self, PolyError> {
        let mut p = Polynomial::zero(r.nvars);
        for (e, c) in r.terms {
            if e.len() != r.nvars {
                return Err(PolyError::DimensionMismatch {
                    expected: r.nvars,
                    got: e.len(),
                });
            }
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    /// The coordinate polynomial `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        Self::from_monomial(Monomial::var(nvars, i), 1.0)
    }

    pub fn from_monomial(m: Monomial, c: f64) -> Self {
        let mut p = Self::zero(m.nvars());
        p.add_term(m, c);
        p
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, f64)>>(nvars: usize, terms: I) -> Self {
        let mut p = Self::zero(nvars);
        for (m, c) in terms {
            assert_eq!(m.nvars(), nvars, "monomial arity");
            p.add_term(m, c);
        }
        p
    }

    /// Linear form `sum_i a_i x_i`.
    pub fn linear(a: &[f64]) -> Self {
        let n = a.len();
        Self::from_terms(n, a.iter().enumerate().map(|(i, &c)| (Monomial::var(n, i), c)))
    }

    /// Quadratic form `x^T P x`.
    pub fn quadratic_form(p: &nalgebra::DMatrix<f64>) -> Self {
        let n = p.nrows();
        let mut out = Self::zero(n);
        for i in 0..n {
            for j in 0..n {
                let m = Monomial::var(n, i).mul(&Monomial::var(n, j));
                out.add_term(m, p[(i, j)]);
            }
        }
        out
    }

    /// `sum_i x_i^2`.
    pub fn sum_of_squares_of_vars(nvars: usize) -> Self {
        Self::from_terms(nvars, (0..nvars).map(|i| (Monomial::var(nvars, i).scaled(2), 1.0)))
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Smallest total degree among the stored terms (0 for the zero polynomial).
    pub fn min_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).min().unwrap_or(0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coeff(&Monomial::one(self.nvars))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Adds `c * m` in place, pruning the result.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        let v = self.terms.get(&m).copied().unwrap_or(0.0) + c;
        if v.abs() < PRUNE_TOL {
            self.terms.remove(&m);
        } else {
            self.terms.insert(m, v);
        }
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= PRUNE_TOL);
    }

    fn check_dims(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: other.nvars,
            });
        }
        Ok(())
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: x.len(),
            });
        }
        Ok(self.eval(x))
    }

    /// Evaluates at `x`. Panics if `x.len() != nvars`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars, "polynomial evaluated at wrong dimension");
        self.terms.iter().map(|(m, &c)| c * m.eval(x)).sum()
    }

    pub fn checked_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out.prune();
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) -= c;
        }
        out.prune();
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.checked_mul_capped(other, DEFAULT_MAX_DEGREE)
    }

    pub fn checked_mul_capped(
        &self,
        other: &Polynomial,
        max_degree: u32,
    ) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        if self.is_zero() || other.is_zero() {
            return Ok(Polynomial::zero(self.nvars));
        }
        let degree = self.degree() + other.degree();
        if degree > max_degree {
            return Err(PolyError::DegreeOverflow {
                degree,
                max: max_degree,
            });
        }
        let mut out = Polynomial::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                *out.terms.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        out.prune();
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.terms.insert(m.clone(), c * s);
        }
        out.prune();
        out
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    pub fn derivative(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.0[i];
            if e == 0 {
                continue;
            }
            let mut dm = m.clone();
            dm.0[i] -= 1;
            *out.terms.entry(dm).or_insert(0.0) += c * e as f64;
        }
        out.prune();
        out
    }

    pub fn gradient(&self) -> PolyVector {
        PolyVector::new((0..self.nvars).map(|i| self.derivative(i)).collect(), self.nvars)
    }

    /// `q(x) = p(A x)`.
    pub fn substitute_linear(&self, a: &nalgebra::DMatrix<f64>) -> Result<Polynomial, PolyError> {
        if a.nrows() != self.nvars || a.ncols() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: if a.nrows() != self.nvars { a.nrows() } else { a.ncols() },
            });
        }
        let rows: Vec<Polynomial> = (0..self.nvars)
            .map(|i| {
                let r: Vec<f64> = (0..self.nvars).map(|j| a[(i, j)]).collect();
                Polynomial::linear(&r)
            })
            .collect();
        self.compose(&rows)
    }

    /// Substitutes `subs[i]` for variable `i`. All substitutes share one arity.
    pub fn compose(&self, subs: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if subs.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: subs.len(),
            });
        }
        let target = subs.first().map(|p| p.nvars).unwrap_or(0);
        // cache powers of each substitute
        let max_e: Vec<u32> = (0..self.nvars)
            .map(|i| self.terms.keys().map(|m| m.0[i]).max().unwrap_or(0))
            .collect();
        let mut powers: Vec<Vec<Polynomial>> = Vec::with_capacity(self.nvars);
        for (i, s) in subs.iter().enumerate() {
            if s.nvars != target {
                return Err(PolyError::DimensionMismatch {
                    expected: target,
                    got: s.nvars,
                });
            }
            let mut v = vec![Polynomial::constant(target, 1.0)];
            for k in 1..=max_e[i] {
                let next = v[(k - 1) as usize].checked_mul_capped(s, u32::MAX)?;
                v.push(next);
            }
            powers.push(v);
        }
        let mut out = Polynomial::zero(target);
        for (m, &c) in &self.terms {
            let mut t = Polynomial::constant(target, c);
            for (i, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    t = t.checked_mul_capped(&powers[i][e as usize], u32::MAX)?;
                }
            }
            for (mm, cc) in t.terms {
                *out.terms.entry(mm).or_insert(0.0) += cc;
            }
        }
        out.prune();
        Ok(out)
    }

    /// Re-expresses the polynomial over `new_nvars` variables, variable `i` becoming `map[i]`.
    pub fn embed(&self, new_nvars: usize, map: &[usize]) -> Polynomial {
        assert_eq!(map.len(), self.nvars);
        let mut out = Polynomial::zero(new_nvars);
        for (m, &c) in &self.terms {
            *out.terms.entry(m.embed(new_nvars, map)).or_insert(0.0) += c;
        }
        out.prune();
        out
    }

    /// Embeds into the first `nvars` slots of a larger variable set.
    pub fn extend_vars(&self, new_nvars: usize) -> Polynomial {
        let map: Vec<usize> = (0..self.nvars).collect();
        self.embed(new_nvars, &map)
    }

    /// Drops terms whose coefficient is below `tol` in magnitude.
    pub fn truncate(&self, tol: f64) -> Polynomial {
        let mut out = self.clone();
        out.terms.retain(|_, c| c.abs() >= tol);
        out
    }

    /// Human-readable serialization: one `coeff * x1^a x2^b` line per term.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (m, &c) in &self.terms {
            s.push_str(&format_coeff(c));
            if !m.is_one() {
                s.push_str(" * ");
                s.push_str(&m.to_string());
            }
            s.push('\n');
        }
        s
    }

    /// Parses the format produced by [`Polynomial::to_text`].
    pub fn parse(text: &str, nvars: usize) -> Result<Polynomial, PolyError> {
        let mut p = Polynomial::zero(nvars);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| PolyError::Parse {
                line: lineno + 1,
                msg,
            };
            let (coeff_str, mono_str) = match line.split_once('*') {
                Some((a, b)) => (a.trim(), Some(b.trim())),
                None => (line, None),
            };
            let c = f64::from_str(coeff_str).map_err(|e| err(format!("bad coefficient: {e}")))?;
            let mut e = vec![0u32; nvars];
            if let Some(ms) = mono_str {
                if ms != "1" {
                    for factor in ms.split_whitespace() {
                        let (var, pow) = match factor.split_once('^') {
                            Some((v, p)) => (
                                v,
                                p.parse::<u32>().map_err(|e| err(format!("bad exponent: {e}")))?,
                            ),
                            None => (factor, 1),
                        };
                        let idx = var
                            .strip_prefix('x')
                            .and_then(|s| s.parse::<usize>().ok())
                            .filter(|&i| i >= 1 && i <= nvars)
                            .ok_or_else(|| err(format!("bad variable `{var}`")))?;
                        e[idx - 1] += pow;
                    }
                }
            }
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }
}

fn format_coeff(c: f64) -> String {
    let a = c.abs();
    if a == 0.0 || (1e-4..1e9).contains(&a) {
        format!("{c}")
    } else {
        format!("{c:e}")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, &c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if m.is_one() {
                write!(f, "{}", format_coeff(c))?;
            } else {
                write!(f, "{}*{}", format_coeff(c), m)?;
            }
        }
        Ok(())
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.checked_add(rhs).expect("polynomial add")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.checked_sub(rhs).expect("polynomial sub")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.checked_mul(rhs).expect("polynomial mul")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: Polynomial) -> Polynomial {
        &self + &rhs
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Polynomial) -> Polynomial {
        &self - &rhs
    }
}

impl Mul for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: Polynomial) -> Polynomial {
        &self * &rhs
    }
}

/// Column of polynomials sharing one variable set.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PolyVector {
    nvars: usize,
    entries: Vec<Polynomial>,
}

impl PolyVector {
    pub fn new(entries: Vec<Polynomial>, nvars: usize) -> Self {
        assert!(entries.iter().all(|p| p.nvars() == nvars), "uniform nvars");
        PolyVector { nvars, entries }
    }

    pub fn zeros(len: usize, nvars: usize) -> Self {
        PolyVector::new(vec![Polynomial::zero(nvars); len], nvars)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &Polynomial {
        &self.entries[i]
    }

    pub fn set(&mut self, i: usize, p: Polynomial) {
        assert_eq!(p.nvars(), self.nvars);
        self.entries[i] = p;
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Polynomial> {
        self.entries.iter()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.entries.iter().map(|p| p.eval(x)).collect()
    }

    pub fn dot(&self, other: &PolyVector) -> Polynomial {
        assert_eq!(self.len(), other.len());
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(Polynomial::zero(self.nvars), |acc, (a, b)| &acc + &(a * b))
    }

    pub fn add(&self, other: &PolyVector) -> PolyVector {
        assert_eq!(self.len(), other.len());
        PolyVector::new(
            self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
            self.nvars,
        )
    }

    pub fn embed(&self, new_nvars: usize, map: &[usize]) -> PolyVector {
        PolyVector::new(self.entries.iter().map(|p| p.embed(new_nvars, map)).collect(), new_nvars)
    }
}

/// Row-major matrix of polynomials.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PolyMatrix {
    nvars: usize,
    rows: usize,
    cols: usize,
    entries: Vec<Polynomial>,
}

impl PolyMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Polynomial>, nvars: usize) -> Self {
        assert_eq!(entries.len(), rows * cols);
        assert!(entries.iter().all(|p| p.nvars() == nvars), "uniform nvars");
        PolyMatrix {
            nvars,
            rows,
            cols,
            entries,
        }
    }

    pub fn zeros(rows: usize, cols: usize, nvars: usize) -> Self {
        PolyMatrix::new(rows, cols, vec![Polynomial::zero(nvars); rows * cols], nvars)
    }

    /// Constant matrix.
    pub fn constant(m: &nalgebra::DMatrix<f64>, nvars: usize) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(Polynomial::constant(nvars, m[(i, j)]));
            }
        }
        PolyMatrix::new(m.nrows(), m.ncols(), entries, nvars)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: Polynomial) {
        assert_eq!(p.nvars(), self.nvars);
        self.entries[i * self.cols + j] = p;
    }

    pub fn column(&self, j: usize) -> PolyVector {
        PolyVector::new((0..self.rows).map(|i| self.get(i, j).clone()).collect(), self.nvars)
    }

    pub fn eval(&self, x: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    pub fn mul_vec(&self, v: &PolyVector) -> PolyVector {
        assert_eq!(self.cols, v.len());
        let entries = (0..self.rows)
            .map(|i| {
                (0..self.cols).fold(Polynomial::zero(self.nvars), |acc, j| {
                    &acc + &(self.get(i, j) * v.get(j))
                })
            })
            .collect();
        PolyVector::new(entries, self.nvars)
    }

    pub fn embed(&self, new_nvars: usize, map: &[usize]) -> PolyMatrix {
        PolyMatrix::new(
            self.rows,
            self.cols,
            self.entries.iter().map(|p| p.embed(new_nvars, map)).collect(),
            new_nvars,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x(n: usize, i: usize) -> Polynomial {
        Polynomial::var(n, i)
    }

    /// Expands `(sum a_i x_i)^k` by brute-force repeated distribution over every
    /// ordered choice of factors, independent of `Polynomial::mul`.
    fn brute_power_of_linear(a: &[f64], k: u32) -> BTreeMap<Vec<u32>, f64> {
        let n = a.len();
        let mut out = BTreeMap::new();
        let total = n.pow(k);
        for idx in 0..total {
            let mut e = vec![0u32; n];
            let mut c = 1.0;
            let mut r = idx;
            for _ in 0..k {
                let v = r % n;
                r /= n;
                e[v] += 1;
                c *= a[v];
            }
            *out.entry(e).or_insert(0.0) += c;
        }
        out
    }

    #[test]
    fn evaluate_examples() {
        let p = &(&x(2, 0) * &x(2, 0)) + &x(2, 1).scale(2.0);
        assert_eq!(p.eval(&[1.0, 3.0]), 7.0);
        assert_eq!(Polynomial::zero(2).eval(&[4.0, -1.0]), 0.0);
        let s = &x(2, 0) + &x(2, 1);
        let cube = s.pow(3);
        let oracle = brute_power_of_linear(&[1.0, 1.0], 3);
        for (e, c) in &oracle {
            assert_eq!(cube.coeff(&Monomial::new(e.clone())), *c);
        }
        assert_eq!(cube.eval(&[1.0, 1.0]), 8.0);
        assert!(p.try_eval(&[1.0]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let p = Polynomial::from_monomial(Monomial::new(vec![2, 1]), 1.0);
        let g = p.gradient();
        assert_eq!(*g.get(0), Polynomial::from_monomial(Monomial::new(vec![1, 1]), 2.0));
        assert_eq!(*g.get(1), Polynomial::from_monomial(Monomial::new(vec![2, 0]), 1.0));
        let c = Polynomial::constant(2, 5.0).gradient();
        assert!(c.get(0).is_zero() && c.get(1).is_zero());
        let q = &Polynomial::from_monomial(Monomial::new(vec![4, 0]), 1.0)
            - &Polynomial::from_monomial(Monomial::new(vec![0, 2]), 1.0);
        let g = q.gradient();
        assert_eq!(g.get(0).coeff(&Monomial::new(vec![3, 0])), 4.0);
        assert_eq!(g.get(1).coeff(&Monomial::new(vec![0, 1])), -2.0);
    }

    #[test]
    fn arithmetic_examples() {
        let one = Polynomial::constant(1, 1.0);
        let t = x(1, 0);
        let prod = &(&t + &one) * &(&t - &one);
        assert_eq!(
            prod,
            Polynomial::from_terms(1, [(Monomial::new(vec![2]), 1.0), (Monomial::new(vec![0]), -1.0)])
        );
        let p = &(&t * &t) + &one;
        assert!((&p + &p.scale(-1.0)).is_zero());
        let s = &x(2, 0) + &x(2, 1);
        let sq = &s * &s;
        let oracle = brute_power_of_linear(&[1.0, 1.0], 2);
        assert_eq!(sq.len(), oracle.len());
        for (e, c) in &oracle {
            assert_eq!(sq.coeff(&Monomial::new(e.clone())), *c);
        }
        assert!(matches!(
            x(1, 0).checked_add(&x(2, 0)),
            Err(PolyError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn degree_cap_is_an_error() {
        let p = x(1, 0).pow(7);
        assert!(matches!(p.checked_mul(&p), Err(PolyError::DegreeOverflow { degree: 14, .. })));
        assert!(p.checked_mul_capped(&p, 14).is_ok());
    }

    #[test]
    fn basis_examples() {
        let b = monomial_basis(2, 1, 1);
        assert_eq!(b, vec![Monomial::new(vec![1, 0]), Monomial::new(vec![0, 1])]);
        assert_eq!(monomial_basis(2, 0, 2).len(), 6);
        // enumerate-and-count oracle for (3, 1, 3)
        let mut count = 0;
        for a in 0..=3u32 {
            for b in 0..=3u32 {
                for c in 0..=3u32 {
                    let d = a + b + c;
                    if (1..=3).contains(&d) {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 19);
        assert_eq!(monomial_basis(3, 1, 3).len(), count);
        let counted: usize = (1..=3).map(|d| count_monomials_of_degree(3, d)).sum();
        assert_eq!(counted, 19);
        let b2 = monomial_basis(2, 0, 2);
        let names: Vec<String> = b2.iter().map(|m| m.to_string()).collect();
        assert_eq!(names, ["1", "x1", "x2", "x1^2", "x1 x2", "x2^2"]);
        // strictly increasing under the canonical order
        assert!(b2.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn basis_is_deterministic() {
        let a = serde_json::to_string(&monomial_basis(4, 0, 5)).unwrap();
        let b = serde_json::to_string(&monomial_basis(4, 0, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn substitute_linear_examples() {
        let p = &x(2, 0) * &x(2, 0);
        let two = nalgebra::DMatrix::<f64>::identity(2, 2) * 2.0;
        assert_eq!(p.substitute_linear(&two).unwrap(), p.scale(4.0));
        let id = nalgebra::DMatrix::<f64>::identity(2, 2);
        let q = &(&p * &x(2, 1)) + &x(2, 0);
        assert_eq!(q.substitute_linear(&id).unwrap(), q);
        let swap = nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let xy = &x(2, 0) * &x(2, 1);
        assert_eq!(xy.substitute_linear(&swap).unwrap(), xy);
        assert!(xy.substitute_linear(&nalgebra::DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn text_round_trip() {
        let p = Polynomial::from_terms(
            3,
            [
                (Monomial::new(vec![0, 0, 0]), -1.25),
                (Monomial::new(vec![2, 0, 1]), 1e-9),
                (Monomial::new(vec![0, 3, 0]), 123456.5),
                (Monomial::new(vec![1, 0, 0]), 0.1),
            ],
        );
        let text = p.to_text();
        assert_eq!(Polynomial::parse(&text, 3).unwrap(), p);
        assert!(text.lines().next().unwrap().starts_with("-1.25"));
        assert!(Polynomial::parse("1 * y2", 2).is_err());
        assert!(Polynomial::parse("abc", 2).is_err());
    }

    fn arb_poly(nvars: usize) -> impl Strategy<Value = Polynomial> {
        prop::collection::vec((prop::collection::vec(0u32..3, nvars), -2.0f64..2.0), 0..8)
            .prop_map(move |ts| Polynomial::from_terms(nvars, ts.into_iter().map(|(e, c)| (Monomial::new(e), c))))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn product_evaluates_to_product(p in arb_poly(3), q in arb_poly(3),
                                        pt in prop::collection::vec(-1.5f64..1.5, 3)) {
            let lhs = (&p * &q).eval(&pt);
            let rhs = p.eval(&pt) * q.eval(&pt);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn gradient_matches_central_differences(p in arb_poly(3),
                                                pt in prop::collection::vec(-1.0f64..1.0, 3)) {
            let h = 1e-5;
            let g = p.gradient().eval(&pt);
            for i in 0..3 {
                let mut a = pt.clone();
                let mut b = pt.clone();
                a[i] += h;
                b[i] -= h;
                let fd = (p.eval(&a) - p.eval(&b)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "{} vs {}", fd, g[i]);
            }
        }

        #[test]
        fn text_and_json_round_trip(p in arb_poly(2)) {
            prop_assert_eq!(Polynomial::parse(&p.to_text(), 2).unwrap(), p.clone());
            let js = serde_json::to_string(&p).unwrap();
            prop_assert_eq!(serde_json::from_str::<Polynomial>(&js).unwrap(), p);
        }
    }
}
