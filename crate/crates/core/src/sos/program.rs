//! Builder for SOS programs over affinely parameterized polynomials.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::poly::{monomial_basis, Monomial, Polynomial};

use super::linpoly::{LinExpr, LinPoly, VarId};
use super::sdp::{self, PsdEntry, SdpProblem, SdpRow, SdpSolution, SdpStatus, SdpTolerances};
use super::SosError;

/// Rows whose only content is a constant below this are dropped.
const ZERO_ROW_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarKind {
    Free(usize),
    Nonneg(usize),
    Gram { block: usize, row: usize, col: usize },
}

/// `fixed(x) + sum_j theta_j basis_j(x)` with free coefficients.
#[derive(Clone, Debug)]
pub struct DecisionPoly {
    pub basis: Vec<Monomial>,
    pub vars: Vec<VarId>,
    pub fixed: Polynomial,
}

impl DecisionPoly {
    pub fn expr(&self) -> LinPoly {
        LinPoly::from_basis(self.fixed.nvars(), &self.basis, &self.vars).add_poly(&self.fixed)
    }

    pub fn value(&self, sol: &SosSolution) -> Polynomial {
        self.expr().eval_vars(&sol.values)
    }
}

/// `z^T Q z` with `Q` a PSD block of the program.
#[derive(Clone, Debug)]
pub struct GramPoly {
    pub basis: Vec<Monomial>,
    pub block: usize,
    pub expr: LinPoly,
}

impl GramPoly {
    pub fn value(&self, sol: &SosSolution) -> Polynomial {
        self.expr.eval_vars(&sol.values)
    }

    pub fn gram(&self, sol: &SosSolution) -> DMatrix<f64> {
        sol.blocks[self.block].clone()
    }
}

#[derive(Clone, Debug)]
pub struct SosProgram {
    nvars: usize,
    kinds: Vec<VarKind>,
    n_free: usize,
    n_nonneg: usize,
    block_sizes: Vec<usize>,
    /// Scalar equalities `e = 0`.
    eqs: Vec<LinExpr>,
    objective: LinExpr,
}

#[derive(Clone, Debug)]
pub struct SosSolution {
    pub status: SdpStatus,
    /// Value of every decision variable, indexed by [`VarId`].
    pub values: Vec<f64>,
    pub blocks: Vec<DMatrix<f64>>,
    pub objective: f64,
    pub sdp: SdpSolution,
}

impl SosSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.values[v]
    }

    /// The primal point passed the independent residual and eigenvalue check.
    pub fn primal_feasible(&self) -> bool {
        self.sdp.primal_feasible
    }
}

impl SosProgram {
    /// A program whose polynomial constraints live in `nvars` indeterminates.
    pub fn new(nvars: usize) -> Self {
        SosProgram {
            nvars,
            kinds: Vec::new(),
            n_free: 0,
            n_nonneg: 0,
            block_sizes: Vec::new(),
            eqs: Vec::new(),
            objective: LinExpr::default(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn n_decision_vars(&self) -> usize {
        self.kinds.len()
    }

    pub fn new_free(&mut self) -> VarId {
        self.kinds.push(VarKind::Free(self.n_free));
        self.n_free += 1;
        self.kinds.len() - 1
    }

    pub fn new_nonneg(&mut self) -> VarId {
        self.kinds.push(VarKind::Nonneg(self.n_nonneg));
        self.n_nonneg += 1;
        self.kinds.len() - 1
    }

    /// Free polynomial `sum_j theta_j basis_j` over `nvars` indeterminates.
    pub fn new_free_poly(&mut self, nvars: usize, basis: &[Monomial]) -> DecisionPoly {
        let vars = basis.iter().map(|_| self.new_free()).collect();
        DecisionPoly {
            basis: basis.to_vec(),
            vars,
            fixed: Polynomial::zero(nvars),
        }
    }

    /// SOS polynomial `z^T Q z` with `Q` PSD over the given basis.
    pub fn new_sos_poly(&mut self, nvars: usize, basis: &[Monomial]) -> GramPoly {
        let block = self.block_sizes.len();
        let n = basis.len();
        self.block_sizes.push(n);
        let mut expr = LinPoly::zero(nvars);
        for r in 0..n {
            for c in r..n {
                self.kinds.push(VarKind::Gram { block, row: r, col: c });
                let id = self.kinds.len() - 1;
                let w = if r == c { 1.0 } else { 2.0 };
                expr.add_term(basis[r].mul(&basis[c]), &LinExpr::var(id), w);
            }
        }
        GramPoly {
            basis: basis.to_vec(),
            block,
            expr,
        }
    }

    /// Requires `p` to be a sum of squares.
    ///
    /// The Gram basis is pruned to monomials that can appear in a
    /// decomposition of `p` (half the Newton polytope bounding box, then
    /// diagonal consistency).
    pub fn add_sos(&mut self, p: &LinPoly) -> Result<GramPoly, SosError> {
        if p.nvars() != self.nvars {
            return Err(SosError::DimensionMismatch {
                expected: self.nvars,
                got: p.nvars(),
            });
        }
        let support: BTreeSet<Monomial> = p.support().cloned().collect();
        let basis = newton_basis(self.nvars, p, &support)?;
        let g = self.new_sos_poly(self.nvars, &basis);
        self.add_eq(&p.sub(&g.expr));
        Ok(g)
    }

    /// Requires `p` to vanish identically.
    pub fn add_eq(&mut self, p: &LinPoly) {
        for (_, e) in p.terms() {
            self.eqs.push(e.clone());
        }
    }

    pub fn add_eq_scalar(&mut self, e: LinExpr) {
        self.eqs.push(e);
    }

    /// `e >= 0` through a nonnegative slack.
    pub fn add_ge_scalar(&mut self, mut e: LinExpr) {
        let s = self.new_nonneg();
        e.add_var(s, -1.0);
        self.eqs.push(e);
    }

    pub fn minimize(&mut self, e: LinExpr) {
        self.objective = e;
    }

    pub fn maximize(&mut self, e: LinExpr) {
        self.objective = e.scaled(-1.0);
    }

    fn row(&self, e: &LinExpr) -> SdpRow {
        let mut r = SdpRow {
            rhs: -e.constant,
            ..Default::default()
        };
        for (&v, &c) in &e.coeffs {
            match self.kinds[v] {
                VarKind::Free(j) => r.free.push((j, c)),
                VarKind::Nonneg(j) => r.nonneg.push((j, c)),
                VarKind::Gram { block, row, col } => r.psd.push(PsdEntry {
                    block,
                    row,
                    col,
                    coef: c,
                }),
            }
        }
        r
    }

    pub fn compile(&self) -> SdpProblem {
        let mut rows = Vec::with_capacity(self.eqs.len());
        let mut trivially_infeasible = false;
        for e in &self.eqs {
            let mut r = self.row(e);
            let s = r.max_abs_coef();
            if s == 0.0 {
                if r.rhs.abs() > ZERO_ROW_TOL {
                    trivially_infeasible = true;
                }
                continue;
            }
            r.scale(1.0 / s);
            rows.push(r);
        }
        let objective = SdpRow {
            rhs: self.objective.constant,
            ..self.row(&LinExpr {
                constant: 0.0,
                coeffs: self.objective.coeffs.clone(),
            })
        };
        SdpProblem {
            n_free: self.n_free,
            n_nonneg: self.n_nonneg,
            block_sizes: self.block_sizes.clone(),
            rows,
            objective,
            trivially_infeasible,
        }
    }

    pub fn solve(&self, tol: &SdpTolerances) -> SosSolution {
        let problem = self.compile();
        let sdp = sdp::solve(&problem, tol);
        let values = self
            .kinds
            .iter()
            .map(|k| match *k {
                VarKind::Free(j) => sdp.free[j],
                VarKind::Nonneg(j) => sdp.nonneg[j],
                VarKind::Gram { block, row, col } => sdp.blocks[block][(row, col)],
            })
            .collect();
        SosSolution {
            status: sdp.status,
            values,
            blocks: sdp.blocks.clone(),
            objective: sdp.primal_objective,
            sdp,
        }
    }
}

/// Gram basis for a target with the given support.
fn newton_basis(nvars: usize, p: &LinPoly, support: &BTreeSet<Monomial>) -> Result<Vec<Monomial>, SosError> {
    if support.is_empty() {
        return Ok(Vec::new());
    }
    let max_deg = support.iter().map(Monomial::degree).max().unwrap_or(0);
    if max_deg % 2 == 1 {
        let fixed_odd = p
            .terms()
            .any(|(m, e)| m.degree() == max_deg && !e.has_vars() && e.constant != 0.0);
        if fixed_odd {
            return Err(SosError::OddDegree(max_deg));
        }
    }
    let min_deg = support.iter().map(Monomial::degree).min().unwrap_or(0);
    let mut lo_e = vec![u32::MAX; nvars];
    let mut hi_e = vec![0u32; nvars];
    for m in support {
        for (i, &k) in m.exponents().iter().enumerate() {
            lo_e[i] = lo_e[i].min(k);
            hi_e[i] = hi_e[i].max(k);
        }
    }
    let mut basis: Vec<Monomial> = monomial_basis(nvars, min_deg.div_ceil(2), max_deg / 2)
        .into_iter()
        .filter(|m| {
            m.exponents()
                .iter()
                .enumerate()
                .all(|(i, &k)| 2 * k >= lo_e[i] && 2 * k <= hi_e[i])
        })
        .collect();
    // A diagonal entry whose square is neither in the target nor reachable
    // by a cross product must vanish, so its row and column are zero.
    loop {
        let mut cross: BTreeMap<Monomial, usize> = BTreeMap::new();
        for a in 0..basis.len() {
            for b in (a + 1)..basis.len() {
                *cross.entry(basis[a].mul(&basis[b])).or_default() += 1;
            }
        }
        let before = basis.len();
        basis.retain(|z| {
            let sq = z.scaled(2);
            support.contains(&sq) || cross.contains_key(&sq)
        });
        if basis.len() == before {
            break;
        }
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_pruning_keeps_needed_monomials() {
        // x^4 + 1 needs 1, x, x^2 (x from cross term 1*x^2)
        let p = Polynomial::parse("1 * x1^4\n1", 1).unwrap();
        let lp = LinPoly::from_poly(&p);
        let s: BTreeSet<Monomial> = lp.support().cloned().collect();
        let b = newton_basis(1, &lp, &s).unwrap();
        assert_eq!(b.len(), 3);
        // x1^2 x2^2 has basis {x1 x2} only
        let p = Polynomial::parse("1 * x1^2 x2^2", 2).unwrap();
        let lp = LinPoly::from_poly(&p);
        let s: BTreeSet<Monomial> = lp.support().cloned().collect();
        let b = newton_basis(2, &lp, &s).unwrap();
        assert_eq!(b, vec![Monomial::new(vec![1, 1])]);
    }

    #[test]
    fn odd_fixed_leading_term_rejected() {
        let p = Polynomial::parse("1 * x1^3\n1", 1).unwrap();
        let mut prog = SosProgram::new(1);
        assert!(matches!(
            prog.add_sos(&LinPoly::from_poly(&p)),
            Err(SosError::OddDegree(3))
        ));
    }
}
