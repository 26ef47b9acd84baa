//! Sum-of-squares programs compiled to linear-plus-PSD conic problems.

mod ipm;
mod linpoly;
mod program;
mod sdp;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::poly::{monomial_basis, Monomial, PolyError, Polynomial};

pub use linpoly::{LinExpr, LinPoly, VarId};
pub use program::{DecisionPoly, GramPoly, SosProgram, SosSolution};
pub use sdp::{primal_check, solve, PsdEntry, SdpProblem, SdpRow, SdpSolution, SdpStatus, SdpTolerances};

#[derive(Debug, Error)]
pub enum SosError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("leading terms of odd degree {0} cannot be a sum of squares")]
    OddDegree(u32),
    #[error("constraint has {got} indeterminates, program expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GramHint {
    #[default]
    None,
    /// Drop the constant monomial (polynomials vanishing at the origin).
    NoConstant,
}

/// Monomials of degree at most `ceil(d/2)`, optionally without the constant.
pub fn gram_basis(nvars: usize, d: u32, hint: GramHint) -> Vec<Monomial> {
    let lo = match hint {
        GramHint::None => 0,
        GramHint::NoConstant => 1,
    };
    let hi = d.div_ceil(2);
    if lo > hi {
        return Vec::new();
    }
    monomial_basis(nvars, lo, hi)
}

/// Result of [`check_sos`]: on success `p = |L^T z|^2` for the returned basis `z`.
#[derive(Clone, Debug)]
pub struct SosCheck {
    pub is_sos: bool,
    pub basis: Vec<Monomial>,
    pub gram: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    pub status: SdpStatus,
}

/// Expands `z^T Q z` over `basis`.
pub fn gram_expand(nvars: usize, basis: &[Monomial], q: &DMatrix<f64>) -> Polynomial {
    let mut p = Polynomial::zero(nvars);
    for a in 0..basis.len() {
        for b in 0..basis.len() {
            p.add_term(basis[a].mul(&basis[b]), q[(a, b)]);
        }
    }
    p
}

/// Tests membership of a fixed polynomial in the SOS cone.
pub fn check_sos(p: &Polynomial) -> Result<SosCheck, SosError> {
    check_sos_with(p, &SdpTolerances::default())
}

pub fn check_sos_with(p: &Polynomial, tol: &SdpTolerances) -> Result<SosCheck, SosError> {
    let mut prog = SosProgram::new(p.nvars());
    let g = prog.add_sos(&LinPoly::from_poly(p))?;
    let sol = prog.solve(tol);
    let basis = g.basis.clone();
    let n = basis.len();
    let empty = SosCheck {
        is_sos: false,
        basis: basis.clone(),
        gram: DMatrix::zeros(n, n),
        factor: DMatrix::zeros(n, 0),
        status: sol.status,
    };
    if sol.status != SdpStatus::Optimal {
        return Ok(empty);
    }
    let mut q = g.gram(&sol);
    project_onto_coefficients(p, &basis, &mut q);
    let eig = q.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -tol.psd_slack {
        return Ok(empty);
    }
    let mut factor = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        factor.column_mut(j).scale_mut(lam.max(0.0).sqrt());
    }
    let recon = gram_expand(p.nvars(), &basis, &(&factor * factor.transpose()));
    let err = recon
        .checked_sub(p)?
        .terms()
        .map(|(_, c)| c.abs())
        .fold(0.0, f64::max);
    Ok(SosCheck {
        is_sos: err <= 1e-8,
        basis,
        gram: q,
        factor,
        status: sol.status,
    })
}

/// Orthogonal projection of `q` onto Gram matrices whose expansion equals `p` exactly.
fn project_onto_coefficients(p: &Polynomial, basis: &[Monomial], q: &mut DMatrix<f64>) {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
    for a in 0..basis.len() {
        for b in 0..basis.len() {
            groups.entry(basis[a].mul(&basis[b])).or_default().push((a, b));
        }
    }
    for (m, pairs) in &groups {
        let cur: f64 = pairs.iter().map(|&(a, b)| q[(a, b)]).sum();
        let delta = (p.coeff(m) - cur) / pairs.len() as f64;
        for &(a, b) in pairs {
            q[(a, b)] += delta;
        }
    }
}
