//! Linear-quadratic regulator and Lyapunov equation for the initial certificate.

use nalgebra::DMatrix;

use crate::poly::{PolyVector, Polynomial};

use super::{RobustModel, RoaError};

#[derive(Clone, Debug)]
pub struct InitialCertificate {
    /// `x^T P x`.
    pub v: Polynomial,
    /// `K x`.
    pub kappa: PolyVector,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

/// Jacobians of `f + m` and `g` at the origin.
pub fn linearize(model: &RobustModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let nx = model.nx();
    let zero = vec![0.0; nx];
    let drift = model.drift();
    let a = DMatrix::from_fn(nx, nx, |i, j| drift.get(i).derivative(j).eval(&zero));
    let b = model.g.eval(&zero);
    (a, b)
}

fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    a.complex_eigenvalues().iter().all(|l| l.re < -1e-9)
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = h.nrows() as i32;
    let mut z = h.clone();
    for _ in 0..200 {
        let zi = z.clone().try_inverse()?;
        let det = z.determinant().abs();
        let c = if det > 0.0 && det.is_finite() {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&z * c + &zi / c) * 0.5;
        let diff = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if diff < 1e-13 {
            return Some(z);
        }
    }
    let zz = &z * &z - DMatrix::identity(z.nrows(), z.ncols());
    (zz.norm() < 1e-8 * z.norm().max(1.0)).then_some(z)
}

/// Stabilizing solution `X` of `A^T X + X A - X B R^-1 B^T X + Q = 0` and gain `K = -R^-1 B^T X`.
pub fn lqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), RoaError> {
    let n = a.nrows();
    let rinv = r.clone().try_inverse().ok_or(RoaError::Model("R is singular".into()))?;
    let s = b * &rinv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let w = matrix_sign(&h).ok_or(RoaError::Unstabilizable)?;
    // [W12; W22 + I] X = -[W11 + I; W21]
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(w.view((n, n), (n, n)) + DMatrix::identity(n, n)));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + DMatrix::identity(n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let svd = lhs.svd(true, true);
    let mut x = svd.solve(&rhs, 1e-12).map_err(|_| RoaError::Unstabilizable)?;
    x = (&x + x.transpose()) * 0.5;
    let k = -&rinv * b.transpose() * &x;
    if !is_hurwitz(&(a + b * &k)) {
        return Err(RoaError::Unstabilizable);
    }
    Ok((x, k))
}

/// Solves `A^T P + P A = -Q` for Hurwitz `A`.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, RoaError> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    // vec(A^T P + P A) = (I kron A^T + A^T kron I) vec(P)
    let at = a.transpose();
    let big = id.kronecker(&at) + at.kronecker(&id);
    let rhs = DMatrix::from_iterator(n * n, 1, q.iter().map(|v| -v));
    let sol = big.lu().solve(&rhs).ok_or(RoaError::Unstabilizable)?;
    let p = DMatrix::from_iterator(n, n, sol.iter().copied());
    Ok((&p + p.transpose()) * 0.5)
}

fn diag_or_identity(d: &[f64], n: usize) -> DMatrix<f64> {
    if d.is_empty() {
        DMatrix::identity(n, n)
    } else {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d))
    }
}

/// Linear feedback from the LQR on the linearization and `V = x^T P x` with
/// `(A + B K)^T P + P (A + B K) = -I`.
pub fn init_certificate(model: &RobustModel, q_diag: &[f64], r_diag: &[f64]) -> Result<InitialCertificate, RoaError> {
    let nx = model.nx();
    let nu = model.nu();
    let (a, b) = linearize(model);
    let k = if nu == 0 {
        if !is_hurwitz(&a) {
            return Err(RoaError::Unstabilizable);
        }
        DMatrix::zeros(0, nx)
    } else {
        let q = diag_or_identity(q_diag, nx);
        let r = diag_or_identity(r_diag, nu);
        if q.nrows() != nx || r.nrows() != nu {
            return Err(RoaError::Model("LQR weight dimensions".into()));
        }
        lqr(&a, &b, &q, &r)?.1
    };
    let acl = &a + &b * &k;
    let p = lyapunov(&acl, &DMatrix::identity(nx, nx))?;
    if p.clone().symmetric_eigenvalues().min() <= 0.0 {
        return Err(RoaError::Unstabilizable);
    }
    let kappa = PolyVector::new(
        (0..nu)
            .map(|i| Polynomial::linear(&k.row(i).iter().copied().collect::<Vec<_>>()))
            .collect(),
        nx,
    );
    Ok(InitialCertificate {
        v: Polynomial::quadratic_form(&p),
        kappa,
        k,
        p,
    })
}
