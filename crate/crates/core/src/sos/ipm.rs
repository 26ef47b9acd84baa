//! Homogeneous self-dual primal-dual interior-point method for [`SdpProblem`].
//!
//! Search directions use the HKM scaling with a Mehrotra predictor-corrector.
//! Each step reduces to a Schur complement system in the equality multipliers,
//! bordered by the free variables.

use nalgebra::{DMatrix, DVector};

use super::sdp::{SdpProblem, SdpStatus, SdpTolerances};

/// Iterations without improvement of the best iterate before giving up.
const STALL_ITERS: usize = 8;
/// Relative accuracy accepted for the best iterate when the target is not reached.
const ACCEPT_TOL: f64 = 1e-7;

pub(crate) struct IpmResult {
    pub status: SdpStatus,
    pub free: Vec<f64>,
    pub nonneg: Vec<f64>,
    pub blocks: Vec<DMatrix<f64>>,
    pub dual: Vec<f64>,
    pub iterations: usize,
}

/// `(i, j, value)` entries of a symmetric matrix, upper triangle only.
type Entries = Vec<(usize, usize, f64)>;

struct Block {
    n: usize,
    /// Rows touching the block and their entries.
    rows: Vec<(usize, Entries)>,
    /// Objective matrix (symmetric).
    c: DMatrix<f64>,
}

struct Data {
    m: usize,
    nf: usize,
    nl: usize,
    af: DMatrix<f64>,
    al: DMatrix<f64>,
    blocks: Vec<Block>,
    b: DVector<f64>,
    cf: DVector<f64>,
    cl: DVector<f64>,
}

/// Primal or dual iterate over the cone part.
#[derive(Clone)]
struct Cone {
    l: DVector<f64>,
    s: Vec<DMatrix<f64>>,
}

impl Cone {
    fn identity(d: &Data) -> Cone {
        Cone {
            l: DVector::from_element(d.nl, 1.0),
            s: d.blocks.iter().map(|b| DMatrix::identity(b.n, b.n)).collect(),
        }
    }

    fn dot(&self, o: &Cone) -> f64 {
        self.l.dot(&o.l) + self.s.iter().zip(&o.s).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    fn axpy(&mut self, a: f64, o: &Cone) {
        self.l.axpy(a, &o.l, 1.0);
        for (x, y) in self.s.iter_mut().zip(&o.s) {
            x.zip_apply(y, |p, q| *p += a * q);
        }
    }

    fn scaled(&self, a: f64) -> Cone {
        Cone {
            l: &self.l * a,
            s: self.s.iter().map(|x| x * a).collect(),
        }
    }

    fn norm_inf(&self) -> f64 {
        let l = self.l.amax();
        self.s.iter().map(|x| x.amax()).fold(l, f64::max)
    }
}

fn symmetrize(x: &mut DMatrix<f64>) {
    let n = x.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (x[(i, j)] + x[(j, i)]);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
}

impl Data {
    fn new(p: &SdpProblem) -> Data {
        let m = p.rows.len();
        let (nf, nl) = (p.n_free, p.n_nonneg);
        let mut af = DMatrix::zeros(m, nf);
        let mut al = DMatrix::zeros(m, nl);
        let mut blocks: Vec<Block> = p
            .block_sizes
            .iter()
            .map(|&n| Block {
                n,
                rows: Vec::new(),
                c: DMatrix::zeros(n, n),
            })
            .collect();
        let mut b = DVector::zeros(m);
        for (i, r) in p.rows.iter().enumerate() {
            b[i] = r.rhs;
            for &(j, v) in &r.free {
                af[(i, j)] += v;
            }
            for &(j, v) in &r.nonneg {
                al[(i, j)] += v;
            }
            for e in &r.psd {
                let blk = &mut blocks[e.block];
                let (r0, c0) = (e.row.min(e.col), e.row.max(e.col));
                match blk.rows.last_mut() {
                    Some((ri, ents)) if *ri == i => ents.push((r0, c0, e.coef)),
                    _ => blk.rows.push((i, vec![(r0, c0, e.coef)])),
                }
            }
        }
        let mut cf = DVector::zeros(nf);
        let mut cl = DVector::zeros(nl);
        for &(j, v) in &p.objective.free {
            cf[j] += v;
        }
        for &(j, v) in &p.objective.nonneg {
            cl[j] += v;
        }
        for e in &p.objective.psd {
            let c = &mut blocks[e.block].c;
            if e.row == e.col {
                c[(e.row, e.row)] += e.coef;
            } else {
                c[(e.row, e.col)] += 0.5 * e.coef;
                c[(e.col, e.row)] += 0.5 * e.coef;
            }
        }
        Data {
            m,
            nf,
            nl,
            af,
            al,
            blocks,
            b,
            cf,
            cl,
        }
    }

    fn c_cone(&self) -> Cone {
        Cone {
            l: self.cl.clone(),
            s: self.blocks.iter().map(|b| b.c.clone()).collect(),
        }
    }

    /// Cone part of the linear map.
    fn a_cone(&self, x: &Cone) -> DVector<f64> {
        let mut out = &self.al * &x.l;
        for (blk, xs) in self.blocks.iter().zip(&x.s) {
            for (i, ents) in &blk.rows {
                out[*i] += ents.iter().map(|&(r, c, v)| v * xs[(r, c)]).sum::<f64>();
            }
        }
        out
    }

    fn a(&self, xf: &DVector<f64>, x: &Cone) -> DVector<f64> {
        self.a_cone(x) + &self.af * xf
    }

    /// Adjoint restricted to the cone part.
    fn at_cone(&self, y: &DVector<f64>) -> Cone {
        let l = self.al.tr_mul(y);
        let s = self
            .blocks
            .iter()
            .map(|blk| {
                let mut s = DMatrix::zeros(blk.n, blk.n);
                for (i, ents) in &blk.rows {
                    let yi = y[*i];
                    for &(r, c, v) in ents {
                        if r == c {
                            s[(r, r)] += yi * v;
                        } else {
                            s[(r, c)] += 0.5 * yi * v;
                            s[(c, r)] += 0.5 * yi * v;
                        }
                    }
                }
                s
            })
            .collect();
        Cone { l, s }
    }
}

/// HKM operator `W -> sym(X W Z^-1)` (elementwise `x w / z` on the linear part).
struct Scaling<'a> {
    x: &'a Cone,
    z: &'a Cone,
    zinv: Vec<DMatrix<f64>>,
}

impl Scaling<'_> {
    fn apply(&self, w: &Cone) -> Cone {
        let l = self.x.l.component_mul(&w.l).component_div(&self.z.l);
        let s = self
            .x
            .s
            .iter()
            .zip(&w.s)
            .zip(&self.zinv)
            .map(|((x, w), zi)| {
                let mut t = x * w * zi;
                let tt = t.transpose();
                t += tt;
                t *= 0.5;
                t
            })
            .collect();
        Cone { l, s }
    }
}

fn chol_inverse(z: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut inv = z.clone().cholesky()?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Largest step keeping `x + a dx` in the interior, uncapped.
fn max_step(x: &Cone, dx: &Cone) -> f64 {
    let mut a = f64::INFINITY;
    for (xi, di) in x.l.iter().zip(dx.l.iter()) {
        if *di < 0.0 {
            a = a.min(-xi / di);
        }
    }
    for (xs, ds) in x.s.iter().zip(&dx.s) {
        if xs.nrows() == 0 {
            continue;
        }
        let Some(ch) = xs.clone().cholesky() else {
            return 0.0;
        };
        let l = ch.l();
        let Some(li) = l.clone().try_inverse() else {
            return 0.0;
        };
        let mut t = &li * ds * li.transpose();
        symmetrize(&mut t);
        let lam = t.symmetric_eigenvalues().min();
        if lam < 0.0 {
            a = a.min(-1.0 / lam);
        }
    }
    a
}

struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    k: DMatrix<f64>,
}

impl Kkt {
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = self.lu.solve(rhs)?;
        for _ in 0..2 {
            let r = rhs - &self.k * &x;
            let dx = self.lu.solve(&r)?;
            x += dx;
        }
        Some(x)
    }
}

fn schur(d: &Data, x: &Cone, z: &Cone, zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = d.m;
    let mut mm = DMatrix::zeros(m, m);
    if d.nl > 0 {
        let w = x.l.component_div(&z.l);
        let mut aw = d.al.clone();
        for (j, wj) in w.iter().enumerate() {
            aw.column_mut(j).scale_mut(*wj);
        }
        mm += &aw * d.al.transpose();
    }
    for ((blk, xs), zi) in d.blocks.iter().zip(&x.s).zip(zinv) {
        let n = blk.n;
        let mut g = DMatrix::zeros(n, n);
        for (j, ents) in &blk.rows {
            // G = X S_j Z^-1
            if ents.len() * 2 > n {
                let mut s = DMatrix::zeros(n, n);
                for &(r, c, v) in ents {
                    if r == c {
                        s[(r, r)] += v;
                    } else {
                        s[(r, c)] += 0.5 * v;
                        s[(c, r)] += 0.5 * v;
                    }
                }
                g = xs * s * zi;
            } else {
                g.fill(0.0);
                for &(r, c, v) in ents {
                    if r == c {
                        g.ger(v, &xs.column(r), &zi.row(r).transpose(), 1.0);
                    } else {
                        g.ger(0.5 * v, &xs.column(r), &zi.row(c).transpose(), 1.0);
                        g.ger(0.5 * v, &xs.column(c), &zi.row(r).transpose(), 1.0);
                    }
                }
            }
            for (i, ei) in &blk.rows {
                let s: f64 = ei
                    .iter()
                    .map(|&(r, c, v)| {
                        if r == c {
                            v * g[(r, r)]
                        } else {
                            0.5 * v * (g[(r, c)] + g[(c, r)])
                        }
                    })
                    .sum();
                mm[(*i, *j)] += s;
            }
        }
    }
    symmetrize(&mut mm);
    mm
}

fn build_kkt(d: &Data, mm: DMatrix<f64>) -> Option<Kkt> {
    let (m, nf) = (d.m, d.nf);
    let mut k = DMatrix::zeros(m + nf, m + nf);
    k.view_mut((0, 0), (m, m)).copy_from(&mm);
    k.view_mut((0, m), (m, nf)).copy_from(&d.af);
    k.view_mut((m, 0), (nf, m)).copy_from(&d.af.transpose());
    let scale = mm.diagonal().amax().max(1.0);
    let delta = 1e-13 * scale;
    let mut kr = k.clone();
    for i in 0..m {
        kr[(i, i)] += delta;
    }
    for i in m..m + nf {
        kr[(i, i)] -= delta;
    }
    let lu = kr.lu();
    if !lu.is_invertible() {
        return None;
    }
    Some(Kkt { lu, k })
}

struct Iterate {
    xf: DVector<f64>,
    x: Cone,
    y: DVector<f64>,
    z: Cone,
    tau: f64,
    kappa: f64,
}

struct Dir {
    xf: DVector<f64>,
    x: Cone,
    y: DVector<f64>,
    z: Cone,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    rp: DVector<f64>,
    rdf: DVector<f64>,
    rdc: Cone,
    rg: f64,
}

fn residuals(d: &Data, it: &Iterate, c: &Cone) -> Residuals {
    let rp = d.a(&it.xf, &it.x) - &d.b * it.tau;
    let rdf = d.af.tr_mul(&it.y) - &d.cf * it.tau;
    let mut rdc = d.at_cone(&it.y);
    rdc.axpy(1.0, &it.z);
    rdc.axpy(-it.tau, c);
    let rg = d.cf.dot(&it.xf) + c.dot(&it.x) - d.b.dot(&it.y) + it.kappa;
    Residuals { rp, rdf, rdc, rg }
}

/// Right-hand side of the linearized system
/// `A dX + Af dxf - b dtau = p`, `Af^T dy - cf dtau = df`,
/// `A^T dy + dZ - c dtau = dc`, `dX + H(dZ) = comp`,
/// `cf.dxf + c.dX - b.dy + dkappa = g`, `kappa dtau + tau dkappa = tk`.
struct Rhs {
    p: DVector<f64>,
    df: DVector<f64>,
    dc: Cone,
    comp: Cone,
    g: f64,
    tk: f64,
}

/// Per-iteration data shared by every solve with the same scaling.
struct Newton<'a> {
    d: &'a Data,
    it: &'a Iterate,
    c: &'a Cone,
    sc: &'a Scaling<'a>,
    kkt: &'a Kkt,
    v: DVector<f64>,
    hc: Cone,
    p2: DVector<f64>,
}

impl Newton<'_> {
    fn once(&self, rhs: &Rhs) -> Option<Dir> {
        let (d, it) = (self.d, self.it);
        let (m, nf) = (d.m, d.nf);
        let mut t1 = rhs.comp.clone();
        t1.axpy(-1.0, &self.sc.apply(&rhs.dc));
        let p1 = &rhs.p - d.a_cone(&t1);
        let mut r = DVector::zeros(m + nf);
        r.rows_mut(0, m).copy_from(&p1);
        r.rows_mut(m, nf).copy_from(&rhs.df);
        let u = self.kkt.solve(&r)?;
        let (uy, uf) = (u.rows(0, m), u.rows(m, nf));
        let (vy, vf) = (self.v.rows(0, m), self.v.rows(m, nf));
        let p2b = &self.p2 - &d.b;
        let cst = d.cf.dot(&uf) + self.c.dot(&t1) + p2b.dot(&uy) - d.b.dot(&uy) + rhs.tk / it.tau;
        let coef = d.cf.dot(&vf) + p2b.dot(&vy) - self.c.dot(&self.hc) - d.b.dot(&vy) - it.kappa / it.tau;
        let dtau = (rhs.g - cst) / coef;
        if !dtau.is_finite() {
            return None;
        }
        let dy: DVector<f64> = uy + vy * dtau;
        let dxf: DVector<f64> = uf + vf * dtau;
        let mut dz = d.at_cone(&dy).scaled(-1.0);
        dz.axpy(1.0, &rhs.dc);
        dz.axpy(dtau, self.c);
        let mut dx = rhs.comp.clone();
        dx.axpy(-1.0, &self.sc.apply(&dz));
        for s in dx.s.iter_mut().chain(dz.s.iter_mut()) {
            symmetrize(s);
        }
        let dkappa = (rhs.tk - it.kappa * dtau) / it.tau;
        Some(Dir {
            xf: dxf,
            x: dx,
            y: dy,
            z: dz,
            tau: dtau,
            kappa: dkappa,
        })
    }

    /// Solves and refines against the equations the Schur reduction only
    /// satisfies approximately; cancellation near the cone boundary otherwise
    /// costs primal accuracy.
    fn solve(&self, rhs: &Rhs) -> Option<Dir> {
        let d = self.d;
        let mut dir = self.once(rhs)?;
        for _ in 0..2 {
            let e_p = &rhs.p - (d.a(&dir.xf, &dir.x) - &d.b * dir.tau);
            let e_df = &rhs.df - (d.af.tr_mul(&dir.y) - &d.cf * dir.tau);
            let e_g = rhs.g - (d.cf.dot(&dir.xf) + self.c.dot(&dir.x) - d.b.dot(&dir.y) + dir.kappa);
            let zero = Cone::identity(d).scaled(0.0);
            let corr = self.once(&Rhs {
                p: e_p,
                df: e_df,
                dc: zero.clone(),
                comp: zero,
                g: e_g,
                tk: 0.0,
            })?;
            dir.xf += &corr.xf;
            dir.x.axpy(1.0, &corr.x);
            dir.y += &corr.y;
            dir.z.axpy(1.0, &corr.z);
            dir.tau += corr.tau;
            dir.kappa += corr.kappa;
        }
        for s in dir.x.s.iter_mut().chain(dir.z.s.iter_mut()) {
            symmetrize(s);
        }
        Some(dir)
    }

    /// Newton step toward `sigma_mu` on the central path, reducing the
    /// residuals by `1 - eta`, with an optional second-order correction.
    fn step(&self, res: &Residuals, sigma_mu: f64, eta: f64, corr: Option<(&Cone, f64)>) -> Option<Dir> {
        let it = self.it;
        // comp = sigma mu Z^-1 - X - corr
        let mut comp = Cone {
            l: it.z.l.map(|zi| sigma_mu / zi),
            s: self.sc.zinv.iter().map(|zi| zi * sigma_mu).collect(),
        };
        comp.axpy(-1.0, &it.x);
        let mut tk = sigma_mu - it.tau * it.kappa;
        if let Some((cc, ct)) = corr {
            comp.axpy(-1.0, cc);
            tk -= ct;
        }
        self.solve(&Rhs {
            p: &res.rp * -eta,
            df: &res.rdf * -eta,
            dc: res.rdc.scaled(-eta),
            comp,
            g: -eta * res.rg,
            tk,
        })
    }
}

fn step_length(it: &Iterate, dir: &Dir) -> f64 {
    let mut a = max_step(&it.x, &dir.x).min(max_step(&it.z, &dir.z));
    if dir.tau < 0.0 {
        a = a.min(-it.tau / dir.tau);
    }
    if dir.kappa < 0.0 {
        a = a.min(-it.kappa / dir.kappa);
    }
    a
}

fn unscaled(it: &Iterate, d: &Data, status: SdpStatus, iterations: usize) -> IpmResult {
    let t = if status == SdpStatus::Optimal || status == SdpStatus::NumericalFailure {
        it.tau
    } else {
        1.0
    };
    let t = if t > 0.0 { t } else { 1.0 };
    let mut blocks: Vec<DMatrix<f64>> = it.x.s.iter().map(|x| x / t).collect();
    for b in &mut blocks {
        symmetrize(b);
    }
    let _ = d;
    IpmResult {
        status,
        free: it.xf.iter().map(|v| v / t).collect(),
        nonneg: it.x.l.iter().map(|v| v / t).collect(),
        blocks,
        dual: it.y.iter().map(|v| v / t).collect(),
        iterations,
    }
}

pub(crate) fn solve(p: &SdpProblem, tol: &SdpTolerances) -> IpmResult {
    let d = Data::new(p);
    let c = d.c_cone();
    let nu = (d.nl + d.blocks.iter().map(|b| b.n).sum::<usize>()) as f64;
    let mut it = Iterate {
        xf: DVector::zeros(d.nf),
        x: Cone::identity(&d),
        y: DVector::zeros(d.m),
        z: Cone::identity(&d),
        tau: 1.0,
        kappa: 1.0,
    };
    let bnorm = 1.0 + d.b.amax();
    let cnorm = 1.0 + d.cf.amax().max(c.norm_inf());
    let res0 = residuals(&d, &it, &c);
    let rp0 = res0.rp.amax().max(1.0);
    let rd0 = res0.rdf.amax().max(res0.rdc.norm_inf()).max(1.0);
    let tol_inf = 1e-8;
    let mut best: Option<(f64, Iterate)> = None;
    let mut since_best = 0;

    let mut iterations = 0;
    for iter in 0..tol.max_iter {
        iterations = iter;
        let res = residuals(&d, &it, &c);
        let mu = (it.x.dot(&it.z) + it.tau * it.kappa) / (nu + 1.0);

        // Termination tests on the de-homogenized point.
        let pobj = (d.cf.dot(&it.xf) + c.dot(&it.x)) / it.tau;
        let dobj = d.b.dot(&it.y) / it.tau;
        let pres = res
            .rp
            .iter()
            .zip(d.b.iter())
            .map(|(r, b)| r.abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max)
            / it.tau;
        let dres = res.rdf.amax().max(res.rdc.norm_inf()) / it.tau / cnorm;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));
        let merit = pres.max(dres).max(gap);
        since_best += 1;
        if best.as_ref().is_none_or(|(m, _)| merit < *m) {
            since_best = 0;
            best = Some((
                merit,
                Iterate {
                    xf: it.xf.clone(),
                    x: it.x.clone(),
                    y: it.y.clone(),
                    z: it.z.clone(),
                    tau: it.tau,
                    kappa: it.kappa,
                },
            ));
        }
        log::trace!(
            "ipm {iter}: pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} tau {:.2e} kappa {:.2e} mu {mu:.2e}",
            it.tau,
            it.kappa
        );
        if pres <= tol.ipm_tol && dres <= tol.ipm_tol && gap <= tol.ipm_tol {
            return unscaled(&it, &d, SdpStatus::Optimal, iter);
        }
        let by = d.b.dot(&it.y);
        if by > 0.0 {
            let mut aty = d.at_cone(&it.y);
            aty.axpy(1.0, &it.z);
            let r = d.af.tr_mul(&it.y).amax().max(aty.norm_inf()) / rd0.max(cnorm);
            if r / by <= tol_inf {
                return unscaled(&it, &d, SdpStatus::Infeasible, iter);
            }
        }
        let cx = d.cf.dot(&it.xf) + c.dot(&it.x);
        if cx < 0.0 {
            let r = d.a(&it.xf, &it.x).amax() / rp0.max(bnorm);
            if r / -cx <= tol_inf {
                return unscaled(&it, &d, SdpStatus::Unbounded, iter);
            }
        }
        if it.tau < 1e-14 * it.kappa.max(1.0) && mu < 1e-14 {
            break;
        }
        if since_best >= STALL_ITERS {
            break;
        }

        let Some(zinv) = it.z.s.iter().map(chol_inverse).collect::<Option<Vec<_>>>() else {
            break;
        };
        let sc = Scaling {
            x: &it.x,
            z: &it.z,
            zinv,
        };
        let mm = schur(&d, &it.x, &it.z, &sc.zinv);
        let Some(kkt) = build_kkt(&d, mm) else {
            break;
        };
        let hc = sc.apply(&c);
        let p2 = d.a_cone(&hc) + &d.b;
        let mut rhs2 = DVector::zeros(d.m + d.nf);
        rhs2.rows_mut(0, d.m).copy_from(&p2);
        rhs2.rows_mut(d.m, d.nf).copy_from(&d.cf);
        let Some(v) = kkt.solve(&rhs2) else {
            break;
        };
        let newton = Newton {
            d: &d,
            it: &it,
            c: &c,
            sc: &sc,
            kkt: &kkt,
            v,
            hc,
            p2,
        };

        // Predictor.
        let Some(aff) = newton.step(&res, 0.0, 1.0, None) else {
            break;
        };
        let a_aff = step_length(&it, &aff).min(1.0);
        let mut xa = it.x.clone();
        xa.axpy(a_aff, &aff.x);
        let mut za = it.z.clone();
        za.axpy(a_aff, &aff.z);
        let mu_aff = (xa.dot(&za) + (it.tau + a_aff * aff.tau) * (it.kappa + a_aff * aff.kappa)) / (nu + 1.0);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector: second-order term sym(dX dZ Z^-1).
        let corr = Cone {
            l: aff.x.l.component_mul(&aff.z.l).component_div(&it.z.l),
            s: aff
                .x
                .s
                .iter()
                .zip(&aff.z.s)
                .zip(&sc.zinv)
                .map(|((dx, dz), zi)| {
                    let mut t = dx * dz * zi;
                    let tt = t.transpose();
                    t += tt;
                    t *= 0.5;
                    t
                })
                .collect(),
        };
        let corr_tk = aff.tau * aff.kappa;
        let Some(dir) = newton.step(&res, sigma * mu, 1.0 - sigma, Some((&corr, corr_tk))) else {
            break;
        };
        let amax = step_length(&it, &dir);
        let alpha = (0.95 * amax).min(1.0);
        log::trace!("ipm {iter}: sigma {sigma:.2e} alpha {alpha:.2e} a_aff {a_aff:.2e}");
        if alpha < 1e-10 {
            break;
        }
        it.xf.axpy(alpha, &dir.xf, 1.0);
        it.x.axpy(alpha, &dir.x);
        it.y.axpy(alpha, &dir.y, 1.0);
        it.z.axpy(alpha, &dir.z);
        it.tau += alpha * dir.tau;
        it.kappa += alpha * dir.kappa;
        for s in it.x.s.iter_mut().chain(it.z.s.iter_mut()) {
            symmetrize(s);
        }
        // Keep the homogeneous scale bounded.
        let scale = it.tau.max(it.kappa);
        if !(1e-8..=1e8).contains(&scale) {
            let f = 1.0 / scale;
            it.xf *= f;
            it.x = it.x.scaled(f);
            it.y *= f;
            it.z = it.z.scaled(f);
            it.tau *= f;
            it.kappa *= f;
        }
    }
    let (merit, it) = best.unwrap_or((f64::INFINITY, it));
    let status = if merit <= ACCEPT_TOL {
        SdpStatus::Optimal
    } else {
        SdpStatus::NumericalFailure
    };
    unscaled(&it, &d, status, iterations)
}
