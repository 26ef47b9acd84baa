//! The two convex subproblems of the bilinear alternation and the outer loop.

use log::{debug, info, warn};

use crate::poly::{monomial_basis, PolyVector, Polynomial};
use crate::sos::{check_sos, gram_basis, DecisionPoly, GramHint, GramPoly, LinExpr, LinPoly, SdpTolerances, SosProgram, SosSolution};

use super::analysis::validate_certificate;
use super::lqr::init_certificate;
use super::{Certificate, Diagnostics, RobustModel, RoaError, SynthesisOptions};

/// Indeterminates `z = (x, d)` with one `d` per active output.
struct Space {
    nx: usize,
    nz: usize,
    xmap: Vec<usize>,
}

impl Space {
    fn new(model: &RobustModel) -> Space {
        let nx = model.nx();
        Space {
            nx,
            nz: nx + model.nd(),
            xmap: (0..nx).collect(),
        }
    }

    fn lift(&self, p: &Polynomial) -> Polynomial {
        p.embed(self.nz, &self.xmap)
    }

    fn lift_lin(&self, p: &LinPoly) -> LinPoly {
        p.embed(self.nz, &self.xmap)
    }

    fn d(&self, k: usize) -> Polynomial {
        Polynomial::var(self.nz, self.nx + k)
    }

    /// `s_V` basis: no constant, at most linear in `d`. Terms of higher order
    /// in `d` alone only meet `-gamma s_V` at `x = 0` and would be forced to zero.
    fn sv_basis(&self, deg: u32) -> Vec<crate::poly::Monomial> {
        gram_basis(self.nz, deg, GramHint::NoConstant)
            .into_iter()
            .filter(|m| m.exponents()[self.nx..].iter().sum::<u32>() <= 1)
            .collect()
    }

    fn zsq(&self) -> Polynomial {
        Polynomial::sum_of_squares_of_vars(self.nz)
    }

    /// `eta^2 var_a(x) - d_k^2`.
    fn p_d(&self, model: &RobustModel, k: usize) -> Polynomial {
        let a = model.active[k];
        let var = self.lift(model.variance.get(a)).scale(model.eta * model.eta);
        &var - &self.d(k).pow(2)
    }
}

/// Even degree for `s_d` so that `s_d p_d` stays within the master degree.
fn sd_degree(cfg: u32, master_deg: u32, var_deg: u32) -> u32 {
    let room = master_deg.saturating_sub(var_deg.max(2));
    let d = cfg.min(room);
    d - d % 2
}

fn sd_polys(prog: &mut SosProgram, model: &RobustModel, space: &Space, cfg: u32, master_deg: u32) -> Vec<GramPoly> {
    (0..model.nd())
        .map(|k| {
            let var_deg = model.variance.get(model.active[k]).degree();
            let deg = sd_degree(cfg, master_deg, var_deg);
            prog.new_sos_poly(space.nz, &gram_basis(space.nz, deg, GramHint::None))
        })
        .collect()
}

/// Relative level reduction for the multipliers handed to the V-step.
const V_STEP_BACKOFF: f64 = 0.02;

fn tolerances() -> SdpTolerances {
    SdpTolerances::default()
}

#[derive(Clone, Debug)]
pub struct GammaStep {
    pub gamma: f64,
    pub kappa: PolyVector,
    pub s_v: Polynomial,
    pub s_d: Vec<Polynomial>,
    pub solves: usize,
    /// The upper end of the range was feasible.
    pub at_cap: bool,
}

/// Feasibility of the robust decrease condition at level `gamma` with `v` fixed.
fn gamma_feasible(
    model: &RobustModel,
    v: &Polynomial,
    gamma: f64,
    opts: &SynthesisOptions,
) -> Result<Option<GammaStep>, RoaError> {
    let space = Space::new(model);
    let mut prog = SosProgram::new(space.nz);
    let grad = v.gradient();

    // Fixed part of dV/dt: grad V . (f + m + d)
    let drift = model.drift();
    let mut vdot_fixed = Polynomial::zero(space.nz);
    for i in 0..space.nx {
        vdot_fixed = &vdot_fixed + &space.lift(&(grad.get(i) * drift.get(i)));
    }
    for (k, &a) in model.active.iter().enumerate() {
        vdot_fixed = &vdot_fixed + &(&space.lift(grad.get(a)) * &space.d(k));
    }
    let mut vdot = LinPoly::from_poly(&vdot_fixed);

    let kbasis = monomial_basis(space.nx, 1, opts.deg_kappa);
    let kappas: Vec<DecisionPoly> = (0..model.nu())
        .map(|_| prog.new_free_poly(space.nx, &kbasis))
        .collect();
    for (j, kp) in kappas.iter().enumerate() {
        let mut coef = Polynomial::zero(space.nx);
        for i in 0..space.nx {
            coef = &coef + &(grad.get(i) * model.g.get(i, j));
        }
        vdot = vdot.add(&space.lift_lin(&kp.expr()).mul_poly(&space.lift(&coef))?);
    }

    let master_deg = v.degree() + opts.deg_sv;
    let s_v = prog.new_sos_poly(space.nz, &space.sv_basis(opts.deg_sv));
    let s_d = sd_polys(&mut prog, model, &space, opts.deg_sd, master_deg);

    let v_minus_gamma = &space.lift(v) - &Polynomial::constant(space.nz, gamma);
    let mut master = vdot
        .scale(-1.0)
        .add_poly(&space.zsq().scale(-opts.eps2))
        .add(&s_v.expr.mul_poly(&v_minus_gamma)?);
    for (k, s) in s_d.iter().enumerate() {
        master = master.sub(&s.expr.mul_poly(&space.p_d(model, k))?);
    }
    prog.add_sos(&master)?;

    let sol = prog.solve(&tolerances());
    debug!(
        "gamma {gamma:.6e}: status {:?}, residual {:.2e}, min eig {:.2e}, {} iterations",
        sol.status, sol.sdp.max_residual, sol.sdp.min_eigenvalue, sol.sdp.iterations
    );
    if !sol.primal_feasible() {
        return Ok(None);
    }
    let gs = GammaStep {
        gamma,
        kappa: PolyVector::new(kappas.iter().map(|k| k.value(&sol)).collect(), space.nx),
        s_v: s_v.value(&sol),
        s_d: s_d.iter().map(|s| s.value(&sol)).collect(),
        solves: 1,
        at_cap: false,
    };
    // Solver residuals are amplified where |d| is large; re-verify the
    // assembled master polynomial on its own.
    let cert = Certificate {
        v: v.clone(),
        kappa: gs.kappa.clone(),
        gamma,
        s_v: gs.s_v.clone(),
        s_d: gs.s_d.clone(),
        active: model.active.clone(),
        diagnostics: Diagnostics::default(),
    };
    let verified = check_sos(&master_fixed(model, &cert, opts.eps2)?)?.is_sos;
    if !verified {
        debug!("gamma {gamma:.6e}: master polynomial failed independent check");
        return Ok(None);
    }
    Ok(Some(gs))
}

/// Largest certifiable level in `[lo, hi]` for fixed `v`, by bisection.
pub fn gamma_step(
    model: &RobustModel,
    v: &Polynomial,
    lo: f64,
    hi: f64,
    opts: &SynthesisOptions,
) -> Result<GammaStep, RoaError> {
    if !(lo > 0.0 && hi >= lo) {
        return Err(RoaError::Model(format!("invalid level range [{lo}, {hi}]")));
    }
    let mut solves = 1;
    if let Some(mut s) = gamma_feasible(model, v, hi, opts)? {
        s.at_cap = true;
        return Ok(s);
    }
    solves += 1;
    let mut best = gamma_feasible(model, v, lo, opts)?
        .ok_or_else(|| RoaError::Infeasible(format!("no certificate at level {lo:e}")))?;
    let (mut l, mut h) = (lo, hi);
    while h - l > opts.gamma_rel_tol * h {
        let mid = if h / l > 4.0 { (l * h).sqrt() } else { 0.5 * (l + h) };
        solves += 1;
        match gamma_feasible(model, v, mid, opts)? {
            Some(s) => {
                l = mid;
                best = s;
            }
            None => h = mid,
        }
    }
    best.solves = solves;
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct VStep {
    pub v: Polynomial,
    pub margin: f64,
    pub s_d: Vec<Polynomial>,
    pub s_gamma: Polynomial,
}

/// New Lyapunov function for fixed controller, level and `s_V`, with the
/// previous level set kept inside the new one. `None` when infeasible.
pub fn v_step(
    model: &RobustModel,
    gs: &GammaStep,
    v_prev: &Polynomial,
    opts: &SynthesisOptions,
) -> Result<Option<VStep>, RoaError> {
    let Some(best) = v_program(model, gs, v_prev, opts, None)? else {
        // The unbounded-margin program can stall numerically; a plain
        // feasibility solve with a small margin often still succeeds.
        let floor = 1e-3 * opts.t_max.min(1.0);
        return v_program(model, gs, v_prev, opts, Some(floor));
    };
    if best.margin <= 0.0 {
        return Ok(Some(best));
    }
    // The optimum sits on the cone boundary; keep half the margin and solve
    // for an interior point so the next level step is well posed.
    Ok(Some(v_program(model, gs, v_prev, opts, Some(0.5 * best.margin))?.unwrap_or(best)))
}

fn v_program(
    model: &RobustModel,
    gs: &GammaStep,
    v_prev: &Polynomial,
    opts: &SynthesisOptions,
    floor: Option<f64>,
) -> Result<Option<VStep>, RoaError> {
    let space = Space::new(model);
    let nx = space.nx;
    let mut prog = SosProgram::new(space.nz);
    let gamma = gs.gamma;

    // V = eps1 |x|^2 + z^T Q z, Q PSD
    let vq = prog.new_sos_poly(nx, &gram_basis(nx, opts.deg_v, GramHint::NoConstant));
    let v = vq.expr.add_poly(&Polynomial::sum_of_squares_of_vars(nx).scale(opts.eps1));

    let fcl = model.closed_loop(&gs.kappa);
    let mut vdot = LinPoly::zero(space.nz);
    for i in 0..nx {
        let dv = space.lift_lin(&v.derivative(i));
        vdot = vdot.add(&dv.mul_poly(&space.lift(fcl.get(i)))?);
    }
    for (k, &a) in model.active.iter().enumerate() {
        let dv = space.lift_lin(&v.derivative(a));
        vdot = vdot.add(&dv.mul_poly(&space.d(k))?);
    }

    let t = match floor {
        Some(f) => LinExpr::constant(f),
        None => {
            let t = prog.new_nonneg();
            let mut cap = LinExpr::constant(opts.t_max);
            cap.add_var(t, -1.0);
            prog.add_ge_scalar(cap);
            prog.maximize(LinExpr::var(t));
            LinExpr::var(t)
        }
    };

    let master_deg = opts.deg_v + gs.s_v.degree();
    let s_d = sd_polys(&mut prog, model, &space, opts.deg_sd, master_deg);
    let zsq = space.zsq();
    let v_minus_gamma = space.lift_lin(&v).add_poly(&Polynomial::constant(space.nz, -gamma));
    let mut master = vdot
        .scale(-1.0)
        .add_poly(&zsq.scale(-opts.eps2))
        .sub(&LinPoly::from_expr_times(&t, &zsq))
        .add(&v_minus_gamma.mul_poly(&gs.s_v)?);
    for (k, s) in s_d.iter().enumerate() {
        master = master.sub(&s.expr.mul_poly(&space.p_d(model, k))?);
    }
    prog.add_sos(&master)?;

    // (gamma - V) + (V_prev - gamma) s_gamma is SOS
    let s_gamma = prog.new_sos_poly(nx, &gram_basis(nx, opts.deg_sgamma, GramHint::None));
    let shifted = v_prev - &Polynomial::constant(nx, gamma);
    let contain = s_gamma
        .expr
        .mul_poly(&shifted)?
        .sub(&v)
        .add_poly(&Polynomial::constant(nx, gamma));
    prog.add_sos(&space.lift_lin(&contain))?;

    let sol: SosSolution = prog.solve(&tolerances());
    let margin = t.eval(&sol.values);
    debug!(
        "V-step{}: status {:?}, residual {:.2e}, min eig {:.2e}, margin {:.3e}",
        if floor.is_some() { " (recentred)" } else { "" },
        sol.status,
        sol.sdp.max_residual,
        sol.sdp.min_eigenvalue,
        margin
    );
    if !sol.primal_feasible() {
        return Ok(None);
    }
    Ok(Some(VStep {
        v: v.eval_vars(&sol.values),
        margin,
        s_d: s_d.iter().map(|s| s.value(&sol)).collect(),
        s_gamma: s_gamma.value(&sol),
    }))
}

/// Alternates level and Lyapunov-function steps from the LQR initialization.
pub fn synthesize(model: &RobustModel, opts: &SynthesisOptions) -> Result<Certificate, RoaError> {
    let init = init_certificate(model, &opts.lqr_q, &opts.lqr_r)?;
    synthesize_from(model, init.v, opts)
}

/// Alternation started from a given Lyapunov candidate.
pub fn synthesize_from(model: &RobustModel, v0: Polynomial, opts: &SynthesisOptions) -> Result<Certificate, RoaError> {
    let mut v = v0;
    let mut best: Option<Certificate> = None;
    let mut diag = Diagnostics::default();
    let mut lo = opts.gamma_min.min(opts.gamma_max);

    for it in 0..opts.n_iter.max(1) {
        let gs = match gamma_step(model, &v, lo, opts.gamma_max, opts) {
            Ok(g) => g,
            Err(e) if best.is_none() => return Err(e),
            Err(e) => {
                warn!("level step failed in round {}: {e}", it + 1);
                break;
            }
        };
        diag.sdp_solves += gs.solves;
        diag.iterations = it + 1;
        let prev = best.as_ref().map(|b| b.gamma);
        info!("round {}: level {:.6e}", it + 1, gs.gamma);
        if prev.is_none_or(|p| gs.gamma > p) {
            best = Some(Certificate {
                v: v.clone(),
                kappa: gs.kappa.clone(),
                gamma: gs.gamma,
                s_v: gs.s_v.clone(),
                s_d: gs.s_d.clone(),
                active: model.active.clone(),
                diagnostics: Diagnostics::default(),
            });
        }
        diag.gamma_history.push(best.as_ref().map_or(gs.gamma, |b| b.gamma));
        let rel = prev.map_or(f64::INFINITY, |p| (gs.gamma - p) / p);
        if gs.at_cap || rel < opts.min_improvement || it + 1 == opts.n_iter {
            break;
        }
        // Multipliers from just below the bisection edge leave the V-step room
        // to move.
        diag.sdp_solves += 3;
        let inner = match gamma_feasible(model, &v, (1.0 - V_STEP_BACKOFF) * gs.gamma, opts)? {
            Some(g) if g.gamma >= lo => g,
            _ => gs.clone(),
        };
        match v_step(model, &inner, &v, opts)? {
            Some(vs) => {
                diag.margin = vs.margin;
                v = vs.v;
                lo = inner.gamma;
            }
            None => {
                warn!("Lyapunov step infeasible in round {}", it + 1);
                break;
            }
        }
    }

    let mut cert = best.expect("first round either succeeds or returns");
    if opts.validation_samples > 0 {
        let mut ok = false;
        for _ in 0..50 {
            let rep = validate_certificate(model, &cert, opts.validation_samples, opts.seed);
            if rep.violations == 0 {
                ok = true;
                break;
            }
            warn!(
                "sampled validation found {} violations at level {:.6e}; shrinking",
                rep.violations, cert.gamma
            );
            cert.gamma *= 0.99;
            diag.backoffs += 1;
        }
        if !ok {
            return Err(RoaError::Infeasible("certificate fails sampled validation".into()));
        }
    }
    cert.diagnostics = diag;
    Ok(cert)
}

/// Master S-procedure polynomial with every decision value substituted.
pub(super) fn master_fixed(model: &RobustModel, cert: &Certificate, eps2: f64) -> Result<Polynomial, RoaError> {
    let space = Space::new(model);
    let grad = cert.v.gradient();
    let fcl = model.closed_loop(&cert.kappa);
    let mut vdot = Polynomial::zero(space.nz);
    for i in 0..space.nx {
        vdot = &vdot + &space.lift(&(grad.get(i) * fcl.get(i)));
    }
    for (k, &a) in model.active.iter().enumerate() {
        vdot = &vdot + &(&space.lift(grad.get(a)) * &space.d(k));
    }
    let vmg = &space.lift(&cert.v) - &Polynomial::constant(space.nz, cert.gamma);
    let mut m = &(-&vdot) - &space.zsq().scale(eps2);
    m = &m + &vmg.checked_mul(&cert.s_v)?;
    for (k, s) in cert.s_d.iter().enumerate() {
        m = &m - &s.checked_mul(&space.p_d(model, k))?;
    }
    Ok(m)
}
