use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saferoa::poly::{PolyMatrix, PolyVector, Polynomial};
use saferoa::roa::{
    gamma_step, init_certificate, synthesize, v_step, validate_certificate, volume_estimate, Certificate,
    RobustModel, RoaError, SynthesisOptions,
};
use saferoa::sos::check_sos;

fn p1(s: &str) -> Polynomial {
    Polynomial::parse(s, 1).unwrap()
}

fn cubic_model() -> RobustModel {
    RobustModel::nominal(PolyVector::new(vec![p1("-1 * x1\n1 * x1^3")], 1), PolyMatrix::zeros(1, 0, 1)).unwrap()
}

fn robust_model(eta: f64) -> RobustModel {
    RobustModel::new(
        PolyVector::new(vec![p1("-1 * x1")], 1),
        PolyMatrix::zeros(1, 0, 1),
        PolyVector::zeros(1, 1),
        PolyVector::new(vec![p1("0.0625 * x1^2")], 1),
        eta,
        vec![0],
    )
    .unwrap()
}

#[test]
fn scalar_lyapunov_without_input() {
    let init = init_certificate(&cubic_model(), &[], &[]).unwrap();
    assert!((init.v.coeff(&saferoa::poly::Monomial::new(vec![2])) - 0.5).abs() < 1e-12);
    assert_eq!(init.kappa.len(), 0);
}

#[test]
fn lyapunov_residual_double_integrator() {
    let f = PolyVector::new(vec![Polynomial::var(2, 1), Polynomial::zero(2)], 2);
    let g = PolyMatrix::constant(&DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), 2);
    let m = RobustModel::nominal(f, g).unwrap();
    let init = init_certificate(&m, &[], &[]).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let acl = a + b * &init.k;
    let res = acl.transpose() * &init.p + &init.p * &acl + DMatrix::identity(2, 2);
    assert!(res.amax() <= 1e-10);
    assert!(init.p.clone().symmetric_eigenvalues().min() > 0.0);
}

#[test]
fn scalar_riccati_gain() {
    let m = RobustModel::nominal(
        PolyVector::new(vec![Polynomial::zero(1)], 1),
        PolyMatrix::constant(&DMatrix::from_element(1, 1, 1.0), 1),
    )
    .unwrap();
    let init = init_certificate(&m, &[1.0], &[1.0]).unwrap();
    assert!((init.k[(0, 0)] + 1.0).abs() < 1e-9);
    assert!((init.p[(0, 0)] - 0.5).abs() < 1e-9);
}

#[test]
fn cubic_gamma_step() {
    let v = p1("1 * x1^2");
    let gs = gamma_step(&cubic_model(), &v, 1e-6, 10.0, &SynthesisOptions::default()).unwrap();
    assert!((0.8..=1.0).contains(&gs.gamma), "{}", gs.gamma);
}

#[test]
fn robust_gamma_step_hits_cap() {
    let v = p1("1 * x1^2");
    let gs = gamma_step(&robust_model(2.0), &v, 1e-6, 10.0, &SynthesisOptions::default()).unwrap();
    assert!(gs.at_cap);
    assert_eq!(gs.gamma, 10.0);
}

#[test]
fn overwhelming_disturbance_is_infeasible() {
    let v = p1("1 * x1^2");
    let r = gamma_step(&robust_model(5.0), &v, 1e-6, 10.0, &SynthesisOptions::default());
    assert!(matches!(r, Err(RoaError::Infeasible(_))), "{r:?}");
}

#[test]
fn cubic_v_step_keeps_previous_level_set() {
    let model = cubic_model();
    let opts = SynthesisOptions::default();
    let v_prev = p1("1 * x1^2");
    let mut gs = gamma_step(&model, &v_prev, 1e-6, 10.0, &opts).unwrap();
    gs.gamma = 0.8;
    let vs = v_step(&model, &gs, &v_prev, &opts).unwrap().expect("feasible");
    assert!(vs.margin >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 1000 {
        let x = rng.gen_range(-1.0..1.0);
        if v_prev.eval(&[x]) <= 0.8 {
            assert!(vs.v.eval(&[x]) <= 0.8 + 1e-6, "x = {x}");
            checked += 1;
        }
    }
}

#[test]
fn symmetric_v_step_stays_quadratic() {
    // xdot = -x: V = x^2 is already optimal up to scale.
    let model = RobustModel::nominal(PolyVector::new(vec![p1("-1 * x1")], 1), PolyMatrix::zeros(1, 0, 1)).unwrap();
    let opts = SynthesisOptions {
        deg_v: 2,
        ..Default::default()
    };
    let v_prev = p1("1 * x1^2");
    let mut gs = gamma_step(&model, &v_prev, 1e-6, 10.0, &opts).unwrap();
    gs.gamma = 1.0;
    let vs = v_step(&model, &gs, &v_prev, &opts).unwrap().expect("feasible");
    assert!(vs.margin > 0.0);
    assert_eq!(vs.v.degree(), 2);
    assert!(vs.v.len() == 1);
}

#[test]
fn cubic_synthesis_normalized_level() {
    let model = cubic_model();
    let cert = synthesize(&model, &SynthesisOptions::default()).unwrap();
    let scale = cert.v.eval(&[1.0]);
    assert!(cert.gamma / scale >= 0.8, "normalized level {}", cert.gamma / scale);
    let hist = &cert.diagnostics.gamma_history;
    assert!(hist.windows(2).all(|w| w[1] >= w[0]));
    let rep = validate_certificate(&model, &cert, 10_000, 3);
    assert_eq!(rep.violations, 0);
}

#[test]
fn robust_synthesis_validates_with_corners() {
    let model = robust_model(2.0);
    let cert = synthesize(&model, &SynthesisOptions::default()).unwrap();
    assert_eq!(cert.gamma, 10.0);
    let rep = validate_certificate(&model, &cert, 10_000, 5);
    assert_eq!(rep.violations, 0);
    assert!(rep.samples >= 10_000 * 3 - 10);
}

#[test]
fn corrupted_controller_is_caught() {
    let f = PolyVector::new(vec![Polynomial::var(2, 1), Polynomial::var(2, 0)], 2);
    let g = PolyMatrix::constant(&DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), 2);
    let model = RobustModel::nominal(f, g).unwrap();
    let opts = SynthesisOptions {
        n_iter: 1,
        ..Default::default()
    };
    let mut cert = synthesize(&model, &opts).unwrap();
    assert_eq!(validate_certificate(&model, &cert, 2000, 1).violations, 0);
    let flipped: Vec<Polynomial> = cert.kappa.iter().map(|k| k.scale(-1.0)).collect();
    cert.kappa = PolyVector::new(flipped, 2);
    assert!(validate_certificate(&model, &cert, 2000, 1).violations > 0);
}

#[test]
fn master_polynomial_is_sos() {
    let model = robust_model(2.0);
    let opts = SynthesisOptions::default();
    let cert = synthesize(&model, &opts).unwrap();
    let m = cert.master_polynomial(&model, opts.eps2).unwrap();
    assert!(check_sos(&m).unwrap().is_sos);
    let lhs = &cert.v - &Polynomial::sum_of_squares_of_vars(1).scale(opts.eps1);
    assert!(check_sos(&lhs).unwrap().is_sos);
}

#[test]
fn certificate_json_round_trip() {
    let cert = synthesize(&cubic_model(), &SynthesisOptions::default()).unwrap();
    let back = Certificate::from_json(&cert.to_json()).unwrap();
    assert_eq!(back, cert);
}

#[test]
fn volume_examples() {
    let disc = Polynomial::parse("1 * x1^2\n1 * x2^2", 2).unwrap();
    let b = [(-2.0, 2.0), (-2.0, 2.0)];
    let v = volume_estimate(&disc, 1.0, &b, 100_000, 0).unwrap();
    assert!((v - std::f64::consts::PI).abs() < 0.05, "{v}");
    assert_eq!(volume_estimate(&disc, 0.0, &b, 100_000, 0).unwrap(), 0.0);
    let ell = Polynomial::parse("4 * x1^2\n1 * x2^2", 2).unwrap();
    let v = volume_estimate(&ell, 1.0, &b, 100_000, 0).unwrap();
    assert!((v - std::f64::consts::FRAC_PI_2).abs() < 0.05, "{v}");
    assert!(matches!(
        volume_estimate(&disc, 1.0, &[(-0.5, 0.5), (-2.0, 2.0)], 1000, 0),
        Err(RoaError::LevelSetTouchesBox)
    ));
}
